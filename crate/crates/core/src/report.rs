//! Report files: a JSON envelope around every result and plot-ready CSV tables.
//!
//! Report contents depend only on the configuration and seed. Run metadata
//! that does not (wall-clock time, worker count) goes to a separate
//! `*.meta.json` sidecar so reports stay byte-comparable across runs.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::lyapunov::{MomentCurve, RateFunction};
use crate::slowdown::{SlowdownReport, TrapScanReport};

pub const TOOL: &str = "rwre";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub config: &'a C,
    pub result: &'a R,
}

impl<'a, C: Serialize, R: Serialize> Envelope<'a, C, R> {
    pub fn new(command: &'a str, seed: u64, config: &'a C, result: &'a R) -> Self {
        Self { tool: TOOL, version: VERSION, command, seed, config, result }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_json().map_err(io::Error::other)?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub workers: usize,
    pub wall_clock_seconds: f64,
    pub files: Vec<String>,
}

/// `report.json` -> `report.meta.json`.
pub fn meta_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    report.with_file_name(format!("{stem}.meta.json"))
}

pub fn write_meta(path: &Path, meta: &RunMeta<'_>) -> io::Result<()> {
    let mut s = serde_json::to_string_pretty(meta).map_err(io::Error::other)?;
    s.push('\n');
    fs::write(path, s)
}

fn num(x: f64) -> String {
    x.to_string()
}

/// Columns `u, F_hat, std_err, method`.
pub fn write_moment_curve_csv<W: Write>(out: W, curve: &MomentCurve) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["u", "F_hat", "std_err", "method"])?;
    for p in &curve.points {
        w.write_record([num(p.u), num(p.f_hat), num(p.std_error), curve.method.as_str().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `x, I, argmax_u`.
pub fn write_rate_csv<W: Write>(out: W, rate: &RateFunction) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "I", "argmax_u"])?;
    for p in &rate.points {
        w.write_record([num(p.x), num(p.rate), num(p.argmax_u)])?;
    }
    w.flush()?;
    Ok(())
}

/// Long format `n, s_prime, statistic, value, std_err`; statistics without a
/// standard error leave the column empty.
pub fn write_slowdown_csv<W: Write>(out: W, report: &SlowdownReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "s_prime", "statistic", "value", "std_err"])?;
    for r in &report.rows {
        let (n, sp) = (r.n.to_string(), num(r.s_prime));
        let stats = [
            ("median", r.median, Some(r.median_std_error)),
            ("median_ci_low", r.ci_low, None),
            ("median_ci_high", r.ci_high, None),
            ("upper_quartile", r.upper_quartile, None),
        ];
        for (name, value, se) in stats {
            w.write_record([n.clone(), sp.clone(), name.to_string(), num(value), se.map(num).unwrap_or_default()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per `n`.
pub fn write_trap_scan_csv<W: Write>(out: W, report: &TrapScanReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n", "K", "arm", "env_samples", "threshold", "traps", "q_hat", "std_err", "certified", "bound_violations",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.n.to_string(),
            num(r.k),
            r.arm.to_string(),
            r.env_samples.to_string(),
            num(r.threshold),
            r.traps.to_string(),
            num(r.q_hat),
            num(r.std_error),
            r.certified.to_string(),
            r.bound_violations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::{MomentMethod, MomentPoint};

    fn curve() -> MomentCurve {
        MomentCurve {
            points: vec![
                MomentPoint { u: -0.5, f_hat: 0.1, std_error: 0.0, heavy_tail: false },
                MomentPoint { u: 0.0, f_hat: 0.0, std_error: 0.0, heavy_tail: false },
            ],
            n: 10,
            replicas: 4,
            method: MomentMethod::ExactEnumeration,
        }
    }

    #[test]
    fn moment_csv_layout() {
        let mut buf = Vec::new();
        write_moment_curve_csv(&mut buf, &curve()).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "u,F_hat,std_err,method\n-0.5,0.1,0,exact-enumeration\n0,0,0,exact-enumeration\n"
        );
    }

    #[test]
    fn envelope_echoes_config() {
        #[derive(Serialize)]
        struct Cfg {
            n: u32,
        }
        let (cfg, c) = (Cfg { n: 3 }, curve());
        let env = Envelope::new("moment-curve", 42, &cfg, &c);
        let v: serde_json::Value = serde_json::from_str(&env.to_json().unwrap()).unwrap();
        assert_eq!(v["tool"], "rwre");
        assert_eq!(v["seed"], 42);
        assert_eq!(v["config"]["n"], 3);
        assert_eq!(v["result"]["method"], "exact-enumeration");
        assert!(v["version"].is_string());
    }

    #[test]
    fn meta_sidecar_name() {
        assert_eq!(meta_path(Path::new("/tmp/out/find-s.json")), PathBuf::from("/tmp/out/find-s.meta.json"));
    }
}
