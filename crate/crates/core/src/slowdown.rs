//! Slowdown experiments: trap-frequency scans, slowdown curves `X_n / n^{s'}`
//! and annealed tails `P_0(X_n > n^{s'})`.
//!
//! A trap at scale `n` is a window `U = [-A, A]`, `A = ceil(K log n)`, in which
//! the quenched walk from 0 survives `n` steps with probability at least
//! `e^{-2}`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_model::{sample_environment, EnvError, EnvironmentSpec};
use crate::exit::{survival_lower_bound, trap_quantities, ExitError, SurvivalKernel};
use crate::lyapunov::{
    assess_regime, find_root_s, ExactEvaluator, LyapunovError, MomentEvaluator, MonteCarloEvaluator, Regime,
    RegimeKind, RootSide, SlowdownRoot,
};
use crate::seeding::{derive_seed, domain};
use crate::stats::{binomial, bootstrap_median, least_squares, quantile_sorted, Estimate, LinearFit};
use crate::walk::{batch_final_positions, SamplingMode, WalkError};

/// Survival level defining a trap.
pub const TRAP_THRESHOLD: f64 = 0.135_335_283_236_612_7;
/// Smallest number of environments per scan point.
pub const MIN_ENV_SAMPLES: usize = 100;
/// Smallest number of walkers per slowdown point.
pub const MIN_WALKERS: usize = 1000;
/// Scan points need this many traps to enter the slope fit.
pub const MIN_FIT_SUCCESSES: usize = 10;
/// Bootstrap resamples for medians.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Product length and base replica count for the Monte Carlo classifier.
pub const CLASSIFIER_LENGTH: usize = 32;
pub const CLASSIFIER_REPLICAS: usize = 1000;

#[derive(Debug, Error)]
pub enum SlowdownError {
    #[error("regime mismatch: spec is {found:?}, need a zero-speed (slowdown) regime")]
    RegimeMismatch { found: RegimeKind },
    #[error("no traps found at any n (K = {k}); try a larger K")]
    AllZero { k: f64, report: Box<TrapScanReport> },
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
    #[error(transparent)]
    Exit(#[from] ExitError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Regime and slowdown root of a spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowdownContext {
    pub regime: Regime,
    /// Root of `F` on the transient side; `None` outside the slowdown regimes.
    pub root: Option<SlowdownRoot>,
}

impl SlowdownContext {
    /// `|s|`, the exponent governing the slowdown.
    pub fn exponent(&self) -> Option<f64> {
        self.root.map(|r| r.s.abs())
    }
}

fn evaluator(spec: &Arc<EnvironmentSpec>, seed: u64) -> Box<dyn MomentEvaluator> {
    match ExactEvaluator::for_spec(spec) {
        Some(ev) => Box::new(ev),
        None => Box::new(MonteCarloEvaluator::new(
            spec.clone(),
            CLASSIFIER_LENGTH.max(spec.max_left()),
            CLASSIFIER_REPLICAS,
            derive_seed(seed, &[domain::ESCALATION, u64::MAX]),
        )),
    }
}

/// Classify `spec` and, in a slowdown regime, locate `s`.
///
/// Uses exact enumeration when the support is small enough and a Monte Carlo
/// evaluator otherwise.
pub fn slowdown_context(spec: &Arc<EnvironmentSpec>, seed: u64) -> Result<SlowdownContext, SlowdownError> {
    let mut ev = evaluator(spec, seed);
    let regime = assess_regime(ev.as_mut())?;
    let root = match regime.kind {
        RegimeKind::TransientRightZeroSpeed => Some(find_root_s(ev.as_mut(), RootSide::Positive)?),
        RegimeKind::TransientLeftZeroSpeed => Some(find_root_s(ev.as_mut(), RootSide::Negative)?),
        _ => None,
    };
    Ok(SlowdownContext { regime, root })
}

fn require_slowdown(spec: &Arc<EnvironmentSpec>, seed: u64) -> Result<SlowdownContext, SlowdownError> {
    let ctx = slowdown_context(spec, seed)?;
    if !ctx.regime.kind.is_slowdown() || ctx.root.is_none() {
        return Err(SlowdownError::RegimeMismatch { found: ctx.regime.kind });
    }
    Ok(ctx)
}

/// Trap half-width coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrapWidth {
    /// `ceil(2 / |gamma|)`.
    Auto,
    Fixed(f64),
}

/// `ceil(K log n)`.
pub fn trap_arm(k: f64, n: u64) -> i64 {
    (k * (n as f64).ln()).ceil() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapScanRow {
    pub n: u64,
    pub k: f64,
    /// `U = [-arm, arm]`.
    pub arm: i64,
    pub env_samples: usize,
    pub threshold: f64,
    pub traps: usize,
    pub q_hat: f64,
    pub std_error: f64,
    /// Environments where `(1 - gamma_U)^n >= threshold` already certifies a trap.
    pub certified: usize,
    /// Certified environments that nevertheless failed the survival test.
    pub bound_violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapFit {
    pub fit: LinearFit,
    pub band: (f64, f64),
    /// Reference band `[-1.5 s, -0.5 s]` for the slope.
    pub target: (f64, f64),
    pub in_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapScanReport {
    pub regime: RegimeKind,
    pub gamma: f64,
    pub s: f64,
    pub k: f64,
    pub k_auto: bool,
    pub seed: u64,
    pub rows: Vec<TrapScanRow>,
    /// Least-squares fit of `log q_hat` on `log n` over rows with enough traps.
    pub fit: Option<TrapFit>,
    pub flags: Vec<String>,
}

impl TrapScanReport {
    pub fn flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

/// Per-environment outcome of the trap test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapSample {
    pub gamma_u: f64,
    pub bound: f64,
    pub trapped: bool,
}

/// Environment `index` of the scan point `n`.
pub fn trap_environment_seed(seed: u64, n: u64, index: usize) -> u64 {
    derive_seed(seed, &[domain::TRAP_ENV, n, index as u64])
}

/// Trap test for every sampled environment at one `n`, in index order.
///
/// Does not check the regime; [`trap_frequency_scan`] does.
pub fn trap_samples(
    spec: &Arc<EnvironmentSpec>,
    n: u64,
    arm: i64,
    env_samples: usize,
    seed: u64,
) -> Result<Vec<TrapSample>, SlowdownError> {
    (0..env_samples)
        .into_par_iter()
        .map(|i| {
            let env = sample_environment(spec.clone(), -arm, arm, trap_environment_seed(seed, n, i))?;
            let q = trap_quantities(&env, arm, arm)?;
            let bound = survival_lower_bound(q.gamma_u, n);
            let out = SurvivalKernel::new(&env, arm, arm)?.run(n, Some(TRAP_THRESHOLD))?;
            Ok(TrapSample { gamma_u: q.gamma_u, bound, trapped: out.mass >= TRAP_THRESHOLD })
        })
        .collect()
}

/// One row of the scan, without the regime check.
pub fn trap_row(
    spec: &Arc<EnvironmentSpec>,
    n: u64,
    k: f64,
    env_samples: usize,
    seed: u64,
) -> Result<TrapScanRow, SlowdownError> {
    let arm = trap_arm(k, n);
    let samples = trap_samples(spec, n, arm, env_samples, seed)?;
    let traps = samples.iter().filter(|s| s.trapped).count();
    let certified = samples.iter().filter(|s| s.bound >= TRAP_THRESHOLD).count();
    let bound_violations = samples.iter().filter(|s| s.bound >= TRAP_THRESHOLD && !s.trapped).count();
    let q = binomial(traps, env_samples);
    Ok(TrapScanRow {
        n,
        k,
        arm,
        env_samples,
        threshold: TRAP_THRESHOLD,
        traps,
        q_hat: q.value,
        std_error: q.std_error,
        certified,
        bound_violations,
    })
}

/// Fraction of environments containing a trap of half-width `ceil(K log n)`
/// around 0, for each `n`, and the log-log slope of that fraction.
pub fn trap_frequency_scan(
    spec: &Arc<EnvironmentSpec>,
    n_grid: &[u64],
    k: TrapWidth,
    env_samples: usize,
    seed: u64,
) -> Result<TrapScanReport, SlowdownError> {
    if env_samples < MIN_ENV_SAMPLES {
        return Err(SlowdownError::InvalidParameters(format!(
            "env_samples = {env_samples} < {MIN_ENV_SAMPLES}"
        )));
    }
    if n_grid.is_empty() || n_grid.iter().any(|&n| n < 2) {
        return Err(SlowdownError::InvalidParameters("n grid must be non-empty with n >= 2".into()));
    }
    let ctx = require_slowdown(spec, seed)?;
    let gamma = ctx.regime.gamma.value;
    let s = ctx.exponent().expect("slowdown regime has a root");
    let (k_value, k_auto) = match k {
        TrapWidth::Auto => ((2.0 / gamma.abs()).ceil(), true),
        TrapWidth::Fixed(v) if v > 0.0 && v.is_finite() => (v, false),
        TrapWidth::Fixed(v) => return Err(SlowdownError::InvalidParameters(format!("K = {v} must be positive"))),
    };
    let rows = n_grid
        .iter()
        .map(|&n| trap_row(spec, n, k_value, env_samples, seed))
        .collect::<Result<Vec<_>, _>>()?;

    let mut flags = Vec::new();
    for w in rows.windows(2) {
        let slack = 2.0 * w[0].std_error.hypot(w[1].std_error);
        if w[1].q_hat > w[0].q_hat + slack {
            flags.push(format!("q_hat increases from n = {} to n = {}", w[0].n, w[1].n));
        }
    }
    let violations: usize = rows.iter().map(|r| r.bound_violations).sum();
    if violations > 0 {
        flags.push(format!("{violations} environments violate the survival bound"));
    }
    let used: Vec<&TrapScanRow> = rows.iter().filter(|r| r.traps >= MIN_FIT_SUCCESSES).collect();
    let xs: Vec<f64> = used.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|r| r.q_hat.ln()).collect();
    let target = (-1.5 * s, -0.5 * s);
    let fit = least_squares(&xs, &ys).map(|fit| {
        let in_target = fit.slope >= target.0 && fit.slope <= target.1;
        TrapFit { fit, band: fit.slope_band(), target, in_target }
    });
    match &fit {
        None => flags.push(format!(
            "fewer than two n values with at least {MIN_FIT_SUCCESSES} traps; no slope fitted"
        )),
        Some(f) if !f.in_target => flags.push(format!(
            "slope {:.4} outside [{:.4}, {:.4}]",
            f.fit.slope, target.0, target.1
        )),
        Some(_) => {}
    }
    let report = TrapScanReport {
        regime: ctx.regime.kind,
        gamma,
        s,
        k: k_value,
        k_auto,
        seed,
        rows,
        fit,
        flags,
    };
    if report.rows.iter().all(|r| r.traps == 0) {
        return Err(SlowdownError::AllZero { k: k_value, report: Box::new(report) });
    }
    Ok(report)
}

/// Which way the walk is transient; the statistic is `X_n` or `-X_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Right,
    Left,
}

impl Orientation {
    fn sign(self) -> f64 {
        match self {
            Orientation::Right => 1.0,
            Orientation::Left => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowdownRow {
    pub n: u64,
    pub s_prime: f64,
    pub median: f64,
    pub median_std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub upper_quartile: f64,
    pub walkers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowdownReport {
    pub spec: EnvironmentSpec,
    pub regime: RegimeKind,
    pub s: f64,
    pub orientation: Orientation,
    pub s_prime_grid: Vec<f64>,
    pub n_grid: Vec<u64>,
    pub walkers: usize,
    pub seed: u64,
    /// Ordered by `n`, then `s'`.
    pub rows: Vec<SlowdownRow>,
}

impl SlowdownReport {
    pub fn rows_for(&self, s_prime: f64) -> Vec<&SlowdownRow> {
        self.rows.iter().filter(|r| r.s_prime == s_prime).collect()
    }
}

/// Oriented annealed positions `+-X_n` for one batch, in walker order.
pub fn annealed_positions(
    spec: &Arc<EnvironmentSpec>,
    n: u64,
    walkers: usize,
    seed: u64,
    orientation: Orientation,
) -> Result<Vec<f64>, SlowdownError> {
    let batch = batch_final_positions(spec, n, walkers, derive_seed(seed, &[n]), SamplingMode::Annealed)?;
    Ok(batch.iter().map(|w| orientation.sign() * w.final_position as f64).collect())
}

/// Medians and upper quartiles of `(+-X_n) / n^{s'}`, without the regime check.
pub fn annealed_ratios(
    spec: &Arc<EnvironmentSpec>,
    s_prime_grid: &[f64],
    n_grid: &[u64],
    walkers: usize,
    seed: u64,
    orientation: Orientation,
) -> Result<Vec<SlowdownRow>, SlowdownError> {
    let mut rows = Vec::with_capacity(n_grid.len() * s_prime_grid.len());
    for &n in n_grid {
        let mut xs = annealed_positions(spec, n, walkers, seed, orientation)?;
        let boot = bootstrap_median(&xs, BOOTSTRAP_RESAMPLES, derive_seed(seed, &[domain::BOOTSTRAP, n]));
        xs.sort_by(f64::total_cmp);
        let q3 = quantile_sorted(&xs, 0.75);
        for &sp in s_prime_grid {
            let scale = (n as f64).powf(sp);
            rows.push(SlowdownRow {
                n,
                s_prime: sp,
                median: boot.median / scale,
                median_std_error: boot.std_error / scale,
                ci_low: boot.ci_low / scale,
                ci_high: boot.ci_high / scale,
                upper_quartile: q3 / scale,
                walkers,
            });
        }
    }
    Ok(rows)
}

/// Slowdown curve `X_n / n^{s'}` (or `-X_n / n^{s'}` for a left-transient
/// spec) under the annealed law.
pub fn slowdown_curve(
    spec: &Arc<EnvironmentSpec>,
    s_prime_grid: &[f64],
    n_grid: &[u64],
    walkers: usize,
    seed: u64,
) -> Result<SlowdownReport, SlowdownError> {
    if walkers < MIN_WALKERS {
        return Err(SlowdownError::InvalidParameters(format!("walkers = {walkers} < {MIN_WALKERS}")));
    }
    if n_grid.is_empty() || s_prime_grid.is_empty() || s_prime_grid.iter().any(|s| !s.is_finite()) {
        return Err(SlowdownError::InvalidParameters("empty or non-finite grid".into()));
    }
    let ctx = require_slowdown(spec, seed)?;
    let orientation = match ctx.regime.kind {
        RegimeKind::TransientLeftZeroSpeed => Orientation::Left,
        _ => Orientation::Right,
    };
    let rows = annealed_ratios(spec, s_prime_grid, n_grid, walkers, seed, orientation)?;
    Ok(SlowdownReport {
        spec: (**spec).clone(),
        regime: ctx.regime.kind,
        s: ctx.exponent().expect("slowdown regime has a root"),
        orientation,
        s_prime_grid: s_prime_grid.to_vec(),
        n_grid: n_grid.to_vec(),
        walkers,
        seed,
        rows,
    })
}

/// Binomial estimate of `P_0(X_n > n^{s'})` under the annealed law.
pub fn annealed_tail(
    spec: &Arc<EnvironmentSpec>,
    n: u64,
    s_prime: f64,
    walkers: usize,
    seed: u64,
) -> Result<Estimate, SlowdownError> {
    let xs = annealed_positions(spec, n, walkers, seed, Orientation::Right)?;
    let level = (n as f64).powf(s_prime);
    Ok(binomial(xs.iter().filter(|&&x| x > level).count(), walkers))
}
