//! Quenched simulation of the walk `X_{n+1} = X_n + z`, `z ~ omega_{X_n}`.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_model::{sample_environment, EnvError, Environment, EnvironmentSpec, EnvironmentWindow};
use crate::seeding::{derive_seed, domain, stream_rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("invalid stopping rule: {0}")]
    InvalidStop(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// One step from `x`.
#[inline]
pub fn step<E: Environment + ?Sized, R: Rng + ?Sized>(env: &E, x: i64, rng: &mut R) -> i64 {
    x + env.law(x).sample_jump(rng.gen::<f64>())
}

/// Stopping rules. Left level: stop once `X_n <= z_l` (`n > 0`); right level:
/// stop once `X_n >= z_r` (`n > 0`); interval `[lo, hi]`: stop on the first
/// `n >= 0` with `X_n` outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopSpec {
    pub left_level: Option<i64>,
    pub right_level: Option<i64>,
    pub interval: Option<(i64, i64)>,
    pub cap: u64,
}

impl StopSpec {
    pub fn levels(left: i64, right: i64, cap: u64) -> Self {
        Self { left_level: Some(left), right_level: Some(right), interval: None, cap }
    }

    pub fn exit_interval(lo: i64, hi: i64, cap: u64) -> Self {
        Self { left_level: None, right_level: None, interval: Some((lo, hi)), cap }
    }

    pub fn left_only(level: i64, cap: u64) -> Self {
        Self { left_level: Some(level), right_level: None, interval: None, cap }
    }

    /// Only the step cap.
    pub fn horizon(cap: u64) -> Self {
        Self { left_level: None, right_level: None, interval: None, cap }
    }

    pub fn validate(&self) -> Result<(), WalkError> {
        if self.cap == 0 {
            return Err(WalkError::InvalidStop("step cap must be >= 1".into()));
        }
        if let Some((lo, hi)) = self.interval {
            if lo > hi {
                return Err(WalkError::InvalidStop(format!("empty interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LeftLevel,
    RightLevel,
    ExitLeft,
    ExitRight,
    Censored,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::LeftLevel => "left_level",
            StopReason::RightLevel => "right_level",
            StopReason::ExitLeft => "exit_left",
            StopReason::ExitRight => "exit_right",
            StopReason::Censored => "censored",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: i64,
    pub cap: u64,
    /// `(step, position)` samples: step 0, every `stride`-th step, and the last step.
    pub recorded: Vec<(u64, i64)>,
    pub stride: u64,
    pub final_position: i64,
    pub steps: u64,
    pub reason: StopReason,
}

impl Trajectory {
    pub fn censored(&self) -> bool {
        self.reason == StopReason::Censored
    }
}

fn check_stop(stop: &StopSpec, x: i64, n: u64) -> Option<StopReason> {
    if let Some((lo, hi)) = stop.interval {
        if x < lo {
            return Some(StopReason::ExitLeft);
        }
        if x > hi {
            return Some(StopReason::ExitRight);
        }
    }
    if n > 0 {
        if stop.left_level.is_some_and(|z| x <= z) {
            return Some(StopReason::LeftLevel);
        }
        if stop.right_level.is_some_and(|z| x >= z) {
            return Some(StopReason::RightLevel);
        }
    }
    None
}

/// Default recording stride for a step cap.
pub fn default_stride(cap: u64) -> u64 {
    cap.div_ceil(1024).max(1)
}

/// Walk from `x0` until a stopping rule fires or the cap is reached.
pub fn run_until<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &E,
    x0: i64,
    stop: &StopSpec,
    rng: &mut R,
) -> Result<Trajectory, WalkError> {
    run_with_stride(env, x0, stop, rng, default_stride(stop.cap))
}

pub fn run_with_stride<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &E,
    x0: i64,
    stop: &StopSpec,
    rng: &mut R,
    stride: u64,
) -> Result<Trajectory, WalkError> {
    stop.validate()?;
    let stride = stride.max(1);
    let mut recorded = vec![(0, x0)];
    let mut x = x0;
    let mut n = 0u64;
    let mut reason = check_stop(stop, x, 0);
    while reason.is_none() && n < stop.cap {
        x = step(env, x, rng);
        n += 1;
        reason = check_stop(stop, x, n);
        if n.is_multiple_of(stride) || reason.is_some() || n == stop.cap {
            recorded.push((n, x));
        }
    }
    Ok(Trajectory {
        start: x0,
        cap: stop.cap,
        recorded,
        stride,
        final_position: x,
        steps: n,
        reason: reason.unwrap_or(StopReason::Censored),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Fresh environment per walker: samples the annealed law.
    Annealed,
    /// One environment shared by all walkers.
    Quenched,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkerResult {
    pub walker: usize,
    pub final_position: i64,
    pub steps: u64,
    pub reason: StopReason,
}

/// Environment used by walker `index` in annealed mode.
pub fn walker_environment(
    spec: &Arc<EnvironmentSpec>,
    n: u64,
    seed: u64,
    index: usize,
) -> Result<EnvironmentWindow, EnvError> {
    let env_seed = derive_seed(seed, &[domain::WALKER_ENV, index as u64]);
    realize_for_horizon(spec, n, env_seed)
}

/// Shared environment for quenched mode.
pub fn shared_environment(spec: &Arc<EnvironmentSpec>, n: u64, seed: u64) -> Result<EnvironmentWindow, EnvError> {
    realize_for_horizon(spec, n, derive_seed(seed, &[domain::WALKER_ENV, u64::MAX]))
}

fn realize_for_horizon(spec: &Arc<EnvironmentSpec>, n: u64, env_seed: u64) -> Result<EnvironmentWindow, EnvError> {
    // the walk from 0 cannot leave [-L n, n]; keep the stored part modest and
    // let farther sites resolve through the site function
    let reach = (n as i64).min(1 << 12);
    sample_environment(spec.clone(), -(spec.max_left() as i64) * reach, reach, env_seed)
}

/// Final positions of `walkers` walks of `n` steps from 0, in walker order.
pub fn batch_final_positions(
    spec: &Arc<EnvironmentSpec>,
    n: u64,
    walkers: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<Vec<WalkerResult>, WalkError> {
    if walkers == 0 {
        return Err(WalkError::InvalidStop("walkers must be >= 1".into()));
    }
    let stop = StopSpec::horizon(n.max(1));
    let shared = match mode {
        SamplingMode::Quenched => Some(shared_environment(spec, n, seed)?),
        SamplingMode::Annealed => None,
    };
    (0..walkers)
        .into_par_iter()
        .map(|w| {
            let mut rng = stream_rng(seed, domain::WALKER_STEPS, w as u64);
            let (x, steps) = if n == 0 {
                (0, 0)
            } else {
                let owned;
                let env: &EnvironmentWindow = match &shared {
                    Some(e) => e,
                    None => {
                        owned = walker_environment(spec, n, seed, w)?;
                        &owned
                    }
                };
                let mut x = 0i64;
                for _ in 0..stop.cap {
                    x = step(env, x, &mut rng);
                }
                (x, stop.cap)
            };
            Ok(WalkerResult { walker: w, final_position: x, steps, reason: StopReason::Censored })
        })
        .collect()
}

pub fn write_trajectory_csv<W: Write>(out: W, t: &Trajectory) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "position"])?;
    for &(s, x) in &t.recorded {
        w.write_record([s.to_string(), x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_batch_csv<W: Write>(out: W, rows: &[WalkerResult]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["walker", "final_position", "steps", "stop_reason"])?;
    for r in rows {
        w.write_record([
            r.walker.to_string(),
            r.final_position.to_string(),
            r.steps.to_string(),
            r.reason.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::SiteLaw;
    use crate::stats::binomial;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn right_spec() -> Arc<EnvironmentSpec> {
        let law = SiteLaw::from_jumps(1, &[(1, 1.0)]).unwrap();
        Arc::new(EnvironmentSpec::point_mass(law, 0.0).unwrap())
    }

    fn nn(rhos: &[(f64, f64)]) -> Arc<EnvironmentSpec> {
        Arc::new(EnvironmentSpec::nearest_neighbor(rhos).unwrap())
    }

    #[test]
    fn deterministic_right_step() {
        let env = sample_environment(right_spec(), -5, 5, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for x in -3..3 {
            assert_eq!(step(&env, x, &mut rng), x + 1);
        }
    }

    #[test]
    fn replay_is_identical() {
        let env = sample_environment(nn(&[(0.25, 0.5), (2.0, 0.5)]), -100, 100, 4).unwrap();
        let stop = StopSpec::horizon(500);
        let a = run_until(&env, 0, &stop, &mut stream_rng(9, domain::WALKER_STEPS, 3)).unwrap();
        let b = run_until(&env, 0, &stop, &mut stream_rng(9, domain::WALKER_STEPS, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jump_frequencies_match_law() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let law = SiteLaw::from_jumps(2, &[(-2, 0.15), (-1, 0.25), (0, 0.2), (1, 0.4)]).unwrap();
        let spec = Arc::new(EnvironmentSpec::point_mass(law.clone(), 0.1).unwrap());
        let env = sample_environment(spec, 0, 0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[(step(&env, 0, &mut rng) + 2) as usize] += 1;
        }
        let stat: f64 = counts
            .iter()
            .zip(law.probs())
            .map(|(&c, &p)| {
                let e = p * draws as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        assert!(stat < ChiSquared::new(3.0).unwrap().inverse_cdf(0.99), "chi2 = {stat}");
    }

    #[test]
    fn exits_interval_on_the_right() {
        let env = sample_environment(right_spec(), -10, 100, 0).unwrap();
        let m = 17;
        let t = run_until(&env, 0, &StopSpec::exit_interval(-5, m, 1000), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(t.reason, StopReason::ExitRight);
        assert_eq!(t.steps, m as u64 + 1);
        assert_eq!(t.final_position, m + 1);
    }

    #[test]
    fn censored_at_cap() {
        let env = sample_environment(right_spec(), -10, 100, 0).unwrap();
        let t = run_until(&env, 1, &StopSpec::left_only(0, 50), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(t.censored());
        assert_eq!(t.steps, 50);
        assert!(t.recorded.len() as u64 <= t.cap + 1);
    }

    #[test]
    fn invalid_stop_rules() {
        let env = sample_environment(right_spec(), 0, 1, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(run_until(&env, 0, &StopSpec::horizon(0), &mut rng).is_err());
        assert!(run_until(&env, 0, &StopSpec::exit_interval(3, 2, 10), &mut rng).is_err());
    }

    #[test]
    fn increments_stay_in_jump_set_and_stride_bounds_memory() {
        let law = SiteLaw::from_jumps(3, &[(-3, 0.2), (-2, 0.1), (-1, 0.1), (0, 0.1), (1, 0.5)]).unwrap();
        let spec = Arc::new(EnvironmentSpec::point_mass(law, 0.1).unwrap());
        let env = sample_environment(spec, -1000, 1000, 0).unwrap();
        let t = run_with_stride(&env, 0, &StopSpec::horizon(2000), &mut ChaCha8Rng::seed_from_u64(5), 1).unwrap();
        for w in t.recorded.windows(2) {
            let d = w[1].1 - w[0].1;
            assert!((-3..=1).contains(&d), "increment {d}");
        }
        let t = run_until(&env, 0, &StopSpec::horizon(1_000_000), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(t.recorded.len() <= 1026);
    }

    #[test]
    fn gamblers_ruin_frequency() {
        let env = sample_environment(nn(&[(1.0, 1.0)]), -10, 20, 0).unwrap();
        let m = 9;
        let runs = 100_000;
        let stop = StopSpec::levels(0, m + 1, 1_000_000);
        let left = (0..runs)
            .into_par_iter()
            .filter(|&i| {
                let mut rng = stream_rng(31, domain::WALKER_STEPS, i as u64);
                run_until(&env, 1, &stop, &mut rng).unwrap().reason == StopReason::LeftLevel
            })
            .count();
        let est = binomial(left, runs);
        let want = m as f64 / (m + 1) as f64;
        assert!((est.value - want).abs() < 3.0 * (want * (1.0 - want) / runs as f64).sqrt(), "{est:?}");
    }

    #[test]
    fn batch_modes() {
        let finals = batch_final_positions(&right_spec(), 300, 8, 1, SamplingMode::Annealed).unwrap();
        assert!(finals.iter().all(|r| r.final_position == 300));
        assert_eq!(finals.iter().map(|r| r.walker).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());

        let spec = nn(&[(0.25, 0.5), (2.0, 0.5)]);
        let e0 = walker_environment(&spec, 100, 5, 0).unwrap();
        let e1 = walker_environment(&spec, 100, 5, 1).unwrap();
        assert_ne!(e0.realized(), e1.realized());
        assert!(batch_final_positions(&spec, 10, 0, 1, SamplingMode::Annealed).is_err());
    }

    #[test]
    fn annealed_and_quenched_agree_for_point_mass() {
        // two-sample Kolmogorov-Smirnov at the 1% level
        let spec = nn(&[(0.6, 1.0)]);
        let n = 400;
        let a = batch_final_positions(&spec, n, 4000, 1, SamplingMode::Annealed).unwrap();
        let q = batch_final_positions(&spec, n, 4000, 2, SamplingMode::Quenched).unwrap();
        let mut xa: Vec<i64> = a.iter().map(|r| r.final_position).collect();
        let mut xq: Vec<i64> = q.iter().map(|r| r.final_position).collect();
        xa.sort_unstable();
        xq.sort_unstable();
        let lo = xa[0].min(xq[0]);
        let hi = xa[xa.len() - 1].max(xq[xq.len() - 1]);
        let cdf = |v: &[i64], t: i64| v.partition_point(|&x| x <= t) as f64 / v.len() as f64;
        let d = (lo..=hi).map(|t| (cdf(&xa, t) - cdf(&xq, t)).abs()).fold(0.0, f64::max);
        let crit = 1.628 * ((8000.0) / (4000.0 * 4000.0f64)).sqrt();
        assert!(d < crit, "KS {d} >= {crit}");
    }

    #[test]
    fn positive_speed_batch_matches_pilot() {
        let spec = nn(&[(1.0 / 9.0, 0.5), (1.0 / 3.0, 0.5)]);
        let n = 2000u64;
        let runs = batch_final_positions(&spec, n, 1000, 3, SamplingMode::Annealed).unwrap();
        let speeds: Vec<f64> = runs.iter().map(|r| r.final_position as f64 / n as f64).collect();
        let est = crate::stats::mean_and_se(&speeds);
        let pilot = batch_final_positions(&spec, 10 * n, 1000, 4, SamplingMode::Annealed).unwrap();
        let pilot_speeds: Vec<f64> = pilot.iter().map(|r| r.final_position as f64 / (10 * n) as f64).collect();
        let c = crate::stats::mean_and_se(&pilot_speeds);
        assert!(c.value > 0.0);
        let se = (est.std_error.powi(2) + c.std_error.powi(2)).sqrt();
        assert!((est.value - c.value).abs() < 3.0 * se + 2.0 / n as f64, "{est:?} vs {c:?}");
    }

    #[test]
    fn csv_outputs() {
        let t = Trajectory {
            start: 0,
            cap: 2,
            recorded: vec![(0, 0), (2, 2)],
            stride: 2,
            final_position: 2,
            steps: 2,
            reason: StopReason::Censored,
        };
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &t).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,position\n0,0\n2,2\n");
        let mut buf = Vec::new();
        write_batch_csv(&mut buf, &[WalkerResult { walker: 0, final_position: 3, steps: 5, reason: StopReason::Censored }])
            .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "walker,final_position,steps,stop_reason\n0,3,5,censored\n");
    }
}
