//! Lyapunov exponent, moment curve `F(u)`, rate function, slowdown root and
//! regime classification.
//!
//! All Monte Carlo estimators work from the same replica table: replica `r`
//! draws a fresh environment on `[0, n - 1]` keyed by `(seed, r)` and records
//! `log delta(n - 1, 0)`. Replicas are computed in parallel but reduced in
//! index order, so results do not depend on the thread count.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_model::{sample_environment, EnvironmentSpec};
use crate::logsum::LogSumExp;
use crate::matrix::{log_delta, MatrixError, ProductAccumulator};
use crate::seeding::{derive_seed, domain};
use crate::stats::{mean_and_se, Estimate};

/// Largest enumeration `(number of atoms)^n` accepted by [`exact_F_enumeration`].
pub const ENUMERATION_LIMIT: f64 = 1e7;
/// Table size used by [`ExactEvaluator::for_spec`].
pub const DEFAULT_TABLE_BUDGET: usize = 1 << 20;
/// Longest product enumerated for single-atom laws.
pub const MAX_ENUMERATION_LENGTH: usize = 4096;
/// Sign decisions need this many standard errors.
pub const DECISION_Z: f64 = 3.0;
/// Absolute tolerance of the bisection on `u`.
pub const ROOT_TOLERANCE: f64 = 1e-6;
/// Default cap on replica-products spent by the Monte Carlo root finder.
pub const DEFAULT_REPLICA_BUDGET: u64 = 10_000_000;
const HEAVY_TAIL_SHARE: f64 = 0.99;
/// Points whose weights have a smaller effective sample size are flagged as
/// heavy-tailed.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Env(#[from] crate::env_model::EnvError),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("enumeration of {size:.3e} sequences exceeds the limit {limit:.0e}")]
    TooLarge { size: f64, limit: f64 },
    #[error("u grid must be strictly increasing, contain 0 and have at least 5 points")]
    InvalidGrid,
    #[error("supremum for x = {x} is attained at the grid boundary u = {u}")]
    GridTooNarrow { x: f64, u: f64 },
    #[error("NoSlowdownRoot: {0}")]
    NoSlowdownRoot(String),
    #[error("sign of F({u}) unresolved within the replica budget (bracket [{lo}, {hi}])")]
    Unresolved { u: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
    pub replicas: usize,
}

impl LyapunovEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.value, std_error: self.std_error }
    }
}

/// `log delta(n - 1, 0)` for each replica, in replica order.
pub fn replica_log_deltas(
    spec: &Arc<EnvironmentSpec>,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<f64>, LyapunovError> {
    if n < spec.max_left() || n == 0 {
        return Err(LyapunovError::InvalidParameters(format!(
            "product length n = {n} must be >= L = {}",
            spec.max_left()
        )));
    }
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let env_seed = derive_seed(seed, &[domain::REPLICA_ENV, r as u64]);
            let env = sample_environment(spec.clone(), 0, n as i64 - 1, env_seed)?;
            Ok(log_delta(&env, n as i64 - 1, 0)?)
        })
        .collect()
}

pub fn estimate_gamma(
    spec: &Arc<EnvironmentSpec>,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<LyapunovEstimate, LyapunovError> {
    if replicas == 0 {
        return Err(LyapunovError::InvalidParameters("replicas must be >= 1".into()));
    }
    let logs = replica_log_deltas(spec, n, replicas, seed)?;
    Ok(gamma_from_logs(&logs, n))
}

fn gamma_from_logs(logs: &[f64], n: usize) -> LyapunovEstimate {
    let scaled: Vec<f64> = logs.iter().map(|x| x / n as f64).collect();
    let e = mean_and_se(&scaled);
    LyapunovEstimate { value: e.value, std_error: e.std_error, n, replicas: logs.len() }
}

/// One point of a moment curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub u: f64,
    pub f_hat: f64,
    pub std_error: f64,
    /// The largest replica carries more than 99% of the sum, or the weights
    /// have an effective sample size below [`MIN_EFFECTIVE_SAMPLES`]: the
    /// standard error is not trustworthy.
    pub heavy_tail: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMethod {
    MonteCarlo,
    ExactEnumeration,
}

impl MomentMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            MomentMethod::MonteCarlo => "monte-carlo",
            MomentMethod::ExactEnumeration => "exact-enumeration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    pub points: Vec<MomentPoint>,
    pub n: usize,
    pub replicas: usize,
    pub method: MomentMethod,
}

impl MomentCurve {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.u).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.f_hat).collect()
    }

    /// Point at `u`, if on the grid.
    pub fn at(&self, u: f64) -> Option<&MomentPoint> {
        self.points.iter().find(|p| (p.u - u).abs() < 1e-12)
    }

    /// Copy with `F` replaced by its greatest convex minorant on the grid
    /// and `F(0)` pinned to zero.
    pub fn repaired(&self) -> MomentCurve {
        let fixed = convex_minorant(&self.grid(), &self.values());
        let mut out = self.clone();
        for (p, v) in out.points.iter_mut().zip(fixed) {
            p.f_hat = if p.u == 0.0 { 0.0 } else { v };
        }
        out
    }
}

/// Default grid `-1.5, -1.4, ..., 1.5`.
pub fn default_u_grid() -> Vec<f64> {
    (-15..=15).map(|i| i as f64 / 10.0).collect()
}

fn check_grid(grid: &[f64]) -> Result<(), LyapunovError> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|u| !u.is_finite()) {
        return Err(LyapunovError::InvalidGrid);
    }
    Ok(())
}

/// `F_hat(u)` and its delta-method standard error from replica log-potentials.
fn moment_from_logs(logs: &[f64], u: f64, n: usize) -> MomentPoint {
    if u == 0.0 {
        return MomentPoint { u, f_hat: 0.0, std_error: 0.0, heavy_tail: false };
    }
    let r = logs.len() as f64;
    let mut lse = LogSumExp::new();
    for &x in logs {
        lse.push(u * x);
    }
    let max = lse.max();
    let weights: Vec<f64> = logs.iter().map(|&x| (u * x - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mean_w = total / r;
    let var = weights.iter().map(|w| (w - mean_w).powi(2)).sum::<f64>() / (r - 1.0);
    let se_log_mean = (var / r).sqrt() / mean_w;
    let ess = total * total / weights.iter().map(|w| w * w).sum::<f64>();
    MomentPoint {
        u,
        f_hat: (lse.value() - r.ln()) / n as f64,
        std_error: se_log_mean / n as f64,
        heavy_tail: 1.0 / total > HEAVY_TAIL_SHARE || ess < MIN_EFFECTIVE_SAMPLES,
    }
}

/// Monte Carlo moment curve over `u_grid`.
#[allow(non_snake_case)]
pub fn estimate_F(
    spec: &Arc<EnvironmentSpec>,
    u_grid: &[f64],
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<MomentCurve, LyapunovError> {
    check_grid(u_grid)?;
    if replicas < 2 {
        return Err(LyapunovError::InvalidParameters("replicas must be >= 2".into()));
    }
    let logs = replica_log_deltas(spec, n, replicas, seed)?;
    Ok(curve_from_logs(&logs, u_grid, n))
}

/// Moment curve from a precomputed replica table.
pub fn curve_from_logs(logs: &[f64], u_grid: &[f64], n: usize) -> MomentCurve {
    MomentCurve {
        points: u_grid.iter().map(|&u| moment_from_logs(logs, u, n)).collect(),
        n,
        replicas: logs.len(),
        method: MomentMethod::MonteCarlo,
    }
}

/// `gamma_hat` and the moment curve from one shared replica table.
pub fn estimate_gamma_and_curve(
    spec: &Arc<EnvironmentSpec>,
    u_grid: &[f64],
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<(LyapunovEstimate, MomentCurve), LyapunovError> {
    check_grid(u_grid)?;
    if replicas < 2 {
        return Err(LyapunovError::InvalidParameters("replicas must be >= 2".into()));
    }
    let logs = replica_log_deltas(spec, n, replicas, seed)?;
    Ok((gamma_from_logs(&logs, n), curve_from_logs(&logs, u_grid, n)))
}

/// Positive-weight atoms as `(log weight, matrix index)`.
fn support(spec: &EnvironmentSpec) -> Vec<(f64, usize)> {
    spec.support().into_iter().map(|i| (spec.atoms()[i].weight.ln(), i)).collect()
}

fn enumeration_size(spec: &EnvironmentSpec, n: usize) -> f64 {
    (spec.support().len() as f64).powi(n as i32)
}

/// Depth-first walk over all atom sequences of length `n`, calling
/// `visit(log_weight, log_delta)` at every leaf. Prefix products are shared.
fn enumerate_sequences(spec: &EnvironmentSpec, n: usize, mut visit: impl FnMut(f64, f64)) {
    let atoms = support(spec);
    let mut stack: Vec<ProductAccumulator> = vec![ProductAccumulator::new(spec.max_left()); n + 1];
    let mut weights = vec![0.0; n + 1];
    let mut choice = vec![0usize; n];
    let mut depth = 0usize;
    // iterative DFS: choice[d] is the next atom to try at depth d
    loop {
        if depth == n {
            visit(weights[n], stack[n].log_first());
            if depth == 0 {
                return;
            }
            depth -= 1;
            continue;
        }
        if choice[depth] == atoms.len() {
            choice[depth] = 0;
            if depth == 0 {
                return;
            }
            depth -= 1;
            continue;
        }
        let (lw, idx) = atoms[choice[depth]];
        choice[depth] += 1;
        let mut next = stack[depth].clone();
        next.push(&spec.matrices()[idx]);
        stack[depth + 1] = next;
        weights[depth + 1] = weights[depth] + lw;
        depth += 1;
    }
}

/// Exact finite-`n` moment `(1/n) log E[delta(n-1, 0)^u]` by enumerating
/// every atom sequence.
#[allow(non_snake_case)]
pub fn exact_F_enumeration(spec: &EnvironmentSpec, u: f64, n: usize) -> Result<f64, LyapunovError> {
    if n == 0 || n < spec.max_left() {
        return Err(LyapunovError::InvalidParameters(format!("n = {n} must be >= max(1, L)")));
    }
    let size = enumeration_size(spec, n);
    if size > ENUMERATION_LIMIT {
        return Err(LyapunovError::TooLarge { size, limit: ENUMERATION_LIMIT });
    }
    let mut lse = LogSumExp::new();
    let mut zero = false;
    enumerate_sequences(spec, n, |lw, ld| {
        if ld == f64::NEG_INFINITY {
            zero = true;
        }
        lse.push(lw + u * ld);
    });
    if zero && u <= 0.0 {
        return Err(MatrixError::UndefinedDelta { k: n as i64 - 1, l: 0 }.into());
    }
    Ok(lse.value() / n as f64)
}

/// Something that can evaluate `F(u)` with a standard error, possibly
/// spending more effort on request.
pub trait MomentEvaluator {
    /// Estimate of `gamma_L` on the same footing as [`MomentEvaluator::moment`].
    fn gamma(&mut self) -> Result<Estimate, LyapunovError>;

    /// Estimate of `F(u)`; larger `effort` means smaller standard error.
    fn moment(&mut self, u: f64, effort: u32) -> Result<Estimate, LyapunovError>;

    fn is_exact(&self) -> bool;

    fn product_length(&self) -> usize;
}

/// Exact evaluator backed by a table of every `(log weight, log delta)` pair.
#[derive(Debug, Clone)]
pub struct ExactEvaluator {
    n: usize,
    table: Vec<(f64, f64)>,
}

impl ExactEvaluator {
    pub fn new(spec: &EnvironmentSpec, n: usize) -> Result<Self, LyapunovError> {
        if n == 0 || n < spec.max_left() {
            return Err(LyapunovError::InvalidParameters(format!("n = {n} must be >= max(1, L)")));
        }
        let size = enumeration_size(spec, n);
        if size > ENUMERATION_LIMIT {
            return Err(LyapunovError::TooLarge { size, limit: ENUMERATION_LIMIT });
        }
        let mut table = Vec::with_capacity(size as usize);
        enumerate_sequences(spec, n, |lw, ld| table.push((lw, ld)));
        if table.iter().any(|&(_, ld)| ld == f64::NEG_INFINITY) {
            return Err(MatrixError::UndefinedDelta { k: n as i64 - 1, l: 0 }.into());
        }
        Ok(Self { n, table })
    }

    /// Longest product whose enumeration fits in `budget` table entries.
    pub fn feasible_length(spec: &EnvironmentSpec, budget: usize) -> usize {
        let m = spec.support().len();
        let n = if m <= 1 {
            MAX_ENUMERATION_LENGTH
        } else {
            ((budget as f64).ln() / (m as f64).ln()).floor() as usize
        };
        n.min(MAX_ENUMERATION_LENGTH)
    }

    /// Evaluator with the longest product fitting [`DEFAULT_TABLE_BUDGET`],
    /// or `None` if even `n = L` does not fit.
    pub fn for_spec(spec: &EnvironmentSpec) -> Option<Self> {
        let n = Self::feasible_length(spec, DEFAULT_TABLE_BUDGET);
        if n < spec.max_left().max(1) {
            return None;
        }
        Self::new(spec, n).ok()
    }

    pub fn log_moment(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        let mut lse = LogSumExp::new();
        for &(lw, ld) in &self.table {
            lse.push(lw + u * ld);
        }
        lse.value() / self.n as f64
    }

    pub fn exact_gamma(&self) -> f64 {
        self.table.iter().map(|&(lw, ld)| lw.exp() * ld).sum::<f64>() / self.n as f64
    }

    pub fn curve(&self, u_grid: &[f64]) -> Result<MomentCurve, LyapunovError> {
        check_grid(u_grid)?;
        Ok(MomentCurve {
            points: u_grid
                .iter()
                .map(|&u| MomentPoint { u, f_hat: self.log_moment(u), std_error: 0.0, heavy_tail: false })
                .collect(),
            n: self.n,
            replicas: self.table.len(),
            method: MomentMethod::ExactEnumeration,
        })
    }
}

impl MomentEvaluator for ExactEvaluator {
    fn gamma(&mut self) -> Result<Estimate, LyapunovError> {
        Ok(Estimate::exact(self.exact_gamma()))
    }

    fn moment(&mut self, u: f64, _effort: u32) -> Result<Estimate, LyapunovError> {
        Ok(Estimate::exact(self.log_moment(u)))
    }

    fn is_exact(&self) -> bool {
        true
    }

    fn product_length(&self) -> usize {
        self.n
    }
}

/// Monte Carlo evaluator; effort level `e` uses `base * 4^e` replicas.
#[derive(Debug)]
pub struct MonteCarloEvaluator {
    spec: Arc<EnvironmentSpec>,
    n: usize,
    base_replicas: usize,
    budget: u64,
    spent: u64,
    seed: u64,
    levels: Vec<Option<Vec<f64>>>,
}

impl MonteCarloEvaluator {
    pub fn new(spec: Arc<EnvironmentSpec>, n: usize, base_replicas: usize, seed: u64) -> Self {
        Self {
            spec,
            n,
            base_replicas: base_replicas.max(2),
            budget: DEFAULT_REPLICA_BUDGET,
            spent: 0,
            seed,
            levels: Vec::new(),
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    /// Replica-products generated so far.
    pub fn spent(&self) -> u64 {
        self.spent
    }

    fn logs(&mut self, effort: u32) -> Result<&[f64], LyapunovError> {
        let e = effort as usize;
        if self.levels.len() <= e {
            self.levels.resize(e + 1, None);
        }
        if self.levels[e].is_none() {
            let replicas = self.base_replicas as u64 * 4u64.pow(effort);
            if self.spent + replicas > self.budget {
                return Err(LyapunovError::InvalidParameters(format!(
                    "replica budget {} exhausted",
                    self.budget
                )));
            }
            self.spent += replicas;
            let seed = derive_seed(self.seed, &[domain::ESCALATION, effort as u64]);
            self.levels[e] = Some(replica_log_deltas(&self.spec, self.n, replicas as usize, seed)?);
        }
        Ok(self.levels[e].as_deref().unwrap())
    }
}

impl MomentEvaluator for MonteCarloEvaluator {
    fn gamma(&mut self) -> Result<Estimate, LyapunovError> {
        let n = self.n;
        Ok(gamma_from_logs(self.logs(0)?, n).estimate())
    }

    fn moment(&mut self, u: f64, effort: u32) -> Result<Estimate, LyapunovError> {
        let n = self.n;
        let p = moment_from_logs(self.logs(effort)?, u, n);
        // a degenerate weight sample says nothing about the sign
        let std_error = if p.heavy_tail { f64::INFINITY } else { p.std_error };
        Ok(Estimate { value: p.f_hat, std_error })
    }

    fn is_exact(&self) -> bool {
        false
    }

    fn product_length(&self) -> usize {
        self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RootSide {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowdownRoot {
    pub s: f64,
    pub bracket: (f64, f64),
    pub evaluations: usize,
    pub exact: bool,
    pub product_length: usize,
}

/// Sign of `F(u)` resolved at [`DECISION_Z`] standard errors, escalating effort.
fn resolved_sign(
    ev: &mut dyn MomentEvaluator,
    u: f64,
    bracket: (f64, f64),
    evaluations: &mut usize,
) -> Result<f64, LyapunovError> {
    let mut effort = 0;
    loop {
        *evaluations += 1;
        let est = match ev.moment(u, effort) {
            Ok(e) => e,
            Err(LyapunovError::InvalidParameters(_)) => {
                return Err(LyapunovError::Unresolved { u, lo: bracket.0, hi: bracket.1 })
            }
            Err(e) => return Err(e),
        };
        if ev.is_exact() || est.value.abs() >= DECISION_Z * est.std_error {
            return Ok(if est.value > 0.0 {
                1.0
            } else if est.value < 0.0 {
                -1.0
            } else {
                0.0
            });
        }
        effort += 1;
    }
}

/// Bisection for the nonzero root `s` of `F` on `(0, 1)` (positive side) or
/// `(-1, 0)` (negative side).
pub fn find_root_s(ev: &mut dyn MomentEvaluator, side: RootSide) -> Result<SlowdownRoot, LyapunovError> {
    let bracket = match side {
        RootSide::Positive => (0.0, 1.0),
        RootSide::Negative => (-1.0, 0.0),
    };
    find_root_s_in(ev, side, bracket)
}

/// [`find_root_s`] starting from a narrower bracket, e.g. one read off a
/// cached moment curve.
pub fn find_root_s_in(
    ev: &mut dyn MomentEvaluator,
    side: RootSide,
    bracket: (f64, f64),
) -> Result<SlowdownRoot, LyapunovError> {
    let gamma = ev.gamma()?;
    let edge = match side {
        RootSide::Positive => 1.0,
        RootSide::Negative => -1.0,
    };
    let mut evaluations = 0;
    if gamma.z_score().abs() < DECISION_Z {
        return Err(LyapunovError::NoSlowdownRoot(format!(
            "gamma = {:.6} is within {DECISION_Z} standard errors of 0 (recurrent band)",
            gamma.value
        )));
    }
    match side {
        RootSide::Positive if gamma.value >= 0.0 => {
            return Err(LyapunovError::NoSlowdownRoot(format!(
                "gamma = {:.6} >= 0: walk is not transient to the right",
                gamma.value
            )))
        }
        RootSide::Negative if gamma.value <= 0.0 => {
            return Err(LyapunovError::NoSlowdownRoot(format!(
                "gamma = {:.6} <= 0: walk is not transient to the left",
                gamma.value
            )))
        }
        _ => {}
    }
    let edge_sign = resolved_sign(ev, edge, bracket, &mut evaluations)?;
    if edge_sign <= 0.0 {
        return Err(LyapunovError::NoSlowdownRoot(format!(
            "F({edge}) is not positive: positive-speed regime"
        )));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) || lo < -1.0 || hi > 1.0 || (lo < 0.0 && hi > 0.0) {
        return Err(LyapunovError::InvalidParameters(format!("bad bracket [{lo}, {hi}]")));
    }
    while hi - lo > 2.0 * ROOT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        let sign = resolved_sign(ev, mid, (lo, hi), &mut evaluations)?;
        if sign == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        // positive side: F < 0 on (0, s), F > 0 on (s, 1]
        // negative side: F > 0 on [-1, s), F < 0 on (s, 0)
        let root_is_right = match side {
            RootSide::Positive => sign < 0.0,
            RootSide::Negative => sign > 0.0,
        };
        if root_is_right {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SlowdownRoot {
        s: 0.5 * (lo + hi),
        bracket: (lo, hi),
        evaluations,
        exact: ev.is_exact(),
        product_length: ev.product_length(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeKind {
    TransientRightPositiveSpeed,
    TransientRightZeroSpeed,
    TransientLeftNegativeSpeed,
    TransientLeftZeroSpeed,
    Recurrent,
}

impl RegimeKind {
    pub fn is_slowdown(&self) -> bool {
        matches!(self, RegimeKind::TransientRightZeroSpeed | RegimeKind::TransientLeftZeroSpeed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignDecision {
    pub quantity: String,
    pub value: f64,
    pub std_error: f64,
    pub z: f64,
    pub inconclusive: bool,
}

impl SignDecision {
    fn new(quantity: &str, e: Estimate) -> Self {
        let z = e.z_score();
        Self {
            quantity: quantity.into(),
            value: e.value,
            std_error: e.std_error,
            z,
            inconclusive: z.abs() < DECISION_Z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub kind: RegimeKind,
    pub gamma: Estimate,
    pub f_plus: Estimate,
    pub f_minus: Estimate,
    /// The sign decisions that determined `kind`.
    pub decisions: Vec<SignDecision>,
}

impl Regime {
    pub fn conclusive(&self) -> bool {
        match self.kind {
            RegimeKind::Recurrent => true,
            _ => self.decisions.iter().all(|d| !d.inconclusive),
        }
    }
}

/// Sign table on `(gamma, F(1), F(-1))`; `|z(gamma)| < 3` is the recurrent band.
pub fn classify_regime(gamma: Estimate, f_plus: Estimate, f_minus: Estimate) -> Regime {
    let g = SignDecision::new("gamma", gamma);
    let (kind, decisions) = if g.inconclusive {
        (RegimeKind::Recurrent, vec![g])
    } else if gamma.value < 0.0 {
        let kind = if f_plus.value < 0.0 {
            RegimeKind::TransientRightPositiveSpeed
        } else {
            RegimeKind::TransientRightZeroSpeed
        };
        (kind, vec![g, SignDecision::new("F(1)", f_plus)])
    } else {
        let kind = if f_minus.value < 0.0 {
            RegimeKind::TransientLeftNegativeSpeed
        } else {
            RegimeKind::TransientLeftZeroSpeed
        };
        (kind, vec![g, SignDecision::new("F(-1)", f_minus)])
    };
    Regime { kind, gamma, f_plus, f_minus, decisions }
}

/// Regime of a spec from an evaluator (exact when available).
///
/// Outside the recurrent band, the moment that decides the speed (`F(1)` for
/// `gamma < 0`, `F(-1)` for `gamma > 0`) is escalated until its sign clears [`DECISION_Z`] or the
/// evaluator's budget runs out; the last estimate is classified either way.
pub fn assess_regime(ev: &mut dyn MomentEvaluator) -> Result<Regime, LyapunovError> {
    let g = ev.gamma()?;
    // nothing to decide in the recurrent band
    let decisive = if g.z_score().abs() < DECISION_Z {
        0.0
    } else if g.value < 0.0 {
        1.0
    } else {
        -1.0
    };
    let fp = if decisive > 0.0 { escalated_moment(ev, 1.0)? } else { ev.moment(1.0, 0)? };
    let fm = if decisive < 0.0 { escalated_moment(ev, -1.0)? } else { ev.moment(-1.0, 0)? };
    Ok(classify_regime(g, fp, fm))
}

fn escalated_moment(ev: &mut dyn MomentEvaluator, u: f64) -> Result<Estimate, LyapunovError> {
    let mut est = ev.moment(u, 0)?;
    let mut effort = 0;
    while !ev.is_exact() && est.z_score().abs() < DECISION_Z {
        effort += 1;
        match ev.moment(u, effort) {
            Ok(e) => est = e,
            Err(LyapunovError::InvalidParameters(_)) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(est)
}

/// Greatest convex minorant of the points `(xs[i], ys[i])`, evaluated at `xs`.
pub fn convex_minorant(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut hull: Vec<usize> = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // drop b when it lies on or above the chord a -> i
            let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = Vec::with_capacity(xs.len());
    let mut seg = 0;
    for i in 0..xs.len() {
        while seg + 1 < hull.len() && hull[seg + 1] < i {
            seg += 1;
        }
        if hull.contains(&i) {
            out.push(ys[i]);
        } else {
            let (a, b) = (hull[seg], hull[seg + 1]);
            let t = (xs[i] - xs[a]) / (xs[b] - xs[a]);
            out.push(ys[a] + t * (ys[b] - ys[a]));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub x: f64,
    pub rate: f64,
    pub argmax_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFunction {
    /// The repaired curve the transform was taken of.
    pub curve: MomentCurve,
    pub points: Vec<RatePoint>,
}

fn legendre_point(us: &[f64], fs: &[f64], x: f64) -> Result<RatePoint, LyapunovError> {
    let vals: Vec<f64> = us.iter().zip(fs).map(|(u, f)| u * x - f).collect();
    let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * best.abs().max(1.0);
    // among near-ties prefer the u closest to 0
    let idx = (0..us.len())
        .filter(|&i| vals[i] >= best - tol)
        .min_by(|&a, &b| us[a].abs().total_cmp(&us[b].abs()))
        .expect("non-empty grid");
    if idx == 0 || idx == us.len() - 1 {
        return Err(LyapunovError::GridTooNarrow { x, u: us[idx] });
    }
    Ok(RatePoint { x, rate: best.max(0.0), argmax_u: us[idx] })
}

/// `I(x) = max_u (u x - F(u))` over the (repaired) grid.
pub fn legendre_rate(curve: &MomentCurve, x_grid: &[f64]) -> Result<RateFunction, LyapunovError> {
    let us = curve.grid();
    check_grid(&us)?;
    if us.len() < 5 || !us.contains(&0.0) {
        return Err(LyapunovError::InvalidGrid);
    }
    let repaired = curve.repaired();
    let fs = repaired.values();
    let points = x_grid
        .iter()
        .map(|&x| legendre_point(&us, &fs, x))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RateFunction { curve: repaired, points })
}

/// `count` evenly spaced `x` values strictly between the outermost chord
/// slopes of the repaired curve, where the transform is grid-interior.
pub fn interior_x_grid(curve: &MomentCurve, count: usize) -> Vec<f64> {
    let r = curve.repaired();
    let (us, fs) = (r.grid(), r.values());
    let k = us.len();
    if k < 3 || count == 0 {
        return Vec::new();
    }
    let lo = (fs[1] - fs[0]) / (us[1] - us[0]);
    let hi = (fs[k - 1] - fs[k - 2]) / (us[k - 1] - us[k - 2]);
    (1..=count)
        .map(|i| lo + (hi - lo) * i as f64 / (count + 1) as f64)
        .collect()
}
