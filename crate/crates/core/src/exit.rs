//! Exact quenched exit probabilities, trap quantities and survival in a window.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_model::Environment;
use crate::matrix::{log_delta, log_delta_prefixes, log_delta_sum, MatrixError};

/// Largest window accepted by the linear solver and the survival iteration.
pub const MAX_WINDOW: i64 = 10_000;
/// Largest horizon accepted by [`survival_exact`].
pub const MAX_HORIZON: u64 = 10_000_000;
/// Tolerated per-step growth of the surviving mass.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExitError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("window of {size} sites exceeds the limit {MAX_WINDOW}")]
    WindowTooLarge { size: i64 },
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("numerical fault: surviving mass grew from {before} to {after} at step {step}")]
    NumericalFault { step: u64, before: f64, after: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitSide {
    /// Reach `(-inf, a]` before `[b, inf)`.
    Minus,
    /// Reach `[b, inf)` before `(-inf, a]`.
    Plus,
}

fn check_triple(k: i64, a: i64, b: i64) -> Result<(), ExitError> {
    if !(a < k && k < b) {
        return Err(ExitError::InvalidArguments(format!("need a < k < b, got a={a}, k={k}, b={b}")));
    }
    Ok(())
}

/// Exit probability from the potential ratio
/// `sum_{j=k}^{b-1} delta(j, a+1) / sum_{j=a}^{b-1} delta(j, a+1)`
/// (minus side; plus is the complement). Exact for `L = 1`.
pub fn exit_prob_closed<E: Environment + ?Sized>(
    env: &E,
    k: i64,
    a: i64,
    b: i64,
    side: ExitSide,
) -> Result<f64, ExitError> {
    check_triple(k, a, b)?;
    let logs = log_delta_prefixes(env, a + 1, b - 1);
    if let Some(i) = logs.iter().position(|&v| v == f64::NEG_INFINITY) {
        return Err(MatrixError::UndefinedDelta { k: a + i as i64, l: a + 1 }.into());
    }
    // ratio of sums scaled by the common maximum
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &v) in logs.iter().enumerate() {
        let w = (v - max).exp();
        den += w;
        if a + i as i64 >= k {
            num += w;
        }
    }
    let minus = (num / den).min(1.0);
    Ok(match side {
        ExitSide::Minus => minus,
        ExitSide::Plus => 1.0 - minus,
    })
}

/// Banded matrix with lower bandwidth `lower` and upper bandwidth 1.
struct BandedSystem {
    lower: usize,
    // row i stores columns i - lower ..= i + 1
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    // row sums, i.e. the mass leaving the interval in one step
    slack: Vec<f64>,
}

impl BandedSystem {
    fn new(size: usize, lower: usize) -> Self {
        Self { lower, rows: vec![vec![0.0; lower + 2]; size], rhs: vec![0.0; size], slack: vec![0.0; size] }
    }

    #[inline]
    fn entry(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.rows[i][j + self.lower - i]
    }

    /// Gaussian elimination without pivoting. The system is a nonsingular
    /// M-matrix, so pivots stay positive and no fill leaves the band. Pivots
    /// are rebuilt from the row slack and the off-diagonal magnitudes, so the
    /// whole elimination is free of subtractive cancellation.
    fn solve(mut self) -> Vec<f64> {
        let m = self.rows.len();
        let l = self.lower;
        for c in 0..m {
            let pivot = self.rows[c][l];
            let upper = if c + 1 < m { self.rows[c][l + 1] } else { 0.0 };
            let rc = self.rhs[c];
            for r in c + 1..(c + l + 1).min(m) {
                let off = c + l - r;
                let factor = self.rows[r][off] / pivot;
                if factor == 0.0 {
                    continue;
                }
                self.rows[r][off] = 0.0;
                self.rows[r][off + 1] -= factor * upper;
                self.rhs[r] -= factor * rc;
                self.slack[r] -= factor * self.slack[c];
                if r == c + 1 {
                    let row = &self.rows[r];
                    let off_diag: f64 = row.iter().enumerate().filter(|&(j, _)| j != l).map(|(_, v)| v.abs()).sum();
                    self.rows[r][l] = self.slack[r] + off_diag;
                }
            }
        }
        // After elimination each row keeps only its pivot and upper entry,
        // with pivot = slack + |upper|. Rows that exit only off target or
        // only on target are written as a contraction towards 0 or 1, which
        // keeps the solution monotone in the start under rounding.
        let mut x = vec![0.0; m];
        for i in (0..m).rev() {
            let (d, rhs, slack) = (self.rows[i][l], self.rhs[i], self.slack[i]);
            x[i] = if i + 1 == m {
                rhs / d
            } else if rhs == 0.0 {
                (-self.rows[i][l + 1] / d) * x[i + 1]
            } else if rhs == slack {
                (x[i + 1] + (slack / d) * (1.0 - x[i + 1])).min(1.0)
            } else {
                (rhs - self.rows[i][l + 1] * x[i + 1]) / d
            };
        }
        x
    }
}

/// Exit probabilities for every start in `(a, b)` by first-step analysis:
/// `h(x) = sum_z omega_x(z) h(x + z)` with `h = 1` on the target side.
/// Left overshoot sites `a - L + 1 ..= a` and the single right site `b` are
/// absorbing. Entry `i` is the probability from `a + 1 + i`.
pub fn exit_probs_linear<E: Environment + ?Sized>(
    env: &E,
    a: i64,
    b: i64,
    side: ExitSide,
) -> Result<Vec<f64>, ExitError> {
    if b - a < 2 {
        return Err(ExitError::InvalidArguments(format!("need b - a >= 2, got a={a}, b={b}")));
    }
    if b - a > MAX_WINDOW {
        return Err(ExitError::WindowTooLarge { size: b - a });
    }
    let l = env.max_left();
    let m = (b - a - 1) as usize;
    let (left_value, right_value) = match side {
        ExitSide::Minus => (1.0, 0.0),
        ExitSide::Plus => (0.0, 1.0),
    };
    let mut sys = BandedSystem::new(m, l);
    for i in 0..m {
        let x = a + 1 + i as i64;
        let law = env.law(x);
                for (z, p) in law.jumps() {
            if z == 0 || p == 0.0 {
                continue;
            }
            let y = x + z;
            if y <= a {
                sys.rhs[i] += p * left_value;
                sys.slack[i] += p;
            } else if y >= b {
                sys.rhs[i] += p * right_value;
                sys.slack[i] += p;
            } else {
                *sys.entry(i, (y - a - 1) as usize) -= p;
            }
        }
    }
    for i in 0..m {
        let off_diag: f64 = sys.rows[i].iter().enumerate().filter(|&(j, _)| j != l).map(|(_, v)| v.abs()).sum();
        sys.rows[i][l] = sys.slack[i] + off_diag;
    }
    Ok(sys.solve())
}

pub fn exit_prob_linear<E: Environment + ?Sized>(
    env: &E,
    k: i64,
    a: i64,
    b: i64,
    side: ExitSide,
) -> Result<f64, ExitError> {
    check_triple(k, a, b)?;
    Ok(exit_probs_linear(env, a, b, side)?[(k - a - 1) as usize])
}

/// Trap quantities for the window `U = [-N, M]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapQuantities {
    pub m_arm: i64,
    pub n_arm: i64,
    /// `R_M = (1/M) log delta(M, 1)`.
    pub r_plus: f64,
    /// `R_N = (1/N) log sum_{j=-L}^{-1} delta(j, -N)`.
    pub r_minus: f64,
    /// `min(1, max(exp(N R_N), exp(-M R_M)))`.
    pub gamma_u: f64,
    /// Lower bound on the left-first probability from site 1: `(1 - exp(-M R_M))_+`.
    pub bound_right_arm: f64,
    /// Lower bound on the right-first probability from sites `-1..=-L`: `(1 - exp(N R_N))_+`.
    pub bound_left_arm: f64,
}

pub fn trap_quantities<E: Environment + ?Sized>(env: &E, n_arm: i64, m_arm: i64) -> Result<TrapQuantities, ExitError> {
    let l = env.max_left() as i64;
    if m_arm <= 1 || n_arm <= l {
        return Err(ExitError::InvalidArguments(format!(
            "need M > 1 and N > L, got M={m_arm}, N={n_arm}, L={l}"
        )));
    }
    let log_right = log_delta(env, m_arm, 1)?;
    let log_left = log_delta_sum(env, -l, -1, -n_arm)?;
    let r_plus = log_right / m_arm as f64;
    let r_minus = log_left / n_arm as f64;
    let gamma_u = 1f64.min(log_left.exp().max((-log_right).exp()));
    Ok(TrapQuantities {
        m_arm,
        n_arm,
        r_plus,
        r_minus,
        gamma_u,
        bound_right_arm: (1.0 - (-log_right).exp()).max(0.0),
        bound_left_arm: (1.0 - log_left.exp()).max(0.0),
    })
}

/// Transition table of the walk killed outside `U = [-N, M]`.
#[derive(Debug, Clone)]
pub struct SurvivalKernel {
    lo: i64,
    width: usize,
    stride: usize,
    max_left: usize,
    // per site: probabilities of jumps -L..=1
    probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalOutcome {
    /// `P(T_U > steps_done)`.
    pub mass: f64,
    pub steps_done: u64,
    /// True when the run stopped early because the mass fell below the threshold.
    pub stopped_early: bool,
}

impl SurvivalKernel {
    pub fn new<E: Environment + ?Sized>(env: &E, n_arm: i64, m_arm: i64) -> Result<Self, ExitError> {
        if n_arm < 0 || m_arm < 0 {
            return Err(ExitError::InvalidArguments(format!(
                "window [-{n_arm}, {m_arm}] must contain 0"
            )));
        }
        let size = n_arm + m_arm + 1;
        if size > MAX_WINDOW {
            return Err(ExitError::WindowTooLarge { size });
        }
        let max_left = env.max_left();
        let stride = max_left + 2;
        let mut probs = Vec::with_capacity(size as usize * stride);
        for x in -n_arm..=m_arm {
            probs.extend_from_slice(env.law(x).probs());
        }
        Ok(Self { lo: -n_arm, width: size as usize, stride, max_left, probs })
    }

    /// Iterate the killed transition operator from `delta_0` for up to
    /// `steps` steps, stopping once the mass drops below `stop_below`.
    pub fn run(&self, steps: u64, stop_below: Option<f64>) -> Result<SurvivalOutcome, ExitError> {
        if steps > MAX_HORIZON {
            return Err(ExitError::InvalidArguments(format!("horizon {steps} exceeds {MAX_HORIZON}")));
        }
        let w = self.width;
        let l = self.max_left;
        let origin = (-self.lo) as usize;
        let mut cur = vec![0.0; w];
        let mut next = vec![0.0; w];
        cur[origin] = 1.0;
        let (mut lo, mut hi) = (origin, origin);
        let mut mass = 1.0;
        for t in 1..=steps {
            let new_lo = lo.saturating_sub(l);
            let new_hi = (hi + 1).min(w - 1);
            next[new_lo..=new_hi].iter_mut().for_each(|v| *v = 0.0);
            for x in lo..=hi {
                let p = cur[x];
                if p == 0.0 {
                    continue;
                }
                let row = &self.probs[x * self.stride..(x + 1) * self.stride];
                // jump z lands on x + z; row index of jump z is z + L
                for (j, &q) in row.iter().enumerate() {
                    let y = x + j;
                    if y >= l && y - l < w {
                        next[y - l] += p * q;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            lo = new_lo;
            hi = new_hi;
            let new_mass: f64 = cur[lo..=hi].iter().sum();
            if new_mass > mass + MASS_TOLERANCE {
                return Err(ExitError::NumericalFault { step: t, before: mass, after: new_mass });
            }
            mass = new_mass;
            if stop_below.is_some_and(|th| mass < th) {
                return Ok(SurvivalOutcome { mass, steps_done: t, stopped_early: t < steps });
            }
        }
        Ok(SurvivalOutcome { mass, steps_done: steps, stopped_early: false })
    }
}

/// `P_0(T_U > n)` for `U = [-N, M]`, exact up to rounding.
pub fn survival_exact<E: Environment + ?Sized>(env: &E, n_arm: i64, m_arm: i64, steps: u64) -> Result<f64, ExitError> {
    Ok(SurvivalKernel::new(env, n_arm, m_arm)?.run(steps, None)?.mass)
}

/// Survival bound `(1 - gamma_U)^n`.
pub fn survival_lower_bound(gamma_u: f64, steps: u64) -> f64 {
    if steps == 0 {
        1.0
    } else {
        (steps as f64 * (-gamma_u).ln_1p()).exp()
    }
}

/// One row of the per-environment trap table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapRow {
    pub env_id: usize,
    pub quantities: TrapQuantities,
    pub survival_n: f64,
    pub survival_bound: f64,
}

pub fn write_trap_rows<W: Write>(out: W, rows: &[TrapRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "env_id", "M", "N", "R_plus", "R_minus", "gamma_U", "bound6", "bound7", "survival_n", "survival_bound",
    ])?;
    for r in rows {
        let q = &r.quantities;
        w.write_record([
            r.env_id.to_string(),
            q.m_arm.to_string(),
            q.n_arm.to_string(),
            q.r_plus.to_string(),
            q.r_minus.to_string(),
            q.gamma_u.to_string(),
            q.bound_right_arm.to_string(),
            q.bound_left_arm.to_string(),
            r.survival_n.to_string(),
            r.survival_bound.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
