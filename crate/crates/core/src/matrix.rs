//! Companion matrices and log-renormalized products.
//!
//! Site `x` carries the `L x L` matrix `A(x)` whose top row is
//! `a_i = (p(-i) + ... + p(-L)) / p(1)` and whose subdiagonal is all ones.
//! The potential `delta(k, l)` is the `(1,1)` entry of `A(k) ... A(l)`,
//! with the convention `delta(l - 1, l) = 1`. Products grow or shrink
//! geometrically, so they are always carried as a unit-scale vector plus a
//! log scale.

use std::io::Write;

use thiserror::Error;

use crate::env_model::{validate_site_law, Environment, LawViolation, SiteLaw};
use crate::logsum::LogSumExp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("invalid site law: {0:?}")]
    InvalidLaw(Vec<LawViolation>),
    #[error("delta({k}, {l}) is exactly zero")]
    UndefinedDelta { k: i64, l: i64 },
    #[error("invalid product range: k = {k}, l = {l} (need k >= l - 1)")]
    InvalidRange { k: i64, l: i64 },
}

/// Companion matrix, stored as its top row.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanionMatrix {
    top: Vec<f64>,
}

impl CompanionMatrix {
    /// No validation; the law must have `p(1) > 0`.
    pub fn from_law(law: &SiteLaw) -> Self {
        let l = law.max_left();
        let right = law.prob(1);
        let mut top = vec![0.0; l];
        let mut tail = 0.0;
        for i in (1..=l).rev() {
            tail += law.prob(-(i as i64));
            top[i - 1] = tail / right;
        }
        Self { top }
    }

    pub fn from_top_row(top: Vec<f64>) -> Self {
        assert!(!top.is_empty(), "companion matrix needs L >= 1");
        Self { top }
    }

    pub fn dim(&self) -> usize {
        self.top.len()
    }

    /// `(a_1, ..., a_L)`.
    pub fn top_row(&self) -> &[f64] {
        &self.top
    }

    /// `v <- A v` in O(L).
    #[inline]
    pub fn apply_in_place(&self, v: &mut [f64]) {
        let head: f64 = self.top.iter().zip(v.iter()).map(|(a, x)| a * x).sum();
        v.copy_within(0..v.len() - 1, 1);
        v[0] = head;
    }

    /// Row-major dense `L x L` matrix.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let l = self.dim();
        let mut m = vec![vec![0.0; l]; l];
        m[0].copy_from_slice(&self.top);
        for i in 1..l {
            m[i][i - 1] = 1.0;
        }
        m
    }
}

/// Validating constructor.
pub fn build_matrix(law: &SiteLaw, kappa: f64) -> Result<CompanionMatrix, MatrixError> {
    validate_site_law(law, kappa).map_err(MatrixError::InvalidLaw)?;
    Ok(CompanionMatrix::from_law(law))
}

/// `A(k) ... A(l) e_1` as a unit-scale vector times `exp(log_scale)`.
///
/// Factors are pushed right to left: first `A(l)`, then `A(l + 1)`, and so on.
#[derive(Debug, Clone)]
pub struct ProductAccumulator {
    v: Vec<f64>,
    log_scale: f64,
    count: usize,
}

impl ProductAccumulator {
    pub fn new(dim: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[0] = 1.0;
        Self { v, log_scale: 0.0, count: 0 }
    }

    #[inline]
    pub fn push(&mut self, m: &CompanionMatrix) {
        m.apply_in_place(&mut self.v);
        self.count += 1;
        let norm = self.v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if norm > 0.0 && norm.is_finite() {
            let inv = 1.0 / norm;
            self.v.iter_mut().for_each(|x| *x *= inv);
            self.log_scale += norm.ln();
        }
    }

    /// `log <e_1, product e_1>`, `-inf` if the entry is exactly zero.
    #[inline]
    pub fn log_first(&self) -> f64 {
        if self.v[0] > 0.0 {
            self.v[0].ln() + self.log_scale
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn vector(&self) -> &[f64] {
        &self.v
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// `log delta(k, l)`.
pub fn log_delta<E: Environment + ?Sized>(env: &E, k: i64, l: i64) -> Result<f64, MatrixError> {
    if k < l - 1 {
        return Err(MatrixError::InvalidRange { k, l });
    }
    if k == l - 1 {
        return Ok(0.0);
    }
    let mut acc = ProductAccumulator::new(env.max_left());
    for x in l..=k {
        acc.push(env.matrix(x));
    }
    let v = acc.log_first();
    if v == f64::NEG_INFINITY {
        Err(MatrixError::UndefinedDelta { k, l })
    } else {
        Ok(v)
    }
}

/// All prefixes `log delta(j, base)` for `j = base - 1, ..., j_hi` from one
/// accumulator pass. Entry `i` corresponds to `j = base - 1 + i`; zero
/// potentials are reported as `-inf`.
pub fn log_delta_prefixes<E: Environment + ?Sized>(env: &E, base: i64, j_hi: i64) -> Vec<f64> {
    let mut out = Vec::with_capacity((j_hi - base + 2).max(0) as usize);
    if j_hi < base - 1 {
        return out;
    }
    out.push(0.0);
    let mut acc = ProductAccumulator::new(env.max_left());
    for x in base..=j_hi {
        acc.push(env.matrix(x));
        out.push(acc.log_first());
    }
    out
}

/// `log sum_{j = j_lo}^{j_hi} delta(j, base)`.
pub fn log_delta_sum<E: Environment + ?Sized>(
    env: &E,
    j_lo: i64,
    j_hi: i64,
    base: i64,
) -> Result<f64, MatrixError> {
    if j_lo > j_hi || base > j_lo + 1 {
        return Err(MatrixError::InvalidRange { k: j_lo, l: base });
    }
    let mut sum = LogSumExp::new();
    if j_lo == base - 1 {
        sum.push(0.0);
    }
    let mut acc = ProductAccumulator::new(env.max_left());
    for x in base..=j_hi {
        acc.push(env.matrix(x));
        if x >= j_lo {
            let v = acc.log_first();
            if v == f64::NEG_INFINITY {
                return Err(MatrixError::UndefinedDelta { k: x, l: base });
            }
            sum.push(v);
        }
    }
    Ok(sum.value())
}

/// Debug dump of `(j, log delta(j, base))` rows.
pub fn write_delta_table<W: Write>(out: W, rows: &[(i64, f64)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["j", "log_delta"])?;
    for &(j, v) in rows {
        w.write_record([j.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{sample_environment, Atom, EnvironmentSpec};
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{ToPrimitive, Zero};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn l2_law() -> SiteLaw {
        SiteLaw::from_jumps(2, &[(-2, 0.1), (-1, 0.2), (0, 0.2), (1, 0.5)]).unwrap()
    }

    /// Left mass spread over every jump in -L..=-1 so ellipticity holds.
    fn spread_law(l: usize, left: f64, hold: f64) -> SiteLaw {
        let mut jumps: Vec<(i64, f64)> = (1..=l as i64).map(|z| (-z, left / l as f64)).collect();
        jumps.push((0, hold));
        jumps.push((1, 1.0 - left - hold));
        SiteLaw::from_jumps(l, &jumps).unwrap()
    }

    fn random_spec(l: usize) -> Arc<EnvironmentSpec> {
        let atoms = [(0.25, 0.25, 0.3), (0.5, 0.1, 0.3), (0.1, 0.1, 0.4)]
            .into_iter()
            .map(|(left, hold, weight)| Atom { law: spread_law(l, left, hold), weight })
            .collect();
        Arc::new(EnvironmentSpec::new(l, 0.01, atoms).unwrap())
    }

    fn dense_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut c = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    fn exact(x: f64) -> BigRational {
        BigRational::from_float(x).unwrap()
    }

    /// Exact (1,1) entry of A(k)...A(l) from the laws' binary probabilities.
    fn exact_delta(env: &impl Environment, k: i64, l: i64) -> BigRational {
        let dim = env.max_left();
        let mut v: Vec<BigRational> = (0..dim)
            .map(|i| if i == 0 { BigRational::from_integer(BigInt::from(1)) } else { BigRational::zero() })
            .collect();
        for x in l..=k {
            let law = env.law(x);
            let right = exact(law.prob(1));
            let mut head = BigRational::zero();
            let mut tail = BigRational::zero();
            let mut top = vec![BigRational::zero(); dim];
            for i in (1..=dim).rev() {
                tail += exact(law.prob(-(i as i64)));
                top[i - 1] = &tail / &right;
            }
            for i in 0..dim {
                head += &top[i] * &v[i];
            }
            v.rotate_right(1);
            v[0] = head;
        }
        v[0].clone()
    }

    #[test]
    fn build_matrix_examples() {
        let m = build_matrix(&l2_law(), 0.1).unwrap();
        assert!((m.top_row()[0] - 0.6).abs() < 1e-15);
        assert!((m.top_row()[1] - 0.2).abs() < 1e-15);

        let law = SiteLaw::from_jumps(1, &[(-1, 0.25), (0, 0.25), (1, 0.5)]).unwrap();
        assert_eq!(build_matrix(&law, 0.1).unwrap().top_row(), &[0.5]);

        let law = SiteLaw::from_jumps(1, &[(-1, 0.5), (0, 0.0), (1, 0.5)]).unwrap();
        assert_eq!(build_matrix(&law, 0.1).unwrap().top_row(), &[1.0]);

        let bad = SiteLaw::from_jumps(1, &[(-1, 0.5), (1, 0.0), (0, 0.5)]).unwrap();
        assert!(matches!(build_matrix(&bad, 0.1), Err(MatrixError::InvalidLaw(_))));
    }

    #[test]
    fn top_row_is_nonincreasing() {
        let law = SiteLaw::from_jumps(3, &[(-3, 0.1), (-2, 0.05), (-1, 0.2), (0, 0.15), (1, 0.5)]).unwrap();
        let m = CompanionMatrix::from_law(&law);
        assert!(m.top_row().windows(2).all(|w| w[0] >= w[1]));
        assert!(m.top_row()[2] > 0.1);
        let d = m.dense();
        assert_eq!(d[1], vec![1.0, 0.0, 0.0]);
        assert_eq!(d[2], vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_product_is_one() {
        let spec = random_spec(2);
        let env = sample_environment(spec, -10, 10, 1).unwrap();
        for l in -5..5 {
            assert_eq!(log_delta(&env, l - 1, l).unwrap(), 0.0);
        }
        assert!(matches!(log_delta(&env, 0, 3), Err(MatrixError::InvalidRange { .. })));
    }

    #[test]
    fn scalar_product() {
        let spec = Arc::new(
            EnvironmentSpec::point_mass(
                SiteLaw::from_jumps(1, &[(-1, 0.25), (0, 0.25), (1, 0.5)]).unwrap(),
                0.1,
            )
            .unwrap(),
        );
        let env = sample_environment(spec, 0, 10, 0).unwrap();
        let v = log_delta(&env, 3, 1).unwrap();
        assert!((v - 3.0 * 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn matches_dense_matrix_power() {
        let spec = Arc::new(EnvironmentSpec::point_mass(l2_law(), 0.1).unwrap());
        let env = sample_environment(spec.clone(), 0, 30, 0).unwrap();
        let a = spec.matrices()[0].dense();
        let mut power = a.clone();
        for k in 1..=20 {
            let got = log_delta(&env, k, 1).unwrap();
            let want = power[0][0].ln();
            assert!((got - want).abs() < 1e-12, "k={k}: {got} vs {want}");
            power = dense_mul(&power, &a);
        }
    }

    #[test]
    fn delta_sum_examples() {
        let env = sample_environment(random_spec(2), -20, 20, 5).unwrap();
        assert_eq!(log_delta_sum(&env, 4, 4, 5).unwrap(), 0.0);

        let flat = Arc::new(EnvironmentSpec::nearest_neighbor(&[(1.0, 1.0)]).unwrap());
        let env = sample_environment(flat, 0, 200, 0).unwrap();
        let m = 100;
        assert!((log_delta_sum(&env, 0, m, 1).unwrap() - ((m + 1) as f64).ln()).abs() < 1e-12);

        let two = Arc::new(EnvironmentSpec::nearest_neighbor(&[(2.0, 1.0)]).unwrap());
        let env = sample_environment(two, 0, 200, 0).unwrap();
        for m in [1i32, 5, 30, 150] {
            // sum_{j=1}^{M} 2^j = 2^{M+1} - 2
            let want = (2f64.powi(m + 1) - 2.0).ln();
            let got = log_delta_sum(&env, 1, m as i64, 1).unwrap();
            assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "M={m}");
        }
        assert!(log_delta_sum(&env, 5, 4, 1).is_err());
    }

    #[test]
    fn prefixes_agree_with_direct() {
        let env = sample_environment(random_spec(3), -40, 40, 17).unwrap();
        let base = -12;
        let pre = log_delta_prefixes(&env, base, 25);
        for (i, &v) in pre.iter().enumerate() {
            let j = base - 1 + i as i64;
            let direct = log_delta(&env, j, base).unwrap();
            assert!((v - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn undefined_delta_guard() {
        // a = (0) makes every product with at least one factor vanish
        let law = SiteLaw::from_jumps(1, &[(0, 0.0), (1, 1.0)]).unwrap();
        let spec = Arc::new(EnvironmentSpec::point_mass(law, 0.0).unwrap());
        let env = sample_environment(spec, 0, 5, 0).unwrap();
        assert!(matches!(log_delta(&env, 2, 1), Err(MatrixError::UndefinedDelta { .. })));
        assert!(matches!(log_delta_sum(&env, 0, 3, 1), Err(MatrixError::UndefinedDelta { .. })));
    }

    #[test]
    fn renormalized_matches_exact_rational() {
        for l in 1..=3 {
            let env = sample_environment(random_spec(l), -60, 60, 99 + l as u64).unwrap();
            for len in [1i64, 2, 7, 20, 50] {
                let lo = -25;
                let k = lo + len - 1;
                let exact_v = exact_delta(&env, k, lo).to_f64().unwrap();
                let got = log_delta(&env, k, lo).unwrap().exp();
                assert!(((got - exact_v) / exact_v).abs() < 1e-10, "L={l} len={len}");
            }
        }
    }

    #[test]
    fn long_products_stay_finite() {
        let spec = Arc::new(EnvironmentSpec::nearest_neighbor(&[(0.25, 0.5), (0.5, 0.5)]).unwrap());
        let env = sample_environment(spec, 0, 5000, 1).unwrap();
        let v = log_delta(&env, 5000, 0).unwrap();
        assert!(v.is_finite() && v < -3000.0);
    }

    #[test]
    fn delta_table_csv() {
        let mut buf = Vec::new();
        write_delta_table(&mut buf, &[(0, 0.0), (1, -0.5)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "j,log_delta\n0,0\n1,-0.5\n");
    }

    proptest! {
        #[test]
        fn nearest_neighbor_is_product_of_ratios(seed in any::<u64>(), l in -30i64..0, len in 1i64..60) {
            let spec = Arc::new(
                EnvironmentSpec::nearest_neighbor(&[(0.25, 0.4), (2.0, 0.4), (0.7, 0.2)]).unwrap(),
            );
            let env = sample_environment(spec, -100, 100, seed).unwrap();
            let k = l + len - 1;
            let direct: f64 = (l..=k)
                .map(|x| { let law = env.law(x); (law.prob(-1) / law.prob(1)).ln() })
                .sum();
            let got = log_delta(&env, k, l).unwrap();
            prop_assert!((got - direct).abs() < 1e-11);
            // additivity along the chain for L = 1
            let m = l + len / 2;
            let split = log_delta(&env, k, m + 1).unwrap() + log_delta(&env, m, l).unwrap();
            prop_assert!((got - split).abs() < 1e-11);
        }

        #[test]
        fn first_entry_is_supermultiplicative(seed in any::<u64>(), l in 2usize..4, len in 2i64..40, cut in 0i64..40) {
            let env = sample_environment(random_spec(l), -100, 100, seed).unwrap();
            let lo = -10;
            let k = lo + len - 1;
            let m = lo + (cut % len);
            prop_assume!(m < k);
            let whole = log_delta(&env, k, lo).unwrap();
            let parts = log_delta(&env, k, m + 1).unwrap() + log_delta(&env, m, lo).unwrap();
            prop_assert!(whole >= parts - 1e-12);
        }

        #[test]
        fn long_products_strictly_positive(seed in any::<u64>(), l in 1usize..4, extra in 0i64..10) {
            let env = sample_environment(random_spec(l), -50, 50, seed).unwrap();
            let n = l as i64 + extra;
            let mut prod: Vec<Vec<f64>> = (0..l)
                .map(|i| (0..l).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect();
            for x in 0..n {
                prod = dense_mul(&env.matrix(x).dense(), &prod);
            }
            prop_assert!(prod.iter().flatten().all(|&v| v > 0.0));
        }
    }
}
