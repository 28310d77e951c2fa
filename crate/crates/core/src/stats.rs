//! Small statistics helpers: standard errors, medians, bootstrap, least squares.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeding::{domain, stream_rng};

/// A point estimate with a normal-approximation standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_error: 0.0 }
    }

    /// `value / std_error`, with `0/0 = 0` and `x/0 = +-inf`.
    pub fn z_score(&self) -> f64 {
        if self.std_error > 0.0 {
            self.value / self.std_error
        } else if self.value == 0.0 {
            0.0
        } else {
            self.value.signum() * f64::INFINITY
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and standard error of the mean (zero for a single sample).
pub fn mean_and_se(xs: &[f64]) -> Estimate {
    let m = mean(xs);
    if xs.len() < 2 {
        return Estimate { value: m, std_error: 0.0 };
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    Estimate { value: m, std_error: (var / xs.len() as f64).sqrt() }
}

/// Binomial proportion `k/n` with standard error `sqrt(p(1-p)/n)`.
pub fn binomial(successes: usize, trials: usize) -> Estimate {
    let p = successes as f64 / trials as f64;
    Estimate { value: p, std_error: (p * (1.0 - p) / trials as f64).sqrt() }
}

/// Sample median (average of the two middle values for even length).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - frac) + v[i + 1] * frac
    } else {
        v[i]
    }
}

/// Median with a bootstrap standard error and 95% percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapMedian {
    pub median: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn bootstrap_median(xs: &[f64], resamples: usize, seed: u64) -> BootstrapMedian {
    let med = median(xs);
    let mut rng = stream_rng(seed, domain::BOOTSTRAP, 0);
    let n = xs.len();
    let mut buf = vec![0.0; n];
    let mut meds: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = xs[rng.gen_range(0..n)];
            }
            buf.sort_by(f64::total_cmp);
            median_sorted(&buf)
        })
        .collect();
    let se = mean_and_se(&meds).std_error * (resamples as f64).sqrt();
    meds.sort_by(f64::total_cmp);
    BootstrapMedian {
        median: med,
        std_error: se,
        ci_low: quantile_sorted(&meds, 0.025),
        ci_high: quantile_sorted(&meds, 0.975),
    }
}

/// Ordinary least squares `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    pub points: usize,
}

impl LinearFit {
    /// Normal-approximation 95% band on the slope.
    pub fn slope_band(&self) -> (f64, f64) {
        (self.slope - 1.96 * self.slope_std_error, self.slope + 1.96 * self.slope_std_error)
    }
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_std_error = if n > 2 {
        let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Some(LinearFit { slope, intercept, slope_std_error, points: n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_moments() {
        let e = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.value, 2.5);
        assert!((e.std_error - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_se(&[7.0]).std_error, 0.0);
    }

    #[test]
    fn binomial_formula() {
        let e = binomial(30, 100);
        assert_eq!(e.value, 0.3);
        assert!((e.std_error - (0.3f64 * 0.7 / 100.0).sqrt()).abs() < 1e-15);
        assert_eq!(binomial(0, 10).std_error, 0.0);
        assert_eq!(binomial(10, 10).std_error, 0.0);
    }

    #[test]
    fn medians_and_quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile_sorted(&[0.0, 10.0], 0.25), 2.5);
    }

    #[test]
    fn z_scores() {
        assert_eq!(Estimate::exact(0.0).z_score(), 0.0);
        assert_eq!(Estimate::exact(-1.0).z_score(), f64::NEG_INFINITY);
        assert_eq!(Estimate { value: 1.0, std_error: 0.5 }.z_score(), 2.0);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let xs: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let a = bootstrap_median(&xs, 200, 5);
        let b = bootstrap_median(&xs, 200, 5);
        assert_eq!(a, b);
        assert!(a.ci_low <= a.median && a.median <= a.ci_high);
        assert!(a.std_error > 0.0);
    }

    #[test]
    fn exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 0.5 * x).collect();
        let fit = least_squares(&xs, &ys).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-14);
        assert!((fit.intercept - 1.0).abs() < 1e-14);
        assert!(fit.slope_std_error < 1e-12);
        assert!(least_squares(&[1.0], &[1.0]).is_none());
    }
}
