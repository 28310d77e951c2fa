//! Log-domain accumulation.

/// Streaming `log(sum(exp(x_i)))` with a running maximum.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    // sum of exp(x_i - max)
    scaled: f64,
    count: usize,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        Self { max: f64::NEG_INFINITY, scaled: 0.0, count: 0 }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.scaled += (x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    /// Log of the accumulated sum; `-inf` when empty or all terms are zero.
    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }

    /// Largest term seen.
    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn huge_spread() {
        let mut acc = LogSumExp::new();
        acc.push(-1000.0);
        acc.push(1000.0);
        acc.push(f64::NEG_INFINITY);
        assert!((acc.value() - 1000.0).abs() < 1e-12);
        assert_eq!(acc.count(), 3);
        assert_eq!(LogSumExp::new().value(), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn streaming_matches_batch(xs in prop::collection::vec(-50.0f64..50.0, 1..40)) {
            let mut acc = LogSumExp::new();
            for &x in &xs { acc.push(x); }
            let direct = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
            prop_assert!((acc.value() - direct).abs() < 1e-12 * direct.abs().max(1.0));
            prop_assert!((log_sum_exp(&xs) - direct).abs() < 1e-12 * direct.abs().max(1.0));
        }
    }
}
