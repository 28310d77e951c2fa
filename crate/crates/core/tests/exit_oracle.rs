//! Exit probabilities against exact rational arithmetic for `L = 1`.

use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwre::exit::{exit_prob_closed, exit_probs_linear, ExitSide};
use rwre::{sample_environment, Environment, EnvironmentSpec};

fn q(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

#[test]
fn closed_and_linear_match_rational_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_closed, mut worst_linear) = (0f64, 0f64);
    for _ in 0..25 {
        let m = rng.gen_range(2..=4);
        let rhos: Vec<(f64, f64)> = (0..m).map(|_| (rng.gen_range(-1.1f64..1.1).exp(), 1.0 / m as f64)).collect();
        let spec = Arc::new(EnvironmentSpec::nearest_neighbor(&rhos).unwrap());
        let a = rng.gen_range(-50..50i64);
        let b = a + rng.gen_range(2..=200i64);
        let env = sample_environment(spec, a - 1, b, rng.gen()).unwrap();
        // delta(j, a + 1) = rho_{a+1} ... rho_j
        let mut delta = vec![BigRational::one()];
        for x in a + 1..b {
            let law = env.law(x);
            let next = delta.last().unwrap() * q(law.prob(-1)) / q(law.prob(1));
            delta.push(next);
        }
        // suffix[i] = sum of delta[i..]
        let mut suffix = vec![BigRational::zero(); delta.len() + 1];
        for i in (0..delta.len()).rev() {
            suffix[i] = &suffix[i + 1] + &delta[i];
        }
        let total = suffix[0].clone();
        let minus = exit_probs_linear(&env, a, b, ExitSide::Minus).unwrap();
        let plus = exit_probs_linear(&env, a, b, ExitSide::Plus).unwrap();
        for k in a + 1..b {
            let tail = &suffix[(k - a) as usize];
            let exact_minus = tail / &total;
            let exact_plus = (&total - tail) / &total;
            let i = (k - a - 1) as usize;
            for (side, exact, lin) in
                [(ExitSide::Minus, &exact_minus, minus[i]), (ExitSide::Plus, &exact_plus, plus[i])]
            {
                let e = exact.to_f64().unwrap();
                worst_closed = worst_closed.max((exit_prob_closed(&env, k, a, b, side).unwrap() - e).abs());
                worst_linear = worst_linear.max((lin - e).abs());
            }
        }
    }
    assert!(worst_closed < 1e-13, "closed form error {worst_closed:e}");
    assert!(worst_linear < 1e-13, "linear solve error {worst_linear:e}");
}
