use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};

/// Largest observed `||T(x) - T(y)|| / ||x - y||` over `trials` Gaussian
/// pairs: an empirical lower bound on the Lipschitz constant of `step`.
pub fn contraction_estimate(step: impl Fn(&[f64]) -> Vec<f64>, dim: usize, trials: usize, seed: u64) -> Result<f64> {
    if trials < 100 {
        return Err(invalid("contraction_estimate", format!("need at least 100 trials, got {trials}")));
    }
    if dim == 0 {
        return Err(invalid("contraction_estimate", "dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng| (0..dim).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut best = 0.0f64;
    for _ in 0..trials {
        let x = sample(&mut rng);
        let y = loop {
            let y = sample(&mut rng);
            if dist(&x, &y) > 0.0 {
                break y;
            }
        };
        let ratio = dist(&step(&x), &step(&y)) / dist(&x, &y);
        best = best.max(ratio);
    }
    Ok(best)
}
