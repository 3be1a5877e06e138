use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::Tensor;

/// Zero-mean normal samples with standard deviation `std`, redrawn until
/// they fall within two standard deviations.
pub fn trunc_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and length agree")
}

/// He-style initialization for a `fan_in x fan_out` weight.
pub(crate) fn he_weight<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    trunc_normal(rng, &[fan_in, fan_out], (2.0 / fan_in as f64).sqrt())
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, len: usize, p: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
}
