//! Seeded parameter initialization.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Real;
use crate::tensor::Tensor;

/// Entries drawn i.i.d. from `N(0, std²)`.
pub fn gaussian<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::c(z * std)
        })
        .collect();
    Tensor::raw(shape.to_vec(), data)
}

/// `std = gain / sqrt(fan_in)`.
pub fn scaled_std(gain: f64, fan_in: usize) -> f64 {
    gain / (fan_in.max(1) as f64).sqrt()
}
