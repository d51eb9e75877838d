//! Parameter initializers. All draw from a caller-supplied seeded generator.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::real::Real;
use crate::tensor::Tensor;

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn fan_in_uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)))
}

pub fn normal<T: Real>(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

/// Inverse of softplus: returns `b` with `ln(1 + e^b) == y` for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}
