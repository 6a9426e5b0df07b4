//! Central finite-difference oracle, independent of the analytic backward
//! passes it is used to check.

#![allow(dead_code)]

use cass_core::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, scale: f64) -> Tensor<f64> {
    Tensor::from_vec(shape, random_vec(rng, shape.numel(), scale)).unwrap()
}

/// Values bounded away from zero, for checks through ReLU kinks.
pub fn random_tensor_off_zero(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    let data = (0..shape.numel())
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// `∂f/∂x_i ≈ (f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + STEP;
            let up = f(&probe);
            probe[i] = orig - STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Gradients below this norm are compared absolutely: a parameter feeding a
/// batch norm has an exactly zero true gradient, and the difference quotient
/// then returns only rounding noise.
pub const NORM_FLOOR: f64 = 1e-5;

/// `‖a − b‖ / max(‖a‖, ‖b‖, NORM_FLOOR)`.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(NORM_FLOOR)
}

/// Σ out ⊙ weights — a scalar probe whose gradient w.r.t. `out` is `weights`.
pub fn dot(out: &Tensor<f64>, weights: &[f64]) -> f64 {
    out.data().iter().zip(weights).map(|(a, b)| a * b).sum()
}
