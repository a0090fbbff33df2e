//! Shared verification helpers for the integration tests.
//!
//! Everything in here is deliberately independent of the library's own
//! evaluation path: the interpreter in [`fd`] re-implements every op in
//! f64 from the public op descriptions, so it can serve as an oracle for
//! both forward values and finite-difference gradient checks.

#![allow(dead_code)]

pub mod fd;
pub mod oracles;

use rand::Rng;
use vio_core::Tensor;

/// Random tensor with entries in `[lo, hi)`.
pub fn rand_tensor<R: Rng>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Tensor {
    Tensor::rand_uniform(shape, lo, hi, rng)
}

/// Random tensor whose entries stay at least `margin` away from zero.
pub fn rand_tensor_away_from_zero<R: Rng>(
    shape: &[usize],
    scale: f32,
    margin: f32,
    rng: &mut R,
) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(margin..scale)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}
