#![allow(dead_code)]

pub mod gradchecks;

use nanohtnet::tensor::{grad_check, Tape, Tensor, Var};
use nanohtnet::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step used for every gradient check.
pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `Σ y ⊙ W` for a fixed pseudo-random `W`, so every output element
/// contributes with a distinct weight.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = rand_tensor(tape.shape(y), seed ^ 0xABCD);
    let wv = tape.constant(w);
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

pub fn check<G>(theta: &Tensor<f64>, f: G) -> f64
where
    G: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check(theta, FD_STEP, f).unwrap()
}
