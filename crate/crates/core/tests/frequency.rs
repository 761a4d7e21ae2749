mod common;

use nanohtnet::frequency::{dct_forward, dct_matrix, idct_padded, lowpass_truncate, DctBasis};
use nanohtnet::tensor::ops;
use nanohtnet::tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::PI;

const LENGTHS: [usize; 4] = [9, 27, 81, 243];

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn random_signal(t: usize, seed: u64) -> Vec<f64> {
    let mut r = common::rng(seed);
    (0..t).map(|_| r.gen_range(-1.0..1.0)).collect()
}

#[test]
fn basis_is_orthonormal_in_f64() {
    for t in LENGTHS {
        let b = dct_matrix(t).unwrap();
        let mut worst = 0.0f64;
        for i in 0..t {
            for j in 0..t {
                let dot: f64 = (0..t).map(|s| b.get(i, s) * b.get(j, s)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        assert!(worst < 1e-10, "T={t}: {worst:e}");
    }
}

#[test]
fn basis_is_orthonormal_in_f32() {
    for t in LENGTHS {
        let m = DctBasis::new(t).unwrap().lowpass_rows::<f32>(t).unwrap();
        let mt = ops::transpose(&m).unwrap();
        let p = ops::matmul(&m, &mt).unwrap();
        let id = Tensor::<f32>::eye(t);
        assert!(p.max_abs_diff(&id) < 1e-4, "T={t}");
    }
}

#[test]
fn four_sample_coefficients_match_direct_sum() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let got = dct_forward(&x, &dct_matrix(4).unwrap()).unwrap();
    for (f, g) in got.iter().enumerate() {
        let c = if f == 0 { 0.5f64.sqrt() } else { 1.0 } * (2.0 / 4.0f64).sqrt();
        let want: f64 = (0..4)
            .map(|t| x[t] * (PI * (2 * t + 1) as f64 * f as f64 / 8.0).cos())
            .sum::<f64>()
            * c;
        assert!((g - want).abs() < 1e-10, "f={f}");
    }
}

#[test]
fn parseval_and_round_trip() {
    for (i, t) in LENGTHS.into_iter().enumerate() {
        let b = dct_matrix(t).unwrap();
        let x = random_signal(t, i as u64);
        let c = dct_forward(&x, &b).unwrap();
        assert!((energy(&x) - energy(&c)).abs() < 1e-10 * energy(&x).max(1.0));
        let back = idct_padded(&c, &b).unwrap();
        for (a, r) in x.iter().zip(&back) {
            assert!((a - r).abs() < 1e-5);
        }
    }
}

#[test]
fn lowpass_error_equals_dropped_energy_and_shrinks_with_k() {
    for (i, t) in LENGTHS.into_iter().enumerate() {
        let b = dct_matrix(t).unwrap();
        let x = random_signal(t, 100 + i as u64);
        let c = dct_forward(&x, &b).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..=t {
            let rec = idct_padded(&lowpass_truncate(&c, k).unwrap(), &b).unwrap();
            let err: f64 = x.iter().zip(&rec).map(|(a, r)| (a - r).powi(2)).sum();
            let dropped = energy(&c[k..]);
            assert!((err - dropped).abs() < 1e-6, "T={t} k={k}");
            assert!(err <= prev + 1e-12, "T={t} k={k}");
            prev = err;
        }
    }
}

#[test]
fn pure_cosine_concentrates_in_its_bin() {
    let t = 27;
    let b = dct_matrix(t).unwrap();
    let x: Vec<f64> = (0..t)
        .map(|s| (PI * (2 * s + 1) as f64 * 2.0 / (2.0 * t as f64)).cos())
        .collect();
    let c = dct_forward(&x, &b).unwrap();
    let total = energy(&c);
    assert!(energy(&c[..3]) / total >= 0.999);
    assert!(energy(&c[..2]) / total < 0.01);
}

#[test]
fn cutoff_and_length_errors() {
    let b = dct_matrix(9).unwrap();
    assert!(dct_forward(&[0.0; 8], &b).is_err());
    assert!(lowpass_truncate(&[0.0; 9], 10).is_err());
    assert!(lowpass_truncate(&[0.0; 9], 0).is_err());
    assert!(idct_padded(&[0.0; 10], &b).is_err());
    assert!(b.lowpass_rows::<f64>(10).is_err());
}

proptest! {
    #[test]
    fn transform_is_linear(
        x in prop::collection::vec(-1.0f64..1.0, 27),
        y in prop::collection::vec(-1.0f64..1.0, 27),
        a in -3.0f64..3.0,
        s in -3.0f64..3.0,
    ) {
        let b = dct_matrix(27).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + s * q).collect();
        let lhs = dct_forward(&mix, &b).unwrap();
        let cx = dct_forward(&x, &b).unwrap();
        let cy = dct_forward(&y, &b).unwrap();
        for i in 0..27 {
            prop_assert!((lhs[i] - (a * cx[i] + s * cy[i])).abs() < 1e-6);
        }
    }
}
