//! Orthonormal DCT-II, low-pass truncation and zero-padded inverse.
//!
//! Row `f` of the basis is `c(f)·cos(π(2t+1)f / 2T)` with `c(0) = √(1/T)` and
//! `c(f>0) = √(2/T)`. The time index inside the cosine is the per-sample `t`;
//! writing the frame count `T` there instead would not give an orthogonal
//! transform.

use crate::error::{contract_err, shape_err, Result};
use crate::tensor::{Real, Tensor};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub struct DctBasis {
    t: usize,
    matrix: Vec<f64>,
}

impl DctBasis {
    pub fn new(t: usize) -> Result<Self> {
        if t == 0 {
            return Err(contract_err!("DCT length must be at least 1"));
        }
        let tf = t as f64;
        let mut matrix = vec![0.0; t * t];
        for f in 0..t {
            let c = if f == 0 {
                (1.0 / tf).sqrt()
            } else {
                (2.0 / tf).sqrt()
            };
            for s in 0..t {
                matrix[f * t + s] = c * (PI * (2 * s + 1) as f64 * f as f64 / (2.0 * tf)).cos();
            }
        }
        Ok(DctBasis { t, matrix })
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn get(&self, f: usize, t: usize) -> f64 {
        self.matrix[f * self.t + t]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }

    /// First `k` basis rows as a `[k × T]` tensor.
    pub fn lowpass_rows<F: Real>(&self, k: usize) -> Result<Tensor<F>> {
        check_cutoff(k, self.t)?;
        Tensor::from_f64(&[k, self.t], &self.matrix[..k * self.t])
    }

    /// Transpose of the first `k` rows, `[T × k]`; maps coefficients back to time.
    pub fn inverse_cols<F: Real>(&self, k: usize) -> Result<Tensor<F>> {
        check_cutoff(k, self.t)?;
        let mut data = vec![0.0; self.t * k];
        for f in 0..k {
            for s in 0..self.t {
                data[s * k + f] = self.get(f, s);
            }
        }
        Tensor::from_f64(&[self.t, k], &data)
    }
}

fn check_cutoff(k: usize, t: usize) -> Result<()> {
    if k == 0 || k > t {
        return Err(contract_err!("cutoff {} outside 1..={}", k, t));
    }
    Ok(())
}

pub fn dct_matrix(t: usize) -> Result<DctBasis> {
    DctBasis::new(t)
}

/// Coefficients of one channel.
pub fn dct_forward(x: &[f64], basis: &DctBasis) -> Result<Vec<f64>> {
    if x.len() != basis.t {
        return Err(shape_err!("signal length {} vs basis {}", x.len(), basis.t));
    }
    Ok((0..basis.t)
        .map(|f| {
            basis.matrix[f * basis.t..(f + 1) * basis.t]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum()
        })
        .collect())
}

/// Keeps coefficients `f < k`.
pub fn lowpass_truncate(coeffs: &[f64], k: usize) -> Result<Vec<f64>> {
    check_cutoff(k, coeffs.len())?;
    Ok(coeffs[..k].to_vec())
}

/// Zero-pads `coeffs` to the basis length and applies the inverse transform.
pub fn idct_padded(coeffs: &[f64], basis: &DctBasis) -> Result<Vec<f64>> {
    if coeffs.len() > basis.t {
        return Err(shape_err!(
            "{} coefficients for a length-{} basis",
            coeffs.len(),
            basis.t
        ));
    }
    let mut out = vec![0.0; basis.t];
    for (f, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for (s, o) in out.iter_mut().enumerate() {
            *o += c * basis.get(f, s);
        }
    }
    Ok(out)
}
