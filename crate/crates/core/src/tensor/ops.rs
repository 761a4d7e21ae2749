//! Non-recording kernels. The tape calls into these for forward values and
//! for the matrix products inside backward rules.

use super::{Real, Tensor};
use crate::error::{contract_err, shape_err, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `c[m×n] = a[m×k] · b[k×n]` on raw row-major slices.
pub fn matmul_raw<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// `aᵀ[k×m] · b[m×n]` where `a` is stored `m×k`.
pub fn matmul_tn_raw<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// `a[m×n] · bᵀ[n×k]` where `b` is stored `k×n`.
pub fn matmul_nt_raw<F: Real>(a: &[F], b: &[F], m: usize, n: usize, k: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = F::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * k + j] = acc;
        }
    }
    c
}

pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(shape_err!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Tensor::new(&[m, n], matmul_raw(a.data(), b.data(), m, k, n))
}

pub fn transpose<F: Real>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, n) = a.dims2()?;
    let src = a.data();
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Tensor::new(&[n, m], out)
}

/// Row-wise softmax over the last axis with max subtraction.
pub fn softmax_lastdim<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let (rows, cols) = x.rows_cols();
    let mut out = x.data().to_vec();
    for r in 0..rows {
        let row = &mut out[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor {
        shape: x.shape().to_vec(),
        data: out,
    }
}

pub fn log_softmax_lastdim<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let (rows, cols) = x.rows_cols();
    let mut out = x.data().to_vec();
    for r in 0..rows {
        let row = &mut out[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor {
        shape: x.shape().to_vec(),
        data: out,
    }
}

/// Per-row statistics saved by [`layer_norm_stats`] for backward.
pub struct LayerNormStats<F> {
    pub normalized: Vec<F>,
    pub rstd: Vec<F>,
}

pub fn layer_norm_stats<F: Real>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
) -> Result<(Tensor<F>, LayerNormStats<F>)> {
    let (rows, cols) = x.rows_cols();
    if gamma.numel() != cols || beta.numel() != cols {
        return Err(shape_err!(
            "layer norm affine width {}/{} does not match last extent {}",
            gamma.numel(),
            beta.numel(),
            cols
        ));
    }
    let eps = F::of(LAYER_NORM_EPS);
    let inv_n = F::one() / F::of(cols as f64);
    let mut normalized = vec![F::zero(); rows * cols];
    let mut out = vec![F::zero(); rows * cols];
    let mut rstd = Vec::with_capacity(rows);
    let (g, b) = (gamma.data(), beta.data());
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<F>() * inv_n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_n;
        let rs = F::one() / (var + eps).sqrt();
        rstd.push(rs);
        for c in 0..cols {
            let xh = (row[c] - mean) * rs;
            normalized[r * cols + c] = xh;
            out[r * cols + c] = xh * g[c] + b[c];
        }
    }
    Ok((
        Tensor {
            shape: x.shape().to_vec(),
            data: out,
        },
        LayerNormStats { normalized, rstd },
    ))
}

pub fn layer_norm<F: Real>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
) -> Result<Tensor<F>> {
    layer_norm_stats(x, gamma, beta).map(|(y, _)| y)
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Exact GELU, `x·Φ(x)`.
#[inline]
pub fn gelu_scalar<F: Real>(x: F) -> F {
    F::of(0.5) * x * (F::one() + (x * F::of(FRAC_1_SQRT_2)).erf())
}

/// `d/dx [x·Φ(x)] = Φ(x) + x·φ(x)`.
#[inline]
pub fn gelu_grad_scalar<F: Real>(x: F) -> F {
    let cdf = F::of(0.5) * (F::one() + (x * F::of(FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * F::of(0.5)).exp() * F::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

pub fn gelu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(gelu_scalar)
}

/// Output length of a non-padded strided window.
pub fn conv_out_len(n: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(contract_err!("kernel and stride must be positive"));
    }
    if n < kernel {
        return Err(shape_err!(
            "conv input length {} shorter than kernel {}",
            n,
            kernel
        ));
    }
    Ok((n - kernel) / stride + 1)
}

/// Strided 1D convolution without padding.
///
/// `x` is `[n × c_in]` (rows are positions), `w` is `[kernel × c_in × c_out]`.
pub fn conv1d_strided<F: Real>(x: &Tensor<F>, w: &Tensor<F>, stride: usize) -> Result<Tensor<F>> {
    let (n, c_in) = x.dims2()?;
    let (kernel, wc_in, c_out) = match w.shape() {
        [k, ci, co] => (*k, *ci, *co),
        s => return Err(shape_err!("conv weight must be rank 3, got {:?}", s)),
    };
    if wc_in != c_in {
        return Err(shape_err!(
            "conv weight c_in {} != input channels {}",
            wc_in,
            c_in
        ));
    }
    let out_len = conv_out_len(n, kernel, stride)?;
    let mut out = vec![F::zero(); out_len * c_out];
    for o in 0..out_len {
        let orow = &mut out[o * c_out..(o + 1) * c_out];
        for k in 0..kernel {
            let xrow = &x.data()[(o * stride + k) * c_in..(o * stride + k + 1) * c_in];
            let wk = &w.data()[k * c_in * c_out..(k + 1) * c_in * c_out];
            for (ci, &xv) in xrow.iter().enumerate() {
                if xv == F::zero() {
                    continue;
                }
                let wrow = &wk[ci * c_out..(ci + 1) * c_out];
                for (ov, &wv) in orow.iter_mut().zip(wrow) {
                    *ov += xv * wv;
                }
            }
        }
    }
    Tensor::new(&[out_len, c_out], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random(&[3, 5], &mut rng);
        assert_eq!(matmul(&Tensor::eye(3), &b).unwrap(), b);
        let z = matmul(&Tensor::zeros(&[3, 3]), &b).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..4 {
                    acc += a.get2(i, p) * b.get2(p, j);
                }
                assert_relative_eq!(c.get2(i, j), acc, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matmul(&a, &a).is_err());
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[4, 3], &mut rng);
        let b = random(&[4, 5], &mut rng);
        let at = transpose(&a).unwrap();
        let expect = matmul(&at, &b).unwrap();
        let got = matmul_tn_raw(a.data(), b.data(), 4, 3, 5);
        assert!(expect
            .data()
            .iter()
            .zip(&got)
            .all(|(x, y)| (x - y).abs() < 1e-12));
        let c = random(&[2, 3], &mut rng);
        let expect = matmul(&c, &transpose(&a).unwrap()).unwrap();
        let got = matmul_nt_raw(c.data(), a.data(), 2, 3, 4);
        assert!(expect
            .data()
            .iter()
            .zip(&got)
            .all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_lastdim(&Tensor::<f64>::zeros(&[1, 3]));
        for &v in u.data() {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let x = Tensor::<f64>::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let s = softmax_lastdim(&x);
        let denom: f64 = (1..=3).map(|v| (v as f64).exp()).sum();
        for (i, &v) in s.data().iter().enumerate() {
            assert_relative_eq!(v, ((i + 1) as f64).exp() / denom, epsilon = 1e-7);
        }
        let shifted = softmax_lastdim(&x.map(|v| v + 123.0));
        assert!(shifted.max_abs_diff(&s) < 1e-12);
    }

    #[test]
    fn layer_norm_examples() {
        let g = Tensor::<f64>::ones(&[4]);
        let b = Tensor::<f64>::zeros(&[4]);
        let y = layer_norm(&Tensor::full(&[2, 4], 3.5), &g, &b).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[5, 16], &mut rng).map(|v| 3.0 * v + 1.0);
        let y = layer_norm(&x, &g.map(|_| 1.0).reshape(&[4]).unwrap(), &b).err();
        assert!(y.is_some(), "affine width mismatch must error");
        let g = Tensor::ones(&[16]);
        let b = Tensor::zeros(&[16]);
        let y = layer_norm(&x, &g, &b).unwrap();
        for r in 0..5 {
            // two-pass oracle
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            for c in 0..16 {
                let expect = (row[c] - mean) / (var + 1e-5).sqrt();
                assert_relative_eq!(y.get2(r, c), expect, epsilon = 1e-6);
            }
            let yr = y.row(r);
            let ym = yr.iter().sum::<f64>() / 16.0;
            let yv = yr.iter().map(|v| (v - ym).powi(2)).sum::<f64>() / 16.0;
            assert!(ym.abs() < 1e-6);
            assert!((yv - 1.0).abs() < 1e-4);
        }
    }

    /// Maclaurin series for erf, summed until terms vanish.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x * x / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert!((gelu_scalar(10.0f64) - 10.0).abs() < 1e-6);
        let expect = 0.5 * (1.0 + erf_series(1.0 / 2f64.sqrt()));
        assert_relative_eq!(gelu_scalar(1.0f64), expect, epsilon = 1e-14);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..2000 {
            let x = -0.75 + i as f64 * 0.005;
            let y = gelu_scalar(x);
            assert!(
                y >= prev - 1e-15,
                "gelu must be nondecreasing above its minimum"
            );
            prev = y;
        }
    }

    #[test]
    fn conv_examples() {
        let x = Tensor::<f64>::from_f64(&[8, 1], &[1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let w = Tensor::full(&[2, 1, 1], 0.5);
        let y = conv1d_strided(&x, &w, 2).unwrap();
        assert_eq!(y.shape(), &[4, 1]);
        assert_eq!(y.data(), &[1.5, 3.5, 5.5, 7.5]);
        assert!(conv1d_strided(&Tensor::<f64>::zeros(&[1, 1]), &w, 1).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[9, 3], &mut rng);
        let w = random(&[3, 3, 2], &mut rng);
        let y = conv1d_strided(&x, &w, 2).unwrap();
        assert_eq!(y.shape(), &[4, 2]);
        for o in 0..4 {
            for co in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    for ci in 0..3 {
                        acc += x.get2(o * 2 + k, ci) * w.data()[(k * 3 + ci) * 2 + co];
                    }
                }
                assert_relative_eq!(y.get2(o, co), acc, epsilon = 1e-6);
            }
        }
    }
}
