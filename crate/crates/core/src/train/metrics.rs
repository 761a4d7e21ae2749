//! Pose error metrics and the differentiable training loss.

use crate::error::{shape_err, Result};
use crate::pose::PoseSequence;
use crate::tensor::{Real, Tape, Var};
use nalgebra::{Matrix3, Vector3};

fn check_pair(pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
    if pred.frames() != gt.frames()
        || pred.joints() != gt.joints()
        || pred.dims() != 3
        || gt.dims() != 3
    {
        return Err(shape_err!(
            "prediction {}x{}x{} vs ground truth {}x{}x{}",
            pred.frames(),
            pred.joints(),
            pred.dims(),
            gt.frames(),
            gt.joints(),
            gt.dims()
        ));
    }
    Ok(())
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Mean per-joint Euclidean distance over every frame and joint.
pub fn mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(mpjpe_per_frame(pred, gt)?.iter().sum::<f64>() / pred.frames() as f64)
}

pub fn mpjpe_per_frame(pred: &PoseSequence, gt: &PoseSequence) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    Ok((0..pred.frames())
        .map(|t| {
            (0..pred.joints())
                .map(|j| dist(pred.joint(t, j), gt.joint(t, j)))
                .sum::<f64>()
                / pred.joints() as f64
        })
        .collect())
}

fn to_points(seq: &PoseSequence, t: usize) -> Vec<Vector3<f64>> {
    (0..seq.joints())
        .map(|j| {
            let p = seq.joint(t, j);
            Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
        })
        .collect()
}

fn centroid(p: &[Vector3<f64>]) -> Vector3<f64> {
    p.iter().sum::<Vector3<f64>>() / p.len() as f64
}

/// Similarity transform (scale, rotation, translation) of `pred` that best
/// matches `gt` in the least-squares sense, reflections excluded. `None`
/// when either point set has rank below 2.
pub fn procrustes_align(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Option<Vec<Vector3<f64>>> {
    if pred.len() != gt.len() || pred.len() < 3 {
        return None;
    }
    let (mp, mg) = (centroid(pred), centroid(gt));
    let x: Vec<_> = pred.iter().map(|p| p - mp).collect();
    let y: Vec<_> = gt.iter().map(|p| p - mg).collect();
    let cov = |a: &[Vector3<f64>], b: &[Vector3<f64>]| -> Matrix3<f64> {
        a.iter().zip(b).map(|(u, v)| u * v.transpose()).sum()
    };
    let rank_ok = |m: &Matrix3<f64>| {
        let s = m.singular_values();
        let tol = 1e-9 * s.max().max(1e-300);
        s.iter().filter(|&&v| v > tol).count() >= 2
    };
    if !rank_ok(&cov(&x, &x)) || !rank_ok(&cov(&y, &y)) {
        return None;
    }
    let h = cov(&x, &y);
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut sigma = svd.singular_values;
    let mut v = v_t.transpose();
    if (v * u.transpose()).determinant() < 0.0 {
        let k = (0..3)
            .min_by(|&a, &b| sigma[a].total_cmp(&sigma[b]))
            .expect("three singular values");
        v.column_mut(k).neg_mut();
        sigma[k] = -sigma[k];
    }
    let r = v * u.transpose();
    let norm_x: f64 = x.iter().map(|p| p.norm_squared()).sum();
    let s = sigma.sum() / norm_x;
    Some(x.iter().map(|p| s * (r * p) + mg).collect())
}

/// Result of a Procrustes-aligned evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignedError {
    /// Mean over the frames that could be aligned.
    pub mean: f64,
    pub frames_used: usize,
    /// Frames skipped as degenerate.
    pub skipped: usize,
}

/// MPJPE after per-frame similarity alignment of `pred` onto `gt`.
pub fn p_mpjpe_detailed(pred: &PoseSequence, gt: &PoseSequence) -> Result<AlignedError> {
    check_pair(pred, gt)?;
    let mut total = 0.0;
    let mut used = 0;
    for t in 0..pred.frames() {
        let g = to_points(gt, t);
        match procrustes_align(&to_points(pred, t), &g) {
            Some(aligned) => {
                total += aligned
                    .iter()
                    .zip(&g)
                    .map(|(a, b)| (a - b).norm())
                    .sum::<f64>()
                    / g.len() as f64;
                used += 1;
            }
            None => continue,
        }
    }
    Ok(AlignedError {
        mean: if used > 0 { total / used as f64 } else { 0.0 },
        frames_used: used,
        skipped: pred.frames() - used,
    })
}

pub fn p_mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    Ok(p_mpjpe_detailed(pred, gt)?.mean)
}

/// Differentiable mean per-joint distance between `pred` `[n×3]` and a
/// constant target of the same shape.
pub fn mpjpe_loss<F: Real>(tape: &mut Tape<F>, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target)
        || tape.shape(pred).len() != 2
        || tape.shape(pred)[1] != 3
    {
        return Err(shape_err!(
            "loss expects matching [n×3] operands, got {:?} and {:?}",
            tape.shape(pred),
            tape.shape(target)
        ));
    }
    let diff = tape.sub(pred, target)?;
    let norms = tape.row_norm(diff);
    Ok(tape.mean(norms))
}
