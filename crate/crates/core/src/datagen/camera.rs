use crate::error::{Error, Result};
use crate::pose::PoseSequence;
use crate::skeleton::SkeletonTopology;
use serde::{Deserialize, Serialize};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

/// Pinhole camera. World points map to the camera frame as `R·X + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub rotation: Mat3,
    /// Millimetres.
    pub translation: Vec3,
    /// Pixels.
    pub focal: f64,
    pub principal: [f64; 2],
    pub width: f64,
    pub height: f64,
}

/// Scalars in the on-disk camera block.
pub const CAMERA_BLOCK_LEN: usize = 17;

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl CameraView {
    /// Camera at `eye` looking at `target` with world `+z` as up; image `y`
    /// points down.
    pub fn look_at(eye: Vec3, target: Vec3, focal: f64, width: f64, height: f64) -> Self {
        let z = normalize(sub(target, eye));
        let x = normalize(cross(z, [0.0, 0.0, 1.0]));
        let y = cross(z, x);
        let rotation = [x, y, z];
        let translation = [
            -(x[0] * eye[0] + x[1] * eye[1] + x[2] * eye[2]),
            -(y[0] * eye[0] + y[1] * eye[1] + y[2] * eye[2]),
            -(z[0] * eye[0] + z[1] * eye[1] + z[2] * eye[2]),
        ];
        CameraView {
            rotation,
            translation,
            focal,
            principal: [width / 2.0, height / 2.0],
            width,
            height,
        }
    }

    /// `views` cameras evenly spaced in azimuth on a circle of `radius` mm
    /// around `target`, at `height` mm, each with an elevation offset taken
    /// from `jitter` (mm, cycled).
    pub fn ring(views: usize, radius: f64, height: f64, target: Vec3, jitter: &[f64]) -> Vec<Self> {
        (0..views)
            .map(|i| {
                let az =
                    std::f64::consts::TAU * i as f64 / views as f64 + std::f64::consts::FRAC_PI_4;
                let dz = if jitter.is_empty() {
                    0.0
                } else {
                    jitter[i % jitter.len()]
                };
                let eye = [radius * az.cos(), radius * az.sin(), height + dz];
                Self::look_at(eye, target, 1150.0, 1000.0, 1000.0)
            })
            .collect()
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }

    pub fn to_pixels(&self, p: Vec3) -> Result<[f64; 2]> {
        let c = self.to_camera(p);
        if c[2] <= 0.0 {
            return Err(Error::Projection(format!("point at depth {:.3} mm", c[2])));
        }
        Ok([
            self.focal * c[0] / c[2] + self.principal[0],
            self.focal * c[1] / c[2] + self.principal[1],
        ])
    }

    /// Pixels to network coordinates: `x ∈ [−1, 1]`, `y` scaled by the same
    /// factor so the aspect ratio is kept.
    pub fn normalize_pixels(&self, uv: [f64; 2]) -> [f64; 2] {
        [
            2.0 * uv[0] / self.width - 1.0,
            2.0 * uv[1] / self.width - self.height / self.width,
        ]
    }

    pub fn project_point(&self, p: Vec3) -> Result<[f64; 2]> {
        Ok(self.normalize_pixels(self.to_pixels(p)?))
    }

    /// `RᵀR − I`, largest absolute entry.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn to_block(&self) -> [f64; CAMERA_BLOCK_LEN] {
        let mut b = [0.0; CAMERA_BLOCK_LEN];
        for i in 0..3 {
            b[3 * i..3 * i + 3].copy_from_slice(&self.rotation[i]);
        }
        b[9..12].copy_from_slice(&self.translation);
        b[12] = self.focal;
        b[13..15].copy_from_slice(&self.principal);
        b[15] = self.width;
        b[16] = self.height;
        b
    }

    pub fn from_block(b: &[f64; CAMERA_BLOCK_LEN]) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            row.copy_from_slice(&b[3 * i..3 * i + 3]);
        }
        CameraView {
            rotation,
            translation: [b[9], b[10], b[11]],
            focal: b[12],
            principal: [b[13], b[14]],
            width: b[15],
            height: b[16],
        }
    }
}

/// Projects a `[T×J×3]` world-frame sequence to normalized `[T×J×2]`.
pub fn project(pose3d: &PoseSequence, cam: &CameraView) -> Result<PoseSequence> {
    if pose3d.dims() != 3 {
        return Err(crate::error::shape_err!(
            "expected 3D poses, got {} dims",
            pose3d.dims()
        ));
    }
    let mut out = PoseSequence::zeros(pose3d.frames(), pose3d.joints(), 2);
    for t in 0..pose3d.frames() {
        for j in 0..pose3d.joints() {
            let p = pose3d.joint(t, j);
            let xy = cam.project_point([p[0] as f64, p[1] as f64, p[2] as f64])?;
            let o = out.joint_mut(t, j);
            o[0] = xy[0] as f32;
            o[1] = xy[1] as f32;
        }
    }
    Ok(out)
}

/// World-frame `[T×J×3]` to the camera frame, relative to `root`.
pub fn camera_root_relative(pose3d: &PoseSequence, cam: &CameraView, root: usize) -> PoseSequence {
    let mut out = PoseSequence::zeros(pose3d.frames(), pose3d.joints(), 3);
    for t in 0..pose3d.frames() {
        let r = pose3d.joint(t, root);
        let rc = cam.to_camera([r[0] as f64, r[1] as f64, r[2] as f64]);
        for j in 0..pose3d.joints() {
            let p = pose3d.joint(t, j);
            let c = cam.to_camera([p[0] as f64, p[1] as f64, p[2] as f64]);
            let o = out.joint_mut(t, j);
            for d in 0..3 {
                o[d] = (c[d] - rc[d]) as f32;
            }
        }
    }
    out
}

/// Mirrors normalized 2D poses: negates `x` and swaps left/right joints.
pub fn horizontal_flip(pose2d: &PoseSequence, topo: &SkeletonTopology) -> PoseSequence {
    let perm = topo.flip_permutation();
    let mut out = PoseSequence::zeros(pose2d.frames(), pose2d.joints(), pose2d.dims());
    for t in 0..pose2d.frames() {
        for (j, &src) in perm.iter().enumerate() {
            let p = pose2d.joint(t, src);
            let o = out.joint_mut(t, j);
            o.copy_from_slice(p);
            o[0] = -p[0];
        }
    }
    out
}

/// Mirror of a camera-frame 3D pose matching [`horizontal_flip`] of its
/// projection.
pub fn flip_3d(pose3d: &PoseSequence, topo: &SkeletonTopology) -> PoseSequence {
    horizontal_flip(pose3d, topo)
}
