//! Forward-kinematic motion synthesis.
//!
//! Every edge of the skeleton carries three joint angles, each a sum of
//! seeded sinusoids. Edge rotations compose down the kinematic tree, so bone
//! lengths are exactly preserved. Amplitudes are capped so a joint's summed
//! angle never exceeds [`MAX_JOINT_ANGLE`]; no hard clamp is applied, which
//! keeps the trajectories band-limited.

use super::camera::{Mat3, Vec3};
use crate::error::{Error, Result};
use crate::pose::PoseSequence;
use crate::skeleton::SkeletonTopology;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const FRAME_RATE: f64 = 50.0;
/// Radians; upper bound on `Σ|amplitude|` per angle.
pub const MAX_JOINT_ANGLE: f64 = 0.9;

/// Motion style; scales amplitudes per body part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActionPreset {
    /// Large leg swings, moderate arms.
    Walk,
    /// Large arm motion, near-still legs.
    Wave,
    #[default]
    Mixed,
}

impl ActionPreset {
    pub const ALL: [ActionPreset; 3] =
        [ActionPreset::Walk, ActionPreset::Wave, ActionPreset::Mixed];

    pub fn tag(self) -> &'static str {
        match self {
            ActionPreset::Walk => "walk",
            ActionPreset::Wave => "wave",
            ActionPreset::Mixed => "mixed",
        }
    }

    /// `(legs, arms, torso)` amplitude multipliers.
    fn gains(self) -> (f64, f64, f64) {
        match self {
            ActionPreset::Walk => (1.0, 0.5, 0.2),
            ActionPreset::Wave => (0.15, 1.0, 0.3),
            ActionPreset::Mixed => (0.7, 0.7, 0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticMotionConfig {
    pub seed: u64,
    pub frames: usize,
    /// Millimetres, one per skeleton edge in edge order.
    pub bone_lengths: Vec<f64>,
    /// Sinusoids per joint angle.
    pub components: usize,
    /// Hz at [`FRAME_RATE`].
    pub freq_band: [f64; 2],
    /// Radians, per component.
    pub amp_band: [f64; 2],
    pub action: ActionPreset,
    /// Amplitude of the root's horizontal drift, mm.
    pub root_drift: f64,
}

impl Default for SyntheticMotionConfig {
    fn default() -> Self {
        SyntheticMotionConfig {
            seed: 0,
            frames: 300,
            bone_lengths: default_bone_lengths(),
            components: 2,
            freq_band: [0.2, 1.5],
            amp_band: [0.05, 0.3],
            action: ActionPreset::Mixed,
            root_drift: 300.0,
        }
    }
}

/// Bone lengths for the 17-joint skeleton, mm.
pub fn default_bone_lengths() -> Vec<f64> {
    vec![
        130.0, 450.0, 440.0, // right leg
        130.0, 450.0, 440.0, // left leg
        230.0, 250.0, 110.0, 115.0, // spine to head
        150.0, 280.0, 250.0, // left arm
        150.0, 280.0, 250.0, // right arm
    ]
}

/// Rest direction of each edge of the 17-joint skeleton (subject's left is
/// `+x`, forward `+y`, up `+z`): legs down, spine up, arms out.
fn rest_directions(topo: &SkeletonTopology) -> Vec<Vec3> {
    let side = |j: usize| -> f64 {
        if topo
            .limbs
            .iter()
            .take(1)
            .chain(topo.limbs.iter().skip(3))
            .any(|l| l.contains(&j))
        {
            -1.0
        } else {
            1.0
        }
    };
    topo.edges
        .iter()
        .map(|&(p, c)| match topo.ldof[c] {
            0 => [0.0, 0.0, 1.0],
            1 if p == topo.root() => [side(c), 0.0, 0.0],
            _ if is_leg(topo, c) => [0.0, 0.0, -1.0],
            _ => [side(c), 0.0, 0.0],
        })
        .collect()
}

fn is_leg(topo: &SkeletonTopology, j: usize) -> bool {
    topo.limbs.iter().take(2).any(|l| l.contains(&j))
}

fn rot_xyz(a: [f64; 3]) -> Mat3 {
    let (sx, cx) = a[0].sin_cos();
    let (sy, cy) = a[1].sin_cos();
    let (sz, cz) = a[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

#[derive(Clone, Debug)]
struct Sinusoid {
    amp: f64,
    freq: f64,
    phase: f64,
}

fn sample_angle(rng: &mut ChaCha8Rng, cfg: &SyntheticMotionConfig, gain: f64) -> Vec<Sinusoid> {
    let mut parts: Vec<Sinusoid> = (0..cfg.components)
        .map(|_| Sinusoid {
            amp: gain * rng.gen_range(cfg.amp_band[0]..=cfg.amp_band[1]),
            freq: rng.gen_range(cfg.freq_band[0]..=cfg.freq_band[1]),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    let total: f64 = parts.iter().map(|s| s.amp.abs()).sum();
    if total > MAX_JOINT_ANGLE {
        for s in &mut parts {
            s.amp *= MAX_JOINT_ANGLE / total;
        }
    }
    parts
}

fn eval(parts: &[Sinusoid], t: f64) -> f64 {
    parts
        .iter()
        .map(|s| s.amp * (std::f64::consts::TAU * s.freq * t + s.phase).sin())
        .sum()
}

impl SyntheticMotionConfig {
    pub fn validate(&self, topo: &SkeletonTopology) -> Result<()> {
        let nyquist = FRAME_RATE / 2.0;
        let fail = |m: String| Err(Error::Config(m));
        if self.frames == 0 {
            return fail("frames must be positive".into());
        }
        if self.bone_lengths.len() != topo.edges.len() {
            return fail(format!(
                "{} bone lengths for {} edges",
                self.bone_lengths.len(),
                topo.edges.len()
            ));
        }
        if self
            .bone_lengths
            .iter()
            .any(|&l| !(l > 0.0 && l.is_finite()))
        {
            return fail("bone lengths must be positive".into());
        }
        let [f0, f1] = self.freq_band;
        if !(0.0 <= f0 && f0 <= f1 && f1 <= nyquist) {
            return fail(format!(
                "frequency band [{f0}, {f1}] must lie in [0, {nyquist}]"
            ));
        }
        let [a0, a1] = self.amp_band;
        if !(0.0 <= a0 && a0 <= a1 && a1 <= MAX_JOINT_ANGLE) {
            return fail(format!(
                "amplitude band [{a0}, {a1}] must lie in [0, {MAX_JOINT_ANGLE}]"
            ));
        }
        if !(self.root_drift >= 0.0 && self.root_drift.is_finite()) {
            return fail("root_drift must be non-negative".into());
        }
        Ok(())
    }
}

/// Motion in the world frame, root included.
#[derive(Clone, Debug)]
pub struct WorldMotion {
    pub poses: PoseSequence,
}

/// Root-relative `[T×J×3]` poses in mm.
pub fn generate_motion(
    cfg: &SyntheticMotionConfig,
    topo: &SkeletonTopology,
) -> Result<PoseSequence> {
    let root = topo.root();
    let frames = world_positions(cfg, topo)?;
    let mut poses = PoseSequence::zeros(cfg.frames, topo.joints(), 3);
    for (f, pos) in frames.iter().enumerate() {
        for (j, p) in pos.iter().enumerate() {
            let o = poses.joint_mut(f, j);
            for d in 0..3 {
                o[d] = (p[d] - pos[root][d]) as f32;
            }
        }
    }
    Ok(poses)
}

/// Pelvis height of the rest pose above the floor, mm.
pub fn rest_root_height(cfg: &SyntheticMotionConfig) -> f64 {
    cfg.bone_lengths[1] + cfg.bone_lengths[2] + 50.0
}

/// World-frame motion: FK pose plus a smooth root trajectory around
/// `(0, 0, rest_root_height)` and a slow yaw.
pub fn generate_world_motion(
    cfg: &SyntheticMotionConfig,
    topo: &SkeletonTopology,
) -> Result<WorldMotion> {
    let frames = world_positions(cfg, topo)?;
    let mut poses = PoseSequence::zeros(cfg.frames, topo.joints(), 3);
    for (f, pos) in frames.iter().enumerate() {
        for (j, p) in pos.iter().enumerate() {
            let o = poses.joint_mut(f, j);
            for d in 0..3 {
                o[d] = p[d] as f32;
            }
        }
    }
    Ok(WorldMotion { poses })
}

/// Double-precision joint positions per frame.
pub fn world_positions(
    cfg: &SyntheticMotionConfig,
    topo: &SkeletonTopology,
) -> Result<Vec<Vec<Vec3>>> {
    cfg.validate(topo)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (legs, arms, torso) = cfg.action.gains();
    let rest = rest_directions(topo);
    let angles: Vec<[Vec<Sinusoid>; 3]> = topo
        .edges
        .iter()
        .map(|&(_, c)| {
            let gain = if is_leg(topo, c) {
                legs
            } else if topo.ldof[c] > 0 {
                arms
            } else {
                torso
            };
            [
                sample_angle(&mut rng, cfg, gain),
                sample_angle(&mut rng, cfg, gain * 0.5),
                sample_angle(&mut rng, cfg, gain * 0.5),
            ]
        })
        .collect();
    let mut drift = || {
        vec![Sinusoid {
            amp: cfg.root_drift,
            freq: cfg.freq_band[0],
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        }]
    };
    let (root_x, root_y) = (drift(), drift());
    let yaw = sample_angle(&mut rng, cfg, 1.0);
    let height = rest_root_height(cfg);

    let j = topo.joints();
    let mut global = vec![[[0.0; 3]; 3]; j];
    let mut out = Vec::with_capacity(cfg.frames);
    for f in 0..cfg.frames {
        let t = f as f64 / FRAME_RATE;
        let mut pos = vec![[0.0; 3]; j];
        global[topo.root()] = rot_xyz([0.0, 0.0, eval(&yaw, t)]);
        pos[topo.root()] = [eval(&root_x, t), eval(&root_y, t), height];
        for (e, &(p, c)) in topo.edges.iter().enumerate() {
            let a = &angles[e];
            let local = rot_xyz([eval(&a[0], t), eval(&a[1], t), eval(&a[2], t)]);
            global[c] = mat_mul(&global[p], &local);
            let d = mat_vec(&global[c], rest[e]);
            let len = cfg.bone_lengths[e];
            pos[c] = [
                pos[p][0] + len * d[0],
                pos[p][1] + len * d[1],
                pos[p][2] + len * d[2],
            ];
        }
        out.push(pos);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo() -> SkeletonTopology {
        SkeletonTopology::h36m17()
    }

    #[test]
    fn rest_pose_shape() {
        let t = topo();
        let dirs = rest_directions(&t);
        let e = |p: usize, c: usize| t.edges.iter().position(|&x| x == (p, c)).unwrap();
        assert_eq!(dirs[e(0, 1)], [-1.0, 0.0, 0.0]);
        assert_eq!(dirs[e(0, 4)], [1.0, 0.0, 0.0]);
        assert_eq!(dirs[e(1, 2)], [0.0, 0.0, -1.0]);
        assert_eq!(dirs[e(0, 7)], [0.0, 0.0, 1.0]);
        assert_eq!(dirs[e(8, 11)], [1.0, 0.0, 0.0]);
        assert_eq!(dirs[e(15, 16)], [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_amplitude_is_static() {
        let cfg = SyntheticMotionConfig {
            amp_band: [0.0, 0.0],
            frames: 20,
            ..Default::default()
        };
        let m = generate_motion(&cfg, &topo()).unwrap();
        for f in 1..20 {
            assert_eq!(m.frame(f), m.frame(0));
        }
        assert_eq!(m.joint(0, 3), &[-130.0, 0.0, -890.0]);
    }

    #[test]
    fn bone_lengths_are_rigid() {
        let t = topo();
        let cfg = SyntheticMotionConfig {
            seed: 9,
            frames: 120,
            action: ActionPreset::Walk,
            ..Default::default()
        };
        let m = world_positions(&cfg, &t).unwrap();
        for (f, pos) in m.iter().enumerate() {
            for (e, &(p, c)) in t.edges.iter().enumerate() {
                let len = (0..3)
                    .map(|d| (pos[p][d] - pos[c][d]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    (len - cfg.bone_lengths[e]).abs() < 1e-6,
                    "edge {e} frame {f}: {len}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_bands() {
        let t = topo();
        let bad = SyntheticMotionConfig {
            freq_band: [0.0, 30.0],
            ..Default::default()
        };
        assert!(bad.validate(&t).is_err());
        let bad = SyntheticMotionConfig {
            bone_lengths: vec![1.0; 3],
            ..Default::default()
        };
        assert!(bad.validate(&t).is_err());
    }
}
