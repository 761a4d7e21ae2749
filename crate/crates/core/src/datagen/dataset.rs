//! Multi-view synthetic datasets and the `PSEQ1` container.
//!
//! ```text
//! "PSEQ1"  u32 sequences  u32 joints  u32 views          (little-endian)
//! per sequence:
//!   u16 tag length, UTF-8 action tag
//!   u32 frames T
//!   f32 [T×J×3] world-frame joints, mm
//!   per view: f64 [17] camera block, f32 [T×J×2] normalized keypoints
//! ```

use super::camera::{project, CameraView, CAMERA_BLOCK_LEN};
use super::motion::{generate_world_motion, rest_root_height, ActionPreset, SyntheticMotionConfig};
use crate::error::{Error, Result};
use crate::pose::PoseSequence;
use crate::skeleton::SkeletonTopology;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 5] = b"PSEQ1";
/// Largest tolerated gap between a stored keypoint and the reprojection of
/// the stored 3D joint, in normalized units.
pub const CONSISTENCY_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct ViewRecord {
    pub camera: CameraView,
    /// `[T×J×2]`
    pub keypoints: PoseSequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub action: String,
    /// `[T×J×3]` world frame, mm.
    pub world: PoseSequence,
    pub views: Vec<ViewRecord>,
}

impl SequenceRecord {
    pub fn frames(&self) -> usize {
        self.world.frames()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub joints: usize,
    pub views: usize,
    pub sequences: Vec<SequenceRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub sequences: usize,
    pub frames: usize,
    pub views: usize,
    /// Camera distance from the subject, mm.
    pub camera_radius: f64,
    pub camera_height: f64,
    /// Largest per-camera elevation offset, mm.
    pub elevation_jitter: f64,
    /// Presets assigned round-robin by sequence index.
    pub actions: Vec<ActionPreset>,
    /// Template; `seed`, `frames` and `action` are overridden per sequence.
    pub motion: SyntheticMotionConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            sequences: 12,
            frames: 300,
            views: 4,
            camera_radius: 4500.0,
            camera_height: 1300.0,
            elevation_jitter: 150.0,
            actions: ActionPreset::ALL.to_vec(),
            motion: SyntheticMotionConfig::default(),
        }
    }
}

/// Per-sequence seed; decorrelates neighbouring ids.
pub fn sequence_seed(seed: u64, id: u64) -> u64 {
    let mut z = seed ^ id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequences == 0 || self.frames == 0 || self.views == 0 {
            return Err(Error::Config(
                "sequences, frames and views must be positive".into(),
            ));
        }
        if self.actions.is_empty() {
            return Err(Error::Config(
                "at least one action preset is required".into(),
            ));
        }
        if !(self.camera_radius > 0.0) {
            return Err(Error::Config("camera_radius must be positive".into()));
        }
        Ok(())
    }

    pub fn cameras(&self) -> Vec<CameraView> {
        let mut rng = ChaCha8Rng::seed_from_u64(sequence_seed(self.seed, u64::MAX));
        let jitter: Vec<f64> = (0..self.views)
            .map(|_| rng.gen_range(-1.0..=1.0) * self.elevation_jitter)
            .collect();
        let target = [0.0, 0.0, rest_root_height(&self.motion)];
        CameraView::ring(
            self.views,
            self.camera_radius,
            self.camera_height,
            target,
            &jitter,
        )
    }
}

/// Seeded multi-view dataset. A sequence that lands behind a camera is
/// regenerated with the next derived seed.
pub fn generate_dataset(cfg: &DatasetConfig, topo: &SkeletonTopology) -> Result<Dataset> {
    cfg.validate()?;
    let cameras = cfg.cameras();
    let mut sequences = Vec::with_capacity(cfg.sequences);
    for id in 0..cfg.sequences {
        let action = cfg.actions[id % cfg.actions.len()];
        let mut attempt = 0u64;
        let record = loop {
            let motion = SyntheticMotionConfig {
                seed: sequence_seed(cfg.seed, id as u64 + attempt * cfg.sequences as u64),
                frames: cfg.frames,
                action,
                ..cfg.motion.clone()
            };
            match build_sequence(&motion, topo, &cameras) {
                Err(Error::Projection(_)) if attempt < 16 => attempt += 1,
                other => break other?,
            }
        };
        sequences.push(record);
    }
    Ok(Dataset {
        joints: topo.joints(),
        views: cfg.views,
        sequences,
    })
}

fn build_sequence(
    motion: &SyntheticMotionConfig,
    topo: &SkeletonTopology,
    cameras: &[CameraView],
) -> Result<SequenceRecord> {
    let world = generate_world_motion(motion, topo)?.poses;
    let views = cameras
        .iter()
        .map(|cam| {
            Ok(ViewRecord {
                camera: cam.clone(),
                keypoints: project(&world, cam)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceRecord {
        action: motion.action.tag().to_string(),
        world,
        views,
    })
}

impl Dataset {
    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(SequenceRecord::frames).sum()
    }

    /// Splits off the last `n` sequences.
    pub fn split_tail(mut self, n: usize) -> (Dataset, Dataset) {
        let keep = self.sequences.len().saturating_sub(n);
        let tail = self.sequences.split_off(keep);
        let rest = Dataset {
            joints: self.joints,
            views: self.views,
            sequences: tail,
        };
        (self, rest)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(self.sequences.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.joints as u32).to_le_bytes());
        out.extend_from_slice(&(self.views as u32).to_le_bytes());
        for s in &self.sequences {
            if s.views.len() != self.views || s.world.joints() != self.joints || s.world.dims() != 3
            {
                return Err(crate::error::contract_err!(
                    "sequence does not match the dataset header"
                ));
            }
            let tag = s.action.as_bytes();
            let tag_len = u16::try_from(tag.len())
                .map_err(|_| crate::error::contract_err!("action tag too long"))?;
            out.extend_from_slice(&tag_len.to_le_bytes());
            out.extend_from_slice(tag);
            out.extend_from_slice(&(s.frames() as u32).to_le_bytes());
            for v in s.world.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for view in &s.views {
                if view.keypoints.frames() != s.frames() || view.keypoints.dims() != 2 {
                    return Err(crate::error::contract_err!(
                        "view shape does not match its sequence"
                    ));
                }
                for v in view.camera.to_block() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for v in view.keypoints.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    /// Parses and validates a `PSEQ1` image. `expected_joints` guards
    /// against a skeleton mismatch.
    pub fn from_bytes(bytes: &[u8], expected_joints: usize) -> Result<Dataset> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5)? != DATASET_MAGIC {
            return Err(Error::CorruptDataset("bad magic".into()));
        }
        let count = r.u32()? as usize;
        let joints = r.u32()? as usize;
        let views = r.u32()? as usize;
        if joints != expected_joints {
            return Err(Error::CorruptDataset(format!(
                "header declares {joints} joints, skeleton has {expected_joints}"
            )));
        }
        if views == 0 {
            return Err(Error::CorruptDataset("zero views".into()));
        }
        let mut sequences = Vec::with_capacity(count.min(1 << 16));
        for si in 0..count {
            let tag_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let action = std::str::from_utf8(r.take(tag_len)?)
                .map_err(|_| {
                    Error::CorruptDataset(format!("sequence {si}: action tag is not UTF-8"))
                })?
                .to_string();
            let frames = r.u32()? as usize;
            if frames == 0 {
                return Err(Error::CorruptDataset(format!(
                    "sequence {si} has no frames"
                )));
            }
            let world = PoseSequence::new(frames, joints, 3, r.f32s(frames * joints * 3)?)
                .map_err(|e| Error::CorruptDataset(e.to_string()))?;
            let mut vs = Vec::with_capacity(views);
            for _ in 0..views {
                let mut block = [0.0; CAMERA_BLOCK_LEN];
                for b in &mut block {
                    *b = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                }
                let camera = CameraView::from_block(&block);
                let keypoints = PoseSequence::new(frames, joints, 2, r.f32s(frames * joints * 2)?)
                    .map_err(|e| Error::CorruptDataset(e.to_string()))?;
                vs.push(ViewRecord { camera, keypoints });
            }
            let seq = SequenceRecord {
                action,
                world,
                views: vs,
            };
            check_consistency(&seq)
                .map_err(|m| Error::CorruptDataset(format!("sequence {si}: {m}")))?;
            sequences.push(seq);
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptDataset(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Dataset {
            joints,
            views,
            sequences,
        })
    }
}

/// Every 100th frame (at least one) of every view must reproject within
/// [`CONSISTENCY_TOL`].
fn check_consistency(seq: &SequenceRecord) -> std::result::Result<(), String> {
    if !seq.world.all_finite() {
        return Err("non-finite 3D joints".into());
    }
    for (vi, view) in seq.views.iter().enumerate() {
        let cam = &view.camera;
        if !cam.to_block().iter().all(|v| v.is_finite()) || cam.orthonormality_error() > 1e-6 {
            return Err(format!("view {vi}: invalid camera"));
        }
        for t in (0..seq.frames()).step_by(100) {
            for j in 0..seq.world.joints() {
                let p = seq.world.joint(t, j);
                let xy = cam
                    .project_point([p[0] as f64, p[1] as f64, p[2] as f64])
                    .map_err(|e| format!("view {vi} frame {t}: {e}"))?;
                let kp = view.keypoints.joint(t, j);
                let err = (xy[0] - kp[0] as f64)
                    .abs()
                    .max((xy[1] - kp[1] as f64).abs());
                if !(err <= CONSISTENCY_TOL) {
                    return Err(format!(
                        "view {vi} frame {t} joint {j}: keypoint is {err:.2e} from the reprojection"
                    ));
                }
            }
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::CorruptDataset(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::CorruptDataset("size overflow".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::write(path, dataset.to_bytes()?)?;
    Ok(())
}

pub fn read_dataset(path: &Path, topo: &SkeletonTopology) -> Result<Dataset> {
    Dataset::from_bytes(&std::fs::read(path)?, topo.joints())
}
