use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

/// `[frames][joints][dims]` coordinates, flat and frame-major.
///
/// 2D sequences hold normalized image coordinates; 3D sequences hold
/// millimetres (root-relative unless stated otherwise).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    frames: usize,
    joints: usize,
    dims: usize,
    data: Vec<f32>,
}

impl PoseSequence {
    pub fn new(frames: usize, joints: usize, dims: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * joints * dims {
            return Err(shape_err!(
                "{}x{}x{} pose sequence needs {} values, got {}",
                frames,
                joints,
                dims,
                frames * joints * dims,
                data.len()
            ));
        }
        Ok(PoseSequence {
            frames,
            joints,
            dims,
            data,
        })
    }

    pub fn zeros(frames: usize, joints: usize, dims: usize) -> Self {
        PoseSequence {
            frames,
            joints,
            dims,
            data: vec![0.0; frames * joints * dims],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn joint(&self, t: usize, j: usize) -> &[f32] {
        let o = (t * self.joints + j) * self.dims;
        &self.data[o..o + self.dims]
    }

    pub fn joint_mut(&mut self, t: usize, j: usize) -> &mut [f32] {
        let o = (t * self.joints + j) * self.dims;
        &mut self.data[o..o + self.dims]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let w = self.joints * self.dims;
        &self.data[t * w..(t + 1) * w]
    }

    /// Frames `start..start+len`.
    pub fn window(&self, start: usize, len: usize) -> Result<PoseSequence> {
        if start + len > self.frames || len == 0 {
            return Err(shape_err!(
                "window {}..{} of {} frames",
                start,
                start + len,
                self.frames
            ));
        }
        let w = self.joints * self.dims;
        PoseSequence::new(
            len,
            self.joints,
            self.dims,
            self.data[start * w..(start + len) * w].to_vec(),
        )
    }

    /// Selected frames, in the given order.
    pub fn select_frames(&self, idx: &[usize]) -> Result<PoseSequence> {
        let mut data = Vec::with_capacity(idx.len() * self.joints * self.dims);
        for &t in idx {
            if t >= self.frames {
                return Err(shape_err!("frame {} of {}", t, self.frames));
            }
            data.extend_from_slice(self.frame(t));
        }
        PoseSequence::new(idx.len(), self.joints, self.dims, data)
    }

    /// Subtracts joint `root` from every joint in each frame.
    pub fn root_relative(&self, root: usize) -> PoseSequence {
        let mut out = self.clone();
        for t in 0..self.frames {
            let r = self.joint(t, root).to_vec();
            for j in 0..self.joints {
                for (v, rv) in out.joint_mut(t, j).iter_mut().zip(&r) {
                    *v -= rv;
                }
            }
        }
        out
    }

    /// `[frames × (joints·dims)]` tensor.
    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        Tensor::new(
            &[self.frames, self.joints * self.dims],
            self.data.iter().map(|&v| F::of(v as f64)).collect(),
        )
        .expect("non-empty pose sequence")
    }

    pub fn from_tensor<F: Real>(
        t: &Tensor<F>,
        frames: usize,
        joints: usize,
        dims: usize,
    ) -> Result<Self> {
        PoseSequence::new(
            frames,
            joints,
            dims,
            t.data().iter().map(|v| v.as_f64() as f32).collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
