use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// How the `t_k` head outputs map to frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// One pose per output token, supervised at `t_k` uniformly spaced frames
    /// of the receptive field (the centre frame is always among them).
    #[default]
    Subsample,
    /// Outputs are DCT coefficients of the 3D trajectory; all `T` frames are
    /// reconstructed by the zero-padded inverse transform.
    IdctFull,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub joints: usize,
    /// Receptive field `T` in frames.
    pub receptive_field: usize,
    /// Retained low-frequency coefficients `t_k`.
    pub coeffs: usize,
    pub channels: usize,
    pub layers: usize,
    pub heads: usize,
    /// Width `c_l` after the FCN blocks; `None` means `2·channels`.
    pub fcn_width: Option<usize>,
    /// Hidden width of the regression head; `None` makes it a single
    /// linear layer, whose output is then additive in the two streams.
    pub head_hidden: Option<usize>,
    pub output_mode: OutputMode,
    /// Disables the intra-part constraint for ablations.
    pub use_ipc: bool,
    /// Multiplier on the head output; 1000 lets a metre-scale head emit
    /// millimetres.
    pub output_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::flagship()
    }
}

impl ModelConfig {
    /// `T = 243`, `t_k = 9`, `C = 240`, `L = 3`.
    pub fn flagship() -> Self {
        ModelConfig {
            joints: 17,
            receptive_field: 243,
            coeffs: 9,
            channels: 240,
            layers: 3,
            heads: 8,
            fcn_width: None,
            head_hidden: Some(64),
            output_mode: OutputMode::Subsample,
            use_ipc: true,
            output_scale: 1000.0,
        }
    }

    /// `T = 243`, `t_k = 27`, `C = 384`, `L = 3`.
    pub fn large() -> Self {
        ModelConfig {
            coeffs: 27,
            channels: 384,
            ..Self::flagship()
        }
    }

    /// Laptop-sized network used by the synthetic benchmarks.
    pub fn desk() -> Self {
        ModelConfig {
            receptive_field: 27,
            coeffs: 9,
            channels: 48,
            layers: 2,
            ..Self::flagship()
        }
    }

    pub fn c_l(&self) -> usize {
        self.fcn_width.unwrap_or(2 * self.channels)
    }

    /// Number of output frames per window.
    pub fn output_frames(&self) -> usize {
        match self.output_mode {
            OutputMode::Subsample => self.coeffs,
            OutputMode::IdctFull => self.receptive_field,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.joints == 0 {
            return fail("joints must be positive".into());
        }
        if self.coeffs == 0 || self.coeffs > self.receptive_field {
            return fail(format!(
                "coeffs {} must lie in 1..={}",
                self.coeffs, self.receptive_field
            ));
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.heads == 0 {
            return fail("heads must be positive".into());
        }
        // Thirds for the spatial split, halves for the temporal split, and
        // each part divisible by the head count: 48 when h = 8.
        let unit = 6 * self.heads;
        if self.channels == 0 || !self.channels.is_multiple_of(unit) {
            return fail(format!(
                "channels {} must be a positive multiple of {} for {} heads",
                self.channels, unit, self.heads
            ));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return fail(format!(
                "output_scale {} must be positive",
                self.output_scale
            ));
        }
        if self.head_hidden == Some(0) {
            return fail("head_hidden must be positive when set".into());
        }
        if self.c_l() == 0 {
            return fail("fcn_width must be positive".into());
        }
        Ok(())
    }

    /// Frame indices (within the receptive field) that the `t_k` outputs
    /// correspond to in subsample mode.
    pub fn supervision_frames(&self) -> Vec<usize> {
        match self.output_mode {
            OutputMode::IdctFull => (0..self.receptive_field).collect(),
            OutputMode::Subsample => subsample_indices(self.receptive_field, self.coeffs),
        }
    }

    pub fn centre_frame(&self) -> usize {
        self.receptive_field / 2
    }
}

/// `k` uniformly spaced indices over `0..t`, ascending, containing the centre
/// index `t / 2`.
pub fn subsample_indices(t: usize, k: usize) -> Vec<usize> {
    let centre = t / 2;
    if k <= 1 {
        return vec![centre];
    }
    let step = (t - 1) as f64 / (k - 1) as f64;
    let mut idx: Vec<usize> = (0..k).map(|i| (i as f64 * step).round() as usize).collect();
    if !idx.contains(&centre) {
        let nearest = (0..k)
            .min_by_key(|&i| idx[i].abs_diff(centre))
            .expect("k > 1");
        idx[nearest] = centre;
    }
    idx
}
