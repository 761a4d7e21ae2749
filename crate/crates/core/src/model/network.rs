//! Dual-stream lifting network.
//!
//! ```text
//!            x [T×J×2]
//!      ┌────────┴─────────┐
//!  X_s [J×2T]        DCT + low-pass → [t_k×2J]
//!  embed + E_pos     embed + E_pos
//!  SpatialMixer×L    TemporalMixer×L
//!  S_FCN → F_s[J×c_l] T_FCN → F_t[t_k×c_l]
//!      └────────┬─────────┘
//!   head(i, j) = Linear(concat(F_t[i], F_s[j])) → [t_k×J×3]
//! ```

use super::config::{ModelConfig, OutputMode};
use crate::error::{shape_err, Error, Result};
use crate::frequency::DctBasis;
use crate::mixers::{Ctx, LayerNorm, Linear, SpatialMixer, TemporalMixer};
use crate::param::{Bound, Init, ParamId, ParamStore};
use crate::pose::PoseSequence;
use crate::skeleton::{NormalizedAdjacency, SkeletonTopology};
use crate::tensor::{Real, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// `LN → Linear(C → c_l) → GELU`.
#[derive(Clone, Debug)]
pub struct Fcn {
    pub norm: LayerNorm,
    pub linear: Linear,
}

impl Fcn {
    fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        c: usize,
        c_l: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Fcn {
            norm: LayerNorm::new(store, &format!("{name}.norm"), c, rng),
            linear: Linear::new(store, &format!("{name}.linear"), c, c_l, true, rng),
        }
    }

    fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let h = self.norm.forward(cx, x)?;
        let h = self.linear.forward(cx, h)?;
        Ok(cx.tape.gelu(h))
    }
}

/// Everything up to (and including) the two FCN blocks.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: ModelConfig,
    pub topology: SkeletonTopology,
    pub spatial_embed: Linear,
    pub spatial_pos: ParamId,
    pub temporal_embed: Linear,
    pub temporal_pos: ParamId,
    pub spatial: Vec<SpatialMixer>,
    pub temporal: Vec<TemporalMixer>,
    pub s_fcn: Fcn,
    pub t_fcn: Fcn,
    joint_adj: NormalizedAdjacency,
    token_adj: NormalizedAdjacency,
    dct: DctBasis,
}

/// Backbone outputs for one window.
#[derive(Clone, Copy, Debug)]
pub struct StreamFeatures {
    /// `[t_k × c_l]`
    pub temporal: Var,
    /// `[J × c_l]`
    pub spatial: Var,
}

impl Backbone {
    pub fn new<F: Real>(
        config: &ModelConfig,
        topology: &SkeletonTopology,
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if topology.joints() != config.joints {
            return Err(Error::Config(format!(
                "topology has {} joints, config expects {}",
                topology.joints(),
                config.joints
            )));
        }
        let (j, t, k, c) = (
            config.joints,
            config.receptive_field,
            config.coeffs,
            config.channels,
        );
        let spatial_embed = Linear::new(store, "spatial_embed", 2 * t, c, true, rng);
        let spatial_pos = store.add("spatial_pos", &[j, c], Init::Zeros, rng);
        let temporal_embed = Linear::new(store, "temporal_embed", 2 * j, c, true, rng);
        let temporal_pos = store.add("temporal_pos", &[k, c], Init::Zeros, rng);
        let mut spatial = Vec::with_capacity(config.layers);
        let mut temporal = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            spatial.push(SpatialMixer::new(
                store,
                &format!("spatial.{l}"),
                c,
                config.heads,
                topology,
                config.use_ipc,
                rng,
            )?);
            temporal.push(TemporalMixer::new(
                store,
                &format!("temporal.{l}"),
                c,
                config.heads,
                rng,
            )?);
        }
        let s_fcn = Fcn::new(store, "s_fcn", c, config.c_l(), rng);
        let t_fcn = Fcn::new(store, "t_fcn", c, config.c_l(), rng);
        Ok(Backbone {
            config: config.clone(),
            topology: topology.clone(),
            spatial_embed,
            spatial_pos,
            temporal_embed,
            temporal_pos,
            spatial,
            temporal,
            s_fcn,
            t_fcn,
            joint_adj: topology.adjacency()?,
            token_adj: NormalizedAdjacency::temporal_path(k)?,
            dct: DctBasis::new(t)?,
        })
    }

    pub fn dct(&self) -> &DctBasis {
        &self.dct
    }

    pub fn joint_adjacency(&self) -> &NormalizedAdjacency {
        &self.joint_adj
    }

    pub fn token_adjacency(&self) -> &NormalizedAdjacency {
        &self.token_adj
    }

    /// Validates a 2D window and returns it as `[T × 2J]`.
    pub fn input_tensor<F: Real>(&self, x: &PoseSequence) -> Result<Tensor<F>> {
        let cfg = &self.config;
        if x.frames() != cfg.receptive_field || x.joints() != cfg.joints || x.dims() != 2 {
            return Err(shape_err!(
                "input {}x{}x{} does not match receptive field {}x{}x2",
                x.frames(),
                x.joints(),
                x.dims(),
                cfg.receptive_field,
                cfg.joints
            ));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("2D input window".into()));
        }
        Ok(x.to_tensor())
    }

    /// `[J × 2T]`: each joint's coordinates over all frames, frame-major.
    pub fn spatial_tokens<F: Real>(&self, x: &Tensor<F>) -> Tensor<F> {
        let (t, j) = (self.config.receptive_field, self.config.joints);
        let src = x.data();
        let mut data = Vec::with_capacity(j * 2 * t);
        for joint in 0..j {
            for frame in 0..t {
                let o = frame * 2 * j + 2 * joint;
                data.push(src[o]);
                data.push(src[o + 1]);
            }
        }
        Tensor::new(&[j, 2 * t], data).expect("token layout")
    }

    /// Spatial stream up to the embedding, `[J × C]`.
    pub fn embed_spatial<F: Real>(&self, cx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Var> {
        let tokens = cx.tape.constant(self.spatial_tokens(x));
        let h = self.spatial_embed.forward(cx, tokens)?;
        cx.tape.add(h, cx.p(self.spatial_pos))
    }

    /// Low-pass DCT coefficients of `x`, `[t_k × 2J]`.
    pub fn temporal_coefficients<F: Real>(
        &self,
        cx: &mut Ctx<'_, F>,
        x: &Tensor<F>,
    ) -> Result<Var> {
        let basis = cx.tape.constant(self.dct.lowpass_rows(self.config.coeffs)?);
        let xv = cx.tape.constant(x.clone());
        cx.tape.matmul(basis, xv)
    }

    /// Temporal stream up to the embedding, `[t_k × C]`, from coefficients.
    pub fn embed_temporal<F: Real>(&self, cx: &mut Ctx<'_, F>, coeffs: Var) -> Result<Var> {
        let h = self.temporal_embed.forward(cx, coeffs)?;
        cx.tape.add(h, cx.p(self.temporal_pos))
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<StreamFeatures> {
        let joint_adj = cx.tape.constant(self.joint_adj.to_tensor());
        let token_adj = cx.tape.constant(self.token_adj.to_tensor());

        let coeffs = self.temporal_coefficients(cx, x)?;
        let mut ht = self.embed_temporal(cx, coeffs)?;
        for (l, mixer) in self.temporal.iter().enumerate() {
            ht = mixer.forward(cx, ht, token_adj, &format!("temporal.{l}"))?;
        }
        let temporal = self.t_fcn.forward(cx, ht)?;

        let mut hs = self.embed_spatial(cx, x)?;
        for (l, mixer) in self.spatial.iter().enumerate() {
            hs = mixer.forward(cx, hs, joint_adj, &format!("spatial.{l}"))?;
        }
        let spatial = self.s_fcn.forward(cx, hs)?;
        Ok(StreamFeatures { temporal, spatial })
    }
}

/// `concat(F_t[i], F_s[j])` regressed to 3 coordinates for every
/// (token, joint) pair, either by one linear layer or by
/// `Linear → GELU → Linear` when a hidden width is configured.
#[derive(Clone, Debug)]
pub struct RegressionHead {
    /// Acts on the concatenated pair; `2·c_l → hidden` (or `→ 3`).
    pub pair: Linear,
    pub out: Option<Linear>,
    pub c_l: usize,
}

impl RegressionHead {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        c_l: usize,
        hidden: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        match hidden {
            None => RegressionHead {
                pair: Linear::new(store, "head", 2 * c_l, 3, true, rng),
                out: None,
                c_l,
            },
            Some(h) => RegressionHead {
                pair: Linear::new(store, "head.fc1", 2 * c_l, h, true, rng),
                out: Some(Linear::new(store, "head.fc2", h, 3, true, rng)),
                c_l,
            },
        }
    }

    /// `[(t_k·J) × 3]`, row `i·J + j`.
    ///
    /// Splitting the pair weight into its temporal and spatial row blocks
    /// gives the same result as materialising every concatenated pair.
    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, feats: StreamFeatures) -> Result<Var> {
        let w = cx.p(self.pair.weight);
        let wt = cx.tape.slice_rows(w, 0, self.c_l)?;
        let ws = cx.tape.slice_rows(w, self.c_l, self.c_l)?;
        let a = cx.tape.matmul(feats.temporal, wt)?;
        let b = cx.tape.matmul(feats.spatial, ws)?;
        let pairs = cx.tape.outer_add(a, b)?;
        let bias = cx.p(self.pair.bias.expect("head has a bias"));
        let y = cx.tape.add_row_bias(pairs, bias)?;
        match &self.out {
            None => Ok(y),
            Some(out) => {
                let h = cx.tape.gelu(y);
                out.forward(cx, h)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct NanoHtNet {
    pub backbone: Backbone,
    pub head: RegressionHead,
}

impl NanoHtNet {
    pub fn new<F: Real>(
        config: &ModelConfig,
        topology: &SkeletonTopology,
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let backbone = Backbone::new(config, topology, store, rng)?;
        let head = RegressionHead::new(store, config.c_l(), config.head_hidden, rng);
        Ok(NanoHtNet { backbone, head })
    }

    /// Builds the model together with a freshly initialised store.
    pub fn init<F: Real>(
        config: &ModelConfig,
        topology: &SkeletonTopology,
        seed: u64,
    ) -> Result<(Self, ParamStore<F>)> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let model = Self::new(config, topology, &mut store, &mut rng)?;
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.backbone.config
    }

    /// Prediction node of shape `[(frames·J) × 3]` where `frames` is
    /// [`ModelConfig::output_frames`].
    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Var> {
        let feats = self.backbone.forward(cx, x)?;
        let y = self.head.forward(cx, feats)?;
        let y = cx.tape.scale(y, F::of(self.config().output_scale));
        match self.config().output_mode {
            OutputMode::Subsample => Ok(y),
            OutputMode::IdctFull => {
                let cfg = self.config();
                let (k, j, t) = (cfg.coeffs, cfg.joints, cfg.receptive_field);
                let coeffs = cx.tape.reshape(y, &[k, 3 * j])?;
                let inv = cx.tape.constant(self.backbone.dct.inverse_cols(k)?);
                let full = cx.tape.matmul(inv, coeffs)?;
                cx.tape.reshape(full, &[t * j, 3])
            }
        }
    }

    /// Gradient-free prediction for one window.
    pub fn predict<F: Real>(
        &self,
        store: &ParamStore<F>,
        x: &PoseSequence,
    ) -> Result<PoseSequence> {
        let input = self.backbone.input_tensor::<F>(x)?;
        let mut tape = Tape::no_grad();
        let bound = store.bind_frozen(&mut tape);
        let mut cx = Ctx::new(&mut tape, &bound);
        let y = self.forward(&mut cx, &input)?;
        let frames = self.config().output_frames();
        PoseSequence::from_tensor(tape.value(y), frames, self.config().joints, 3)
    }

    /// Prediction plus every attention map, for inspection.
    pub fn predict_with_attention<F: Real>(
        &self,
        store: &ParamStore<F>,
        x: &PoseSequence,
    ) -> Result<(PoseSequence, Vec<(String, Tensor<F>)>)> {
        let input = self.backbone.input_tensor::<F>(x)?;
        let mut tape = Tape::no_grad();
        let bound = store.bind_frozen(&mut tape);
        let mut probe = Vec::new();
        let y = {
            let mut cx = Ctx {
                tape: &mut tape,
                params: &bound,
                probe: Some(&mut probe),
            };
            self.forward(&mut cx, &input)?
        };
        let frames = self.config().output_frames();
        let pred = PoseSequence::from_tensor(tape.value(y), frames, self.config().joints, 3)?;
        let maps = probe
            .into_iter()
            .map(|(name, v)| (name, tape.value(v).clone()))
            .collect();
        Ok((pred, maps))
    }
}

/// Convenience: binds `store` on `tape` and runs a forward pass.
pub fn forward_bound<F: Real>(
    model: &NanoHtNet,
    tape: &mut Tape<F>,
    bound: &Bound,
    x: &Tensor<F>,
) -> Result<Var> {
    let mut cx = Ctx::new(tape, bound);
    model.forward(&mut cx, x)
}
