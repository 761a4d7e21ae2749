use crate::error::Result;
use crate::mixers::{Ctx, Linear};
use crate::model::{Backbone, ModelConfig};
use crate::param::ParamStore;
use crate::pose::PoseSequence;
use crate::skeleton::SkeletonTopology;
use crate::tensor::{Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Prefix of the projection-head parameters, which are not exported.
pub const PROJECTION_PREFIX: &str = "proj.";

/// Backbone plus a two-layer projection to unit embeddings.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub backbone: Backbone,
    pub proj1: Linear,
    pub proj2: Linear,
    pub embed_dim: usize,
}

impl Encoder {
    pub fn new<F: Real>(
        config: &ModelConfig,
        topology: &SkeletonTopology,
        embed_dim: usize,
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let backbone = Backbone::new(config, topology, store, rng)?;
        let c_l = config.c_l();
        let proj1 = Linear::new(store, "proj.fc1", c_l, c_l, true, rng);
        let proj2 = Linear::new(store, "proj.fc2", c_l, embed_dim, true, rng);
        Ok(Encoder {
            backbone,
            proj1,
            proj2,
            embed_dim,
        })
    }

    pub fn init<F: Real>(
        config: &ModelConfig,
        topology: &SkeletonTopology,
        embed_dim: usize,
        seed: u64,
    ) -> Result<(Self, ParamStore<F>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = Self::new(config, topology, embed_dim, &mut store, &mut rng)?;
        Ok((enc, store))
    }

    /// Projection output before normalization, `[1 × embed_dim]`: the mean
    /// over all `J + t_k` stream tokens goes through `fc2(gelu(fc1(·)))`.
    pub fn features<F: Real>(&self, cx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Var> {
        let feats = self.backbone.forward(cx, x)?;
        let j = cx.tape.shape(feats.spatial)[0] as f64;
        let k = cx.tape.shape(feats.temporal)[0] as f64;
        let ms = cx.tape.mean_rows(feats.spatial)?;
        let mt = cx.tape.mean_rows(feats.temporal)?;
        let ms = cx.tape.scale(ms, F::of(j / (j + k)));
        let mt = cx.tape.scale(mt, F::of(k / (j + k)));
        let pooled = cx.tape.add(ms, mt)?;
        let h = self.proj1.forward(cx, pooled)?;
        let h = cx.tape.gelu(h);
        self.proj2.forward(cx, h)
    }

    /// Unit embedding `[1 × embed_dim]`.
    pub fn embed<F: Real>(&self, cx: &mut Ctx<'_, F>, x: &Tensor<F>) -> Result<Var> {
        let f = self.features(cx, x)?;
        cx.tape.l2_normalize(f)
    }

    /// Gradient-free embedding of one window.
    pub fn embed_value<F: Real>(&self, store: &ParamStore<F>, x: &PoseSequence) -> Result<Vec<F>> {
        let input = self.backbone.input_tensor::<F>(x)?;
        let mut tape = Tape::no_grad();
        let bound = store.bind_frozen(&mut tape);
        let mut cx = Ctx::new(&mut tape, &bound);
        let e = self.embed(&mut cx, &input)?;
        Ok(tape.value(e).data().to_vec())
    }
}
