use super::blocks::{LayerNorm, Linear};
use super::Ctx;
use crate::error::{contract_err, Result};
use crate::param::ParamStore;
use crate::tensor::{Real, Var};
use rand_chacha::ChaCha8Rng;

/// Multi-head self-attention with a post-normalised residual,
/// `Y = X + LN(MSA(X))`.
///
/// Scores are scaled by `1/√width` (the whole sub-module width), not by the
/// per-head width. Serves as GBI over joints and GCP over frequency tokens.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub norm: LayerNorm,
    pub heads: usize,
    pub width: usize,
}

impl SelfAttention {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(contract_err!(
                "width {} not divisible by {} heads",
                width,
                heads
            ));
        }
        Ok(SelfAttention {
            q: Linear::new(store, &format!("{name}.q"), width, width, true, rng),
            k: Linear::new(store, &format!("{name}.k"), width, width, true, rng),
            v: Linear::new(store, &format!("{name}.v"), width, width, true, rng),
            out: Linear::new(store, &format!("{name}.out"), width, width, true, rng),
            norm: LayerNorm::new(store, &format!("{name}.norm"), width, rng),
            heads,
            width,
        })
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var, label: &str) -> Result<Var> {
        let msa = self.attend(cx, x, label)?;
        let normed = self.norm.forward(cx, msa)?;
        cx.tape.add(x, normed)
    }

    /// `Concat(H₁…H_h)·W_out` without the residual or normalisation.
    pub fn attend<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var, label: &str) -> Result<Var> {
        let q = self.q.forward(cx, x)?;
        let k = self.k.forward(cx, x)?;
        let v = self.v.forward(cx, x)?;
        let dh = self.width / self.heads;
        let scale = F::one() / F::of(self.width as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = cx.tape.slice_cols(q, h * dh, dh)?;
            let kh = cx.tape.slice_cols(k, h * dh, dh)?;
            let vh = cx.tape.slice_cols(v, h * dh, dh)?;
            let kt = cx.tape.transpose(kh)?;
            let scores = cx.tape.matmul(qh, kt)?;
            let scores = cx.tape.scale(scores, scale);
            let attn = cx.tape.softmax_lastdim(scores);
            cx.record(|| format!("{label}.head{h}"), attn);
            heads.push(cx.tape.matmul(attn, vh)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            cx.tape.concat_cols(&heads)?
        };
        self.out.forward(cx, cat)
    }

    pub fn param_count(&self) -> usize {
        self.q.param_count()
            + self.k.param_count()
            + self.v.param_count()
            + self.out.param_count()
            + 2 * self.width
    }
}
