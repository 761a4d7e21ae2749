//! Small parameterised layers the mixers are assembled from.

use super::Ctx;
use crate::error::Result;
use crate::param::{Init, ParamId, ParamStore};
use crate::tensor::{Real, Var};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            &[fan_in, fan_out],
            Init::XavierUniform { fan_in, fan_out },
            rng,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), &[fan_out], Init::Zeros, rng));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let y = cx.tape.matmul(x, cx.p(self.weight))?;
        match self.bias {
            Some(b) => cx.tape.add_row_bias(y, cx.p(b)),
            None => Ok(y),
        }
    }

    pub fn param_count(&self) -> usize {
        self.fan_in * self.fan_out + if self.bias.is_some() { self.fan_out } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), &[width], Init::Ones, rng),
            beta: store.add(format!("{name}.beta"), &[width], Init::Zeros, rng),
        }
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let (g, b) = (cx.p(self.gamma), cx.p(self.beta));
        cx.tape.layer_norm(x, g, b)
    }
}

/// Pre-norm residual channel MLP: `x + fc2(gelu(fc1(LN(x))))`.
#[derive(Clone, Debug)]
pub struct ChannelMlp {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ChannelMlp {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        width: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ChannelMlp {
            norm: LayerNorm::new(store, &format!("{name}.norm"), width, rng),
            fc1: Linear::new(store, &format!("{name}.fc1"), width, hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, width, true, rng),
        }
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let h = self.norm.forward(cx, x)?;
        let h = self.fc1.forward(cx, h)?;
        let h = cx.tape.gelu(h);
        let h = self.fc2.forward(cx, h)?;
        cx.tape.add(x, h)
    }

    pub fn hidden(&self) -> usize {
        self.fc1.fan_out
    }
}
