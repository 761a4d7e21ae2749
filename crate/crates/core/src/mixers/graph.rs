use super::Ctx;
use crate::error::{shape_err, Result};
use crate::param::{Init, ParamId, ParamStore};
use crate::tensor::{Real, Var};
use rand_chacha::ChaCha8Rng;

/// Two stacked graph convolutions with a residual:
/// `Y = X + Â·σ(Â·X·W₁)·W₂`.
///
/// Used over joints (LJC) with the skeleton adjacency and over frequency
/// tokens (IME) with the temporal path adjacency. No bias terms.
#[derive(Clone, Debug)]
pub struct GraphConvResidual {
    pub w1: ParamId,
    pub w2: ParamId,
    pub width: usize,
}

impl GraphConvResidual {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let init = Init::XavierUniform {
            fan_in: width,
            fan_out: width,
        };
        GraphConvResidual {
            w1: store.add(format!("{name}.w1"), &[width, width], init, rng),
            w2: store.add(format!("{name}.w2"), &[width, width], init, rng),
            width,
        }
    }

    /// `adj` must be an `n × n` constant where `n` is the row count of `x`.
    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var, adj: Var) -> Result<Var> {
        let (n, _) = cx.tape.value(x).dims2()?;
        if cx.tape.value(adj).dims2()? != (n, n) {
            return Err(shape_err!(
                "adjacency {:?} does not match {} tokens",
                cx.tape.shape(adj),
                n
            ));
        }
        let h = cx.tape.matmul(x, cx.p(self.w1))?;
        let h = cx.tape.matmul(adj, h)?;
        let h = cx.tape.gelu(h);
        let h = cx.tape.matmul(h, cx.p(self.w2))?;
        let h = cx.tape.matmul(adj, h)?;
        cx.tape.add(x, h)
    }

    pub fn param_count(&self) -> usize {
        2 * self.width * self.width
    }
}
