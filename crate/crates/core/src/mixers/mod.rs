//! Spatial and temporal hierarchical mixers.
//!
//! Both mixers split their channels evenly between sub-modules and hand each
//! sub-module's output to the next one through a residual, local to global:
//!
//! ```text
//! spatial:  [X_ljc | X_ipc | X_gbi]
//!           Y_ljc = LJC(X_ljc)
//!           Y_ipc = IPC(X_ipc + Y_ljc)
//!           Y_gbi = GBI(X_gbi + Y_ipc)
//!           out   = AggregateMLP(concat(Y_ljc, Y_ipc, Y_gbi))
//!
//! temporal: [X_ime | X_gcp]
//!           Y_ime = IME(X_ime)
//!           Y_gcp = GCP(X_gcp + Y_ime)
//!           out   = AggregateMLP(concat(Y_ime, Y_gcp))
//! ```
//!
//! The aggregate MLP is a pre-norm residual block of hidden width `C`. The
//! input residual reaches the output through each sub-module's own residual.

mod attention;
pub mod blocks;
mod graph;
mod ipc;

pub use attention::SelfAttention;
pub use blocks::{ChannelMlp, LayerNorm, Linear};
pub use graph::GraphConvResidual;
pub use ipc::{IntraPartConstraint, LimbLayout};

use crate::error::{contract_err, Result};
use crate::param::{Bound, ParamId, ParamStore};
use crate::skeleton::SkeletonTopology;
use crate::tensor::{Real, Tape, Var};
use rand_chacha::ChaCha8Rng;

/// Forward-pass context threaded through every block.
pub struct Ctx<'a, F: Real> {
    pub tape: &'a mut Tape<F>,
    pub params: &'a Bound,
    /// When set, attention maps are appended here under a dotted label.
    pub probe: Option<&'a mut Vec<(String, Var)>>,
}

impl<'a, F: Real> Ctx<'a, F> {
    pub fn new(tape: &'a mut Tape<F>, params: &'a Bound) -> Self {
        Ctx {
            tape,
            params,
            probe: None,
        }
    }

    #[inline]
    pub fn p(&self, id: ParamId) -> Var {
        self.params.var(id)
    }

    pub fn record(&mut self, label: impl FnOnce() -> String, v: Var) {
        if let Some(probe) = self.probe.as_deref_mut() {
            probe.push((label(), v));
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpatialMixer {
    pub ljc: GraphConvResidual,
    pub ipc: Option<IntraPartConstraint>,
    pub gbi: SelfAttention,
    pub aggregate: ChannelMlp,
    pub channels: usize,
}

impl SpatialMixer {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        heads: usize,
        topo: &SkeletonTopology,
        use_ipc: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if !channels.is_multiple_of(3) {
            return Err(contract_err!(
                "spatial channels {} not divisible by 3",
                channels
            ));
        }
        let third = channels / 3;
        let ljc = GraphConvResidual::new(store, &format!("{name}.ljc"), third, rng);
        let ipc = if use_ipc {
            Some(IntraPartConstraint::new(
                store,
                &format!("{name}.ipc"),
                third,
                topo,
                rng,
            )?)
        } else {
            None
        };
        let gbi = SelfAttention::new(store, &format!("{name}.gbi"), third, heads, rng)?;
        let aggregate =
            ChannelMlp::new(store, &format!("{name}.aggregate"), channels, channels, rng);
        Ok(SpatialMixer {
            ljc,
            ipc,
            gbi,
            aggregate,
            channels,
        })
    }

    pub fn forward<F: Real>(
        &self,
        cx: &mut Ctx<'_, F>,
        x: Var,
        adj: Var,
        label: &str,
    ) -> Result<Var> {
        let third = self.channels / 3;
        let x_ljc = cx.tape.slice_cols(x, 0, third)?;
        let x_ipc = cx.tape.slice_cols(x, third, third)?;
        let x_gbi = cx.tape.slice_cols(x, 2 * third, third)?;

        let y_ljc = self.ljc.forward(cx, x_ljc, adj)?;
        let xt_ipc = cx.tape.add(x_ipc, y_ljc)?;
        let y_ipc = match &self.ipc {
            Some(ipc) => ipc.forward(cx, xt_ipc)?,
            None => xt_ipc,
        };
        let xt_gbi = cx.tape.add(x_gbi, y_ipc)?;
        let y_gbi = self.gbi.forward(cx, xt_gbi, &format!("{label}.gbi"))?;

        let z = cx.tape.concat_cols(&[y_ljc, y_ipc, y_gbi])?;
        self.aggregate.forward(cx, z)
    }
}

#[derive(Clone, Debug)]
pub struct TemporalMixer {
    pub ime: GraphConvResidual,
    pub gcp: SelfAttention,
    pub aggregate: ChannelMlp,
    pub channels: usize,
}

impl TemporalMixer {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if !channels.is_multiple_of(2) {
            return Err(contract_err!(
                "temporal channels {} not divisible by 2",
                channels
            ));
        }
        let half = channels / 2;
        Ok(TemporalMixer {
            ime: GraphConvResidual::new(store, &format!("{name}.ime"), half, rng),
            gcp: SelfAttention::new(store, &format!("{name}.gcp"), half, heads, rng)?,
            aggregate: ChannelMlp::new(
                store,
                &format!("{name}.aggregate"),
                channels,
                channels,
                rng,
            ),
            channels,
        })
    }

    pub fn forward<F: Real>(
        &self,
        cx: &mut Ctx<'_, F>,
        x: Var,
        adj: Var,
        label: &str,
    ) -> Result<Var> {
        let half = self.channels / 2;
        let x_ime = cx.tape.slice_cols(x, 0, half)?;
        let x_gcp = cx.tape.slice_cols(x, half, half)?;
        let y_ime = self.ime.forward(cx, x_ime, adj)?;
        let xt_gcp = cx.tape.add(x_gcp, y_ime)?;
        let y_gcp = self.gcp.forward(cx, xt_gcp, &format!("{label}.gcp"))?;
        let z = cx.tape.concat_cols(&[y_ime, y_gcp])?;
        self.aggregate.forward(cx, z)
    }
}
