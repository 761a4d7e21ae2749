//! Parameter and FLOP accounting.
//!
//! FLOP conventions (one forward pass, one window):
//!
//! * a multiply-accumulate is 2 FLOPs; matrix products are dense, including
//!   the normalized adjacency products,
//! * element-wise add / bias / residual / scale: 1 per element,
//! * GELU: 8 per element (erf ≈ exp at 4, plus four arithmetic ops),
//! * softmax: 8 per element (max 1, subtract 1, exp 4, sum 1, divide 1),
//! * layer norm: 7 per element plus 5 per row (two means, sqrt 2, divide 1),
//! * gathers, scatters, slices and reshapes are free.
//!
//! Parameter counts are exact: they are read off a constructed store.

use super::config::{ModelConfig, OutputMode};
use super::network::NanoHtNet;
use crate::error::Result;
use crate::param::ParamStore;
use crate::skeleton::SkeletonTopology;
use serde::Serialize;

pub const GELU_FLOPS: u64 = 8;
pub const SOFTMAX_FLOPS: u64 = 8;
pub const LN_FLOPS_PER_ELEM: u64 = 7;
pub const LN_FLOPS_PER_ROW: u64 = 5;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ParamReport {
    pub total: usize,
    pub breakdown: Vec<(String, usize)>,
}

/// Group key for a parameter name: `spatial.2.ipc.conv1.weight` →
/// `spatial.ipc`, `s_fcn.norm.gamma` → `s_fcn`.
fn group_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        [stream @ ("spatial" | "temporal"), _layer, module, ..] => format!("{stream}.{module}"),
        ["spatial_pos", ..] => "spatial_embed".into(),
        ["temporal_pos", ..] => "temporal_embed".into(),
        [first, ..] => first.to_string(),
        [] => String::new(),
    }
}

/// Breaks a store down by module group, keeping first-seen order.
pub fn param_breakdown<F: crate::tensor::Real>(store: &ParamStore<F>) -> ParamReport {
    let mut breakdown: Vec<(String, usize)> = Vec::new();
    for (name, t) in store.iter() {
        let g = group_of(name);
        match breakdown.iter_mut().find(|(k, _)| *k == g) {
            Some((_, n)) => *n += t.numel(),
            None => breakdown.push((g, t.numel())),
        }
    }
    ParamReport {
        total: store.numel(),
        breakdown,
    }
}

/// Exact scalar parameter count for `config` on the 17-joint skeleton.
pub fn param_count(config: &ModelConfig) -> Result<ParamReport> {
    param_count_with(config, &SkeletonTopology::h36m17())
}

pub fn param_count_with(config: &ModelConfig, topology: &SkeletonTopology) -> Result<ParamReport> {
    let (_, store) = NanoHtNet::init::<f32>(config, topology, 0)?;
    Ok(param_breakdown(&store))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Tokenization {
    /// Independent tokens per (frame, joint).
    Dtst,
    /// One token per joint and one per retained coefficient.
    Etst,
}

/// Leading-term token-interaction cost of one attention layer.
///
/// DTST: `J·T²·C + T·J²·C`; ETST: `T_k²·C + J²·C`.
pub fn attention_complexity(tok: Tokenization, j: u64, t: u64, t_k: u64, c: u64) -> u64 {
    match tok {
        Tokenization::Dtst => j * t * t * c + t * j * j * c,
        Tokenization::Etst => t_k * t_k * c + j * j * c,
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FlopReport {
    pub total: u64,
    /// Exact per-component counts; they sum to `total`.
    pub breakdown: Vec<(String, u64)>,
    /// FLOPs spent in dense products (matmul / conv) only.
    pub matmul: u64,
    /// Table-style leading term, [`attention_complexity`] for ETST.
    pub attention_interaction: u64,
}

impl FlopReport {
    pub fn get(&self, key: &str) -> u64 {
        self.breakdown
            .iter()
            .filter(|(k, _)| k == key)
            .map(|(_, v)| *v)
            .sum()
    }
}

#[derive(Default)]
struct Tally {
    items: Vec<(String, u64)>,
    matmul: u64,
}

impl Tally {
    fn add(&mut self, key: &str, flops: u64) {
        match self.items.iter_mut().find(|(k, _)| k == key) {
            Some((_, v)) => *v += flops,
            None => self.items.push((key.to_string(), flops)),
        }
    }

    /// Dense `[m×k]·[k×n]`.
    fn mm(&mut self, key: &str, m: u64, k: u64, n: u64) {
        let f = 2 * m * k * n;
        self.matmul += f;
        self.add(key, f);
    }

    fn ew(&mut self, key: &str, elems: u64, per: u64) {
        self.add(key, elems * per);
    }

    fn ln(&mut self, key: &str, rows: u64, cols: u64) {
        self.add(
            key,
            rows * cols * LN_FLOPS_PER_ELEM + rows * LN_FLOPS_PER_ROW,
        );
    }

    /// Linear layer with bias.
    fn linear(&mut self, key: &str, rows: u64, fan_in: u64, fan_out: u64) {
        self.mm(key, rows, fan_in, fan_out);
        self.ew(key, rows * fan_out, 1);
    }

    /// `x + fc2(gelu(fc1(LN(x))))` with hidden width `hidden`.
    fn channel_mlp(&mut self, key: &str, rows: u64, width: u64, hidden: u64) {
        self.ln(key, rows, width);
        self.linear(key, rows, width, hidden);
        self.ew(key, rows * hidden, GELU_FLOPS);
        self.linear(key, rows, hidden, width);
        self.ew(key, rows * width, 1);
    }

    /// `x + Â·σ(Â·x·W₁)·W₂` with a dense `n×n` adjacency.
    fn graph_conv(&mut self, key: &str, n: u64, w: u64) {
        self.mm(key, n, w, w);
        self.mm(key, n, n, w);
        self.ew(key, n * w, GELU_FLOPS);
        self.mm(key, n, w, w);
        self.mm(key, n, n, w);
        self.ew(key, n * w, 1);
    }

    /// `x + LN(MSA(x))` over `n` tokens of width `w`.
    fn attention(&mut self, key: &str, n: u64, w: u64, heads: u64) {
        let dh = w / heads;
        for _ in 0..3 {
            self.linear(key, n, w, w);
        }
        for _ in 0..heads {
            self.mm(key, n, dh, n);
            self.ew(key, n * n, 1);
            self.ew(key, n * n, SOFTMAX_FLOPS);
            self.mm(key, n, n, dh);
        }
        self.linear(key, n, w, w);
        self.ln(key, n, w);
        self.ew(key, n * w, 1);
    }
}

/// Analytic FLOPs of one forward pass.
pub fn flops_count(config: &ModelConfig) -> Result<FlopReport> {
    let topo = SkeletonTopology::h36m17();
    flops_count_with(config, topo.limbs.len() as u64)
}

pub fn flops_count_with(config: &ModelConfig, limbs: u64) -> Result<FlopReport> {
    config.validate()?;
    let j = config.joints as u64;
    let t = config.receptive_field as u64;
    let k = config.coeffs as u64;
    let c = config.channels as u64;
    let cl = config.c_l() as u64;
    let h = config.heads as u64;
    let (cs, ct) = (c / 3, c / 2);
    let mut f = Tally::default();

    f.mm("dct", k, t, 2 * j);
    f.linear("temporal_embed", k, 2 * j, c);
    f.ew("temporal_embed", k * c, 1);
    f.linear("spatial_embed", j, 2 * t, c);
    f.ew("spatial_embed", j * c, 1);

    for _ in 0..config.layers {
        f.graph_conv("temporal.ime", k, ct);
        f.ew("temporal.gcp", k * ct, 1);
        f.attention("temporal.gcp", k, ct, h);
        f.channel_mlp("temporal.aggregate", k, c, c);

        f.graph_conv("spatial.ljc", j, cs);
        f.ew("spatial.ipc", j * cs, 1);
        if config.use_ipc {
            for kernel in [2u64, 3] {
                f.mm("spatial.ipc", limbs, kernel * cs, cs);
                f.ew("spatial.ipc", limbs * cs, 1 + GELU_FLOPS);
                f.channel_mlp("spatial.ipc", limbs, cs, cs);
            }
            f.ew("spatial.ipc", 2 * j * cs, 1);
        }
        f.ew("spatial.gbi", j * cs, 1);
        f.attention("spatial.gbi", j, cs, h);
        f.channel_mlp("spatial.aggregate", j, c, c);
    }

    for (key, rows) in [("t_fcn", k), ("s_fcn", j)] {
        f.ln(key, rows, c);
        f.linear(key, rows, c, cl);
        f.ew(key, rows * cl, GELU_FLOPS);
    }

    let pair_out = config.head_hidden.map_or(3, |h| h as u64);
    f.mm("head", k, cl, pair_out);
    f.mm("head", j, cl, pair_out);
    f.ew("head", 2 * k * j * pair_out, 1);
    if config.head_hidden.is_some() {
        f.ew("head", k * j * pair_out, GELU_FLOPS);
        f.linear("head", k * j, pair_out, 3);
    }
    f.ew("head", k * j * 3, 1);
    if config.output_mode == OutputMode::IdctFull {
        f.mm("idct", t, k, 3 * j);
    }

    let total = f.items.iter().map(|(_, v)| v).sum();
    Ok(FlopReport {
        total,
        breakdown: f.items,
        matmul: f.matmul,
        attention_interaction: attention_complexity(Tokenization::Etst, j, t, k, c),
    })
}
