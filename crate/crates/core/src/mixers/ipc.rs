use super::blocks::ChannelMlp;
use super::Ctx;
use crate::error::{contract_err, shape_err, Result};
use crate::param::{Init, ParamId, ParamStore};
use crate::skeleton::SkeletonTopology;
use crate::tensor::{Real, Var};
use rand_chacha::ChaCha8Rng;

/// Joint index sets derived from the limb chains.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LimbLayout {
    pub joints: usize,
    /// Per limb `[2-LDoF, 3-LDoF]`, limb-major (8 rows for 4 limbs).
    pub distal_pairs: Vec<usize>,
    /// Per limb `[1, 2, 3]-LDoF`, limb-major (12 rows for 4 limbs).
    pub full_chains: Vec<usize>,
    /// 3-LDoF joint of each limb.
    pub ends: Vec<usize>,
    /// Per limb `[2-LDoF, 3-LDoF]` targets for the full-chain feature.
    pub mid_and_ends: Vec<usize>,
}

impl LimbLayout {
    pub fn from_topology(topo: &SkeletonTopology) -> Result<Self> {
        if topo.limbs.is_empty() {
            return Err(contract_err!(
                "intra-part constraint needs at least one limb"
            ));
        }
        let mut distal_pairs = Vec::new();
        let mut full_chains = Vec::new();
        let mut ends = Vec::new();
        for limb in &topo.limbs {
            for (pos, &j) in limb.iter().enumerate() {
                if j >= topo.joints() || topo.ldof[j] as usize != pos + 1 {
                    return Err(contract_err!("malformed limb {:?}", limb));
                }
            }
            distal_pairs.extend_from_slice(&limb[1..]);
            full_chains.extend_from_slice(limb);
            ends.push(limb[2]);
        }
        Ok(LimbLayout {
            joints: topo.joints(),
            mid_and_ends: distal_pairs.clone(),
            distal_pairs,
            full_chains,
            ends,
        })
    }

    pub fn limbs(&self) -> usize {
        self.ends.len()
    }
}

/// Limb-level features written back onto distal joints:
///
/// * `F₁ = σ(Conv₁(X₁))`, kernel 2 / stride 2 over `[2-LDoF, 3-LDoF]` pairs,
/// * `F₂ = σ(Conv₂(X₂))`, kernel 3 / stride 3 over whole chains,
/// * `F̃ⱼ = Fⱼ + MLP(LN(Fⱼ))`,
/// * `Y = X̃ + R₁ + R₂` where `R₁` holds `F̃₁` at each limb's 3-LDoF row and
///   `R₂` holds `F̃₂` at its 2- and 3-LDoF rows. Every other row of `R` is
///   zero, so torso and 1-LDoF joints pass through unchanged.
#[derive(Clone, Debug)]
pub struct IntraPartConstraint {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub mlp1: ChannelMlp,
    pub mlp2: ChannelMlp,
    pub layout: LimbLayout,
    pub width: usize,
}

impl IntraPartConstraint {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        width: usize,
        topo: &SkeletonTopology,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let layout = LimbLayout::from_topology(topo)?;
        let conv = |store: &mut ParamStore<F>, tag: &str, kernel: usize, rng: &mut ChaCha8Rng| {
            let w = store.add(
                format!("{name}.{tag}.weight"),
                &[kernel, width, width],
                Init::XavierUniform {
                    fan_in: kernel * width,
                    fan_out: width,
                },
                rng,
            );
            let b = store.add(format!("{name}.{tag}.bias"), &[width], Init::Zeros, rng);
            (w, b)
        };
        let (conv1_w, conv1_b) = conv(store, "conv1", 2, rng);
        let (conv2_w, conv2_b) = conv(store, "conv2", 3, rng);
        Ok(IntraPartConstraint {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            mlp1: ChannelMlp::new(store, &format!("{name}.mlp1"), width, width, rng),
            mlp2: ChannelMlp::new(store, &format!("{name}.mlp2"), width, width, rng),
            layout,
            width,
        })
    }

    /// Returns `(Y, R₁ + R₂)`.
    pub fn forward_parts<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var) -> Result<(Var, Var)> {
        let (rows, _) = cx.tape.value(x).dims2()?;
        if rows != self.layout.joints {
            return Err(shape_err!(
                "IPC expects {} joints, got {}",
                self.layout.joints,
                rows
            ));
        }
        let n = self.layout.joints;
        let limbs = self.layout.limbs();

        let x1 = cx.tape.gather_rows(x, &self.layout.distal_pairs)?;
        let f1 = self.limb_feature(cx, x1, self.conv1_w, self.conv1_b, 2, &self.mlp1)?;
        let r1 = cx.tape.scatter_rows(f1, &self.layout.ends, n)?;

        let x2 = cx.tape.gather_rows(x, &self.layout.full_chains)?;
        let f2 = self.limb_feature(cx, x2, self.conv2_w, self.conv2_b, 3, &self.mlp2)?;
        let dup: Vec<usize> = (0..limbs).flat_map(|l| [l, l]).collect();
        let f2 = cx.tape.gather_rows(f2, &dup)?;
        let r2 = cx.tape.scatter_rows(f2, &self.layout.mid_and_ends, n)?;

        let r = cx.tape.add(r1, r2)?;
        let y = cx.tape.add(x, r)?;
        Ok((y, r))
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        self.forward_parts(cx, x).map(|(y, _)| y)
    }

    fn limb_feature<F: Real>(
        &self,
        cx: &mut Ctx<'_, F>,
        rows: Var,
        w: ParamId,
        b: ParamId,
        kernel: usize,
        mlp: &ChannelMlp,
    ) -> Result<Var> {
        let f = cx.tape.conv1d_strided(rows, cx.p(w), kernel)?;
        let f = cx.tape.add_row_bias(f, cx.p(b))?;
        let f = cx.tape.gelu(f);
        mlp.forward(cx, f)
    }

    pub fn param_count(&self) -> usize {
        let w = self.width;
        let mlp = 2 * w + 2 * (w * w + w);
        (2 * w * w + w) + (3 * w * w + w) + 2 * mlp
    }
}
