//! Finite-difference gradient suites shared by the op, mixer, model and
//! acceptance tests. Every suite returns `(label, worst relative error)`.

use super::{check, rand_tensor, weighted_sum, FD_STEP};
use nanohtnet::mixers::{
    Ctx, GraphConvResidual, IntraPartConstraint, SelfAttention, SpatialMixer, TemporalMixer,
};
use nanohtnet::model::{ModelConfig, NanoHtNet, OutputMode};
use nanohtnet::param::ParamStore;
use nanohtnet::poseclr::info_nce;
use nanohtnet::skeleton::{NormalizedAdjacency, SkeletonTopology};
use nanohtnet::tensor::{grad_check_coords, Tape, Tensor, Var};
use nanohtnet::train::mpjpe_loss;
use nanohtnet::{ParamId, PoseSequence, Result};
use rand::Rng;

pub type Report = Vec<(String, f64)>;

type UnaryOp = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>;
type BinaryOp = Box<dyn Fn(&mut Tape<f64>, Var, Var) -> Result<Var>>;

/// Checks `op` with respect to each operand in turn, the other held fixed.
pub fn check_binary(
    a: &Tensor<f64>,
    b: &Tensor<f64>,
    op: &dyn Fn(&mut Tape<f64>, Var, Var) -> Result<Var>,
) -> f64 {
    let ea = check(a, |tape, x| {
        let bv = tape.constant(b.clone());
        let y = op(tape, x, bv)?;
        weighted_sum(tape, y, 1)
    });
    let eb = check(b, |tape, x| {
        let av = tape.constant(a.clone());
        let y = op(tape, av, x)?;
        weighted_sum(tape, y, 1)
    });
    ea.max(eb)
}

pub fn check_unary(a: &Tensor<f64>, op: &dyn Fn(&mut Tape<f64>, Var) -> Result<Var>) -> f64 {
    check(a, |tape, x| {
        let y = op(tape, x)?;
        weighted_sum(tape, y, 2)
    })
}

pub fn binary_ops() -> Report {
    let a = rand_tensor(&[3, 4], 1);
    let b = rand_tensor(&[4, 5], 2);
    let c = rand_tensor(&[3, 4], 3);
    let bias = rand_tensor(&[4], 4);
    let d = rand_tensor(&[5, 4], 5);
    let w2 = rand_tensor(&[2, 4, 3], 6);
    let seq = rand_tensor(&[6, 4], 7);
    let w3 = rand_tensor(&[3, 4, 3], 8);
    let cases: Vec<(&str, &Tensor<f64>, &Tensor<f64>, BinaryOp)> = vec![
        ("matmul", &a, &b, Box::new(|t, x, y| t.matmul(x, y))),
        ("add", &a, &c, Box::new(|t, x, y| t.add(x, y))),
        ("sub", &a, &c, Box::new(|t, x, y| t.sub(x, y))),
        ("mul", &a, &c, Box::new(|t, x, y| t.mul(x, y))),
        (
            "add_row_bias",
            &a,
            &bias,
            Box::new(|t, x, y| t.add_row_bias(x, y)),
        ),
        ("outer_add", &a, &d, Box::new(|t, x, y| t.outer_add(x, y))),
        (
            "conv1d/2",
            &seq,
            &w2,
            Box::new(|t, x, y| t.conv1d_strided(x, y, 2)),
        ),
        (
            "conv1d/3",
            &seq,
            &w3,
            Box::new(|t, x, y| t.conv1d_strided(x, y, 3)),
        ),
        (
            "conv1d/1",
            &seq,
            &w3,
            Box::new(|t, x, y| t.conv1d_strided(x, y, 1)),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, x, y, op)| (name.to_string(), check_binary(x, y, &*op)))
        .collect()
}

pub fn unary_ops() -> Report {
    let a = rand_tensor(&[3, 4], 11);
    let cases: Vec<(&str, UnaryOp)> = vec![
        ("transpose", Box::new(|t, x| t.transpose(x))),
        ("scale", Box::new(|t, x| Ok(t.scale(x, -2.5)))),
        ("gelu", Box::new(|t, x| Ok(t.gelu(x)))),
        ("softmax", Box::new(|t, x| Ok(t.softmax_lastdim(x)))),
        ("log_softmax", Box::new(|t, x| Ok(t.log_softmax_lastdim(x)))),
        ("slice_cols", Box::new(|t, x| t.slice_cols(x, 1, 2))),
        ("slice_rows", Box::new(|t, x| t.slice_rows(x, 1, 2))),
        (
            "gather_rows",
            Box::new(|t, x| t.gather_rows(x, &[2, 0, 2, 1])),
        ),
        (
            "scatter_rows",
            Box::new(|t, x| t.scatter_rows(x, &[4, 0, 2], 5)),
        ),
        ("reshape", Box::new(|t, x| t.reshape(x, &[2, 6]))),
        ("sum", Box::new(|t, x| Ok(t.sum(x)))),
        ("mean", Box::new(|t, x| Ok(t.mean(x)))),
        ("mean_rows", Box::new(|t, x| t.mean_rows(x))),
        ("row_norm", Box::new(|t, x| Ok(t.row_norm(x)))),
        ("l2_normalize", Box::new(|t, x| t.l2_normalize(x))),
        ("select", Box::new(|t, x| t.select(x, 7))),
        (
            "concat_cols",
            Box::new(|t, x| {
                let s = t.scale(x, 3.0);
                t.concat_cols(&[x, s, x])
            }),
        ),
        (
            "shared_subexpression",
            Box::new(|t, x| {
                let sq = t.slice_cols(x, 0, 3)?;
                let y = t.matmul(sq, x)?;
                let z = t.mul(y, x)?;
                t.add(z, x)
            }),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, op)| (name.to_string(), check_unary(&a, &*op)))
        .collect()
}

pub fn layer_norm() -> Report {
    let x = rand_tensor(&[3, 6], 21);
    let g = rand_tensor(&[6], 22);
    let b = rand_tensor(&[6], 23);
    let ex = check_unary(&x, &|t, v| {
        let (gv, bv) = (t.constant(g.clone()), t.constant(b.clone()));
        t.layer_norm(v, gv, bv)
    });
    let eg = check_unary(&g, &|t, v| {
        let (xv, bv) = (t.constant(x.clone()), t.constant(b.clone()));
        t.layer_norm(xv, v, bv)
    });
    let eb = check_unary(&b, &|t, v| {
        let (xv, gv) = (t.constant(x.clone()), t.constant(g.clone()));
        t.layer_norm(xv, gv, v)
    });
    vec![
        ("layer_norm/x".into(), ex),
        ("layer_norm/gamma".into(), eg),
        ("layer_norm/beta".into(), eb),
    ]
}

/// Fills every parameter with uniform noise so zero-initialised biases and
/// unit gains are exercised too.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    let mut r = super::rng(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
    }
}

/// Worst relative gradient error over the block input and every parameter.
pub fn check_block(
    store: &ParamStore<f64>,
    x: &Tensor<f64>,
    f: &dyn Fn(&mut Ctx<'_, f64>, Var) -> Result<Var>,
) -> Report {
    let mut out = vec![(
        "input".to_string(),
        check(x, |tape, xv| {
            let bound = store.bind_frozen(tape);
            let mut cx = Ctx::new(tape, &bound);
            let y = f(&mut cx, xv)?;
            weighted_sum(cx.tape, y, 77)
        }),
    )];
    for id in store.ids() {
        let theta = store.get(id).clone();
        let err = check(&theta, |tape, p| {
            let xv = tape.constant(x.clone());
            let bound = store.bind_frozen(tape).with_override(id, p);
            let mut cx = Ctx::new(tape, &bound);
            let y = f(&mut cx, xv)?;
            weighted_sum(cx.tape, y, 77)
        });
        out.push((store.name(id).to_string(), err));
    }
    out
}

fn worst(label: &str, r: Report) -> (String, f64) {
    let (name, err) = r
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty");
    (format!("{label} [{name}]"), err)
}

/// J = 17, t_k = 4, C = 48, 8 heads: spatial sub-modules are 16 wide and
/// temporal ones 24 wide. One line per block, labelled with its worst tensor.
pub fn sub_modules() -> Report {
    let topo = SkeletonTopology::h36m17();
    let adj = topo.adjacency().unwrap().to_tensor::<f64>();
    let x = rand_tensor(&[17, 16], 20);
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let ljc = GraphConvResidual::new(&mut store, "ljc", 16, &mut super::rng(21));
    out.push(worst(
        "LJC",
        check_block(&store, &x, &|cx, xv| {
            let a = cx.tape.constant(adj.clone());
            ljc.forward(cx, xv, a)
        }),
    ));

    let mut store = ParamStore::new();
    let ipc = IntraPartConstraint::new(&mut store, "ipc", 16, &topo, &mut super::rng(22)).unwrap();
    randomize(&mut store, 23);
    out.push(worst(
        "IPC",
        check_block(&store, &x, &|cx, xv| ipc.forward(cx, xv)),
    ));

    let mut store = ParamStore::new();
    let gbi = SelfAttention::new(&mut store, "gbi", 16, 8, &mut super::rng(24)).unwrap();
    randomize(&mut store, 25);
    out.push(worst(
        "GBI",
        check_block(&store, &x, &|cx, xv| gbi.forward(cx, xv, "gbi")),
    ));

    let mut store = ParamStore::new();
    let mixer =
        SpatialMixer::new(&mut store, "s", 48, 8, &topo, true, &mut super::rng(26)).unwrap();
    let x48 = rand_tensor(&[17, 48], 27);
    out.push(worst(
        "spatial mixer",
        check_block(&store, &x48, &|cx, xv| {
            let a = cx.tape.constant(adj.clone());
            mixer.forward(cx, xv, a, "s")
        }),
    ));

    let tadj = NormalizedAdjacency::temporal_path(4)
        .unwrap()
        .to_tensor::<f64>();
    let xt = rand_tensor(&[4, 24], 30);

    let mut store = ParamStore::new();
    let ime = GraphConvResidual::new(&mut store, "ime", 24, &mut super::rng(31));
    out.push(worst(
        "IME",
        check_block(&store, &xt, &|cx, xv| {
            let a = cx.tape.constant(tadj.clone());
            ime.forward(cx, xv, a)
        }),
    ));

    let mut store = ParamStore::new();
    let gcp = SelfAttention::new(&mut store, "gcp", 24, 8, &mut super::rng(32)).unwrap();
    randomize(&mut store, 33);
    out.push(worst(
        "GCP",
        check_block(&store, &xt, &|cx, xv| gcp.forward(cx, xv, "gcp")),
    ));

    let mut store = ParamStore::new();
    let mixer = TemporalMixer::new(&mut store, "t", 48, 8, &mut super::rng(34)).unwrap();
    let x48 = rand_tensor(&[4, 48], 35);
    out.push(worst(
        "temporal mixer",
        check_block(&store, &x48, &|cx, xv| {
            let a = cx.tape.constant(tadj.clone());
            mixer.forward(cx, xv, a, "t")
        }),
    ));
    out
}

/// `T = 8, t_k = 4, C = 48, L = 1` with unit output scale.
pub fn small_model(mode: OutputMode) -> ModelConfig {
    ModelConfig {
        receptive_field: 8,
        coeffs: 4,
        channels: 48,
        layers: 1,
        output_mode: mode,
        output_scale: 1.0,
        ..ModelConfig::desk()
    }
}

pub fn random_window(frames: usize, seed: u64) -> PoseSequence {
    let mut r = super::rng(seed);
    let data = (0..frames * 17 * 2)
        .map(|_| r.gen_range(-0.8f32..0.8))
        .collect();
    PoseSequence::new(frames, 17, 2, data).unwrap()
}

/// MPJPE loss of the whole network against four sampled coordinates of
/// every parameter tensor, parameters perturbed off their initialisation.
pub fn full_forward(mode: OutputMode) -> Report {
    let cfg = small_model(mode);
    let topo = SkeletonTopology::h36m17();
    let (model, mut store) = NanoHtNet::init::<f64>(&cfg, &topo, 11).unwrap();
    let mut r = super::rng(12);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += r.gen_range(-0.05..0.05);
        }
    }
    let x: Tensor<f64> = model.backbone.input_tensor(&random_window(8, 13)).unwrap();
    let rows = cfg.output_frames() * 17;
    let target = rand_tensor(&[rows, 3], 14);
    let mut out = Vec::new();
    for id in store.ids() {
        let theta = store.get(id).clone();
        let n = theta.numel();
        let coords: Vec<usize> = (0..4).map(|i| (i * 7919 + id.index() * 31) % n).collect();
        let err = grad_check_coords(&theta, FD_STEP, &coords, |tape, p| {
            let bound = store.bind_frozen(tape).with_override(id, p);
            let mut cx = Ctx::new(tape, &bound);
            let y = model.forward(&mut cx, &x)?;
            let t = cx.tape.constant(target.clone());
            mpjpe_loss(cx.tape, y, t)
        })
        .unwrap();
        out.push((store.name(id).to_string(), err));
    }
    out
}

fn unit_rows(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut t = rand_tensor(&[rows, cols], seed);
    for r in 0..rows {
        let row = &mut t.data_mut()[r * cols..(r + 1) * cols];
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    t
}

/// Supervised and contrastive losses.
pub fn losses() -> Report {
    let target = rand_tensor(&[12, 3], 5);
    let pred = rand_tensor(&[12, 3], 6);
    let sup = check(&pred, |tape, p| {
        let t = tape.constant(target.clone());
        mpjpe_loss(tape, p, t)
    });
    let pos = unit_rows(4, 6, 40);
    let neg = unit_rows(7, 6, 41);
    let q = rand_tensor(&[1, 6], 3);
    let mut out = vec![("mpjpe loss".to_string(), sup)];
    for tau in [0.07, 0.5] {
        let err = check(&q, |tape, x| {
            let qn = tape.l2_normalize(x)?;
            info_nce(tape, qn, &pos, Some(&neg), tau)
        });
        out.push((format!("InfoNCE tau={tau}"), err));
    }
    out
}
