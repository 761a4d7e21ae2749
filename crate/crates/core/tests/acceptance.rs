//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion,
//! followed by the measurements behind it, and fails if any criterion does.
//!
//! Run with `cargo test --release -p nanohtnet --test acceptance -- --nocapture`
//! to see the report; the heavy training runs take a few minutes.

mod common;

use common::gradchecks::{self, randomize, Report};
use common::{rand_tensor, GRAD_TOL};
use nalgebra::{Rotation3, Unit, Vector3};
use nanohtnet::datagen::{
    generate_dataset, read_dataset, write_dataset, Dataset, DatasetConfig, CAMERA_BLOCK_LEN,
};
use nanohtnet::frequency::{dct_forward, dct_matrix, idct_padded, lowpass_truncate};
use nanohtnet::mixers::{Ctx, IntraPartConstraint};
use nanohtnet::model::{
    attention_complexity, flops_count, load_checkpoint, param_count, save_checkpoint, Checkpoint,
    ModelConfig, NanoHtNet, OutputMode, Tokenization,
};
use nanohtnet::param::ParamStore;
use nanohtnet::poseclr::{export_encoder, pretrain, EpochStats, PretrainConfig};
use nanohtnet::tensor::Tape;
use nanohtnet::train::{
    build_samples, mpjpe, p_mpjpe, per_joint_errors, train, TrainConfig, TrainOutcome,
};
use nanohtnet::{Error, PoseSequence, SkeletonTopology};
use rand::Rng;

struct Check {
    ok: bool,
    detail: String,
}

fn check(ok: bool, detail: impl Into<String>) -> Check {
    Check {
        ok,
        detail: detail.into(),
    }
}

fn report(id: usize, title: &str, checks: &[Check]) -> bool {
    let ok = checks.iter().all(|c| c.ok);
    println!("{} {id}. {title}", if ok { "PASS" } else { "FAIL" });
    for c in checks {
        println!("       [{}] {}", if c.ok { "ok" } else { "xx" }, c.detail);
    }
    ok
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target
}

fn criterion_1() -> Vec<Check> {
    let flag = param_count(&ModelConfig::flagship()).unwrap();
    let large = param_count(&ModelConfig::large()).unwrap();
    println!("       parameter breakdown (flagship):");
    for (name, n) in &flag.breakdown {
        println!("         {name:<22} {n:>9}");
    }
    println!("         {:<22} {:>9}", "total", flag.total);
    let (f, l) = (flag.total as f64, large.total as f64);
    vec![
        check(
            within(f, 1.52e6, 0.2),
            format!("flagship {:.3}M vs 1.52M ± 20%", f / 1e6),
        ),
        check(
            within(l, 4.40e6, 0.2),
            format!("large {:.3}M vs 4.40M ± 20%", l / 1e6),
        ),
        check(
            flag.breakdown.iter().map(|(_, n)| n).sum::<usize>() == flag.total,
            "breakdown sums to total",
        ),
    ]
}

fn criterion_2() -> Vec<Check> {
    let cfg = ModelConfig::flagship();
    let r = flops_count(&cfg).unwrap();
    let (j, t, k, c) = (17u64, 243u64, 9u64, 240u64);
    let leading = k * k * c + j * j * c;
    let mut grid_ok = true;
    let mut tightest = f64::INFINITY;
    for t in [27u64, 81, 243] {
        for tk in 1..=t {
            let e = attention_complexity(Tokenization::Etst, j, t, tk, c);
            let d = attention_complexity(Tokenization::Dtst, j, t, tk, c);
            grid_ok &= e < d;
            tightest = tightest.min(d as f64 / e as f64);
        }
    }
    vec![
        check(
            within(r.total as f64, 33e6, 0.3),
            format!("flagship {:.2}M FLOPs vs 33M ± 30%", r.total as f64 / 1e6),
        ),
        check(
            r.attention_interaction == leading
                && r.attention_interaction == attention_complexity(Tokenization::Etst, j, t, k, c),
            format!("attention term {} = t_k²·C + J²·C = {leading}", r.attention_interaction),
        ),
        check(
            grid_ok,
            format!("ETST < DTST for J=17, T∈{{27,81,243}}, all t_k ≤ T (smallest ratio {tightest:.1}×)"),
        ),
    ]
}

fn summarize(label: &str, r: Report) -> Check {
    let (name, err) = r.into_iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    check(err < GRAD_TOL, format!("{label}: worst {err:.2e} ({name})"))
}

fn criterion_3() -> Vec<Check> {
    let mut out = vec![
        summarize("binary ops", gradchecks::binary_ops()),
        summarize("unary ops", gradchecks::unary_ops()),
        summarize("layer norm", gradchecks::layer_norm()),
    ];
    for (name, err) in gradchecks::sub_modules() {
        out.push(check(err < GRAD_TOL, format!("{name}: {err:.2e}")));
    }
    out.push(summarize(
        "full forward, subsampled output",
        gradchecks::full_forward(OutputMode::Subsample),
    ));
    out.push(summarize(
        "full forward, IDCT output",
        gradchecks::full_forward(OutputMode::IdctFull),
    ));
    for (name, err) in gradchecks::losses() {
        out.push(check(err < GRAD_TOL, format!("{name}: {err:.2e}")));
    }
    out
}

fn criterion_4() -> Vec<Check> {
    let mut orth = 0.0f64;
    let mut parseval = 0.0f64;
    let mut round = 0.0f64;
    let mut lowpass = 0.0f64;
    for (i, t) in [9usize, 27, 81, 243].into_iter().enumerate() {
        let b = dct_matrix(t).unwrap();
        for p in 0..t {
            for q in 0..t {
                let dot: f64 = (0..t).map(|s| b.get(p, s) * b.get(q, s)).sum();
                orth = orth.max((dot - if p == q { 1.0 } else { 0.0 }).abs());
            }
        }
        let mut r = common::rng(i as u64);
        let x: Vec<f64> = (0..t).map(|_| r.gen_range(-1.0..1.0)).collect();
        let c = dct_forward(&x, &b).unwrap();
        let e = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        parseval = parseval.max((e(&x) - e(&c)).abs() / e(&x));
        let back = idct_padded(&c, &b).unwrap();
        round = round.max(
            x.iter()
                .zip(&back)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        for kk in 1..=t {
            let rec = idct_padded(&lowpass_truncate(&c, kk).unwrap(), &b).unwrap();
            let err: f64 = x.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum();
            lowpass = lowpass.max((err - e(&c[kk..])).abs());
        }
    }
    vec![
        check(
            orth < 1e-10,
            format!("orthonormality error {orth:.1e} < 1e-10 (T ∈ 9, 27, 81, 243)"),
        ),
        check(
            parseval < 1e-10,
            format!("Parseval relative error {parseval:.1e}"),
        ),
        check(round < 1e-5, format!("round trip error {round:.1e}")),
        check(
            lowpass < 1e-6,
            format!("low-pass error vs dropped energy {lowpass:.1e} ≤ 1e-6"),
        ),
    ]
}

fn random_pose(joints: usize, scale: f32, seed: u64) -> PoseSequence {
    let mut r = common::rng(seed);
    PoseSequence::new(
        1,
        joints,
        3,
        (0..joints * 3)
            .map(|_| r.gen_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

fn criterion_5() -> Vec<Check> {
    let mut violations = 0;
    for seed in 0..1000 {
        let (p, g) = (
            random_pose(17, 400.0, 2 * seed),
            random_pose(17, 400.0, 2 * seed + 1),
        );
        if p_mpjpe(&p, &g).unwrap() > mpjpe(&p, &g).unwrap() + 1e-9 {
            violations += 1;
        }
    }
    let mut worst = 0.0f64;
    for seed in 0..200 {
        let gt = random_pose(17, 1.0, 10_000 + seed);
        let mut r = common::rng(seed);
        let axis = Unit::new_normalize(Vector3::new(
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
            1.0,
        ));
        let rot = Rotation3::from_axis_angle(&axis, r.gen_range(-3.0..3.0));
        let s = r.gen_range(0.5..2.0);
        let shift = Vector3::new(
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
        );
        let mut pred = gt.clone();
        for j in 0..17 {
            let p = gt.joint(0, j);
            let q = s * (rot * Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)) + shift;
            pred.joint_mut(0, j)
                .copy_from_slice(&[q.x as f32, q.y as f32, q.z as f32]);
        }
        worst = worst.max(p_mpjpe(&pred, &gt).unwrap());
    }
    let zero = PoseSequence::new(1, 2, 3, vec![0.0; 6]).unwrap();
    let p345 = PoseSequence::new(1, 2, 3, vec![3.0, 4.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let m = mpjpe(&p345, &zero).unwrap();
    vec![
        check(
            violations == 0,
            format!("P-MPJPE ≤ MPJPE on 1000 pairs ({violations} violations)"),
        ),
        check(
            worst < 1e-6,
            format!("P-MPJPE after similarity transforms {worst:.1e} ≤ 1e-6"),
        ),
        check(m == 2.5, format!("3-4-5 case gives {m}")),
    ]
}

fn acceptance_data() -> (Dataset, Dataset, SkeletonTopology) {
    let topo = SkeletonTopology::h36m17();
    let data = generate_dataset(&DatasetConfig::default(), &topo).unwrap();
    let (tr, ev) = data.split_tail(3);
    (tr, ev, topo)
}

fn fine_tune_config(use_ipc: bool, epochs: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            output_mode: OutputMode::IdctFull,
            use_ipc,
            ..ModelConfig::desk()
        },
        epochs,
        batch_size: 4,
        ..Default::default()
    }
}

const FINE_TUNE_EPOCHS: usize = 30;

fn run(
    cfg: &TrainConfig,
    tr: &Dataset,
    ev: &Dataset,
    topo: &SkeletonTopology,
    ck: Option<&Checkpoint>,
) -> TrainOutcome {
    train(cfg, tr, ev, topo, ck, &mut |_| {}).unwrap()
}

fn ipc_residual_is_local() -> (bool, usize) {
    let topo = SkeletonTopology::h36m17();
    let mut touched = 0;
    let mut ok = true;
    for seed in 0..20 {
        let mut store = ParamStore::<f64>::new();
        let ipc =
            IntraPartConstraint::new(&mut store, "ipc", 16, &topo, &mut common::rng(seed)).unwrap();
        randomize(&mut store, seed + 100);
        let x = rand_tensor(&[17, 16], seed + 200);
        let mut tape = Tape::no_grad();
        let bound = store.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let y = {
            let mut cx = Ctx::new(&mut tape, &bound);
            ipc.forward(&mut cx, xv).unwrap()
        };
        let y = tape.value(y);
        for j in 0..17 {
            let changed = (0..16)
                .filter(|&c| y.get2(j, c) - x.get2(j, c) != 0.0)
                .count();
            if topo.ldof[j] <= 1 {
                ok &= changed == 0;
            } else {
                touched += changed;
            }
        }
    }
    (ok && touched > 0, touched)
}

fn distal_error(
    outcome: &TrainOutcome,
    cfg: &TrainConfig,
    ev: &Dataset,
    topo: &SkeletonTopology,
) -> f64 {
    let samples = build_samples(ev, &cfg.model, topo, cfg.eval_stride).unwrap();
    let per_joint = per_joint_errors(&outcome.model, &outcome.last, &samples).unwrap();
    let joints: Vec<usize> = [2u8, 3]
        .iter()
        .flat_map(|&l| topo.limb_joints_at(l))
        .collect();
    joints.iter().map(|&j| per_joint[j]).sum::<f64>() / joints.len() as f64
}

fn criterion_6(
    scratch: &TrainOutcome,
    tr: &Dataset,
    ev: &Dataset,
    topo: &SkeletonTopology,
) -> Vec<Check> {
    let (local, touched) = ipc_residual_is_local();
    let with_cfg = fine_tune_config(true, FINE_TUNE_EPOCHS);
    let without_cfg = fine_tune_config(false, FINE_TUNE_EPOCHS);
    let without = run(&without_cfg, tr, ev, topo, None);
    let (a, b) = (
        distal_error(scratch, &with_cfg, ev, topo),
        distal_error(&without, &without_cfg, ev, topo),
    );
    vec![
        check(
            local,
            format!("IPC residual exactly zero on 0/1-LDoF rows over 20 seeds ({touched} entries changed on 2/3-LDoF rows)"),
        ),
        check(a < b, format!("2/3-LDoF eval error: with IPC {a:.2} mm, without {b:.2} mm")),
    ]
}

fn criterion_7(scratch: &TrainOutcome, topo: &SkeletonTopology) -> Vec<Check> {
    let last = scratch.report.epochs.last().unwrap();
    let baseline = scratch.report.baseline.overall.mpjpe;
    let eval = last.eval.overall.mpjpe;
    let seconds: f64 = scratch.report.epochs.iter().map(|e| e.seconds).sum();

    let small = DatasetConfig {
        sequences: 4,
        frames: 120,
        ..Default::default()
    };
    let data = generate_dataset(&small, topo).unwrap();
    let (tr, ev) = data.split_tail(1);
    let cfg = TrainConfig {
        eval_sequences: 1,
        ..fine_tune_config(true, 2)
    };
    let a = run(&cfg, &tr, &ev, topo, None);
    let b = run(&cfg, &tr, &ev, topo, None);
    let same = a.last == b.last
        && a.report
            .epochs
            .iter()
            .zip(&b.report.epochs)
            .all(|(x, y)| x.train_loss.to_bits() == y.train_loss.to_bits());
    vec![
        check(
            eval < 0.6 * baseline,
            format!(
                "eval MPJPE {eval:.2} mm < 0.6 × temporal-mean baseline {baseline:.2} mm = {:.2} mm ({FINE_TUNE_EPOCHS} epochs, {seconds:.0} s)",
                0.6 * baseline
            ),
        ),
        check(same, "two seeded runs give bitwise identical parameters and losses"),
    ]
}

fn pretrain_config(decay: f64) -> PretrainConfig {
    PretrainConfig {
        model: fine_tune_config(true, 1).model,
        epochs: 3,
        bank_capacity: 4096,
        embed_dim: 64,
        decay,
        ..Default::default()
    }
}

fn criterion_8(
    scratch: &TrainOutcome,
    tr: &Dataset,
    ev: &Dataset,
    topo: &SkeletonTopology,
) -> Vec<Check> {
    let started = std::time::Instant::now();
    let main = pretrain(&pretrain_config(0.999), tr, topo, &mut |_| {}).unwrap();
    let seconds = started.elapsed().as_secs_f64();
    let frozen = pretrain(&pretrain_config(1.0), tr, topo, &mut |_| {}).unwrap();
    let last = |e: &[EpochStats]| e.last().unwrap().clone();
    let (m, f) = (last(&main.epochs), last(&frozen.epochs));
    let (gap_m, gap_f) = (
        m.mean_pos_sim - m.mean_neg_sim,
        f.mean_pos_sim - f.mean_neg_sim,
    );

    let target = scratch.report.epochs.last().unwrap().train_loss;
    let budget = FINE_TUNE_EPOCHS / 2;
    let ck = export_encoder(&main.pair);
    let tuned = run(&fine_tune_config(true, budget), tr, ev, topo, Some(&ck));
    let reached = tuned
        .report
        .epochs
        .iter()
        .position(|e| e.train_loss <= target);
    let best = tuned
        .report
        .epochs
        .iter()
        .map(|e| e.train_loss)
        .fold(f64::INFINITY, f64::min);
    let loaded = tuned
        .report
        .pretrained
        .as_ref()
        .map_or(0, |r| r.loaded.len());
    vec![
        check(
            gap_m >= 0.2,
            format!(
                "positive {:.3} − negative {:.3} = {gap_m:.3} ≥ 0.2 (3 epochs, {seconds:.0} s)",
                m.mean_pos_sim, m.mean_neg_sim
            ),
        ),
        check(
            reached.is_some(),
            format!(
                "fine-tune from export ({loaded} tensors loaded) reaches scratch final loss {target:.2} mm within {budget} epochs: {} (best {best:.2} mm)",
                reached.map_or("never".to_string(), |e| format!("epoch {}", e + 1))
            ),
        ),
        check(
            gap_f < gap_m && f.mean_loss > m.mean_loss,
            format!(
                "m = 1.0 underperforms m = 0.999: gap {gap_f:.3} vs {gap_m:.3}, loss {:.3} vs {:.3}",
                f.mean_loss, m.mean_loss
            ),
        ),
    ]
}

fn criterion_9() -> Vec<Check> {
    let topo = SkeletonTopology::h36m17();
    let dir = tempfile::tempdir().unwrap();
    let d = generate_dataset(
        &DatasetConfig {
            sequences: 3,
            frames: 60,
            ..Default::default()
        },
        &topo,
    )
    .unwrap();
    let dpath = dir.path().join("d.pseq");
    write_dataset(&dpath, &d).unwrap();
    let dbytes = std::fs::read(&dpath).unwrap();
    let dback = read_dataset(&dpath, &topo).unwrap();
    let dataset_round = dback == d && dback.to_bytes().unwrap() == dbytes;

    let cfg = ModelConfig::desk();
    let (_, store) = NanoHtNet::init::<f32>(&cfg, &topo, 3).unwrap();
    let cpath = dir.path().join("m.ckpt");
    save_checkpoint(&store, &cfg, &cpath).unwrap();
    let cbytes = std::fs::read(&cpath).unwrap();
    let ck = load_checkpoint(&cpath).unwrap();
    let (_, mut restored) = NanoHtNet::init::<f32>(&cfg, &topo, 4).unwrap();
    ck.restore(&mut restored).unwrap();
    let ckpt_round = restored == store && ck.to_bytes().unwrap() == cbytes;

    let code = |r: Result<(), Error>| {
        r.err().map(|e| {
            (
                e.exit_code(),
                matches!(e, Error::CorruptDataset(_) | Error::CorruptCheckpoint(_)),
            )
        })
    };
    let ds = |b: &[u8]| code(Dataset::from_bytes(b, 17).map(|_| ()));
    let cs = |b: &[u8]| code(Checkpoint::from_bytes(b).map(|_| ()));
    let tag_len = u16::from_le_bytes([dbytes[17], dbytes[18]]) as usize;
    let kp = 17 + 2 + tag_len + 4 + 60 * 17 * 3 * 4 + CAMERA_BLOCK_LEN * 8;
    let mut inconsistent = dbytes.clone();
    let v = f32::from_le_bytes(inconsistent[kp..kp + 4].try_into().unwrap()) + 0.01;
    inconsistent[kp..kp + 4].copy_from_slice(&v.to_le_bytes());
    let mut bad_magic = dbytes.clone();
    bad_magic[0] = b'Q';
    let mut bad_ck = cbytes.clone();
    bad_ck[3] ^= 0xFF;
    let mut bad_manifest = cbytes.clone();
    bad_manifest[16] = b'#';
    let cases = [
        ("dataset bad magic", ds(&bad_magic)),
        ("dataset truncated", ds(&dbytes[..dbytes.len() - 5])),
        ("dataset keypoint off its projection", ds(&inconsistent)),
        (
            "dataset joint-count mismatch",
            code(Dataset::from_bytes(&dbytes, 16).map(|_| ())),
        ),
        ("checkpoint bad magic", cs(&bad_ck)),
        ("checkpoint truncated", cs(&cbytes[..cbytes.len() - 5])),
        ("checkpoint unreadable manifest", cs(&bad_manifest)),
    ];
    let mut out = vec![
        check(dataset_round, "dataset file round trip is bitwise exact"),
        check(ckpt_round, "checkpoint file round trip is bitwise exact"),
    ];
    for (name, r) in cases {
        out.push(check(
            r == Some((3, true)),
            format!("{name}: {r:?} (want exit code 3)"),
        ));
    }
    out
}

#[test]
fn acceptance() {
    let mut ok = true;
    ok &= report(1, "parameter accounting", &criterion_1());
    ok &= report(2, "FLOP accounting", &criterion_2());
    ok &= report(
        3,
        "gradient checks (f64, relative error < 1e-4)",
        &criterion_3(),
    );
    ok &= report(4, "transform properties", &criterion_4());
    ok &= report(5, "metric properties", &criterion_5());

    let (tr, ev, topo) = acceptance_data();
    let scratch = run(
        &fine_tune_config(true, FINE_TUNE_EPOCHS),
        &tr,
        &ev,
        &topo,
        None,
    );
    ok &= report(
        6,
        "IPC locality and ablation",
        &criterion_6(&scratch, &tr, &ev, &topo),
    );
    ok &= report(7, "desk-scale training", &criterion_7(&scratch, &topo));
    ok &= report(
        8,
        "contrastive pre-training",
        &criterion_8(&scratch, &tr, &ev, &topo),
    );
    ok &= report(9, "file formats", &criterion_9());
    assert!(ok, "at least one acceptance criterion failed");
}
