//! Supervised fine-tuning and evaluation.

use super::metrics::{mpjpe_loss, p_mpjpe_detailed};
use super::optim::{Adam, AdamConfig};
use crate::datagen::{camera_root_relative, flip_3d, horizontal_flip, Dataset};
use crate::error::{Error, Result};
use crate::mixers::Ctx;
use crate::model::{Checkpoint, LoadReport, ModelConfig, NanoHtNet};
use crate::param::ParamStore;
use crate::pose::PoseSequence;
use crate::skeleton::SkeletonTopology;
use crate::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    /// Held-out set; when absent the last `eval_sequences` sequences of
    /// `dataset` are held out.
    pub eval_dataset: Option<PathBuf>,
    pub eval_sequences: usize,
    pub pretrained: Option<PathBuf>,
    pub flip_augment: bool,
    /// Frames between consecutive training windows.
    pub window_stride: usize,
    /// Frames between consecutive evaluation windows.
    pub eval_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::desk(),
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            lr_decay: 0.95,
            seed: 0,
            dataset: None,
            eval_dataset: None,
            eval_sequences: 3,
            pretrained: None,
            flip_augment: true,
            window_stride: 9,
            eval_stride: 27,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0)
        {
            return Err(Error::Config(
                "lr must be positive and lr_decay in (0, 1]".into(),
            ));
        }
        if self.window_stride == 0 || self.eval_stride == 0 {
            return Err(Error::Config("strides must be positive".into()));
        }
        Ok(())
    }
}

/// One supervised window from one camera.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `[T×J×2]` normalized keypoints.
    pub input: PoseSequence,
    /// `[frames×J×3]` camera-frame, root-relative, mm.
    pub target: PoseSequence,
    pub action: String,
    pub sequence: usize,
    pub view: usize,
}

impl Sample {
    pub fn flipped(&self, topo: &SkeletonTopology) -> Sample {
        Sample {
            input: horizontal_flip(&self.input, topo),
            target: flip_3d(&self.target, topo),
            ..self.clone()
        }
    }
}

/// Every window of `config.receptive_field` frames that lies fully inside
/// a sequence, starting every `stride` frames, for every view.
pub fn build_samples(
    dataset: &Dataset,
    config: &ModelConfig,
    topo: &SkeletonTopology,
    stride: usize,
) -> Result<Vec<Sample>> {
    let t = config.receptive_field;
    let frames = config.supervision_frames();
    let mut out = Vec::new();
    for (si, seq) in dataset.sequences.iter().enumerate() {
        if seq.frames() < t {
            continue;
        }
        for (vi, view) in seq.views.iter().enumerate() {
            let rel = camera_root_relative(&seq.world, &view.camera, topo.root());
            for start in (0..=seq.frames() - t).step_by(stride.max(1)) {
                out.push(Sample {
                    input: view.keypoints.window(start, t)?,
                    target: rel.window(start, t)?.select_frames(&frames)?,
                    action: seq.action.clone(),
                    sequence: si,
                    view: vi,
                });
            }
        }
    }
    Ok(out)
}

/// Flattens the targets of `batch` into a single `[(n·frames·J)×3]` tensor.
fn target_tensor(target: &PoseSequence) -> Tensor<f32> {
    Tensor::new(
        &[target.frames() * target.joints(), 3],
        target.data().to_vec(),
    )
    .expect("3D target")
}

/// Mean loss over `batch`, backpropagated and applied with Adam. Returns
/// the batch loss in mm.
pub fn train_step(
    model: &NanoHtNet,
    store: &mut ParamStore<f32>,
    opt: &mut Adam<f32>,
    batch: &[&Sample],
    lr: f64,
) -> Result<f64> {
    let mut tape = Tape::<f32>::new();
    let bound = store.bind(&mut tape);
    let mut total = None;
    {
        let mut cx = Ctx::new(&mut tape, &bound);
        for s in batch {
            let x = model.backbone.input_tensor::<f32>(&s.input)?;
            let y = model.forward(&mut cx, &x)?;
            let target = cx.tape.constant(target_tensor(&s.target));
            let l = mpjpe_loss(cx.tape, y, target)?;
            total = Some(match total {
                None => l,
                Some(acc) => cx.tape.add(acc, l)?,
            });
        }
    }
    let total = total.ok_or_else(|| crate::error::contract_err!("empty batch"))?;
    let loss = tape.scale(total, 1.0 / batch.len() as f32);
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value}")));
    }
    let grads = tape.backward(loss)?;
    let grads = store.collect_grads(&tape, &bound, &grads);
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    opt.step(store, &grads, lr)?;
    Ok(value)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub mpjpe: f64,
    pub p_mpjpe: f64,
    pub frames: usize,
    /// Frames excluded from P-MPJPE as degenerate.
    pub skipped: usize,
}

#[derive(Default)]
struct Acc {
    err: f64,
    aligned: f64,
    frames: usize,
    aligned_frames: usize,
}

impl Acc {
    fn add(&mut self, pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
        let per_frame = super::metrics::mpjpe_per_frame(pred, gt)?;
        self.err += per_frame.iter().sum::<f64>();
        self.frames += per_frame.len();
        let a = p_mpjpe_detailed(pred, gt)?;
        self.aligned += a.mean * a.frames_used as f64;
        self.aligned_frames += a.frames_used;
        Ok(())
    }

    fn finish(&self) -> Metrics {
        let div = |a: f64, n: usize| if n == 0 { 0.0 } else { a / n as f64 };
        Metrics {
            mpjpe: div(self.err, self.frames),
            p_mpjpe: div(self.aligned, self.aligned_frames),
            frames: self.frames,
            skipped: self.frames - self.aligned_frames,
        }
    }
}

/// Metrics over every supervised frame, over the centre frame only, and per
/// action tag.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub overall: Metrics,
    pub centre: Metrics,
    pub per_action: BTreeMap<String, Metrics>,
}

fn report_from<'a>(
    pairs: impl Iterator<Item = Result<(&'a str, PoseSequence, &'a PoseSequence)>>,
    centre: Option<usize>,
) -> Result<EvalReport> {
    let mut overall = Acc::default();
    let mut centre_acc = Acc::default();
    let mut per: BTreeMap<String, Acc> = BTreeMap::new();
    for pair in pairs {
        let (action, pred, gt) = pair?;
        overall.add(&pred, gt)?;
        per.entry(action.to_string()).or_default().add(&pred, gt)?;
        if let Some(c) = centre {
            centre_acc.add(&pred.select_frames(&[c])?, &gt.select_frames(&[c])?)?;
        }
    }
    Ok(EvalReport {
        overall: overall.finish(),
        centre: centre_acc.finish(),
        per_action: per.into_iter().map(|(k, v)| (k, v.finish())).collect(),
    })
}

/// Position of the receptive-field centre among the supervised frames.
fn centre_slot(config: &ModelConfig) -> Option<usize> {
    let c = config.centre_frame();
    config.supervision_frames().iter().position(|&f| f == c)
}

pub fn evaluate(
    model: &NanoHtNet,
    store: &ParamStore<f32>,
    samples: &[Sample],
) -> Result<EvalReport> {
    let pairs = samples.iter().map(|s| {
        let pred = model.predict(store, &s.input)?;
        Ok((s.action.as_str(), pred, &s.target))
    });
    report_from(pairs, centre_slot(model.config()))
}

/// Mean position error of each joint over every supervised frame, mm.
pub fn per_joint_errors(
    model: &NanoHtNet,
    store: &ParamStore<f32>,
    samples: &[Sample],
) -> Result<Vec<f64>> {
    let j = samples.first().map_or(0, |s| s.target.joints());
    let mut sums = vec![0.0f64; j];
    let mut frames = 0usize;
    for s in samples {
        let pred = model.predict(store, &s.input)?;
        if pred.frames() != s.target.frames() || pred.joints() != j || s.target.joints() != j {
            return Err(crate::error::shape_err!("prediction and target disagree"));
        }
        for t in 0..pred.frames() {
            for (k, sum) in sums.iter_mut().enumerate() {
                let (p, g) = (pred.joint(t, k), s.target.joint(t, k));
                *sum += p
                    .iter()
                    .zip(g)
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
            }
        }
        frames += pred.frames();
    }
    Ok(sums
        .into_iter()
        .map(|s| if frames == 0 { 0.0 } else { s / frames as f64 })
        .collect())
}

/// Scores the per-(sequence, view) temporal mean of the ground truth as a
/// constant prediction.
pub fn temporal_mean_baseline(
    dataset: &Dataset,
    samples: &[Sample],
    config: &ModelConfig,
    topo: &SkeletonTopology,
) -> Result<EvalReport> {
    let mut means: BTreeMap<(usize, usize), PoseSequence> = BTreeMap::new();
    for s in samples {
        means.entry((s.sequence, s.view)).or_insert_with(|| {
            let seq = &dataset.sequences[s.sequence];
            let rel = camera_root_relative(&seq.world, &seq.views[s.view].camera, topo.root());
            let mut mean = vec![0.0f64; rel.joints() * 3];
            for t in 0..rel.frames() {
                for (m, &v) in mean.iter_mut().zip(rel.frame(t)) {
                    *m += v as f64;
                }
            }
            let data = mean
                .iter()
                .map(|&m| (m / rel.frames() as f64) as f32)
                .collect();
            PoseSequence::new(1, rel.joints(), 3, data).expect("mean pose")
        });
    }
    let pairs = samples.iter().map(|s| {
        let mean = &means[&(s.sequence, s.view)];
        let pred = mean.select_frames(&vec![0; s.target.frames()])?;
        Ok((s.action.as_str(), pred, &s.target))
    });
    report_from(pairs, centre_slot(config))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch, mm.
    pub train_loss: f64,
    pub eval: EvalReport,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_mpjpe: f64,
    pub baseline: EvalReport,
    pub train_windows: usize,
    pub eval_windows: usize,
    pub pretrained: Option<LoadReport>,
}

pub struct TrainOutcome {
    pub model: NanoHtNet,
    /// Parameters after the last epoch.
    pub last: ParamStore<f32>,
    /// Parameters of the epoch with the lowest eval MPJPE.
    pub best: ParamStore<f32>,
    pub report: RunReport,
}

/// Seeded fine-tuning run. `pretrained`, when given, is loaded by name
/// before the first step; `on_epoch` sees every epoch log as it is
/// produced.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    eval_set: &Dataset,
    topo: &SkeletonTopology,
    pretrained: Option<&Checkpoint>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let (model, mut store) = NanoHtNet::init::<f32>(&config.model, topo, config.seed)?;
    let pretrained = pretrained.map(|ck| ck.load_into(&mut store));
    let samples = build_samples(train_set, &config.model, topo, config.window_stride)?;
    let eval_samples = build_samples(eval_set, &config.model, topo, config.eval_stride)?;
    if samples.is_empty() || eval_samples.is_empty() {
        return Err(Error::Config(format!(
            "no complete {}-frame windows (train {}, eval {})",
            config.model.receptive_field,
            samples.len(),
            eval_samples.len()
        )));
    }
    let baseline = temporal_mean_baseline(eval_set, &eval_samples, &config.model, topo)?;
    let flipped: Vec<Sample> = if config.flip_augment {
        samples.iter().map(|s| s.flipped(topo)).collect()
    } else {
        Vec::new()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_7A1E);
    let mut opt = Adam::new(&store, AdamConfig::default());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    let mut best = (usize::MAX, f64::INFINITY, store.clone());
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.lr * config.lr_decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk
                .iter()
                .map(|&i| {
                    if config.flip_augment && rng.gen_bool(0.5) {
                        &flipped[i]
                    } else {
                        &samples[i]
                    }
                })
                .collect();
            loss_sum += train_step(&model, &mut store, &mut opt, &batch, lr)?;
            batches += 1;
        }
        let eval = evaluate(&model, &store, &eval_samples)?;
        if eval.overall.mpjpe < best.1 {
            best = (epoch, eval.overall.mpjpe, store.clone());
        }
        let log = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            eval,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(TrainOutcome {
        model,
        last: store,
        best: best.2,
        report: RunReport {
            epochs: logs,
            best_epoch: best.0,
            best_mpjpe: best.1,
            baseline,
            train_windows: samples.len(),
            eval_windows: eval_samples.len(),
            pretrained,
        },
    })
}
