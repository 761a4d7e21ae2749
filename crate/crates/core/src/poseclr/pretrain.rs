use super::bank::MemoryBank;
use super::encoder::{Encoder, PROJECTION_PREFIX};
use super::loss::{info_nce, momentum_update};
use crate::datagen::Dataset;
use crate::error::{contract_err, Error, Result};
use crate::mixers::Ctx;
use crate::model::{Checkpoint, ModelConfig};
use crate::param::ParamStore;
use crate::pose::PoseSequence;
use crate::skeleton::SkeletonTopology;
use crate::tensor::{Tape, Tensor};
use crate::train::{Adam, AdamConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub model: ModelConfig,
    /// Synchronized views per instant, `α`.
    pub views: usize,
    /// Memory-bank capacity, `β`.
    pub bank_capacity: usize,
    /// Frames between sampled instants.
    pub slice: usize,
    /// Momentum-encoder decay `m`.
    pub decay: f64,
    pub temperature: f64,
    pub embed_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Instants per optimisation step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            model: ModelConfig::desk(),
            views: 4,
            bank_capacity: 32768,
            slice: 3,
            decay: 0.999,
            temperature: 0.07,
            embed_dim: 128,
            epochs: 10,
            lr: 1e-3,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.views < 2 {
            return fail(format!("views {} must be at least 2", self.views));
        }
        if self.bank_capacity == 0 || !self.bank_capacity.is_multiple_of(self.views) {
            return fail(format!(
                "bank capacity {} must be a positive multiple of views {}",
                self.bank_capacity, self.views
            ));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return fail(format!("decay {} outside [0, 1]", self.decay));
        }
        if !(self.temperature > 0.0) {
            return fail("temperature must be positive".into());
        }
        if self.slice == 0 || self.embed_dim == 0 || self.batch_size == 0 {
            return fail("slice, embed_dim and batch_size must be positive".into());
        }
        if !(self.lr > 0.0) {
            return fail("lr must be positive".into());
        }
        Ok(())
    }
}

/// One sampled time index of one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SliceInstant {
    pub sequence: usize,
    /// Frame the windows are centred on.
    pub centre: usize,
}

impl SliceInstant {
    /// The `T`-frame window of every view, centred on `centre`.
    pub fn windows(&self, dataset: &Dataset, frames: usize) -> Result<Vec<PoseSequence>> {
        let start = self.centre - frames / 2;
        dataset.sequences[self.sequence]
            .views
            .iter()
            .map(|v| v.keypoints.window(start, frames))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceSet {
    pub instants: Vec<SliceInstant>,
    /// Indices whose window would leave the sequence.
    pub skipped: usize,
}

/// Time indices `0, s, 2s, …` of every sequence whose `frames`-long window
/// fits. Sequences are visited in a seeded order; instants stay ascending
/// within a sequence.
pub fn sample_slices(
    dataset: &Dataset,
    slice: usize,
    frames: usize,
    seed: u64,
) -> Result<SliceSet> {
    if slice == 0 {
        return Err(contract_err!("slice must be at least 1"));
    }
    let mut order: Vec<usize> = (0..dataset.sequences.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = frames / 2;
    let mut instants = Vec::new();
    let mut skipped = 0;
    for si in order {
        let len = dataset.sequences[si].frames();
        for centre in (0..len).step_by(slice) {
            if centre >= half && centre - half + frames <= len {
                instants.push(SliceInstant {
                    sequence: si,
                    centre,
                });
            } else {
                skipped += 1;
            }
        }
    }
    Ok(SliceSet { instants, skipped })
}

/// Online encoder `f` and its `α` momentum copies.
#[derive(Clone, Debug)]
pub struct EncoderPair {
    pub encoder: Encoder,
    pub online: ParamStore<f32>,
    pub momentum: Vec<ParamStore<f32>>,
}

impl EncoderPair {
    pub fn new(config: &PretrainConfig, topology: &SkeletonTopology) -> Result<Self> {
        let (encoder, online) =
            Encoder::init::<f32>(&config.model, topology, config.embed_dim, config.seed)?;
        let momentum = vec![online.clone(); config.views];
        Ok(EncoderPair {
            encoder,
            online,
            momentum,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean `q·k⁺` over all positives.
    pub mean_pos_sim: f64,
    /// Mean `q·k⁻` over all bank entries seen; zero while the bank is empty.
    pub mean_neg_sim: f64,
    pub steps: usize,
    pub bank_fill: usize,
}

fn stack(rows: &[Vec<f32>]) -> Tensor<f32> {
    let d = rows[0].len();
    Tensor::new(&[rows.len(), d], rows.iter().flatten().copied().collect()).expect("equal rows")
}

/// One optimisation step over `batch` instants. Returns
/// `(loss, pos_sim_sum, pos_count, neg_sim_sum, neg_count)`.
fn pretrain_step(
    batch: &[Vec<PoseSequence>],
    pair: &mut EncoderPair,
    bank: &mut MemoryBank,
    config: &PretrainConfig,
    opt: &mut Adam<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64, usize, f64, usize)> {
    let negatives = bank.snapshot();
    let mut keys_all: Vec<Vec<f32>> = Vec::with_capacity(batch.len() * config.views);
    let mut tape = Tape::<f32>::new();
    let bound = pair.online.bind(&mut tape);
    let mut losses = Vec::with_capacity(batch.len());
    let mut queries = Vec::with_capacity(batch.len());
    {
        let mut cx = Ctx::new(&mut tape, &bound);
        for windows in batch {
            if windows.len() != config.views {
                return Err(contract_err!(
                    "{} views available, {} required",
                    windows.len(),
                    config.views
                ));
            }
            let v = rng.gen_range(0..config.views);
            let x = pair.encoder.backbone.input_tensor::<f32>(&windows[v])?;
            let q = pair.encoder.embed(&mut cx, &x)?;
            let keys: Vec<Vec<f32>> = windows
                .iter()
                .zip(&pair.momentum)
                .map(|(w, store)| pair.encoder.embed_value(store, w))
                .collect::<Result<_>>()?;
            let l = info_nce(
                cx.tape,
                q,
                &stack(&keys),
                negatives.as_ref(),
                config.temperature,
            )?;
            losses.push(l);
            queries.push(q);
            keys_all.extend(keys);
        }
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    let loss = tape.scale(total, 1.0 / batch.len() as f32);
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("contrastive loss {value}")));
    }

    let (mut pos, mut neg) = (0.0, 0.0);
    let mut neg_count = 0;
    for (i, &q) in queries.iter().enumerate() {
        let qv = tape.value(q).data();
        let dot = |k: &[f32]| qv.iter().zip(k).map(|(a, b)| (a * b) as f64).sum::<f64>();
        for k in &keys_all[i * config.views..(i + 1) * config.views] {
            pos += dot(k);
        }
        for n in bank.iter() {
            neg += dot(n);
            neg_count += 1;
        }
    }

    let grads = tape.backward(loss)?;
    let grads = pair.online.collect_grads(&tape, &bound, &grads);
    opt.step(&mut pair.online, &grads, config.lr)?;
    for m in &mut pair.momentum {
        momentum_update(&pair.online, m, config.decay)?;
    }
    bank.push_all(&keys_all)?;
    Ok((value, pos, keys_all.len(), neg, neg_count))
}

/// One pass over `instants` in a seeded order.
pub fn pretrain_epoch(
    dataset: &Dataset,
    instants: &[SliceInstant],
    pair: &mut EncoderPair,
    bank: &mut MemoryBank,
    config: &PretrainConfig,
    opt: &mut Adam<f32>,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<EpochStats> {
    let mut order = instants.to_vec();
    order.shuffle(rng);
    let t = config.model.receptive_field;
    let mut stats = EpochStats {
        epoch,
        ..Default::default()
    };
    let (mut loss, mut pos, mut npos, mut neg, mut nneg) = (0.0, 0.0, 0, 0.0, 0);
    for chunk in order.chunks(config.batch_size) {
        let batch: Vec<Vec<PoseSequence>> = chunk
            .iter()
            .map(|i| i.windows(dataset, t))
            .collect::<Result<_>>()?;
        let (l, p, np, n, nn) = pretrain_step(&batch, pair, bank, config, opt, rng)?;
        loss += l;
        pos += p;
        npos += np;
        neg += n;
        nneg += nn;
        stats.steps += 1;
    }
    let div = |a: f64, n: usize| if n == 0 { 0.0 } else { a / n as f64 };
    stats.mean_loss = div(loss, stats.steps);
    stats.mean_pos_sim = div(pos, npos);
    stats.mean_neg_sim = div(neg, nneg);
    stats.bank_fill = bank.len();
    Ok(stats)
}

pub struct PretrainOutcome {
    pub pair: EncoderPair,
    pub bank: MemoryBank,
    pub epochs: Vec<EpochStats>,
    pub skipped_instants: usize,
}

/// Full seeded pre-training run.
pub fn pretrain(
    config: &PretrainConfig,
    dataset: &Dataset,
    topology: &SkeletonTopology,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<PretrainOutcome> {
    config.validate()?;
    if dataset.views < config.views {
        return Err(Error::Config(format!(
            "dataset has {} views, pre-training needs {}",
            dataset.views, config.views
        )));
    }
    let mut pair = EncoderPair::new(config, topology)?;
    let mut bank = MemoryBank::new(config.bank_capacity, config.embed_dim)?;
    let mut opt = Adam::new(&pair.online, AdamConfig::default());
    let slices = sample_slices(
        dataset,
        config.slice,
        config.model.receptive_field,
        config.seed,
    )?;
    if slices.instants.is_empty() {
        return Err(Error::Config(
            "no instant has a complete window in every view".into(),
        ));
    }
    let mut view_limited = dataset.clone();
    for s in &mut view_limited.sequences {
        s.views.truncate(config.views);
    }
    view_limited.views = config.views;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xC0_11A9);
    let mut epochs = Vec::with_capacity(config.epochs);
    for e in 0..config.epochs {
        let stats = pretrain_epoch(
            &view_limited,
            &slices.instants,
            &mut pair,
            &mut bank,
            config,
            &mut opt,
            &mut rng,
            e,
        )?;
        on_epoch(&stats);
        epochs.push(stats);
    }
    Ok(PretrainOutcome {
        pair,
        bank,
        epochs,
        skipped_instants: slices.skipped,
    })
}

/// Backbone tensors of the online encoder, projection head excluded.
pub fn export_encoder(pair: &EncoderPair) -> Checkpoint {
    Checkpoint::from_store(
        &pair.online,
        &pair.encoder.backbone.config,
        "encoder",
        |n| !n.starts_with(PROJECTION_PREFIX),
    )
}
