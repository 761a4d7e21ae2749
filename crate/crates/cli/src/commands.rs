use crate::{Common, Preset};
use anyhow::{Context, Result};
use nanohtnet::datagen::{generate_dataset, read_dataset, write_dataset, Dataset, DatasetConfig};
use nanohtnet::model::{
    flops_count, load_checkpoint, param_count, save_checkpoint, Checkpoint, ModelConfig, NanoHtNet,
};
use nanohtnet::poseclr::{export_encoder, pretrain as run_pretrain, PretrainConfig};
use nanohtnet::train::{
    bench_dtst_attention, bench_model, build_samples, evaluate, train as run_train, TrainConfig,
};
use nanohtnet::{Error, ParamStore, SkeletonTopology};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = serde_json::from_str(&text)
        .map_err(Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg)
}

fn model_config(common: &Common, preset: Preset) -> Result<ModelConfig> {
    let cfg = match &common.config {
        Some(_) => load_config(common.config.as_deref())?,
        None => match preset {
            Preset::Desk => ModelConfig::desk(),
            Preset::Flagship => ModelConfig::flagship(),
            Preset::Large => ModelConfig::large(),
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

/// One line to stdout; a closed pipe is not an error.
fn say(line: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Pretty JSON to `out`, or to stdout when no path is given.
fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?,
        None => say(&text)?,
    }
    Ok(())
}

fn read_data(path: &Path, topo: &SkeletonTopology) -> Result<Dataset> {
    read_dataset(path, topo).with_context(|| format!("reading {}", path.display()))
}

/// Model and weights restored from a full model checkpoint.
fn load_model(path: &Path, topo: &SkeletonTopology) -> Result<(NanoHtNet, ParamStore<f32>)> {
    let ck = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
    if ck.manifest.kind != "model" {
        return Err(Error::Config(format!(
            "{} holds {:?} weights; a trained model is needed",
            path.display(),
            ck.manifest.kind
        ))
        .into());
    }
    let (model, mut store) = NanoHtNet::init::<f32>(&ck.manifest.config, topo, 0)?;
    ck.restore(&mut store)
        .with_context(|| format!("restoring {}", path.display()))?;
    Ok((model, store))
}

pub fn gen_data(common: &Common) -> Result<()> {
    let mut cfg: DatasetConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let topo = SkeletonTopology::h36m17();
    let data = generate_dataset(&cfg, &topo)?;
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("data.pseq"));
    write_dataset(&out, &data).with_context(|| format!("writing {}", out.display()))?;
    emit(
        &json!({
            "path": out,
            "sequences": data.sequences.len(),
            "views": data.views,
            "joints": data.joints,
            "frames": data.total_frames(),
        }),
        None,
    )
}

pub fn pretrain(common: &Common, data: &Path) -> Result<()> {
    let mut cfg: PretrainConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let topo = SkeletonTopology::h36m17();
    let dataset = read_data(data, &topo)?;
    let mut log_err = None;
    let outcome = run_pretrain(&cfg, &dataset, &topo, &mut |stats| {
        if let Err(e) = serde_json::to_string(stats)
            .map_err(anyhow::Error::from)
            .and_then(|l| say(&l))
        {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("encoder.ckpt"));
    export_encoder(&outcome.pair)
        .save(&out)
        .with_context(|| format!("writing {}", out.display()))?;
    let line = json!({
        "encoder": out,
        "skipped_instants": outcome.skipped_instants,
        "bank_fill": outcome.bank.len(),
    });
    say(&line.to_string())
}

pub fn train(
    common: &Common,
    data: Option<PathBuf>,
    eval_data: Option<PathBuf>,
    pretrained: Option<PathBuf>,
    epochs: Option<usize>,
) -> Result<()> {
    let mut cfg: TrainConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.dataset = data.or(cfg.dataset);
    cfg.eval_dataset = eval_data.or(cfg.eval_dataset);
    cfg.pretrained = pretrained.or(cfg.pretrained);
    cfg.validate()?;
    let topo = SkeletonTopology::h36m17();
    let path = cfg.dataset.clone().ok_or_else(|| {
        Error::Config("no training dataset: pass --data or set \"dataset\"".into())
    })?;
    let full = read_data(&path, &topo)?;
    let (train_set, eval_set) = match &cfg.eval_dataset {
        Some(p) => (full, read_data(p, &topo)?),
        None => {
            if cfg.eval_sequences == 0 || cfg.eval_sequences >= full.sequences.len() {
                return Err(Error::Config(format!(
                    "cannot hold out {} of {} sequences",
                    cfg.eval_sequences,
                    full.sequences.len()
                ))
                .into());
            }
            full.split_tail(cfg.eval_sequences)
        }
    };
    let init = match &cfg.pretrained {
        Some(p) => Some(Checkpoint::load(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };

    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&cfg)? + "\n",
    )?;
    let mut log = BufWriter::new(File::create(dir.join("train.jsonl"))?);
    let mut log_err = None;
    let outcome = run_train(
        &cfg,
        &train_set,
        &eval_set,
        &topo,
        init.as_ref(),
        &mut |epoch| {
            let line = json!({
                "epoch": epoch.epoch,
                "lr": epoch.lr,
                "train_loss": epoch.train_loss,
                "eval_mpjpe": epoch.eval.overall.mpjpe,
                "eval_p_mpjpe": epoch.eval.overall.p_mpjpe,
                "eval_centre_mpjpe": epoch.eval.centre.mpjpe,
                "seconds": epoch.seconds,
            });
            let written = writeln!(log, "{line}").and_then(|_| log.flush());
            if let Err(e) = written
                .map_err(anyhow::Error::from)
                .and_then(|_| say(&line.to_string()))
            {
                log_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(e.context("writing training log"));
    }
    save_checkpoint(&outcome.best, &cfg.model, &dir.join("best.ckpt"))?;
    save_checkpoint(&outcome.last, &cfg.model, &dir.join("last.ckpt"))?;
    emit(&outcome.report, Some(&dir.join("report.json")))?;
    let summary = json!({
        "best_epoch": outcome.report.best_epoch,
        "best_mpjpe": outcome.report.best_mpjpe,
        "baseline_mpjpe": outcome.report.baseline.overall.mpjpe,
        "out": dir,
    });
    say(&summary.to_string())
}

pub fn eval(common: &Common, checkpoint: &Path, data: &Path, stride: usize) -> Result<()> {
    let topo = SkeletonTopology::h36m17();
    let (model, store) = load_model(checkpoint, &topo)?;
    let dataset = read_data(data, &topo)?;
    let samples = build_samples(&dataset, model.config(), &topo, stride)?;
    if samples.is_empty() {
        return Err(Error::Config(format!(
            "no sequence has the {} frames the model needs",
            model.config().receptive_field
        ))
        .into());
    }
    let report = evaluate(&model, &store, &samples)?;
    emit(&report, common.out.as_deref())
}

pub fn flops(common: &Common, preset: Preset) -> Result<()> {
    let cfg = model_config(common, preset)?;
    let f = flops_count(&cfg)?;
    let p = param_count(&cfg)?;
    emit(
        &json!({ "config": cfg, "params": p, "flops": f }),
        common.out.as_deref(),
    )
}

pub fn bench(
    common: &Common,
    checkpoint: Option<&Path>,
    preset: Preset,
    batch: usize,
    iterations: usize,
    warmup: usize,
    dtst: bool,
) -> Result<()> {
    let topo = SkeletonTopology::h36m17();
    let seed = common.seed.unwrap_or(0);
    let (model, store) = match checkpoint {
        Some(p) => load_model(p, &topo)?,
        None => NanoHtNet::init::<f32>(&model_config(common, preset)?, &topo, seed)?,
    };
    let report = bench_model(&model, &store, batch, iterations, warmup, seed)?;
    let cfg = model.config();
    let probe = if dtst {
        let probe = nanohtnet::train::DtstProbe::new(
            cfg.joints,
            cfg.receptive_field,
            cfg.channels,
            cfg.heads,
            cfg.layers,
            seed,
        )?;
        Some(bench_dtst_attention(&probe, batch, iterations, warmup)?)
    } else {
        None
    };
    emit(
        &json!({ "model": report, "dtst_attention": probe }),
        common.out.as_deref(),
    )
}

pub fn dump_attn(
    common: &Common,
    checkpoint: &Path,
    data: &Path,
    sequence: usize,
    view: usize,
    start: usize,
) -> Result<()> {
    let topo = SkeletonTopology::h36m17();
    let (model, store) = load_model(checkpoint, &topo)?;
    let dataset = read_data(data, &topo)?;
    let seq = dataset.sequences.get(sequence).ok_or_else(|| {
        Error::Config(format!(
            "sequence {sequence} of {}",
            dataset.sequences.len()
        ))
    })?;
    let v = seq
        .views
        .get(view)
        .ok_or_else(|| Error::Config(format!("view {view} of {}", seq.views.len())))?;
    let t = model.config().receptive_field;
    if start + t > seq.frames() {
        return Err(Error::Config(format!(
            "window {start}..{} exceeds the {} frames of sequence {sequence}",
            start + t,
            seq.frames()
        ))
        .into());
    }
    let window = v.keypoints.window(start, t)?;
    let (_, maps) = model.predict_with_attention(&store, &window)?;
    let maps: Vec<_> = maps
        .into_iter()
        .map(|(name, m)| json!({ "name": name, "shape": m.shape(), "data": m.data() }))
        .collect();
    emit(
        &json!({ "sequence": sequence, "view": view, "start": start, "maps": maps }),
        common.out.as_deref(),
    )
}
