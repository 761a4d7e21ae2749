//! Wall-clock latency of forward passes on the host.

use crate::error::Result;
use crate::mixers::{Ctx, SelfAttention};
use crate::model::{flops_count, NanoHtNet};
use crate::param::ParamStore;
use crate::pose::PoseSequence;
use crate::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub batch: usize,
    pub iterations: usize,
    /// Per-batch latency, milliseconds.
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    /// Windows per second.
    pub throughput: f64,
    /// Analytic FLOPs of one window.
    pub flops_per_window: u64,
    pub achieved_gflops: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn summarize(mut times: Vec<f64>, batch: usize, flops_per_window: u64) -> BenchReport {
    times.sort_by(f64::total_cmp);
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let throughput = batch as f64 / mean;
    BenchReport {
        batch,
        iterations: times.len(),
        p50_ms: percentile(&times, 0.5) * 1e3,
        p95_ms: percentile(&times, 0.95) * 1e3,
        mean_ms: mean * 1e3,
        throughput,
        flops_per_window,
        achieved_gflops: throughput * flops_per_window as f64 / 1e9,
    }
}

fn time_runs(
    warmup: usize,
    iterations: usize,
    mut run: impl FnMut() -> Result<()>,
) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        run()?;
    }
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations.max(1) {
        let t = Instant::now();
        run()?;
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(times)
}

fn random_window(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> PoseSequence {
    let data = (0..frames * joints * 2)
        .map(|_| rng.gen_range(-0.5..0.5))
        .collect();
    PoseSequence::new(frames, joints, 2, data).expect("window shape")
}

/// Times gradient-free forward passes over batches of random windows.
pub fn bench_model(
    model: &NanoHtNet,
    store: &ParamStore<f32>,
    batch: usize,
    iterations: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchReport> {
    let cfg = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f32>> = (0..batch.max(1))
        .map(|_| {
            model
                .backbone
                .input_tensor(&random_window(&mut rng, cfg.receptive_field, cfg.joints))
        })
        .collect::<Result<_>>()?;
    let times = time_runs(warmup, iterations, || {
        let mut tape = Tape::<f32>::no_grad();
        let bound = store.bind_frozen(&mut tape);
        let mut cx = Ctx::new(&mut tape, &bound);
        for x in &inputs {
            model.forward(&mut cx, x)?;
        }
        Ok(())
    })?;
    Ok(summarize(times, batch.max(1), flops_count(cfg)?.total))
}

/// Attention stack over per-(frame, joint) tokens: each layer attends over
/// all `T` frames of every joint, then over all `J` joints of every frame.
pub struct DtstProbe {
    pub joints: usize,
    pub frames: usize,
    pub channels: usize,
    temporal: Vec<SelfAttention>,
    spatial: Vec<SelfAttention>,
    store: ParamStore<f32>,
}

impl DtstProbe {
    pub fn new(
        joints: usize,
        frames: usize,
        channels: usize,
        heads: usize,
        layers: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut temporal = Vec::new();
        let mut spatial = Vec::new();
        for l in 0..layers {
            temporal.push(SelfAttention::new(
                &mut store,
                &format!("t{l}"),
                channels,
                heads,
                &mut rng,
            )?);
            spatial.push(SelfAttention::new(
                &mut store,
                &format!("s{l}"),
                channels,
                heads,
                &mut rng,
            )?);
        }
        Ok(DtstProbe {
            joints,
            frames,
            channels,
            temporal,
            spatial,
            store,
        })
    }

    /// Tokens are `[T·J × C]`, row `t·J + j`.
    pub fn forward(&self, tokens: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (t, j) = (self.frames, self.joints);
        let mut tape = Tape::<f32>::no_grad();
        let bound = self.store.bind_frozen(&mut tape);
        let mut cx = Ctx::new(&mut tape, &bound);
        let mut x = cx.tape.constant(tokens.clone());
        for (ta, sa) in self.temporal.iter().zip(&self.spatial) {
            let mut rows = Vec::with_capacity(j);
            for joint in 0..j {
                let idx: Vec<usize> = (0..t).map(|f| f * j + joint).collect();
                let seq = cx.tape.gather_rows(x, &idx)?;
                rows.push((idx, ta.forward(&mut cx, seq, "")?));
            }
            let mut acc = None;
            for (idx, y) in rows {
                let placed = cx.tape.scatter_rows(y, &idx, t * j)?;
                acc = Some(match acc {
                    None => placed,
                    Some(a) => cx.tape.add(a, placed)?,
                });
            }
            x = acc.expect("at least one joint");
            let mut frames = Vec::with_capacity(t);
            for f in 0..t {
                let body = cx.tape.slice_rows(x, f * j, j)?;
                frames.push(sa.forward(&mut cx, body, "")?);
            }
            let mut stacked = Vec::with_capacity(t * j * self.channels);
            for v in frames {
                stacked.extend_from_slice(cx.tape.value(v).data());
            }
            x = cx
                .tape
                .constant(Tensor::new(&[t * j, self.channels], stacked)?);
        }
        Ok(cx.tape.value(x).clone())
    }
}

/// Times the DTST attention stack on random tokens, one window per batch
/// element. `flops_per_window` is left at zero.
pub fn bench_dtst_attention(
    probe: &DtstProbe,
    batch: usize,
    iterations: usize,
    warmup: usize,
) -> Result<BenchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = probe.frames * probe.joints * probe.channels;
    let tokens = Tensor::new(
        &[probe.frames * probe.joints, probe.channels],
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let times = time_runs(warmup, iterations, || {
        for _ in 0..batch.max(1) {
            probe.forward(&tokens)?;
        }
        Ok(())
    })?;
    Ok(summarize(times, batch.max(1), 0))
}
