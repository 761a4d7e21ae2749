//! Fixtures shared by the criterion benches.

use nanohtnet::train::DtstProbe;
use nanohtnet::{
    ModelConfig, NanoHtNet, ParamStore, PoseSequence, Result, SkeletonTopology, Tensor,
};

/// Smooth, deterministic 2D keypoints in roughly `[-0.5, 0.5]`.
pub fn window(frames: usize, joints: usize) -> PoseSequence {
    let data = (0..frames * joints * 2)
        .map(|i| 0.5 * ((i as f32) * 0.37).sin())
        .collect();
    PoseSequence::new(frames, joints, 2, data).expect("window shape")
}

/// A freshly initialised model and one input window of its receptive field.
pub fn model(cfg: &ModelConfig) -> Result<(NanoHtNet, ParamStore<f32>, PoseSequence)> {
    let (m, s) = NanoHtNet::init::<f32>(cfg, &SkeletonTopology::h36m17(), 0)?;
    Ok((m, s, window(cfg.receptive_field, cfg.joints)))
}

/// Per-(frame, joint) attention stack matching `cfg`, and `[T·J × C]` tokens.
pub fn dtst(cfg: &ModelConfig) -> Result<(DtstProbe, Tensor<f32>)> {
    let probe = DtstProbe::new(
        cfg.joints,
        cfg.receptive_field,
        cfg.channels,
        cfg.heads,
        cfg.layers,
        0,
    )?;
    let n = cfg.receptive_field * cfg.joints;
    let data = (0..n * cfg.channels)
        .map(|i| ((i as f32) * 0.013).cos())
        .collect();
    let tokens = Tensor::new(&[n, cfg.channels], data)?;
    Ok((probe, tokens))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_run() {
        let cfg = ModelConfig::desk();
        let (m, s, x) = model(&cfg).unwrap();
        let y = m.predict(&s, &x).unwrap();
        assert_eq!(y.joints(), cfg.joints);
        let (p, t) = dtst(&ModelConfig {
            receptive_field: 9,
            ..cfg
        })
        .unwrap();
        assert_eq!(p.forward(&t).unwrap().shape(), t.shape());
    }
}
