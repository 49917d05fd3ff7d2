use serde::{Deserialize, Serialize};

use super::policy::OptimizationPolicy;
use super::prune::{prune_iterative, PruneConfig, PruneOutcome};
use super::qmodel::{calibrate, quantize, OptimizeMeta, QuantizedModel, CALIBRATION_PERCENTILE};
use crate::detector::{ModelCheckpoint, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Settings of the prune-then-quantize pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub policy: OptimizationPolicy,
    /// Pruning runs only when `prune.iterations > 0` and the policy allows
    /// pruning somewhere.
    pub prune: PruneConfig,
    /// Upper bound on calibration clips.
    pub calibration_frames: usize,
    pub percentile: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            policy: OptimizationPolicy::default(),
            prune: PruneConfig::default(),
            calibration_frames: 1000,
            percentile: CALIBRATION_PERCENTILE,
        }
    }
}

impl OptimizeConfig {
    /// Same settings with pruning switched off.
    pub fn quantize_only(&self) -> Self {
        OptimizeConfig {
            policy: OptimizationPolicy::quantize_only(),
            prune: PruneConfig {
                iterations: 0,
                ..self.prune.clone()
            },
            ..self.clone()
        }
    }

    fn prunes(&self) -> bool {
        let p = &self.policy;
        self.prune.iterations > 0
            && [p.eac, p.spatial, p.temporal, p.fusion, p.attention, p.head].iter().any(|c| c.prune)
    }
}

/// Optionally prune and fine-tune, then calibrate on up to
/// `calibration_frames` clips and quantize.
pub fn optimize_model(
    ck: &ModelCheckpoint,
    cfg: &OptimizeConfig,
    train: &[Sample],
    val: &[Sample],
    calibration: &[Tensor],
) -> Result<(QuantizedModel, Option<PruneOutcome>)> {
    if calibration.is_empty() || cfg.calibration_frames == 0 {
        return Err(Error::InvalidArgument("quantization needs at least one calibration clip".into()));
    }
    let pruned = if cfg.prunes() {
        Some(prune_iterative(&ck.model, &cfg.policy, &cfg.prune, train, val, None)?)
    } else {
        None
    };
    let model = pruned.as_ref().map_or(&ck.model, |p| &p.model);
    let clips = &calibration[..calibration.len().min(cfg.calibration_frames)];
    let calib = calibrate(model, clips, &cfg.policy, cfg.percentile)?;
    let degenerate = calib.degenerate_layers();
    if !degenerate.is_empty() {
        log::warn!("calibration saw only zeros at layers {degenerate:?}");
    }
    let mut qm = quantize(model, &cfg.policy, &calib)?;
    qm.report = ck.report.clone();
    qm.meta = OptimizeMeta {
        prune_iterations: pruned.as_ref().map_or(0, |p| p.mask.iteration),
        sparsity: pruned.as_ref().map_or(0.0, |p| p.mask.sparsity()),
        calibration_frames: calib.frames,
    };
    Ok((qm, pruned))
}
