use serde::{Deserialize, Serialize};

use super::policy::OptimizationPolicy;
use crate::detector::{fit, Detector, Sample, TrainOptions, TrainReport};
use crate::error::{Error, Result};

/// Which weights of each prunable layer are removed.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneMask {
    /// Per layer in model order; `None` for layers the policy never prunes.
    pub masks: Vec<Option<Vec<bool>>>,
    /// Completed prune steps.
    pub iteration: usize,
    /// Sparsity over prunable weights after each step.
    pub history: Vec<f64>,
}

impl PruneMask {
    /// Empty mask over the layers `policy` allows to be pruned.
    pub fn new(model: &Detector, policy: &OptimizationPolicy) -> Self {
        PruneMask {
            masks: model
                .layers()
                .iter()
                .map(|l| policy.for_category(l.category).prune.then(|| vec![false; l.weight.len()]))
                .collect(),
            iteration: 0,
            history: Vec::new(),
        }
    }

    pub fn prunable(&self) -> usize {
        self.masks.iter().flatten().map(Vec::len).sum()
    }

    pub fn masked(&self) -> usize {
        self.masks.iter().flatten().map(|m| m.iter().filter(|&&b| b).count()).sum()
    }

    pub fn unmasked(&self) -> usize {
        self.prunable() - self.masked()
    }

    pub fn sparsity(&self) -> f64 {
        self.masked() as f64 / self.prunable().max(1) as f64
    }

    pub fn is_masked(&self, layer: usize, index: usize) -> bool {
        self.masks
            .get(layer)
            .and_then(Option::as_ref)
            .is_some_and(|m| m[index])
    }
}

/// `⌈rate · unmasked⌉`, at least 1. A 1e-9 slack keeps decimal rates such as
/// 0.02 from rounding up when the product is an exact integer.
pub fn prune_count(rate: f64, unmasked: usize) -> usize {
    ((rate * unmasked as f64 - 1e-9).ceil() as usize).clamp(1, unmasked.max(1))
}

/// Mask the `prune_count(rate, unmasked)` unmasked prunable weights of
/// smallest magnitude, ranked globally across layers with ties broken by
/// (layer order, flat index). Newly masked weights are zeroed in `model`.
/// Returns the `(layer, index)` pairs masked by this step in rank order.
pub fn prune_step(model: &mut Detector, mask: &mut PruneMask, rate: f64) -> Result<Vec<(usize, usize)>> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!("prune rate {rate} must lie in (0, 1)")));
    }
    if mask.masks.len() != model.layers().len() {
        return Err(Error::InvalidArgument("prune mask does not match the model's layers".into()));
    }
    let mut candidates: Vec<(f32, usize, usize)> = Vec::with_capacity(mask.unmasked());
    for (li, (layer, m)) in model.layers().iter().zip(&mask.masks).enumerate() {
        if let Some(m) = m {
            for (i, (&w, &gone)) in layer.weight.data().iter().zip(m).enumerate() {
                if !gone {
                    candidates.push((w.abs(), li, i));
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("every prunable weight is already masked".into()));
    }
    let k = prune_count(rate, candidates.len());
    let by_rank = |a: &(f32, usize, usize), b: &(f32, usize, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2));
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k, by_rank);
    }
    candidates.truncate(k);
    candidates.sort_unstable_by(by_rank);
    let layers = model.layers_mut();
    for &(_, li, i) in &candidates {
        if let Some(m) = mask.masks[li].as_mut() {
            m[i] = true;
        }
        layers[li].weight.data_mut()[i] = 0.0;
    }
    mask.iteration += 1;
    mask.history.push(mask.sparsity());
    Ok(candidates.into_iter().map(|(_, l, i)| (l, i)).collect())
}

/// Fine-tuning after each prune step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 1e-5,
            epochs: 10,
            batch_size: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub rate: f64,
    pub iterations: usize,
    pub finetune: FinetuneConfig,
    /// Stop once the validation score falls more than this below the
    /// unpruned model's.
    pub max_score_drop: Option<f64>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            rate: 0.02,
            iterations: 5,
            finetune: FinetuneConfig::default(),
            max_score_drop: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PruneOutcome {
    pub model: Detector,
    pub mask: PruneMask,
    pub finetune: Vec<TrainReport>,
    /// Validation score before pruning and after each kept iteration.
    pub scores: Vec<f64>,
    pub stopped_early: bool,
}

/// Alternate prune steps and masked fine-tuning. With a scorer and a budget,
/// the first iteration that drops the score by more than the budget is
/// discarded and the previous state returned.
pub fn prune_iterative(
    model: &Detector,
    policy: &OptimizationPolicy,
    cfg: &PruneConfig,
    train: &[Sample],
    val: &[Sample],
    mut score: Option<&mut dyn FnMut(&Detector) -> Result<f64>>,
) -> Result<PruneOutcome> {
    if cfg.iterations > 0 && cfg.finetune.epochs > 0 && train.is_empty() {
        return Err(Error::InvalidArgument("fine-tuning needs training samples".into()));
    }
    let mut best = PruneOutcome {
        model: model.clone(),
        mask: PruneMask::new(model, policy),
        finetune: Vec::new(),
        scores: Vec::new(),
        stopped_early: false,
    };
    let baseline = match score.as_mut() {
        Some(f) => Some(f(model)?),
        None => None,
    };
    best.scores.extend(baseline);
    let opts = TrainOptions {
        lr: cfg.finetune.lr,
        epochs: cfg.finetune.epochs,
        batch_size: cfg.finetune.batch_size,
        patience: cfg.finetune.epochs,
        seed: cfg.finetune.seed,
    };
    for it in 0..cfg.iterations {
        let mut model = best.model.clone();
        let mut mask = best.mask.clone();
        prune_step(&mut model, &mut mask, cfg.rate)?;
        let report = if cfg.finetune.epochs > 0 {
            fit(&mut model, train, val, &opts, Some(&mask.masks))?
        } else {
            TrainReport::default()
        };
        if let (Some(f), Some(base)) = (score.as_mut(), baseline) {
            let s = f(&model)?;
            if let Some(budget) = cfg.max_score_drop {
                if base - s > budget {
                    log::info!("prune iteration {it}: score {s:.4} exceeds the drop budget; stopping");
                    best.stopped_early = true;
                    break;
                }
            }
            best.scores.push(s);
        }
        best.model = model;
        best.mask = mask;
        best.finetune.push(report);
    }
    Ok(best)
}
