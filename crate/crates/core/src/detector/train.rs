use serde::{Deserialize, Serialize};

use super::loss::{detection_loss, encode_targets, loss_value, EncodedTargets, Target};
use super::{forward, predict, Detector, DetectorConfig, TapeExec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Gradients, Tensor};

/// One training example: a clip and the labelled boxes on its key frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub clip: Tensor,
    pub targets: Vec<Target>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
}

impl TrainOptions {
    pub fn from_config(cfg: &DetectorConfig) -> Self {
        TrainOptions {
            lr: cfg.lr,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            patience: cfg.patience,
            seed: cfg.seed,
        }
    }
}

/// Per-layer weight masks; `true` marks a pruned weight. `None` leaves the
/// layer unconstrained.
pub type WeightMasks = [Option<Vec<bool>>];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Loss of every optimisation step (mean over the batch).
    pub step_loss: Vec<f32>,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f32>,
    /// Mean validation loss per epoch (empty without validation data).
    pub val_loss: Vec<f32>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Adam with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub struct Adam {
    lr: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    pub fn new(model: &Detector, lr: f32) -> Self {
        let sizes = model.layers().iter().flat_map(|l| [l.weight.len(), l.bias.len()]);
        Adam {
            lr,
            step: 0,
            m: sizes.clone().map(|n| vec![0.0; n]).collect(),
            v: sizes.map(|n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, model: &mut Detector, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for (li, layer) in model.layers_mut().iter_mut().enumerate() {
            for (slot, t) in [(2 * li, &mut layer.weight), (2 * li + 1, &mut layer.bias)] {
                let Some(g) = grads.get(Detector::param_id(li, slot % 2 == 1)) else { continue };
                let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                for (((p, &gi), mi), vi) in t.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = Self::B1 * *mi + (1.0 - Self::B1) * gi;
                    *vi = Self::B2 * *vi + (1.0 - Self::B2) * gi * gi;
                    *p -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + Self::EPS);
                }
            }
        }
    }
}

/// Gradient of the summed loss of one sample with respect to every parameter.
pub fn sample_gradients(model: &Detector, clip: &Tensor, enc: &EncodedTargets) -> Result<(f32, Gradients)> {
    let mut exec = TapeExec::new(model);
    let pred = forward(model, &mut exec, clip)?;
    let loss = detection_loss(&mut exec.tape, pred, enc)?;
    let value = exec.tape.value(loss).data()[0];
    let grads = exec.tape.backward(loss)?;
    Ok((value, grads))
}

/// Mean loss over `samples` with the float model.
pub fn mean_loss(model: &Detector, samples: &[(Tensor, EncodedTargets)]) -> Result<f32> {
    let mut total = 0.0f64;
    for (clip, enc) in samples {
        total += f64::from(loss_value(&predict(model, clip)?, enc)?);
    }
    Ok((total / samples.len().max(1) as f64) as f32)
}

fn apply_masks(model: &mut Detector, masks: Option<&WeightMasks>) {
    let Some(masks) = masks else { return };
    for (layer, mask) in model.layers_mut().iter_mut().zip(masks) {
        if let Some(mask) = mask {
            for (w, &m) in layer.weight.data_mut().iter_mut().zip(mask) {
                if m {
                    *w = 0.0;
                }
            }
        }
    }
}

fn mask_gradients(grads: &mut Gradients, masks: Option<&WeightMasks>) {
    let Some(masks) = masks else { return };
    for (li, mask) in masks.iter().enumerate() {
        if let (Some(mask), Some(g)) = (mask, grads.get_mut(Detector::param_id(li, false))) {
            for (v, &m) in g.data_mut().iter_mut().zip(mask) {
                if m {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Optimise `model` in place. Parameters of the epoch with the lowest
/// validation loss (training loss without validation data) are kept.
/// Masked weights are held at zero and receive zero gradient.
pub fn fit(
    model: &mut Detector,
    train: &[Sample],
    val: &[Sample],
    opts: &TrainOptions,
    masks: Option<&WeightMasks>,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let encode = |s: &[Sample]| -> Result<Vec<(Tensor, EncodedTargets)>> {
        s.iter()
            .map(|s| Ok((s.clip.clone(), encode_targets(model.config(), &s.targets)?)))
            .collect()
    };
    let train_set = encode(train)?;
    let val_set = encode(val)?;
    apply_masks(model, masks);

    let mut rng = Rng::stream(opts.seed, "detector.shuffle");
    let mut adam = Adam::new(model, opts.lr);
    let mut report = TrainReport::default();
    let mut best = (f32::INFINITY, model.clone(), 0usize);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..opts.epochs {
        rng.shuffle(&mut order);
        let mut epoch_total = 0.0f64;
        for batch in order.chunks(opts.batch_size) {
            let step = report.step_loss.len();
            let diverged = |loss: f32| Error::Diverged {
                epoch,
                step,
                loss,
                lr: opts.lr,
            };
            let mut grads = Gradients::default();
            let mut batch_loss = 0.0f32;
            for &i in batch {
                let (clip, enc) = &train_set[i];
                let (l, g) = sample_gradients(model, clip, enc).map_err(|e| match e {
                    Error::NonFinite(_) => diverged(f32::NAN),
                    other => other,
                })?;
                if !l.is_finite() {
                    return Err(diverged(l));
                }
                batch_loss += l;
                grads.accumulate(g);
            }
            grads.scale(1.0 / batch.len() as f32);
            mask_gradients(&mut grads, masks);
            adam.update(model, &grads);
            apply_masks(model, masks);
            if model.layers().iter().any(|l| l.weight.data().iter().chain(l.bias.data()).any(|v| !v.is_finite())) {
                return Err(diverged(batch_loss));
            }
            let mean = batch_loss / batch.len() as f32;
            report.step_loss.push(mean);
            epoch_total += f64::from(batch_loss);
        }
        let train_mean = (epoch_total / train_set.len() as f64) as f32;
        report.train_loss.push(train_mean);
        let monitored = if val_set.is_empty() {
            train_mean
        } else {
            let v = mean_loss(model, &val_set)?;
            report.val_loss.push(v);
            v
        };
        report.epochs_run = epoch + 1;
        log::debug!("epoch {epoch}: train {train_mean:.4} monitored {monitored:.4}");
        if monitored < best.0 {
            best = (monitored, model.clone(), epoch);
        } else if epoch - best.2 >= opts.patience {
            report.stopped_early = true;
            break;
        }
    }
    if report.epochs_run > 0 {
        *model = best.1;
        report.best_epoch = best.2;
    }
    Ok(report)
}

/// A trained model and the record of how it was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub model: Detector,
    pub report: TrainReport,
}

/// Train a fresh model from `config`.
pub fn train(config: &DetectorConfig, train: &[Sample], val: &[Sample]) -> Result<ModelCheckpoint> {
    let mut model = Detector::new(config.clone())?;
    let report = fit(&mut model, train, val, &TrainOptions::from_config(config), None)?;
    Ok(ModelCheckpoint { model, report })
}
