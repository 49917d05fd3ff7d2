//! Checkpoint directories: `manifest.txt` (key=value) next to `tensors.bin`
//! (concatenated tensor records in manifest order).

use std::path::Path;

use super::model::{Category, Layer};
use super::train::{ModelCheckpoint, TrainReport};
use super::{Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::tensor::{decode_tensors, encode_tensor, StoredTensor};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TENSORS_FILE: &str = "tensors.bin";
pub const FORMAT: &str = "panoact-detector/1";

pub(crate) fn push_config(m: &mut Manifest, cfg: &DetectorConfig) -> Result<()> {
    let serde_json::Value::Object(map) = serde_json::to_value(cfg)? else {
        unreachable!("configs serialise to objects")
    };
    for (k, v) in map {
        m.push(format!("config.{k}"), v.to_string())?;
    }
    Ok(())
}

pub(crate) fn read_config(m: &Manifest) -> Result<DetectorConfig> {
    let mut map = serde_json::Map::new();
    for (k, v) in m.with_prefix("config.") {
        let value: serde_json::Value =
            serde_json::from_str(v).map_err(|e| Error::Decode(format!("config.{k}: {e}")))?;
        map.insert(k.to_string(), value);
    }
    let cfg: DetectorConfig = serde_json::from_value(serde_json::Value::Object(map))
        .map_err(|e| Error::Decode(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn join_curve(v: &[f32]) -> String {
    v.iter().map(f32::to_string).collect::<Vec<_>>().join(",")
}

fn split_curve(key: &str, s: &str) -> Result<Vec<f32>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.parse::<f32>().map_err(|e| Error::Decode(format!("{key}: {e}"))))
        .collect()
}

/// Training metadata: epoch counts, per-epoch loss curves and the seed.
pub(crate) fn push_report(m: &mut Manifest, r: &TrainReport, seed: u64) -> Result<()> {
    m.push("train.epochs_run", r.epochs_run.to_string())?;
    m.push("train.best_epoch", r.best_epoch.to_string())?;
    m.push("train.stopped_early", r.stopped_early.to_string())?;
    m.push("train.seed", seed.to_string())?;
    m.push("train.train_loss", join_curve(&r.train_loss))?;
    m.push("train.val_loss", join_curve(&r.val_loss))
}

pub(crate) fn read_report(m: &Manifest) -> Result<TrainReport> {
    Ok(TrainReport {
        epochs_run: m.parse("train.epochs_run")?,
        best_epoch: m.parse("train.best_epoch")?,
        stopped_early: m.parse("train.stopped_early")?,
        train_loss: split_curve("train.train_loss", m.require("train.train_loss")?)?,
        val_loss: split_curve("train.val_loss", m.require("train.val_loss")?)?,
        step_loss: Vec::new(),
    })
}

pub(crate) fn write_dir(dir: &Path, manifest: &Manifest, tensors: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mp = dir.join(MANIFEST_FILE);
    std::fs::write(&mp, manifest.render()).map_err(|e| Error::io(&mp, e))?;
    let tp = dir.join(TENSORS_FILE);
    std::fs::write(&tp, tensors).map_err(|e| Error::io(&tp, e))
}

pub(crate) fn read_dir(dir: &Path) -> Result<(Manifest, Vec<u8>)> {
    let mp = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let tp = dir.join(TENSORS_FILE);
    let bytes = std::fs::read(&tp).map_err(|e| Error::io(&tp, e))?;
    Ok((Manifest::parse_text(&text)?, bytes))
}

impl ModelCheckpoint {
    /// Manifest and tensor payload as written to disk.
    pub fn encode(&self) -> Result<(Manifest, Vec<u8>)> {
        let mut m = Manifest::new();
        m.push("format", FORMAT)?;
        push_config(&mut m, self.model.config())?;
        let mut bytes = Vec::new();
        for (i, l) in self.model.layers().iter().enumerate() {
            m.push(format!("layer.{i}"), format!("{} {}", l.name, l.category.as_str()))?;
            encode_tensor(&StoredTensor::Real32(l.weight.clone()), &mut bytes);
            encode_tensor(&StoredTensor::Real32(l.bias.clone()), &mut bytes);
        }
        push_report(&mut m, &self.report, self.model.config().seed)?;
        Ok((m, bytes))
    }

    pub fn decode(m: &Manifest, bytes: &[u8]) -> Result<Self> {
        let format = m.require("format")?;
        if format != FORMAT {
            return Err(Error::Decode(format!("unsupported checkpoint format {format:?}")));
        }
        let config = read_config(m)?;
        let mut tensors = decode_tensors(bytes)?.into_iter();
        let mut layers = Vec::new();
        for i in 0.. {
            let Some(entry) = m.get(&format!("layer.{i}")) else { break };
            let (name, cat) = entry
                .split_once(' ')
                .ok_or_else(|| Error::Decode(format!("layer.{i}: expected \"name category\"")))?;
            let category = Category::parse(cat).ok_or_else(|| Error::Decode(format!("layer.{i}: unknown category {cat}")))?;
            let mut next = || {
                tensors
                    .next()
                    .ok_or_else(|| Error::Decode(format!("tensors.bin ends before layer {name}")))?
                    .into_real()
            };
            let weight = next()?;
            let bias = next()?;
            layers.push(Layer {
                name: name.to_string(),
                category,
                weight,
                bias,
            });
        }
        if tensors.next().is_some() {
            return Err(Error::Decode("tensors.bin has records beyond the listed layers".into()));
        }
        let model = Detector::from_layers(config, layers).map_err(|e| Error::Decode(e.to_string()))?;
        Ok(ModelCheckpoint {
            model,
            report: read_report(m)?,
        })
    }

    /// Bytes on disk (manifest plus tensors).
    pub fn serialized_size(&self) -> Result<usize> {
        let (m, b) = self.encode()?;
        Ok(m.render().len() + b.len())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let (m, b) = self.encode()?;
        write_dir(dir, &m, &b)
    }

    /// Load a checkpoint; the per-step loss record is not persisted.
    pub fn load(dir: &Path) -> Result<Self> {
        let (m, b) = read_dir(dir)?;
        Self::decode(&m, &b)
    }
}
