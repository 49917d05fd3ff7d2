//! The single JSON configuration file and `--set section.key=value`
//! overrides.

use std::path::{Path, PathBuf};

use panoact::annotate::TrackMethod;
use panoact::detector::DetectorConfig;
use panoact::eval::EvalConfig;
use panoact::optimize::{BenchConfig, OptimizeConfig};
use panoact::postprocess::PostprocessSettings;
use panoact::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Step between consecutive key frames.
    pub stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { stride: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub baseline_min_conf: f64,
    pub timing_frames: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = BenchConfig::default();
        BenchSection {
            baseline_min_conf: b.baseline_min_conf,
            timing_frames: b.timing_frames,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub method: TrackMethod,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig { method: TrackMethod::Ncc }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebriefConfig {
    pub subject: String,
    /// `action = verb phrase` file; the built-in lexicon when absent.
    pub lexicon: Option<PathBuf>,
    pub bind: String,
}

impl Default for DebriefConfig {
    fn default() -> Self {
        DebriefConfig {
            subject: panoact_debrief::DEFAULT_SUBJECT.into(),
            lexicon: None,
            bind: "127.0.0.1:8080".into(),
        }
    }
}

/// Every module's settings. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Drives generation and the train/val/test split.
    pub seed: u64,
    pub synth: SynthConfig,
    pub data: DataConfig,
    pub detector: DetectorConfig,
    pub postprocess: PostprocessSettings,
    pub optimize: OptimizeConfig,
    /// `classes` is taken from the dataset.
    pub eval: EvalConfig,
    pub bench: BenchSection,
    pub annotate: AnnotateConfig,
    pub debrief: DebriefConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            synth: SynthConfig::default(),
            data: DataConfig::default(),
            // Short clips so that the default synthetic videos yield several
            // key frames each.
            detector: DetectorConfig {
                clip_len: 4,
                ..DetectorConfig::default()
            },
            postprocess: PostprocessSettings::default(),
            optimize: OptimizeConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchSection::default(),
            annotate: AnnotateConfig::default(),
            debrief: DebriefConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", p.display())))?
            }
            None => serde_json::to_value(Config::default()).expect("config serialises"),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Config = serde_json::from_value(value).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.synth.validate()?;
        self.postprocess.validate()?;
        let mut eval = self.eval.clone();
        eval.classes.clear();
        eval.validate()?;
        if self.data.stride == 0 {
            return Err(invalid("data.stride must be positive"));
        }
        Ok(())
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            optimize: self.optimize.clone(),
            postprocess: self.postprocess.clone(),
            baseline_min_conf: self.bench.baseline_min_conf,
            timing_frames: self.bench.timing_frames,
        }
    }
}

/// Set `a.b.c=value` in a JSON tree. The value is read as JSON, or as a
/// string when it does not parse. Keys must already exist (optional fields
/// serialise as null) so typos fail.
pub fn apply_override(root: &mut Value, assignment: &str) -> CliResult<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, k) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| invalid(format!("override {path:?}: {} is not a section", keys[..i].join("."))))?;
        if !obj.contains_key(*k) {
            return Err(invalid(format!("override {path:?}: unknown key {k:?}")));
        }
        if i + 1 == keys.len() {
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(*k).expect("checked above");
    }
    unreachable!("split yields at least one key")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = Config::load(None, &["detector.epochs=3".into(), "postprocess.tau=0.4".into(), "debrief.subject=the crew".into()]).unwrap();
        assert_eq!(cfg.detector.epochs, 3);
        assert_eq!(cfg.postprocess.tau, 0.4);
        assert_eq!(cfg.debrief.subject, "the crew");
        assert!(Config::load(None, &["detector.epoch=3".into()]).is_err());
        assert!(Config::load(None, &["seed.x=3".into()]).is_err());
        assert!(Config::load(None, &["postprocess.tau=2".into()]).is_err());
        assert!(Config::load(None, &["noequals".into()]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, serde_json::to_string_pretty(&Config::default()).unwrap()).unwrap();
        assert_eq!(Config::load(Some(&p), &[]).unwrap(), Config::default());
        std::fs::write(&p, r#"{"detector": {"epochs": 2}, "extra": 1}"#).unwrap();
        assert!(Config::load(Some(&p), &[]).is_err());
        std::fs::write(&p, r#"{"detector": {"epochs": 2}}"#).unwrap();
        assert_eq!(Config::load(Some(&p), &[]).unwrap().detector.epochs, 2);
    }
}
