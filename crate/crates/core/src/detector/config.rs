use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and training hyperparameters of the detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Frames per clip; the last one is the key frame.
    pub clip_len: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub classes: usize,
    /// Anchor `(w, h)` pairs in normalised frame units; one per anchor slot.
    pub anchors: Vec<(f32, f32)>,
    /// Channels after the first and second stage of each branch.
    pub c1: usize,
    pub c2: usize,
    /// Channels after fusion.
    pub fused: usize,
    /// Latitude-scaled kernels in the spatial branch.
    pub eac: bool,
    /// Motion-gated ERP attention after fusion.
    pub attention: bool,
    pub erp_cap: f32,
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            clip_len: 8,
            height: 32,
            width: 64,
            in_channels: 3,
            classes: 2,
            anchors: vec![(0.08, 0.14)],
            c1: 8,
            c2: 16,
            fused: 16,
            eac: true,
            attention: true,
            erp_cap: crate::attention::DEFAULT_ERP_CAP,
            lr: 1e-3,
            batch_size: 4,
            epochs: 30,
            patience: 5,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.clip_len < 2 {
            return bad(format!("clip_len must be at least 2, got {}", self.clip_len));
        }
        if self.classes == 0 {
            return bad("classes must be at least 1".into());
        }
        if self.anchors.is_empty() {
            return bad("at least one anchor is required".into());
        }
        if self.anchors.iter().any(|&(w, h)| !(w > 0.0 && w < 1.0 && h > 0.0 && h <= 1.0)) {
            return bad(format!("anchor sizes must lie in (0, 1), got {:?}", self.anchors));
        }
        if self.height < 4 || self.height % 4 != 0 || self.width != 2 * self.height {
            return bad(format!(
                "frames must be 2:1 with height divisible by 4, got {}x{}",
                self.width, self.height
            ));
        }
        if [self.in_channels, self.c1, self.c2, self.fused].contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if !(self.erp_cap >= 1.0) {
            return bad(format!("erp_cap must be >= 1, got {}", self.erp_cap));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be finite and >= 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    /// Channels per anchor slot: box (4), objectness (1), class logits.
    pub fn slot(&self) -> usize {
        5 + self.classes
    }

    pub fn head_channels(&self) -> usize {
        self.anchors.len() * self.slot()
    }

    /// Output grid `(rows, cols)`.
    pub fn out_grid(&self) -> (usize, usize) {
        (self.height / 4, self.width / 4)
    }

    pub fn clip_shape(&self) -> [usize; 4] {
        [self.clip_len, self.in_channels, self.height, self.width]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = DetectorConfig::default();
        c.validate().unwrap();
        assert_eq!(c.head_channels(), 7);
        assert_eq!(c.out_grid(), (8, 16));
    }

    #[test]
    fn rejects_bad_settings() {
        let ok = DetectorConfig::default();
        for c in [
            DetectorConfig { clip_len: 1, ..ok.clone() },
            DetectorConfig { classes: 0, ..ok.clone() },
            DetectorConfig { width: 60, ..ok.clone() },
            DetectorConfig { height: 30, width: 60, ..ok.clone() },
            DetectorConfig { erp_cap: 0.5, ..ok.clone() },
            DetectorConfig { anchors: vec![], ..ok.clone() },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn json_defaults_fill_missing_fields() {
        let c: DetectorConfig = serde_json::from_str(r#"{"classes": 3, "eac": false}"#).unwrap();
        assert_eq!(c.classes, 3);
        assert!(!c.eac);
        assert_eq!(c.clip_len, 8);
        assert!(serde_json::from_str::<DetectorConfig>(r#"{"nope": 1}"#).is_err());
    }
}
