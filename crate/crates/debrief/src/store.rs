//! Per-video event lists and their on-disk form (one inference JSON file per
//! video).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use panoact::annotate::RoiAnnotation;
use panoact::bbox::BBox;
use panoact::detector::Detection;
use serde::{Deserialize, Serialize};

use crate::error::{DebriefError, Result};

/// One detected action instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub frame: usize,
    pub t_seconds: f64,
    pub action: String,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub wraps: bool,
}

impl Event {
    pub fn bbox(&self) -> BBox {
        let [x1, y1, x2, y2] = self.bbox;
        BBox { x1, y1, x2, y2 }
    }

    /// Chronological order with a total tie-break on the remaining fields.
    pub fn chrono_cmp(&self, other: &Event) -> Ordering {
        self.t_seconds
            .total_cmp(&other.t_seconds)
            .then(self.frame.cmp(&other.frame))
            .then_with(|| self.action.cmp(&other.action))
            .then(other.confidence.total_cmp(&self.confidence))
            .then_with(|| {
                self.bbox
                    .iter()
                    .zip(&other.bbox)
                    .map(|(a, b)| a.total_cmp(b))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
            .then(self.wraps.cmp(&other.wraps))
    }

    fn validate(&self, at: &str) -> Result<()> {
        let bad = |m: String| Err(DebriefError::Schema(format!("{at}: {m}")));
        if !(0.0..=1.0).contains(&self.confidence) {
            return bad(format!("confidence {} outside [0, 1]", self.confidence));
        }
        if !(self.t_seconds.is_finite() && self.t_seconds >= 0.0) {
            return bad(format!("t_seconds {} must be finite and non-negative", self.t_seconds));
        }
        if self.action.is_empty() {
            return bad("empty action".into());
        }
        let b = self.bbox();
        if let Err(e) = b.validate() {
            return bad(e.to_string());
        }
        if b.wraps() != self.wraps {
            return bad(format!("wraps={} disagrees with x1={} x2={}", self.wraps, b.x1, b.x2));
        }
        Ok(())
    }
}

/// Inference output exchanged between the detector and the store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceFile {
    pub video_id: String,
    pub fps: f64,
    /// Recording condition tag, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    /// Video length in seconds, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    pub events: Vec<Event>,
}

impl InferenceFile {
    /// Events from detections; `classes[label]` names the action.
    pub fn from_detections(video_id: &str, fps: f64, classes: &[String], dets: &[Detection]) -> Result<Self> {
        let events = dets
            .iter()
            .map(|d| {
                let action = classes
                    .get(d.label)
                    .ok_or_else(|| DebriefError::Schema(format!("label {} has no class name", d.label)))?;
                Ok(Event {
                    frame: d.frame,
                    t_seconds: d.frame as f64 / fps,
                    action: action.clone(),
                    confidence: d.confidence,
                    bbox: [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2],
                    wraps: d.bbox.wraps(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(InferenceFile {
            video_id: video_id.into(),
            fps,
            condition: None,
            duration: None,
            events,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoInfo {
    pub id: String,
    pub fps: f64,
    /// Explicit duration, else the last event time.
    pub duration: f64,
    pub condition: Option<String>,
    pub events: usize,
}

/// Validated, sorted, de-duplicated events of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoStore {
    pub info: VideoInfo,
    pub events: Vec<Event>,
}

impl VideoStore {
    pub fn from_file(f: InferenceFile) -> Result<Self> {
        if f.video_id.is_empty() || f.video_id.contains(['/', '\\']) || f.video_id.starts_with('.') {
            return Err(DebriefError::Schema(format!("video_id {:?} is not a plain name", f.video_id)));
        }
        if !(f.fps.is_finite() && f.fps > 0.0) {
            return Err(DebriefError::Schema(format!("fps {} must be positive", f.fps)));
        }
        for (i, e) in f.events.iter().enumerate() {
            e.validate(&format!("events[{i}]"))?;
        }
        let mut events = f.events;
        events.sort_by(Event::chrono_cmp);
        events.dedup();
        let last = events.last().map_or(0.0, |e| e.t_seconds);
        Ok(VideoStore {
            info: VideoInfo {
                id: f.video_id,
                fps: f.fps,
                duration: f.duration.unwrap_or(last).max(last),
                condition: f.condition,
                events: events.len(),
            },
            events,
        })
    }

    pub fn to_file(&self) -> InferenceFile {
        InferenceFile {
            video_id: self.info.id.clone(),
            fps: self.info.fps,
            condition: self.info.condition.clone(),
            duration: Some(self.info.duration),
            events: self.events.clone(),
        }
    }
}

/// All videos, keyed by id. Immutable once built; share it behind an `Arc`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionStore {
    videos: BTreeMap<String, VideoStore>,
}

impl DetectionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn videos(&self) -> impl Iterator<Item = &VideoStore> {
        self.videos.values()
    }

    pub fn get(&self, id: &str) -> Option<&VideoStore> {
        self.videos.get(id)
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Add a video, merging events with any already stored under its id.
    pub fn insert(&mut self, v: VideoStore) -> Result<()> {
        let merged = match self.videos.remove(&v.info.id) {
            None => v,
            Some(old) => {
                let mut f = old.to_file();
                f.events.extend(v.events);
                if f.fps != v.info.fps {
                    return Err(DebriefError::Schema(format!("video {} ingested with two frame rates", v.info.id)));
                }
                f.condition = v.info.condition.or(f.condition);
                f.duration = Some(v.info.duration.max(old.info.duration));
                VideoStore::from_file(f)?
            }
        };
        self.videos.insert(merged.info.id.clone(), merged);
        Ok(())
    }

    /// Load every `*.json` inference file in `root`; a missing root is an
    /// empty store.
    pub fn load(root: &Path) -> Result<Self> {
        let mut store = DetectionStore::new();
        if !root.exists() {
            return Ok(store);
        }
        let mut paths: Vec<_> = std::fs::read_dir(root)
            .map_err(|e| DebriefError::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|e| DebriefError::io(&p, e))?;
            store.insert(crate::ingest::parse_inference_json(&text, &p.display().to_string())?)?;
        }
        Ok(store)
    }

    /// Write one `<video_id>.json` per video.
    pub fn save(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root).map_err(|e| DebriefError::io(root, e))?;
        for v in self.videos.values() {
            let p = root.join(format!("{}.json", v.info.id));
            let text = serde_json::to_string_pretty(&v.to_file()).expect("store serialises");
            std::fs::write(&p, text + "\n").map_err(|e| DebriefError::io(&p, e))?;
        }
        Ok(())
    }
}

/// Ground-truth annotations as events with confidence 1.
pub fn events_from_annotations(anns: &[RoiAnnotation]) -> Vec<(String, Event)> {
    anns.iter()
        .flat_map(|a| {
            a.entries.iter().map(move |e| {
                (
                    a.video_id.clone(),
                    Event {
                        frame: e.frame,
                        t_seconds: e.t_seconds,
                        action: a.action.clone(),
                        confidence: 1.0,
                        bbox: [e.bbox.x1, e.bbox.y1, e.bbox.x2, e.bbox.y2],
                        wraps: e.bbox.wraps(),
                    },
                )
            })
        })
        .collect()
}
