//! Time-range / action / confidence selection over one video.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{DebriefError, Result};
use crate::store::{DetectionStore, Event};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub video: String,
    /// Inclusive time range in seconds.
    pub from: f64,
    pub to: f64,
    /// Keep only these actions when present.
    pub actions: Option<BTreeSet<String>>,
    pub min_conf: f64,
}

impl Query {
    /// Every event of `video`.
    pub fn all(video: &str) -> Self {
        Query {
            video: video.into(),
            from: 0.0,
            to: f64::INFINITY,
            actions: None,
            min_conf: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DebriefError::InvalidQuery(m));
        if self.from.is_nan() || self.to.is_nan() || self.from > self.to {
            return bad(format!("time range [{}, {}] is not ordered", self.from, self.to));
        }
        if !(0.0..=1.0).contains(&self.min_conf) {
            return bad(format!("min_conf {} outside [0, 1]", self.min_conf));
        }
        if self.actions.as_ref().is_some_and(|a| a.is_empty()) {
            return bad("action filter is empty".into());
        }
        Ok(())
    }

    pub fn matches(&self, e: &Event) -> bool {
        e.t_seconds >= self.from
            && e.t_seconds <= self.to
            && e.confidence >= self.min_conf
            && self.actions.as_ref().is_none_or(|a| a.contains(&e.action))
    }
}

/// Events of `q.video` selected by `q`, in chronological order.
pub fn query(store: &DetectionStore, q: &Query) -> Result<Vec<Event>> {
    q.validate()?;
    let v = store.get(&q.video).ok_or_else(|| DebriefError::UnknownVideo(q.video.clone()))?;
    Ok(v.events.iter().filter(|e| q.matches(e)).cloned().collect())
}
