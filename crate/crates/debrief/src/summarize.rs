//! Deterministic template summaries of chronological events.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::lexicon::{Lexicon, DEFAULT_SUBJECT};
use crate::store::Event;

pub const EMPTY_SUMMARY: &str = "No detected actions in the selected range.";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    /// Runs of the same action collapsed into one sentence.
    Brief,
    /// One clause per event.
    #[default]
    Timeline,
}

impl std::str::FromStr for Style {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "brief" => Ok(Style::Brief),
            "timeline" => Ok(Style::Timeline),
            _ => Err(format!("unknown summary style {s:?} (expected brief or timeline)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Template,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    /// The events the text is built from, chronologically.
    pub events: Vec<Event>,
    pub generator: Generator,
    /// Set when an external request fell back to the template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Seconds without trailing zeros: 10 → "10", 12.5 → "12.5", 1/3 → "0.33".
pub fn fmt_seconds(t: f64) -> String {
    let s = format!("{t:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map_or_else(String::new, |f| f.to_uppercase().chain(c).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summarizer {
    pub subject: String,
    pub lexicon: Lexicon,
}

impl Default for Summarizer {
    fn default() -> Self {
        Summarizer {
            subject: DEFAULT_SUBJECT.into(),
            lexicon: Lexicon::default(),
        }
    }
}

impl Summarizer {
    pub fn summarize(&self, events: &[Event], style: Style) -> Summary {
        let mut events = events.to_vec();
        events.sort_by(Event::chrono_cmp);
        let text = match (events.is_empty(), style) {
            (true, _) => EMPTY_SUMMARY.to_string(),
            (false, Style::Timeline) => self.timeline(&events),
            (false, Style::Brief) => self.brief(&events),
        };
        Summary {
            text,
            events,
            generator: Generator::Template,
            note: None,
        }
    }

    /// Connectives cycle "At …", "By …", ", then at …": the third clause of
    /// each cycle joins the second's sentence.
    fn timeline(&self, events: &[Event]) -> String {
        let mut out = String::new();
        for (i, e) in events.iter().enumerate() {
            let t = fmt_seconds(e.t_seconds);
            let vp = self.lexicon.phrase(&e.action);
            let who = if i == 0 { self.subject.as_str() } else { "they" };
            match i % 3 {
                0 => write!(out, "{}At {t} seconds, {who} {vp}", if i > 0 { " " } else { "" }),
                1 => write!(out, " By {t} seconds, they {vp}"),
                _ => write!(out, ", then at {t} seconds they {vp}"),
            }
            .expect("writing to a String");
            if i + 1 == events.len() || (i + 1) % 3 != 2 {
                out.push('.');
            }
        }
        out
    }

    fn brief(&self, events: &[Event]) -> String {
        let mut sentences = Vec::new();
        for run in events.chunk_by(|a, b| a.action == b.action) {
            let who = if sentences.is_empty() {
                capitalize(&self.subject)
            } else {
                "Then they".to_string()
            };
            let vp = self.lexicon.phrase(&run[0].action);
            let (t0, t1) = (fmt_seconds(run[0].t_seconds), fmt_seconds(run[run.len() - 1].t_seconds));
            sentences.push(if run.len() == 1 {
                format!("{who} {vp} at {t0} seconds.")
            } else {
                format!("{who} {vp} from {t0} to {t1} seconds ({} detections).", run.len())
            });
        }
        sentences.join(" ")
    }
}

/// Template summary with the default subject and lexicon.
pub fn summarize(events: &[Event], style: Style) -> Summary {
    Summarizer::default().summarize(events, style)
}
