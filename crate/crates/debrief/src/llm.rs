//! Optional external text generation: POST `{prompt, max_tokens}` to a
//! configured endpoint, falling back to the template summary on any failure.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{DebriefError, Result};
use crate::store::Event;
use crate::summarize::{fmt_seconds, Generator, Style, Summarizer, Summary, EMPTY_SUMMARY};

pub const ENV_ENDPOINT: &str = "PANOACT_SUMMARIZER_URL";
pub const ENV_KEY: &str = "PANOACT_SUMMARIZER_KEY";
pub const ENV_TIMEOUT: &str = "PANOACT_SUMMARIZER_TIMEOUT_SECS";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Clone, Debug, PartialEq)]
pub struct ExternalConfig {
    pub endpoint: String,
    /// Sent as a bearer token when present.
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_tokens: u32,
}

impl ExternalConfig {
    pub fn new(endpoint: &str) -> Self {
        ExternalConfig {
            endpoint: endpoint.into(),
            api_key: None,
            timeout: DEFAULT_TIMEOUT,
            max_tokens: 256,
        }
    }

    /// Read the endpoint, key and timeout from the environment; `None` when
    /// no endpoint is set.
    pub fn from_env() -> Result<Option<Self>> {
        let Ok(endpoint) = std::env::var(ENV_ENDPOINT) else {
            return Ok(None);
        };
        let mut cfg = ExternalConfig::new(&endpoint);
        cfg.api_key = std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty());
        if let Ok(t) = std::env::var(ENV_TIMEOUT) {
            let secs: f64 = t
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite() && *s > 0.0)
                .ok_or_else(|| DebriefError::Schema(format!("{ENV_TIMEOUT}={t:?} is not a positive number")))?;
            cfg.timeout = Duration::from_secs_f64(secs);
        }
        Ok(Some(cfg))
    }
}

/// Event table (one `| t | action | confidence |` row per event) followed
/// by the style instruction.
pub fn build_prompt(events: &[Event], style: Style, subject: &str) -> String {
    let mut p = String::from("Detected actions in a 360-degree training video:\n| t_seconds | action | confidence |\n|---|---|---|\n");
    for e in events {
        p += &format!("| {} | {} | {:.2} |\n", fmt_seconds(e.t_seconds), e.action, e.confidence);
    }
    p += &match style {
        Style::Timeline => format!(
            "\nWrite a chronological debrief with one clause per row, citing each time in seconds. Refer to the actor as \"{subject}\"."
        ),
        Style::Brief => format!(
            "\nWrite a brief debrief, merging consecutive rows of the same action into one sentence with its time span. Refer to the actor as \"{subject}\"."
        ),
    };
    p
}

#[derive(Serialize)]
struct Request<'a> {
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct Response {
    text: String,
}

async fn request(cfg: &ExternalConfig, prompt: &str) -> std::result::Result<String, String> {
    let client = reqwest::Client::builder().timeout(cfg.timeout).build().map_err(|e| e.to_string())?;
    let mut req = client.post(&cfg.endpoint).json(&Request {
        prompt,
        max_tokens: cfg.max_tokens,
    });
    if let Some(k) = &cfg.api_key {
        req = req.bearer_auth(k);
    }
    let resp = req.send().await.map_err(|e| e.to_string())?;
    let status = resp.status();
    let body = resp.text().await.map_err(|e| e.to_string())?;
    if !status.is_success() {
        return Err(format!("status {status}"));
    }
    // A JSON body with a "text" field, otherwise the raw body.
    let text = serde_json::from_str::<Response>(&body).map_or(body, |r| r.text);
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err("empty response".into());
    }
    Ok(text)
}

/// Summary from the external endpoint, or the template summary (with a note
/// and a logged warning) when it is unset, unreachable, slow or malformed.
/// Empty selections never leave the process.
pub async fn llm_summarize(events: &[Event], style: Style, summarizer: &Summarizer, cfg: Option<&ExternalConfig>) -> Summary {
    let template = summarizer.summarize(events, style);
    let Some(cfg) = cfg else {
        return template;
    };
    if template.text == EMPTY_SUMMARY {
        return template;
    }
    let prompt = build_prompt(&template.events, style, &summarizer.subject);
    match request(cfg, &prompt).await {
        Ok(text) => Summary {
            text,
            generator: Generator::External,
            ..template
        },
        Err(e) => {
            log::warn!("external summarizer at {} failed ({e}); using the template", cfg.endpoint);
            Summary {
                note: Some(format!("external summarizer failed: {e}")),
                ..template
            }
        }
    }
}
