//! Debriefing back end: a detection store built from inference output or
//! annotation CSV, time/action queries, template summaries with an optional
//! external generator, and an HTTP/JSON API.

pub mod error;
pub mod ingest;
pub mod lexicon;
pub mod llm;
pub mod query;
pub mod server;
pub mod store;
pub mod summarize;

pub use error::{DebriefError, Result};
pub use ingest::{ingest_file, parse_annotation_csv, parse_inference_json};
pub use lexicon::{Lexicon, DEFAULT_SUBJECT};
pub use llm::{build_prompt, llm_summarize, ExternalConfig};
pub use query::{query, Query};
pub use server::{bind, router, serve, AppState};
pub use store::{DetectionStore, Event, InferenceFile, VideoInfo, VideoStore};
pub use summarize::{summarize, Generator, Style, Summarizer, Summary, EMPTY_SUMMARY};
