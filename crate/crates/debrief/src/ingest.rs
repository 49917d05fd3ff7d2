//! Building stores from inference JSON or annotation CSV.

use std::collections::BTreeMap;
use std::path::Path;

use panoact::annotate::import_csv;

use crate::error::{DebriefError, Result};
use crate::store::{events_from_annotations, DetectionStore, InferenceFile, VideoStore};

/// Parse and validate one inference JSON document.
pub fn parse_inference_json(text: &str, source: &str) -> Result<VideoStore> {
    let f: InferenceFile = serde_json::from_str(text).map_err(|e| DebriefError::Parse {
        source_name: source.into(),
        line: e.line() as u64,
        column: e.column().to_string(),
        message: e.to_string(),
    })?;
    VideoStore::from_file(f).map_err(|e| match e {
        DebriefError::Schema(m) => DebriefError::Schema(format!("{source}: {m}")),
        other => other,
    })
}

/// Parse an annotation CSV into one store entry per video; every event gets
/// confidence 1 and the given frame rate.
pub fn parse_annotation_csv(text: &str, source: &str, fps: f64) -> Result<Vec<VideoStore>> {
    let anns = import_csv(text.as_bytes(), source).map_err(|e| match e {
        panoact::Error::Csv {
            path,
            line,
            column,
            message,
        } => DebriefError::Parse {
            source_name: path,
            line,
            column,
            message,
        },
        other => DebriefError::Core(other),
    })?;
    let mut by_video: BTreeMap<String, InferenceFile> = BTreeMap::new();
    for (video, ev) in events_from_annotations(&anns) {
        by_video
            .entry(video.clone())
            .or_insert_with(|| InferenceFile {
                video_id: video,
                fps,
                condition: None,
                duration: None,
                events: Vec::new(),
            })
            .events
            .push(ev);
    }
    by_video.into_values().map(VideoStore::from_file).collect()
}

/// Add a file to `store`, choosing the parser by extension (`.json` or
/// `.csv`). `fps` is used for CSV input only.
pub fn ingest_file(store: &mut DetectionStore, path: &Path, fps: f64) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| DebriefError::io(path, e))?;
    let source = path.display().to_string();
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => store.insert(parse_inference_json(&text, &source)?),
        Some("csv") => {
            for v in parse_annotation_csv(&text, &source, fps)? {
                store.insert(v)?;
            }
            Ok(())
        }
        _ => Err(DebriefError::Schema(format!("{source}: expected a .json or .csv file"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{"video_id":"drill1","fps":1.0,"events":[
        {"frame":30,"t_seconds":30.0,"action":"carry_civilian","confidence":0.7,"box":[0.95,0.2,0.05,0.5],"wraps":true},
        {"frame":10,"t_seconds":10.0,"action":"climb_ladder","confidence":0.9,"box":[0.1,0.2,0.2,0.6],"wraps":false},
        {"frame":10,"t_seconds":10.0,"action":"climb_ladder","confidence":0.9,"box":[0.1,0.2,0.2,0.6],"wraps":false}
    ]}"#;

    #[test]
    fn sorted_and_deduplicated() {
        let v = parse_inference_json(FIXTURE, "f.json").unwrap();
        assert_eq!(v.events.len(), 2);
        assert_eq!(v.events[0].t_seconds, 10.0);
        assert_eq!(v.info.duration, 30.0);
        let again = parse_inference_json(&serde_json::to_string(&v.to_file()).unwrap(), "g").unwrap();
        assert_eq!(again, v);
    }

    #[test]
    fn schema_violations_are_located() {
        let bad = FIXTURE.replace("\"wraps\":true", "\"wraps\":false");
        let e = parse_inference_json(&bad, "f.json").unwrap_err().to_string();
        assert!(e.contains("f.json") && e.contains("events[0]"), "{e}");
        let e = parse_inference_json("{\"video_id\": 3}", "g.json").unwrap_err();
        assert!(matches!(e, DebriefError::Parse { line: 1, .. }), "{e}");
        assert!(parse_inference_json(&FIXTURE.replace("0.7", "1.7"), "f").is_err());
        assert!(parse_inference_json(&FIXTURE.replace("drill1", "../x"), "f").is_err());
    }

    #[test]
    fn csv_ingest() {
        let head = panoact::annotate::CSV_HEADER.join(",");
        assert!(parse_annotation_csv(&format!("{head}\n"), "a.csv", 10.0).unwrap().is_empty());
        let text = format!("{head}\nv1,climb_ladder,3,0.300000,0.1,0.1,0.2,0.2,0\nv1,climb_ladder,2,0.200000,0.1,0.1,0.2,0.2,0\n");
        let v = parse_annotation_csv(&text, "a.csv", 10.0).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].events.iter().map(|e| e.frame).collect::<Vec<_>>(), vec![2, 3]);
        let e = parse_annotation_csv(&format!("{head}\nv1,a,x,0,0.1,0.1,0.2,0.2,0\n"), "a.csv", 10.0).unwrap_err();
        assert!(e.to_string().starts_with("a.csv:2:frame"), "{e}");
    }

    #[test]
    fn store_roundtrip_on_disk() {
        let mut s = DetectionStore::new();
        s.insert(parse_inference_json(FIXTURE, "f").unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        assert_eq!(DetectionStore::load(dir.path()).unwrap(), s);
        assert!(DetectionStore::load(&dir.path().join("missing")).unwrap().is_empty());
        // Re-ingesting the same events is idempotent.
        let mut t = s.clone();
        t.insert(parse_inference_json(FIXTURE, "f").unwrap()).unwrap();
        assert_eq!(t, s);
    }
}
