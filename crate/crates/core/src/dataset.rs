//! On-disk datasets: `clips/<video_id>/<frame>.t` (one `[C,H,W]` tensor per
//! frame), `annotations.csv`, `metadata.txt` and a `dataset.txt` manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::{export_csv_file, import_csv_file, RoiAnnotation};
use crate::detector::{Sample, Target};
use crate::error::{Error, Result};
use crate::eval::{parse_metadata, render_metadata, GtBox, VideoMeta};
use crate::manifest::Manifest;
use crate::tensor::Tensor;

pub const DATASET_FORMAT: &str = "panoact-dataset/1";
pub const DATASET_MANIFEST: &str = "dataset.txt";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const METADATA_FILE: &str = "metadata.txt";
pub const CLIPS_DIR: &str = "clips";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub fps: f64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: Vec<String>,
}

impl DatasetInfo {
    fn to_manifest(&self) -> Result<Manifest> {
        let mut m = Manifest::new();
        m.push("format", DATASET_FORMAT)?;
        m.push("fps", self.fps.to_string())?;
        m.push("height", self.height.to_string())?;
        m.push("width", self.width.to_string())?;
        m.push("channels", self.channels.to_string())?;
        m.push("classes", self.classes.join(","))?;
        Ok(m)
    }

    fn from_manifest(m: &Manifest) -> Result<Self> {
        let format = m.require("format")?;
        if format != DATASET_FORMAT {
            return Err(Error::Decode(format!("unsupported dataset format {format:?}")));
        }
        let classes: Vec<String> = m.require("classes")?.split(',').filter(|c| !c.is_empty()).map(String::from).collect();
        if classes.is_empty() {
            return Err(Error::Decode("dataset lists no classes".into()));
        }
        Ok(DatasetInfo {
            fps: m.parse("fps")?,
            height: m.parse("height")?,
            width: m.parse("width")?,
            channels: m.parse("channels")?,
            classes,
        })
    }

    pub fn class_index(&self, action: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == action)
    }
}

/// Frames, annotations and metadata of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoData {
    pub meta: VideoMeta,
    pub frames: Vec<Tensor>,
    pub annotations: Vec<RoiAnnotation>,
}

fn frame_file(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("{frame:06}.t"))
}

/// Write a complete dataset directory.
pub fn write_dataset(dir: &Path, info: &DatasetInfo, videos: &[VideoData]) -> Result<()> {
    let clips = dir.join(CLIPS_DIR);
    std::fs::create_dir_all(&clips).map_err(|e| Error::io(&clips, e))?;
    let mp = dir.join(DATASET_MANIFEST);
    std::fs::write(&mp, info.to_manifest()?.render()).map_err(|e| Error::io(&mp, e))?;
    for v in videos {
        let vd = clips.join(&v.meta.id);
        std::fs::create_dir_all(&vd).map_err(|e| Error::io(&vd, e))?;
        for (i, f) in v.frames.iter().enumerate() {
            f.save(&frame_file(&vd, i))?;
        }
    }
    let metas: Vec<VideoMeta> = videos.iter().map(|v| v.meta.clone()).collect();
    let meta_path = dir.join(METADATA_FILE);
    std::fs::write(&meta_path, render_metadata(&metas)).map_err(|e| Error::io(&meta_path, e))?;
    let anns: Vec<RoiAnnotation> = videos.iter().flat_map(|v| v.annotations.iter().cloned()).collect();
    export_csv_file(&anns, &dir.join(ANNOTATIONS_FILE))
}

/// A dataset directory with its metadata and annotations loaded; frames are
/// read on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub info: DatasetInfo,
    pub videos: Vec<VideoMeta>,
    pub annotations: Vec<RoiAnnotation>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let mp = root.join(DATASET_MANIFEST);
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let info = DatasetInfo::from_manifest(&Manifest::parse_text(&text)?)?;
        let meta_path = root.join(METADATA_FILE);
        let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let videos = parse_metadata(&meta)?;
        let annotations = import_csv_file(&root.join(ANNOTATIONS_FILE))?;
        for a in &annotations {
            if !videos.iter().any(|v| v.id == a.video_id) {
                return Err(Error::Decode(format!("annotation for unknown video {}", a.video_id)));
            }
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            info,
            videos,
            annotations,
        })
    }

    pub fn video_ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.id.clone()).collect()
    }

    /// Frames of a video in frame order.
    pub fn load_frames(&self, id: &str) -> Result<Vec<Tensor>> {
        let dir = self.root.join(CLIPS_DIR).join(id);
        let mut files: Vec<(usize, PathBuf)> = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().is_some_and(|e| e == "t") {
                let n = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::Decode(format!("frame file {} is not named <index>.t", path.display())))?;
                files.push((n, path));
            }
        }
        files.sort();
        let mut frames = Vec::with_capacity(files.len());
        for (i, (n, path)) in files.iter().enumerate() {
            if *n != i {
                return Err(Error::Decode(format!("{}: frame {i} is missing", dir.display())));
            }
            let t = Tensor::load(path)?;
            if t.shape() != [self.info.channels, self.info.height, self.info.width] {
                return Err(Error::shape("load_frames", format!("{} has shape {:?}", path.display(), t.shape())));
            }
            frames.push(t);
        }
        Ok(frames)
    }

    pub fn load_video(&self, id: &str) -> Result<VideoData> {
        let meta = self
            .videos
            .iter()
            .find(|v| v.id == id)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no video {id} in the dataset")))?;
        Ok(VideoData {
            meta,
            frames: self.load_frames(id)?,
            annotations: self.annotations.iter().filter(|a| a.video_id == id).cloned().collect(),
        })
    }

    pub fn load_videos(&self, ids: &[String]) -> Result<Vec<VideoData>> {
        ids.iter().map(|id| self.load_video(id)).collect()
    }
}

/// A clip ending at `frame` of `video` with its key-frame targets.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyFrame {
    pub video: String,
    pub frame: usize,
    pub sample: Sample,
}

/// Annotated boxes of `video` on `frame` as detector targets. Unknown actions
/// are an error.
pub fn frame_targets(video: &VideoData, frame: usize, classes: &[String]) -> Result<Vec<Target>> {
    let mut out = Vec::new();
    for a in &video.annotations {
        let class = classes
            .iter()
            .position(|c| *c == a.action)
            .ok_or_else(|| Error::InvalidArgument(format!("action {:?} is not a known class", a.action)))?;
        out.extend(a.entries.iter().filter(|e| e.frame == frame).map(|e| Target { bbox: e.bbox, class }));
    }
    Ok(out)
}

/// Every clip of `clip_len` consecutive frames, stepping key frames by
/// `stride`, as `[T, C, H, W]` samples.
pub fn key_frames(video: &VideoData, classes: &[String], clip_len: usize, stride: usize) -> Result<Vec<KeyFrame>> {
    if clip_len == 0 || stride == 0 {
        return Err(Error::InvalidArgument("clip_len and stride must be positive".into()));
    }
    let mut out = Vec::new();
    let mut k = clip_len - 1;
    while k < video.frames.len() {
        out.push(KeyFrame {
            video: video.meta.id.clone(),
            frame: k,
            sample: Sample {
                clip: Tensor::stack(&video.frames[k + 1 - clip_len..=k])?,
                targets: frame_targets(video, k, classes)?,
            },
        });
        k += stride;
    }
    Ok(out)
}

/// Ground truth on the given key frames as evaluation boxes.
pub fn key_frame_truth(keys: &[KeyFrame]) -> Vec<GtBox> {
    keys.iter()
        .flat_map(|k| {
            k.sample.targets.iter().map(|t| GtBox {
                video: k.video.clone(),
                frame: k.frame,
                label: t.class,
                bbox: t.bbox,
            })
        })
        .collect()
}
