//! One function per subcommand; each maps onto library operations.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use panoact::annotate::{
    cohens_kappa, export_csv_file, import_csv_file, mean_iou, track_roi, validate, RoiAnnotation, TrackMethod,
};
use panoact::bbox::BBox;
use panoact::dataset::{key_frame_truth, key_frames, Dataset, DatasetInfo, KeyFrame};
use panoact::detector::{infer_sequence_with, Detection, DetectorConfig, ModelCheckpoint, Sample, MANIFEST_FILE};
use panoact::eval::{report, split_dataset, EvalConfig, GtBox, PredBox, PredTube, Split};
use panoact::manifest::Manifest;
use panoact::optimize::{bench as run_bench, optimize_model, predict_keys, Model, QuantizedModel, QUANTIZED_FORMAT};
use panoact::postprocess::link_tubes;
use panoact::synth::gen_synthetic;
use panoact_debrief::{
    bind, ingest_file, serve as run_serve, AppState, DetectionStore, ExternalConfig, InferenceFile, Lexicon, Summarizer,
    VideoStore,
};
use serde_json::json;

use crate::config::Config;
use crate::error::{invalid, runtime, CliResult};

fn print_json(v: serde_json::Value) {
    println!("{v}");
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitSel {
    All,
    Train,
    Val,
    Test,
}

struct Data {
    ds: Dataset,
    split: Split,
}

impl Data {
    fn open(cfg: &Config, dir: &Path) -> CliResult<Self> {
        let ds = Dataset::open(dir)?;
        let split = split_dataset(&ds.video_ids(), cfg.eval.ratios, cfg.seed)?;
        Ok(Data { ds, split })
    }

    fn ids(&self, sel: SplitSel) -> Vec<String> {
        match sel {
            SplitSel::All => self.ds.video_ids(),
            SplitSel::Train => self.split.train.clone(),
            SplitSel::Val => self.split.val.clone(),
            SplitSel::Test => self.split.test.clone(),
        }
    }

    /// Key-frame clips of `ids`, in video order.
    fn keys(&self, ids: &[String], clip_len: usize, stride: usize) -> CliResult<Vec<KeyFrame>> {
        let mut out = Vec::new();
        for id in ids {
            let v = self.ds.load_video(id)?;
            out.extend(key_frames(&v, &self.ds.info.classes, clip_len, stride)?);
        }
        Ok(out)
    }

    fn samples(&self, sel: SplitSel, clip_len: usize, stride: usize) -> CliResult<Vec<Sample>> {
        Ok(self.keys(&self.ids(sel), clip_len, stride)?.into_iter().map(|k| k.sample).collect())
    }

    fn eval_config(&self, cfg: &Config) -> EvalConfig {
        EvalConfig {
            classes: self.ds.info.classes.clone(),
            ..cfg.eval.clone()
        }
    }
}

/// The configured detector with the frame geometry and classes of the data.
fn detector_config(cfg: &Config, info: &DatasetInfo) -> DetectorConfig {
    DetectorConfig {
        height: info.height,
        width: info.width,
        in_channels: info.channels,
        classes: info.classes.len(),
        ..cfg.detector.clone()
    }
}

enum Loaded {
    Float(ModelCheckpoint),
    Quantized(QuantizedModel),
}

impl Loaded {
    fn load(dir: &Path) -> CliResult<Self> {
        let mp = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mp).map_err(|e| invalid(format!("cannot read model {}: {e}", mp.display())))?;
        if Manifest::parse_text(&text)?.get("format") == Some(QUANTIZED_FORMAT) {
            Ok(Loaded::Quantized(QuantizedModel::load(dir)?))
        } else {
            Ok(Loaded::Float(ModelCheckpoint::load(dir)?))
        }
    }

    fn model(&self) -> Model<'_> {
        match self {
            Loaded::Float(ck) => Model::Float(&ck.model),
            Loaded::Quantized(q) => Model::Quantized(q),
        }
    }

    fn float(self, what: &str) -> CliResult<ModelCheckpoint> {
        match self {
            Loaded::Float(ck) => Ok(ck),
            Loaded::Quantized(_) => Err(invalid(format!("{what} needs a float checkpoint, not a quantized one"))),
        }
    }

    /// The model must accept frames and classes of `info`.
    fn check(&self, info: &DatasetInfo) -> CliResult<()> {
        let c = self.model().config().clone();
        if (c.height, c.width, c.in_channels, c.classes) != (info.height, info.width, info.channels, info.classes.len()) {
            return Err(invalid(format!(
                "model expects {}x{}x{} frames and {} classes; dataset has {}x{}x{} and {}",
                c.in_channels,
                c.height,
                c.width,
                c.classes,
                info.channels,
                info.height,
                info.width,
                info.classes.len()
            )));
        }
        Ok(())
    }
}

pub fn gen(cfg: &Config, out: &Path) -> CliResult<()> {
    let d = gen_synthetic(&cfg.synth, cfg.seed)?;
    d.write(out)?;
    let boxes: usize = d.videos.iter().flat_map(|v| &v.annotations).map(|a| a.entries.len()).sum();
    print_json(json!({ "out": out, "videos": d.videos.len(), "frames": cfg.synth.frames, "boxes": boxes }));
    Ok(())
}

pub fn train(cfg: &Config, data: &Path, out: &Path) -> CliResult<()> {
    let d = Data::open(cfg, data)?;
    let dc = detector_config(cfg, &d.ds.info);
    dc.validate()?;
    let tr = d.samples(SplitSel::Train, dc.clip_len, cfg.data.stride)?;
    let va = d.samples(SplitSel::Val, dc.clip_len, cfg.data.stride)?;
    if tr.is_empty() {
        return Err(invalid(format!("no training clips: videos are shorter than clip_len {}", dc.clip_len)));
    }
    let ck = panoact::detector::train(&dc, &tr, &va)?;
    ck.save(out)?;
    let r = &ck.report;
    print_json(json!({
        "out": out,
        "train_clips": tr.len(),
        "val_clips": va.len(),
        "epochs_run": r.epochs_run,
        "best_epoch": r.best_epoch,
        "stopped_early": r.stopped_early,
        "best_val_loss": r.val_loss.get(r.best_epoch),
    }));
    Ok(())
}

pub fn optimize(cfg: &Config, data: &Path, model: &Path, out: &Path, no_prune: bool) -> CliResult<()> {
    let d = Data::open(cfg, data)?;
    let loaded = Loaded::load(model)?;
    loaded.check(&d.ds.info)?;
    let ck = loaded.float("optimize")?;
    let clip_len = ck.model.config().clip_len;
    let tr = d.samples(SplitSel::Train, clip_len, cfg.data.stride)?;
    let va = d.samples(SplitSel::Val, clip_len, cfg.data.stride)?;
    let calib: Vec<_> = tr.iter().map(|s| s.clip.clone()).collect();
    let ocfg = if no_prune { cfg.optimize.quantize_only() } else { cfg.optimize.clone() };
    let (qm, _) = optimize_model(&ck, &ocfg, &tr, &va, &calib)?;
    qm.save(out)?;
    print_json(json!({
        "out": out,
        "float_bytes": ck.serialized_size()?,
        "bytes": qm.serialized_size()?,
        "prune_iterations": qm.meta.prune_iterations,
        "sparsity": qm.meta.sparsity,
        "calibration_frames": qm.meta.calibration_frames,
    }));
    Ok(())
}

pub fn detect(cfg: &Config, data: &Path, model: &Path, store_dir: &Path, sel: SplitSel) -> CliResult<()> {
    let d = Data::open(cfg, data)?;
    let loaded = Loaded::load(model)?;
    loaded.check(&d.ds.info)?;
    let m = loaded.model();
    let clip_len = m.config().clip_len;
    let pp = &cfg.postprocess;
    let mut store = DetectionStore::new();
    let mut events = 0;
    for id in d.ids(sel) {
        let v = d.ds.load_video(&id)?;
        let clips: Vec<_> = key_frames(&v, &d.ds.info.classes, clip_len, cfg.data.stride)?
            .into_iter()
            .map(|k| (k.frame, k.sample.clip))
            .collect();
        let out = infer_sequence_with(&clips, pp, |clip, frame| m.detect(clip, frame, pp, true, pp.tau))?;
        let mut file = InferenceFile::from_detections(&id, d.ds.info.fps, &d.ds.info.classes, &out.detections)?;
        file.condition = Some(v.meta.condition.clone());
        file.duration = Some(v.frames.len() as f64 / d.ds.info.fps);
        let vs = VideoStore::from_file(file)?;
        events += vs.events.len();
        store.insert(vs)?;
    }
    store.save(store_dir)?;
    print_json(json!({ "store": store_dir, "videos": store.len(), "events": events }));
    Ok(())
}

/// Where `evaluate` gets its predictions.
pub enum PredSource {
    Model(PathBuf),
    /// Inference JSON files, store directories or annotation CSVs.
    Files(Vec<PathBuf>),
}

/// Annotation CSVs keep their instances as tubes (confidence 1); inference
/// JSON files and store directories are linked into tubes like detector
/// output.
fn file_predictions(
    paths: &[PathBuf],
    ids: &BTreeSet<String>,
    info: &DatasetInfo,
    link_iou: f64,
) -> CliResult<(Vec<PredBox>, Vec<PredTube>)> {
    let (mut boxes, mut tubes) = (Vec::new(), Vec::new());
    let mut store = DetectionStore::new();
    for p in paths {
        if p.is_dir() {
            for v in DetectionStore::load(p)?.videos() {
                store.insert(v.clone())?;
            }
        } else if p.extension().is_some_and(|e| e == "csv") {
            for a in import_csv_file(p)?.into_iter().filter(|a| ids.contains(&a.video_id)) {
                let label = class_of(info, &a.action)?;
                boxes.extend(a.entries.iter().map(|e| PredBox {
                    video: a.video_id.clone(),
                    frame: e.frame,
                    label,
                    bbox: e.bbox,
                    confidence: 1.0,
                }));
                tubes.push(PredTube {
                    video: a.video_id.clone(),
                    label,
                    confidence: 1.0,
                    boxes: a.entries.iter().map(|e| (e.frame, e.bbox)).collect(),
                });
            }
        } else {
            ingest_file(&mut store, p, info.fps)?;
        }
    }
    let (b, t) = store_predictions(&store, ids, info, link_iou)?;
    boxes.extend(b);
    tubes.extend(t);
    Ok((boxes, tubes))
}

fn class_of(info: &DatasetInfo, action: &str) -> CliResult<usize> {
    info.class_index(action)
        .ok_or_else(|| invalid(format!("action {action:?} is not a dataset class")))
}

/// Stored events of `ids` as scored boxes and linked tubes.
fn store_predictions(
    store: &DetectionStore,
    ids: &BTreeSet<String>,
    info: &DatasetInfo,
    link_iou: f64,
) -> CliResult<(Vec<PredBox>, Vec<PredTube>)> {
    let (mut boxes, mut tubes) = (Vec::new(), Vec::new());
    for v in store.videos().filter(|v| ids.contains(&v.info.id)) {
        let mut dets = Vec::new();
        for e in &v.events {
            let label = class_of(info, &e.action)?;
            dets.push(Detection {
                frame: e.frame,
                bbox: e.bbox(),
                label,
                confidence: e.confidence,
            });
        }
        boxes.extend(dets.iter().map(|d| PredBox {
            video: v.info.id.clone(),
            frame: d.frame,
            label: d.label,
            bbox: d.bbox,
            confidence: d.confidence,
        }));
        tubes.extend(link_tubes(&dets, link_iou)?.iter().map(|t| PredTube::from_action_tube(&v.info.id, t)));
    }
    Ok((boxes, tubes))
}

pub fn evaluate(cfg: &Config, data: &Path, source: &PredSource, sel: SplitSel, first_frame: usize, out: Option<&Path>) -> CliResult<()> {
    let d = Data::open(cfg, data)?;
    let ids = d.ids(sel);
    let idset: BTreeSet<String> = ids.iter().cloned().collect();
    let ecfg = d.eval_config(cfg);
    let (preds, tubes, gt) = match source {
        PredSource::Model(dir) => {
            let loaded = Loaded::load(dir)?;
            loaded.check(&d.ds.info)?;
            let keys = d.keys(&ids, loaded.model().config().clip_len, cfg.data.stride)?;
            let p = predict_keys(loaded.model(), &keys, &cfg.postprocess, true, cfg.postprocess.tau)?;
            (p.boxes, p.tubes, key_frame_truth(&keys))
        }
        PredSource::Files(paths) => {
            let (b, t) = file_predictions(paths, &idset, &d.ds.info, cfg.postprocess.link_iou)?;
            let mut gt = Vec::new();
            for a in d.ds.annotations.iter().filter(|a| idset.contains(&a.video_id)) {
                let label = class_of(&d.ds.info, &a.action)?;
                gt.extend(a.entries.iter().filter(|e| e.frame >= first_frame).map(|e| GtBox {
                    video: a.video_id.clone(),
                    frame: e.frame,
                    label,
                    bbox: e.bbox,
                }));
            }
            (b, t, gt)
        }
    };
    let meta: Vec<_> = d.ds.videos.iter().filter(|v| idset.contains(&v.id)).cloned().collect();
    let r = report(&preds, &tubes, &gt, &meta, &ecfg)?;
    print!("{}", r.to_text());
    if let Some(dir) = out {
        write_file(&dir.join("report.json"), &(serde_json::to_string_pretty(&r).expect("report serialises") + "\n"))?;
        write_file(&dir.join("actions.csv"), &r.actions_csv())?;
        write_file(&dir.join("conditions.csv"), &r.conditions_csv())?;
    }
    Ok(())
}

/// `FRAME:x1,y1,x2,y2`
pub fn parse_keyed_box(s: &str) -> Result<(usize, BBox), String> {
    let (f, b) = s.split_once(':').ok_or("expected FRAME:x1,y1,x2,y2")?;
    let frame = f.trim().parse().map_err(|_| format!("bad frame {f:?}"))?;
    let v: Vec<f64> = b
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad coordinate {x:?}")))
        .collect::<Result<_, _>>()?;
    let [x1, y1, x2, y2] = v[..] else {
        return Err("expected four coordinates".into());
    };
    Ok((frame, BBox::new(x1, y1, x2, y2).map_err(|e| e.to_string())?))
}

pub struct TrackArgs<'a> {
    pub video: &'a str,
    pub action: &'a str,
    pub start: (usize, BBox),
    pub end: (usize, BBox),
    pub method: Option<TrackMethod>,
    pub out: &'a Path,
}

pub fn annotate_track(cfg: &Config, data: &Path, a: TrackArgs<'_>) -> CliResult<()> {
    let ds = Dataset::open(data)?;
    let (f0, b0) = a.start;
    let (f1, b1) = a.end;
    if f1 <= f0 {
        return Err(invalid(format!("end frame {f1} must follow start frame {f0}")));
    }
    let frames = ds.load_frames(a.video)?;
    if f1 >= frames.len() {
        return Err(invalid(format!("video {} has {} frames; end frame {f1} is out of range", a.video, frames.len())));
    }
    let boxes = track_roi(&frames[f0..=f1], &b0, &b1, a.method.unwrap_or(cfg.annotate.method))?;
    let ann = RoiAnnotation::from_boxes(a.video, a.action, f0, ds.info.fps, &boxes)?;
    let mut all = if a.out.exists() { import_csv_file(a.out)? } else { Vec::new() };
    all.push(ann);
    export_csv_file(&all, a.out)?;
    print_json(json!({ "out": a.out, "boxes": boxes.len() }));
    Ok(())
}

pub fn annotate_validate(data: &Path, csv: Option<&Path>) -> CliResult<()> {
    let ds = Dataset::open(data)?;
    let anns = match csv {
        Some(p) => import_csv_file(p)?,
        None => ds.annotations.clone(),
    };
    let violations = validate(&anns, &ds.info.classes);
    for v in &violations {
        println!("{}", serde_json::to_string(v).expect("violation serialises"));
    }
    if violations.is_empty() {
        print_json(json!({ "annotations": anns.len(), "violations": 0 }));
        Ok(())
    } else {
        Err(invalid(format!("{} annotation violations", violations.len())))
    }
}

/// Agreement between two annotators over every (video, frame) either of
/// them boxed: κ over the sorted action sets ("none" where absent) and mean
/// IoU over frames where both drew exactly one box with the same action.
pub fn annotate_agree(a: &Path, b: &Path) -> CliResult<()> {
    type Frames = BTreeMap<(String, usize), Vec<(String, BBox)>>;
    let flatten = |anns: Vec<RoiAnnotation>| {
        let mut m = Frames::new();
        for a in anns {
            for e in a.entries {
                m.entry((a.video_id.clone(), e.frame)).or_default().push((a.action.clone(), e.bbox));
            }
        }
        m
    };
    let (fa, fb) = (flatten(import_csv_file(a)?), flatten(import_csv_file(b)?));
    let keys: BTreeSet<_> = fa.keys().chain(fb.keys()).cloned().collect();
    let label = |m: &Frames, k| {
        m.get(k).map_or("none".to_string(), |v: &Vec<(String, BBox)>| {
            let s: BTreeSet<&str> = v.iter().map(|(a, _)| a.as_str()).collect();
            s.into_iter().collect::<Vec<_>>().join("+")
        })
    };
    let la: Vec<String> = keys.iter().map(|k| label(&fa, k)).collect();
    let lb: Vec<String> = keys.iter().map(|k| label(&fb, k)).collect();
    let kappa = cohens_kappa(&la, &lb)?;
    let (mut ba, mut bb) = (Vec::new(), Vec::new());
    for k in &keys {
        if let (Some([x]), Some([y])) = (fa.get(k).map(Vec::as_slice), fb.get(k).map(Vec::as_slice)) {
            if x.0 == y.0 {
                ba.push(x.1);
                bb.push(y.1);
            }
        }
    }
    print_json(json!({
        "items": keys.len(),
        "kappa": kappa,
        "matched_boxes": ba.len(),
        "mean_iou": if ba.is_empty() { None } else { Some(mean_iou(&ba, &bb)) },
    }));
    Ok(())
}

pub fn ingest(store_dir: &Path, fps: f64, files: &[PathBuf]) -> CliResult<()> {
    let mut store = DetectionStore::load(store_dir)?;
    for f in files {
        ingest_file(&mut store, f, fps)?;
    }
    store.save(store_dir)?;
    let events: usize = store.videos().map(|v| v.events.len()).sum();
    print_json(json!({ "store": store_dir, "videos": store.len(), "events": events }));
    Ok(())
}

pub fn serve(cfg: &Config, store_dir: &Path, frames: Option<&Path>, bind_override: Option<&str>) -> CliResult<()> {
    let store = DetectionStore::load(store_dir)?;
    let lexicon = match &cfg.debrief.lexicon {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::default(),
    };
    let state = AppState {
        summarizer: std::sync::Arc::new(Summarizer {
            subject: cfg.debrief.subject.clone(),
            lexicon,
        }),
        external: ExternalConfig::from_env()?,
        frames: frames.map(Path::to_path_buf),
        ..AppState::new(store)
    };
    let addr_text = bind_override.unwrap_or(&cfg.debrief.bind);
    let addr: std::net::SocketAddr = addr_text.parse().map_err(|_| invalid(format!("bad bind address {addr_text:?}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| runtime(format!("cannot start runtime: {e}")))?;
    rt.block_on(async {
        let listener = bind(addr).await?;
        let local = listener.local_addr().map_err(|e| runtime(e.to_string()))?;
        print_json(json!({ "listening": local.to_string(), "videos": state.store.len() }));
        std::io::stdout().flush().map_err(|e| runtime(e.to_string()))?;
        run_serve(state, listener).await?;
        Ok(())
    })
}

pub fn bench(cfg: &Config, data: &Path, model: &Path, out: Option<&Path>) -> CliResult<()> {
    let d = Data::open(cfg, data)?;
    let loaded = Loaded::load(model)?;
    loaded.check(&d.ds.info)?;
    let ck = loaded.float("bench")?;
    let clip_len = ck.model.config().clip_len;
    let tr = d.samples(SplitSel::Train, clip_len, cfg.data.stride)?;
    let va = d.samples(SplitSel::Val, clip_len, cfg.data.stride)?;
    let test = d.keys(&d.ids(SplitSel::Test), clip_len, cfg.data.stride)?;
    let calib: Vec<_> = tr.iter().map(|s| s.clip.clone()).collect();
    let outcome = run_bench(&ck, &tr, &va, &calib, &test, &d.eval_config(cfg), &cfg.bench_config())?;
    print!("{}", outcome.report.to_text());
    if let Some(dir) = out {
        write_file(&dir.join("bench.txt"), &outcome.report.to_text())?;
        write_file(&dir.join("bench.csv"), &outcome.report.to_csv())?;
        write_file(
            &dir.join("bench.json"),
            &(serde_json::to_string_pretty(&outcome.report).expect("report serialises") + "\n"),
        )?;
    }
    Ok(())
}
