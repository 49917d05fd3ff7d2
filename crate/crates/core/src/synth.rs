//! Synthetic panoramic action clips: textured spherical caps moving along
//! latitude/longitude trajectories, rendered per pixel so objects near the
//! poles show true ERP stretching and objects at the seam wrap.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotate::RoiAnnotation;
use crate::bbox::BBox;
use crate::dataset::{write_dataset, DatasetInfo, VideoData};
use crate::erp::{angular_distance, wrap_lon, ErpGrid, LatMode};
use crate::error::{Error, Result};
use crate::eval::VideoMeta;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Day,
    Night,
    Smoke,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Day, Condition::Night, Condition::Smoke];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Day => "day",
            Condition::Night => "night",
            Condition::Smoke => "smoke",
        }
    }

    /// Brightness/contrast transform of a pixel value plus its extra noise.
    fn apply(self, v: f32, haze: f32) -> f32 {
        match self {
            Condition::Day => v,
            Condition::Night => 0.35 * v + 0.02,
            Condition::Smoke => {
                let a = 0.35 + 0.3 * haze;
                (1.0 - a) * v + a * 0.6
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub videos: usize,
    pub frames: usize,
    pub height: usize,
    pub fps: f64,
    /// Action names; blob `k` of class `c` gets a class-specific colour and
    /// motion direction.
    pub classes: Vec<String>,
    pub min_blobs: usize,
    pub max_blobs: usize,
    /// Angular radius range of a blob, degrees.
    pub radius_deg: (f64, f64),
    /// Angular speed per frame, degrees.
    pub speed_deg: f64,
    /// Standard deviation of per-frame pixel noise.
    pub noise: f64,
    /// Probability that a blob sits at high latitude.
    pub pole_fraction: f64,
    /// Probability that a blob starts on the ±180° seam.
    pub seam_fraction: f64,
    /// |latitude| range for high-latitude blobs, degrees.
    pub pole_lat_deg: (f64, f64),
    pub conditions: Vec<Condition>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            videos: 200,
            frames: 6,
            height: 32,
            fps: 10.0,
            classes: vec!["climb_ladder".into(), "carry_hose".into()],
            min_blobs: 1,
            max_blobs: 2,
            radius_deg: (10.0, 16.0),
            speed_deg: 3.0,
            noise: 0.03,
            pole_fraction: 0.35,
            seam_fraction: 0.3,
            pole_lat_deg: (50.0, 68.0),
            conditions: Condition::ALL.to_vec(),
        }
    }
}

impl SynthConfig {
    pub fn width(&self) -> usize {
        2 * self.height
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.videos == 0 || self.frames == 0 {
            return bad("videos and frames must be positive".into());
        }
        if self.height < 4 {
            return bad(format!("height {} is too small", self.height));
        }
        if self.classes.is_empty() || self.classes.iter().any(|c| c.is_empty() || c.contains([',', ' '])) {
            return bad("class names must be non-empty without spaces or commas".into());
        }
        if self.min_blobs > self.max_blobs || self.max_blobs == 0 {
            return bad("need 1 <= max_blobs and min_blobs <= max_blobs".into());
        }
        let (r0, r1) = self.radius_deg;
        if !(r0 > 0.0 && r0 <= r1 && r1 < 30.0) {
            return bad(format!("radius range {:?} must satisfy 0 < lo <= hi < 30", self.radius_deg));
        }
        let (p0, p1) = self.pole_lat_deg;
        if !(0.0 <= p0 && p0 <= p1 && p1 + r1 < 89.0) {
            return bad(format!("pole latitude range {:?} plus radius must stay below 89°", self.pole_lat_deg));
        }
        for (n, p) in [("pole_fraction", self.pole_fraction), ("seam_fraction", self.seam_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{n} must lie in [0, 1]"));
            }
        }
        if self.pole_fraction + self.seam_fraction > 1.0 {
            return bad("pole_fraction + seam_fraction must not exceed 1".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) || !(self.noise >= 0.0) || !(self.speed_deg >= 0.0) {
            return bad("fps must be positive; noise and speed non-negative".into());
        }
        if self.conditions.is_empty() {
            return bad("at least one condition preset is required".into());
        }
        Ok(())
    }
}

/// One moving cap, angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub class: usize,
    pub lat: f64,
    pub lon: f64,
    pub radius: f64,
    pub vlat: f64,
    pub vlon: f64,
}

impl Blob {
    pub fn at(&self, frame: usize) -> (f64, f64) {
        (self.lat + self.vlat * frame as f64, wrap_lon(self.lon + self.vlon * frame as f64))
    }
}

const PALETTE: [[f32; 3]; 4] = [[1.0, 0.55, 0.15], [0.2, 0.65, 1.0], [0.3, 1.0, 0.35], [1.0, 0.3, 0.9]];

/// Pixels (row-major) whose centres fall inside the cap.
fn cap_mask(grid: &ErpGrid, lat: f64, lon: f64, radius: f64) -> Vec<(usize, usize, f64)> {
    let (h, w) = (grid.height(), grid.width());
    let mut out = Vec::new();
    for y in 0..h {
        let (plat, _) = grid.unproject(0.0, y as f64 + 0.5);
        if (plat - lat).abs() > radius {
            continue;
        }
        for x in 0..w {
            let (_, plon) = grid.unproject(x as f64 + 0.5, y as f64 + 0.5);
            let d = angular_distance(plat, plon, lat, lon);
            if d <= radius {
                out.push((y, x, d / radius));
            }
        }
    }
    out
}

/// Tight box around a pixel set; horizontally the shortest covering arc.
fn tight_box(pixels: &[(usize, usize, f64)], h: usize, w: usize) -> Option<BBox> {
    let ymin = pixels.iter().map(|p| p.0).min()?;
    let ymax = pixels.iter().map(|p| p.0).max()?;
    let mut cols = vec![false; w];
    for p in pixels {
        cols[p.1] = true;
    }
    let (x1, x2) = if cols.iter().all(|&c| c) {
        (0.0, 1.0)
    } else {
        // Longest circular run of empty columns; the box is its complement.
        let start = cols.iter().position(|&c| c).expect("non-empty");
        let (mut best_len, mut best_end, mut run) = (0, 0, 0);
        for i in 1..=w {
            let c = (start + i) % w;
            if cols[c] {
                if run > best_len {
                    best_len = run;
                    best_end = c;
                }
                run = 0;
            } else {
                run += 1;
            }
        }
        let first = best_end;
        let last = (best_end + w - best_len - 1) % w;
        (first as f64 / w as f64, (last + 1) as f64 / w as f64)
    };
    Some(BBox {
        x1,
        y1: ymin as f64 / h as f64,
        x2,
        y2: (ymax + 1) as f64 / h as f64,
    })
}

/// Ground-truth box of a cap on a grid, tight to its rendered pixels.
pub fn cap_box(grid: &ErpGrid, lat: f64, lon: f64, radius: f64) -> Option<BBox> {
    tight_box(&cap_mask(grid, lat, lon, radius), grid.height(), grid.width())
}

fn sample_blob(cfg: &SynthConfig, rng: &mut Rng) -> Blob {
    let deg = PI / 180.0;
    let class = rng.below(cfg.classes.len());
    let radius = rng.range(cfg.radius_deg.0, cfg.radius_deg.1) * deg;
    let kind = rng.uniform();
    let (mut lat, lon) = if kind < cfg.pole_fraction {
        let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
        (sign * rng.range(cfg.pole_lat_deg.0, cfg.pole_lat_deg.1) * deg, rng.range(-PI, PI))
    } else if kind < cfg.pole_fraction + cfg.seam_fraction {
        (rng.range(-35.0, 35.0) * deg, wrap_lon(PI + rng.range(-1.0, 1.0) * radius))
    } else {
        (rng.range(-35.0, 35.0) * deg, rng.range(-PI, PI))
    };
    // Even classes move along latitude, odd ones along longitude.
    let speed = cfg.speed_deg * deg * rng.range(0.7, 1.3);
    let dir = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
    let (mut vlat, vlon) = if class % 2 == 0 { (dir * speed, 0.0) } else { (0.0, dir * speed / lat.cos().max(0.3)) };
    let limit = (cfg.pole_lat_deg.1 * deg).max(40.0 * deg);
    let span = vlat * cfg.frames.saturating_sub(1) as f64;
    if (lat + span).abs() > limit {
        vlat = -vlat;
    }
    lat = lat.clamp(-limit, limit);
    Blob {
        class,
        lat,
        lon,
        radius,
        vlat,
        vlon,
    }
}

/// Render one video and its per-blob annotations.
fn render_video(cfg: &SynthConfig, id: &str, rng: &mut Rng) -> Result<VideoData> {
    let grid = ErpGrid::new(cfg.height, cfg.width(), LatMode::Eq1Exact)?;
    let (h, w) = (cfg.height, cfg.width());
    let condition = cfg.conditions[rng.below(cfg.conditions.len())];
    let n_blobs = cfg.min_blobs + rng.below(cfg.max_blobs - cfg.min_blobs + 1);
    let blobs: Vec<Blob> = (0..n_blobs).map(|_| sample_blob(cfg, rng)).collect();

    // Smooth per-video background, periodic in x.
    let (kx, ky) = (1 + rng.below(3), 1 + rng.below(3));
    let (px, py) = (rng.range(0.0, 2.0 * PI), rng.range(0.0, 2.0 * PI));
    let tint: [f32; 3] = [rng.range_f32(0.8, 1.2), rng.range_f32(0.8, 1.2), rng.range_f32(0.8, 1.2)];
    let mut background = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let u = 2.0 * PI * kx as f64 * x as f64 / w as f64 + px;
            let v = PI * ky as f64 * y as f64 / h as f64 + py;
            background[y * w + x] = (0.3 + 0.1 * u.sin() * v.cos()) as f32;
        }
    }
    let haze_phase = rng.range(0.0, 2.0 * PI);

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut boxes: Vec<Vec<Option<BBox>>> = vec![Vec::with_capacity(cfg.frames); n_blobs];
    for f in 0..cfg.frames {
        let mut img = vec![0.0f32; 3 * h * w];
        for c in 0..3 {
            for i in 0..h * w {
                img[c * h * w + i] = background[i] * tint[c];
            }
        }
        for (b, blob) in blobs.iter().enumerate() {
            let (lat, lon) = blob.at(f);
            let mask = cap_mask(&grid, lat, lon, blob.radius);
            let colour = PALETTE[blob.class % PALETTE.len()];
            for &(y, x, r) in &mask {
                let shade = (0.8 + 0.2 * (3.0 * PI * r).cos()) as f32;
                for c in 0..3 {
                    img[c * h * w + y * w + x] = colour[c] * shade;
                }
            }
            boxes[b].push(tight_box(&mask, h, w));
        }
        for (i, v) in img.iter_mut().enumerate() {
            let (y, x) = ((i % (h * w)) / w, i % w);
            let haze = (0.5
                + 0.5 * (2.0 * PI * x as f64 / w as f64 + haze_phase + 0.3 * f as f64).sin() * (PI * y as f64 / h as f64).sin())
                as f32;
            let noisy = condition.apply(*v, haze) + (cfg.noise * rng.normal()) as f32;
            *v = noisy.clamp(0.0, 1.0);
        }
        frames.push(Tensor::new(vec![3, h, w], img)?);
    }

    let mut annotations = Vec::new();
    for (b, blob) in blobs.iter().enumerate() {
        // Runs of frames where the blob is visible.
        let mut f = 0;
        while f < cfg.frames {
            if boxes[b][f].is_none() {
                f += 1;
                continue;
            }
            let start = f;
            let mut run = Vec::new();
            while f < cfg.frames {
                match boxes[b][f] {
                    Some(bx) => run.push(bx),
                    None => break,
                }
                f += 1;
            }
            annotations.push(RoiAnnotation::from_boxes(id, &cfg.classes[blob.class], start, cfg.fps, &run)?);
        }
    }
    let mut actions: Vec<String> = blobs.iter().map(|b| cfg.classes[b.class].clone()).collect();
    actions.sort();
    actions.dedup();
    Ok(VideoData {
        meta: VideoMeta {
            id: id.to_string(),
            condition: condition.as_str().to_string(),
            actions,
        },
        frames,
        annotations,
    })
}

/// A generated dataset held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub seed: u64,
    pub videos: Vec<VideoData>,
}

impl SynthDataset {
    pub fn info(&self) -> DatasetInfo {
        DatasetInfo {
            fps: self.config.fps,
            height: self.config.height,
            width: self.config.width(),
            channels: 3,
            classes: self.config.classes.clone(),
        }
    }

    /// Write `clips/<video>/<frame>.t`, `annotations.csv`, `metadata.txt`
    /// and `dataset.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_dataset(dir, &self.info(), &self.videos)
    }
}

/// Generate a dataset; identical `(config, seed)` give identical output.
pub fn gen_synthetic(config: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    config.validate()?;
    let mut videos = Vec::with_capacity(config.videos);
    for v in 0..config.videos {
        let id = format!("syn{v:04}");
        let mut rng = Rng::stream(seed, &format!("synth.{id}"));
        videos.push(render_video(config, &id, &mut rng)?);
    }
    Ok(SynthDataset {
        config: config.clone(),
        seed,
        videos,
    })
}
