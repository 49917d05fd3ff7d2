//! The dual-stream network and the execution backends it runs on.
//!
//! The graph is written once, in [`forward`], against the [`Exec`] trait.
//! [`FloatExec`] evaluates it directly, [`TapeExec`] records it for
//! differentiation, and the integer backend in `optimize` substitutes INT8
//! convolutions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::DetectorConfig;
use crate::attention::erp_attention_plane;
use crate::eac::{cos_table_f32, eac_forward};
use crate::erp::ErpGrid;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::tape::{concat_channels, mul_channels};
use crate::tensor::{conv2d, maxpool2, sigmoid, temporal_conv, GradTape, PaddingRule, ParamId, Tensor, Var};

/// Component class of a layer, used by the optimisation policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// Latitude-scaled spatial convolution.
    Eac,
    /// Spatial convolution without latitude scaling.
    Spatial,
    /// Temporal branch (frame-axis convolution and its spatial stages).
    Temporal,
    Fusion,
    Attention,
    Head,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Eac => "eac",
            Category::Spatial => "spatial",
            Category::Temporal => "temporal",
            Category::Fusion => "fusion",
            Category::Attention => "attention",
            Category::Head => "head",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "eac" => Category::Eac,
            "spatial" => Category::Spatial,
            "temporal" => Category::Temporal,
            "fusion" => Category::Fusion,
            "attention" => Category::Attention,
            "head" => Category::Head,
            _ => return None,
        })
    }
}

/// Layer names in execution order.
pub const SPATIAL1: &str = "spatial1";
pub const SPATIAL2: &str = "spatial2";
pub const TEMPORAL: &str = "temporal";
pub const MOTION1: &str = "motion1";
pub const MOTION2: &str = "motion2";
pub const FUSION: &str = "fusion";
pub const ATTENTION: &str = "attention";
pub const HEAD: &str = "head";

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub category: Category,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// How a convolution layer treats its input.
#[derive(Clone, Debug)]
pub enum ConvMode {
    Pad(PaddingRule),
    /// Output row `y` scaled by the table entry (wrap/clamp padding).
    Eac(Arc<[f32]>),
}

#[derive(Clone, Debug)]
pub struct Detector {
    config: DetectorConfig,
    layers: Vec<Layer>,
    rows_full: Arc<[f32]>,
    rows_half: Arc<[f32]>,
    attention_plane: Tensor,
}

impl PartialEq for Detector {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.layers == other.layers
    }
}

/// Expected `(name, category, weight shape, bias length)` for every layer.
pub fn architecture(cfg: &DetectorConfig) -> Vec<(&'static str, Category, Vec<usize>, usize)> {
    let spatial = if cfg.eac { Category::Eac } else { Category::Spatial };
    let c = cfg.in_channels;
    let mut a = vec![
        (SPATIAL1, spatial, vec![cfg.c1, c, 3, 3], cfg.c1),
        (SPATIAL2, spatial, vec![cfg.c2, cfg.c1, 3, 3], cfg.c2),
        (TEMPORAL, Category::Temporal, vec![c, cfg.clip_len], c),
        (MOTION1, Category::Temporal, vec![cfg.c1, c, 3, 3], cfg.c1),
        (MOTION2, Category::Temporal, vec![cfg.c2, cfg.c1, 3, 3], cfg.c2),
        (FUSION, Category::Fusion, vec![cfg.fused, 2 * cfg.c2, 1, 1], cfg.fused),
    ];
    if cfg.attention {
        a.push((ATTENTION, Category::Attention, vec![1, 2 * cfg.fused, 1, 1], 1));
    }
    a.push((HEAD, Category::Head, vec![cfg.head_channels(), cfg.fused, 3, 3], cfg.head_channels()));
    a
}

impl Detector {
    /// Fresh model: uniform fan-in scaled weights, zero biases.
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::stream(config.seed, "detector.init");
        let layers = architecture(&config)
            .into_iter()
            .map(|(name, category, shape, nb)| {
                let fan_in: usize = shape[1..].iter().product();
                let bound = match category {
                    Category::Head | Category::Attention => (1.0 / fan_in as f32).sqrt(),
                    _ => (6.0 / fan_in as f32).sqrt(),
                };
                Layer {
                    name: name.to_string(),
                    category,
                    weight: Tensor::uniform(&shape, bound, &mut rng),
                    bias: Tensor::zeros(&[nb]),
                }
            })
            .collect();
        Self::from_layers(config, layers)
    }

    /// Assemble a model from explicit layers, checking them against the
    /// architecture implied by `config`.
    pub fn from_layers(config: DetectorConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        let arch = architecture(&config);
        if arch.len() != layers.len() {
            return Err(Error::shape(
                "Detector",
                format!("expected {} layers, got {}", arch.len(), layers.len()),
            ));
        }
        for ((name, cat, shape, nb), l) in arch.iter().zip(&layers) {
            if l.name != *name || l.category != *cat || l.weight.shape() != &shape[..] || l.bias.shape() != [*nb] {
                return Err(Error::shape(
                    "Detector",
                    format!(
                        "layer {} ({:?}, {:?}, bias {:?}) does not match expected {name} ({cat:?}, {shape:?}, bias [{nb}])",
                        l.name,
                        l.category,
                        l.weight.shape(),
                        l.bias.shape()
                    ),
                ));
            }
        }
        let h = config.height;
        let rows_full = cos_table_f32(&ErpGrid::pixel_center(h)?);
        let rows_half = cos_table_f32(&ErpGrid::pixel_center(h / 2)?);
        let attention_plane = erp_attention_plane(&ErpGrid::pixel_center(h / 4)?, config.erp_cap)?;
        Ok(Detector {
            config,
            layers,
            rows_full,
            rows_half,
            attention_plane,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("model has no layer {name}")))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Identifier of a layer's weight (`bias = false`) or bias tensor.
    pub fn param_id(layer: usize, bias: bool) -> ParamId {
        ParamId(2 * layer + usize::from(bias))
    }

    /// `[1,H/4,W/4]` ERP factors used by the attention stage.
    pub fn attention_plane(&self) -> &Tensor {
        &self.attention_plane
    }

    fn spatial_mode(&self, half: bool) -> ConvMode {
        if self.config.eac {
            ConvMode::Eac(if half { self.rows_half.clone() } else { self.rows_full.clone() })
        } else {
            ConvMode::Pad(PaddingRule::WrapClamp)
        }
    }

    pub fn check_clip(&self, clip: &Tensor) -> Result<()> {
        if clip.shape() != self.config.clip_shape() {
            return Err(Error::shape(
                "forward",
                format!("clip {:?} vs configured {:?}", clip.shape(), self.config.clip_shape()),
            ));
        }
        Ok(())
    }
}

/// Operations the network is built from. Parameters are looked up by layer
/// index in the model the backend wraps.
pub trait Exec {
    type V;
    fn clip(&mut self, clip: &Tensor) -> Result<Self::V>;
    fn frame(&mut self, clip: &Tensor, t: usize) -> Result<Self::V>;
    fn conv(&mut self, layer: usize, x: &Self::V, mode: &ConvMode) -> Result<Self::V>;
    fn temporal(&mut self, layer: usize, x: &Self::V) -> Result<Self::V>;
    fn relu(&mut self, x: &Self::V) -> Result<Self::V>;
    fn maxpool2(&mut self, x: &Self::V) -> Result<Self::V>;
    fn concat(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    /// `f_t ⊙ (σ(W_d [f_t ‖ f_prev] + b) · plane)`.
    fn attention(&mut self, layer: usize, f_t: &Self::V, f_prev: &Self::V, plane: &Tensor) -> Result<Self::V>;
}

/// The network on one clip `[T,C,H,W]`; returns raw head output
/// `[A·(5+K), H/4, W/4]`.
pub fn forward<E: Exec>(model: &Detector, e: &mut E, clip: &Tensor) -> Result<E::V> {
    model.check_clip(clip)?;
    let cfg = model.config();
    let wrap = ConvMode::Pad(PaddingRule::WrapClamp);
    let pointwise = ConvMode::Pad(PaddingRule::Zero);
    let idx = |n| model.layer_index(n);

    let c = e.clip(clip)?;
    let m = e.temporal(idx(TEMPORAL)?, &c)?;
    let m = e.conv(idx(MOTION1)?, &m, &wrap)?;
    let m = e.relu(&m)?;
    let m = e.maxpool2(&m)?;
    let m = e.conv(idx(MOTION2)?, &m, &wrap)?;
    let m = e.relu(&m)?;
    let motion = e.maxpool2(&m)?;

    let fused = |e: &mut E, t: usize| -> Result<E::V> {
        let x = e.frame(clip, t)?;
        let x = e.conv(idx(SPATIAL1)?, &x, &model.spatial_mode(false))?;
        let x = e.relu(&x)?;
        let x = e.maxpool2(&x)?;
        let x = e.conv(idx(SPATIAL2)?, &x, &model.spatial_mode(true))?;
        let x = e.relu(&x)?;
        let x = e.maxpool2(&x)?;
        let x = e.concat(&x, &motion)?;
        let x = e.conv(idx(FUSION)?, &x, &pointwise)?;
        e.relu(&x)
    };
    let f_t = fused(e, cfg.clip_len - 1)?;
    let features = if cfg.attention {
        let f_prev = fused(e, cfg.clip_len - 2)?;
        e.attention(idx(ATTENTION)?, &f_t, &f_prev, model.attention_plane())?
    } else {
        f_t
    };
    e.conv(idx(HEAD)?, &features, &wrap)
}

/// Direct evaluation in `f32`.
pub struct FloatExec<'a> {
    model: &'a Detector,
}

impl<'a> FloatExec<'a> {
    pub fn new(model: &'a Detector) -> Self {
        FloatExec { model }
    }
}

/// Shared float kernels, also used by the integer backend for exempt layers.
pub(crate) fn float_conv(layer: &Layer, x: &Tensor, mode: &ConvMode) -> Result<Tensor> {
    match mode {
        ConvMode::Pad(p) => conv2d(x, &layer.weight, Some(&layer.bias), *p),
        ConvMode::Eac(rows) => eac_forward(x, &layer.weight, Some(&layer.bias), rows),
    }
}

pub(crate) fn float_attention(layer: &Layer, f_t: &Tensor, f_prev: &Tensor, plane: &Tensor) -> Result<Tensor> {
    let cat = concat_channels(&[f_t, f_prev])?;
    let gate = conv2d(&cat, &layer.weight, Some(&layer.bias), PaddingRule::Zero)?.map(sigmoid);
    mul_channels(f_t, &gate.mul(plane)?)
}

pub(crate) fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

impl Exec for FloatExec<'_> {
    type V = Tensor;

    fn clip(&mut self, clip: &Tensor) -> Result<Tensor> {
        Ok(clip.clone())
    }

    fn frame(&mut self, clip: &Tensor, t: usize) -> Result<Tensor> {
        clip.index0(t)
    }

    fn conv(&mut self, layer: usize, x: &Tensor, mode: &ConvMode) -> Result<Tensor> {
        float_conv(&self.model.layers[layer], x, mode)
    }

    fn temporal(&mut self, layer: usize, x: &Tensor) -> Result<Tensor> {
        let l = &self.model.layers[layer];
        temporal_conv(x, &l.weight, &l.bias)
    }

    fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(relu(x))
    }

    fn maxpool2(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(maxpool2(x)?.0)
    }

    fn concat(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        concat_channels(&[a, b])
    }

    fn attention(&mut self, layer: usize, f_t: &Tensor, f_prev: &Tensor, plane: &Tensor) -> Result<Tensor> {
        float_attention(&self.model.layers[layer], f_t, f_prev, plane)
    }
}

/// Records the forward pass on a [`GradTape`]; parameters of layer `i` are
/// bound to [`Detector::param_id`]`(i, _)`.
pub struct TapeExec<'a> {
    model: &'a Detector,
    pub tape: GradTape,
    bound: Vec<Option<(Var, Var)>>,
}

impl<'a> TapeExec<'a> {
    pub fn new(model: &'a Detector) -> Self {
        TapeExec {
            model,
            tape: GradTape::new(),
            bound: vec![None; model.layers.len()],
        }
    }

    fn params(&mut self, layer: usize) -> (Var, Var) {
        if let Some(p) = self.bound[layer] {
            return p;
        }
        let l = &self.model.layers[layer];
        let w = self.tape.param(Detector::param_id(layer, false), l.weight.clone());
        let b = self.tape.param(Detector::param_id(layer, true), l.bias.clone());
        self.bound[layer] = Some((w, b));
        (w, b)
    }
}

impl Exec for TapeExec<'_> {
    type V = Var;

    fn clip(&mut self, clip: &Tensor) -> Result<Var> {
        Ok(self.tape.constant(clip.clone()))
    }

    fn frame(&mut self, clip: &Tensor, t: usize) -> Result<Var> {
        Ok(self.tape.constant(clip.index0(t)?))
    }

    fn conv(&mut self, layer: usize, x: &Var, mode: &ConvMode) -> Result<Var> {
        let (w, b) = self.params(layer);
        match mode {
            ConvMode::Pad(p) => self.tape.conv2d(*x, w, Some(b), *p),
            ConvMode::Eac(rows) => self.tape.eac_conv2d(*x, w, Some(b), rows.clone()),
        }
    }

    fn temporal(&mut self, layer: usize, x: &Var) -> Result<Var> {
        let (w, b) = self.params(layer);
        self.tape.temporal_conv(*x, w, b)
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        Ok(self.tape.relu(*x))
    }

    fn maxpool2(&mut self, x: &Var) -> Result<Var> {
        self.tape.maxpool2(*x)
    }

    fn concat(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.concat(&[*a, *b])
    }

    fn attention(&mut self, layer: usize, f_t: &Var, f_prev: &Var, plane: &Tensor) -> Result<Var> {
        let (w, b) = self.params(layer);
        let cat = self.tape.concat(&[*f_t, *f_prev])?;
        let pre = self.tape.conv2d(cat, w, Some(b), PaddingRule::Zero)?;
        let gate = self.tape.sigmoid(pre);
        let plane = self.tape.constant(plane.clone());
        let a = self.tape.mul(gate, plane)?;
        self.tape.mul_channels(*f_t, a)
    }
}

/// Float forward pass.
pub fn predict(model: &Detector, clip: &Tensor) -> Result<Tensor> {
    forward(model, &mut FloatExec::new(model), clip)
}
