//! Distortion-aware spatial attention.
//!
//! `A_final = σ(W_d [F_t ‖ F_{t−1}]) · A_ERP`, where `A_ERP(y) = min(1/cos φ(y), cap)`
//! emphasises stretched rows and the sigmoid gate reacts to change between
//! consecutive feature maps. Features are multiplied by `A_final`, broadcast
//! over channels.

use crate::erp::{ErpGrid, LatMode};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, sigmoid, PaddingRule, Tensor};

pub const DEFAULT_ERP_CAP: f32 = 8.0;

/// `min(1/cos φ, cap)` for one latitude.
pub fn erp_attention_factor(phi: f64, cap: f32) -> Result<f32> {
    check_cap(cap)?;
    if !(phi.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(Error::OutOfRange(format!("attention factor undefined at latitude {phi}")));
    }
    Ok(((1.0 / phi.cos()) as f32).min(cap))
}

fn check_cap(cap: f32) -> Result<()> {
    if !(cap >= 1.0 && cap.is_finite()) {
        return Err(Error::InvalidArgument(format!("attention cap must be >= 1, got {cap}")));
    }
    Ok(())
}

/// Per-row factors `[1,H,1]`. Exact-latitude grids contain the pole row and
/// are rejected.
pub fn erp_attention_map(grid: &ErpGrid, cap: f32) -> Result<Tensor> {
    check_cap(cap)?;
    if grid.lat_mode() == LatMode::Eq1Exact {
        return Err(Error::InvalidArgument(
            "attention map needs pixel-centre latitudes; row 0 of an exact grid is the pole".into(),
        ));
    }
    let data = (0..grid.height())
        .map(|y| erp_attention_factor(grid.latitude_of_row(y as f64)?, cap))
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(vec![1, grid.height(), 1], data)
}

/// The map broadcast to a full `[1,H,W]` plane.
pub fn erp_attention_plane(grid: &ErpGrid, cap: f32) -> Result<Tensor> {
    let rows = erp_attention_map(grid, cap)?;
    let w = grid.width();
    let data = rows.data().iter().flat_map(|&v| std::iter::repeat_n(v, w)).collect();
    Tensor::new(vec![1, grid.height(), w], data)
}

/// Gate projection and the row-factor clamp.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `[1, 2C, 1, 1]` weights over `[F_t ‖ F_prev]`.
    pub w_d: Tensor,
    /// `[1]` gate bias.
    pub bias: Tensor,
    pub erp_cap: f32,
}

impl AttentionParams {
    pub fn new(w_d: Tensor, bias: Tensor, erp_cap: f32) -> Result<Self> {
        check_cap(erp_cap)?;
        match *w_d.shape() {
            [1, c2, 1, 1] if c2 % 2 == 0 => {}
            _ => {
                return Err(Error::shape(
                    "AttentionParams",
                    format!("W_d must be [1, 2C, 1, 1], got {:?}", w_d.shape()),
                ))
            }
        }
        if bias.len() != 1 {
            return Err(Error::shape("AttentionParams", format!("bias must have 1 entry, got {}", bias.len())));
        }
        Ok(AttentionParams { w_d, bias, erp_cap })
    }

    /// Zero projection, zero bias: the gate is 0.5 everywhere.
    pub fn zeros(channels: usize, erp_cap: f32) -> Result<Self> {
        Self::new(Tensor::zeros(&[1, 2 * channels, 1, 1]), Tensor::zeros(&[1]), erp_cap)
    }

    pub fn feature_channels(&self) -> usize {
        self.w_d.shape()[1] / 2
    }
}

fn check_pair(f_t: &Tensor, f_prev: &Tensor, params: &AttentionParams) -> Result<()> {
    if f_t.shape() != f_prev.shape() {
        return Err(Error::shape(
            "attention",
            format!("F_t {:?} vs F_prev {:?}", f_t.shape(), f_prev.shape()),
        ));
    }
    match *f_t.shape() {
        [c, _, _] if c == params.feature_channels() => Ok(()),
        _ => Err(Error::shape(
            "attention",
            format!("C: features {:?} but W_d expects {} channels", f_t.shape(), params.feature_channels()),
        )),
    }
}

/// `σ(W_d [F_t ‖ F_prev] + b)`, shape `[1,H,W]`.
pub fn motion_gate(f_t: &Tensor, f_prev: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    check_pair(f_t, f_prev, params)?;
    let cat = crate::tensor::tape::concat_channels(&[f_t, f_prev])?;
    let pre = conv2d(&cat, &params.w_d, Some(&params.bias), PaddingRule::Zero)?;
    Ok(pre.map(sigmoid))
}

/// `features ⊙ (gate · A_ERP)`.
pub fn apply_attention(features: &Tensor, f_prev: &Tensor, grid: &ErpGrid, params: &AttentionParams) -> Result<Tensor> {
    check_pair(features, f_prev, params)?;
    let [_, h, w] = *features.shape() else { unreachable!() };
    if (h, w) != (grid.height(), grid.width()) {
        return Err(Error::shape(
            "apply_attention",
            format!("features {:?} do not match the {}x{} grid", features.shape(), grid.height(), grid.width()),
        ));
    }
    let gate = motion_gate(features, f_prev, params)?;
    let a = gate.mul(&erp_attention_plane(grid, params.erp_cap)?)?;
    crate::tensor::tape::mul_channels(features, &a)
}
