//! Latitude-aware convolution on equirectangular frames.
//!
//! The kernel applied at row `y` is `W · cos φ(y)`. Because the factor is a
//! scalar per row, the layer runs one ordinary convolution and scales each
//! output row afterwards; the bias is added unscaled. Columns wrap, rows clamp.

use std::sync::Arc;

use crate::erp::ErpGrid;
use crate::error::{Error, Result};
use crate::tensor::{conv2d, ConvGrads, PaddingRule, Tensor};

/// `W · cos φ`, elementwise.
pub fn adjust_kernel(w: &Tensor, phi: f64) -> Result<Tensor> {
    if !(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2).contains(&phi) {
        return Err(Error::OutOfRange(format!("latitude {phi} outside [-π/2, π/2]")));
    }
    let c = phi.cos().max(0.0);
    Ok(w.map(|v| (f64::from(v) * c) as f32))
}

fn check_rows(op: &'static str, rows: usize, row_scale: &[f32]) -> Result<()> {
    if rows != row_scale.len() {
        return Err(Error::shape(
            op,
            format!("H: input has {rows} rows but the latitude table has {}", row_scale.len()),
        ));
    }
    Ok(())
}

/// Convolution with wrap/clamp padding whose output row `y` is multiplied by
/// `row_scale[y]` before the bias is added.
pub fn eac_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, row_scale: &[f32]) -> Result<Tensor> {
    let mut y = conv2d(x, w, None, PaddingRule::WrapClamp)?;
    let [cout, h, wd] = *y.shape() else { unreachable!("conv2d returns rank 3") };
    check_rows("eac_conv2d", h, row_scale)?;
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::shape(
                "eac_conv2d",
                format!("Cout: bias has {} entries, kernels produce {cout}", b.len()),
            ));
        }
    }
    for (co, plane) in y.data_mut().chunks_mut(h * wd).enumerate() {
        let b = bias.map_or(0.0, |b| b.data()[co]);
        for (row, &s) in plane.chunks_mut(wd).zip(row_scale) {
            row.iter_mut().for_each(|v| *v = *v * s + b);
        }
    }
    Ok(y)
}

/// Gradients of [`eac_forward`]. The row factor enters the chain before the
/// ordinary convolution backward; the bias sees the unscaled gradient.
pub fn eac_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor, row_scale: &[f32], need_input: bool) -> Result<ConvGrads> {
    let [cout, h, wd] = *grad_out.shape() else {
        return Err(Error::shape("eac_backward", format!("grad_out must be [Cout,H,W], got {:?}", grad_out.shape())));
    };
    check_rows("eac_backward", h, row_scale)?;
    let mut scaled = grad_out.clone();
    for plane in scaled.data_mut().chunks_mut(h * wd) {
        for (row, &s) in plane.chunks_mut(wd).zip(row_scale) {
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
    let mut g = crate::tensor::conv::conv2d_backward_impl(x, w, &scaled, PaddingRule::WrapClamp, need_input)?;
    let mut db = vec![0.0f32; cout];
    for (d, plane) in db.iter_mut().zip(grad_out.data().chunks(h * wd)) {
        *d = plane.iter().sum();
    }
    g.bias = Tensor::from_parts_unchecked(vec![cout], db);
    Ok(g)
}

/// Base kernels, bias and the per-row latitude factors of one layer.
#[derive(Clone, Debug)]
pub struct EacKernelBank {
    base_weights: Tensor,
    bias: Tensor,
    grid: ErpGrid,
    cos_table: Arc<[f32]>,
}

impl EacKernelBank {
    pub fn new(base_weights: Tensor, bias: Tensor, grid: ErpGrid) -> Result<Self> {
        let [cout, _, kh, kw] = *base_weights.shape() else {
            return Err(Error::shape(
                "EacKernelBank",
                format!("kernels must be [Cout,Cin,k,k], got {:?}", base_weights.shape()),
            ));
        };
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape("EacKernelBank", format!("k: kernel {kh}x{kw} must be square and odd")));
        }
        if bias.len() != cout {
            return Err(Error::shape(
                "EacKernelBank",
                format!("Cout: bias has {} entries, kernels produce {cout}", bias.len()),
            ));
        }
        Ok(EacKernelBank {
            base_weights,
            bias,
            cos_table: cos_table_f32(&grid),
            grid,
        })
    }

    pub fn base_weights(&self) -> &Tensor {
        &self.base_weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn grid(&self) -> &ErpGrid {
        &self.grid
    }

    pub fn cos_table(&self) -> &Arc<[f32]> {
        &self.cos_table
    }

    /// The kernel effectively applied at row `y`.
    pub fn effective_kernel(&self, y: usize) -> Result<Tensor> {
        let s = *self
            .cos_table
            .get(y)
            .ok_or_else(|| Error::OutOfRange(format!("row {y} outside grid of height {}", self.grid.height())))?;
        Ok(self.base_weights.scale(s))
    }
}

/// The grid's latitude table narrowed to `f32`, shared between layers.
pub fn cos_table_f32(grid: &ErpGrid) -> Arc<[f32]> {
    grid.cos_lat_table().into_iter().map(|c| c as f32).collect()
}

/// Apply a kernel bank to `[Cin,H,W]` input on the bank's grid.
pub fn eac_conv2d(input: &Tensor, bank: &EacKernelBank) -> Result<Tensor> {
    let g = bank.grid();
    match *input.shape() {
        [_, h, w] if h == g.height() && w == g.width() => {}
        _ => {
            return Err(Error::shape(
                "eac_conv2d",
                format!("input {:?} does not match the {}x{} grid", input.shape(), g.height(), g.width()),
            ))
        }
    }
    eac_forward(input, &bank.base_weights, Some(&bank.bias), &bank.cos_table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erp::LatMode;
    use crate::rng::Rng;
    use crate::tensor::conv2d_reference;
    use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, SQRT_2};

    fn bank(cout: usize, cin: usize, k: usize, h: usize, seed: u64) -> EacKernelBank {
        let mut rng = Rng::new(seed);
        let w = Tensor::uniform(&[cout, cin, k, k], 1.0, &mut rng);
        EacKernelBank::new(w, Tensor::zeros(&[cout]), ErpGrid::pixel_center(h).unwrap()).unwrap()
    }

    #[test]
    fn adjust_kernel_fixtures() {
        let w = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        assert!((adjust_kernel(&w, FRAC_PI_3).unwrap().data()[0] - 0.5).abs() < 1e-7);
        let w = Tensor::new(vec![1, 2], vec![2.0, -4.0]).unwrap();
        let a = adjust_kernel(&w, FRAC_PI_4).unwrap();
        assert!((f64::from(a.data()[0]) - SQRT_2).abs() < 1e-6);
        assert!((f64::from(a.data()[1]) + 2.0 * SQRT_2).abs() < 1e-6);
        assert_eq!(adjust_kernel(&w, 0.0).unwrap(), w);
        assert!(adjust_kernel(&w, 2.0).is_err());
    }

    #[test]
    fn rejects_grid_mismatch() {
        let b = bank(2, 3, 3, 16, 0);
        assert!(eac_conv2d(&Tensor::zeros(&[3, 8, 16]), &b).is_err());
        assert!(eac_conv2d(&Tensor::zeros(&[2, 16, 32]), &b).is_err());
        let g = ErpGrid::pixel_center(16).unwrap();
        assert!(EacKernelBank::new(Tensor::zeros(&[2, 3, 2, 2]), Tensor::zeros(&[2]), g).is_err());
        assert!(EacKernelBank::new(Tensor::zeros(&[2, 3, 3, 3]), Tensor::zeros(&[3]), g).is_err());
    }

    #[test]
    fn bias_is_not_scaled() {
        let g = ErpGrid::pixel_center(4).unwrap();
        let b = EacKernelBank::new(Tensor::zeros(&[1, 1, 3, 3]), Tensor::full(&[1], 0.7), g).unwrap();
        let y = eac_conv2d(&Tensor::full(&[1, 4, 8], 1.0), &b).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn effective_kernel_is_scalar_multiple() {
        let b = bank(2, 3, 3, 16, 4);
        for y in 0..16 {
            let e = b.effective_kernel(y).unwrap();
            for (a, w) in e.data().iter().zip(b.base_weights().data()) {
                assert_eq!(*a, w * b.cos_table()[y]);
            }
        }
        assert!(b.effective_kernel(16).is_err());
    }

    #[test]
    fn matches_row_scaled_reference() {
        for seed in 0..5 {
            let b = bank(2, 3, 3, 16, 100 + seed);
            let x = Tensor::uniform(&[3, 16, 32], 1.0, &mut Rng::new(seed));
            let y = eac_conv2d(&x, &b).unwrap();
            let r = conv2d_reference(&x, b.base_weights(), PaddingRule::WrapClamp).unwrap();
            for (i, (a, e)) in y.data().iter().zip(r.data()).enumerate() {
                let row = (i / 32) % 16;
                assert!((a - e * b.cos_table()[row]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn impulse_wraps_across_seam() {
        let b = EacKernelBank::new(
            Tensor::full(&[1, 1, 3, 3], 1.0),
            Tensor::zeros(&[1]),
            ErpGrid::pixel_center(8).unwrap(),
        )
        .unwrap();
        let mut x = Tensor::zeros(&[1, 8, 16]);
        x.data_mut()[4 * 16] = 1.0;
        let y = eac_conv2d(&x, &b).unwrap();
        assert!(y.data()[4 * 16 + 15] > 0.0);
        assert_eq!(y.data()[4 * 16 + 14], 0.0);
    }

    #[test]
    fn exact_mode_zeroes_pole_row() {
        let g = ErpGrid::new(8, 16, LatMode::Eq1Exact).unwrap();
        let b = EacKernelBank::new(Tensor::full(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), g).unwrap();
        let y = eac_conv2d(&Tensor::full(&[1, 8, 16], 1.0), &b).unwrap();
        assert!(y.data()[..16].iter().all(|&v| v.abs() < 1e-7));
    }
}
