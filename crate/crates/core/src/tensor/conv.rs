use super::Tensor;
use crate::error::{Error, Result};

/// Border handling for same-size convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingRule {
    /// Out-of-frame samples read as zero.
    Zero,
    /// Columns wrap around (ERP frames are horizontally periodic); rows clamp to the edge.
    WrapClamp,
}

/// Source row for output row `y` shifted by `dy`, or `None` when it reads padding zeros.
#[inline]
pub(crate) fn src_row(y: usize, dy: isize, h: usize, pad: PaddingRule) -> Option<usize> {
    let sy = y as isize + dy;
    match pad {
        PaddingRule::Zero => (sy >= 0 && sy < h as isize).then_some(sy as usize),
        PaddingRule::WrapClamp => Some(sy.clamp(0, h as isize - 1) as usize),
    }
}

/// Contiguous `(dst_x, src_x, len)` runs such that `dst[x] <- src[x + dx]`.
#[inline]
pub(crate) fn col_runs(w: usize, dx: isize, pad: PaddingRule) -> ([(usize, usize, usize); 2], usize) {
    let mut runs = [(0, 0, 0); 2];
    match pad {
        PaddingRule::WrapClamp => {
            let s = dx.rem_euclid(w as isize) as usize;
            runs[0] = (0, s, w - s);
            if s == 0 {
                (runs, 1)
            } else {
                runs[1] = (w - s, 0, s);
                (runs, 2)
            }
        }
        PaddingRule::Zero => {
            let a = dx.unsigned_abs();
            if a >= w {
                (runs, 0)
            } else if dx >= 0 {
                runs[0] = (0, a, w - a);
                (runs, 1)
            } else {
                runs[0] = (a, 0, w - a);
                (runs, 1)
            }
        }
    }
}

fn conv_dims(op: &'static str, input: &Tensor, kernels: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let [cin, h, w] = input.shape() else {
        return Err(Error::shape(
            op,
            format!("input must be [Cin,H,W], got rank {} {:?}", input.rank(), input.shape()),
        ));
    };
    let [cout, kcin, kh, kw] = kernels.shape() else {
        return Err(Error::shape(
            op,
            format!("kernels must be [Cout,Cin,k,k], got rank {} {:?}", kernels.rank(), kernels.shape()),
        ));
    };
    if kcin != cin {
        return Err(Error::shape(
            op,
            format!("Cin: input has {cin} channels but kernels expect {kcin}"),
        ));
    }
    if kh != kw {
        return Err(Error::shape(op, format!("k: kernel is {kh}x{kw}, must be square")));
    }
    if kh % 2 == 0 {
        return Err(Error::shape(op, format!("k: kernel size {kh} must be odd")));
    }
    Ok((*cin, *h, *w, *cout, *kh))
}

/// Naive same-size 2-D cross-correlation, one output cell at a time.
///
/// This is the oracle the fast kernels are checked against; it shares no
/// indexing helpers with them.
pub fn conv2d_reference(input: &Tensor, kernels: &Tensor, pad: PaddingRule) -> Result<Tensor> {
    let (cin, h, w, cout, k) = conv_dims("conv2d_reference", input, kernels)?;
    let r = (k / 2) as isize;
    let x = input.data();
    let wt = kernels.data();
    let mut out = vec![0.0f32; cout * h * w];
    for co in 0..cout {
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = 0.0f32;
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy as isize + ky as isize - r;
                            let ix = ox as isize + kx as isize - r;
                            let v = match pad {
                                PaddingRule::Zero => {
                                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                        0.0
                                    } else {
                                        x[(ci * h + iy as usize) * w + ix as usize]
                                    }
                                }
                                PaddingRule::WrapClamp => {
                                    let yy = iy.max(0).min(h as isize - 1) as usize;
                                    let xx = ((ix % w as isize) + w as isize) as usize % w;
                                    x[(ci * h + yy) * w + xx]
                                }
                            };
                            acc += wt[((co * cin + ci) * k + ky) * k + kx] * v;
                        }
                    }
                }
                out[(co * h + oy) * w + ox] = acc;
            }
        }
    }
    Tensor::from_op("conv2d_reference", vec![cout, h, w], out)
}

/// Fast same-size convolution with optional per-output-channel bias.
///
/// Accumulation order per output element is fixed: bias, then `(ci, ky, kx)`
/// in row-major order. Zero weights are skipped, so pruned kernels run faster.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: Option<&Tensor>, pad: PaddingRule) -> Result<Tensor> {
    let (cin, h, w, cout, k) = conv_dims("conv2d", input, kernels)?;
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::shape(
                "conv2d",
                format!("Cout: bias has {} entries, kernels produce {cout}", b.len()),
            ));
        }
    }
    let out = conv2d_raw(input.data(), cin, h, w, kernels.data(), cout, k, bias.map(|b| b.data()), pad);
    Tensor::from_op("conv2d", vec![cout, h, w], out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_raw(
    x: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    wt: &[f32],
    cout: usize,
    k: usize,
    bias: Option<&[f32]>,
    pad: PaddingRule,
) -> Vec<f32> {
    let hw = h * w;
    let r = (k / 2) as isize;
    let mut out = vec![0.0f32; cout * hw];
    for (co, plane) in out.chunks_mut(hw).enumerate() {
        if let Some(b) = bias {
            plane.fill(b[co]);
        }
        for ci in 0..cin {
            let src_plane = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - r;
                for kx in 0..k {
                    let wv = wt[((co * cin + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (runs, nruns) = col_runs(w, kx as isize - r, pad);
                    for y in 0..h {
                        let Some(sy) = src_row(y, dy, h, pad) else { continue };
                        let src = &src_plane[sy * w..(sy + 1) * w];
                        let dst = &mut plane[y * w..(y + 1) * w];
                        for &(d, s, l) in &runs[..nruns] {
                            for (o, i) in dst[d..d + l].iter_mut().zip(&src[s..s + l]) {
                                *o += wv * *i;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out` `[Cout,H,W]`.
pub fn conv2d_backward(input: &Tensor, kernels: &Tensor, grad_out: &Tensor, pad: PaddingRule) -> Result<ConvGrads> {
    conv2d_backward_impl(input, kernels, grad_out, pad, true)
}

/// As [`conv2d_backward`]; the input gradient is left zero unless `need_input`.
pub(crate) fn conv2d_backward_impl(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    pad: PaddingRule,
    need_input: bool,
) -> Result<ConvGrads> {
    let (cin, h, w, cout, k) = conv_dims("conv2d_backward", input, kernels)?;
    if grad_out.shape() != [cout, h, w] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_out {:?} vs expected {:?}", grad_out.shape(), [cout, h, w]),
        ));
    }
    let hw = h * w;
    let r = (k / 2) as isize;
    let x = input.data();
    let wt = kernels.data();
    let g = grad_out.data();
    let mut dx = vec![0.0f32; cin * hw];
    let mut dw = vec![0.0f32; kernels.len()];
    let mut db = vec![0.0f32; cout];
    for co in 0..cout {
        let gplane = &g[co * hw..(co + 1) * hw];
        db[co] = gplane.iter().sum();
        for ci in 0..cin {
            let xplane = &x[ci * hw..(ci + 1) * hw];
            let dxplane = &mut dx[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                let dy = ky as isize - r;
                for kx in 0..k {
                    let widx = ((co * cin + ci) * k + ky) * k + kx;
                    let wv = wt[widx];
                    let (runs, nruns) = col_runs(w, kx as isize - r, pad);
                    let mut acc = 0.0f32;
                    for y in 0..h {
                        let Some(sy) = src_row(y, dy, h, pad) else { continue };
                        let grow = &gplane[y * w..(y + 1) * w];
                        let xrow = &xplane[sy * w..(sy + 1) * w];
                        for &(d, s, l) in &runs[..nruns] {
                            for (gv, xv) in grow[d..d + l].iter().zip(&xrow[s..s + l]) {
                                acc += gv * xv;
                            }
                        }
                        if need_input && wv != 0.0 {
                            let dxrow = &mut dxplane[sy * w..(sy + 1) * w];
                            for &(d, s, l) in &runs[..nruns] {
                                for (o, gv) in dxrow[s..s + l].iter_mut().zip(&grow[d..d + l]) {
                                    *o += wv * gv;
                                }
                            }
                        }
                    }
                    dw[widx] = acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_parts_unchecked(vec![cin, h, w], dx),
        weight: Tensor::from_parts_unchecked(kernels.shape().to_vec(), dw),
        bias: Tensor::from_parts_unchecked(vec![cout], db),
    })
}

/// 2x2 max-pool with stride 2 over `[C,H,W]`; returns the pooled tensor and the
/// flat source index of every output element (first maximum wins).
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let [c, h, w] = *input.shape() else {
        return Err(Error::shape("maxpool2", format!("input must be [C,H,W], got {:?}", input.shape())));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("maxpool2", format!("H and W must be even, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (ch * h + 2 * oy) * w + 2 * ox;
                let cands = [base, base + 1, base + w, base + w + 1];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_parts_unchecked(vec![c, oh, ow], out), idx))
}

pub fn maxpool2_backward(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(input_shape);
    let d = g.data_mut();
    for (&i, &gv) in argmax.iter().zip(grad_out.data()) {
        d[i as usize] += gv;
    }
    g
}

fn temporal_dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    let [t, c, h, w] = *input.shape() else {
        return Err(Error::shape(
            "temporal_conv",
            format!("input must be [T,C,H,W], got {:?}", input.shape()),
        ));
    };
    if weight.shape() != [c, t] {
        return Err(Error::shape(
            "temporal_conv",
            format!("weights must be [C={c},T={t}], got {:?}", weight.shape()),
        ));
    }
    Ok((t, c, h * w))
}

/// Depthwise convolution over the frame axis that collapses all `T` frames:
/// `out[c] = b[c] + Σ_t w[c,t] · x[t,c]`.
pub fn temporal_conv(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (t, c, hw) = temporal_dims(input, weight)?;
    if bias.len() != c {
        return Err(Error::shape("temporal_conv", format!("bias must have C={c} entries")));
    }
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0f32; c * hw];
    for ch in 0..c {
        let dst = &mut out[ch * hw..(ch + 1) * hw];
        dst.fill(bias.data()[ch]);
        for f in 0..t {
            let wv = wt[ch * t + f];
            if wv == 0.0 {
                continue;
            }
            let src = &x[(f * c + ch) * hw..(f * c + ch + 1) * hw];
            for (o, v) in dst.iter_mut().zip(src) {
                *o += wv * v;
            }
        }
    }
    let [_, _, h, w] = *input.shape() else { unreachable!() };
    Tensor::from_op("temporal_conv", vec![c, h, w], out)
}

pub fn temporal_conv_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let (t, c, hw) = temporal_dims(input, weight)?;
    if grad_out.len() != c * hw {
        return Err(Error::shape("temporal_conv_backward", "grad_out size"));
    }
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();
    let mut dx = vec![0.0f32; input.len()];
    let mut dw = vec![0.0f32; weight.len()];
    let mut db = vec![0.0f32; c];
    for ch in 0..c {
        let gp = &g[ch * hw..(ch + 1) * hw];
        db[ch] = gp.iter().sum();
        for f in 0..t {
            let off = (f * c + ch) * hw;
            dw[ch * t + f] = gp.iter().zip(&x[off..off + hw]).map(|(a, b)| a * b).sum();
            let wv = wt[ch * t + f];
            for (o, gv) in dx[off..off + hw].iter_mut().zip(gp) {
                *o += wv * gv;
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_parts_unchecked(input.shape().to_vec(), dx),
        weight: Tensor::from_parts_unchecked(weight.shape().to_vec(), dw),
        bias: Tensor::from_parts_unchecked(vec![c], db),
    })
}
