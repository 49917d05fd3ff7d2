//! Reverse-mode differentiation over a fixed operator set.
//!
//! A [`GradTape`] records every operation executed through it together with
//! the values it needs for the backward pass. [`GradTape::backward`] replays the
//! record in reverse exactly once.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::conv::{self, PaddingRule};
use super::{sigmoid, Tensor};
use crate::error::{Error, Result};

/// Identifier of a trainable parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf(Option<ParamId>),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        pad: PaddingRule,
    },
    EacConv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        row_scale: Arc<[f32]>,
    },
    Temporal {
        x: Var,
        w: Var,
        b: Var,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    MulChannels {
        x: Var,
        map: Var,
    },
    Gather {
        x: Var,
        idx: Vec<u32>,
    },
    Sum(Var),
    SoftmaxCe {
        logits: Var,
        classes: usize,
        targets: Vec<usize>,
    },
    BceLogits {
        x: Var,
        targets: Vec<f32>,
    },
    SmoothL1 {
        x: Var,
        targets: Vec<f32>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward pass.
#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Parameter gradients produced by [`GradTape::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.map.get_mut(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Elementwise accumulate another set of gradients into this one.
    pub fn accumulate(&mut self, other: Gradients) {
        for (id, g) in other.map {
            match self.map.get_mut(&id) {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => {
                    self.map.insert(id, g);
                }
            }
        }
    }

    pub fn scale(&mut self, a: f32) {
        for g in self.map.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= a);
        }
    }
}

fn add_into(slot: &mut Option<Tensor>, g: &[f32], shape: &[usize]) {
    match slot {
        Some(t) => t.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(Tensor::from_parts_unchecked(shape.to_vec(), g.to_vec())),
    }
}

fn add_owned(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf(p) => p.is_some(),
            _ => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.push(value, Op::Leaf(Some(id)), &[])
    }

    /// Non-trainable leaf (inputs, fixed tables).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf(None), &[])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: PaddingRule) -> Result<Var> {
        let y = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), pad)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(y, Op::Conv2d { x, w, b, pad }, &ins))
    }

    /// Convolution whose output row `y` is scaled by `row_scale[y]` before the
    /// (unscaled) bias is added.
    pub fn eac_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, row_scale: Arc<[f32]>) -> Result<Var> {
        let y = crate::eac::eac_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &row_scale)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(y, Op::EacConv2d { x, w, b, row_scale }, &ins))
    }

    pub fn temporal_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = conv::temporal_conv(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Temporal { x, w, b }, &[x, w, b]))
    }

    /// `y = W x + b` with `x: [N]`, `W: [M,N]`, `b: [M]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let [m, n] = *wv.shape() else {
            return Err(Error::shape("dense", format!("weights must be [M,N], got {:?}", wv.shape())));
        };
        if xv.len() != n {
            return Err(Error::shape("dense", format!("N: input has {} values, weights expect {n}", xv.len())));
        }
        let mut out = vec![0.0f32; m];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != m {
                return Err(Error::shape("dense", format!("M: bias has {} entries, expected {m}", bv.len())));
            }
            out.copy_from_slice(bv.data());
        }
        for (o, row) in out.iter_mut().zip(wv.data().chunks(n)) {
            *o += row.iter().zip(xv.data()).map(|(a, b)| a * b).sum::<f32>();
        }
        let y = Tensor::from_op("dense", vec![m], out)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        Ok(self.push(y, Op::Dense { x, w, b }, &ins))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).mul(self.value(b))?;
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    /// Concatenate `[C_i,H,W]` tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let y = concat_channels(&parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>())?;
        Ok(self.push(y, Op::Concat(parts.to_vec()), parts))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = conv::maxpool2(self.value(x))?;
        Ok(self.push(y, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// `x: [C,H,W]` times `map: [1,H,W]`, broadcast over channels.
    pub fn mul_channels(&mut self, x: Var, map: Var) -> Result<Var> {
        let y = mul_channels(self.value(x), self.value(map))?;
        Ok(self.push(y, Op::MulChannels { x, map }, &[x, map]))
    }

    /// Flat gather: `out[i] = x[idx[i]]`.
    pub fn gather(&mut self, x: Var, idx: Vec<u32>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= xv.len()) {
            return Err(Error::shape("gather", format!("index {bad} >= {}", xv.len())));
        }
        if idx.is_empty() {
            return Err(Error::shape("gather", "empty index list"));
        }
        let data: Vec<f32> = idx.iter().map(|&i| xv.data()[i as usize]).collect();
        let y = Tensor::from_parts_unchecked(vec![idx.len()], data);
        Ok(self.push(y, Op::Gather { x, idx }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x), &[x])
    }

    /// Summed softmax cross-entropy over rows of a flat `[N·K]` logit vector.
    pub fn softmax_ce(&mut self, logits: Var, classes: usize, targets: Vec<usize>) -> Result<Var> {
        let lv = self.value(logits);
        if classes == 0 || lv.len() != classes * targets.len() {
            return Err(Error::shape(
                "softmax_ce",
                format!("{} logits for {} rows of {classes} classes", lv.len(), targets.len()),
            ));
        }
        if targets.iter().any(|&t| t >= classes) {
            return Err(Error::InvalidArgument("softmax_ce target out of range".into()));
        }
        let mut loss = 0.0f32;
        for (row, &t) in lv.data().chunks(classes).zip(&targets) {
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f32>().ln();
            loss += lse - row[t];
        }
        let y = Tensor::from_op("softmax_ce", vec![1], vec![loss])?;
        Ok(self.push(y, Op::SoftmaxCe { logits, classes, targets }, &[logits]))
    }

    /// Summed binary cross-entropy on logits.
    pub fn bce_logits(&mut self, x: Var, targets: Vec<f32>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != targets.len() {
            return Err(Error::shape("bce_logits", format!("{} logits vs {} targets", xv.len(), targets.len())));
        }
        let loss: f32 = xv
            .data()
            .iter()
            .zip(&targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let y = Tensor::from_op("bce_logits", vec![1], vec![loss])?;
        Ok(self.push(y, Op::BceLogits { x, targets }, &[x]))
    }

    /// Summed smooth-L1 (Huber, β = 1) against fixed targets.
    pub fn smooth_l1(&mut self, x: Var, targets: Vec<f32>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != targets.len() {
            return Err(Error::shape("smooth_l1", format!("{} values vs {} targets", xv.len(), targets.len())));
        }
        let loss: f32 = xv
            .data()
            .iter()
            .zip(&targets)
            .map(|(&p, &t)| {
                let d = (p - t).abs();
                if d < 1.0 {
                    0.5 * d * d
                } else {
                    d - 0.5
                }
            })
            .sum();
        let y = Tensor::from_op("smooth_l1", vec![1], vec![loss])?;
        Ok(self.push(y, Op::SmoothL1 { x, targets }, &[x]))
    }

    /// Replay the tape in reverse from the scalar `loss`.
    ///
    /// Every parameter leaf receives a gradient, zero when unreachable. A tape
    /// can be replayed only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let need = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf(_) => {
                    grads[i] = Some(g);
                }
                Op::Conv2d { x, w, b, pad } => {
                    let cg = conv::conv2d_backward_impl(self.value(*x), self.value(*w), &g, *pad, need(*x))?;
                    if need(*x) {
                        add_owned(&mut grads[x.0], cg.input);
                    }
                    add_owned(&mut grads[w.0], cg.weight);
                    if let Some(b) = b {
                        add_owned(&mut grads[b.0], cg.bias);
                    }
                }
                Op::EacConv2d { x, w, b, row_scale } => {
                    let cg = crate::eac::eac_backward(self.value(*x), self.value(*w), &g, row_scale, need(*x))?;
                    if need(*x) {
                        add_owned(&mut grads[x.0], cg.input);
                    }
                    add_owned(&mut grads[w.0], cg.weight);
                    if let Some(b) = b {
                        add_owned(&mut grads[b.0], cg.bias);
                    }
                }
                Op::Temporal { x, w, b } => {
                    let cg = conv::temporal_conv_backward(self.value(*x), self.value(*w), &g)?;
                    if need(*x) {
                        add_owned(&mut grads[x.0], cg.input);
                    }
                    add_owned(&mut grads[w.0], cg.weight);
                    add_owned(&mut grads[b.0], cg.bias);
                }
                Op::Dense { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let nin = xv.len();
                    let mut dw = vec![0.0f32; wv.len()];
                    let mut dx = vec![0.0f32; nin];
                    for (r, &gv) in g.data().iter().enumerate() {
                        let row = &wv.data()[r * nin..(r + 1) * nin];
                        for j in 0..nin {
                            dw[r * nin + j] = gv * xv.data()[j];
                            dx[j] += gv * row[j];
                        }
                    }
                    add_into(&mut grads[w.0], &dw, wv.shape());
                    if need(*x) {
                        add_into(&mut grads[x.0], &dx, xv.shape());
                    }
                    if let Some(b) = b {
                        add_owned(&mut grads[b.0], g.clone());
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let d: Vec<f32> = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    add_into(&mut grads[x.0], &d, xv.shape());
                }
                Op::Sigmoid(x) => {
                    let d: Vec<f32> = node
                        .value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&s, &gv)| gv * s * (1.0 - s))
                        .collect();
                    add_into(&mut grads[x.0], &d, node.value.shape());
                }
                Op::Add(a, b) => {
                    if need(*a) {
                        add_into(&mut grads[a.0], g.data(), g.shape());
                    }
                    if need(*b) {
                        add_into(&mut grads[b.0], g.data(), g.shape());
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if need(*a) {
                        let d: Vec<f32> = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                        add_into(&mut grads[a.0], &d, av.shape());
                    }
                    if need(*b) {
                        let d: Vec<f32> = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                        add_into(&mut grads[b.0], &d, bv.shape());
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let len = pv.len();
                        if need(*p) {
                            add_into(&mut grads[p.0], &g.data()[off..off + len], pv.shape());
                        }
                        off += len;
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    let d = conv::maxpool2_backward(self.value(*x).shape(), argmax, &g);
                    add_owned(&mut grads[x.0], d);
                }
                Op::MulChannels { x, map } => {
                    let (xv, mv) = (self.value(*x), self.value(*map));
                    let plane = mv.len();
                    if need(*x) {
                        let d: Vec<f32> = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(j, &gv)| gv * mv.data()[j % plane])
                            .collect();
                        add_into(&mut grads[x.0], &d, xv.shape());
                    }
                    if need(*map) {
                        let mut d = vec![0.0f32; plane];
                        for (j, (&gv, &xv)) in g.data().iter().zip(xv.data()).enumerate() {
                            d[j % plane] += gv * xv;
                        }
                        add_into(&mut grads[map.0], &d, mv.shape());
                    }
                }
                Op::Gather { x, idx } => {
                    let xv = self.value(*x);
                    let mut d = vec![0.0f32; xv.len()];
                    for (&i, &gv) in idx.iter().zip(g.data()) {
                        d[i as usize] += gv;
                    }
                    add_into(&mut grads[x.0], &d, xv.shape());
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    let d = vec![g.data()[0]; xv.len()];
                    add_into(&mut grads[x.0], &d, xv.shape());
                }
                Op::SoftmaxCe {
                    logits,
                    classes,
                    targets,
                } => {
                    let lv = self.value(*logits);
                    let s = g.data()[0];
                    let mut d = Vec::with_capacity(lv.len());
                    for (row, &t) in lv.data().chunks(*classes).zip(targets) {
                        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                        let z: f32 = row.iter().map(|v| (v - m).exp()).sum();
                        for (k, v) in row.iter().enumerate() {
                            let p = (v - m).exp() / z;
                            d.push(s * (p - if k == t { 1.0 } else { 0.0 }));
                        }
                    }
                    add_into(&mut grads[logits.0], &d, lv.shape());
                }
                Op::BceLogits { x, targets } => {
                    let xv = self.value(*x);
                    let s = g.data()[0];
                    let d: Vec<f32> = xv
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&z, &t)| s * (sigmoid(z) - t))
                        .collect();
                    add_into(&mut grads[x.0], &d, xv.shape());
                }
                Op::SmoothL1 { x, targets } => {
                    let xv = self.value(*x);
                    let s = g.data()[0];
                    let d: Vec<f32> = xv
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&p, &t)| s * (p - t).clamp(-1.0, 1.0))
                        .collect();
                    add_into(&mut grads[x.0], &d, xv.shape());
                }
            }
        }

        let mut map = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf(Some(id)) = node.op {
                let g = grads[i].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match map.get_mut(&id) {
                    // The same parameter may be bound to several leaves.
                    Some(acc) => {
                        let acc: &mut Tensor = acc;
                        acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                    }
                    None => {
                        map.insert(id, g);
                    }
                }
            }
        }
        Ok(Gradients { map })
    }
}

pub(crate) fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?;
    let [_, h, w] = *first.shape() else {
        return Err(Error::shape("concat", format!("inputs must be [C,H,W], got {:?}", first.shape())));
    };
    let mut c = 0;
    let mut data = Vec::new();
    for p in parts {
        let [pc, ph, pw] = *p.shape() else {
            return Err(Error::shape("concat", format!("inputs must be [C,H,W], got {:?}", p.shape())));
        };
        if (ph, pw) != (h, w) {
            return Err(Error::shape("concat", format!("spatial {ph}x{pw} vs {h}x{w}")));
        }
        c += pc;
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::from_parts_unchecked(vec![c, h, w], data))
}

pub(crate) fn mul_channels(x: &Tensor, map: &Tensor) -> Result<Tensor> {
    let [c, h, w] = *x.shape() else {
        return Err(Error::shape("mul_channels", format!("features must be [C,H,W], got {:?}", x.shape())));
    };
    if map.shape() != [1, h, w] {
        return Err(Error::shape(
            "mul_channels",
            format!("map {:?} vs features {:?}", map.shape(), x.shape()),
        ));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(c * plane);
    for ch in x.data().chunks(plane) {
        data.extend(ch.iter().zip(map.data()).map(|(a, b)| a * b));
    }
    Tensor::from_op("mul_channels", vec![c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::finite_diff_grad;

    #[test]
    fn linear_loss_gradient_is_input() {
        let mut rng = Rng::new(1);
        let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let w = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let mut tape = GradTape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(ParamId(0), w);
        let p = tape.mul(wv, xv).unwrap();
        let l = tape.sum(p);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap(), &x);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut tape = GradTape::new();
        let w = tape.param(ParamId(3), Tensor::full(&[4], 2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let l = tape.sum(c);
        let _ = w;
        let g = tape.backward(l).unwrap();
        assert!(g.get(ParamId(3)).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = GradTape::new();
        let w = tape.param(ParamId(0), Tensor::scalar(1.0));
        let l = tape.sum(w);
        tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(Error::TapeConsumed)));
        assert!(matches!(tape.backward(l), Err(Error::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = GradTape::new();
        let w = tape.param(ParamId(0), Tensor::zeros(&[2]));
        assert!(tape.backward(w).is_err());
    }

    fn f64s(t: &Tensor) -> Vec<f64> {
        t.data().iter().map(|&v| f64::from(v)).collect()
    }

    #[test]
    fn losses_match_finite_differences() {
        let mut rng = Rng::new(9);
        let x0 = Tensor::uniform(&[6], 2.0, &mut rng);
        let ce_t = [2usize, 0];
        let bce_t = [0.0f32, 1.0, 1.0, 0.0, 0.3, 1.0];
        let l1_t = [0.0f32, 3.0, -1.0, 0.2, 0.0, 0.5];

        let ce = |x: &Tensor| -> f64 {
            let v = f64s(x);
            v.chunks(3)
                .zip(ce_t)
                .map(|(row, t)| row.iter().map(|z| z.exp()).sum::<f64>().ln() - row[t])
                .sum()
        };
        let bce = |x: &Tensor| -> f64 {
            f64s(x)
                .iter()
                .zip(bce_t)
                .map(|(&z, t)| {
                    let p = 1.0 / (1.0 + (-z).exp());
                    let t = f64::from(t);
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum()
        };
        let l1 = |x: &Tensor| -> f64 {
            f64s(x)
                .iter()
                .zip(l1_t)
                .map(|(&p, t)| {
                    let d = (p - f64::from(t)).abs();
                    if d < 1.0 { 0.5 * d * d } else { d - 0.5 }
                })
                .sum()
        };

        let cases: [(&dyn Fn(&mut GradTape, Var) -> Var, &dyn Fn(&Tensor) -> f64); 3] = [
            (&|t, x| t.softmax_ce(x, 3, ce_t.to_vec()).unwrap(), &ce),
            (&|t, x| t.bce_logits(x, bce_t.to_vec()).unwrap(), &bce),
            (&|t, x| t.smooth_l1(x, l1_t.to_vec()).unwrap(), &l1),
        ];
        for (build, oracle) in cases {
            let mut tape = GradTape::new();
            let xv = tape.param(ParamId(0), x0.clone());
            let l = build(&mut tape, xv);
            assert!((f64::from(tape.value(l).data()[0]) - oracle(&x0)).abs() < 1e-4);
            let g = tape.backward(l).unwrap();
            let fd = finite_diff_grad(|x| Ok(oracle(x)), &x0, 1e-3).unwrap();
            let err = crate::tensor::rel_error(g.get(ParamId(0)).unwrap(), &fd);
            assert!(err < 1e-4, "rel err {err}");
        }
    }
}
