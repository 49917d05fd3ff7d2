use std::path::Path;

use super::kernel::{conv_int, kpairs, pack_weight_pairs};
use super::policy::OptimizationPolicy;
use super::quant::{quantize_weights, ActQuant, ActivationRange, QuantizedWeights};
use crate::detector::{
    float_attention, float_conv, forward, push_config, push_report, read_config, read_dir, read_report, relu, write_dir,
    Category, ConvMode, Detector, Exec, Layer, TrainReport,
};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::tensor::tape::concat_channels as concat;
use crate::tensor::{decode_tensors, encode_tensor, maxpool2, temporal_conv, PaddingRule, StoredTensor, Tensor};

pub const QUANTIZED_FORMAT: &str = "panoact-quantized/1";

/// Default calibration clipping percentile.
pub const CALIBRATION_PERCENTILE: f64 = 0.999;

/// Activation ranges per layer input; `None` for layers the policy keeps in
/// full precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub ranges: Vec<Option<ActivationRange>>,
    pub frames: usize,
}

impl Calibration {
    /// Layers whose inputs were identically zero over the whole set.
    pub fn degenerate_layers(&self) -> Vec<usize> {
        self.ranges
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_some_and(|r| r.is_degenerate()))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Linear-interpolated quantile of an ascending slice.
fn quantile(sorted: &[f32], p: f64) -> f32 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    (f64::from(sorted[lo]) + (f64::from(sorted[hi]) - f64::from(sorted[lo])) * frac) as f32
}

/// Float forward that records the extremes of every quantized layer's input.
struct CalibExec<'a> {
    model: &'a Detector,
    track: Vec<bool>,
    seen: Vec<Option<(f32, f32)>>,
}

impl CalibExec<'_> {
    fn observe(&mut self, layer: usize, x: &Tensor) {
        if !self.track[layer] {
            return;
        }
        let (lo, hi) = x
            .data()
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let e = self.seen[layer].get_or_insert((lo, hi));
        *e = (e.0.min(lo), e.1.max(hi));
    }
}

impl Exec for CalibExec<'_> {
    type V = Tensor;

    fn clip(&mut self, clip: &Tensor) -> Result<Tensor> {
        Ok(clip.clone())
    }

    fn frame(&mut self, clip: &Tensor, t: usize) -> Result<Tensor> {
        clip.index0(t)
    }

    fn conv(&mut self, layer: usize, x: &Tensor, mode: &ConvMode) -> Result<Tensor> {
        self.observe(layer, x);
        float_conv(&self.model.layers()[layer], x, mode)
    }

    fn temporal(&mut self, layer: usize, x: &Tensor) -> Result<Tensor> {
        self.observe(layer, x);
        let l = &self.model.layers()[layer];
        temporal_conv(x, &l.weight, &l.bias)
    }

    fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(relu(x))
    }

    fn maxpool2(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(maxpool2(x)?.0)
    }

    fn concat(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        concat(&[a, b])
    }

    fn attention(&mut self, layer: usize, f_t: &Tensor, f_prev: &Tensor, plane: &Tensor) -> Result<Tensor> {
        float_attention(&self.model.layers()[layer], f_t, f_prev, plane)
    }
}

/// Run the float model over `clips` and record, for every layer the policy
/// quantizes, the `1 − p` quantile of per-clip minima and the `p` quantile of
/// per-clip maxima of its input.
pub fn calibrate(model: &Detector, clips: &[Tensor], policy: &OptimizationPolicy, percentile: f64) -> Result<Calibration> {
    if clips.is_empty() {
        return Err(Error::InvalidArgument("calibration set is empty".into()));
    }
    if !(0.5..=1.0).contains(&percentile) {
        return Err(Error::InvalidArgument(format!("calibration percentile {percentile} outside [0.5, 1]")));
    }
    let track: Vec<bool> = model
        .layers()
        .iter()
        .map(|l| policy.for_category(l.category).quantizes())
        .collect();
    let n = track.len();
    let mut mins = vec![Vec::with_capacity(clips.len()); n];
    let mut maxs = vec![Vec::with_capacity(clips.len()); n];
    for clip in clips {
        let mut e = CalibExec {
            model,
            track: track.clone(),
            seen: vec![None; n],
        };
        forward(model, &mut e, clip)?;
        for (i, s) in e.seen.into_iter().enumerate() {
            if let Some((lo, hi)) = s {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::NonFinite(format!("calibration activations of {}", model.layers()[i].name)));
                }
                mins[i].push(lo);
                maxs[i].push(hi);
            }
        }
    }
    let ranges = (0..n)
        .map(|i| {
            if !track[i] {
                return None;
            }
            mins[i].sort_by(f32::total_cmp);
            maxs[i].sort_by(f32::total_cmp);
            Some(ActivationRange {
                min: quantile(&mins[i], 1.0 - percentile),
                max: quantile(&maxs[i], percentile),
            })
        })
        .collect();
    Ok(Calibration {
        ranges,
        frames: clips.len(),
    })
}

/// INT8 parameters of one quantized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct IntLayer {
    pub weights: QuantizedWeights,
    pub act: ActQuant,
    packed: Vec<i32>,
}

impl IntLayer {
    fn new(name: &str, weights: QuantizedWeights, act: ActQuant) -> Result<Self> {
        act.validate()?;
        let cout = weights.channels();
        let taps = weights.per_channel() as i64;
        let wmax = weights.q.iter().map(|q| i64::from(q.unsigned_abs())).max().unwrap_or(0);
        if taps * wmax * act.max_centered() > i64::from(i32::MAX) {
            return Err(Error::AccumulatorOverflow(name.to_string()));
        }
        let packed = pack_weight_pairs(&weights.q, cout);
        Ok(IntLayer { weights, act, packed })
    }
}

/// Provenance recorded with a quantized model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizeMeta {
    pub prune_iterations: usize,
    /// Fraction of prunable weights that are masked.
    pub sparsity: f64,
    pub calibration_frames: usize,
}

/// A detector with INT8 convolutions wherever the policy allows.
///
/// `shadow` holds the dequantized weights (and the untouched exempt layers);
/// it defines the graph and serves the full-precision parts of the forward.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedModel {
    shadow: Detector,
    int: Vec<Option<IntLayer>>,
    pub report: TrainReport,
    pub meta: OptimizeMeta,
}

/// Quantize every layer the policy marks, using calibrated input ranges.
pub fn quantize(model: &Detector, policy: &OptimizationPolicy, calib: &Calibration) -> Result<QuantizedModel> {
    if calib.ranges.len() != model.layers().len() {
        return Err(Error::InvalidArgument("calibration does not match the model's layers".into()));
    }
    let mut layers = Vec::with_capacity(model.layers().len());
    let mut int = Vec::with_capacity(model.layers().len());
    for (l, range) in model.layers().iter().zip(&calib.ranges) {
        if !policy.for_category(l.category).quantizes() {
            layers.push(l.clone());
            int.push(None);
            continue;
        }
        let range = range.ok_or_else(|| Error::InvalidArgument(format!("layer {} was not calibrated", l.name)))?;
        let qw = quantize_weights(&l.weight)?;
        let act = ActQuant::from_range(range)?;
        layers.push(Layer {
            weight: qw.dequantize(),
            ..l.clone()
        });
        int.push(Some(IntLayer::new(&l.name, qw, act)?));
    }
    Ok(QuantizedModel {
        shadow: Detector::from_layers(model.config().clone(), layers)?,
        int,
        report: TrainReport::default(),
        meta: OptimizeMeta {
            calibration_frames: calib.frames,
            ..Default::default()
        },
    })
}

impl QuantizedModel {
    /// Graph and full-precision view of the model (dequantized weights).
    pub fn shadow(&self) -> &Detector {
        &self.shadow
    }

    pub fn int_layer(&self, i: usize) -> Option<&IntLayer> {
        self.int.get(i).and_then(Option::as_ref)
    }

    /// Weight bytes (INT8 values plus scales) of the quantized layers and the
    /// `f32` bytes the same layers occupied before.
    pub fn weight_payload(&self) -> (usize, usize) {
        self.int.iter().flatten().fold((0, 0), |(q, f), l| {
            (q + l.weights.payload_bytes(), f + 4 * l.weights.q.len())
        })
    }
}

/// Integer forward: quantize each layer input, accumulate in i32, dequantize
/// at the layer boundary. Exempt layers run the float kernels unchanged.
pub struct IntExec<'a> {
    qm: &'a QuantizedModel,
    codes: Vec<i16>,
    cols: Vec<i16>,
    acc: Vec<i32>,
}

impl<'a> IntExec<'a> {
    pub fn new(qm: &'a QuantizedModel) -> Self {
        IntExec {
            qm,
            codes: Vec::new(),
            cols: Vec::new(),
            acc: Vec::new(),
        }
    }
}

impl Exec for IntExec<'_> {
    type V = Tensor;

    fn clip(&mut self, clip: &Tensor) -> Result<Tensor> {
        Ok(clip.clone())
    }

    fn frame(&mut self, clip: &Tensor, t: usize) -> Result<Tensor> {
        clip.index0(t)
    }

    fn conv(&mut self, layer: usize, x: &Tensor, mode: &ConvMode) -> Result<Tensor> {
        let l = &self.qm.shadow.layers()[layer];
        let Some(il) = &self.qm.int[layer] else {
            return float_conv(l, x, mode);
        };
        let [cin, h, w] = *x.shape() else {
            return Err(Error::shape("qforward", format!("layer {} input {:?}", l.name, x.shape())));
        };
        let [cout, kcin, k, _] = *l.weight.shape() else { unreachable!("conv weights are rank 4") };
        if kcin != cin {
            return Err(Error::shape("qforward", format!("layer {} expects {kcin} channels, got {cin}", l.name)));
        }
        let (pad, rows) = match mode {
            ConvMode::Pad(p) => (*p, None),
            ConvMode::Eac(rows) => (PaddingRule::WrapClamp, Some(rows)),
        };
        il.act.quantize_centered(x.data(), &mut self.codes);
        conv_int(&self.codes, cin, h, w, &il.packed, cout, k, pad, &mut self.cols, &mut self.acc);
        debug_assert_eq!(kpairs(cin, k) * 2 * h * w, self.cols.len());
        let hw = h * w;
        let mut out = vec![0.0f32; cout * hw];
        for co in 0..cout {
            let m = il.act.scale * il.weights.scales[co];
            let b = l.bias.data()[co];
            let acc = &self.acc[co * hw..(co + 1) * hw];
            let dst = &mut out[co * hw..(co + 1) * hw];
            match rows {
                None => {
                    for (o, &a) in dst.iter_mut().zip(acc) {
                        *o = a as f32 * m + b;
                    }
                }
                Some(rows) => {
                    for y in 0..h {
                        let s = m * rows[y];
                        for (o, &a) in dst[y * w..(y + 1) * w].iter_mut().zip(&acc[y * w..(y + 1) * w]) {
                            *o = a as f32 * s + b;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![cout, h, w], out)
    }

    fn temporal(&mut self, layer: usize, x: &Tensor) -> Result<Tensor> {
        let l = &self.qm.shadow.layers()[layer];
        let Some(il) = &self.qm.int[layer] else {
            return temporal_conv(x, &l.weight, &l.bias);
        };
        let [t, c, h, w] = *x.shape() else {
            return Err(Error::shape("qforward", format!("temporal input {:?}", x.shape())));
        };
        if l.weight.shape() != [c, t] {
            return Err(Error::shape("qforward", format!("temporal weights {:?} vs input {:?}", l.weight.shape(), x.shape())));
        }
        il.act.quantize_centered(x.data(), &mut self.codes);
        let hw = h * w;
        let mut out = vec![0.0f32; c * hw];
        let mut acc = vec![0i32; hw];
        for ch in 0..c {
            acc.fill(0);
            for f in 0..t {
                let wq = i32::from(il.weights.q[ch * t + f]);
                let src = &self.codes[(f * c + ch) * hw..(f * c + ch + 1) * hw];
                for (a, &v) in acc.iter_mut().zip(src) {
                    *a += wq * i32::from(v);
                }
            }
            let m = il.act.scale * il.weights.scales[ch];
            let b = l.bias.data()[ch];
            for (o, &a) in out[ch * hw..(ch + 1) * hw].iter_mut().zip(&acc) {
                *o = a as f32 * m + b;
            }
        }
        Tensor::new(vec![c, h, w], out)
    }

    fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(relu(x))
    }

    fn maxpool2(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(maxpool2(x)?.0)
    }

    fn concat(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        concat(&[a, b])
    }

    fn attention(&mut self, layer: usize, f_t: &Tensor, f_prev: &Tensor, plane: &Tensor) -> Result<Tensor> {
        float_attention(&self.qm.shadow.layers()[layer], f_t, f_prev, plane)
    }
}

/// Quantized forward pass on one clip.
pub fn qforward(qm: &QuantizedModel, clip: &Tensor) -> Result<Tensor> {
    forward(&qm.shadow, &mut IntExec::new(qm), clip)
}

/// Mask bitmap (bit set = stored value) followed by the non-zero codes.
fn encode_sparse(q: &[i8]) -> (Vec<i8>, Vec<i8>) {
    let mut bits = vec![0u8; q.len().div_ceil(8)];
    let mut vals = Vec::new();
    for (i, &v) in q.iter().enumerate() {
        if v != 0 {
            bits[i / 8] |= 1 << (i % 8);
            vals.push(v);
        }
    }
    (bits.into_iter().map(|b| b as i8).collect(), vals)
}

fn decode_sparse(bits: &[i8], vals: &[i8], n: usize) -> Result<Vec<i8>> {
    if bits.len() != n.div_ceil(8) {
        return Err(Error::Decode(format!("sparse bitmap has {} bytes for {n} weights", bits.len())));
    }
    let mut out = vec![0i8; n];
    let mut it = vals.iter();
    for (i, o) in out.iter_mut().enumerate() {
        if (bits[i / 8] as u8 >> (i % 8)) & 1 == 1 {
            *o = *it
                .next()
                .ok_or_else(|| Error::Decode("sparse values shorter than the bitmap".into()))?;
            if *o == 0 {
                return Err(Error::Decode("sparse value marked present is zero".into()));
            }
        }
    }
    if it.next().is_some() {
        return Err(Error::Decode("sparse values longer than the bitmap".into()));
    }
    if n % 8 != 0 && (bits[n / 8] as u8) >> (n % 8) != 0 {
        return Err(Error::Decode("sparse bitmap has bits past the end".into()));
    }
    Ok(out)
}

/// Fraction of exact zeros.
fn zero_fraction(q: &[i8]) -> f64 {
    q.iter().filter(|&&v| v == 0).count() as f64 / q.len().max(1) as f64
}

impl QuantizedModel {
    /// Manifest and tensor payload. INT8 layers store their codes densely,
    /// or as a presence bitmap plus non-zero codes when more than half are
    /// zero and that is smaller; per-channel scales, biases and the
    /// activation scale/zero-point follow as one `f32` record.
    pub fn encode(&self) -> Result<(Manifest, Vec<u8>)> {
        let mut m = Manifest::new();
        m.push("format", QUANTIZED_FORMAT)?;
        push_config(&mut m, self.shadow.config())?;
        let mut bytes = Vec::new();
        for (i, (l, il)) in self.shadow.layers().iter().zip(&self.int).enumerate() {
            let Some(il) = il else {
                m.push(format!("layer.{i}"), format!("{} {} fp32 dense", l.name, l.category.as_str()))?;
                encode_tensor(&StoredTensor::Real32(l.weight.clone()), &mut bytes);
                encode_tensor(&StoredTensor::Real32(l.bias.clone()), &mut bytes);
                continue;
            };
            let q = &il.weights.q;
            let dense = StoredTensor::Int8 {
                shape: il.weights.shape.clone(),
                data: q.clone(),
            };
            let (bits, vals) = encode_sparse(q);
            let sparse = [
                StoredTensor::Int8 { shape: vec![bits.len()], data: bits },
                StoredTensor::Int8 { shape: vec![vals.len()], data: vals },
            ];
            let use_sparse = zero_fraction(q) > 0.5
                && sparse.iter().map(StoredTensor::encoded_len).sum::<usize>() < dense.encoded_len();
            m.push(
                format!("layer.{i}"),
                format!("{} {} int8 {}", l.name, l.category.as_str(), if use_sparse { "sparse" } else { "dense" }),
            )?;
            if use_sparse {
                sparse.iter().for_each(|t| encode_tensor(t, &mut bytes));
            } else {
                encode_tensor(&dense, &mut bytes);
            }
            let mut params = il.weights.scales.clone();
            params.extend_from_slice(l.bias.data());
            params.push(il.act.scale);
            params.push(il.act.zero_point as f32);
            let n = params.len();
            encode_tensor(&StoredTensor::Real32(Tensor::new(vec![n], params)?), &mut bytes);
        }
        push_report(&mut m, &self.report, self.shadow.config().seed)?;
        m.push("optimize.prune_iterations", format!("{:06}", self.meta.prune_iterations))?;
        m.push("optimize.sparsity", format!("{:.6}", self.meta.sparsity))?;
        m.push("optimize.calibration_frames", format!("{:06}", self.meta.calibration_frames))?;
        Ok((m, bytes))
    }

    pub fn decode(m: &Manifest, bytes: &[u8]) -> Result<Self> {
        let format = m.require("format")?;
        if format != QUANTIZED_FORMAT {
            return Err(Error::Decode(format!("unsupported quantized checkpoint format {format:?}")));
        }
        let config = read_config(m)?;
        let arch = crate::detector::architecture(&config);
        let mut tensors = decode_tensors(bytes)?.into_iter();
        let mut next = |what: &str| {
            tensors
                .next()
                .ok_or_else(|| Error::Decode(format!("tensors.bin ends before {what}")))
        };
        let mut layers = Vec::new();
        let mut int = Vec::new();
        for (i, (aname, acat, wshape, nb)) in arch.iter().enumerate() {
            let entry = m.require(&format!("layer.{i}"))?;
            let parts: Vec<&str> = entry.split(' ').collect();
            let [name, cat, scheme, enc] = parts[..] else {
                return Err(Error::Decode(format!("layer.{i}: expected \"name category scheme encoding\"")));
            };
            if name != *aname || Category::parse(cat) != Some(*acat) {
                return Err(Error::Decode(format!("layer.{i}: {name} {cat} does not match the configured architecture")));
            }
            match (scheme, enc) {
                ("fp32", "dense") => {
                    let weight = next(name)?.into_real()?;
                    let bias = next(name)?.into_real()?;
                    layers.push(Layer {
                        name: name.into(),
                        category: *acat,
                        weight,
                        bias,
                    });
                    int.push(None);
                }
                ("int8", enc @ ("dense" | "sparse")) => {
                    let n: usize = wshape.iter().product();
                    let q = if enc == "dense" {
                        let (shape, q) = next(name)?.into_int8()?;
                        if shape != *wshape {
                            return Err(Error::Decode(format!("{name}: weight shape {shape:?} vs {wshape:?}")));
                        }
                        q
                    } else {
                        let (_, bits) = next(name)?.into_int8()?;
                        let (_, vals) = next(name)?.into_int8()?;
                        decode_sparse(&bits, &vals, n)?
                    };
                    let params = next(name)?.into_real()?;
                    let cout = wshape[0];
                    if params.len() != 2 * cout + 2 || *nb != cout {
                        return Err(Error::Decode(format!("{name}: parameter record has {} values", params.len())));
                    }
                    let p = params.data();
                    let scales = p[..cout].to_vec();
                    if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                        return Err(Error::Decode(format!("{name}: scales must be positive")));
                    }
                    if q.contains(&i8::MIN) {
                        return Err(Error::Decode(format!("{name}: code -128 is outside the symmetric range")));
                    }
                    let zp = p[2 * cout + 1];
                    if zp.fract() != 0.0 {
                        return Err(Error::Decode(format!("{name}: zero point {zp} is not an integer")));
                    }
                    let act = ActQuant {
                        scale: p[2 * cout],
                        zero_point: zp as i32,
                    };
                    let per = n / cout;
                    let flagged = (0..cout)
                        .map(|c| scales[c] == 1.0 && q[c * per..(c + 1) * per].iter().all(|&v| v == 0))
                        .collect();
                    let weights = QuantizedWeights {
                        shape: wshape.clone(),
                        q,
                        scales,
                        flagged,
                    };
                    layers.push(Layer {
                        name: name.into(),
                        category: *acat,
                        weight: weights.dequantize(),
                        bias: Tensor::new(vec![cout], p[cout..2 * cout].to_vec())?,
                    });
                    int.push(Some(IntLayer::new(name, weights, act)?));
                }
                _ => return Err(Error::Decode(format!("layer.{i}: unknown scheme {scheme} {enc}"))),
            }
        }
        if m.get(&format!("layer.{}", arch.len())).is_some() {
            return Err(Error::Decode("manifest lists more layers than the architecture".into()));
        }
        if tensors.next().is_some() {
            return Err(Error::Decode("tensors.bin has records beyond the listed layers".into()));
        }
        let meta = OptimizeMeta {
            prune_iterations: m.parse("optimize.prune_iterations")?,
            sparsity: m.parse("optimize.sparsity")?,
            calibration_frames: m.parse("optimize.calibration_frames")?,
        };
        Ok(QuantizedModel {
            shadow: Detector::from_layers(config, layers).map_err(|e| Error::Decode(e.to_string()))?,
            int,
            report: read_report(m)?,
            meta,
        })
    }

    pub fn serialized_size(&self) -> Result<usize> {
        let (m, b) = self.encode()?;
        Ok(m.render().len() + b.len())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let (m, b) = self.encode()?;
        write_dir(dir, &m, &b)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (m, b) = read_dir(dir)?;
        Self::decode(&m, &b)
    }
}
