use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Round to nearest, ties to even, for |x| < 2²²; vectorises without SSE4.1.
#[inline(always)]
pub(crate) fn round_even_f32(x: f32) -> f32 {
    const MAGIC: f32 = 12_582_912.0; // 1.5 · 2²³
    (x + MAGIC) - MAGIC
}

/// Symmetric per-output-channel INT8 weights.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedWeights {
    pub shape: Vec<usize>,
    pub q: Vec<i8>,
    /// One positive scale per output channel (first axis).
    pub scales: Vec<f32>,
    /// Channels whose weights were all zero; their scale is 1.
    pub flagged: Vec<bool>,
}

impl QuantizedWeights {
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn per_channel(&self) -> usize {
        self.q.len() / self.channels()
    }

    pub fn dequantize(&self) -> Tensor {
        let n = self.per_channel();
        let data = self
            .q
            .iter()
            .enumerate()
            .map(|(i, &q)| self.scales[i / n] * f32::from(q))
            .collect();
        Tensor::from_parts_unchecked(self.shape.clone(), data)
    }

    /// Bytes of INT8 values plus `f32` scales.
    pub fn payload_bytes(&self) -> usize {
        self.q.len() + 4 * self.scales.len()
    }
}

/// `scale = max|w| / 127` per channel and `q = round_half_even(w / scale)`,
/// evaluated in `f64` against the stored `f32` scale so that
/// `|w − scale·q| ≤ scale/2` holds for every element.
pub fn quantize_weights(w: &Tensor) -> Result<QuantizedWeights> {
    let Some(&channels) = w.shape().first() else {
        return Err(Error::shape("quantize_weights", "weights need an output-channel axis"));
    };
    if channels == 0 || w.is_empty() {
        return Err(Error::shape("quantize_weights", "empty weight tensor"));
    }
    if let Some(v) = w.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("quantize_weights: weight {v}")));
    }
    let n = w.len() / channels;
    let mut q = Vec::with_capacity(w.len());
    let mut scales = Vec::with_capacity(channels);
    let mut flagged = Vec::with_capacity(channels);
    for ch in w.data().chunks(n) {
        let max = ch.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let (scale, flag) = if max == 0.0 {
            (1.0f32, true)
        } else {
            ((f64::from(max) / 127.0) as f32, false)
        };
        let s = f64::from(scale);
        q.extend(
            ch.iter()
                .map(|&v| (f64::from(v) / s).round_ties_even().clamp(-127.0, 127.0) as i8),
        );
        scales.push(scale);
        flagged.push(flag);
    }
    Ok(QuantizedWeights {
        shape: w.shape().to_vec(),
        q,
        scales,
        flagged,
    })
}

/// Observed activation extremes for one layer input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationRange {
    pub min: f32,
    pub max: f32,
}

impl ActivationRange {
    /// A range that never saw anything but zeros.
    pub fn is_degenerate(&self) -> bool {
        self.min == 0.0 && self.max == 0.0
    }
}

/// Per-tensor affine activation quantization onto `0..=255`:
/// `x ≈ scale · (q − zero_point)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActQuant {
    pub scale: f32,
    pub zero_point: i32,
}

impl ActQuant {
    /// Parameters covering `range` widened to include zero, so that zero is
    /// exactly representable. A degenerate range gives scale 1, zero point 0.
    pub fn from_range(range: ActivationRange) -> Result<Self> {
        if !range.min.is_finite() || !range.max.is_finite() || range.min > range.max {
            return Err(Error::InvalidArgument(format!("activation range {range:?} is not a finite interval")));
        }
        let lo = f64::from(range.min.min(0.0));
        let hi = f64::from(range.max.max(0.0));
        if hi - lo == 0.0 {
            return Ok(ActQuant {
                scale: 1.0,
                zero_point: 0,
            });
        }
        let scale = ((hi - lo) / 255.0) as f32;
        let zero_point = (-lo / f64::from(scale)).round_ties_even().clamp(0.0, 255.0) as i32;
        Ok(ActQuant { scale, zero_point })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) || !(0..=255).contains(&self.zero_point) {
            return Err(Error::Decode(format!("invalid activation quantization {self:?}")));
        }
        Ok(())
    }

    /// Largest magnitude of a centred code `q − zero_point`.
    pub fn max_centered(&self) -> i64 {
        i64::from(self.zero_point.max(255 - self.zero_point))
    }

    /// Centred codes `q − zero_point` for every element of `x`.
    pub fn quantize_centered(&self, x: &[f32], out: &mut Vec<i16>) {
        let inv = 1.0 / self.scale;
        let lo = -(self.zero_point as f32);
        let hi = 255.0 + lo;
        out.clear();
        out.extend(x.iter().map(|&v| round_even_f32((v * inv).clamp(lo, hi)) as i16));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn channel_fixture() {
        let w = Tensor::new(vec![2, 3], vec![-1.0, 0.5, 0.25, 0.0, 0.0, 0.0]).unwrap();
        let q = quantize_weights(&w).unwrap();
        assert_eq!(q.q, vec![-127, 64, 32, 0, 0, 0]);
        assert_eq!(q.scales, vec![(1.0f64 / 127.0) as f32, 1.0]);
        assert_eq!(q.flagged, vec![false, true]);
    }

    #[test]
    fn activation_parameters() {
        let a = ActQuant::from_range(ActivationRange { min: 0.0, max: 2.55 }).unwrap();
        assert_eq!(a.zero_point, 0);
        assert!((a.scale - 0.01).abs() < 1e-7);
        let d = ActQuant::from_range(ActivationRange { min: 0.0, max: 0.0 }).unwrap();
        assert_eq!((d.scale, d.zero_point), (1.0, 0));
        let s = ActQuant::from_range(ActivationRange { min: -1.0, max: 1.0 }).unwrap();
        // 1 / f32(2/255) falls just below 127.5
        assert_eq!(s.zero_point, 127);
        let mut out = Vec::new();
        s.quantize_centered(&[0.0, 1.0, -1.0, 7.0, -7.0], &mut out);
        assert_eq!(out, vec![0, 127, -127, 128, -127]);
        assert!(ActQuant::from_range(ActivationRange { min: 1.0, max: 0.0 }).is_err());
    }

    #[test]
    fn magic_rounding_is_half_even() {
        for (x, r) in [(0.5, 0.0), (1.5, 2.0), (2.5, 2.0), (-0.5, 0.0), (-1.5, -2.0), (3.49, 3.0), (-3.51, -4.0)] {
            assert_eq!(round_even_f32(x), r, "{x}");
        }
    }

    proptest! {
        #[test]
        fn weight_bound_holds(v in proptest::collection::vec(-3.0f32..3.0, 1..64), c in 1usize..4) {
            let n = v.len() / c;
            prop_assume!(n > 0);
            let w = Tensor::new(vec![c, n], v[..c * n].to_vec()).unwrap();
            let q = quantize_weights(&w).unwrap();
            for (i, (&x, &qi)) in w.data().iter().zip(&q.q).enumerate() {
                let s = f64::from(q.scales[i / n]);
                prop_assert!((f64::from(x) - s * f64::from(qi)).abs() <= s / 2.0 + 1e-7);
                prop_assert!((-127..=127).contains(&qi));
            }
        }
    }
}
