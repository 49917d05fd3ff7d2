//! Dense `f64` arrays and the network operations on them.

use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?}");
        Arr { shape, data }
    }

    pub fn from_f32(shape: &[usize], data: &[f32]) -> Self {
        Arr::new(shape.to_vec(), data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Arr::new(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn chw(&self) -> (usize, usize, usize) {
        match self.shape[..] {
            [c, h, w] => (c, h, w),
            _ => panic!("expected [C,H,W], got {:?}", self.shape),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Arr {
        Arr::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Frame `t` of a `[T,C,H,W]` array.
    pub fn frame(&self, t: usize) -> Arr {
        let n: usize = self.shape[1..].iter().product();
        Arr::new(self.shape[1..].to_vec(), self.data[t * n..(t + 1) * n].to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pad {
    Zero,
    /// Columns wrap, rows repeat the edge.
    WrapClamp,
}

fn sample(x: &Arr, c: usize, y: isize, xx: isize, pad: Pad) -> f64 {
    let (_, h, w) = x.chw();
    let (h, w) = (h as isize, w as isize);
    let (y, xx) = match pad {
        Pad::Zero => {
            if y < 0 || y >= h || xx < 0 || xx >= w {
                return 0.0;
            }
            (y, xx)
        }
        Pad::WrapClamp => (y.clamp(0, h - 1), xx.rem_euclid(w)),
    };
    x.data[(c * h as usize + y as usize) * w as usize + xx as usize]
}

/// Same-size correlation of `x: [C,H,W]` with `w: [O,C,k,k]`, odd `k`.
/// `row_scale[y]` multiplies the sum at output row `y` before the bias.
fn conv_scaled(x: &Arr, w: &Arr, bias: Option<&[f64]>, pad: Pad, row_scale: Option<&[f64]>) -> Arr {
    let (c, h, wd) = x.chw();
    let [o, ci, k, k2] = w.shape[..] else { panic!("kernel shape {:?}", w.shape) };
    assert!(ci == c && k == k2 && k % 2 == 1);
    let r = (k / 2) as isize;
    let mut out = Arr::zeros(&[o, h, wd]);
    for oc in 0..o {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = 0.0;
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let v = sample(x, ic, y as isize + ky as isize - r, xx as isize + kx as isize - r, pad);
                            acc += w.data[((oc * c + ic) * k + ky) * k + kx] * v;
                        }
                    }
                }
                let s = row_scale.map_or(1.0, |s| s[y]);
                out.data[(oc * h + y) * wd + xx] = acc * s + bias.map_or(0.0, |b| b[oc]);
            }
        }
    }
    out
}

pub fn conv2d(x: &Arr, w: &Arr, bias: Option<&[f64]>, pad: Pad) -> Arr {
    conv_scaled(x, w, bias, pad, None)
}

/// Latitude of row `y` on an `h`-row equirectangular grid: row edges
/// (`centre = false`, row 0 is the pole) or row centres.
pub fn latitude(h: usize, y: usize, centre: bool) -> f64 {
    let v = if centre { y as f64 + 0.5 } else { y as f64 };
    PI / 2.0 - PI * v / h as f64
}

pub fn cos_rows(h: usize, centre: bool) -> Vec<f64> {
    (0..h).map(|y| latitude(h, y, centre).cos()).collect()
}

/// Kernel `W · cos φ(y)` at every output row, wrap/clamp borders, unscaled bias.
pub fn eac_conv2d(x: &Arr, w: &Arr, bias: Option<&[f64]>, cos: &[f64]) -> Arr {
    assert_eq!(cos.len(), x.chw().1);
    conv_scaled(x, w, bias, Pad::WrapClamp, Some(cos))
}

/// `x: [T,C,H,W]`, `w: [C,T]`, `b: [C]` → `[C,H,W]`.
pub fn temporal(x: &Arr, w: &Arr, b: &[f64]) -> Arr {
    let [t, c, h, wd] = x.shape[..] else { panic!("clip shape {:?}", x.shape) };
    let mut out = Arr::zeros(&[c, h, wd]);
    for ch in 0..c {
        for p in 0..h * wd {
            out.data[ch * h * wd + p] =
                b[ch] + (0..t).map(|f| w.data[ch * t + f] * x.data[(f * c + ch) * h * wd + p]).sum::<f64>();
        }
    }
    out
}

pub fn relu(x: &Arr) -> Arr {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn maxpool2(x: &Arr) -> Arr {
    let (c, h, w) = x.chw();
    let mut out = Arr::zeros(&[c, h / 2, w / 2]);
    for ch in 0..c {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                let at = |dy: usize, dx: usize| x.data[(ch * h + 2 * y + dy) * w + 2 * xx + dx];
                out.data[(ch * (h / 2) + y) * (w / 2) + xx] = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
            }
        }
    }
    out
}

pub fn concat(a: &Arr, b: &Arr) -> Arr {
    let (ca, h, w) = a.chw();
    let (cb, hb, wb) = b.chw();
    assert_eq!((h, w), (hb, wb));
    Arr::new(vec![ca + cb, h, w], a.data.iter().chain(&b.data).copied().collect())
}

pub fn add(a: &Arr, b: &Arr) -> Arr {
    assert_eq!(a.shape, b.shape);
    Arr::new(a.shape.clone(), a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
}

pub fn mul(a: &Arr, b: &Arr) -> Arr {
    assert_eq!(a.shape, b.shape);
    Arr::new(a.shape.clone(), a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect())
}

/// `x: [C,H,W]` times `map: [1,H,W]` on every channel.
pub fn mul_channels(x: &Arr, map: &Arr) -> Arr {
    let (_, h, w) = x.chw();
    assert_eq!(map.shape, [1, h, w]);
    Arr::new(x.shape.clone(), x.data.iter().enumerate().map(|(i, v)| v * map.data[i % (h * w)]).collect())
}

/// `W x + b`, `w: [M,N]`.
pub fn dense(x: &Arr, w: &Arr, b: Option<&[f64]>) -> Arr {
    let [m, n] = w.shape[..] else { panic!("dense weights {:?}", w.shape) };
    assert_eq!(x.len(), n);
    let data = (0..m)
        .map(|i| b.map_or(0.0, |b| b[i]) + (0..n).map(|j| w.data[i * n + j] * x.data[j]).sum::<f64>())
        .collect();
    Arr::new(vec![m], data)
}

pub fn gather(x: &Arr, idx: &[usize]) -> Arr {
    Arr::new(vec![idx.len()], idx.iter().map(|&i| x.data[i]).collect())
}

pub fn sum(x: &Arr) -> f64 {
    x.data.iter().sum()
}

/// `ln σ(z)` without overflow.
fn ln_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Summed `−[t ln σ(x) + (1 − t) ln(1 − σ(x))]`.
pub fn bce_logits(x: &Arr, t: &[f64]) -> f64 {
    x.data.iter().zip(t).map(|(&z, &t)| -(t * ln_sigmoid(z) + (1.0 - t) * ln_sigmoid(-z))).sum()
}

/// Summed Huber loss with unit threshold.
pub fn smooth_l1(x: &Arr, t: &[f64]) -> f64 {
    x.data
        .iter()
        .zip(t)
        .map(|(&p, &t)| {
            let d = (p - t).abs();
            if d < 1.0 {
                d * d / 2.0
            } else {
                d - 0.5
            }
        })
        .sum()
}

/// Summed cross-entropy of rows of `k` logits against class targets.
pub fn softmax_ce(x: &Arr, k: usize, t: &[usize]) -> f64 {
    x.data
        .chunks(k)
        .zip(t)
        .map(|(row, &t)| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - row[t]
        })
        .sum()
}

/// `min(1 / cos φ, cap)`.
pub fn attention_factor(phi: f64, cap: f64) -> f64 {
    (1.0 / phi.cos()).min(cap)
}

/// `f_t ⊙ σ(w·[f_t ‖ f_prev] + b) · A(φ(y))`, row-centre latitudes, with the
/// gate evaluated per pixel.
pub fn attention(f_t: &Arr, f_prev: &Arr, w: &[f64], b: f64, cap: f64) -> Arr {
    let (c, h, wd) = f_t.chw();
    assert_eq!(f_prev.shape, f_t.shape);
    assert_eq!(w.len(), 2 * c);
    let mut out = f_t.clone();
    for y in 0..h {
        let a = attention_factor(latitude(h, y, true), cap);
        for x in 0..wd {
            let p = y * wd + x;
            let pre = b + (0..c).map(|k| w[k] * f_t.data[k * h * wd + p] + w[c + k] * f_prev.data[k * h * wd + p]).sum::<f64>();
            let g = sigmoid(pre) * a;
            for k in 0..c {
                out.data[k * h * wd + p] *= g;
            }
        }
    }
    out
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let fp = f(&probe);
            probe[i] = x[i] - eps;
            let fm = f(&probe);
            probe[i] = x[i];
            (fp - fm) / (2.0 * eps)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n = a.iter().map(|x| x * x).sum::<f64>().max(b.iter().map(|x| x * x).sum()).sqrt();
    if n == 0.0 {
        0.0
    } else {
        d / n
    }
}
