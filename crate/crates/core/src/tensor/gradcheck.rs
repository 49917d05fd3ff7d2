use super::Tensor;
use crate::error::{Error, Result};

/// Central finite differences of a scalar function, one element at a time.
///
/// `f` returns `f64` so callers can evaluate in double precision. The divisor
/// is the perturbation actually realised in `f32`, not the nominal `2·eps`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, eps: f32) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        let plus = orig + eps;
        let minus = orig - eps;
        probe.data_mut()[i] = plus;
        let fp = f(&probe)?;
        probe.data_mut()[i] = minus;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("finite_diff_grad objective at element {i}")));
        }
        out.push(((fp - fm) / (f64::from(plus) - f64::from(minus))) as f32);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn rel_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "rel_error shape mismatch");
    let (mut d, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (f64::from(x), f64::from(y));
        d += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let denom = na.max(nb).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        d.sqrt() / denom
    }
}

/// Largest elementwise error relative to the larger norm of the pair.
pub fn max_rel_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_rel_error shape mismatch");
    let scale = a
        .data()
        .iter()
        .chain(b.data())
        .map(|v| f64::from(v.abs()))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs())
        .fold(0.0, f64::max)
        / scale
}
