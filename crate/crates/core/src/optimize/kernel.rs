//! Integer convolution: pair-interleaved im2col and an i16×i16→i32
//! multiply-accumulate over adjacent reduction pairs (SSE2 `pmaddwd` on
//! x86-64, scalar elsewhere).

use crate::tensor::conv::{col_runs, src_row};
use crate::tensor::PaddingRule;

/// Reduction pairs for `cin·k·k` taps.
pub(crate) fn kpairs(cin: usize, k: usize) -> usize {
    (cin * k * k).div_ceil(2)
}

/// Lay out every receptive field as `cols[(j·P + p)·2 + e] = tap 2j+e at pixel p`,
/// taps enumerated `(ci, ky, kx)` row-major. Padding taps read zero, which is
/// the centred code of a real zero.
pub(crate) fn im2col_pairs(x: &[i16], cin: usize, h: usize, w: usize, k: usize, pad: PaddingRule, cols: &mut Vec<i16>) {
    let p = h * w;
    let kp = kpairs(cin, k);
    cols.clear();
    cols.resize(kp * p * 2, 0);
    let r = (k / 2) as isize;
    let mut tap = 0usize;
    for ci in 0..cin {
        let plane = &x[ci * p..(ci + 1) * p];
        for ky in 0..k {
            for kx in 0..k {
                let (j, e) = (tap / 2, tap % 2);
                let dst = &mut cols[j * p * 2..(j + 1) * p * 2];
                let (runs, nruns) = col_runs(w, kx as isize - r, pad);
                for y in 0..h {
                    let Some(sy) = src_row(y, ky as isize - r, h, pad) else { continue };
                    let src = &plane[sy * w..(sy + 1) * w];
                    for &(d, s, l) in &runs[..nruns] {
                        for (i, &v) in src[s..s + l].iter().enumerate() {
                            dst[(y * w + d + i) * 2 + e] = v;
                        }
                    }
                }
                tap += 1;
            }
        }
    }
}

/// Pack `[Cout, K]` INT8 weights into `[Cout, ⌈K/2⌉]` lanes holding two i16
/// values each (even tap in the low half).
pub(crate) fn pack_weight_pairs(q: &[i8], cout: usize) -> Vec<i32> {
    let kk = q.len() / cout;
    let kp = kk.div_ceil(2);
    let mut out = vec![0i32; cout * kp];
    for co in 0..cout {
        let row = &q[co * kk..(co + 1) * kk];
        for j in 0..kp {
            let lo = i32::from(row[2 * j]) as u16 as u32;
            let hi = row.get(2 * j + 1).map_or(0, |&v| i32::from(v) as u16 as u32);
            out[co * kp + j] = (lo | (hi << 16)) as i32;
        }
    }
    out
}

#[inline(always)]
fn unpack(v: i32) -> (i32, i32) {
    (i32::from(v as i16), v >> 16)
}

fn gemm_scalar_range(wp: &[i32], cols: &[i16], kp: usize, p: usize, co: usize, px: std::ops::Range<usize>, acc: &mut [i32]) {
    for j in 0..kp {
        let (w0, w1) = unpack(wp[co * kp + j]);
        let base = j * p * 2;
        for i in px.clone() {
            acc[co * p + i] += w0 * i32::from(cols[base + 2 * i]) + w1 * i32::from(cols[base + 2 * i + 1]);
        }
    }
}

/// `acc[co, p] = Σ_j wp[co, j] · cols[j, p]` with 32-bit accumulation.
pub(crate) fn gemm_pairs(wp: &[i32], cols: &[i16], cout: usize, kp: usize, p: usize, acc: &mut Vec<i32>) {
    debug_assert_eq!(wp.len(), cout * kp);
    debug_assert_eq!(cols.len(), kp * p * 2);
    acc.clear();
    acc.resize(cout * p, 0);
    #[cfg(target_arch = "x86_64")]
    {
        let tiled = p - p % 16;
        // SAFETY: SSE2 is part of the x86-64 baseline; all loads and stores stay
        // inside `cols` and `acc` because tiles cover pixels < `tiled` ≤ `p`.
        unsafe { sse2::gemm_tiles(wp, cols, cout, kp, p, tiled, acc) };
        if tiled < p {
            for co in 0..cout {
                gemm_scalar_range(wp, cols, kp, p, co, tiled..p, acc);
            }
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    for co in 0..cout {
        gemm_scalar_range(wp, cols, kp, p, co, 0..p, acc);
    }
}

#[cfg(target_arch = "x86_64")]
mod sse2 {
    use std::arch::x86_64::*;

    /// Sixteen pixels of two output channels per tile; eight accumulators
    /// stay in registers across the whole reduction.
    pub(super) unsafe fn gemm_tiles(wp: &[i32], cols: &[i16], cout: usize, kp: usize, p: usize, tiled: usize, acc: &mut [i32]) {
        let mut co = 0;
        while co < cout {
            let pair = co + 1 < cout;
            let mut px = 0;
            while px < tiled {
                let mut a = [_mm_setzero_si128(); 4];
                let mut b = [_mm_setzero_si128(); 4];
                for j in 0..kp {
                    let wa = _mm_set1_epi32(wp[co * kp + j]);
                    let wb = if pair { _mm_set1_epi32(wp[(co + 1) * kp + j]) } else { _mm_setzero_si128() };
                    let src = cols.as_ptr().add((j * p + px) * 2) as *const __m128i;
                    for t in 0..4 {
                        let v = _mm_loadu_si128(src.add(t));
                        a[t] = _mm_add_epi32(a[t], _mm_madd_epi16(v, wa));
                        b[t] = _mm_add_epi32(b[t], _mm_madd_epi16(v, wb));
                    }
                }
                let dst = acc.as_mut_ptr().add(co * p + px) as *mut __m128i;
                for (t, v) in a.iter().enumerate() {
                    _mm_storeu_si128(dst.add(t), *v);
                }
                if pair {
                    let dst = acc.as_mut_ptr().add((co + 1) * p + px) as *mut __m128i;
                    for (t, v) in b.iter().enumerate() {
                        _mm_storeu_si128(dst.add(t), *v);
                    }
                }
                px += 16;
            }
            co += 2;
        }
    }
}

/// Integer same-size convolution of centred activation codes.
pub(crate) fn conv_int(
    x: &[i16],
    cin: usize,
    h: usize,
    w: usize,
    wp: &[i32],
    cout: usize,
    k: usize,
    pad: PaddingRule,
    cols: &mut Vec<i16>,
    acc: &mut Vec<i32>,
) {
    im2col_pairs(x, cin, h, w, k, pad, cols);
    gemm_pairs(wp, cols, cout, kpairs(cin, k), h * w, acc);
}
