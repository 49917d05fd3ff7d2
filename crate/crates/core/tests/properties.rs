//! Randomised invariants of the convolution, EAC, attention and
//! post-processing stages.

use panoact::attention::{apply_attention, erp_attention_factor, motion_gate, AttentionParams};
use panoact::bbox::{wrap_iou, BBox};
use panoact::detector::Detection;
use panoact::eac::{eac_conv2d, EacKernelBank};
use panoact::erp::{ErpGrid, LatMode};
use panoact::postprocess::{nms, postprocess_sequence, temporal_smooth, ActionTube, PostprocessSettings, TubeEntry};
use panoact::rng::Rng;
use panoact::tensor::{conv2d, conv2d_reference, PaddingRule, Tensor};
use proptest::prelude::*;

fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

fn row(t: &Tensor, c: usize, y: usize) -> &[f32] {
    let [_, h, w] = *t.shape() else { panic!("rank 3 expected") };
    &t.data()[(c * h + y) * w..(c * h + y + 1) * w]
}

fn rand_det(rng: &mut Rng, frame: usize, label: usize) -> Detection {
    Detection {
        frame,
        bbox: BBox::from_center(rng.uniform(), rng.range(0.15, 0.85), rng.range(0.05, 0.3), rng.range(0.05, 0.25)),
        label,
        confidence: rng.uniform(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear(seed in any::<u64>(), a in -2.0f32..2.0, b in -2.0f32..2.0, wrap in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let pad = if wrap { PaddingRule::WrapClamp } else { PaddingRule::Zero };
        let (x1, x2) = (rand_tensor(&[2, 5, 7], &mut rng), rand_tensor(&[2, 5, 7], &mut rng));
        let k = rand_tensor(&[3, 2, 3, 3], &mut rng);
        let mixed = x1.scale(a).add(&x2.scale(b)).unwrap();
        let lhs = conv2d_reference(&mixed, &k, pad).unwrap();
        let rhs = conv2d_reference(&x1, &k, pad).unwrap().scale(a).add(&conv2d_reference(&x2, &k, pad).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-5);
    }

    #[test]
    fn eac_equator_row_is_plain_conv(seed in any::<u64>(), half in 16usize..20) {
        // The exact grid puts row H/2 on the equator, where cos φ = 1.
        let mut rng = Rng::new(seed);
        let h = 2 * half;
        let grid = ErpGrid::new(h, 2 * h, LatMode::Eq1Exact).unwrap();
        let x = rand_tensor(&[2, h, 2 * h], &mut rng);
        let w = rand_tensor(&[2, 2, 3, 3], &mut rng);
        let bank = EacKernelBank::new(w.clone(), Tensor::zeros(&[2]), grid).unwrap();
        let eac = eac_conv2d(&x, &bank).unwrap();
        let plain = conv2d(&x, &w, None, PaddingRule::WrapClamp).unwrap();
        for c in 0..2 {
            for (p, q) in row(&eac, c, half).iter().zip(row(&plain, c, half)) {
                prop_assert!((p - q).abs() <= 1e-6, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn eac_rows_follow_cos_table(seed in any::<u64>(), h in 4usize..24, v in 0.1f32..2.0) {
        let mut rng = Rng::new(seed);
        let grid = ErpGrid::pixel_center(h).unwrap();
        let x = Tensor::full(&[1, h, 2 * h], v);
        let w = rand_tensor(&[1, 1, 3, 3], &mut rng).map(f32::abs);
        let bank = EacKernelBank::new(w, Tensor::zeros(&[1]), grid).unwrap();
        let out = eac_conv2d(&x, &bank).unwrap();
        let cos = bank.cos_table();
        // Constant input with clamped rows: every unscaled row is the same sum.
        let ratios: Vec<f64> = (0..h).map(|y| f64::from(row(&out, 0, y)[0]) / f64::from(cos[y])).collect();
        for r in &ratios {
            prop_assert!((r - ratios[0]).abs() <= 1e-5 * ratios[0].abs().max(1.0));
        }
    }

    #[test]
    fn eac_commutes_with_circular_shift(seed in any::<u64>(), h in 3usize..10, s in -30isize..30) {
        let mut rng = Rng::new(seed);
        let grid = ErpGrid::pixel_center(h).unwrap();
        let x = rand_tensor(&[2, h, 2 * h], &mut rng);
        let bank = EacKernelBank::new(rand_tensor(&[3, 2, 3, 3], &mut rng), rand_tensor(&[3], &mut rng), grid).unwrap();
        let shifted_out = eac_conv2d(&x.roll_last(s), &bank).unwrap();
        let out_shifted = eac_conv2d(&x, &bank).unwrap().roll_last(s);
        prop_assert_eq!(shifted_out.data(), out_shifted.data());
    }

    #[test]
    fn attention_is_positive_and_capped(seed in any::<u64>(), h in 2usize..12, cap in 1.0f32..10.0, scale in 0.1f32..20.0) {
        let mut rng = Rng::new(seed);
        let grid = ErpGrid::pixel_center(h).unwrap();
        let params = AttentionParams::new(rand_tensor(&[1, 4, 1, 1], &mut rng).scale(scale), rand_tensor(&[1], &mut rng), cap).unwrap();
        let f_t = rand_tensor(&[2, h, 2 * h], &mut rng);
        let f_prev = rand_tensor(&[2, h, 2 * h], &mut rng);
        let gate = motion_gate(&f_t, &f_prev, &params).unwrap();
        for y in 0..h {
            let a = erp_attention_factor(grid.latitude_of_row(y as f64).unwrap(), cap).unwrap();
            prop_assert!(a > 0.0 && a <= cap);
            for &g in row(&gate, 0, y) {
                prop_assert!(g * a > 0.0 && g * a <= cap);
            }
        }
        // Ones as features expose the attention map itself.
        let ones = Tensor::full(&[2, h, 2 * h], 1.0);
        let out = apply_attention(&ones, &ones, &grid, &params).unwrap();
        prop_assert!(out.data().iter().all(|&v| v > 0.0 && v <= cap));
    }

    #[test]
    fn attention_argmax_survives_feature_scaling(seed in any::<u64>(), h in 2usize..10, k in 0.1f32..10.0) {
        let mut rng = Rng::new(seed);
        let grid = ErpGrid::pixel_center(h).unwrap();
        let params = AttentionParams::new(rand_tensor(&[1, 4, 1, 1], &mut rng), Tensor::zeros(&[1]), 8.0).unwrap();
        let f_t = rand_tensor(&[2, h, 2 * h], &mut rng);
        let f_prev = rand_tensor(&[2, h, 2 * h], &mut rng);
        let map = |s: f32| {
            let g = motion_gate(&f_t.scale(s), &f_prev.scale(s), &params).unwrap();
            let mut v = Vec::new();
            for y in 0..h {
                let a = erp_attention_factor(grid.latitude_of_row(y as f64).unwrap(), 8.0).unwrap();
                v.extend(row(&g, 0, y).iter().map(|&g| g * a));
            }
            v
        };
        let argmax = |v: &[f32]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let (base, scaled) = (map(1.0), map(k));
        // The maximum may move only between entries already tied at float precision.
        let (i, j) = (argmax(&base), argmax(&scaled));
        prop_assert!(i == j || (base[i] - base[j]).abs() <= 1e-6 * base[i].abs(), "{i} vs {j}");
    }

    #[test]
    fn nms_leaves_no_overlapping_pair(seed in any::<u64>(), n in 0usize..40, thr in 0.1f64..0.9) {
        let mut rng = Rng::new(seed);
        let dets: Vec<Detection> = (0..n).map(|_| { let l = rng.below(2); rand_det(&mut rng, 0, l) }).collect();
        let kept = nms(&dets, thr).unwrap();
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.label != b.label || wrap_iou(&a.bbox, &b.bbox) <= thr);
            }
        }
    }

    #[test]
    fn unit_window_smoothing_preserves_tube(seed in any::<u64>(), len in 1usize..12, window in (0usize..4).prop_map(|k| 2 * k + 1)) {
        let mut rng = Rng::new(seed);
        let tube = ActionTube {
            label: rng.below(3),
            entries: (0..len).map(|f| TubeEntry { frame: f, bbox: rand_det(&mut rng, f, 0).bbox, confidence: rng.uniform() }).collect(),
        };
        let smooth = temporal_smooth(&tube, window).unwrap();
        prop_assert_eq!(smooth.label, tube.label);
        prop_assert_eq!(smooth.entries.len(), tube.entries.len());
        if window == 1 {
            prop_assert!((smooth.confidence() - tube.confidence()).abs() <= 1e-9);
        }
    }

    #[test]
    fn pipeline_never_adds_detections(seed in any::<u64>(), n in 0usize..60, frames in 1usize..8) {
        let mut rng = Rng::new(seed);
        let dets: Vec<Detection> = (0..n).map(|_| { let (f, l) = (rng.below(frames), rng.below(2)); rand_det(&mut rng, f, l) }).collect();
        let (_, out) = postprocess_sequence(&dets, &PostprocessSettings::default()).unwrap();
        prop_assert!(out.len() <= dets.len());
    }
}
