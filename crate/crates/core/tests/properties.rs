use proptest::prelude::*;
use vfi_autograd::{Graph, Tensor};
use vfi_core::data::{self, Clip, SyntheticSpec};
use vfi_core::loss::*;
use vfi_core::data::EvalClip;
use vfi_core::metrics::{self, interpolation_error, psnr, ssim, Predictor};
use vfi_core::model::{warp_blend, InterpModel, ModelConfig, VisibilityMap, VisibilityPair};
use vfi_core::warp::{bilinear_sample, warp_frame, FlowField};
use vfi_core::Frame;

fn frame(h: usize, w: usize) -> impl Strategy<Value = Frame> {
    prop::collection::vec(0.0f32..=1.0, h * w * 3).prop_map(move |p| Frame::new(h, w, p).unwrap())
}

fn sized_frame() -> impl Strategy<Value = Frame> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(h, w)| frame(h, w))
}

fn flow_for(h: usize, w: usize, reach: f32) -> impl Strategy<Value = FlowField> {
    prop::collection::vec((-reach..=reach, -reach..=reach), h * w).prop_map(move |v| {
        let mut it = v.into_iter();
        FlowField::from_fn(h, w, |_, _| it.next().unwrap())
    })
}

fn frame_and_flow() -> impl Strategy<Value = (Frame, FlowField)> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(h, w)| (frame(h, w), flow_for(h, w, 4.0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_flow_is_identity(f in sized_frame()) {
        let (h, w) = f.dims();
        let out = warp_frame(&f, &FlowField::zeros(h, w)).unwrap();
        for (a, b) in out.pixels().iter().zip(f.pixels()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn integer_shift_moves_interior(f in (3usize..=8, 3usize..=8).prop_flat_map(|(h, w)| frame(h, w)), dx in -2i32..=2, dy in -2i32..=2) {
        let (h, w) = f.dims();
        let out = warp_frame(&f, &FlowField::constant(h, w, dx as f32, dy as f32)).unwrap();
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (x as i32 + dx, y as i32 + dy);
                if sx < 0 || sy < 0 || sx >= w as i32 || sy >= h as i32 {
                    continue;
                }
                for c in 0..3 {
                    prop_assert_eq!(out.get(y, x, c), f.get(sy as usize, sx as usize, c));
                }
            }
        }
    }

    #[test]
    fn sampling_stays_within_source_range((f, fl) in frame_and_flow()) {
        let src = f.to_tensor::<f64>();
        let out = bilinear_sample(&src, &fl.to_tensor::<f64>()).unwrap();
        let (lo, hi) = (src.min_value(), src.max_value());
        prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn unit_visibility_gives_the_linear_blend(
        (i0, i1, f0, f1) in (1usize..=6, 1usize..=6).prop_flat_map(|(h, w)| (frame(h, w), frame(h, w), flow_for(h, w, 2.0), flow_for(h, w, 2.0))),
        t in 0.0f64..=1.0,
    ) {
        let (h, w) = i0.dims();
        let vis = VisibilityPair { from_0: VisibilityMap::filled(h, w, 1.0), from_1: VisibilityMap::filled(h, w, 1.0) };
        let out = warp_blend(&i0, &i1, &f0, &f1, &vis, t).unwrap();
        let (w0, w1) = (warp_frame(&i0, &f0).unwrap(), warp_frame(&i1, &f1).unwrap());
        for k in 0..out.pixels().len() {
            let expect = (1.0 - t) * w0.pixels()[k] as f64 + t * w1.pixels()[k] as f64;
            prop_assert!((out.pixels()[k] as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn blend_lies_between_warped_inputs(
        (i0, i1, f0, f1, v) in (1usize..=6, 1usize..=6).prop_flat_map(|(h, w)| (
            frame(h, w), frame(h, w), flow_for(h, w, 2.0), flow_for(h, w, 2.0), prop::collection::vec(0.0f32..=1.0, h * w),
        )),
        t in 0.01f64..0.99,
    ) {
        let (h, w) = i0.dims();
        let vis = VisibilityPair::coupled(VisibilityMap { height: h, width: w, values: v });
        prop_assert!(vis.from_0.values.iter().zip(vis.from_1.values.iter()).all(|(a, b)| (a + b - 1.0).abs() < 1e-6));
        let out = warp_blend(&i0, &i1, &f0, &f1, &vis, t).unwrap();
        let (w0, w1) = (warp_frame(&i0, &f0).unwrap(), warp_frame(&i1, &f1).unwrap());
        for k in 0..out.pixels().len() {
            let (a, b) = (w0.pixels()[k], w1.pixels()[k]);
            prop_assert!(out.pixels()[k] >= a.min(b) - 1e-5 && out.pixels()[k] <= a.max(b) + 1e-5);
        }
    }

    #[test]
    fn losses_are_non_negative_and_vanish_on_equal_inputs(a in frame(6, 6), b in frame(6, 6)) {
        let g = Graph::<f64>::new();
        let (x, y) = (g.constant(a.to_tensor()), g.constant(b.to_tensor()));
        let zero = g.constant(Tensor::zeros([1, 2, 6, 6]));
        let psi = RandomConvFeatures::<f64>::new(1);
        let values = [
            (l1(x, y).unwrap().value().item(), l1(x, x).unwrap().value().item()),
            (l2(x, y).unwrap().value().item(), l2(x, x).unwrap().value().item()),
            (pseudo_supervised_loss(x, y, y, x).unwrap().value().item(), pseudo_supervised_loss(x, y, x, y).unwrap().value().item()),
            (perceptual_loss(&g, x, y, &psi).unwrap().value().item(), perceptual_loss(&g, x, x, &psi).unwrap().value().item()),
            (pair_warping_loss(x, y, zero, zero).unwrap().value().item(), pair_warping_loss(x, x, zero, zero).unwrap().value().item()),
        ];
        for (differ, same) in values {
            prop_assert!(differ >= 0.0);
            prop_assert_eq!(same, 0.0);
        }
        prop_assert_eq!(smoothness_loss(&[zero]).unwrap().value().item(), 0.0);
    }

    #[test]
    fn total_is_linear_in_each_weight(
        parts in prop::array::uniform6(0.0f64..2.0),
        weights in prop::array::uniform5(0.0f64..3.0),
        which in 0usize..5,
        scale in 0.0f64..4.0,
    ) {
        let b = LossBreakdown { rc: parts[0], rp: parts[1], p: parts[2], w: parts[3], s: parts[4], long_step: parts[5], total: 0.0 };
        let make = |k: f64| {
            let mut v = weights;
            v[which] = k;
            LossWeights { lambda_rc: v[0], lambda_rp: v[1], lambda_p: v[2], lambda_w: v[3], lambda_s: v[4] }
        };
        let at = |k: f64| total_loss(&b, &make(k)).unwrap().total;
        let (t0, t1, ts) = (at(0.0), at(1.0), at(scale));
        prop_assert!((ts - (t0 + scale * (t1 - t0))).abs() < 1e-9);
    }

    #[test]
    fn subsampling_composes(len in 2usize..40, a in 1usize..5, b in 1usize..5) {
        let frames: Vec<Frame> = (0..len).map(|i| Frame::filled(2, 2, [i as f32 / len as f32; 3])).collect();
        let clip = Clip::new(frames, 240.0, "ramp").unwrap();
        let twice = data::temporal_subsample(&clip, a).and_then(|c| data::temporal_subsample(&c, b));
        let once = data::temporal_subsample(&clip, a * b);
        match (twice, once) {
            (Ok(x), Ok(y)) => {
                prop_assert_eq!(x.frames, y.frames);
                prop_assert!((x.fps - y.fps).abs() < 1e-9);
            }
            (Err(_), Err(_)) => {}
            (x, y) => prop_assert!(false, "one path failed: {:?} vs {:?}", x.is_ok(), y.is_ok()),
        }
    }

    #[test]
    fn metrics_are_symmetric(a in frame(12, 12), b in frame(12, 12)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert_eq!(interpolation_error(&a, &b).unwrap(), interpolation_error(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn error_scaling(base in 0.3f32..0.4, diff in prop::collection::vec(-0.05f32..0.05, 12 * 12 * 3), s in 1.5f32..4.0) {
        prop_assume!(diff.iter().any(|d| d.abs() > 1e-3));
        let a = Frame::new(12, 12, vec![base; 12 * 12 * 3]).unwrap();
        let b1 = Frame::new(12, 12, diff.iter().map(|d| base + d).collect()).unwrap();
        let b2 = Frame::new(12, 12, diff.iter().map(|d| base + s * d).collect()).unwrap();
        // Measure the realised scale, since f32 rounding perturbs it slightly.
        let err = |b: &Frame| a.pixels().iter().zip(b.pixels()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt();
        let k = err(&b2) / err(&b1);
        let (ie1, ie2) = (interpolation_error(&a, &b1).unwrap(), interpolation_error(&a, &b2).unwrap());
        prop_assert!((ie2 - k * ie1).abs() < 1e-9 * ie2.max(1.0));
        let (p1, p2) = (psnr(&a, &b1).unwrap(), psnr(&a, &b2).unwrap());
        prop_assert!((p1 - p2 - 20.0 * k.log10()).abs() < 1e-9);
    }
}

#[test]
fn triplet_count_formula() {
    for len in 2..=50 {
        let clip = Clip::new((0..len).map(|i| Frame::filled(1, 1, [i as f32 / 50.0; 3])).collect(), 30.0, "c").unwrap();
        for stride in 1..=len {
            let expect = if len < 3 { 0 } else { (len - 3) / stride + 1 };
            assert_eq!(data::make_triplets(&clip, stride).unwrap().len(), expect, "L={len} stride={stride}");
        }
    }
}

#[test]
fn synthetic_midpoint_is_the_half_step_render() {
    let spec = SyntheticSpec {
        frames: 3,
        time_step: 0.5,
        ..SyntheticSpec::default()
    };
    let clips = data::synthetic_motion_dataset(4, 5, &spec).unwrap();
    let scenes = data::synthetic_scenes(4, 5, &spec).unwrap();
    for (clip, scene) in clips.iter().zip(&scenes) {
        assert_eq!(clip.frames[1], scene.render(0.5));
        let eval = &data::make_eval_clips(clip, 1)[0];
        assert_eq!(eval.ground_truth[0], scene.render(0.5));
    }
}

#[test]
fn emitted_visibility_sums_to_one() {
    let model = InterpModel::<f32>::new(
        ModelConfig {
            base_channels: 4,
            depth: 2,
            input_downscale: 1,
        },
        2,
    )
    .unwrap();
    let a = Frame::from_fn(8, 8, |y, x, c| ((y * 3 + x * 5 + c) % 7) as f32 / 7.0);
    let b = Frame::from_fn(8, 8, |y, x, c| ((y * 2 + x + c * 3) % 5) as f32 / 5.0);
    for t in [0.1, 0.5, 0.9] {
        let d = model.synthesize_detailed(&a, &b, t).unwrap();
        for (u, v) in d.visibility.from_0.values.iter().zip(d.visibility.from_1.values.iter()) {
            assert!((u + v - 1.0).abs() < 1e-6 && (0.0..=1.0).contains(u));
        }
    }
}

#[test]
fn evaluate_means_match_rows() {
    let clips: Vec<EvalClip> = (0..4)
        .map(|i| {
            let f = |v: f32| Frame::filled(12, 12, [v; 3]);
            EvalClip {
                input_first: f(0.1 * i as f32),
                input_last: f(0.1 * i as f32 + 0.3),
                ground_truth: vec![f(0.1 * i as f32 + 0.05), f(0.1 * i as f32 + 0.2)],
                n: 2,
                source_id: format!("c{i}"),
            }
        })
        .collect();
    let r = metrics::evaluate(&metrics::TrivialCopy, &clips, 2).unwrap();
    let mean = |f: fn(&metrics::Scores) -> f64| r.per_clip.iter().map(|c| f(&c.scores)).sum::<f64>() / r.per_clip.len() as f64;
    assert!((r.means.psnr - mean(|s| s.psnr)).abs() < 1e-12);
    assert!((r.means.ssim - mean(|s| s.ssim)).abs() < 1e-12);
    assert!((r.means.ie - mean(|s| s.ie)).abs() < 1e-12);
    assert_eq!(metrics::TrivialCopy.name(), "trivial_copy");
}
