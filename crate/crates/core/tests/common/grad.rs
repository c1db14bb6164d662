//! Gradient cases: analytic against central finite differences in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfi_autograd::{Graph, Tensor, Var};
use vfi_core::loss::*;
use vfi_core::model::warp_blend_var;
use vfi_core::warp::warp;

const H: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

/// Worst relative error between every input gradient of a scalar function
/// and its central difference.
fn check(name: &str, inputs: &[Tensor<f64>], f: impl for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>) -> f64 {
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let grads = g.backward(f(&g, &vars)).unwrap();
    let value = |ins: &[Tensor<f64>]| {
        let g = Graph::new();
        let v: Vec<_> = ins.iter().map(|t| g.constant(t.clone())).collect();
        f(&g, &v).value().item()
    };
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * H);
            let a = analytic.data()[i];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-7 { 0.0 } else { (a - numeric).abs() / scale };
            if err >= TOL {
                eprintln!("{name}: input {k} element {i}: analytic {a:e} numeric {numeric:e}");
            }
            worst = worst.max(err);
        }
    }
    worst
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn image(r: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn([n, c, h, w], |_| r.random_range(0.0..1.0))
}

/// `a` shifted elementwise by at least 0.05 so L1 stays away from its kink.
fn apart(r: &mut ChaCha8Rng, a: &Tensor<f64>) -> Tensor<f64> {
    let offsets = Tensor::from_fn(a.shape(), |_| {
        let d = r.random_range(0.05..0.3);
        if r.random_bool(0.5) {
            d
        } else {
            -d
        }
    });
    a.zip_map(&offsets, |v, d| v + d).unwrap()
}

/// Flow whose sample points stay strictly inside the raster and off the
/// integer grid.
fn flow(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn([n, 2, h, w], |[_, c, y, x]| {
        let (pos, size) = if c == 0 { (x, w) } else { (y, h) };
        loop {
            let whole = r.random_range(-2i32..=2) as f64;
            let target = pos as f64 + whole + r.random_range(0.2..0.8);
            if target > 0.05 && target < size as f64 - 1.05 {
                return target - pos as f64;
            }
        }
    })
}

pub fn bilinear_sample_wrt_source_and_flow() -> f64 {
    let mut worst = 0.0f64;
    for (seed, (h, w)) in [(1, (4, 4)), (2, (6, 5)), (3, (8, 8))] {
        let mut r = rng(seed);
        let src = image(&mut r, 2, 3, h, w);
        let fl = flow(&mut r, 2, h, w);
        let weights = image(&mut r, 2, 3, h, w);
        worst = worst.max(check("bilinear_sample", &[src, fl, weights], |_, v| warp(v[0], v[1]).unwrap().mul(v[2]).unwrap().sum()));
    }
    worst
}

pub fn warp_blend_wrt_every_input() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(4);
    let (h, w) = (5, 6);
    let inputs = [
        image(&mut r, 2, 3, h, w),
        image(&mut r, 2, 3, h, w),
        flow(&mut r, 2, h, w),
        flow(&mut r, 2, h, w),
        Tensor::from_fn([2, 1, h, w], |_| r.random_range(0.1..0.9)),
        Tensor::from_fn([2, 1, h, w], |_| r.random_range(0.1..0.9)),
        image(&mut r, 2, 3, h, w),
    ];
    worst = worst.max(check("warp_blend", &inputs, |_, v| {
        warp_blend_var(v[0], v[1], v[2], v[3], v[4], v[5], &[0.3, 0.7]).unwrap().mul(v[6]).unwrap().sum()
    }));
    worst
}

pub fn reconstruction_and_pseudo_supervised_losses() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(5);
    let a = image(&mut r, 2, 3, 4, 4);
    let b = apart(&mut r, &a);
    worst = worst.max(check("cycle_reconstruction", &[a.clone(), b.clone()], |_, v| cycle_reconstruction_loss(v[0], v[1]).unwrap()));
    worst = worst.max(check("l2", &[a.clone(), b.clone()], |_, v| l2(v[0], v[1]).unwrap()));
    let c = image(&mut r, 2, 3, 4, 4);
    let d = apart(&mut r, &c);
    // Teacher frames are detached targets, so only the student side is varied.
    worst = worst.max(check("pseudo_supervised", &[a, c], |g, v| {
        pseudo_supervised_loss(v[0], v[1], g.constant(b.clone()), g.constant(d.clone())).unwrap()
    }));
    worst
}

pub fn perceptual_loss_through_frozen_features() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(6);
    let a = image(&mut r, 1, 3, 8, 8);
    let b = image(&mut r, 1, 3, 8, 8);
    let psi = RandomConvFeatures::<f64>::new(11);
    worst = worst.max(check("perceptual", &[a, b], |g, v| perceptual_loss(g, v[0], v[1], &psi).unwrap()));
    worst
}

pub fn warping_and_smoothness_losses() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(7);
    let (h, w) = (4, 4);
    let frames: Vec<_> = (0..5).map(|_| image(&mut r, 1, 3, h, w)).collect();
    let flows: Vec<_> = (0..6).map(|_| flow(&mut r, 1, h, w)).collect();
    let inputs: Vec<_> = frames.into_iter().chain(flows).collect();
    worst = worst.max(check("warping", &inputs, |_, v| {
        warping_loss(&WarpingInputs {
            i0: v[0],
            i1: v[1],
            i2: v[2],
            hidden_t: v[3],
            hidden_t1: v[4],
            f01: Some(v[5]),
            f10: Some(v[6]),
            f12: Some(v[7]),
            f21: Some(v[8]),
            f_t_t1: Some(v[9]),
            f_t1_t: Some(v[10]),
        })
        .unwrap()
    }));
    worst = worst.max(check("pair_warping", &inputs[..2].iter().chain(&inputs[5..7]).cloned().collect::<Vec<_>>(), |_, v| {
        pair_warping_loss(v[0], v[1], v[2], v[3]).unwrap()
    }));

    // Neighbouring differences of at least 0.05 in magnitude.
    let smooth: Vec<_> = (0..3)
        .map(|_| {
            let steps = Tensor::from_fn([1, 2, h, w], |_| r.random_range(0.05..0.5) * if r.random_bool(0.5) { 1.0 } else { -1.0 });
            let mut f = Tensor::zeros([1, 2, h, w]);
            for c in 0..2 {
                for y in 0..h {
                    for x in 0..w {
                        let v = if x == 0 && y == 0 {
                            0.0
                        } else if x == 0 {
                            f.at([0, c, y - 1, 0]) + 0.7 * steps.at([0, c, y, x])
                        } else {
                            f.at([0, c, y, x - 1]) + steps.at([0, c, y, x])
                        };
                        f.set([0, c, y, x], v);
                    }
                }
            }
            f
        })
        .collect();
    let vertical_ok = smooth.iter().all(|f: &Tensor<f64>| {
        (0..2).all(|c| (1..h).all(|y| (0..w).all(|x| (f.at([0, c, y, x]) - f.at([0, c, y - 1, x])).abs() > 1e-3)))
    });
    assert!(vertical_ok, "test flows must stay away from the smoothness kink");
    worst = worst.max(check("smoothness", &smooth, |_, v| smoothness_loss(v).unwrap()));
    worst
}

pub fn weighted_total() -> f64 {
    let mut worst = 0.0f64;
    let mut r = rng(8);
    let a = image(&mut r, 1, 3, 4, 4);
    let b = apart(&mut r, &a);
    let c = apart(&mut r, &a);
    let weights = LossWeights::default();
    worst = worst.max(check("total", &[a, b, c], |_, v| {
        let vars = LossVars {
            rc: Some(l1(v[0], v[1]).unwrap()),
            rp: Some(l1(v[0], v[2]).unwrap()),
            p: Some(l2(v[1], v[2]).unwrap()),
            ..LossVars::default()
        };
        vars.combine(&weights).unwrap().0
    }));
    worst
}

