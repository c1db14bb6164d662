//! Scalar-loop references written independently of the library kernels.

use rand::Rng;
use vfi_autograd::Tensor;
use vfi_core::Frame;

/// Clamped bilinear backward warp, one pixel at a time.
pub fn warp(src: &Tensor<f64>, flow: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = src.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let sx = (x as f64 + flow.at([b, 0, y, x])).clamp(0.0, (w - 1) as f64);
                let sy = (y as f64 + flow.at([b, 1, y, x])).clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (ax, ay) = (sx - x0 as f64, sy - y0 as f64);
                for ch in 0..c {
                    let v = |yy, xx| src.at([b, ch, yy, xx]);
                    let top = (1.0 - ax) * v(y0, x0) + ax * v(y0, x1);
                    let bottom = (1.0 - ax) * v(y1, x0) + ax * v(y1, x1);
                    out.set([b, ch, y, x], (1.0 - ay) * top + ay * bottom);
                }
            }
        }
    }
    out
}

/// Random source of at most 8x8 and a flow reaching up to three pixels
/// past the border.
pub fn warp_case(rng: &mut impl Rng) -> (Tensor<f64>, Tensor<f64>) {
    let (n, c) = (rng.random_range(1..=2), rng.random_range(1..=3));
    let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
    let src = Tensor::from_fn([n, c, h, w], |_| rng.random_range(0.0..1.0));
    let flow = Tensor::from_fn([n, 2, h, w], |[_, k, _, _]| {
        let len = if k == 0 { w } else { h } as f64;
        rng.random_range(-len - 3.0..len + 3.0)
    });
    (src, flow)
}

/// Mean SSIM over every 11x11 window position, evaluating the weighted
/// moments of each window directly.
pub fn ssim(a: &Frame, b: &Frame) -> f64 {
    const K: usize = 11;
    let sigma: f64 = 1.5;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut weights = [[0.0; K]; K];
    let mut total_w = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total_w += *v;
        }
    }
    let (h, w) = a.dims();
    let mut per_channel = 0.0;
    for c in 0..3 {
        let mut sum = 0.0;
        let mut count = 0;
        for y in 0..=h - K {
            for x in 0..=w - K {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..K {
                    for j in 0..K {
                        let k = weights[i][j] / total_w;
                        let pa = a.get(y + i, x + j, c) as f64;
                        let pb = b.get(y + i, x + j, c) as f64;
                        ma += k * pa;
                        mb += k * pb;
                        saa += k * pa * pa;
                        sbb += k * pb * pb;
                        sab += k * pa * pb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        per_channel += sum / count as f64;
    }
    per_channel / 3.0
}

/// Random 16x16 pair: a texture and a noisy, partly related copy.
pub fn ssim_case(rng: &mut impl Rng) -> (Frame, Frame) {
    let a = Frame::from_fn(16, 16, |_, _, _| rng.random_range(0.0..1.0));
    let mix = rng.random_range(0.0..1.0f32);
    let b = Frame::from_fn(16, 16, |y, x, c| {
        let noise: f32 = rng.random_range(0.0..1.0);
        mix * a.get(y, x, c) + (1.0 - mix) * noise
    });
    (a, b)
}
