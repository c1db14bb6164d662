//! Backward warping by bilinear sampling, and forward-difference gradients.
//!
//! A flow field `F` is stored as a `[N, 2, H, W]` tensor holding horizontal
//! (channel 0) and vertical (channel 1) pixel displacements. Warping `src`
//! by `F` reads `src` at `(x + F_x, y + F_y)`; sample positions outside the
//! raster are clamped to the nearest edge coordinate.

use vfi_autograd::{CustomOp, Float, Tensor, Var};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Per-pixel displacement field in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    /// `[H, W, 2]` interleaved `(dx, dy)`.
    vectors: Vec<f32>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            height,
            width,
            vectors: vec![0.0; height * width * 2],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut vectors = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(y, x);
                vectors.extend([dx, dy]);
            }
        }
        FlowField {
            height,
            width,
            vectors,
        }
    }

    pub fn constant(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        FlowField::from_fn(height, width, |_, _| (dx, dy))
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> (f32, f32) {
        let i = (y * self.width + x) * 2;
        (self.vectors[i], self.vectors[i + 1])
    }

    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 2, self.height, self.width], |[_, c, y, x]| {
            T::of(self.vectors[(y * self.width + x) * 2 + c] as f64)
        })
    }

    pub fn from_tensor<T: Float>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let [b, c, h, w] = t.shape();
        if c != 2 || n >= b {
            return Err(Error::Shape(format!("cannot read flow {n} from tensor {:?}", t.shape())));
        }
        Ok(FlowField::from_fn(h, w, |y, x| {
            (t.at([n, 0, y, x]).to_f32().unwrap(), t.at([n, 1, y, x]).to_f32().unwrap())
        }))
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = (self.height * self.width) as f64;
        self.vectors
            .chunks(2)
            .map(|v| ((v[0] * v[0] + v[1] * v[1]) as f64).sqrt())
            .sum::<f64>()
            / n
    }
}

fn check_pair<T: Float>(src: &Tensor<T>, flow: &Tensor<T>) -> Result<()> {
    let [n, _, h, w] = src.shape();
    if flow.shape() != [n, 2, h, w] {
        return Err(Error::Shape(format!(
            "flow {:?} cannot warp source {:?}",
            flow.shape(),
            src.shape()
        )));
    }
    if !flow.all_finite() {
        return Err(Error::NonFinite("flow field".into()));
    }
    Ok(())
}

/// Interpolation stencil along one axis for a (clamped) sample coordinate.
#[derive(Clone, Copy)]
struct Axis<T> {
    lo: usize,
    hi: usize,
    frac: T,
    /// Whether the unclamped coordinate lies strictly inside the raster.
    inside: bool,
}

#[inline]
fn axis<T: Float>(coord: T, len: usize) -> Axis<T> {
    let max = T::from_usize(len - 1).unwrap();
    let inside = coord > T::zero() && coord < max;
    let c = coord.max(T::zero()).min(max);
    if len == 1 {
        return Axis {
            lo: 0,
            hi: 0,
            frac: T::zero(),
            inside: false,
        };
    }
    let lo = c.floor().to_usize().unwrap().min(len - 2);
    Axis {
        lo,
        hi: lo + 1,
        frac: c - T::from_usize(lo).unwrap(),
        inside,
    }
}

/// Backward-warps every channel of `src` (`[N, C, H, W]`) by `flow`
/// (`[N, 2, H, W]`).
pub fn bilinear_sample<T: Float>(src: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair(src, flow)?;
    let [n, c, h, w] = src.shape();
    let plane = h * w;
    let mut out = Tensor::zeros(src.shape());
    let (sd, fd) = (src.data(), flow.data());
    let od = out.data_mut();
    for b in 0..n {
        let fx = &fd[(2 * b) * plane..(2 * b + 1) * plane];
        let fy = &fd[(2 * b + 1) * plane..(2 * b + 2) * plane];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let ax = axis(T::from_usize(x).unwrap() + fx[p], w);
                let ay = axis(T::from_usize(y).unwrap() + fy[p], h);
                let (wx1, wy1) = (ax.frac, ay.frac);
                let (wx0, wy0) = (T::one() - wx1, T::one() - wy1);
                for ch in 0..c {
                    let s = &sd[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    od[(b * c + ch) * plane + p] = wy0 * (wx0 * s[ay.lo * w + ax.lo] + wx1 * s[ay.lo * w + ax.hi])
                        + wy1 * (wx0 * s[ay.hi * w + ax.lo] + wx1 * s[ay.hi * w + ax.hi]);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`bilinear_sample`] with respect to the source and the flow.
pub fn bilinear_sample_backward<T: Float>(
    src: &Tensor<T>,
    flow: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_pair(src, flow)?;
    let [n, c, h, w] = src.shape();
    let plane = h * w;
    let mut dsrc = Tensor::zeros(src.shape());
    let mut dflow = Tensor::zeros(flow.shape());
    let (sd, fd, gd) = (src.data(), flow.data(), grad.data());
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let ax = axis(T::from_usize(x).unwrap() + fd[(2 * b) * plane + p], w);
                let ay = axis(T::from_usize(y).unwrap() + fd[(2 * b + 1) * plane + p], h);
                let (wx1, wy1) = (ax.frac, ay.frac);
                let (wx0, wy0) = (T::one() - wx1, T::one() - wy1);
                let (mut gx, mut gy) = (T::zero(), T::zero());
                for ch in 0..c {
                    let base = (b * c + ch) * plane;
                    let g = gd[base + p];
                    let s = &sd[base..base + plane];
                    let (v00, v01) = (s[ay.lo * w + ax.lo], s[ay.lo * w + ax.hi]);
                    let (v10, v11) = (s[ay.hi * w + ax.lo], s[ay.hi * w + ax.hi]);
                    let d = &mut dsrc.data_mut()[base..base + plane];
                    d[ay.lo * w + ax.lo] += g * wy0 * wx0;
                    d[ay.lo * w + ax.hi] += g * wy0 * wx1;
                    d[ay.hi * w + ax.lo] += g * wy1 * wx0;
                    d[ay.hi * w + ax.hi] += g * wy1 * wx1;
                    gx += g * (wy0 * (v01 - v00) + wy1 * (v11 - v10));
                    gy += g * (wx0 * (v10 - v00) + wx1 * (v11 - v01));
                }
                if ax.inside {
                    dflow.data_mut()[(2 * b) * plane + p] = gx;
                }
                if ay.inside {
                    dflow.data_mut()[(2 * b + 1) * plane + p] = gy;
                }
            }
        }
    }
    Ok((dsrc, dflow))
}

struct BilinearSample;

impl<T: Float> CustomOp<T> for BilinearSample {
    fn name(&self) -> &'static str {
        "bilinear_sample"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> vfi_autograd::Result<Tensor<T>> {
        bilinear_sample(inputs[0], inputs[1]).map_err(|e| vfi_autograd::Error::invalid("bilinear_sample", e.to_string()))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs_grad: &[bool],
    ) -> vfi_autograd::Result<Vec<Option<Tensor<T>>>> {
        let (ds, df) = bilinear_sample_backward(inputs[0], inputs[1], grad)
            .map_err(|e| vfi_autograd::Error::invalid("bilinear_sample", e.to_string()))?;
        Ok(vec![Some(ds), Some(df)])
    }
}

/// Differentiable backward warp of `src` by `flow` inside a graph.
pub fn warp<'g, T: Float>(src: Var<'g, T>, flow: Var<'g, T>) -> Result<Var<'g, T>> {
    check_pair(&src.value(), &flow.value())?;
    Ok(src.graph().custom(BilinearSample, &[src, flow])?)
}

/// Warps a frame without building a graph.
pub fn warp_frame(src: &Frame, flow: &FlowField) -> Result<Frame> {
    let out = bilinear_sample(&src.to_tensor::<f32>(), &flow.to_tensor())?;
    Frame::from_tensor(&out, 0)
}

/// Forward differences `(dx, dy)` with a zero last column / row. Axes of
/// length one yield all-zero gradients.
pub fn spatial_gradient<T: Float>(field: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (
        vfi_autograd::kernels::forward_diff(field, true),
        vfi_autograd::kernels::forward_diff(field, false),
    )
}

/// Graph version of [`spatial_gradient`].
pub fn spatial_gradient_var<T: Float>(field: Var<'_, T>) -> (Var<'_, T>, Var<'_, T>) {
    (field.diff_x(), field.diff_y())
}
