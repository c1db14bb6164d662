//! Raw forward/backward kernels behind the graph operations.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(x: [usize; 4], w: [usize; 4], stride: usize, pad: usize) -> Result<Self> {
        let [n, cin, h, wd] = x;
        let [cout, wcin, kh, kw] = w;
        if wcin != cin || kh != kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: x,
                rhs: w,
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::invalid(
                "conv2d",
                format!("input {h}x{wd} smaller than kernel {kh} with padding {pad}"),
            ));
        }
        Ok(ConvGeometry {
            batch: n,
            in_channels: cin,
            out_channels: cout,
            height: h,
            width: wd,
            kernel: kh,
            stride,
            pad,
            out_height: (h + 2 * pad - kh) / stride + 1,
            out_width: (wd + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    fn columns(&self) -> usize {
        self.batch * self.out_plane()
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel tap `k`.
#[inline]
fn tap_range(k: usize, stride: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
    // input index = o * stride + k - pad must lie in [0, len)
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds `x` into a `[Cin*K*K, N*Ho*Wo]` column matrix.
fn im2col<T: Float>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let ncols = g.columns();
    let plane = g.out_plane();
    let k = g.kernel;
    for ci in 0..g.in_channels {
        for ky in 0..k {
            let (oy_lo, oy_hi) = tap_range(ky, g.stride, g.pad, g.height, g.out_height);
            for kx in 0..k {
                let (ox_lo, ox_hi) = tap_range(kx, g.stride, g.pad, g.width, g.out_width);
                let row = (ci * k + ky) * k + kx;
                let row_buf = &mut cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let dst = &mut row_buf[n * plane..(n + 1) * plane];
                    let src = &x[(n * g.in_channels + ci) * g.height * g.width..];
                    dst.fill(T::zero());
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let src_row = &src[iy * g.width..(iy + 1) * g.width];
                        let dst_row = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                        if g.stride == 1 {
                            let ix0 = ox_lo + kx - g.pad;
                            let len = ox_hi - ox_lo;
                            dst_row[ox_lo..ox_hi].copy_from_slice(&src_row[ix0..ix0 + len]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst_row[ox] = src_row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx`.
fn col2im<T: Float>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let ncols = g.columns();
    let plane = g.out_plane();
    let k = g.kernel;
    for ci in 0..g.in_channels {
        for ky in 0..k {
            let (oy_lo, oy_hi) = tap_range(ky, g.stride, g.pad, g.height, g.out_height);
            for kx in 0..k {
                let (ox_lo, ox_hi) = tap_range(kx, g.stride, g.pad, g.width, g.out_width);
                let row = (ci * k + ky) * k + kx;
                let row_buf = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let src = &row_buf[n * plane..(n + 1) * plane];
                    let base = (n * g.in_channels + ci) * g.height * g.width;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let dst_row = &mut dx[base + iy * g.width..base + (iy + 1) * g.width];
                        let src_row = &src[oy * g.out_width..(oy + 1) * g.out_width];
                        for ox in ox_lo..ox_hi {
                            dst_row[ox * g.stride + kx - g.pad] += src_row[ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), w.shape(), stride, pad)?;
    if let Some(b) = b {
        if b.len() != g.out_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: w.shape(),
                rhs: b.shape(),
            });
        }
    }
    let (p, ncols, plane) = (g.patch_len(), g.columns(), g.out_plane());
    let mut cols = vec![T::zero(); p * ncols];
    im2col(x.data(), &g, &mut cols);
    let mut prod = vec![T::zero(); g.out_channels * ncols];
    T::gemm(
        g.out_channels,
        p,
        ncols,
        w.data(),
        (p, 1),
        &cols,
        (ncols, 1),
        T::zero(),
        &mut prod,
        (ncols, 1),
    );
    let mut out = Tensor::zeros([g.batch, g.out_channels, g.out_height, g.out_width]);
    let od = out.data_mut();
    for co in 0..g.out_channels {
        let bias = b.map_or(T::zero(), |b| b.data()[co]);
        for n in 0..g.batch {
            let src = &prod[co * ncols + n * plane..co * ncols + (n + 1) * plane];
            let dst = &mut od[(n * g.out_channels + co) * plane..(n * g.out_channels + co + 1) * plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bias;
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
    stride: usize,
    pad: usize,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(x.shape(), w.shape(), stride, pad)?;
    let (p, ncols, plane) = (g.patch_len(), g.columns(), g.out_plane());
    // gradient rearranged to [Cout, N*Ho*Wo]
    let mut gt = vec![T::zero(); g.out_channels * ncols];
    let gd = grad.data();
    for n in 0..g.batch {
        for co in 0..g.out_channels {
            let src = &gd[(n * g.out_channels + co) * plane..(n * g.out_channels + co + 1) * plane];
            gt[co * ncols + n * plane..co * ncols + (n + 1) * plane].copy_from_slice(src);
        }
    }
    let bias = need.2.then(|| {
        let mut b = Tensor::zeros([1, g.out_channels, 1, 1]);
        for co in 0..g.out_channels {
            b.data_mut()[co] = gt[co * ncols..(co + 1) * ncols].iter().copied().sum();
        }
        b
    });
    let weight = if need.1 {
        let mut cols = vec![T::zero(); p * ncols];
        im2col(x.data(), &g, &mut cols);
        let mut dw = Tensor::zeros(w.shape());
        T::gemm(
            g.out_channels,
            ncols,
            p,
            &gt,
            (ncols, 1),
            &cols,
            (1, ncols),
            T::zero(),
            dw.data_mut(),
            (p, 1),
        );
        Some(dw)
    } else {
        None
    };
    let input = if need.0 {
        let mut dcols = vec![T::zero(); p * ncols];
        T::gemm(
            p,
            g.out_channels,
            ncols,
            w.data(),
            (1, p),
            &gt,
            (ncols, 1),
            T::zero(),
            &mut dcols,
            (ncols, 1),
        );
        let mut dx = Tensor::zeros(x.shape());
        col2im(&dcols, &g, dx.data_mut());
        Some(dx)
    } else {
        None
    };
    Ok(ConvGrads {
        input,
        weight,
        bias,
    })
}

pub fn avg_pool2<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid("avg_pool2", format!("odd spatial size {h}x{w}")));
    }
    let quarter = T::of(0.25);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..n * c {
        let src = &xd[p * h * w..(p + 1) * h * w];
        let dst = &mut od[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                let i = 2 * y * w + 2 * xx;
                dst[y * wo + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2_backward<T: Float>(grad: &Tensor<T>, in_shape: [usize; 4]) -> Tensor<T> {
    let [n, c, h, w] = in_shape;
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut dx = Tensor::zeros(in_shape);
    let gd = grad.data();
    let dd = dx.data_mut();
    for p in 0..n * c {
        for y in 0..h {
            for xx in 0..w {
                dd[p * h * w + y * w + xx] = gd[p * ho * wo + (y / 2) * wo + xx / 2] * quarter;
            }
        }
    }
    dx
}

pub fn upsample_nearest2<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    Tensor::from_fn([n, c, 2 * h, 2 * w], |[i, j, y, xx]| x.at([i, j, y / 2, xx / 2]))
}

pub fn upsample_nearest2_backward<T: Float>(grad: &Tensor<T>, in_shape: [usize; 4]) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let [n, c, h, w] = grad.shape();
    for i in 0..n {
        for j in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let o = dx.offset([i, j, y / 2, xx / 2]);
                    dx.data_mut()[o] += grad.at([i, j, y, xx]);
                }
            }
        }
    }
    dx
}

/// Two-tap stencil of a half-pixel-centred 2x linear upsampler along one axis.
#[inline]
fn upsample_taps(o: usize, len: usize) -> [(usize, f64); 2] {
    let i = o / 2;
    let other = if o % 2 == 0 {
        i.saturating_sub(1)
    } else {
        (i + 1).min(len - 1)
    };
    [(i, 0.75), (other, 0.25)]
}

pub fn upsample_bilinear2<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let xd = x.data();
    let od = out.data_mut();
    let xt: Vec<_> = (0..wo).map(|o| upsample_taps(o, w)).collect();
    for p in 0..n * c {
        let src = &xd[p * h * w..(p + 1) * h * w];
        let dst = &mut od[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            let [(y0, wy0), (y1, wy1)] = upsample_taps(oy, h);
            let (wy0, wy1) = (T::of(wy0), T::of(wy1));
            for (ox, &[(x0, wx0), (x1, wx1)]) in xt.iter().enumerate() {
                let (wx0, wx1) = (T::of(wx0), T::of(wx1));
                dst[oy * wo + ox] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                    + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
            }
        }
    }
    out
}

pub fn upsample_bilinear2_backward<T: Float>(grad: &Tensor<T>, in_shape: [usize; 4]) -> Tensor<T> {
    let [n, c, h, w] = in_shape;
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = Tensor::zeros(in_shape);
    let gd = grad.data();
    let dd = dx.data_mut();
    let xt: Vec<_> = (0..wo).map(|o| upsample_taps(o, w)).collect();
    for p in 0..n * c {
        let g = &gd[p * ho * wo..(p + 1) * ho * wo];
        let d = &mut dd[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for (y, wy) in upsample_taps(oy, h) {
                let wy = T::of(wy);
                for (ox, taps) in xt.iter().enumerate() {
                    let gv = g[oy * wo + ox] * wy;
                    for &(x, wx) in taps {
                        d[y * w + x] += gv * T::of(wx);
                    }
                }
            }
        }
    }
    dx
}

/// Padding amounts `[top, bottom, left, right]`.
pub fn pad_edge<T: Float>(x: &Tensor<T>, pad: [usize; 4]) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let [top, bottom, left, right] = pad;
    Tensor::from_fn(
        [n, c, h + top + bottom, w + left + right],
        |[i, j, y, xx]| {
            let sy = y.saturating_sub(top).min(h - 1);
            let sx = xx.saturating_sub(left).min(w - 1);
            x.at([i, j, sy, sx])
        },
    )
}

pub fn pad_edge_backward<T: Float>(grad: &Tensor<T>, in_shape: [usize; 4], pad: [usize; 4]) -> Tensor<T> {
    let [_, _, h, w] = in_shape;
    let [top, _, left, _] = pad;
    let mut dx = Tensor::zeros(in_shape);
    let [n, c, gh, gw] = grad.shape();
    for i in 0..n {
        for j in 0..c {
            for y in 0..gh {
                let sy = y.saturating_sub(top).min(h - 1);
                for xx in 0..gw {
                    let sx = xx.saturating_sub(left).min(w - 1);
                    let o = dx.offset([i, j, sy, sx]);
                    dx.data_mut()[o] += grad.at([i, j, y, xx]);
                }
            }
        }
    }
    dx
}

pub fn crop<T: Float>(x: &Tensor<T>, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let [n, c, xh, xw] = x.shape();
    if y0 + h > xh || x0 + w > xw {
        return Err(Error::invalid(
            "crop",
            format!("window {h}x{w} at ({y0},{x0}) exceeds {xh}x{xw}"),
        ));
    }
    Ok(Tensor::from_fn([n, c, h, w], |[i, j, y, xx]| x.at([i, j, y + y0, xx + x0])))
}

pub fn crop_backward<T: Float>(grad: &Tensor<T>, in_shape: [usize; 4], y0: usize, x0: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let [n, c, h, w] = grad.shape();
    for i in 0..n {
        for j in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    dx.set([i, j, y + y0, xx + x0], grad.at([i, j, y, xx]));
                }
            }
        }
    }
    dx
}

/// Forward difference along width (`horizontal`) or height; the last
/// column/row is zero.
pub fn forward_diff<T: Float>(x: &Tensor<T>, horizontal: bool) -> Tensor<T> {
    let [_, _, h, w] = x.shape();
    Tensor::from_fn(x.shape(), |[i, j, y, xx]| {
        if horizontal {
            if xx + 1 < w {
                x.at([i, j, y, xx + 1]) - x.at([i, j, y, xx])
            } else {
                T::zero()
            }
        } else if y + 1 < h {
            x.at([i, j, y + 1, xx]) - x.at([i, j, y, xx])
        } else {
            T::zero()
        }
    })
}

pub fn forward_diff_backward<T: Float>(grad: &Tensor<T>, horizontal: bool) -> Tensor<T> {
    let [n, c, h, w] = grad.shape();
    let mut dx = Tensor::zeros(grad.shape());
    for i in 0..n {
        for j in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let g = grad.at([i, j, y, xx]);
                    let next = if horizontal {
                        (xx + 1 < w).then(|| [i, j, y, xx + 1])
                    } else {
                        (y + 1 < h).then(|| [i, j, y + 1, xx])
                    };
                    if let Some(next) = next {
                        let o = dx.offset(next);
                        dx.data_mut()[o] += g;
                        let o = dx.offset([i, j, y, xx]);
                        dx.data_mut()[o] -= g;
                    }
                }
            }
        }
    }
    dx
}
