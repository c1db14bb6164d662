use vfi_autograd::{Float, Tensor};

use crate::error::{Error, Result};

/// RGB image with `height x width x 3` interleaved samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Data(format!("empty frame {height}x{width}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{} samples for a {height}x{width}x3 frame",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Frame {
            height,
            width,
            pixels,
        })
    }

    /// Builds a frame from `f(y, x, channel)`, clamping into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    pixels.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Frame {
            height,
            width,
            pixels,
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        Frame::from_fn(height, width, |_, _, c| rgb[c])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 3, self.height, self.width], |[_, c, y, x]| T::of(self.get(y, x, c) as f64))
    }

    /// Reads sample `n` of an NCHW tensor, clamping values into `[0, 1]`.
    pub fn from_tensor<T: Float>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let [b, c, h, w] = t.shape();
        if c != 3 || n >= b {
            return Err(Error::Shape(format!("cannot read frame {n} from tensor {:?}", t.shape())));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite("synthesized frame".into()));
        }
        Ok(Frame::from_fn(h, w, |y, x, ch| t.at([n, ch, y, x]).to_f32().unwrap()))
    }

    /// Stacks frames into a `[N, 3, H, W]` batch.
    pub fn batch<T: Float>(frames: &[&Frame]) -> Result<Tensor<T>> {
        let first = frames.first().ok_or_else(|| Error::Data("empty frame batch".into()))?;
        if let Some(f) = frames.iter().find(|f| f.dims() != first.dims()) {
            return Err(Error::Shape(format!(
                "frame {:?} does not match {:?}",
                f.dims(),
                first.dims()
            )));
        }
        let (h, w) = first.dims();
        Ok(Tensor::from_fn([frames.len(), 3, h, w], |[n, c, y, x]| {
            T::of(frames[n].get(y, x, c) as f64)
        }))
    }

    /// Window `[y0, y0 + h) x [x0, x0 + w)`, optionally mirrored horizontally.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize, flip: bool) -> Result<Frame> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({y0}, {x0}) of {}x{}",
                self.height, self.width
            )));
        }
        Ok(Frame::from_fn(h, w, |y, x, c| {
            let sx = if flip { x0 + w - 1 - x } else { x0 + x };
            self.get(y0 + y, sx, c)
        }))
    }

    pub fn mean_abs_diff(&self, other: &Frame) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        let sum: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(sum / self.pixels.len() as f64)
    }
}
