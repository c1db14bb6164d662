//! The interpolation operator: bidirectional flow estimation, intermediate
//! flow refinement with a visibility map, and warp-and-blend synthesis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vfi_autograd::{Float, Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::warp::{warp, FlowField};

/// Guard on the blend normalisation factor.
pub const BLEND_EPS: f64 = 1e-12;

const LEAKY_SLOPE: f64 = 0.1;
const HEAD_GAIN: f64 = 0.1;
const FLOW_IN: usize = 6;
const FLOW_OUT: usize = 4;
const REFINE_IN: usize = 16;
const REFINE_OUT: usize = 5;

/// Architecture hyperparameters shared by both networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels at the finest scale; doubled at each coarser scale.
    pub base_channels: usize,
    /// Number of scales in each encoder-decoder.
    pub depth: usize,
    /// Both networks run on inputs average-pooled by this power of two;
    /// their outputs are upsampled back.
    pub input_downscale: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 8,
            depth: 4,
            input_downscale: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.depth == 0 || self.depth > 8 {
            return Err(Error::Config(format!(
                "base_channels must be > 0 and depth in 1..=8 (got {} / {})",
                self.base_channels, self.depth
            )));
        }
        if !self.input_downscale.is_power_of_two() || self.input_downscale > 16 {
            return Err(Error::Config(format!(
                "input_downscale must be a power of two <= 16 (got {})",
                self.input_downscale
            )));
        }
        Ok(())
    }

    /// Spatial sizes are padded to a multiple of this; smaller inputs are
    /// rejected.
    pub fn size_factor(&self) -> usize {
        self.input_downscale << (self.depth - 1)
    }
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidTime(t))
    }
}

fn conv_param<T: Float>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, gain: f64) -> (ParamId, ParamId) {
    // Variance-preserving uniform weights, zero bias.
    let bound = gain * (3.0 / (cin * 9) as f64).sqrt();
    let w = Tensor::from_fn([cout, cin, 3, 3], |_| T::of(rng.random_range(-bound..bound)));
    let b = Tensor::zeros([1, cout, 1, 1]);
    (store.add(format!("{name}.weight"), w), store.add(format!("{name}.bias"), b))
}

/// A U-shaped encoder-decoder of 3x3 convolutions.
#[derive(Clone, Debug)]
struct UNet {
    encoder: Vec<[(ParamId, ParamId); 2]>,
    decoder: Vec<[(ParamId, ParamId); 2]>,
    head: (ParamId, ParamId),
}

impl UNet {
    fn new<T: Float>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, cin: usize, cout: usize, cfg: &ModelConfig) -> Self {
        let ch = |i: usize| cfg.base_channels << i;
        let hidden = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        let mut encoder = Vec::new();
        for i in 0..cfg.depth {
            let from = if i == 0 { cin } else { ch(i - 1) };
            encoder.push([
                conv_param(store, rng, &format!("{prefix}.enc{i}.0"), from, ch(i), hidden),
                conv_param(store, rng, &format!("{prefix}.enc{i}.1"), ch(i), ch(i), hidden),
            ]);
        }
        let mut decoder = Vec::new();
        for i in 0..cfg.depth - 1 {
            decoder.push([
                conv_param(store, rng, &format!("{prefix}.dec{i}.0"), ch(i + 1) + ch(i), ch(i), hidden),
                conv_param(store, rng, &format!("{prefix}.dec{i}.1"), ch(i), ch(i), hidden),
            ]);
        }
        let head = conv_param(store, rng, &format!("{prefix}.head"), ch(0), cout, HEAD_GAIN);
        UNet { encoder, decoder, head }
    }

    fn forward<'g, T: Float>(&self, g: &'g Graph<T>, store: &ParamStore<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let conv = |h: Var<'g, T>, (w, b): (ParamId, ParamId)| -> Result<Var<'g, T>> {
            Ok(h.conv2d(g.param(store, w), Some(g.param(store, b)), 1, 1)?)
        };
        let act = |h: Var<'g, T>| h.leaky_relu(T::of(LEAKY_SLOPE));
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for (i, [c0, c1]) in self.encoder.iter().enumerate() {
            if i > 0 {
                h = h.avg_pool2()?;
            }
            h = act(conv(h, *c0)?);
            h = act(conv(h, *c1)?);
            skips.push(h);
        }
        for (i, [c0, c1]) in self.decoder.iter().enumerate().rev() {
            h = g.concat(&[h.upsample_nearest2(), skips[i]])?;
            h = act(conv(h, *c0)?);
            h = act(conv(h, *c1)?);
        }
        conv(h, self.head)
    }
}

/// Flows and visibility produced while synthesizing one batch.
#[derive(Clone, Copy, Debug)]
pub struct SynthesisFlows<'g, T: Float> {
    pub f01: Var<'g, T>,
    pub f10: Var<'g, T>,
    pub ft0: Var<'g, T>,
    pub ft1: Var<'g, T>,
    /// `V_{t<-0}`; the other map is its complement.
    pub visibility: Var<'g, T>,
}

/// Output of one application of an interpolator inside a graph. The frame
/// is unclamped.
#[derive(Clone, Copy, Debug)]
pub struct Synthesis<'g, T: Float> {
    pub frame: Var<'g, T>,
    pub flows: Option<SynthesisFlows<'g, T>>,
}

/// Anything that maps `(a, b, t)` to an intermediate frame inside a graph.
/// `t` holds one time point per batch sample.
pub trait Interpolator<T: Float> {
    fn interpolate<'g>(&self, g: &'g Graph<T>, a: Var<'g, T>, b: Var<'g, T>, t: &[T]) -> Result<Synthesis<'g, T>>;

    /// Bidirectional flow `(F_{a->b}, F_{b->a})`, if the interpolator has a
    /// flow stage.
    fn bidirectional_flow<'g>(&self, _g: &'g Graph<T>, _a: Var<'g, T>, _b: Var<'g, T>) -> Result<Option<(Var<'g, T>, Var<'g, T>)>> {
        Ok(None)
    }
}

fn check_batch<T: Float>(a: &Var<'_, T>, b: &Var<'_, T>, t: &[T]) -> Result<()> {
    let s = a.shape();
    if s != b.shape() || s[1] != 3 || t.len() != s[0] {
        return Err(Error::Shape(format!(
            "interpolating {:?} and {:?} at {} time points",
            s,
            b.shape(),
            t.len()
        )));
    }
    for &ti in t {
        check_time(ti.to_f64().unwrap())?;
    }
    Ok(())
}

/// `M(a, b, t) = (1 - t) a + t b`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearBlend;

impl<T: Float> Interpolator<T> for LinearBlend {
    fn interpolate<'g>(&self, _g: &'g Graph<T>, a: Var<'g, T>, b: Var<'g, T>, t: &[T]) -> Result<Synthesis<'g, T>> {
        check_batch(&a, &b, t)?;
        let wa: Vec<T> = t.iter().map(|&s| T::one() - s).collect();
        let frame = a.scale_samples(&wa)?.add(b.scale_samples(t)?)?;
        Ok(Synthesis { frame, flows: None })
    }
}

/// `M(a, b, t) = a`.
#[derive(Clone, Copy, Debug, Default)]
pub struct CopyFirst;

impl<T: Float> Interpolator<T> for CopyFirst {
    fn interpolate<'g>(&self, _g: &'g Graph<T>, a: Var<'g, T>, b: Var<'g, T>, t: &[T]) -> Result<Synthesis<'g, T>> {
        check_batch(&a, &b, t)?;
        Ok(Synthesis { frame: a, flows: None })
    }
}

/// Initial intermediate flows from the bidirectional pair under a
/// constant-velocity assumption.
pub fn initial_intermediate_flows<'g, T: Float>(f01: Var<'g, T>, f10: Var<'g, T>, t: &[T]) -> Result<(Var<'g, T>, Var<'g, T>)> {
    let per = |f: fn(T) -> T| t.iter().map(|&s| f(s)).collect::<Vec<T>>();
    let ft0 = f01
        .scale_samples(&per(|s| -s * (T::one() - s)))?
        .add(f10.scale_samples(&per(|s| s * s))?)?;
    let ft1 = f01
        .scale_samples(&per(|s| (T::one() - s) * (T::one() - s)))?
        .sub(f10.scale_samples(&per(|s| s * (T::one() - s)))?)?;
    Ok((ft0, ft1))
}

/// Normalised visibility-weighted blend of the two warped inputs. `t` may
/// include the endpoints. The result is not clamped.
#[allow(clippy::too_many_arguments)]
pub fn warp_blend_var<'g, T: Float>(
    i0: Var<'g, T>,
    i1: Var<'g, T>,
    ft0: Var<'g, T>,
    ft1: Var<'g, T>,
    v0: Var<'g, T>,
    v1: Var<'g, T>,
    t: &[T],
) -> Result<Var<'g, T>> {
    let [n, c, h, w] = i0.shape();
    if i1.shape() != i0.shape() || v0.shape() != [n, 1, h, w] || v1.shape() != [n, 1, h, w] || t.len() != n {
        return Err(Error::Shape(format!(
            "warp_blend inputs {:?}, {:?}, visibility {:?}/{:?}, {} time points",
            i0.shape(),
            i1.shape(),
            v0.shape(),
            v1.shape(),
            t.len()
        )));
    }
    if t.iter().any(|s| !(*s >= T::zero() && *s <= T::one())) {
        return Err(Error::InvalidTime(t.iter().map(|s| s.to_f64().unwrap()).find(|s| !(0.0..=1.0).contains(s)).unwrap_or(f64::NAN)));
    }
    let one_minus: Vec<T> = t.iter().map(|&s| T::one() - s).collect();
    let a0 = v0.scale_samples(&one_minus)?;
    let a1 = v1.scale_samples(t)?;
    let num = warp(i0, ft0)?.mul(a0.expand_channels(c)?)?.add(warp(i1, ft1)?.mul(a1.expand_channels(c)?)?)?;
    let z = a0.add(a1)?.clamp_min(T::of(BLEND_EPS));
    Ok(num.div(z.expand_channels(c)?)?)
}

/// Per-pixel visibility weight in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl VisibilityMap {
    pub fn filled(height: usize, width: usize, v: f32) -> Self {
        VisibilityMap {
            height,
            width,
            values: vec![v; height * width],
        }
    }

    fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 1, self.height, self.width], |[_, _, y, x]| T::of(self.values[y * self.width + x] as f64))
    }

    fn from_tensor<T: Float>(t: &Tensor<T>) -> Self {
        VisibilityMap {
            height: t.height(),
            width: t.width(),
            values: t.data()[..t.height() * t.width()].iter().map(|v| v.to_f32().unwrap()).collect(),
        }
    }
}

/// `(V_{t<-0}, V_{t<-1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityPair {
    pub from_0: VisibilityMap,
    pub from_1: VisibilityMap,
}

impl VisibilityPair {
    /// Coupled pair `(v, 1 - v)`.
    pub fn coupled(from_0: VisibilityMap) -> Self {
        let from_1 = VisibilityMap {
            values: from_0.values.iter().map(|v| 1.0 - v).collect(),
            ..from_0.clone()
        };
        VisibilityPair { from_0, from_1 }
    }
}

/// Frame-level [`warp_blend_var`], clamped to `[0, 1]`.
pub fn warp_blend(i0: &Frame, i1: &Frame, ft0: &FlowField, ft1: &FlowField, vis: &VisibilityPair, t: f64) -> Result<Frame> {
    let g = Graph::<f32>::new();
    let out = warp_blend_var(
        g.constant(i0.to_tensor()),
        g.constant(i1.to_tensor()),
        g.constant(ft0.to_tensor()),
        g.constant(ft1.to_tensor()),
        g.constant(vis.from_0.to_tensor()),
        g.constant(vis.from_1.to_tensor()),
        &[t as f32],
    )?;
    Frame::from_tensor(&out.value(), 0)
}

/// Intermediates of a single frame-level synthesis.
#[derive(Clone, Debug)]
pub struct SynthesisDetail {
    pub frame: Frame,
    pub f01: FlowField,
    pub f10: FlowField,
    pub ft0: FlowField,
    pub ft1: FlowField,
    pub visibility: VisibilityPair,
}

/// Learnable interpolation model with both parameter sets in one store.
#[derive(Clone, Debug)]
pub struct InterpModel<T: Float> {
    config: ModelConfig,
    store: ParamStore<T>,
    flow_net: UNet,
    refine_net: UNet,
}

impl<T: Float> InterpModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let flow_net = UNet::new(&mut store, &mut rng, "flow", FLOW_IN, FLOW_OUT, &config);
        let refine_net = UNet::new(&mut store, &mut rng, "refine", REFINE_IN, REFINE_OUT, &config);
        Ok(InterpModel {
            config,
            store,
            flow_net,
            refine_net,
        })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes
    /// against the architecture.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut model = InterpModel::new(config, 0)?;
        if params.len() != model.store.len() {
            return Err(Error::Config(format!(
                "parameter count {} does not match architecture ({})",
                params.len(),
                model.store.len()
            )));
        }
        for (want, got) in model.store.iter().zip(params.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {} {:?} does not match architecture ({} {:?})",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        model.store = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn cast<U: Float>(&self) -> InterpModel<U> {
        InterpModel {
            config: self.config,
            store: self.store.cast(),
            flow_net: self.flow_net.clone(),
            refine_net: self.refine_net.clone(),
        }
    }

    fn check_size(&self, shape: [usize; 4]) -> Result<()> {
        let f = self.config.size_factor();
        if shape[2] < f || shape[3] < f {
            return Err(Error::Config(format!(
                "{}x{} input is below the {f}x{f} minimum of this architecture",
                shape[2], shape[3]
            )));
        }
        Ok(())
    }

    /// Pads to the size factor; returns the padded var and the pad amounts.
    fn pad<'g>(&self, x: Var<'g, T>) -> (Var<'g, T>, usize, usize) {
        let f = self.config.size_factor();
        let [_, _, h, w] = x.shape();
        let (ph, pw) = ((f - h % f) % f, (f - w % f) % f);
        if ph == 0 && pw == 0 {
            (x, 0, 0)
        } else {
            (x.pad_edge([0, ph, 0, pw]), ph, pw)
        }
    }

    fn shrink<'g>(&self, mut x: Var<'g, T>) -> Result<Var<'g, T>> {
        let mut s = self.config.input_downscale;
        while s > 1 {
            x = x.avg_pool2()?;
            s /= 2;
        }
        Ok(x)
    }

    /// Upsamples a network output to input resolution; flow channels are
    /// rescaled to input pixel units.
    fn grow<'g>(&self, mut x: Var<'g, T>, is_flow: bool) -> Var<'g, T> {
        let mut s = self.config.input_downscale;
        while s > 1 {
            x = x.upsample_bilinear2();
            if is_flow {
                x = x.scale(T::of(2.0));
            }
            s /= 2;
        }
        x
    }

    /// Flow stage on already padded inputs.
    fn flow_padded<'g>(&self, g: &'g Graph<T>, a: Var<'g, T>, b: Var<'g, T>) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let x = self.shrink(g.concat(&[a, b])?)?.add_scalar(T::of(-0.5));
        let out = self.grow(self.flow_net.forward(g, &self.store, x)?, true);
        Ok((out.narrow(0, 2)?, out.narrow(2, 2)?))
    }

    /// Refinement stage on padded inputs: returns refined `(F_t0, F_t1)` and
    /// `V_{t<-0}`. The network sees only time-independent inputs and corrects
    /// the endpoint flows; `t` enters through the linear combination and the
    /// blend weights alone, so a cycle cannot be satisfied by switching
    /// between copies of the inputs on `t`.
    fn refine_padded<'g>(
        &self,
        g: &'g Graph<T>,
        a: Var<'g, T>,
        b: Var<'g, T>,
        f01: Var<'g, T>,
        f10: Var<'g, T>,
        t: &[T],
    ) -> Result<(Var<'g, T>, Var<'g, T>, Var<'g, T>)> {
        let centre = |v: Var<'g, T>| v.add_scalar(T::of(-0.5));
        let x = g.concat(&[centre(a), centre(b), f01, f10, centre(warp(b, f01)?), centre(warp(a, f10)?)])?;
        let out = self.refine_net.forward(g, &self.store, self.shrink(x)?)?;
        let delta = self.grow(out.narrow(0, 4)?, true);
        let logit = self.grow(out.narrow(4, 1)?, false);
        let (ft0, ft1) = initial_intermediate_flows(f01.add(delta.narrow(0, 2)?)?, f10.add(delta.narrow(2, 2)?)?, t)?;
        Ok((ft0, ft1, logit.sigmoid()))
    }

    fn crop<'g>(&self, x: Var<'g, T>, h: usize, w: usize) -> Result<Var<'g, T>> {
        if x.shape()[2] == h && x.shape()[3] == w {
            Ok(x)
        } else {
            Ok(x.crop(0, 0, h, w)?)
        }
    }

    /// Batched inference without gradient bookkeeping beyond the graph;
    /// returns the clamped-free frame tensor.
    pub fn synthesize_tensor(&self, a: &Tensor<T>, b: &Tensor<T>, t: &[T]) -> Result<Tensor<T>> {
        let g = Graph::new();
        let out = self.interpolate(&g, g.constant(a.clone()), g.constant(b.clone()), t)?;
        Ok(out.frame.value().as_ref().clone())
    }

    /// Estimates `(F_{0->1}, F_{1->0})` for a frame pair.
    pub fn estimate_bidirectional_flow(&self, i0: &Frame, i1: &Frame) -> Result<(FlowField, FlowField)> {
        let g = Graph::new();
        let (f01, f10) = self
            .bidirectional_flow(&g, g.constant(i0.to_tensor()), g.constant(i1.to_tensor()))?
            .expect("model has a flow stage");
        Ok((FlowField::from_tensor(&f01.value(), 0)?, FlowField::from_tensor(&f10.value(), 0)?))
    }

    /// Initial intermediate flows refined by the learned residual stage,
    /// together with the coupled visibility pair.
    pub fn intermediate_flow_and_visibility(
        &self,
        i0: &Frame,
        i1: &Frame,
        f01: &FlowField,
        f10: &FlowField,
        t: f64,
    ) -> Result<(FlowField, FlowField, VisibilityPair)> {
        check_time(t)?;
        let g = Graph::new();
        let a = g.constant(i0.to_tensor());
        self.check_size(a.shape())?;
        let (h, w) = i0.dims();
        let (a, _, _) = self.pad(a);
        let (b, _, _) = self.pad(g.constant(i1.to_tensor()));
        let (f01, _, _) = self.pad(g.constant(f01.to_tensor()));
        let (f10, _, _) = self.pad(g.constant(f10.to_tensor()));
        let (ft0, ft1, v) = self.refine_padded(&g, a, b, f01, f10, &[T::of(t)])?;
        let v = self.crop(v, h, w)?;
        Ok((
            FlowField::from_tensor(&self.crop(ft0, h, w)?.value(), 0)?,
            FlowField::from_tensor(&self.crop(ft1, h, w)?.value(), 0)?,
            VisibilityPair::coupled(VisibilityMap::from_tensor(&v.value())),
        ))
    }

    /// Full pipeline for one frame pair, clamped to `[0, 1]`.
    pub fn synthesize(&self, i0: &Frame, i1: &Frame, t: f64) -> Result<Frame> {
        Ok(self.synthesize_detailed(i0, i1, t)?.frame)
    }

    pub fn synthesize_detailed(&self, i0: &Frame, i1: &Frame, t: f64) -> Result<SynthesisDetail> {
        check_time(t)?;
        let g = Graph::new();
        let s = self.interpolate(&g, g.constant(i0.to_tensor()), g.constant(i1.to_tensor()), &[T::of(t)])?;
        let fl = s.flows.expect("model emits flows");
        Ok(SynthesisDetail {
            frame: Frame::from_tensor(&s.frame.value(), 0)?,
            f01: FlowField::from_tensor(&fl.f01.value(), 0)?,
            f10: FlowField::from_tensor(&fl.f10.value(), 0)?,
            ft0: FlowField::from_tensor(&fl.ft0.value(), 0)?,
            ft1: FlowField::from_tensor(&fl.ft1.value(), 0)?,
            visibility: VisibilityPair::coupled(VisibilityMap::from_tensor(&fl.visibility.value())),
        })
    }

    /// `n` frames at `t = i / (n + 1)`, synthesized as one batch.
    pub fn multi_frame_interpolate(&self, i0: &Frame, i1: &Frame, n: usize) -> Result<Vec<Frame>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let (a, b) = (i0.to_tensor::<T>(), i1.to_tensor::<T>());
        let a = Tensor::stack(&vec![&a; n])?;
        let b = Tensor::stack(&vec![&b; n])?;
        let out = self.synthesize_tensor(&a, &b, &time_points::<T>(n))?;
        (0..n).map(|i| Frame::from_tensor(&out, i)).collect()
    }
}

/// `t_i = i / (n + 1)` for `i = 1..=n`.
pub fn time_points<T: Float>(n: usize) -> Vec<T> {
    (1..=n).map(|i| T::of(i as f64 / (n + 1) as f64)).collect()
}

impl<T: Float> Interpolator<T> for InterpModel<T> {
    fn interpolate<'g>(&self, g: &'g Graph<T>, a: Var<'g, T>, b: Var<'g, T>, t: &[T]) -> Result<Synthesis<'g, T>> {
        check_batch(&a, &b, t)?;
        self.check_size(a.shape())?;
        let [_, _, h, w] = a.shape();
        let (a, _, _) = self.pad(a);
        let (b, _, _) = self.pad(b);
        let (f01, f10) = self.flow_padded(g, a, b)?;
        let (ft0, ft1, v0) = self.refine_padded(g, a, b, f01, f10, t)?;
        let v1 = v0.scale(-T::one()).add_scalar(T::one());
        let frame = warp_blend_var(a, b, ft0, ft1, v0, v1, t)?;
        Ok(Synthesis {
            frame: self.crop(frame, h, w)?,
            flows: Some(SynthesisFlows {
                f01: self.crop(f01, h, w)?,
                f10: self.crop(f10, h, w)?,
                ft0: self.crop(ft0, h, w)?,
                ft1: self.crop(ft1, h, w)?,
                visibility: self.crop(v0, h, w)?,
            }),
        })
    }

    fn bidirectional_flow<'g>(&self, g: &'g Graph<T>, a: Var<'g, T>, b: Var<'g, T>) -> Result<Option<(Var<'g, T>, Var<'g, T>)>> {
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!("flow between {:?} and {:?}", a.shape(), b.shape())));
        }
        self.check_size(a.shape())?;
        let [_, _, h, w] = a.shape();
        let (a, _, _) = self.pad(a);
        let (b, _, _) = self.pad(b);
        let (f01, f10) = self.flow_padded(g, a, b)?;
        Ok(Some((self.crop(f01, h, w)?, self.crop(f10, h, w)?)))
    }
}
