//! Training objectives. Every norm is mean-reduced over batch, channels and
//! pixels, so the default weights do not depend on resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vfi_autograd::{Float, Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::Interpolator;
use crate::warp::warp;

/// Weights of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_rc: f64,
    pub lambda_rp: f64,
    pub lambda_p: f64,
    pub lambda_w: f64,
    pub lambda_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rc: 0.8,
            lambda_rp: 0.8,
            lambda_p: 0.05,
            lambda_w: 0.4,
            lambda_s: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative (got {v})")));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("lambda_rc", self.lambda_rc),
            ("lambda_rp", self.lambda_rp),
            ("lambda_p", self.lambda_p),
            ("lambda_w", self.lambda_w),
            ("lambda_s", self.lambda_s),
        ]
    }
}

/// Unweighted loss components plus the weighted total. `long_step` is only
/// non-zero in the long-step ablation modes, where it shares `lambda_rc`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rc: f64,
    pub rp: f64,
    pub p: f64,
    pub w: f64,
    pub s: f64,
    pub long_step: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn components(&self) -> [(&'static str, f64); 6] {
        [
            ("rc", self.rc),
            ("rp", self.rp),
            ("p", self.p),
            ("w", self.w),
            ("s", self.s),
            ("long_step", self.long_step),
        ]
    }
}

/// Combines components into a breakdown, rejecting non-finite values.
pub fn total_loss(components: &LossBreakdown, weights: &LossWeights) -> Result<LossBreakdown> {
    for (name, v) in components.components() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss component {name} = {v}")));
        }
    }
    let c = components;
    Ok(LossBreakdown {
        total: weights.lambda_rc * (c.rc + c.long_step)
            + weights.lambda_rp * c.rp
            + weights.lambda_p * c.p
            + weights.lambda_w * c.w
            + weights.lambda_s * c.s,
        ..*c
    })
}

/// Graph nodes of the individual components; absent terms are skipped.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossVars<'g, T: Float> {
    pub rc: Option<Var<'g, T>>,
    pub rp: Option<Var<'g, T>>,
    pub p: Option<Var<'g, T>>,
    pub w: Option<Var<'g, T>>,
    pub s: Option<Var<'g, T>>,
    pub long_step: Option<Var<'g, T>>,
}

impl<'g, T: Float> LossVars<'g, T> {
    /// Weighted scalar to differentiate, and the evaluated breakdown.
    pub fn combine(&self, weights: &LossWeights) -> Result<(Var<'g, T>, LossBreakdown)> {
        let terms = [
            (self.rc, weights.lambda_rc),
            (self.rp, weights.lambda_rp),
            (self.p, weights.lambda_p),
            (self.w, weights.lambda_w),
            (self.s, weights.lambda_s),
            (self.long_step, weights.lambda_rc),
        ];
        let mut total: Option<Var<'g, T>> = None;
        for (v, lambda) in terms {
            let Some(v) = v else { continue };
            if lambda == 0.0 {
                continue;
            }
            let scaled = v.scale(T::of(lambda));
            total = Some(match total {
                Some(acc) => acc.add(scaled)?,
                None => scaled,
            });
        }
        let val = |v: Option<Var<'g, T>>| v.map_or(0.0, |v| v.value().item().to_f64().unwrap());
        let breakdown = total_loss(
            &LossBreakdown {
                rc: val(self.rc),
                rp: val(self.rp),
                p: val(self.p),
                w: val(self.w),
                s: val(self.s),
                long_step: val(self.long_step),
                total: 0.0,
            },
            weights,
        )?;
        let total = total.ok_or_else(|| Error::Config("every loss term has zero weight".into()))?;
        Ok((total, breakdown))
    }
}

fn same_shape<T: Float>(op: &str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1<'g, T: Float>(a: Var<'g, T>, b: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape("l1", &a, &b)?;
    Ok(a.sub(b)?.abs().mean())
}

/// Mean squared difference.
pub fn l2<'g, T: Float>(a: Var<'g, T>, b: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape("l2", &a, &b)?;
    Ok(a.sub(b)?.square().mean())
}

pub fn cycle_reconstruction_loss<'g, T: Float>(i1_hat: Var<'g, T>, i1: Var<'g, T>) -> Result<Var<'g, T>> {
    l1(i1_hat, i1)
}

/// Distance of the student's hidden frames to the teacher's, which are
/// detached from the graph.
pub fn pseudo_supervised_loss<'g, T: Float>(
    student_t: Var<'g, T>,
    student_t1: Var<'g, T>,
    teacher_t: Var<'g, T>,
    teacher_t1: Var<'g, T>,
) -> Result<Var<'g, T>> {
    Ok(l1(student_t, teacher_t.detach())?.add(l1(student_t1, teacher_t1.detach())?)?)
}

/// A frozen mapping from frames to features.
pub trait FeatureExtractor<T: Float> {
    fn id(&self) -> String;
    fn extract<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>>;
}

/// Features are the frame itself.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityFeatures;

impl<T: Float> FeatureExtractor<T> for IdentityFeatures {
    fn id(&self) -> String {
        "identity".into()
    }

    fn extract<'g>(&self, _g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x)
    }
}

/// Fixed random 4-layer convolutional stack, two of the layers strided.
#[derive(Clone, Debug)]
pub struct RandomConvFeatures<T: Float> {
    seed: u64,
    layers: Vec<(Tensor<T>, Tensor<T>, usize)>,
}

impl<T: Float> RandomConvFeatures<T> {
    pub const MIN_SIZE: usize = 4;
    const LAYERS: [(usize, usize, usize); 4] = [(3, 8, 1), (8, 16, 2), (16, 16, 1), (16, 32, 2)];

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = Self::LAYERS
            .iter()
            .map(|&(cin, cout, stride)| {
                // He-style scale keeps activations from vanishing through the stack.
                let bound = (6.0 / (cin * 9) as f64).sqrt();
                let w = Tensor::from_fn([cout, cin, 3, 3], |_| T::of(rng.random_range(-bound..bound)));
                let b = Tensor::from_fn([1, cout, 1, 1], |_| T::of(rng.random_range(-0.1..0.1)));
                (w, b, stride)
            })
            .collect();
        RandomConvFeatures { seed, layers }
    }
}

impl<T: Float> FeatureExtractor<T> for RandomConvFeatures<T> {
    fn id(&self) -> String {
        format!("random-conv4-seed{}", self.seed)
    }

    fn extract<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let [_, c, h, w] = x.shape();
        if c != 3 || h < Self::MIN_SIZE || w < Self::MIN_SIZE {
            return Err(Error::Shape(format!(
                "feature extractor needs 3 channels and at least {0}x{0} pixels, got {1:?}",
                Self::MIN_SIZE,
                x.shape()
            )));
        }
        let mut h = x;
        for (w, b, stride) in &self.layers {
            h = h
                .conv2d(g.constant(w.clone()), Some(g.constant(b.clone())), *stride, 1)?
                .leaky_relu(T::of(0.1));
        }
        Ok(h)
    }
}

pub fn perceptual_loss<'g, T: Float>(
    g: &'g Graph<T>,
    i1_hat: Var<'g, T>,
    i1: Var<'g, T>,
    psi: &dyn FeatureExtractor<T>,
) -> Result<Var<'g, T>> {
    same_shape("perceptual_loss", &i1_hat, &i1)?;
    l2(psi.extract(g, i1_hat)?, psi.extract(g, i1)?)
}

/// Everything the warping loss consumes. `f_ab` is the flow from frame `a`
/// to frame `b`; hidden frames are `Î_t` and `Î_{t+1}`.
#[derive(Clone, Copy, Debug)]
pub struct WarpingInputs<'g, T: Float> {
    pub i0: Var<'g, T>,
    pub i1: Var<'g, T>,
    pub i2: Var<'g, T>,
    pub hidden_t: Var<'g, T>,
    pub hidden_t1: Var<'g, T>,
    pub f01: Option<Var<'g, T>>,
    pub f10: Option<Var<'g, T>>,
    pub f12: Option<Var<'g, T>>,
    pub f21: Option<Var<'g, T>>,
    pub f_t_t1: Option<Var<'g, T>>,
    pub f_t1_t: Option<Var<'g, T>>,
}

fn need<'g, T: Float>(v: Option<Var<'g, T>>, name: &str) -> Result<Var<'g, T>> {
    v.ok_or_else(|| Error::Config(format!("warping loss needs flow {name}")))
}

/// Sum of the six photometric terms: each input frame warped towards its
/// neighbour, plus the same between the two hidden frames.
pub fn warping_loss<'g, T: Float>(x: &WarpingInputs<'g, T>) -> Result<Var<'g, T>> {
    let terms = [
        (x.i0, need(x.f10, "F_1->0")?, x.i1),
        (x.i1, need(x.f01, "F_0->1")?, x.i0),
        (x.i1, need(x.f21, "F_2->1")?, x.i2),
        (x.i2, need(x.f12, "F_1->2")?, x.i1),
        (x.hidden_t, need(x.f_t1_t, "F_t+1->t")?, x.hidden_t1),
        (x.hidden_t1, need(x.f_t_t1, "F_t->t+1")?, x.hidden_t),
    ];
    let mut total: Option<Var<'g, T>> = None;
    for (src, flow, target) in terms {
        let term = l1(warp(src, flow)?, target)?;
        total = Some(match total {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("six terms"))
}

/// The two photometric terms of one frame pair, used where only a single
/// pair is observed.
pub fn pair_warping_loss<'g, T: Float>(a: Var<'g, T>, b: Var<'g, T>, f_ab: Var<'g, T>, f_ba: Var<'g, T>) -> Result<Var<'g, T>> {
    Ok(l1(warp(a, f_ba)?, b)?.add(l1(warp(b, f_ab)?, a)?)?)
}

/// Sum over the fields of mean |dx| + mean |dy|.
pub fn smoothness_loss<'g, T: Float>(flows: &[Var<'g, T>]) -> Result<Var<'g, T>> {
    let first = flows.first().ok_or_else(|| Error::Config("smoothness loss needs flows".into()))?;
    let mut total: Option<Var<'g, T>> = None;
    for f in flows {
        same_shape("smoothness_loss", first, f)?;
        let term = f.diff_x().abs().mean().add(f.diff_y().abs().mean())?;
        total = Some(match total {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty"))
}

/// `|M(I0, I2, 1/2) - I1|` over a batch of triplets.
pub fn long_step_loss<'g, T: Float>(
    g: &'g Graph<T>,
    model: &dyn Interpolator<T>,
    i0: Var<'g, T>,
    i1: Var<'g, T>,
    i2: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let half = vec![T::of(0.5); i0.shape()[0]];
    let mid = model.interpolate(g, i0, i2, &half)?;
    l1(mid.frame, i1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CopyFirst, LinearBlend};

    fn t(v: f64, shape: [usize; 4]) -> Tensor<f64> {
        Tensor::full(shape, v)
    }

    #[test]
    fn l1_closed_forms() {
        let g = Graph::new();
        let a = g.constant(t(0.5, [1, 3, 2, 2]));
        let b = g.constant(t(0.25, [1, 3, 2, 2]));
        assert_eq!(cycle_reconstruction_loss(a, b).unwrap().value().item(), 0.25);
        let mut c = Tensor::full([1, 3, 2, 2], 0.1);
        c.set([0, 1, 1, 0], 0.9);
        let v = cycle_reconstruction_loss(g.constant(c), g.constant(t(0.1, [1, 3, 2, 2]))).unwrap();
        assert!((v.value().item() - 0.8 / 12.0).abs() < 1e-15);
        assert!(l1(a, g.constant(t(0.0, [1, 3, 2, 3]))).is_err());
    }

    #[test]
    fn pseudo_supervised_sums_two_terms() {
        let g = Graph::new();
        let s = g.input(t(0.5, [1, 3, 4, 4]));
        let v = pseudo_supervised_loss(s, s, g.constant(t(0.4, [1, 3, 4, 4])), g.constant(t(0.8, [1, 3, 4, 4]))).unwrap();
        assert!((v.value().item() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn teacher_outputs_get_no_gradient() {
        let g = Graph::new();
        let s = g.input(t(0.5, [1, 3, 4, 4]));
        let teacher = g.input(t(0.2, [1, 3, 4, 4]));
        let v = pseudo_supervised_loss(s, s, teacher, teacher).unwrap();
        let grads = g.backward(v).unwrap();
        assert!(grads.wrt(teacher).is_none());
        assert!(grads.wrt(s).is_some());
    }

    #[test]
    fn perceptual_identity_is_squared_difference() {
        let g = Graph::new();
        let a = g.constant(t(0.7, [1, 3, 5, 5]));
        let b = g.constant(t(0.4, [1, 3, 5, 5]));
        let v = perceptual_loss(&g, a, b, &IdentityFeatures).unwrap().value().item();
        assert!((v - 0.09).abs() < 1e-12);
        let psi = RandomConvFeatures::<f64>::new(3);
        let ab = perceptual_loss(&g, a, b, &psi).unwrap().value().item();
        let ba = perceptual_loss(&g, b, a, &psi).unwrap().value().item();
        assert!(ab > 0.0);
        assert_eq!(ab, ba);
        assert!(perceptual_loss(&g, g.constant(t(0.0, [1, 3, 2, 2])), g.constant(t(0.0, [1, 3, 2, 2])), &psi).is_err());
    }

    #[test]
    fn smoothness_of_a_ramp() {
        let g = Graph::new();
        let ramp = g.constant(Tensor::from_fn([1, 2, 4, 4], |[_, c, _, x]| if c == 0 { x as f64 } else { 0.0 }));
        let zero = g.constant(t(0.0, [1, 2, 4, 4]));
        let v = smoothness_loss(&[zero, ramp, zero, zero, zero, zero]).unwrap();
        assert_eq!(v.value().item(), 12.0 / 32.0);
        let c = g.constant(t(3.0, [1, 2, 4, 4]));
        assert_eq!(smoothness_loss(&[c; 6]).unwrap().value().item(), 0.0);
        assert!(smoothness_loss(&[c, g.constant(t(0.0, [1, 2, 4, 5]))]).is_err());
    }

    #[test]
    fn warping_loss_single_term() {
        let g = Graph::new();
        let shape = [1, 3, 4, 4];
        let i = g.constant(t(0.3, shape));
        let z = Some(g.constant(t(0.0, [1, 2, 4, 4])));
        let mut x = WarpingInputs {
            i0: i,
            i1: i,
            i2: i,
            hidden_t: i,
            hidden_t1: i,
            f01: z,
            f10: z,
            f12: z,
            f21: z,
            f_t_t1: z,
            f_t1_t: z,
        };
        assert_eq!(warping_loss(&x).unwrap().value().item(), 0.0);
        x.i2 = g.constant(t(0.36, shape));
        // I2 enters two terms; only hidden frames differ in the last check.
        assert!((warping_loss(&x).unwrap().value().item() - 0.12).abs() < 1e-12);
        x.i2 = i;
        x.hidden_t1 = g.constant(t(0.36, shape));
        assert!((warping_loss(&x).unwrap().value().item() - 0.12).abs() < 1e-12);
        x.f12 = None;
        assert!(matches!(warping_loss(&x), Err(Error::Config(_))));
    }

    #[test]
    fn long_step_with_stubs() {
        let g = Graph::new();
        let c = g.constant(t(0.6, [2, 3, 4, 4]));
        assert_eq!(long_step_loss(&g, &LinearBlend, c, c, c).unwrap().value().item(), 0.0);
        let i1 = g.constant(t(0.2, [2, 3, 4, 4]));
        let v = long_step_loss(&g, &CopyFirst, c, i1, c).unwrap().value().item();
        assert!((v - 0.4).abs() < 1e-12);
    }

    #[test]
    fn weighted_total() {
        let ones = LossBreakdown {
            rc: 1.0,
            rp: 1.0,
            p: 1.0,
            w: 1.0,
            s: 1.0,
            long_step: 0.0,
            total: 0.0,
        };
        let b = total_loss(&ones, &LossWeights::default()).unwrap();
        assert!((b.total - 3.05).abs() < 1e-12);
        assert_eq!(total_loss(&LossBreakdown::default(), &LossWeights::default()).unwrap().total, 0.0);
        let bad = LossBreakdown { w: f64::NAN, ..ones };
        assert!(matches!(total_loss(&bad, &LossWeights::default()), Err(Error::NonFinite(m)) if m.contains('w')));
    }

    #[test]
    fn combine_skips_zero_weights() {
        let g = Graph::new();
        let a = g.input(t(0.5, [1, 1, 1, 1]));
        let b = g.input(t(2.0, [1, 1, 1, 1]));
        let vars = LossVars {
            rc: Some(a),
            rp: Some(b),
            ..Default::default()
        };
        let w = LossWeights {
            lambda_rp: 0.0,
            ..Default::default()
        };
        let (total, br) = vars.combine(&w).unwrap();
        assert!((total.value().item() - 0.4).abs() < 1e-12);
        assert_eq!(br.rp, 2.0);
        assert!((br.total - 0.4).abs() < 1e-12);
        assert!(g.backward(total).unwrap().wrt(b).is_none());
    }
}
