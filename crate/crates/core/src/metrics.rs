//! Image quality metrics, baselines and report aggregation.

use serde::{Deserialize, Serialize};

use crate::data::EvalClip;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::model::InterpModel;

/// Reported PSNR for identical frames.
pub const PSNR_CAP: f64 = 99.99;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_dims(a: &Frame, b: &Frame) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("comparing {:?} with {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

/// Peak signal-to-noise ratio for unit dynamic range, in dB.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Root mean squared error on the 0-255 scale.
pub fn interpolation_error(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(255.0 * mse(a, b)?.sqrt())
}

/// Normalised 1-d Gaussian taps.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode Gaussian filter of an `h x w` plane.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over valid 11x11 Gaussian windows, averaged
/// over channels.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_dims(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    let k = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let pa: Vec<f64> = a.pixels().iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.pixels().iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter(&pa, h, w, &k);
        let mu_b = filter(&pb, h, w, &k);
        let aa = filter(&prod(&pa, &pa), h, w, &k);
        let bb = filter(&prod(&pb, &pb), h, w, &k);
        let ab = filter(&prod(&pa, &pb), h, w, &k);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let (va, vb, cov) = (aa[i] - ma * ma, bb[i] - mb * mb, ab[i] - ma * mb);
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / 3.0)
}

/// Nearer input frame for each intermediate time; the midpoint goes to the
/// first input.
pub fn trivial_copy_predict(clip: &EvalClip) -> Vec<Frame> {
    (1..=clip.n)
        .map(|i| {
            if 2 * i <= clip.n + 1 {
                clip.input_first.clone()
            } else {
                clip.input_last.clone()
            }
        })
        .collect()
}

/// Something that fills in the intermediate frames of an evaluation clip.
pub trait Predictor {
    fn name(&self) -> String;
    fn predict(&self, clip: &EvalClip) -> Result<Vec<Frame>>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrivialCopy;

impl Predictor for TrivialCopy {
    fn name(&self) -> String {
        "trivial_copy".into()
    }

    fn predict(&self, clip: &EvalClip) -> Result<Vec<Frame>> {
        Ok(trivial_copy_predict(clip))
    }
}

/// Returns the ground truth; useful for checking the report plumbing.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruth;

impl Predictor for GroundTruth {
    fn name(&self) -> String {
        "ground_truth".into()
    }

    fn predict(&self, clip: &EvalClip) -> Result<Vec<Frame>> {
        Ok(clip.ground_truth.clone())
    }
}

/// A trained model under a display name.
pub struct ModelPredictor<'a> {
    pub name: String,
    pub model: &'a InterpModel<f32>,
}

impl Predictor for ModelPredictor<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn predict(&self, clip: &EvalClip) -> Result<Vec<Frame>> {
        self.model.multi_frame_interpolate(&clip.input_first, &clip.input_last, clip.n)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
    pub ie: f64,
}

impl Scores {
    fn mean(rows: impl ExactSizeIterator<Item = Scores>) -> Scores {
        let n = rows.len() as f64;
        let mut acc = Scores::default();
        for r in rows {
            acc.psnr += r.psnr;
            acc.ssim += r.ssim;
            acc.ie += r.ie;
        }
        Scores {
            psnr: acc.psnr / n,
            ssim: acc.ssim / n,
            ie: acc.ie / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub clip_id: String,
    #[serde(flatten)]
    pub scores: Scores,
}

/// Mean and sample standard deviation; the deviation is absent for a single
/// value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        MeanStd { mean, std }
    }

    pub fn format(&self, digits: usize) -> String {
        match self.std {
            Some(s) => format!("{:.*}±{:.*}", digits, self.mean, digits, s),
            None => format!("{:.*}", digits, self.mean),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoresMeanStd {
    pub psnr: MeanStd,
    pub ssim: MeanStd,
    pub ie: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub n: usize,
    pub per_clip: Vec<ClipScore>,
    pub means: Scores,
    pub per_time_psnr: Vec<f64>,
    /// Per-seed means; a single entry for a single run.
    pub seeds: Vec<Scores>,
    pub mean_std: ScoresMeanStd,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `index,t,psnr` rows.
    pub fn per_time_csv(&self) -> String {
        let mut s = String::from("index,t,psnr\n");
        for (i, p) in self.per_time_psnr.iter().enumerate() {
            s += &format!("{},{:.6},{:.6}\n", i + 1, (i + 1) as f64 / (self.n + 1) as f64, p);
        }
        s
    }
}

fn mean_std_of(seeds: &[Scores]) -> ScoresMeanStd {
    let col = |f: fn(&Scores) -> f64| MeanStd::of(&seeds.iter().map(f).collect::<Vec<_>>());
    ScoresMeanStd {
        psnr: col(|s| s.psnr),
        ssim: col(|s| s.ssim),
        ie: col(|s| s.ie),
    }
}

/// Scores every intermediate frame of every clip.
pub fn evaluate(predictor: &dyn Predictor, clips: &[EvalClip], n: usize) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(Error::Data("no evaluation clips".into()));
    }
    let mut per_clip = Vec::with_capacity(clips.len());
    let mut time_sum = vec![0.0; n];
    for clip in clips {
        if clip.n != n || clip.ground_truth.len() != n {
            return Err(Error::Data(format!(
                "clip {} has {} intermediate frames, expected {n}",
                clip.source_id,
                clip.ground_truth.len()
            )));
        }
        let pred = predictor.predict(clip)?;
        if pred.len() != n {
            return Err(Error::Data(format!("{} predicted {} frames, expected {n}", predictor.name(), pred.len())));
        }
        let mut rows = Vec::with_capacity(n);
        for (i, (p, gt)) in pred.iter().zip(&clip.ground_truth).enumerate() {
            let s = Scores {
                psnr: psnr(p, gt)?,
                ssim: ssim(p, gt)?,
                ie: interpolation_error(p, gt)?,
            };
            time_sum[i] += s.psnr;
            rows.push(s);
        }
        per_clip.push(ClipScore {
            clip_id: clip.source_id.clone(),
            scores: Scores::mean(rows.into_iter()),
        });
    }
    let means = Scores::mean(per_clip.iter().map(|c| c.scores));
    let count = clips.len() as f64;
    Ok(EvalReport {
        method: predictor.name(),
        n,
        per_clip,
        means,
        per_time_psnr: time_sum.into_iter().map(|s| s / count).collect(),
        seeds: vec![means],
        mean_std: mean_std_of(&[means]),
    })
}

/// Combines runs of the same method over the same clips with different
/// seeds.
pub fn aggregate_seeds(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or_else(|| Error::Data("no reports to aggregate".into()))?;
    for r in reports {
        let same_clips = r.per_clip.len() == first.per_clip.len()
            && r.per_clip.iter().zip(&first.per_clip).all(|(a, b)| a.clip_id == b.clip_id);
        if r.n != first.n || !same_clips {
            return Err(Error::Data(format!("report {} covers different clips", r.method)));
        }
    }
    let k = reports.len();
    let per_clip = (0..first.per_clip.len())
        .map(|i| ClipScore {
            clip_id: first.per_clip[i].clip_id.clone(),
            scores: Scores::mean(reports.iter().map(|r| r.per_clip[i].scores).collect::<Vec<_>>().into_iter()),
        })
        .collect::<Vec<_>>();
    let seeds: Vec<Scores> = reports.iter().map(|r| r.means).collect();
    Ok(EvalReport {
        method: first.method.clone(),
        n: first.n,
        means: Scores::mean(per_clip.iter().map(|c| c.scores)),
        per_time_psnr: (0..first.n)
            .map(|i| reports.iter().map(|r| r.per_time_psnr[i]).sum::<f64>() / k as f64)
            .collect(),
        per_clip,
        mean_std: mean_std_of(&seeds),
        seeds,
    })
}

/// Plain-text comparison of several reports.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:<width$}  {:>14}  {:>14}  {:>14}\n", "method", "PSNR", "SSIM", "IE");
    for r in reports {
        s += &format!(
            "{:<width$}  {:>14}  {:>14}  {:>14}\n",
            r.method,
            r.mean_std.psnr.format(2),
            r.mean_std.ssim.format(3),
            r.mean_std.ie.format(2)
        );
    }
    s
}
