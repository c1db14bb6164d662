//! The optimisation loop: cycle-consistency, pseudo-supervised, supervised
//! and long-step objectives, the step schedule, checkpoints and resume.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vfi_autograd::{Adam, AdamConfig, Float, Graph, Tensor, Var};

use crate::checkpoint::{AdamState, Checkpoint};
use crate::config::{Mode, TrainConfig};
use crate::data::{EvalClip, Triplet};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::loss::{
    cycle_reconstruction_loss, l1, pair_warping_loss, perceptual_loss, pseudo_supervised_loss, smoothness_loss,
    warping_loss, FeatureExtractor, LossBreakdown, LossVars, LossWeights, RandomConvFeatures, WarpingInputs,
};
use crate::metrics::{evaluate, ModelPredictor};
use crate::model::{InterpModel, Interpolator, Synthesis};

/// Sampled times stay this far from the endpoints.
pub const TIME_MARGIN: f64 = 1e-3;

const STREAM_INIT: u64 = 1;
const STREAM_FEATURES: u64 = 2;
const STREAM_EPOCH: u64 = 1 << 32;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for one named random stream of a run.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    splitmix(root ^ splitmix(stream))
}

/// Uniform on `(TIME_MARGIN, 1 - TIME_MARGIN)`.
pub fn sample_time(rng: &mut impl Rng) -> f64 {
    rng.random_range(TIME_MARGIN..1.0 - TIME_MARGIN)
}

/// Learning rate for a 1-based epoch: divided by the decay factor once for
/// every decay epoch already passed.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let passed = config.lr_decay_epochs.iter().filter(|&&d| epoch > d).count();
    config.lr_initial / config.lr_decay_factor.powi(passed as i32)
}

/// The three applications of the model in one cycle.
#[derive(Clone, Copy, Debug)]
pub struct CyclePass<'g, T: Float> {
    /// `M(I0, I1, t)`.
    pub hidden_t: Synthesis<'g, T>,
    /// `M(I1, I2, t)`.
    pub hidden_t1: Synthesis<'g, T>,
    /// `M(hidden_t, hidden_t1, 1 - t)`, which should reproduce `I1`.
    pub reconstruction: Synthesis<'g, T>,
}

/// Runs the cycle on a batch of triplets with one `t` per triplet.
pub fn cycle_pass<'g, T: Float>(
    g: &'g Graph<T>,
    model: &dyn Interpolator<T>,
    i0: Var<'g, T>,
    i1: Var<'g, T>,
    i2: Var<'g, T>,
    t: &[T],
) -> Result<CyclePass<'g, T>> {
    let hidden_t = model.interpolate(g, i0, i1, t)?;
    let hidden_t1 = model.interpolate(g, i1, i2, t)?;
    let back: Vec<T> = t.iter().map(|&s| T::one() - s).collect();
    let reconstruction = model.interpolate(g, hidden_t.frame, hidden_t1.frame, &back)?;
    Ok(CyclePass {
        hidden_t,
        hidden_t1,
        reconstruction,
    })
}

/// One optimisation batch, already cropped.
#[derive(Clone, Debug)]
pub enum Batch<T: Float> {
    Triplets {
        i0: Tensor<T>,
        i1: Tensor<T>,
        i2: Tensor<T>,
        t: Vec<T>,
    },
    Supervised {
        a: Tensor<T>,
        b: Tensor<T>,
        target: Tensor<T>,
        t: Vec<T>,
    },
}

impl<T: Float> Batch<T> {
    pub fn len(&self) -> usize {
        match self {
            Batch::Triplets { t, .. } | Batch::Supervised { t, .. } => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Teacher predictions of the two hidden frames, computed outside the
/// student's graph.
#[derive(Clone, Debug)]
pub struct TeacherTargets<T: Float> {
    pub hidden_t: Tensor<T>,
    pub hidden_t1: Tensor<T>,
}

pub fn teacher_targets<T: Float>(teacher: &InterpModel<T>, batch: &Batch<T>) -> Result<TeacherTargets<T>> {
    match batch {
        Batch::Triplets { i0, i1, i2, t } => Ok(TeacherTargets {
            hidden_t: teacher.synthesize_tensor(i0, i1, t)?,
            hidden_t1: teacher.synthesize_tensor(i1, i2, t)?,
        }),
        Batch::Supervised { .. } => Err(Error::Config("pseudo supervision needs triplet batches".into())),
    }
}

/// Differentiable objective of one batch.
pub struct Objective<'g, T: Float> {
    pub total: Var<'g, T>,
    pub breakdown: LossBreakdown,
    /// Cycle reconstructions evaluated (one per triplet when the cycle term
    /// is active).
    pub cycle_reconstructions: u64,
}

fn flows_of<'g, T: Float>(s: &Synthesis<'g, T>) -> Result<(Var<'g, T>, Var<'g, T>)> {
    s.flows
        .map(|f| (f.f01, f.f10))
        .ok_or_else(|| Error::Config("warping and smoothness terms need an interpolator with flows".into()))
}

/// Builds the weighted loss of `mode` over a batch.
pub fn build_objective<'g, T: Float>(
    g: &'g Graph<T>,
    model: &InterpModel<T>,
    teacher: Option<&TeacherTargets<T>>,
    features: &dyn FeatureExtractor<T>,
    batch: &Batch<T>,
    mode: Mode,
    weights: &LossWeights,
) -> Result<Objective<'g, T>> {
    let mut vars = LossVars::default();
    let mut cycles = 0;
    let regularise = weights.lambda_w > 0.0 || weights.lambda_s > 0.0;
    match (mode, batch) {
        (Mode::Supervised, Batch::Supervised { a, b, target, t }) => {
            let (a, b, target) = (g.constant(a.clone()), g.constant(b.clone()), g.constant(target.clone()));
            let out = model.interpolate(g, a, b, t)?;
            vars.rc = Some(l1(out.frame, target)?);
            if weights.lambda_p > 0.0 {
                vars.p = Some(perceptual_loss(g, out.frame, target, features)?);
            }
            if regularise {
                let (f01, f10) = flows_of(&out)?;
                vars.w = Some(pair_warping_loss(a, b, f01, f10)?);
                vars.s = Some(smoothness_loss(&[f01, f10])?);
            }
        }
        (Mode::LongStep, Batch::Triplets { i0, i1, i2, .. }) => {
            let (i0, i1, i2) = (g.constant(i0.clone()), g.constant(i1.clone()), g.constant(i2.clone()));
            let out = model.interpolate(g, i0, i2, &vec![T::of(0.5); batch.len()])?;
            vars.long_step = Some(l1(out.frame, i1)?);
            if regularise {
                let (f02, f20) = flows_of(&out)?;
                vars.w = Some(pair_warping_loss(i0, i2, f02, f20)?);
                vars.s = Some(smoothness_loss(&[f02, f20])?);
            }
        }
        (Mode::Supervised | Mode::LongStep, _) | (_, Batch::Supervised { .. }) => {
            return Err(Error::Config(format!("mode {mode} cannot train on this kind of batch")));
        }
        (_, Batch::Triplets { i0, i1, i2, t }) => {
            let (i0, i1, i2) = (g.constant(i0.clone()), g.constant(i1.clone()), g.constant(i2.clone()));
            let hidden_t = model.interpolate(g, i0, i1, t)?;
            let hidden_t1 = model.interpolate(g, i1, i2, t)?;
            if weights.lambda_rc > 0.0 || weights.lambda_p > 0.0 {
                let back: Vec<T> = t.iter().map(|&s| T::one() - s).collect();
                let rec = model.interpolate(g, hidden_t.frame, hidden_t1.frame, &back)?;
                cycles = t.len() as u64;
                vars.rc = Some(cycle_reconstruction_loss(rec.frame, i1)?);
                if weights.lambda_p > 0.0 {
                    vars.p = Some(perceptual_loss(g, rec.frame, i1, features)?);
                }
            }
            if weights.lambda_rp > 0.0 {
                let tt = teacher.ok_or_else(|| Error::Config(format!("mode {mode} with lambda_rp > 0 needs a teacher")))?;
                vars.rp = Some(pseudo_supervised_loss(
                    hidden_t.frame,
                    hidden_t1.frame,
                    g.constant(tt.hidden_t.clone()),
                    g.constant(tt.hidden_t1.clone()),
                )?);
            }
            if regularise {
                let (f01, f10) = flows_of(&hidden_t)?;
                let (f12, f21) = flows_of(&hidden_t1)?;
                // The hidden-pair terms only shape the flow network. Letting
                // them reach the synthesized frames rewards making the two
                // hidden frames alike, which collapses towards copying.
                let (ht, ht1) = (hidden_t.frame.detach(), hidden_t1.frame.detach());
                let (f_t_t1, f_t1_t) = model
                    .bidirectional_flow(g, ht, ht1)?
                    .expect("model has a flow stage");
                vars.w = Some(warping_loss(&WarpingInputs {
                    i0,
                    i1,
                    i2,
                    hidden_t: ht,
                    hidden_t1: ht1,
                    f01: Some(f01),
                    f10: Some(f10),
                    f12: Some(f12),
                    f21: Some(f21),
                    f_t_t1: Some(f_t_t1),
                    f_t1_t: Some(f_t1_t),
                })?);
                vars.s = Some(smoothness_loss(&[f_t_t1, f_t1_t, f01, f10, f12, f21])?);
            }
            if mode == Mode::CcPlusLongStep {
                let out = model.interpolate(g, i0, i2, &vec![T::of(0.5); batch.len()])?;
                vars.long_step = Some(l1(out.frame, i1)?);
            }
        }
    }
    let (total, breakdown) = vars.combine(weights)?;
    Ok(Objective {
        total,
        breakdown,
        cycle_reconstructions: cycles,
    })
}

/// A frame pair with the ground-truth frame at time `t` between them.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedSample {
    pub a: Frame,
    pub b: Frame,
    pub target: Frame,
    pub t: f64,
}

/// Every intermediate frame of every window as a sample.
pub fn supervised_samples(clips: &[EvalClip]) -> Vec<SupervisedSample> {
    clips
        .iter()
        .flat_map(|c| {
            c.ground_truth.iter().enumerate().map(move |(i, gt)| SupervisedSample {
                a: c.input_first.clone(),
                b: c.input_last.clone(),
                target: gt.clone(),
                t: (i + 1) as f64 / (c.n + 1) as f64,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum TrainData {
    Triplets(Vec<Triplet>),
    Supervised(Vec<SupervisedSample>),
}

impl TrainData {
    pub fn len(&self) -> usize {
        match self {
            TrainData::Triplets(v) => v.len(),
            TrainData::Supervised(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dims(&self) -> Option<(usize, usize)> {
        match self {
            TrainData::Triplets(v) => v.first().map(|t| t.i0.dims()),
            TrainData::Supervised(v) => v.first().map(|s| s.a.dims()),
        }
    }
}

/// Per-epoch log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub val_psnr: Option<f64>,
}

/// Where a run writes its log and checkpoints.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
}

impl RunOutput {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(&dir, e))?;
        Ok(RunOutput { dir })
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    pub fn latest_checkpoint(&self) -> PathBuf {
        self.dir.join("latest.ckpt")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt"))
    }

    /// Drops log records past `epoch`, so a resumed run appends cleanly.
    pub fn truncate_log(&self, epoch: usize) -> Result<()> {
        let path = self.log_path();
        let Ok(text) = fs::read_to_string(&path) else {
            return Ok(());
        };
        let mut kept = String::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: EpochRecord = serde_json::from_str(line)?;
            if rec.epoch <= epoch {
                kept += line;
                kept.push('\n');
            }
        }
        fs::write(&path, kept).map_err(|e| Error::io(&path, e))
    }

    fn append(&self, rec: &EpochRecord) -> Result<()> {
        let path = self.log_path();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", serde_json::to_string(rec)?).map_err(|e| Error::io(&path, e))
    }
}

/// Reads a metrics log.
pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Owns the student, the optional frozen teacher and the optimizer.
pub struct Trainer {
    config: TrainConfig,
    model: InterpModel<f32>,
    teacher: Option<InterpModel<f32>>,
    adam: Adam<f32>,
    features: RandomConvFeatures<f32>,
    epoch: usize,
    step: u64,
    cycle_reconstructions: u64,
    history: Vec<EpochRecord>,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("mode", &self.config.mode)
            .field("epoch", &self.epoch)
            .field("step", &self.step)
            .finish()
    }
}

fn adam_config(c: &TrainConfig) -> AdamConfig {
    AdamConfig {
        beta1: c.adam_beta1,
        beta2: c.adam_beta2,
        eps: c.adam_eps,
        weight_decay: c.weight_decay,
    }
}

impl Trainer {
    /// Fresh student initialised from the config seed.
    pub fn new(config: TrainConfig, teacher: Option<InterpModel<f32>>) -> Result<Self> {
        let model = InterpModel::new(config.model, derive_seed(config.seed, STREAM_INIT))?;
        Trainer::with_model(config, model, teacher)
    }

    pub fn with_model(config: TrainConfig, model: InterpModel<f32>, teacher: Option<InterpModel<f32>>) -> Result<Self> {
        config.validate()?;
        if *model.config() != config.model {
            return Err(Error::Config(format!(
                "model architecture {:?} does not match the configured {:?}",
                model.config(),
                config.model
            )));
        }
        if config.mode.needs_teacher() && config.effective_weights().lambda_rp > 0.0 && teacher.is_none() {
            return Err(Error::Config(format!("mode {} needs a teacher checkpoint", config.mode)));
        }
        if let Some(t) = &teacher {
            if t.config().size_factor() > config.crop_size {
                return Err(Error::Config("teacher cannot run on the configured crop size".into()));
            }
        }
        let adam = Adam::new(adam_config(&config), model.params());
        let features = RandomConvFeatures::new(derive_seed(config.seed, STREAM_FEATURES));
        Ok(Trainer {
            config,
            model,
            teacher,
            adam,
            features,
            epoch: 0,
            step: 0,
            cycle_reconstructions: 0,
            history: Vec::new(),
        })
    }

    /// Student and frozen teacher both start from the checkpoint.
    pub fn finetune(pretrained: &Checkpoint, mut config: TrainConfig) -> Result<Self> {
        if pretrained.model_config != config.model {
            if config.model != TrainConfig::default().model {
                return Err(Error::Config(format!(
                    "checkpoint architecture {:?} does not match the configured {:?}",
                    pretrained.model_config, config.model
                )));
            }
            config.model = pretrained.model_config;
        }
        let student = pretrained.model()?;
        let teacher = pretrained.model()?;
        Trainer::with_model(config, student, Some(teacher))
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ckpt: &Checkpoint, config: TrainConfig, teacher: Option<InterpModel<f32>>) -> Result<Self> {
        let mut t = Trainer::with_model(config, ckpt.model()?, teacher)?;
        if let Some(state) = &ckpt.adam {
            t.adam = state.clone().restore(adam_config(&t.config))?;
        }
        t.epoch = ckpt.epoch;
        t.step = ckpt.step;
        t.cycle_reconstructions = ckpt.cycle_reconstructions;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_config: *self.model.config(),
            params: self.model.params().clone(),
            adam: Some(AdamState::capture(&self.adam)),
            epoch: self.epoch,
            step: self.step,
            cycle_reconstructions: self.cycle_reconstructions,
            train_config: self.config.to_json(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &InterpModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> InterpModel<f32> {
        self.model
    }

    pub fn teacher(&self) -> Option<&InterpModel<f32>> {
        self.teacher.as_ref()
    }

    pub fn optimizer(&self) -> &Adam<f32> {
        &self.adam
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn cycle_reconstructions(&self) -> u64 {
        self.cycle_reconstructions
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }


    /// Loss of a batch without updating anything.
    pub fn evaluate_batch(&self, batch: &Batch<f32>, weights: &LossWeights) -> Result<LossBreakdown> {
        let targets = self.targets_for(batch, weights)?;
        let g = Graph::new();
        let obj = build_objective(&g, &self.model, targets.as_ref(), &self.features, batch, self.config.mode, weights)?;
        Ok(obj.breakdown)
    }

    fn targets_for(&self, batch: &Batch<f32>, weights: &LossWeights) -> Result<Option<TeacherTargets<f32>>> {
        if weights.lambda_rp > 0.0 && matches!(batch, Batch::Triplets { .. }) && self.config.mode != Mode::LongStep {
            let teacher = self
                .teacher
                .as_ref()
                .ok_or_else(|| Error::Config("lambda_rp > 0 needs a teacher".into()))?;
            return Ok(Some(teacher_targets(teacher, batch)?));
        }
        Ok(None)
    }

    /// One gradient update.
    pub fn train_step(&mut self, batch: &Batch<f32>, weights: &LossWeights, lr: f64) -> Result<LossBreakdown> {
        let targets = self.targets_for(batch, weights)?;
        let g = Graph::new();
        let obj = build_objective(&g, &self.model, targets.as_ref(), &self.features, batch, self.config.mode, weights)?;
        let grads = g.backward(obj.total)?;
        self.adam.step(self.model.params_mut(), &grads, lr)?;
        if !self.model.params().all_finite() {
            return Err(Error::NonFinite(format!("parameters after step {}", self.step + 1)));
        }
        self.step += 1;
        self.cycle_reconstructions += obj.cycle_reconstructions;
        Ok(obj.breakdown)
    }

    /// Cropped batches of one epoch in their seeded order.
    pub fn epoch_batches(&self, epoch: usize, data: &TrainData) -> Result<Vec<Batch<f32>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, STREAM_EPOCH + epoch as u64));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let size = self.config.crop_size;
        let mut batches = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            batches.push(match data {
                TrainData::Triplets(all) => {
                    let mut crops = Vec::with_capacity(chunk.len());
                    let mut t = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        crops.push(all[i].random_crop(size, &mut rng)?);
                        t.push(sample_time(&mut rng) as f32);
                    }
                    let col = |f: fn(&Triplet) -> &Frame| Frame::batch::<f32>(&crops.iter().map(f).collect::<Vec<_>>());
                    Batch::Triplets {
                        i0: col(|c| &c.i0)?,
                        i1: col(|c| &c.i1)?,
                        i2: col(|c| &c.i2)?,
                        t,
                    }
                }
                TrainData::Supervised(all) => {
                    let mut parts = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        let s = &all[i];
                        let crop = Triplet {
                            i0: s.a.clone(),
                            i1: s.target.clone(),
                            i2: s.b.clone(),
                        }
                        .random_crop(size, &mut rng)?;
                        parts.push((crop, s.t as f32));
                    }
                    let col = |f: fn(&Triplet) -> &Frame| Frame::batch::<f32>(&parts.iter().map(|(c, _)| f(c)).collect::<Vec<_>>());
                    Batch::Supervised {
                        a: col(|c| &c.i0)?,
                        target: col(|c| &c.i1)?,
                        b: col(|c| &c.i2)?,
                        t: parts.iter().map(|p| p.1).collect(),
                    }
                }
            });
        }
        Ok(batches)
    }

    fn check_data(&self, data: &TrainData) -> Result<()> {
        let (h, w) = data.dims().ok_or_else(|| Error::Data("empty training set".into()))?;
        if self.config.crop_size > h.min(w) {
            return Err(Error::Config(format!("crop_size {} exceeds training frames {h}x{w}", self.config.crop_size)));
        }
        match (self.config.mode.needs_ground_truth(), data) {
            (true, TrainData::Triplets(_)) => Err(Error::Config("supervised mode needs ground-truth samples".into())),
            (false, TrainData::Supervised(_)) => Err(Error::Config(format!("mode {} trains on triplets", self.config.mode))),
            _ => Ok(()),
        }
    }

    /// Runs one epoch (1-based) and records it.
    pub fn run_epoch(&mut self, epoch: usize, data: &TrainData, val: Option<&[EvalClip]>) -> Result<EpochRecord> {
        self.check_data(data)?;
        let lr = lr_schedule(epoch, &self.config);
        let weights = self.config.effective_weights();
        let batches = self.epoch_batches(epoch, data)?;
        let mut sum = LossBreakdown::default();
        for b in &batches {
            let l = self.train_step(b, &weights, lr)?;
            sum.rc += l.rc;
            sum.rp += l.rp;
            sum.p += l.p;
            sum.w += l.w;
            sum.s += l.s;
            sum.long_step += l.long_step;
            sum.total += l.total;
        }
        let k = batches.len() as f64;
        let loss = LossBreakdown {
            rc: sum.rc / k,
            rp: sum.rp / k,
            p: sum.p / k,
            w: sum.w / k,
            s: sum.s / k,
            long_step: sum.long_step / k,
            total: sum.total / k,
        };
        self.epoch = epoch;
        let due = epoch == self.config.epochs || (self.config.val_every > 0 && epoch % self.config.val_every == 0);
        let val_psnr = match val {
            Some(clips) if due && !clips.is_empty() => Some(self.validation_psnr(clips)?),
            _ => None,
        };
        let rec = EpochRecord {
            step: self.step,
            epoch,
            lr,
            loss,
            val_psnr,
        };
        log::info!(
            "epoch {epoch} step {} lr {lr:.1e} total {:.5} rc {:.5} rp {:.5} w {:.5} s {:.5}{}",
            self.step,
            loss.total,
            loss.rc,
            loss.rp,
            loss.w,
            loss.s,
            val_psnr.map_or(String::new(), |p| format!(" val {p:.3} dB"))
        );
        self.history.push(rec.clone());
        Ok(rec)
    }

    pub fn validation_psnr(&self, clips: &[EvalClip]) -> Result<f64> {
        let n = clips[0].n;
        let pred = ModelPredictor {
            name: "student".into(),
            model: &self.model,
        };
        Ok(evaluate(&pred, clips, n)?.means.psnr)
    }

    /// Trains the remaining epochs, logging and checkpointing to `out`.
    pub fn run(&mut self, data: &TrainData, val: Option<&[EvalClip]>, out: Option<&RunOutput>) -> Result<()> {
        if let Some(o) = out {
            o.truncate_log(self.epoch)?;
        }
        for epoch in self.epoch + 1..=self.config.epochs {
            let rec = self.run_epoch(epoch, data, val)?;
            if let Some(o) = out {
                o.append(&rec)?;
                if epoch % self.config.checkpoint_every == 0 || epoch == self.config.epochs {
                    let ck = self.checkpoint();
                    ck.save(&o.epoch_checkpoint(epoch))?;
                    ck.save(&o.latest_checkpoint())?;
                }
            }
        }
        Ok(())
    }
}
