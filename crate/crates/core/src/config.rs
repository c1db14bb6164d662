//! Training configuration and its flat `key = value` representation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Cycle consistency alone (`lambda_rp` forced to 0).
    CcOnly,
    /// Cycle consistency regularised towards a frozen teacher.
    CcPlusPs,
    /// Teacher imitation alone (`lambda_rc` and `lambda_p` forced to 0).
    PsOnly,
    /// L1 to ground-truth intermediate frames.
    Supervised,
    /// Reconstruct the middle frame of a triplet from its outer frames.
    LongStep,
    /// Cycle consistency plus the long-step term.
    CcPlusLongStep,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::CcOnly,
        Mode::CcPlusPs,
        Mode::PsOnly,
        Mode::Supervised,
        Mode::LongStep,
        Mode::CcPlusLongStep,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::CcOnly => "cc_only",
            Mode::CcPlusPs => "cc_plus_ps",
            Mode::PsOnly => "ps_only",
            Mode::Supervised => "supervised",
            Mode::LongStep => "long_step",
            Mode::CcPlusLongStep => "cc_plus_long_step",
        }
    }

    pub fn needs_teacher(&self) -> bool {
        matches!(self, Mode::CcPlusPs | Mode::PsOnly)
    }

    pub fn needs_ground_truth(&self) -> bool {
        *self == Mode::Supervised
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Root of every random stream: initialisation, features, shuffling,
    /// crops and time sampling.
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub mode: Mode,
    pub crop_size: usize,
    pub triplet_stride: usize,
    pub model: ModelConfig,
    /// Validation every this many epochs (0 = only after the last one).
    pub val_every: usize,
    /// Checkpoint every this many epochs (the last epoch always is).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    /// Desk-scale schedule: 60 epochs with decays after 30 and 54, a small
    /// model on 32-pixel crops and a larger step size to compensate.
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 8,
            lr_initial: 1e-3,
            lr_decay_epochs: vec![30, 54],
            lr_decay_factor: 10.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            loss_weights: LossWeights::default(),
            mode: Mode::CcOnly,
            crop_size: 32,
            triplet_stride: 1,
            model: ModelConfig::default(),
            val_every: 0,
            checkpoint_every: 10,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

impl TrainConfig {
    /// Full-scale schedule: batch 32, learning rate 1e-4, 500 epochs with
    /// decays after 250 and 450, a wider model on larger crops.
    pub fn full_scale() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 32,
            lr_initial: 1e-4,
            lr_decay_epochs: vec![250, 450],
            crop_size: 256,
            model: ModelConfig {
                base_channels: 32,
                depth: 5,
                input_downscale: 1,
            },
            ..TrainConfig::default()
        }
    }

    pub const KEYS: [&'static str; 23] = [
        "epochs",
        "batch_size",
        "lr_initial",
        "lr_decay_epochs",
        "lr_decay_factor",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "weight_decay",
        "seed",
        "mode",
        "lambda_rc",
        "lambda_rp",
        "lambda_p",
        "lambda_w",
        "lambda_s",
        "crop_size",
        "triplet_stride",
        "base_channels",
        "depth",
        "input_downscale",
        "val_every",
        "checkpoint_every",
    ];

    /// Sets one field from its textual value. Lists are comma separated,
    /// optionally bracketed.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let w = &mut self.loss_weights;
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr_initial" => self.lr_initial = parse(key, value)?,
            "lr_decay_epochs" => {
                let inner = value.trim().trim_start_matches('[').trim_end_matches(']');
                self.lr_decay_epochs = inner
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?;
            }
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = value.trim().parse().map_err(|e: Error| Error::Config(format!("mode: {e}")))?,
            "lambda_rc" => w.lambda_rc = parse(key, value)?,
            "lambda_rp" => w.lambda_rp = parse(key, value)?,
            "lambda_p" => w.lambda_p = parse(key, value)?,
            "lambda_w" => w.lambda_w = parse(key, value)?,
            "lambda_s" => w.lambda_s = parse(key, value)?,
            "crop_size" => self.crop_size = parse(key, value)?,
            "triplet_stride" => self.triplet_stride = parse(key, value)?,
            "base_channels" => self.model.base_channels = parse(key, value)?,
            "depth" => self.model.depth = parse(key, value)?,
            "input_downscale" => self.model.input_downscale = parse(key, value)?,
            "val_every" => self.val_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        if self.epochs == 0 {
            return fail("epochs", "must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive".into());
        }
        if !(self.lr_initial.is_finite() && self.lr_initial > 0.0) {
            return fail("lr_initial", format!("must be positive, got {}", self.lr_initial));
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor >= 1.0) {
            return fail("lr_decay_factor", format!("must be >= 1, got {}", self.lr_decay_factor));
        }
        let d = &self.lr_decay_epochs;
        if d.windows(2).any(|p| p[0] >= p[1]) || d.last().is_some_and(|&e| e >= self.epochs) {
            return fail("lr_decay_epochs", format!("{d:?} must be strictly increasing and below epochs ({})", self.epochs));
        }
        for (key, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(key, format!("must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps", "must be positive".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail("weight_decay", "must be non-negative".into());
        }
        if self.crop_size == 0 {
            return fail("crop_size", "must be positive".into());
        }
        if self.triplet_stride == 0 {
            return fail("triplet_stride", "must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every", "must be positive".into());
        }
        self.loss_weights.validate()?;
        self.model.validate()?;
        if self.crop_size < self.model.size_factor() {
            return fail(
                "crop_size",
                format!("{} is below the model minimum {}", self.crop_size, self.model.size_factor()),
            );
        }
        Ok(())
    }

    /// Weights after applying the mode's forced zeros.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.loss_weights;
        match self.mode {
            Mode::CcPlusPs => {}
            Mode::PsOnly => {
                w.lambda_rc = 0.0;
                w.lambda_p = 0.0;
            }
            Mode::LongStep => {
                w.lambda_rp = 0.0;
                w.lambda_p = 0.0;
            }
            Mode::CcOnly | Mode::Supervised | Mode::CcPlusLongStep => w.lambda_rp = 0.0,
        }
        w
    }

    /// Applies every entry of a flat TOML document.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        for (key, value) in flat_toml(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}

/// Parses a flat TOML document into `(key, textual value)` pairs in file
/// order. Arrays become comma-separated lists; nested tables are rejected.
pub fn flat_toml(text: &str) -> Result<Vec<(String, String)>> {
    let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("config file: {e}")))?;
    let scalar = |key: &str, v: &toml::Value| -> Result<String> {
        match v {
            toml::Value::String(s) => Ok(s.clone()),
            toml::Value::Integer(i) => Ok(i.to_string()),
            toml::Value::Float(f) => Ok(f.to_string()),
            toml::Value::Boolean(b) => Ok(b.to_string()),
            _ => Err(Error::Config(format!("{key}: expected a scalar value"))),
        }
    };
    table
        .iter()
        .map(|(k, v)| {
            let text = match v {
                toml::Value::Array(items) => items.iter().map(|i| scalar(k, i)).collect::<Result<Vec<_>>>()?.join(","),
                other => scalar(k, other)?,
            };
            Ok((k.clone(), text))
        })
        .collect()
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
