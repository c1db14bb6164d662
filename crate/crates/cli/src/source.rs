use std::path::{Path, PathBuf};

use vfi_core::data::{self, Clip, EvalClip, SyntheticSpec, Triplet};

use crate::failure::{input, Outcome};
use crate::manifest::digest;

/// Environment variable naming the directory relative dataset paths are
/// resolved against when they do not exist relative to the working
/// directory.
pub const DATA_ROOT_VAR: &str = "VFI_DATA_ROOT";

/// Where frames come from: a directory of clip directories, a single clip
/// directory, a manifest file, or a seeded synthetic generator.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Path(PathBuf),
    Synthetic { spec: SyntheticSpec, count: usize, seed: u64, label: String },
}

impl Source {
    /// `synthetic:COUNT[:SEED]`, `synthetic-shifted:COUNT[:SEED]` or a path.
    pub fn parse(text: &str) -> Outcome<Source> {
        for (prefix, spec) in [("synthetic-shifted:", SyntheticSpec::shifted()), ("synthetic:", SyntheticSpec::default())] {
            if let Some(rest) = text.strip_prefix(prefix) {
                let mut parts = rest.split(':');
                let count = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .filter(|&c: &usize| c > 0)
                    .ok_or_else(|| input(format!("{text}: expected a positive clip count")))?;
                let seed = match parts.next() {
                    Some(s) => s.parse().map_err(|_| input(format!("{text}: bad seed {s:?}")))?,
                    None => 0,
                };
                if parts.next().is_some() {
                    return Err(input(format!("{text}: too many fields")));
                }
                return Ok(Source::Synthetic { spec, count, seed, label: text.to_string() });
            }
        }
        Ok(Source::Path(resolve(Path::new(text))?))
    }

    pub fn describe(&self) -> String {
        match self {
            Source::Path(p) => p.display().to_string(),
            Source::Synthetic { label, .. } => label.clone(),
        }
    }

    /// Sha-256 over the source description and, for paths, every frame.
    pub fn digest(&self) -> Outcome<String> {
        match self {
            Source::Synthetic { label, .. } => digest(label, &[]),
            Source::Path(p) => {
                let mut files = Vec::new();
                for dir in data::dataset_dirs(p)? {
                    files.extend(data::frame_files(&dir, "png")?);
                }
                digest("frames", &files)
            }
        }
    }

    /// Clips sampled with `frames` frames, `time_step` apart (synthetic
    /// sources only; path sources ignore both).
    fn clips(&self, frames: usize, time_step: f64, fps: f64) -> Outcome<Vec<Clip>> {
        match self {
            Source::Path(p) => Ok(data::load_dataset(p, fps)?),
            Source::Synthetic { spec, count, seed, .. } => {
                let spec = SyntheticSpec { frames, time_step, ..*spec };
                Ok(data::synthetic_motion_dataset(*seed, *count, &spec)?)
            }
        }
    }

    pub fn triplets(&self, stride: usize, fps: f64) -> Outcome<Vec<Triplet>> {
        let mut out = Vec::new();
        for clip in self.clips(3, 1.0, fps)? {
            out.extend(data::make_triplets(&clip, stride)?);
        }
        if out.is_empty() {
            return Err(input(format!("{}: no frame triplets", self.describe())));
        }
        Ok(out)
    }

    /// Windows of `n + 2` frames; synthetic windows span one unit of motion.
    pub fn eval_clips(&self, n: usize, fps: f64) -> Outcome<Vec<EvalClip>> {
        let out: Vec<EvalClip> = self
            .clips(n + 2, 1.0 / (n + 1) as f64, fps)?
            .iter()
            .flat_map(|c| data::make_eval_clips(c, n))
            .collect();
        if out.is_empty() {
            return Err(input(format!("{}: no windows of {} frames", self.describe(), n + 2)));
        }
        Ok(out)
    }
}

/// Resolves a dataset path against the working directory, then against
/// the data root.
pub fn resolve(path: &Path) -> Outcome<PathBuf> {
    if path.exists() {
        return Ok(path.to_path_buf());
    }
    if path.is_relative() {
        if let Some(root) = std::env::var_os(DATA_ROOT_VAR) {
            let candidate = Path::new(&root).join(path);
            if candidate.exists() {
                return Ok(candidate);
            }
        }
    }
    Err(input(format!("dataset {} does not exist", path.display())))
}
