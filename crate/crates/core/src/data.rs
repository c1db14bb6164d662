//! Clips, triplets and evaluation windows; frame files on disk; a synthetic
//! moving-texture generator with exact ground truth at any time.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Equally spaced frames from one source.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Vec<Frame>,
    pub fps: f64,
    pub source_id: String,
}

impl Clip {
    pub fn new(frames: Vec<Frame>, fps: f64, source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        if frames.len() < 2 {
            return Err(Error::Data(format!("clip {source_id} has {} frame(s), need 2", frames.len())));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Data(format!("clip {source_id} has invalid fps {fps}")));
        }
        let dims = frames[0].dims();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            return Err(Error::Data(format!(
                "clip {source_id}: frame {i} is {:?}, frame 0 is {dims:?}",
                f.dims()
            )));
        }
        Ok(Clip {
            frames,
            fps,
            source_id,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }
}

/// Three consecutive frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub i0: Frame,
    pub i1: Frame,
    pub i2: Frame,
}

impl Triplet {
    /// Same window of all three frames, optionally mirrored.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize, flip: bool) -> Result<Triplet> {
        Ok(Triplet {
            i0: self.i0.crop(y0, x0, h, w, flip)?,
            i1: self.i1.crop(y0, x0, h, w, flip)?,
            i2: self.i2.crop(y0, x0, h, w, flip)?,
        })
    }

    /// Random `size x size` window with a coin-flip horizontal mirror.
    pub fn random_crop(&self, size: usize, rng: &mut impl Rng) -> Result<Triplet> {
        let (h, w) = self.i0.dims();
        if size > h || size > w {
            return Err(Error::Config(format!("crop size {size} exceeds frame {h}x{w}")));
        }
        let y0 = rng.random_range(0..=h - size);
        let x0 = rng.random_range(0..=w - size);
        let flip = rng.random_bool(0.5);
        self.crop(y0, x0, size, size, flip)
    }
}

/// Two input frames and the `n` ground-truth frames between them.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalClip {
    pub input_first: Frame,
    pub input_last: Frame,
    pub ground_truth: Vec<Frame>,
    pub n: usize,
    pub source_id: String,
}

/// Keeps every `factor`-th frame starting from the first.
pub fn temporal_subsample(clip: &Clip, factor: usize) -> Result<Clip> {
    if factor < 1 {
        return Err(Error::Config("subsampling factor must be at least 1".into()));
    }
    let frames = clip.frames.iter().step_by(factor).cloned().collect();
    Clip::new(frames, clip.fps / factor as f64, clip.source_id.clone())
}

/// Consecutive triplets starting every `stride` frames.
pub fn make_triplets(clip: &Clip, stride: usize) -> Result<Vec<Triplet>> {
    if stride < 1 {
        return Err(Error::Config("triplet stride must be at least 1".into()));
    }
    let f = &clip.frames;
    Ok((0..f.len().saturating_sub(2))
        .step_by(stride)
        .map(|k| Triplet {
            i0: f[k].clone(),
            i1: f[k + 1].clone(),
            i2: f[k + 2].clone(),
        })
        .collect())
}

/// Disjoint windows of `n + 2` frames.
pub fn make_eval_clips(clip: &Clip, n: usize) -> Vec<EvalClip> {
    clip.frames
        .chunks_exact(n + 2)
        .enumerate()
        .map(|(i, w)| EvalClip {
            input_first: w[0].clone(),
            input_last: w[n + 1].clone(),
            ground_truth: w[1..=n].to_vec(),
            n,
            source_id: format!("{}#{i}", clip.source_id),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Translate,
    Rotate,
    Mixed,
}

impl std::str::FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(MotionKind::Translate),
            "rotate" => Ok(MotionKind::Rotate),
            "mixed" => Ok(MotionKind::Mixed),
            _ => Err(Error::Config(format!("unknown motion kind {s:?} (translate, rotate, mixed)"))),
        }
    }
}

/// Motion per unit of clip time (one frame at `time_step = 1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub kind: MotionKind,
    /// Translation speed range in pixels.
    pub speed: (f64, f64),
    /// Rotation speed magnitude range in radians.
    pub angular_speed: (f64, f64),
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec {
            kind: MotionKind::Translate,
            speed: (2.0, 6.0),
            angular_speed: (0.005, 0.03),
        }
    }
}

/// Statistics of the random blob textures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    /// Blobs per 32x32 pixel area.
    pub density: (f64, f64),
    /// Blob radius (Gaussian sigma) range in pixels.
    pub sigma: (f64, f64),
    /// Peak blob amplitude before the squashing nonlinearity.
    pub contrast: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec {
            density: (3.0, 6.0),
            sigma: (1.0, 2.5),
            contrast: 1.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Clip time between consecutive frames.
    pub time_step: f64,
    pub fps: f64,
    pub motion: MotionSpec,
    pub texture: TextureSpec,
}

impl SyntheticSpec {
    /// A second distribution with smoother textures and slower motion, used
    /// as the source domain of pre-trained models.
    pub fn shifted() -> Self {
        SyntheticSpec {
            motion: MotionSpec {
                speed: (0.5, 3.0),
                ..MotionSpec::default()
            },
            texture: TextureSpec {
                sigma: (2.0, 4.0),
                ..TextureSpec::default()
            },
            ..SyntheticSpec::default()
        }
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            height: 64,
            width: 64,
            frames: 3,
            time_step: 1.0,
            fps: 30.0,
            motion: MotionSpec::default(),
            texture: TextureSpec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Blob {
    x: f64,
    y: f64,
    inv_two_sigma2: f64,
    amp: [f64; 3],
}

/// A textured plane under constant-velocity motion; `render(tau)` gives the
/// exact image at any clip time.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub height: usize,
    pub width: usize,
    /// Translation per unit time, `(vx, vy)` pixels.
    pub velocity: (f64, f64),
    /// Rotation per unit time about the frame centre, radians.
    pub angular: f64,
    base: [f64; 3],
    slope: [[f64; 3]; 2],
    blobs: Vec<Blob>,
}

impl SyntheticScene {
    pub fn random(spec: &SyntheticSpec, duration: f64, rng: &mut impl Rng) -> Self {
        let m = &spec.motion;
        let draw = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let (mut velocity, mut angular) = ((0.0, 0.0), 0.0);
        if matches!(m.kind, MotionKind::Translate | MotionKind::Mixed) {
            let speed = draw(rng, m.speed);
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            velocity = (speed * dir.cos(), speed * dir.sin());
        }
        if matches!(m.kind, MotionKind::Rotate | MotionKind::Mixed) {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            angular = sign * draw(rng, m.angular_speed);
        }
        let (h, w) = (spec.height as f64, spec.width as f64);
        let tex = &spec.texture;
        // Texture must cover everything that can move into view.
        let reach = (velocity.0.hypot(velocity.1)) * duration + 0.5 * h.hypot(w) * (angular.abs() * duration).min(1.0) + 2.0 * tex.sigma.1;
        let (x0, x1, y0, y1) = (-reach, w + reach, -reach, h + reach);
        let count = (draw(rng, tex.density) * (x1 - x0) * (y1 - y0) / 1024.0).round() as usize;
        let blobs = (0..count)
            .map(|_| {
                let sigma = draw(rng, tex.sigma);
                Blob {
                    x: rng.random_range(x0..x1),
                    y: rng.random_range(y0..y1),
                    inv_two_sigma2: 1.0 / (2.0 * sigma * sigma),
                    amp: [0; 3].map(|_| rng.random_range(-tex.contrast..tex.contrast)),
                }
            })
            .collect();
        let base = [0; 3].map(|_| rng.random_range(-0.5..0.5));
        let slope = [[0; 3]; 2].map(|r| r.map(|_| rng.random_range(-0.5..0.5)));
        SyntheticScene {
            height: spec.height,
            width: spec.width,
            velocity,
            angular,
            base,
            slope,
            blobs,
        }
    }

    /// Texture colour at plane coordinates `(x, y)`.
    fn texture(&self, x: f64, y: f64) -> [f64; 3] {
        let (cx, cy) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
        let (u, v) = ((x - cx) / self.width as f64, (y - cy) / self.height as f64);
        let mut s = [0.0; 3];
        for c in 0..3 {
            s[c] = self.base[c] + self.slope[0][c] * u + self.slope[1][c] * v;
        }
        for b in &self.blobs {
            let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
            let e = d2 * b.inv_two_sigma2;
            if e < 18.0 {
                let k = (-e).exp();
                for c in 0..3 {
                    s[c] += b.amp[c] * k;
                }
            }
        }
        s.map(|v| 0.5 + 0.5 * v.tanh())
    }

    /// Image at clip time `tau`: content moved by `velocity * tau` and
    /// rotated by `angular * tau` about the frame centre.
    pub fn render(&self, tau: f64) -> Frame {
        let (cx, cy) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
        let (sin, cos) = (-self.angular * tau).sin_cos();
        let mut pixels = Vec::with_capacity(self.height * self.width * 3);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = x as f64 - cx - self.velocity.0 * tau;
                let py = y as f64 - cy - self.velocity.1 * tau;
                let rgb = self.texture(cos * px - sin * py + cx, sin * px + cos * py + cy);
                pixels.extend(rgb.map(|v| v as f32));
            }
        }
        Frame::new(self.height, self.width, pixels).expect("texture is squashed into [0, 1]")
    }

    /// `frames` samples spaced by `time_step`, starting at time 0.
    pub fn clip(&self, frames: usize, time_step: f64, fps: f64, source_id: impl Into<String>) -> Result<Clip> {
        Clip::new((0..frames).map(|k| self.render(k as f64 * time_step)).collect(), fps, source_id)
    }
}

/// Deterministic scenes for a seed.
pub fn synthetic_scenes(seed: u64, count: usize, spec: &SyntheticSpec) -> Result<Vec<SyntheticScene>> {
    if spec.frames < 2 || spec.height == 0 || spec.width == 0 || !(spec.time_step > 0.0) {
        return Err(Error::Config(format!(
            "synthetic clips need >= 2 frames, a non-empty raster and positive time step ({spec:?})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = (spec.frames - 1) as f64 * spec.time_step;
    Ok((0..count).map(|_| SyntheticScene::random(spec, duration, &mut rng)).collect())
}

/// Rendered clips of [`synthetic_scenes`].
pub fn synthetic_motion_dataset(seed: u64, count: usize, spec: &SyntheticSpec) -> Result<Vec<Clip>> {
    synthetic_scenes(seed, count, spec)?
        .iter()
        .enumerate()
        .map(|(i, s)| s.clip(spec.frames, spec.time_step, spec.fps, format!("synthetic-{seed}-{i:04}")))
        .collect()
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    paths.sort();
    Ok(paths)
}

/// Image files with the given extension in `dir`, sorted by name.
pub fn frame_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && has_extension(p, extension))
        .collect())
}

pub fn load_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Frame::new(h as usize, w as usize, pixels)
}

pub fn save_frame(frame: &Frame, path: &Path) -> Result<()> {
    let (h, w) = frame.dims();
    let raw = frame.pixels().iter().map(|v| (v * 255.0).round() as u8).collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("length matches dimensions");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads every `*.{extension}` file of `dir` in name order.
pub fn load_frames(dir: &Path, extension: &str, fps: f64) -> Result<Clip> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", dir.display())));
    }
    let files = frame_files(dir, extension)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no .{extension} frames in {}", dir.display())));
    }
    let frames = files.iter().map(|p| load_frame(p)).collect::<Result<Vec<_>>>()?;
    let id = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    if frames.len() < 2 {
        return Err(Error::Data(format!("{} holds a single frame", dir.display())));
    }
    Clip::new(frames, fps, id)
}

/// File name of frame `index` in a saved sequence.
pub fn frame_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Writes frames as `000000.png`, `000001.png`, ...; returns the paths.
pub fn save_frames(clip: &Clip, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    clip.frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = dir.join(frame_name(i));
            save_frame(f, &p).map(|_| p)
        })
        .collect()
}

/// Clip directories listed in a manifest, one per line; relative entries
/// resolve against the manifest's directory. Blank lines and `#` comments
/// are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

/// Clip directories of a dataset: a manifest file, a directory of frames
/// (one clip) or a directory of clip directories.
pub fn dataset_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return read_manifest(path);
    }
    if !path.is_dir() {
        return Err(Error::Data(format!("dataset {} does not exist", path.display())));
    }
    if !frame_files(path, "png")?.is_empty() {
        return Ok(vec![path.to_path_buf()]);
    }
    let dirs: Vec<_> = sorted_entries(path)?.into_iter().filter(|p| p.is_dir()).collect();
    if dirs.is_empty() {
        return Err(Error::Data(format!("no clips under {}", path.display())));
    }
    Ok(dirs)
}

pub fn load_dataset(path: &Path, fps: f64) -> Result<Vec<Clip>> {
    dataset_dirs(path)?.iter().map(|d| load_frames(d, "png", fps)).collect()
}
