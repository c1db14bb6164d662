use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use vfi_core::checkpoint::Checkpoint;
use vfi_core::config::{parse_override, Mode, TrainConfig};
use vfi_core::data;
use vfi_core::metrics::{aggregate_seeds, comparison_table, evaluate, EvalReport, ModelPredictor, Predictor, TrivialCopy};
use vfi_core::train::{supervised_samples, RunOutput, TrainData, Trainer};
use vfi_core::data::EvalClip;

use crate::failure::{input, io, Outcome};
use crate::manifest::{digest, RunManifest};
use crate::source::Source;
use crate::{Ablation, Common};

pub const DEFAULT_GRID: [f64; 7] = [0.0, 0.1, 0.4, 0.8, 1.6, 6.4, 64.0];

/// Defaults, then the config file, then `--seed`, then `--set` overrides.
fn load_config(c: &Common, base: TrainConfig) -> Outcome<TrainConfig> {
    let mut cfg = base;
    if let Some(p) = &c.config {
        let text = fs::read_to_string(p).map_err(|e| io(p, e))?;
        cfg.apply_toml(&text)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    for o in &c.overrides {
        let (k, v) = parse_override(o)?;
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Outcome<Checkpoint> {
    if !path.is_file() {
        return Err(vfi_core::Error::Checkpoint {
            path: path.to_path_buf(),
            msg: "no such file".into(),
        }
        .into());
    }
    Ok(Checkpoint::load(path)?)
}

fn inputs_digest(sources: &[&Source], files: &[PathBuf]) -> Outcome<String> {
    let mut parts = Vec::new();
    for s in sources {
        parts.push(s.digest()?);
    }
    digest(&parts.join("\n"), files)
}

/// True if `inner` is `outer` or lies below it.
fn within(inner: &Path, outer: &Path) -> bool {
    match (inner.canonicalize(), outer.canonicalize()) {
        (Ok(i), Ok(o)) => i.starts_with(o),
        _ => false,
    }
}

fn training_data(src: &Source, cfg: &TrainConfig, intermediate: usize, fps: f64) -> Outcome<TrainData> {
    if cfg.mode.needs_ground_truth() {
        if intermediate == 0 {
            return Err(input("supervised training needs at least one ground-truth frame per window"));
        }
        Ok(TrainData::Supervised(supervised_samples(&src.eval_clips(intermediate, fps)?)))
    } else {
        Ok(TrainData::Triplets(src.triplets(cfg.triplet_stride, fps)?))
    }
}

fn run_outputs(run: &RunOutput) -> Vec<String> {
    [run.log_path(), run.latest_checkpoint(), run.dir.join("checkpoints")]
        .iter()
        .map(|p| p.display().to_string())
        .collect()
}

/// Trains to the configured epoch count, writing the manifest first and
/// again with the wall-clock time when done.
fn run_training(mut trainer: Trainer, data: &TrainData, val: Option<&[EvalClip]>, out: &Path, mut manifest: RunManifest) -> Outcome<Trainer> {
    let run = RunOutput::new(out)?;
    manifest.outputs = run_outputs(&run);
    manifest.write(out)?;
    trainer.run(data, val, Some(&run))?;
    manifest.finish(out)?;
    if let Some(last) = trainer.history().last() {
        println!("{}", serde_json::to_string(last).map_err(vfi_core::Error::from)?);
    }
    Ok(trainer)
}

pub fn train(c: &Common, data: &str, val: Option<&str>, out: &Path, teacher: Option<&Path>, resume: bool, intermediate: usize) -> Outcome<()> {
    let cfg = load_config(c, TrainConfig::default())?;
    let src = Source::parse(data)?;
    let val_src = val.map(Source::parse).transpose()?;
    let teacher_model = teacher.map(|p| -> Outcome<_> { Ok(load_checkpoint(p)?.model()?) }).transpose()?;
    let train_data = training_data(&src, &cfg, intermediate, c.fps)?;
    let val_clips = val_src.as_ref().map(|s| s.eval_clips(1, c.fps)).transpose()?;

    let latest = RunOutput { dir: out.to_path_buf() }.latest_checkpoint();
    let trainer = if resume && latest.is_file() {
        Trainer::resume(&load_checkpoint(&latest)?, cfg.clone(), teacher_model)?
    } else {
        Trainer::new(cfg.clone(), teacher_model)?
    };
    let mut sources = vec![&src];
    sources.extend(val_src.as_ref());
    let mut inputs: Vec<String> = sources.iter().map(|s| s.describe()).collect();
    inputs.extend(teacher.map(|p| p.display().to_string()));
    let files: Vec<PathBuf> = teacher.into_iter().map(Path::to_path_buf).collect();
    let manifest = RunManifest::new("train", cfg.to_json(), cfg.seed, inputs_digest(&sources, &files)?, inputs);
    run_training(trainer, &train_data, val_clips.as_deref(), out, manifest)?;
    Ok(())
}

pub fn finetune(c: &Common, checkpoint: &Path, data: &str, val: Option<&str>, out: &Path) -> Outcome<()> {
    let base = TrainConfig {
        mode: Mode::CcPlusPs,
        ..TrainConfig::default()
    };
    let cfg = load_config(c, base)?;
    if within(checkpoint, out) {
        return Err(input(format!(
            "{} is inside the output directory {}; fine-tuning would overwrite the teacher",
            checkpoint.display(),
            out.display()
        )));
    }
    let pre = load_checkpoint(checkpoint)?;
    let src = Source::parse(data)?;
    let val_src = val.map(Source::parse).transpose()?;
    let train_data = training_data(&src, &cfg, 1, c.fps)?;
    let val_clips = val_src.as_ref().map(|s| s.eval_clips(1, c.fps)).transpose()?;
    let trainer = Trainer::finetune(&pre, cfg)?;

    let mut sources = vec![&src];
    sources.extend(val_src.as_ref());
    let mut inputs: Vec<String> = sources.iter().map(|s| s.describe()).collect();
    inputs.push(checkpoint.display().to_string());
    let cfg = trainer.config().clone();
    let manifest = RunManifest::new(
        "finetune",
        cfg.to_json(),
        cfg.seed,
        inputs_digest(&sources, &[checkpoint.to_path_buf()])?,
        inputs,
    );
    run_training(trainer, &train_data, val_clips.as_deref(), out, manifest)?;
    Ok(())
}

/// Output index of input frame `k`; its `j`-th intermediate follows at
/// `k * (n + 1) + j`.
pub fn output_index(k: usize, n: usize) -> usize {
    k * (n + 1)
}

pub fn interpolate(c: &Common, checkpoint: &Path, input_dir: &Path, output: &Path, n: usize) -> Outcome<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.model()?;
    let files = data::frame_files(input_dir, "png")?;
    let clip = data::load_frames(input_dir, "png", c.fps)?;
    if within(output, input_dir) {
        return Err(input("the output directory must not lie inside the input directory"));
    }
    let mut manifest = RunManifest::new(
        "interpolate",
        json!({ "model": ckpt.model_config, "n": n }),
        c.seed.unwrap_or(0),
        digest("frames", &[vec![checkpoint.to_path_buf()], files].concat())?,
        vec![checkpoint.display().to_string(), input_dir.display().to_string()],
    );
    manifest.outputs = vec![output.display().to_string()];
    manifest.notes = json!({ "input_fps": clip.fps, "output_fps": clip.fps * (n + 1) as f64 });
    manifest.write(output)?;
    let save = |frame: &vfi_core::Frame, index: usize| data::save_frame(frame, &output.join(data::frame_name(index)));
    for (k, pair) in clip.frames.windows(2).enumerate() {
        save(&pair[0], output_index(k, n))?;
        for (j, f) in model.multi_frame_interpolate(&pair[0], &pair[1], n)?.iter().enumerate() {
            save(f, output_index(k, n) + j + 1)?;
        }
    }
    let last = clip.frames.len() - 1;
    save(&clip.frames[last], output_index(last, n))?;
    manifest.finish(output)
}

fn write_report(report: &EvalReport, out: &Path) -> Outcome<()> {
    let json_path = out.join(format!("{}.json", report.method));
    fs::write(&json_path, report.to_json()?).map_err(|e| io(&json_path, e))?;
    let csv_path = out.join(format!("{}_per_time.csv", report.method));
    fs::write(&csv_path, report.per_time_csv()).map_err(|e| io(&csv_path, e))
}

pub fn eval(c: &Common, checkpoints: &[PathBuf], name: &str, data: &str, n: usize, out: &Path) -> Outcome<()> {
    if n == 0 {
        return Err(input("evaluation needs n >= 1 intermediate frames"));
    }
    if name == TrivialCopy.name() {
        return Err(input(format!("{name:?} is reserved for the trivial-copy row")));
    }
    let src = Source::parse(data)?;
    let clips = src.eval_clips(n, c.fps)?;
    let mut manifest = RunManifest::new(
        "eval",
        json!({ "n": n, "name": name }),
        c.seed.unwrap_or(0),
        inputs_digest(&[&src], checkpoints)?,
        std::iter::once(src.describe())
            .chain(checkpoints.iter().map(|p| p.display().to_string()))
            .collect(),
    );
    manifest.outputs = vec![out.display().to_string()];
    manifest.write(out)?;

    let mut reports = vec![evaluate(&TrivialCopy, &clips, n)?];
    if !checkpoints.is_empty() {
        let mut per_seed = Vec::with_capacity(checkpoints.len());
        for p in checkpoints {
            let model = load_checkpoint(p)?.model()?;
            per_seed.push(evaluate(
                &ModelPredictor {
                    name: name.to_string(),
                    model: &model,
                },
                &clips,
                n,
            )?);
        }
        reports.push(aggregate_seeds(&per_seed)?);
    }
    for r in &reports {
        write_report(r, out)?;
    }
    let table = comparison_table(&reports);
    let path = out.join("comparison.txt");
    fs::write(&path, &table).map_err(|e| io(&path, e))?;
    print!("{table}");
    manifest.finish(out)
}

/// Trains one ablation arm in its own directory and scores it on `val`.
fn ablation_arm(name: &str, trainer: Trainer, data: &TrainData, val: &[EvalClip], dir: &Path, digest: &str, inputs: &[String]) -> Outcome<EvalReport> {
    let cfg = trainer.config().clone();
    let manifest = RunManifest::new(&format!("ablate {name}"), cfg.to_json(), cfg.seed, digest.to_string(), inputs.to_vec());
    let trainer = run_training(trainer, data, None, dir, manifest)?;
    let report = evaluate(
        &ModelPredictor {
            name: name.to_string(),
            model: trainer.model(),
        },
        val,
        1,
    )?;
    write_report(&report, dir)?;
    Ok(report)
}

pub fn ablate(c: &Common, kind: Ablation, checkpoint: Option<&Path>, data: &str, val: &str, out: &Path, grid: &[f64]) -> Outcome<()> {
    let base = load_config(c, TrainConfig::default())?;
    let src = Source::parse(data)?;
    let val_src = Source::parse(val)?;
    let triplets = TrainData::Triplets(src.triplets(base.triplet_stride, c.fps)?);
    let val_clips = val_src.eval_clips(1, c.fps)?;
    let pre = checkpoint.map(load_checkpoint).transpose()?;
    let files: Vec<PathBuf> = checkpoint.into_iter().map(Path::to_path_buf).collect();
    let digest = inputs_digest(&[&src, &val_src], &files)?;
    let mut inputs = vec![src.describe(), val_src.describe()];
    inputs.extend(checkpoint.map(|p| p.display().to_string()));
    let mut manifest = RunManifest::new(
        match kind {
            Ablation::LambdaRpSweep => "ablate lambda-rp-sweep",
            Ablation::LongStep => "ablate long-step",
        },
        base.to_json(),
        base.seed,
        digest.clone(),
        inputs.clone(),
    );
    manifest.outputs = vec![out.display().to_string()];
    manifest.write(out)?;

    match kind {
        Ablation::LambdaRpSweep => {
            let pre = pre.ok_or_else(|| input("the lambda_rp sweep needs --checkpoint (the pre-trained teacher)"))?;
            if grid.is_empty() || grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(input("the lambda_rp grid must hold finite, non-negative values"));
            }
            let mut csv = String::from("lambda_rp,psnr,ssim,ie\n");
            for &lambda in grid {
                let mut cfg = base.clone();
                cfg.mode = Mode::CcPlusPs;
                cfg.loss_weights.lambda_rp = lambda;
                let name = format!("lambda_rp_{lambda}");
                let r = ablation_arm(&name, Trainer::finetune(&pre, cfg)?, &triplets, &val_clips, &out.join(&name), &digest, &inputs)?;
                csv += &format!("{lambda},{:.6},{:.6},{:.6}\n", r.means.psnr, r.means.ssim, r.means.ie);
            }
            let path = out.join("lambda_rp_sweep.csv");
            fs::write(&path, &csv).map_err(|e| io(&path, e))?;
            print!("{csv}");
        }
        Ablation::LongStep => {
            let mut reports = Vec::new();
            let mut csv = String::from("mode,psnr,ssim,ie\n");
            for mode in [Mode::CcOnly, Mode::LongStep, Mode::CcPlusLongStep] {
                let mut cfg = base.clone();
                cfg.mode = mode;
                let trainer = match &pre {
                    Some(p) => Trainer::finetune(p, cfg)?,
                    None => Trainer::new(cfg, None)?,
                };
                let name = mode.as_str();
                let r = ablation_arm(name, trainer, &triplets, &val_clips, &out.join(name), &digest, &inputs)?;
                csv += &format!("{name},{:.6},{:.6},{:.6}\n", r.means.psnr, r.means.ssim, r.means.ie);
                reports.push(r);
            }
            let table = comparison_table(&reports);
            for (file, text) in [("long_step.csv", &csv), ("long_step.txt", &table)] {
                let path = out.join(file);
                fs::write(&path, text).map_err(|e| io(&path, e))?;
            }
            print!("{table}");
        }
    }
    manifest.finish(out)
}

pub fn subsample(c: &Common, input_dir: &Path, output: &Path, factor: usize) -> Outcome<()> {
    if factor == 0 {
        return Err(input("the subsampling factor must be at least 1"));
    }
    let single = !data::frame_files(input_dir, "png")?.is_empty();
    let dirs = if single { vec![input_dir.to_path_buf()] } else { data::dataset_dirs(input_dir)? };
    if within(output, input_dir) {
        return Err(input("the output directory must not lie inside the input directory"));
    }
    let mut files = Vec::new();
    for d in &dirs {
        files.extend(data::frame_files(d, "png")?);
    }
    let mut manifest = RunManifest::new(
        "subsample",
        json!({ "factor": factor }),
        c.seed.unwrap_or(0),
        digest("frames", &files)?,
        vec![input_dir.display().to_string()],
    );
    let mut outputs = Vec::new();
    let mut rates = Vec::new();
    for d in &dirs {
        let clip = data::load_frames(d, "png", c.fps)?;
        let sub = data::temporal_subsample(&clip, factor)?;
        let target = if single {
            output.to_path_buf()
        } else {
            output.join(d.file_name().ok_or_else(|| input(format!("{} has no name", d.display())))?)
        };
        data::save_frames(&sub, &target)?;
        rates.push(json!({ "clip": target.display().to_string(), "input_fps": clip.fps, "output_fps": sub.fps }));
        outputs.push(target.display().to_string());
    }
    manifest.outputs = outputs;
    manifest.notes = json!({ "clips": rates });
    manifest.finish(output)
}
