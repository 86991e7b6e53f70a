use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use super::config::RunConfig;
use super::gradsuite::{gradient_suite, GradCase, GRAD_TOLERANCE};
use super::train::{load_model, run_training, TrainOutcome, TrainRun, CHECKPOINT_FILE};
use crate::data::{generate_dataset, load_split, prepare_sample, Manifest, Sample, SampleOptions};
use crate::diffusion::ModelConfig;
use crate::encoders::{FileProvider, SyntheticProvider, VisionProvider};
use crate::eval::{
    evaluate, summary_csv, sweep_variants, trajectory_svg, ConstantPosition, Cvh, MetricReport, ModelPredictor,
    Predictor, Sweep,
};

pub const LOCK_FILE: &str = ".twin-htp.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                anyhow::anyhow!(
                    "{} is in use by another run (remove {} if that run is gone)",
                    dir.display(),
                    path.display()
                )
            } else {
                anyhow::Error::new(e).context(format!("creating {}", path.display()))
            }
        })?;
        writeln!(f, "{}", std::process::id()).ok();
        Ok(DirLock { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn provider(cfg: &RunConfig) -> Result<Box<dyn VisionProvider>> {
    Ok(match &cfg.paths.vision_features {
        Some(p) => {
            let f = FileProvider::load(p)?;
            if f.x != cfg.model.x {
                bail!("{}: feature width {} but model.x = {}", p.display(), f.x, cfg.model.x);
            }
            Box::new(f)
        }
        None => Box::new(SyntheticProvider::new(cfg.model.x)?),
    })
}

/// Loads and prepares the first `limit` sequences of a split for `model`.
pub fn prepare_split(
    cfg: &RunConfig,
    model: &ModelConfig,
    dataset: &Path,
    split: &str,
    limit: Option<usize>,
) -> Result<(Manifest, Vec<Sample>)> {
    if !dataset.exists() {
        bail!("dataset not found at {} (run `synth` first)", dataset.display());
    }
    let (manifest, seqs) = load_split(dataset, split)?;
    if (manifest.n_past, manifest.n_future) != (model.n_past, model.n_future) {
        bail!(
            "{}: dataset has {}+{} frames, model expects {}+{}",
            dataset.display(),
            manifest.n_past,
            manifest.n_future,
            model.n_past,
            model.n_future
        );
    }
    let prov = provider(cfg)?;
    let opts = SampleOptions::from_config(model);
    let n = limit.unwrap_or(seqs.len()).min(seqs.len());
    let samples = seqs[..n]
        .iter()
        .map(|s| prepare_sample(s, prov.as_ref(), &opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, samples))
}

/// Writes the configured dataset under `<out>/data` (or `paths.dataset`).
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.data.validate()?;
    let _lock = DirLock::acquire(out)?;
    let dir = cfg.dataset_dir(out);
    let m = generate_dataset(&cfg.data, &dir)?;
    log::info!("wrote {} train + {} test sequences to {}", m.train.len(), m.test.len(), dir.display());
    Ok(m)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: bool) -> Result<TrainOutcome> {
    let _lock = DirLock::acquire(out)?;
    train_into(cfg, &cfg.model, &cfg.train, &out.join("train"), &cfg.dataset_dir(out), resume, None)
}

pub(crate) fn train_into(
    cfg: &RunConfig,
    model: &ModelConfig,
    train: &super::train::TrainConfig,
    dir: &Path,
    dataset: &Path,
    resume: bool,
    stop_after: Option<usize>,
) -> Result<TrainOutcome> {
    let (manifest, samples) = prepare_split(cfg, model, dataset, "train", train.limit)?;
    let hash = super::config::config_hash(model, &manifest.spec);
    run_training(
        &TrainRun {
            model_config: model,
            train,
            config_hash: &hash,
            dir,
            resume,
            stop_after,
        },
        &samples,
    )
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Scores `model` and both baselines on the test split; writes one CSV per
/// predictor, `summary.csv`, `report.json` and SVG plots into `dir`.
fn eval_into(
    cfg: &RunConfig,
    model_cfg: &ModelConfig,
    checkpoint: &Path,
    dataset: &Path,
    dir: &Path,
    limit: Option<usize>,
    plots: usize,
) -> Result<Vec<MetricReport>> {
    let (manifest, samples) = prepare_split(cfg, model_cfg, dataset, "test", limit)?;
    let hash = super::config::config_hash(model_cfg, &manifest.spec);
    if !checkpoint.exists() {
        bail!("checkpoint not found at {} (run `train` first)", checkpoint.display());
    }
    let model = load_model(checkpoint, model_cfg, &hash)?;
    let mmtwin = ModelPredictor {
        model: &model,
        tag: "mmtwin".into(),
        seed: cfg.eval.seed,
        batch_size: cfg.eval.batch_size,
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let predictors: [&dyn Predictor; 3] = [&mmtwin, &Cvh, &ConstantPosition];
    let mut reports = Vec::new();
    for p in predictors {
        let r = evaluate(p, &samples, &hash)?;
        write(&dir.join(format!("{}.csv", r.model_tag)), &r.to_csv())?;
        reports.push(r);
    }
    write(&dir.join("summary.csv"), &summary_csv(&reports))?;
    write(&dir.join("report.json"), &(serde_json::to_string_pretty(&reports)? + "\n"))?;
    if plots > 0 {
        let plot_dir = dir.join("plots");
        std::fs::create_dir_all(&plot_dir).with_context(|| format!("creating {}", plot_dir.display()))?;
        let refs: Vec<&Sample> = samples.iter().take(plots).collect();
        let preds = mmtwin.predict(&refs)?;
        for (s, pred) in refs.iter().zip(&preds) {
            write(&plot_dir.join(format!("{}.svg", s.id)), &trajectory_svg(&s.past_global, &s.future_global, pred))?;
        }
    }
    Ok(reports)
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<Vec<MetricReport>> {
    let _lock = DirLock::acquire(out)?;
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.join("train").join(CHECKPOINT_FILE));
    eval_into(cfg, &cfg.model, &ckpt, &cfg.dataset_dir(out), &out.join("eval"), cfg.eval.limit, cfg.eval.plots)
}

/// One trained-and-evaluated variant of a sweep.
#[derive(Clone, Debug)]
pub struct AblationResult {
    pub sweep: Sweep,
    pub variant: String,
    pub report: MetricReport,
}

/// Trains every variant of the configured sweeps for `ablate.epochs` and
/// evaluates it; one directory per variant under `<out>/ablate`, plus one
/// summary CSV per sweep.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<AblationResult>> {
    let _lock = DirLock::acquire(out)?;
    let dataset = cfg.dataset_dir(out);
    let root = out.join("ablate");
    let mut train = cfg.train.clone();
    train.epochs = cfg.ablate.epochs;
    train.limit = cfg.ablate.train_limit;
    train.checkpoint_every = train.epochs;
    let mut results = Vec::new();
    for &sweep in &cfg.ablate.sweeps {
        let mut reports = Vec::new();
        for v in sweep_variants(sweep, &cfg.model) {
            v.config.validate()?;
            let dir = root.join(&v.name);
            let outcome = train_into(cfg, &v.config, &train, &dir.join("train"), &dataset, false, None)?;
            let r = eval_into(cfg, &v.config, &outcome.checkpoint, &dataset, &dir, cfg.ablate.test_limit, 0)?;
            let mut row = r[0].clone();
            row.model_tag = v.name.clone();
            log::info!("{}: ADE {:.4} m", v.name, row.mean.ade3d);
            reports.push(row.clone());
            results.push(AblationResult {
                sweep,
                variant: v.name,
                report: row,
            });
        }
        std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        write(&root.join(format!("{}-summary.csv", sweep.tag())), &summary_csv(&reports))?;
    }
    Ok(results)
}

/// Runs the gradient suite; fails when any case exceeds the tolerance.
pub fn cmd_gradcheck(seed: u64) -> Result<Vec<GradCase>> {
    let cases = gradient_suite(seed);
    for c in &cases {
        println!("{:<22} max rel err {:.3e} over {} components", c.name, c.report.max_rel_err, c.report.checked);
    }
    let bad: Vec<&str> = cases.iter().filter(|c| !(c.report.max_rel_err < GRAD_TOLERANCE)).map(|c| c.name).collect();
    if !bad.is_empty() {
        bail!("gradient check above {GRAD_TOLERANCE:e}: {}", bad.join(", "));
    }
    Ok(cases)
}
