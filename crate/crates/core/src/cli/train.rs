//! Epoch loop with deterministic shuffling, loss-curve CSV and resumable
//! checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, make_batch, Sample};
use crate::diffusion::{load_training_state, save_training_state, LossBundle, ModelConfig, TrainingState, TwinModel};
use crate::numerics::{AdamW, AdamWConfig, LrSchedule};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";
const LOSS_HEADER: &str = "epoch,total,l_vlb_ego,l_vlb_htp,l_dis,l_reg,l_angle";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub clip_norm: f64,
    /// Half-cosine decay of the learning rate over the whole run.
    pub cosine: bool,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (and after the last).
    pub checkpoint_every: usize,
    /// Train on at most this many sequences (all when absent).
    #[serde(default)]
    pub limit: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        anyhow::ensure!(self.epochs > 0, "train.epochs must be positive");
        anyhow::ensure!(self.batch_size > 0, "train.batch_size must be positive");
        anyhow::ensure!(self.lr > 0.0 && self.lr.is_finite(), "train.lr must be positive");
        anyhow::ensure!(self.weight_decay >= 0.0 && self.clip_norm >= 0.0, "train.weight_decay and clip_norm must be >= 0");
        anyhow::ensure!(self.checkpoint_every > 0, "train.checkpoint_every must be positive");
        Ok(())
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }

    pub fn optimizer(&self, samples: usize) -> AdamWConfig {
        let total = (self.epochs * self.steps_per_epoch(samples)) as u64;
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            schedule: if self.cosine {
                LrSchedule::Cosine { total_steps: total }
            } else {
                LrSchedule::Constant
            },
            ..AdamWConfig::default()
        }
    }
}

/// Mean of each loss term over one epoch's steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean: LossBundle,
}

fn mean_bundle(steps: &[LossBundle]) -> LossBundle {
    let n = steps.len().max(1) as f64;
    let mut m = LossBundle::default();
    for b in steps {
        m.l_vlb_ego += b.l_vlb_ego / n;
        m.l_vlb_htp += b.l_vlb_htp / n;
        m.l_dis += b.l_dis / n;
        m.l_reg += b.l_reg / n;
        m.l_angle += b.l_angle / n;
        m.total += b.total / n;
    }
    m
}

fn loss_row(e: &EpochLoss) -> String {
    let m = &e.mean;
    format!(
        "{},{},{},{},{},{},{}",
        e.epoch, m.total, m.l_vlb_ego, m.l_vlb_htp, m.l_dis, m.l_reg, m.l_angle
    )
}

pub struct TrainRun<'a> {
    pub model_config: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub config_hash: &'a str,
    pub dir: &'a Path,
    /// Continue from `dir/checkpoint.bin` when present.
    pub resume: bool,
    /// Stop after this many completed epochs (for interrupted runs).
    pub stop_after: Option<usize>,
}

pub struct TrainOutcome {
    pub model: TwinModel,
    pub history: Vec<EpochLoss>,
    pub checkpoint: PathBuf,
}

fn read_history(path: &Path, upto: usize) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e <= upto))
        .map(String::from)
        .collect())
}

/// Trains on `samples`, writing the loss curve and checkpoints into `dir`.
///
/// Epoch `e` shuffles with a seed derived from `(seed, e)` and step `s`
/// draws its noise from `(seed, s)`, so a resumed run repeats the
/// uninterrupted one exactly.
pub fn run_training(run: &TrainRun<'_>, samples: &[Sample]) -> Result<TrainOutcome> {
    run.train.validate()?;
    anyhow::ensure!(!samples.is_empty(), "no training sequences");
    std::fs::create_dir_all(run.dir).with_context(|| format!("creating {}", run.dir.display()))?;
    let ckpt = run.dir.join(CHECKPOINT_FILE);
    let loss_path = run.dir.join(LOSS_FILE);
    let seed = run.train.seed;

    let mut model = TwinModel::new(run.model_config.clone(), derive_seed(seed, "init", 0))?;
    let mut opt = AdamW::new(run.train.optimizer(samples.len()));
    let mut start = 0;
    let mut rows = Vec::new();
    if run.resume && ckpt.exists() {
        let state = load_training_state(&ckpt, &mut model, Some(&mut opt), run.config_hash)?;
        start = state.epoch;
        if loss_path.exists() {
            rows = read_history(&loss_path, start)?;
        }
        log::info!("resuming from epoch {start}");
    }

    let steps_per_epoch = run.train.steps_per_epoch(samples.len());
    let last = run.stop_after.map_or(run.train.epochs, |s| s.min(run.train.epochs));
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in start..last {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "epoch", epoch as u64)));
        let mut steps = Vec::with_capacity(steps_per_epoch);
        for (i, chunk) in order.chunks(run.train.batch_size).enumerate() {
            let refs: Vec<&Sample> = chunk.iter().map(|&k| &samples[k]).collect();
            let batch = make_batch(&refs, &model.config, false)?;
            let global = (epoch * steps_per_epoch + i) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "step", global));
            steps.push(model.train_step(&batch, &mut opt, &mut rng)?);
        }
        let e = EpochLoss {
            epoch: epoch + 1,
            mean: mean_bundle(&steps),
        };
        log::info!("epoch {} loss {:.5} (dis {:.5})", e.epoch, e.mean.total, e.mean.l_dis);
        rows.push(loss_row(&e));
        history.push(e);
        let done = epoch + 1;
        if done % run.train.checkpoint_every == 0 || done == last {
            let state = TrainingState {
                config_hash: run.config_hash.to_string(),
                epoch: done,
                adam_step: opt.step,
            };
            save_training_state(&ckpt, &model, &opt, &state)?;
            let mut csv = format!("{LOSS_HEADER}\n");
            for r in &rows {
                writeln!(csv, "{r}").unwrap();
            }
            std::fs::write(&loss_path, csv).with_context(|| format!("writing {}", loss_path.display()))?;
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        checkpoint: ckpt,
    })
}

/// Rebuilds the model stored at `path`.
pub fn load_model(path: &Path, config: &ModelConfig, config_hash: &str) -> Result<TwinModel> {
    let mut model = TwinModel::new(config.clone(), 0)?;
    load_training_state(path, &mut model, None, config_hash)?;
    Ok(model)
}
