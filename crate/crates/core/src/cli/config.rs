//! Run configuration: a TOML tree layered over a named preset.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::train::TrainConfig;
use crate::data::DatasetSpec;
use crate::diffusion::ModelConfig;
use crate::eval::Sweep;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    pub batch_size: usize,
    /// Number of test sequences plotted as SVG.
    pub plots: usize,
    /// Evaluate at most this many test sequences.
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub sweeps: Vec<Sweep>,
    pub epochs: usize,
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Dataset root; `<out>/data` when absent.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Precomputed vision features; the synthetic provider when absent.
    #[serde(default)]
    pub vision_features: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub data: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => bail!("unknown preset {other:?} (expected desk or paper)"),
        }
    }

    fn source(self) -> &'static str {
        match self {
            Preset::Desk => DESK,
            Preset::Paper => PAPER,
        }
    }
}

const DESK: &str = r#"
preset = "desk"

[data]
train_count = 512
test_count = 128
seed = 7
frames = 20
split_ratio = 0.6
mode_mix = [60, 20, 20]

[model]
f = 128
x = 32
voxel_hidden = 64
n_past = 12
n_future = 8
pattern = "EAM-EAM-SAT"
schedule = "sqrt"
t_total = 1000
k_ego = 1
k_htp = 100
ego_mode = "homography"

[model.mamba]
d_state = 16
d_conv = 2
expand = 1

[model.sat]
n_head = 4
d_ffn = 256

[model.modalities]
images = true
text = true
point_clouds = true

[model.weights]
vlb_ego = 1.0
vlb_htp = 1.0
dis = 1.0
reg = 1.0
angle = 1.0

[train]
epochs = 30
batch_size = 16
lr = 1e-3
weight_decay = 0.01
clip_norm = 1.0
cosine = true
seed = 7
checkpoint_every = 5

[eval]
seed = 7
batch_size = 64
plots = 8

[ablate]
sweeps = ["ego", "pattern", "modality"]
epochs = 5
train_limit = 64
test_limit = 32
"#;

/// Full-scale widths; meant for forward-pass validation.
const PAPER: &str = r#"
preset = "paper"

[model]
f = 1024

[model.sat]
n_head = 4
d_ffn = 2048

[train]
epochs = 1000
lr = 5e-5
cosine = false
"#;

/// Recursively overlays `top` on `base`; tables merge, everything else is
/// replaced.
pub fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn preset_tree(p: Preset) -> toml::Value {
    let mut tree: toml::Value = toml::from_str(DESK).expect("desk preset parses");
    if p != Preset::Desk {
        let over: toml::Value = toml::from_str(p.source()).expect("preset parses");
        merge(&mut tree, over);
    }
    tree
}

impl RunConfig {
    pub fn preset(p: Preset) -> RunConfig {
        let cfg: RunConfig = preset_tree(p).try_into().expect("presets deserialize");
        cfg
    }

    /// Builds a config from an optional file and preset. The file may name
    /// a preset with `preset = "..."`; `preset` (from the command line)
    /// takes precedence; desk is the default.
    pub fn load(file: Option<&Path>, preset: Option<Preset>) -> Result<RunConfig> {
        let overlay: Option<toml::Value> = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Some(toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?)
            }
            None => None,
        };
        Self::from_overlay(overlay, preset).with_context(|| match file {
            Some(p) => format!("invalid config {}", p.display()),
            None => "invalid config".to_string(),
        })
    }

    pub fn from_toml_str(text: &str, preset: Option<Preset>) -> Result<RunConfig> {
        Self::from_overlay(Some(toml::from_str(text)?), preset)
    }

    fn from_overlay(overlay: Option<toml::Value>, preset: Option<Preset>) -> Result<RunConfig> {
        let named = overlay
            .as_ref()
            .and_then(|o| o.get("preset"))
            .map(|v| v.as_str().map(Preset::from_name).unwrap_or_else(|| bail!("preset must be a string")))
            .transpose()?;
        let base = preset.or(named).unwrap_or(Preset::Desk);
        let mut tree = preset_tree(base);
        if let Some(mut o) = overlay {
            if let Some(t) = o.as_table_mut() {
                t.remove("preset");
            }
            merge(&mut tree, o);
        }
        let cfg: RunConfig = tree.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let (np, nf) = self.data.layout()?;
        if (np, nf) != (self.model.n_past, self.model.n_future) {
            bail!(
                "data split gives n_past={np}, n_future={nf} but model expects {}+{}",
                self.model.n_past,
                self.model.n_future
            );
        }
        anyhow::ensure!(self.eval.batch_size > 0, "eval.batch_size must be positive");
        anyhow::ensure!(self.ablate.epochs > 0, "ablate.epochs must be positive");
        if self.paths.vision_features.is_none() && self.model.x < 2 * crate::encoders::POSITION_FREQS {
            bail!("the synthetic vision provider needs model.x >= {}", 2 * crate::encoders::POSITION_FREQS);
        }
        Ok(())
    }

    /// Overrides every seed with `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        self
    }

    /// SHA-256 over the model and data configuration, hex encoded.
    /// Checkpoints built under one hash are rejected under any other.
    pub fn config_hash(&self) -> String {
        config_hash(&self.model, &self.data)
    }

    pub fn dataset_dir(&self, out: &Path) -> PathBuf {
        self.paths.dataset.clone().unwrap_or_else(|| out.join("data"))
    }
}

pub fn config_hash(model: &ModelConfig, data: &DatasetSpec) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model).expect("model config serializes"));
    h.update([0u8]);
    h.update(serde_json::to_vec(data).expect("dataset spec serializes"));
    hex::encode(h.finalize())
}
