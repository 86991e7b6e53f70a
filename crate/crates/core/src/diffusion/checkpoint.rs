use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiffusionError, TwinModel};
use crate::numerics::{AdamW, Checkpoint};

const PARAM: &str = "param:";
const ADAM_M: &str = "adam.m:";
const ADAM_V: &str = "adam.v:";

/// Checkpoint metadata beside the parameter and optimizer arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub config_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    pub adam_step: u64,
}

fn ckpt_err(e: impl ToString) -> DiffusionError {
    DiffusionError::Checkpoint(e.to_string())
}

pub fn save_training_state(
    path: &Path,
    model: &TwinModel,
    opt: &AdamW,
    state: &TrainingState,
) -> Result<(), DiffusionError> {
    let mut ckpt = Checkpoint {
        metadata: serde_json::to_value(state).map_err(ckpt_err)?,
        ..Default::default()
    };
    for (name, v) in model.store.iter() {
        ckpt.arrays.insert(format!("{PARAM}{name}"), v.clone());
    }
    for (name, v) in &opt.m {
        ckpt.arrays.insert(format!("{ADAM_M}{name}"), v.clone());
    }
    for (name, v) in &opt.v {
        ckpt.arrays.insert(format!("{ADAM_V}{name}"), v.clone());
    }
    let tmp = path.with_extension("tmp");
    ckpt.save(&tmp).map_err(ckpt_err)?;
    std::fs::rename(&tmp, path).map_err(ckpt_err)
}

/// Restores parameters (and optimizer moments when `opt` is given) into a
/// freshly built model. The stored config hash must equal `expected_hash`.
pub fn load_training_state(
    path: &Path,
    model: &mut TwinModel,
    opt: Option<&mut AdamW>,
    expected_hash: &str,
) -> Result<TrainingState, DiffusionError> {
    let ckpt = Checkpoint::load(path).map_err(|e| ckpt_err(format!("{}: {e}", path.display())))?;
    let state: TrainingState = serde_json::from_value(ckpt.metadata.clone()).map_err(ckpt_err)?;
    if state.config_hash != expected_hash {
        return Err(DiffusionError::CheckpointMismatch {
            expected: expected_hash.to_string(),
            found: state.config_hash,
        });
    }
    let names: Vec<String> = model.store.names().map(String::from).collect();
    for name in &names {
        let v = ckpt
            .arrays
            .get(&format!("{PARAM}{name}"))
            .ok_or_else(|| ckpt_err(format!("missing parameter {name}")))?;
        let slot = model.store.get_mut(name).expect("listed");
        if slot.dim() != v.dim() {
            return Err(ckpt_err(format!("parameter {name}: shape {:?} vs {:?}", v.dim(), slot.dim())));
        }
        slot.assign(v);
    }
    let stored = ckpt.arrays.keys().filter(|k| k.starts_with(PARAM)).count();
    if stored != names.len() {
        return Err(ckpt_err(format!("checkpoint has {stored} parameters, model has {}", names.len())));
    }
    if let Some(opt) = opt {
        opt.step = state.adam_step;
        opt.m.clear();
        opt.v.clear();
        for (key, v) in &ckpt.arrays {
            if let Some(n) = key.strip_prefix(ADAM_M) {
                opt.m.insert(n.to_string(), v.clone());
            } else if let Some(n) = key.strip_prefix(ADAM_V) {
                opt.v.insert(n.to_string(), v.clone());
            }
        }
    }
    Ok(state)
}
