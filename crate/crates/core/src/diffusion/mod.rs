//! Partial-noising latent diffusion: schedules, forward noising of the
//! future suffix, the training losses, the twin model and its samplers.

mod checkpoint;
mod losses;
mod model;
mod partial;
mod sampler;
mod schedule;

pub use checkpoint::{load_training_state, save_training_state, TrainingState};
pub use losses::{
    angle_loss, compute_losses, displacement_loss, mse, LossBundle, LossInputs, LossTerms, LossWeights,
    MIN_DISPLACEMENT,
};
pub use model::{Batch, EgoMode, Modalities, ModelConfig, TwinModel};
#[cfg(test)]
pub(crate) use model::tests::tiny_config;
pub use partial::{future_rows, partial_noise, past_rows, q_sample_partial, LatentSeq};
pub use sampler::{
    assemble, sample_egomotion, sample_htp, sample_partial, ConditionedHmtm, Denoiser, SampleOutput,
};
pub use schedule::{make_schedule, respace_steps, Schedule, ScheduleKind};

use crate::denoisers::DenoiserError;
use crate::encoders::EncoderError;
use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffusionError {
    #[error("schedule needs T >= 1, got {0}")]
    InvalidT(usize),
    #[error("respacing needs 1 <= K <= T, got K={k}, T={t_total}")]
    InvalidK { k: usize, t_total: usize },
    #[error("diffusion step {t} outside 0..{t_total}")]
    StepOutOfRange { t: usize, t_total: usize },
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {0:?}")]
    NonFiniteLoss(LossBundle),
    #[error("checkpoint was written for config {found}, current config is {expected}")]
    CheckpointMismatch { expected: String, found: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
