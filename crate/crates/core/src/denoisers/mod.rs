//! Denoising networks: the unconditioned Mamba denoiser for egomotion
//! latents and the hybrid EAM/SAT stack for hand-trajectory latents.
//!
//! Inputs are `B` sequences stacked row-wise; every sequence-aware operation
//! takes the per-sequence length so stacked samples never interact.

mod embed;
mod hmtm;
mod mamba;
mod sat;

pub use embed::{sinusoid, time_encoding, StepEmbedding};
pub use hmtm::{BlockKind, Hmtm, HybridPattern, SeqLayout, Vm};
pub use mamba::{MambaBlock, MambaConfig};
pub use sat::{SatBlock, SatConfig, VoxelTokens};

use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DenoiserError {
    #[error("invalid hybrid pattern {0:?}: expected dash-separated EAM/SAT tags")]
    InvalidPattern(String),
    #[error("invalid denoiser config: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
