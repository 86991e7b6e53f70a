//! Differentiable building blocks.
//!
//! Everything learnable in the system is assembled from the pieces here: the
//! recording [`Tape`], parameter storage and checkpointing, affine maps,
//! layer normalization, 3-D convolution, multi-head attention and the
//! selective state-space scan, plus a central-difference gradient checker.

mod attention;
mod conv;
mod gradcheck;
mod layers;
mod optim;
mod params;
mod scan;
mod tape;

pub use attention::{multi_head_attention, AttentionOutput, MultiHeadAttention};
pub use conv::{causal_conv1d, conv3d, conv_out_dim, im2col3d, Conv3d, Dims3};
pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport};
pub use layers::{affine_map, layer_norm, LayerNorm, Linear, Mlp};
pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use params::{
    decode_checkpoint, encode_checkpoint, uniform_init, Checkpoint, CheckpointError, Ctx,
    ParamStore,
};
pub use scan::{selective_scan, selective_scan_var, ScanParams};
pub use tape::{concat_cols, concat_rows, custom_op, sigmoid, softplus, Grads, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("selective scan step size must be positive (row {row}, channel {channel}: {value})")]
    NonPositiveDelta {
        row: usize,
        channel: usize,
        value: f64,
    },
}
