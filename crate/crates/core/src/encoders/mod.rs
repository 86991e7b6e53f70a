//! Modality encoders into the shared latent width `f`, and the trajectory
//! decoder back to 3D waypoints.

mod egomotion;
mod fusion;
mod vision;
mod voxel;

pub use egomotion::{homography_rows, pose_rows, EgoRepr, EgomotionEncoder};
pub use fusion::{FusionModule, TrajectoryDecoder, LATENT_EPS};
pub use vision::{
    decode_vision_features, encode_vision_features, FileProvider, SyntheticProvider, VisionFeatures,
    VisionProvider, VisionQuery, MAX_FEATURE_DIM, POSITION_FREQS,
};
pub use voxel::{VoxelEncoder, VOXEL_DIMS, VOXEL_PATCHES};

use crate::geometry::GridDims;
use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("empty input sequence")]
    EmptySequence,
    #[error("vision provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("voxel grid must be {expected:?}, got {got:?}")]
    GridDimMismatch { expected: GridDims, got: GridDims },
    #[error("bad feature file: {0}")]
    FeatureFormat(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
