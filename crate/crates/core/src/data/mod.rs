//! Synthetic egocentric interaction data: scenes, sequences, the on-disk
//! sequence format, splitting and conversion to model batches.

mod dataset;
mod io;
mod prep;
mod scene;
mod synth;

pub use dataset::{
    derive_seed, generate_dataset, load_split, plan_dataset, read_manifest, DatasetSpec, Manifest, ManifestEntry,
    SynergyModeTag, MANIFEST_FILE,
};
pub use io::{decode_sequence, encode_sequence, read_sequence, write_sequence, MAGIC, MAX_MASK_PIXELS, VERSION};
pub use prep::{
    ego_rows, make_batch, prepare_sample, Sample, SampleOptions, EGO_TRANSLATION_SCALE, GRID_RESOLUTION, HAND_PROMPT,
    WAYPOINT_SCALE,
};
pub use scene::{synth_scene, Plane, SceneBox, SceneModel, MIN_TARGET_LATERAL};
pub use synth::{
    arm_surface_points, desk_intrinsics, hand_mask, minimum_jerk, shoulder_position, split_point, split_sequence,
    synth_sequence, synth_sequence_with, FrameData, Sequence, SplitView, SynergyMode, SynthParams,
};

use std::path::{Path, PathBuf};

use crate::encoders::EncoderError;
use crate::geometry::GeometryError;

/// Malformed sequence bytes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("not a sequence file (bad magic)")]
    BadMagic,
    #[error("unsupported sequence file version {found} (this build reads version {expected})")]
    Version { found: u16, expected: u16 },
    #[error("truncated while reading {what} at byte {offset}")]
    Truncated { what: &'static str, offset: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("split ratio {ratio} leaves an empty side of a {total}-frame sequence")]
    DegenerateSplit { ratio: f64, total: usize },
    #[error("invalid data configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
