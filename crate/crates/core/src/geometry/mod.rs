//! Multi-view and 3D geometry: camera model, rigid transforms, homography
//! estimation, hand-point filtering and voxelization.

mod camera;
mod homography;
mod voxel;

pub use camera::{
    project_points, remove_hand_points, rotation_x, rotation_y, transform_points, Frame,
    Intrinsics, Mask, PointCloud, PoseSE3, Projection, MIN_DEPTH,
};
pub use homography::{
    apply_homography, estimate_homography_dlt, estimate_homography_ransac,
    homography_from_camera_motion, Correspondences, Homography, RansacConfig,
};
pub use voxel::{centered_origin, voxelize, GridDims, OccupancyGrid, MAX_GRID_CELLS};

pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("design matrix is rank-deficient")]
    DegenerateConfiguration,
    #[error("need at least 4 correspondences, got {got}")]
    TooFewCorrespondences { got: usize },
    #[error("no consensus: best model has {inliers} inliers")]
    NoConsensus { inliers: usize },
    #[error("point maps to infinity")]
    PointAtInfinity,
    #[error("mask is {mask:?} (h, w) but the image is {image:?}")]
    MaskSizeMismatch {
        mask: (usize, usize),
        image: (usize, usize),
    },
    #[error("plane depth must be positive, got {depth}")]
    InvalidPlane { depth: f64 },
    #[error("invalid intrinsics {0:?}")]
    InvalidIntrinsics(Intrinsics),
    #[error("rotation is not a proper orthonormal matrix")]
    InvalidPose,
    #[error("point cloud contains a non-finite coordinate")]
    NonFinitePoint,
    #[error("voxel resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error("bad occupancy grid: {0}")]
    GridFormat(String),
}
