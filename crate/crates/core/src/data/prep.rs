//! Conversion of sequences into model-ready samples and batches.
//!
//! The model frame is the camera frame of the first input frame. Waypoints
//! are expressed there relative to the last past waypoint, in units of
//! [`WAYPOINT_SCALE`] metres. Egomotion rows are
//! relative to the first frame and offset so that "no motion" is the zero
//! row.

use nalgebra::Matrix3;
use ndarray::{s, Array2};

use super::{DataError, Sequence};
use crate::denoisers::SeqLayout;
use crate::diffusion::{Batch, EgoMode, Modalities, ModelConfig};
use crate::encoders::{EgoRepr, VisionProvider, VisionQuery, VOXEL_DIMS};
use crate::geometry::{
    centered_origin, remove_hand_points, transform_points, voxelize, Frame, Intrinsics, OccupancyGrid, PointCloud,
    PoseSE3, Vec3,
};

/// Metres per model unit for waypoints.
pub const WAYPOINT_SCALE: f64 = 0.1;
/// Metres per unit for the translation part of pose rows.
pub const EGO_TRANSLATION_SCALE: f64 = 0.1;
/// Voxel edge length in metres.
pub const GRID_RESOLUTION: f64 = 0.05;
/// Text prompt used when the text modality is enabled.
pub const HAND_PROMPT: &str = "hand";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleOptions {
    pub ego_mode: EgoMode,
    pub modalities: Modalities,
}

impl SampleOptions {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        SampleOptions {
            ego_mode: cfg.ego_mode,
            modalities: cfg.modalities,
        }
    }
}

/// One sequence in model units, plus what is needed to map predictions back.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub layout: SeqLayout,
    /// `N × 3`, zero at the last past row.
    pub waypoints: Array2<f64>,
    /// `N × x` features computed with access to the future frames.
    pub x_sem: Array2<f64>,
    /// `N_p × x` features computed from past frames only.
    pub x_sem_past: Array2<f64>,
    /// `N × 9|12`, `None` when egomotion is off.
    pub ego: Option<Array2<f64>>,
    /// Present when point clouds are enabled.
    pub grid: Option<OccupancyGrid>,
    /// Last past waypoint, global frame.
    pub anchor: Vec3,
    /// `cam_0 ← global`; defines the model frame.
    pub frame0: PoseSE3,
    /// Ground truth in metres, global frame.
    pub past_global: Vec<Vec3>,
    pub future_global: Vec<Vec3>,
    /// `cam_from_global` of every future frame.
    pub future_poses: Vec<PoseSE3>,
    pub intrinsics: Intrinsics,
}

impl Sample {
    /// Maps `N_f × 3` model-unit rows to global metres.
    pub fn to_global(&self, rows: ndarray::ArrayView2<'_, f64>) -> Vec<Vec3> {
        let rt = self.frame0.rotation.transpose();
        rows.outer_iter()
            .map(|r| self.anchor + rt * Vec3::new(r[0], r[1], r[2]) * WAYPOINT_SCALE)
            .collect()
    }
}

/// Egomotion rows for all frames, or `None` for [`EgoMode::None`].
///
/// Homography rows are `S⁻¹·M_t·S − I` with `S = diag(w, h, 1)`, i.e. the
/// motion in normalized image coordinates. Pose rows are the relative motion
/// `cam_t ← cam_0` as `[R − I | t / EGO_TRANSLATION_SCALE]`.
pub fn ego_rows(seq: &Sequence, mode: EgoMode) -> Option<Array2<f64>> {
    let repr = mode.repr()?;
    let n = seq.len();
    let mut out = Array2::zeros((n, repr.width()));
    match repr {
        EgoRepr::Homography => {
            let w = seq.intrinsics.width as f64;
            let h = seq.intrinsics.height as f64;
            let s = Matrix3::from_diagonal(&Vec3::new(w, h, 1.0));
            let s_inv = Matrix3::from_diagonal(&Vec3::new(1.0 / w, 1.0 / h, 1.0));
            for (t, fr) in seq.frames.iter().enumerate() {
                let m = s_inv * fr.homography.matrix() * s - Matrix3::identity();
                for (j, v) in m.transpose().iter().enumerate() {
                    out[[t, j]] = *v;
                }
            }
        }
        EgoRepr::Se3 => {
            let first_inv = seq.frames[0].pose.inverse();
            for (t, fr) in seq.frames.iter().enumerate() {
                let rel = fr.pose.compose(&first_inv);
                let r = rel.rotation - Matrix3::identity();
                for i in 0..3 {
                    for j in 0..3 {
                        out[[t, 3 * i + j]] = r[(i, j)];
                    }
                    out[[t, 9 + i]] = rel.translation[i] / EGO_TRANSLATION_SCALE;
                }
            }
        }
    }
    Some(out)
}

/// Occupancy of the past scene in the model frame with hand points
/// removed, centred on the mean past waypoint.
fn past_grid(seq: &Sequence) -> Result<OccupancyGrid, DataError> {
    let frame0 = seq.frames[0].pose;
    let mut points = Vec::new();
    for t in 0..seq.n_past {
        let fr = &seq.frames[t];
        let global = transform_points(&fr.pose.inverse(), &seq.cloud(t));
        let kept = remove_hand_points(&global, &fr.mask, &seq.intrinsics, &fr.pose)?;
        points.extend(kept.points.iter().map(|p| frame0.apply(p)));
    }
    let center = seq.frames[..seq.n_past].iter().map(|f| frame0.apply(&f.waypoint)).sum::<Vec3>() / seq.n_past as f64;
    let origin = centered_origin(&center, GRID_RESOLUTION, VOXEL_DIMS);
    let cloud = PointCloud::new(points, Frame::Global)?;
    Ok(voxelize(&cloud, origin, GRID_RESOLUTION, VOXEL_DIMS)?)
}

pub fn prepare_sample(seq: &Sequence, provider: &dyn VisionProvider, opts: &SampleOptions) -> Result<Sample, DataError> {
    let (np, nf) = (seq.n_past, seq.n_future);
    if np < 2 || nf < 1 || seq.len() != np + nf {
        return Err(DataError::InvalidConfig(format!(
            "sequence {} has {} frames for n_past={np}, n_future={nf}",
            seq.id,
            seq.len()
        )));
    }
    let n = np + nf;
    let anchor = seq.frames[np - 1].waypoint;
    let frame0 = seq.frames[0].pose;
    let mut waypoints = Array2::zeros((n, 3));
    for (t, fr) in seq.frames.iter().enumerate() {
        let d = frame0.rotation * (fr.waypoint - anchor) / WAYPOINT_SCALE;
        waypoints.row_mut(t).assign(&ndarray::arr1(&[d.x, d.y, d.z]));
    }

    let x = provider.width();
    let (x_sem, x_sem_past) = if opts.modalities.images {
        let pixels = seq.hand_pixels();
        let query = VisionQuery {
            sequence_id: &seq.id,
            scene_seed: seq.scene_seed,
            hand_pixels: &pixels,
            width: seq.intrinsics.width,
            height: seq.intrinsics.height,
        };
        let prompt = if opts.modalities.text { HAND_PROMPT } else { "" };
        let full = provider.features(&query, prompt, np, nf)?.x_sem;
        let past = provider.features(&query, prompt, np, 0)?.x_sem;
        (full, past)
    } else {
        (Array2::zeros((n, x)), Array2::zeros((np, x)))
    };

    let grid = if opts.modalities.point_clouds {
        Some(past_grid(seq)?)
    } else {
        None
    };

    Ok(Sample {
        id: seq.id.clone(),
        layout: SeqLayout { n_past: np, n_future: nf },
        waypoints,
        x_sem,
        x_sem_past,
        ego: ego_rows(seq, opts.ego_mode),
        grid,
        anchor,
        frame0,
        past_global: seq.frames[..np].iter().map(|f| f.waypoint).collect(),
        future_global: seq.frames[np..].iter().map(|f| f.waypoint).collect(),
        future_poses: seq.frames[np..].iter().map(|f| f.pose).collect(),
        intrinsics: seq.intrinsics,
    })
}

/// Stacks samples into a batch for `cfg`. With `inference` set the future
/// rows of every input are zeroed and the past-only vision features are
/// used, so nothing beyond the observation window reaches the model.
pub fn make_batch(samples: &[&Sample], cfg: &ModelConfig, inference: bool) -> Result<Batch, DataError> {
    if samples.is_empty() {
        return Err(DataError::InvalidConfig("empty batch".into()));
    }
    let layout = cfg.layout();
    let (np, n) = (layout.n_past, layout.len());
    let ego_width = cfg.ego_mode.repr().map(EgoRepr::width);
    let mut waypoints = Array2::zeros((samples.len() * n, 3));
    let mut x_sem = Array2::zeros((samples.len() * n, cfg.x));
    let mut ego = ego_width.map(|w| Array2::zeros((samples.len() * n, w)));
    let mut grids = Vec::new();
    for (b, s) in samples.iter().enumerate() {
        if s.layout != layout {
            return Err(DataError::InvalidConfig(format!(
                "sample {} has layout {}+{}, model expects {}+{}",
                s.id, s.layout.n_past, s.layout.n_future, np, layout.n_future
            )));
        }
        if s.x_sem.ncols() != cfg.x {
            return Err(DataError::InvalidConfig(format!(
                "sample {} has feature width {}, model expects {}",
                s.id,
                s.x_sem.ncols(),
                cfg.x
            )));
        }
        let rows = b * n..(b + 1) * n;
        let past = b * n..b * n + np;
        if inference {
            waypoints.slice_mut(s![past.clone(), ..]).assign(&s.waypoints.slice(s![..np, ..]));
            x_sem.slice_mut(s![past.clone(), ..]).assign(&s.x_sem_past);
        } else {
            waypoints.slice_mut(s![rows.clone(), ..]).assign(&s.waypoints);
            x_sem.slice_mut(s![rows.clone(), ..]).assign(&s.x_sem);
        }
        if let Some(dst) = ego.as_mut() {
            let src = s.ego.as_ref().filter(|e| Some(e.ncols()) == ego_width).ok_or_else(|| {
                DataError::InvalidConfig(format!("sample {} lacks {} egomotion rows", s.id, cfg.ego_mode.tag()))
            })?;
            if inference {
                dst.slice_mut(s![past, ..]).assign(&src.slice(s![..np, ..]));
            } else {
                dst.slice_mut(s![rows, ..]).assign(src);
            }
        }
        if cfg.modalities.point_clouds {
            let g = s
                .grid
                .clone()
                .ok_or_else(|| DataError::InvalidConfig(format!("sample {} has no voxel grid", s.id)))?;
            grids.push(g);
        }
    }
    Ok(Batch {
        layout,
        size: samples.len(),
        waypoints,
        x_sem,
        ego,
        grids,
    })
}
