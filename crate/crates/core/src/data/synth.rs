//! Egocentric interaction sequences over a synthetic tabletop.
//!
//! The hand travels from a rest pose near the bottom of the view to the
//! target along a minimum-jerk profile with a small arc over obstacles. The
//! head turns and leans part of the way toward the same target along the
//! same profile, shifted in time by the synergy mode.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::SceneModel;
use super::DataError;
use crate::geometry::{
    homography_from_camera_motion, rotation_x, rotation_y, Frame, Homography, Intrinsics, Mask, PointCloud, PoseSE3,
    Vec3,
};

/// Who moves first during the reach.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynergyMode {
    /// The head turns first; the hand lags by 2–4 frames.
    HeadLeads,
    /// The hand moves first; the head lags by 2–4 frames.
    HandLeads,
    /// Head and hand move together.
    Neutral,
}

impl SynergyMode {
    pub const ALL: [SynergyMode; 3] = [SynergyMode::HeadLeads, SynergyMode::HandLeads, SynergyMode::Neutral];

    pub fn tag(self) -> u8 {
        match self {
            SynergyMode::HeadLeads => 0,
            SynergyMode::HandLeads => 1,
            SynergyMode::Neutral => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }
}

/// One frame of a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameData {
    /// Camera from global.
    pub pose: PoseSE3,
    /// Hand centre, global frame, meters.
    pub waypoint: Vec3,
    /// Maps first-frame pixels to this frame's pixels.
    pub homography: Homography,
    /// Camera-frame points, single precision as stored on disk.
    pub points: Vec<[f32; 3]>,
    pub mask: Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub n_past: usize,
    pub n_future: usize,
    pub intrinsics: Intrinsics,
    pub mode: SynergyMode,
    pub scene_seed: u64,
    pub frames: Vec<FrameData>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn cloud(&self, t: usize) -> PointCloud {
        PointCloud {
            points: self.frames[t]
                .points
                .iter()
                .map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64))
                .collect(),
            frame: Frame::Camera,
        }
    }

    /// Projected hand centre per frame; `None` when it falls outside the
    /// image or behind the camera.
    pub fn hand_pixels(&self) -> Vec<Option<[f64; 2]>> {
        self.frames
            .iter()
            .map(|fr| {
                let p = self.intrinsics.project(&fr.pose.apply(&fr.waypoint));
                (p.valid && self.intrinsics.pixel(p.uv).is_some()).then_some(p.uv)
            })
            .collect()
    }
}

/// 320×240 pinhole camera with a roughly 65° horizontal field of view.
pub fn desk_intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 250.0,
        fy: 250.0,
        cx: 160.0,
        cy: 120.0,
        width: 320,
        height: 240,
    }
}

/// Generator constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    pub plane_points: usize,
    pub box_points: usize,
    pub arm_points: usize,
    pub hand_radius: f64,
    pub arm_radius: f64,
    /// Standard deviation of per-frame hand jitter, meters.
    pub tremor: f64,
    /// Fraction of the head-to-target bearing the gaze covers.
    pub gaze_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            plane_points: 240,
            box_points: 100,
            arm_points: 60,
            hand_radius: 0.045,
            arm_radius: 0.035,
            tremor: 0.0015,
            gaze_fraction: 0.6,
        }
    }
}

/// `10τ³ − 15τ⁴ + 6τ⁵`, clamped to `[0, 1]`.
pub fn minimum_jerk(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

/// Shoulder anchor of the arm capsule, in the camera frame: below and
/// slightly right of the eye, so the arm enters from the image border.
const SHOULDER_CAM: [f64; 3] = [0.12, 0.28, 0.02];
/// Depth below which capsule samples are neither stored nor masked.
const NEAR_CLIP: f64 = 0.05;
/// Projected radii are inflated by this factor plus `MASK_MARGIN_PX`.
const MASK_INFLATE: f64 = 1.35;
const MASK_MARGIN_PX: f64 = 2.0;

/// Per-sequence timing of the reach, in frames.
#[derive(Clone, Copy, Debug)]
struct Timing {
    onset: f64,
    duration: f64,
    head_shift: f64,
}

impl Timing {
    fn progress(&self, t: f64) -> f64 {
        minimum_jerk((t - self.onset) / self.duration)
    }
}

/// Camera from global for a camera at `center` looking at `target`.
fn look_at(center: &Vec3, target: &Vec3) -> PoseSE3 {
    let d = (target - center).normalize();
    let yaw = d.x.atan2(d.z);
    let pitch = (-d.y).clamp(-1.0, 1.0).asin();
    let r_gc = rotation_y(yaw) * rotation_x(pitch);
    PoseSE3 {
        rotation: r_gc.transpose(),
        translation: -(r_gc.transpose() * center),
    }
}

fn in_view(k: &Intrinsics, p_cam: &Vec3) -> bool {
    let proj = k.project(p_cam);
    p_cam.z > NEAR_CLIP && proj.valid && k.pixel(proj.uv).is_some()
}

fn unit_perpendicular(axis: &Vec3, rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let w = v - axis * axis.dot(&v);
        if w.norm() > 1e-3 {
            return w.normalize();
        }
    }
}

fn unit_sphere(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Global-frame samples on the arm capsule from `shoulder` to `hand` and on
/// the hand sphere.
pub fn arm_surface_points(
    shoulder: &Vec3,
    hand: &Vec3,
    params: &SynthParams,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<Vec3> {
    let axis = (hand - shoulder).normalize();
    (0..count)
        .map(|i| {
            if i % 3 == 0 {
                hand + unit_sphere(rng) * params.hand_radius
            } else {
                let s: f64 = rng.random_range(0.0..1.0);
                shoulder + (hand - shoulder) * s + unit_perpendicular(&axis, rng) * params.arm_radius
            }
        })
        .collect()
}

/// Hand mask: disks along the projected capsule axis and around the hand,
/// each covering the projection of the local cross-section.
pub fn hand_mask(k: &Intrinsics, pose: &PoseSE3, shoulder: &Vec3, hand: &Vec3, params: &SynthParams) -> Mask {
    let mut mask = Mask::empty(k.width, k.height);
    let mut disk = |centre: &Vec3, radius: f64| {
        let c = pose.apply(centre);
        if c.z - radius <= NEAR_CLIP {
            return;
        }
        let proj = k.project(&c);
        let rho = k.fx.max(k.fy) * radius / (c.z - radius);
        mask.fill_disk(proj.uv, MASK_INFLATE * rho + MASK_MARGIN_PX);
    };
    const AXIS_SAMPLES: usize = 240;
    for i in 0..=AXIS_SAMPLES {
        let s = i as f64 / AXIS_SAMPLES as f64;
        disk(&(shoulder + (hand - shoulder) * s), params.arm_radius);
    }
    disk(hand, params.hand_radius);
    mask
}

/// Shoulder position in the global frame for a camera pose.
pub fn shoulder_position(pose: &PoseSE3) -> Vec3 {
    pose.inverse().apply(&Vector3::from(SHOULDER_CAM))
}

fn sample_plane_points(scene: &SceneModel, k: &Intrinsics, pose: &PoseSE3, count: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count * 20 {
        if out.len() == count {
            break;
        }
        let p = scene.table_point(rng.random_range(-0.6..0.6), rng.random_range(-0.5..0.6), 0.0);
        let [a, f, _] = scene.table_coords(&p);
        let under_box = scene.boxes.iter().any(|b| {
            let [ab, fb, _] = scene.table_coords(&b.center);
            (a - ab).abs() < b.half[0] && (f - fb).abs() < b.half[1]
        });
        let c = pose.apply(&p);
        if !under_box && in_view(k, &c) {
            out.push(c);
        }
    }
    out
}

fn sample_box_points(scene: &SceneModel, k: &Intrinsics, pose: &PoseSE3, count: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let axes = [scene.lateral, scene.forward, scene.up];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count * 20 {
        if out.len() == count {
            break;
        }
        let b = &scene.boxes[rng.random_range(0..scene.boxes.len())];
        // top face or one of four sides; never the bottom
        let face = rng.random_range(0..5);
        let mut coords = [
            rng.random_range(-1.0..1.0) * b.half[0],
            rng.random_range(-1.0..1.0) * b.half[1],
            rng.random_range(-1.0..1.0) * b.half[2],
        ];
        match face {
            0 => coords[2] = b.half[2],
            1 => coords[0] = b.half[0],
            2 => coords[0] = -b.half[0],
            3 => coords[1] = b.half[1],
            _ => coords[1] = -b.half[1],
        }
        let p = b.center + axes[0] * coords[0] + axes[1] * coords[1] + axes[2] * coords[2];
        let c = pose.apply(&p);
        if in_view(k, &c) {
            out.push(c);
        }
    }
    out
}

/// Deterministic sequence of `n_past + n_future` frames over `scene`.
pub fn synth_sequence(
    scene: &SceneModel,
    mode: SynergyMode,
    n_past: usize,
    n_future: usize,
    seed: u64,
) -> Result<Sequence, DataError> {
    synth_sequence_with(scene, mode, n_past, n_future, seed, &SynthParams::default())
}

pub fn synth_sequence_with(
    scene: &SceneModel,
    mode: SynergyMode,
    n_past: usize,
    n_future: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<Sequence, DataError> {
    if n_past < 2 || n_future < 2 {
        return Err(DataError::InvalidConfig(format!(
            "need at least 2 past and 2 future frames, got {n_past} and {n_future}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = desk_intrinsics();
    let n = n_past + n_future;
    let lag = rng.random_range(2..=4) as f64;
    let timing = Timing {
        onset: rng.random_range(-4.0..0.0),
        duration: n as f64 * rng.random_range(1.0..1.3),
        head_shift: match mode {
            SynergyMode::HeadLeads => lag,
            SynergyMode::HandLeads => -lag,
            SynergyMode::Neutral => 0.0,
        },
    };
    let start = scene.table_point(
        rng.random_range(-0.12..0.12),
        rng.random_range(-0.22..-0.14),
        rng.random_range(0.06..0.10),
    );
    let goal = scene.target + scene.up * params.hand_radius;
    let gaze0 = scene.table_point(rng.random_range(-0.03..0.03), rng.random_range(-0.08..0.0), 0.0);
    let bearing = goal - gaze0;
    let lean_dir = Vector3::new(bearing.x, 0.0, bearing.z).normalize();
    let lean = lean_dir * rng.random_range(0.02..0.05)
        + Vector3::new(
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
        );
    let jitter = Normal::new(0.0, params.tremor.max(f64::MIN_POSITIVE)).expect("finite sigma");

    let mut poses = Vec::with_capacity(n);
    let mut hands = Vec::with_capacity(n);
    for t in 0..n {
        let tf = t as f64;
        let pc = timing.progress(tf + timing.head_shift);
        let center = lean * pc;
        let gaze = gaze0 + bearing * (params.gaze_fraction * pc);
        poses.push(look_at(&center, &gaze));
        let ph = timing.progress(tf);
        let mut h = start + (goal - start) * ph + scene.up * (0.05 * (std::f64::consts::PI * ph).sin());
        if params.tremor > 0.0 {
            h += Vector3::new(jitter.sample(&mut rng), jitter.sample(&mut rng), jitter.sample(&mut rng));
        }
        hands.push(h);
    }

    // plane as seen from the first camera
    let p0 = poses[0];
    let n0 = p0.rotation * scene.plane.normal;
    let d0 = scene.plane.depth - n0.dot(&p0.translation);
    let inv0 = p0.inverse();

    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let pose = poses[t];
        let rel = pose.compose(&inv0);
        let homography = homography_from_camera_motion(&k, &rel.rotation, &rel.translation, &n0, d0)?;
        let shoulder = shoulder_position(&pose);
        let mut pts = sample_plane_points(scene, &k, &pose, params.plane_points, &mut rng);
        pts.extend(sample_box_points(scene, &k, &pose, params.box_points, &mut rng));
        pts.extend(
            arm_surface_points(&shoulder, &hands[t], params, params.arm_points * 4, &mut rng)
                .iter()
                .map(|p| pose.apply(p))
                .filter(|c| in_view(&k, c))
                .take(params.arm_points),
        );
        frames.push(FrameData {
            pose,
            waypoint: hands[t],
            homography,
            points: pts.iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect(),
            mask: hand_mask(&k, &pose, &shoulder, &hands[t], params),
        });
    }
    Ok(Sequence {
        id: format!("scene{:016x}-seq{:016x}", scene.seed, seed),
        n_past,
        n_future,
        intrinsics: k,
        mode,
        scene_seed: scene.seed,
        frames,
    })
}

/// Frames `[0, N_p)` and `[N_p, N)` under a past fraction `ratio`.
#[derive(Clone, Copy, Debug)]
pub struct SplitView<'a> {
    pub past: &'a [FrameData],
    pub future: &'a [FrameData],
}

/// `N_p = round(ratio · N)`; both sides must be nonempty.
pub fn split_sequence(seq: &Sequence, ratio: f64) -> Result<SplitView<'_>, DataError> {
    let total = seq.len();
    let n_past = split_point(total, ratio)?;
    let (past, future) = seq.frames.split_at(n_past);
    Ok(SplitView { past, future })
}

pub fn split_point(total: usize, ratio: f64) -> Result<usize, DataError> {
    let degenerate = DataError::DegenerateSplit { ratio, total };
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(degenerate);
    }
    let n_past = (ratio * total as f64).round() as usize;
    if n_past < 1 || n_past >= total {
        return Err(degenerate);
    }
    Ok(n_past)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::synth_scene;
    use crate::geometry::apply_homography;

    fn seq(seed: u64, mode: SynergyMode) -> Sequence {
        synth_sequence(&synth_scene(seed), mode, 12, 8, seed ^ 0x5eed).unwrap()
    }

    #[test]
    fn minimum_jerk_profile() {
        assert_eq!(minimum_jerk(0.0), 0.0);
        assert_eq!(minimum_jerk(1.0), 1.0);
        assert_eq!(minimum_jerk(0.5), 0.5);
        assert_eq!(minimum_jerk(-1.0), 0.0);
        assert_eq!(minimum_jerk(3.0), 1.0);
        // zero velocity at both ends
        let h = 1e-6;
        assert!(minimum_jerk(h) / h < 1e-9);
        assert!((1.0 - minimum_jerk(1.0 - h)) / h < 1e-9);
    }

    #[test]
    fn deterministic() {
        let a = seq(3, SynergyMode::HeadLeads);
        assert_eq!(a, seq(3, SynergyMode::HeadLeads));
        assert_ne!(a.frames[5].waypoint, seq(4, SynergyMode::HeadLeads).frames[5].waypoint);
        assert_eq!(a.len(), 20);
    }

    #[test]
    fn first_homography_is_identity() {
        for mode in SynergyMode::ALL {
            let s = seq(11, mode);
            let m = s.frames[0].homography.matrix();
            assert!((m - crate::geometry::Mat3::identity()).amax() < 1e-12, "{mode:?}");
        }
    }

    #[test]
    fn hand_stays_in_view() {
        let mut inside = 0;
        let mut total = 0;
        for i in 0..60 {
            let s = seq(100 + i, SynergyMode::ALL[i as usize % 3]);
            inside += s.hand_pixels().iter().filter(|p| p.is_some()).count();
            total += s.len();
        }
        let frac = inside as f64 / total as f64;
        assert!(frac >= 0.95, "{frac}");
    }

    #[test]
    fn too_short_is_rejected() {
        let scene = synth_scene(0);
        assert!(matches!(
            synth_sequence(&scene, SynergyMode::Neutral, 1, 5, 0),
            Err(DataError::InvalidConfig(_))
        ));
    }

    #[test]
    fn points_are_in_view_and_in_front() {
        let s = seq(7, SynergyMode::Neutral);
        let k = s.intrinsics;
        for t in 0..s.len() {
            let c = s.cloud(t);
            assert!(c.len() > 300, "frame {t}: {}", c.len());
            assert!(c.points.iter().all(|p| p.z > NEAR_CLIP && k.pixel(k.project(p).uv).is_some()));
        }
    }

    #[test]
    fn plane_points_transfer_through_homography() {
        let scene = synth_scene(21);
        for mode in SynergyMode::ALL {
            let s = synth_sequence(&scene, mode, 12, 8, 77).unwrap();
            let k = s.intrinsics;
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            for fr in &s.frames {
                let mut checked = 0;
                while checked < 20 {
                    let p = scene.table_point(rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.3), 0.0);
                    let (c0, ct) = (s.frames[0].pose.apply(&p), fr.pose.apply(&p));
                    if c0.z < NEAR_CLIP || ct.z < NEAR_CLIP {
                        continue;
                    }
                    let uv0 = k.project(&c0).uv;
                    let uvt = k.project(&ct).uv;
                    let mapped = apply_homography(&fr.homography, uv0).unwrap();
                    let err = ((mapped[0] - uvt[0]).powi(2) + (mapped[1] - uvt[1]).powi(2)).sqrt();
                    assert!(err < 1e-6, "{err}");
                    checked += 1;
                }
            }
        }
    }

    #[test]
    fn arm_points_fall_in_the_mask() {
        let params = SynthParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut hit, mut total) = (0usize, 0usize);
        for i in 0..30 {
            let s = seq(200 + i, SynergyMode::ALL[i as usize % 3]);
            let k = s.intrinsics;
            for fr in &s.frames {
                let shoulder = shoulder_position(&fr.pose);
                for p in arm_surface_points(&shoulder, &fr.waypoint, &params, 200, &mut rng) {
                    let c = fr.pose.apply(&p);
                    if !in_view(&k, &c) {
                        continue;
                    }
                    let (u, v) = k.pixel(k.project(&c).uv).unwrap();
                    total += 1;
                    hit += fr.mask.get(u, v) as usize;
                }
            }
        }
        let frac = hit as f64 / total as f64;
        assert!(total > 10_000 && frac >= 0.99, "{hit}/{total}");
    }

    /// Normalized cross-correlation of head yaw rate and hand lateral
    /// velocity, pooled over sequences; returns the lag with the peak.
    fn peak_lag(mode: SynergyMode) -> i64 {
        let max_lag = 6i64;
        let mut corr = vec![0.0; (2 * max_lag + 1) as usize];
        for i in 0..40 {
            let s = synth_sequence(&synth_scene(300 + i), mode, 12, 8, 900 + i).unwrap();
            let yaw: Vec<f64> = s
                .frames
                .iter()
                .map(|f| {
                    let axis = f.pose.rotation.transpose() * Vector3::z();
                    axis.x.atan2(axis.z)
                })
                .collect();
            let yaw_rate: Vec<f64> = yaw.windows(2).map(|w| w[1] - w[0]).collect();
            let hand_vel: Vec<f64> = s.frames.windows(2).map(|w| w[1].waypoint.x - w[0].waypoint.x).collect();
            let scale = (yaw_rate.iter().map(|v| v * v).sum::<f64>() * hand_vel.iter().map(|v| v * v).sum::<f64>()).sqrt();
            for (j, lag) in (-max_lag..=max_lag).enumerate() {
                let mut acc = 0.0;
                for (t, y) in yaw_rate.iter().enumerate() {
                    let u = t as i64 + lag;
                    if u >= 0 && (u as usize) < hand_vel.len() {
                        acc += y * hand_vel[u as usize];
                    }
                }
                corr[j] += acc / scale;
            }
        }
        let best = corr.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        best as i64 - max_lag
    }

    #[test]
    fn synergy_modes_order_head_and_hand() {
        let head = peak_lag(SynergyMode::HeadLeads);
        assert!(head > 0, "head leads: {head}");
        let hand = peak_lag(SynergyMode::HandLeads);
        assert!(hand < 0, "hand leads: {hand}");
        assert_eq!(peak_lag(SynergyMode::Neutral), 0);
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_point(20, 0.6).unwrap(), 12);
        assert_eq!(split_point(10, 0.6).unwrap(), 6);
        assert!(matches!(split_point(3, 0.99), Err(DataError::DegenerateSplit { .. })));
        assert!(split_point(10, 0.0).is_err() && split_point(10, 1.0).is_err() && split_point(10, f64::NAN).is_err());
        let s = seq(1, SynergyMode::Neutral);
        let v = split_sequence(&s, 0.6).unwrap();
        assert_eq!((v.past.len(), v.future.len()), (12, 8));
        assert_eq!(v.future[0], s.frames[12]);
    }
}
