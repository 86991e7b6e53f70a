use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Vec3;

/// Tabletop plane `nᵀX + d = 0` in the global frame, with `d > 0` so the
/// origin (the nominal head position) lies on the side `n` points to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub depth: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.depth
    }
}

/// Box resting on the plane, axis-aligned in the table frame
/// `(lateral, forward, up)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneBox {
    /// Centre in the global frame.
    pub center: Vec3,
    /// Half extents along `(lateral, forward, up)`.
    pub half: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub seed: u64,
    pub plane: Plane,
    /// Where the optical axis of the nominal head meets the plane.
    pub anchor: Vec3,
    /// Table-frame axes in global coordinates; `up = plane.normal`.
    pub lateral: Vec3,
    pub forward: Vec3,
    pub up: Vec3,
    pub boxes: Vec<SceneBox>,
    /// Top centre of `boxes[target_box]`.
    pub target: Vec3,
    pub target_box: usize,
}

impl SceneModel {
    /// `anchor + a·lateral + b·forward + h·up`.
    pub fn table_point(&self, a: f64, b: f64, h: f64) -> Vec3 {
        self.anchor + self.lateral * a + self.forward * b + self.up * h
    }

    /// Table coordinates `(a, b, h)` of a global point.
    pub fn table_coords(&self, p: &Vec3) -> [f64; 3] {
        let q = p - self.anchor;
        [q.dot(&self.lateral), q.dot(&self.forward), q.dot(&self.up)]
    }
}

const PITCH_DEG: (f64, f64) = (35.0, 55.0);
const AXIS_DEPTH: (f64, f64) = (0.6, 1.0);
/// Table-frame footprint region of box centres.
const BOX_LATERAL: f64 = 0.28;
const BOX_FORWARD: (f64, f64) = (-0.02, 0.22);
const BOX_GAP: f64 = 0.02;
/// Minimum lateral offset of the target from the table centre line.
pub const MIN_TARGET_LATERAL: f64 = 0.08;

/// Deterministic tabletop scene: a plane viewed obliquely from the origin,
/// 2–4 non-overlapping boxes and a target on top of one of them.
pub fn synth_scene(seed: u64) -> SceneModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = rng.random_range(PITCH_DEG.0..PITCH_DEG.1).to_radians();
    let axis_depth = rng.random_range(AXIS_DEPTH.0..AXIS_DEPTH.1);
    let (s, c) = phi.sin_cos();
    let up = Vector3::new(0.0, -c, -s);
    let lateral = Vector3::new(1.0, 0.0, 0.0);
    let forward = up.cross(&lateral);
    let plane = Plane {
        normal: up,
        depth: axis_depth * s,
    };
    let anchor = Vector3::new(0.0, 0.0, axis_depth);

    let count = rng.random_range(2..=4);
    let mut footprints: Vec<([f64; 2], [f64; 3])> = Vec::new();
    while footprints.len() < count {
        let half = [
            rng.random_range(0.03..0.06),
            rng.random_range(0.03..0.06),
            rng.random_range(0.02..0.06),
        ];
        let ab = [
            rng.random_range(-BOX_LATERAL..BOX_LATERAL),
            rng.random_range(BOX_FORWARD.0..BOX_FORWARD.1),
        ];
        let clear = footprints.iter().all(|(o, oh)| {
            (ab[0] - o[0]).abs() > half[0] + oh[0] + BOX_GAP || (ab[1] - o[1]).abs() > half[1] + oh[1] + BOX_GAP
        });
        // the first box carries the target and must sit off the centre line
        let offset_ok = !footprints.is_empty() || ab[0].abs() >= MIN_TARGET_LATERAL;
        if clear && offset_ok {
            footprints.push((ab, half));
        }
    }
    let boxes: Vec<SceneBox> = footprints
        .iter()
        .map(|(ab, half)| SceneBox {
            center: anchor + lateral * ab[0] + forward * ab[1] + up * half[2],
            half: *half,
        })
        .collect();
    let target = boxes[0].center + up * boxes[0].half[2];
    SceneModel {
        seed,
        plane,
        anchor,
        lateral,
        forward,
        up,
        boxes,
        target,
        target_box: 0,
    }
}
