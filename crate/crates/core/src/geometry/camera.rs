use nalgebra::{Matrix3, Vector3};

use super::{GeometryError, Mat3, Vec3};

/// Pinhole intrinsics, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(*self))
        }
    }

    pub fn matrix(&self) -> Mat3 {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        let valid = p.z > MIN_DEPTH;
        let uv = if valid {
            [self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy]
        } else {
            [f64::NAN, f64::NAN]
        };
        Projection {
            uv,
            depth: p.z,
            valid,
        }
    }

    pub fn unproject(&self, uv: [f64; 2], depth: f64) -> Vec3 {
        Vector3::new(
            (uv[0] - self.cx) / self.fx * depth,
            (uv[1] - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Pixel containing `uv`, if inside the image.
    pub fn pixel(&self, uv: [f64; 2]) -> Option<(usize, usize)> {
        let (u, v) = (uv[0].floor(), uv[1].floor());
        if u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64 {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }
}

/// Points closer than this (or behind the camera) do not project.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub uv: [f64; 2],
    pub depth: f64,
    pub valid: bool,
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl PoseSE3 {
    pub fn identity() -> Self {
        PoseSE3 {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Checks orthonormality and `det = +1` to 1e-9.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let pose = PoseSE3 {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        let det = self.rotation.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidPose);
        }
        Ok(())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        PoseSE3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &PoseSE3) -> Self {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Row-major rotation followed by translation.
    pub fn to_flat(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }

    pub fn from_flat(v: &[f64; 12]) -> Self {
        PoseSE3 {
            rotation: Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]),
            translation: Vector3::new(v[9], v[10], v[11]),
        }
    }
}

/// Which coordinate system a cloud's points are expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    Camera,
    Global,
}

impl Frame {
    pub fn other(self) -> Self {
        match self {
            Frame::Camera => Frame::Global,
            Frame::Global => Frame::Camera,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, frame: Frame) -> Result<Self, GeometryError> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::NonFinitePoint);
        }
        Ok(PointCloud { points, frame })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Binary image, row-major, `true` = masked.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.bits[v * self.width + u] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Fills a disk of `radius` pixels around `center`.
    pub fn fill_disk(&mut self, center: [f64; 2], radius: f64) {
        let (w, h) = (self.width as f64, self.height as f64);
        let u0 = (center[0] - radius).floor().max(0.0);
        let u1 = (center[0] + radius).ceil().min(w - 1.0);
        let v0 = (center[1] - radius).floor().max(0.0);
        let v1 = (center[1] + radius).ceil().min(h - 1.0);
        if u0 > u1 || v0 > v1 {
            return;
        }
        let r2 = radius * radius;
        for v in v0 as usize..=v1 as usize {
            for u in u0 as usize..=u1 as usize {
                // distance from the pixel's nearest point to the center
                let du = (center[0] - center[0].clamp(u as f64, u as f64 + 1.0)).abs();
                let dv = (center[1] - center[1].clamp(v as f64, v as f64 + 1.0)).abs();
                if du * du + dv * dv <= r2 {
                    self.set(u, v, true);
                }
            }
        }
    }
}

/// `p' = R·p + t` for every point; the frame tag flips between camera and
/// global, since a pose maps one onto the other.
pub fn transform_points(pose: &PoseSE3, pc: &PointCloud) -> PointCloud {
    PointCloud {
        points: pc.points.iter().map(|p| pose.apply(p)).collect(),
        frame: pc.frame.other(),
    }
}

pub fn project_points(k: &Intrinsics, pc: &PointCloud) -> Vec<Projection> {
    pc.points.iter().map(|p| k.project(p)).collect()
}

/// Drops global-frame points that land on masked pixels of the view given by
/// `pose_cam_from_global`. Points behind the camera or outside the image are
/// kept.
pub fn remove_hand_points(
    pc: &PointCloud,
    mask: &Mask,
    k: &Intrinsics,
    pose_cam_from_global: &PoseSE3,
) -> Result<PointCloud, GeometryError> {
    if mask.width != k.width || mask.height != k.height {
        return Err(GeometryError::MaskSizeMismatch {
            mask: (mask.height, mask.width),
            image: (k.height, k.width),
        });
    }
    let points = pc
        .points
        .iter()
        .filter(|p| {
            let proj = k.project(&pose_cam_from_global.apply(p));
            if !proj.valid {
                return true;
            }
            match k.pixel(proj.uv) {
                Some((u, v)) => !mask.get(u, v),
                None => true,
            }
        })
        .copied()
        .collect();
    Ok(PointCloud {
        points,
        frame: pc.frame,
    })
}

/// Rotation about the camera's vertical (y) axis.
pub fn rotation_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the camera's horizontal (x) axis.
pub fn rotation_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn desk_k() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn projection_examples() {
        let k = desk_k();
        let p = k.project(&Vector3::new(0.0, 0.0, 1.0));
        assert_eq!((p.uv, p.depth, p.valid), ([320.0, 240.0], 1.0, true));
        assert!(!k.project(&Vector3::new(0.0, 0.0, -1.0)).valid);
        assert_eq!(k.project(&Vector3::new(0.1, 0.0, 1.0)).uv, [370.0, 240.0]);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 2, 2).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 3.0, 1.0, 2, 2).is_err());
    }

    #[test]
    fn transform_examples() {
        let pc = PointCloud::new(vec![Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0)], Frame::Global)
            .unwrap();
        let same = transform_points(&PoseSE3::identity(), &pc);
        assert_eq!(same.points, pc.points);
        assert_eq!(same.frame, Frame::Camera);
        let shift = PoseSE3::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(transform_points(&shift, &pc).points[0], Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn pose_validation_rejects_reflection() {
        let mut r = Matrix3::identity();
        r[(2, 2)] = -1.0;
        assert!(PoseSE3::new(r, Vector3::zeros()).is_err());
        assert!(PoseSE3::new(rotation_y(0.3) * rotation_x(-1.1), Vector3::zeros()).is_ok());
    }

    #[test]
    fn hand_removal_examples() {
        let k = desk_k();
        let pose = PoseSE3::identity();
        let pts = vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.2, 0.1, 1.0)];
        let pc = PointCloud::new(pts.clone(), Frame::Global).unwrap();
        let kept = remove_hand_points(&pc, &Mask::empty(640, 480), &k, &pose).unwrap();
        assert_eq!(kept.points, pts);
        let kept = remove_hand_points(&pc, &Mask::full(640, 480), &k, &pose).unwrap();
        assert!(kept.is_empty());

        let proj = project_points(&k, &pc);
        let mut mask = Mask::empty(640, 480);
        let (u, v) = k.pixel(proj[0].uv).unwrap();
        mask.set(u, v, true);
        let kept = remove_hand_points(&pc, &mask, &k, &pose).unwrap();
        assert_eq!(kept.points, vec![pts[1]]);
    }

    #[test]
    fn hand_removal_keeps_unobservable_points() {
        let k = desk_k();
        let pc = PointCloud::new(
            vec![Vector3::new(0.0, 0.0, -1.0), Vector3::new(10.0, 0.0, 1.0)],
            Frame::Global,
        )
        .unwrap();
        let kept = remove_hand_points(&pc, &Mask::full(640, 480), &k, &PoseSE3::identity()).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn hand_removal_mask_size_must_match() {
        let k = desk_k();
        let pc = PointCloud::new(vec![], Frame::Global).unwrap();
        assert!(matches!(
            remove_hand_points(&pc, &Mask::empty(10, 10), &k, &PoseSE3::identity()),
            Err(GeometryError::MaskSizeMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn pose_round_trip(yaw in -3.0f64..3.0, pitch in -1.5f64..1.5,
                           tx in -2.0f64..2.0, ty in -2.0f64..2.0, tz in -2.0f64..2.0,
                           px in -5.0f64..5.0, py in -5.0f64..5.0, pz in -5.0f64..5.0) {
            let pose = PoseSE3::new(rotation_y(yaw) * rotation_x(pitch), Vector3::new(tx, ty, tz)).unwrap();
            let pc = PointCloud::new(vec![Vector3::new(px, py, pz)], Frame::Camera).unwrap();
            let back = transform_points(&pose.inverse(), &transform_points(&pose, &pc));
            prop_assert!((back.points[0] - pc.points[0]).amax() < 1e-9);
            prop_assert_eq!(back.frame, Frame::Camera);
        }

        #[test]
        fn unproject_inverts_project(x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.1f64..5.0) {
            let k = desk_k();
            let p = Vector3::new(x, y, z);
            let proj = k.project(&p);
            prop_assert!((k.unproject(proj.uv, proj.depth) - p).amax() < 1e-9);
        }

        #[test]
        fn hand_removal_is_subset_and_idempotent(
            pts in prop::collection::vec((-0.5f64..0.5, -0.5f64..0.5, -0.2f64..2.0), 0..40),
            cu in 0.0f64..640.0, cv in 0.0f64..480.0, r in 0.0f64..200.0)
        {
            let k = desk_k();
            let pc = PointCloud::new(pts.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect(), Frame::Global).unwrap();
            let mut mask = Mask::empty(640, 480);
            mask.fill_disk([cu, cv], r);
            let once = remove_hand_points(&pc, &mask, &k, &PoseSE3::identity()).unwrap();
            prop_assert!(once.points.iter().all(|p| pc.points.contains(p)));
            let twice = remove_hand_points(&once, &mask, &k, &PoseSE3::identity()).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
