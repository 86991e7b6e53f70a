use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GeometryError, Intrinsics, Mat3, Vec3};

/// Projective map normalized so `h[2][2] = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    h: Mat3,
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            h: Matrix3::identity(),
        }
    }

    /// Rescales `h` so its bottom-right entry is 1.
    pub fn new(h: Mat3) -> Result<Self, GeometryError> {
        let s = h[(2, 2)];
        if !h.iter().all(|v| v.is_finite()) || s.abs() < 1e-12 * h.amax() || s == 0.0 {
            return Err(GeometryError::DegenerateConfiguration);
        }
        let h = h / s;
        if h.determinant().abs() < 1e-14 {
            return Err(GeometryError::DegenerateConfiguration);
        }
        Ok(Homography { h })
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.h
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self
            .h
            .try_inverse()
            .ok_or(GeometryError::DegenerateConfiguration)?;
        Homography::new(inv)
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Homography) -> Result<Self, GeometryError> {
        Homography::new(self.h * other.h)
    }

    /// Row-major entries.
    pub fn to_flat(&self) -> [f64; 9] {
        let h = &self.h;
        [
            h[(0, 0)],
            h[(0, 1)],
            h[(0, 2)],
            h[(1, 0)],
            h[(1, 1)],
            h[(1, 2)],
            h[(2, 0)],
            h[(2, 1)],
            h[(2, 2)],
        ]
    }

    pub fn from_flat(v: &[f64; 9]) -> Result<Self, GeometryError> {
        Homography::new(Matrix3::from_row_slice(v))
    }
}

pub fn apply_homography(h: &Homography, p: [f64; 2]) -> Result<[f64; 2], GeometryError> {
    let q = h.h * Vector3::new(p[0], p[1], 1.0);
    if q.z == 0.0 {
        return Err(GeometryError::PointAtInfinity);
    }
    let out = [q.x / q.z, q.y / q.z];
    if !(out[0].is_finite() && out[1].is_finite()) {
        return Err(GeometryError::PointAtInfinity);
    }
    Ok(out)
}

/// Matched pixel pairs `(source, destination)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Correspondences {
    pub pairs: Vec<([f64; 2], [f64; 2])>,
}

impl Correspondences {
    pub fn new(pairs: Vec<([f64; 2], [f64; 2])>) -> Self {
        Correspondences { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn subset(&self, idx: impl Iterator<Item = usize>) -> Self {
        Correspondences {
            pairs: idx.map(|i| self.pairs[i]).collect(),
        }
    }
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn hartley(points: impl Iterator<Item = [f64; 2]> + Clone) -> Mat3 {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (mx, my) = (sx / n, sy / n);
    let mean_dist = points
        .map(|p| ((p[0] - mx).powi(2) + (p[1] - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn transform(t: &Mat3, p: [f64; 2]) -> [f64; 2] {
    let q = t * Vector3::new(p[0], p[1], 1.0);
    [q.x / q.z, q.y / q.z]
}

/// Second-smallest singular value (relative to the largest) below which the
/// design matrix is treated as rank-deficient.
const RANK_TOL: f64 = 1e-9;

/// Normalized least-squares DLT.
pub fn estimate_homography_dlt(corr: &Correspondences) -> Result<Homography, GeometryError> {
    let n = corr.len();
    if n < 4 {
        return Err(GeometryError::TooFewCorrespondences { got: n });
    }
    let ts = hartley(corr.pairs.iter().map(|p| p.0));
    let td = hartley(corr.pairs.iter().map(|p| p.1));
    // Pad to at least 9 rows so the SVD yields a full V.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, &(s, d)) in corr.pairs.iter().enumerate() {
        let [x, y] = transform(&ts, s);
        let [u, v] = transform(&td, d);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    if sv(0) == 0.0 || sv(7) / sv(0) < RANK_TOL {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let null = v_t.row(order[8]);
    let hn = Matrix3::from_row_slice(&null.iter().copied().collect::<Vec<_>>());
    let td_inv = td
        .try_inverse()
        .ok_or(GeometryError::DegenerateConfiguration)?;
    Homography::new(td_inv * hn * ts)
}

fn transfer_error(h: &Homography, pair: &([f64; 2], [f64; 2])) -> f64 {
    match apply_homography(h, pair.0) {
        Ok(q) => ((q[0] - pair.1[0]).powi(2) + (q[1] - pair.1[1]).powi(2)).sqrt(),
        Err(_) => f64::INFINITY,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    pub threshold_px: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            threshold_px: 3.0,
            max_iters: 2000,
            seed: 0,
        }
    }
}

/// 4-point RANSAC, then a DLT refit on the consensus set. The returned mask is
/// the consensus of the refit model.
pub fn estimate_homography_ransac(
    corr: &Correspondences,
    threshold_px: f64,
    max_iters: usize,
    rng_seed: u64,
) -> Result<(Homography, Vec<bool>), GeometryError> {
    let n = corr.len();
    if n < 4 {
        return Err(GeometryError::TooFewCorrespondences { got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let consensus = |h: &Homography| -> (Vec<bool>, usize, f64) {
        let mut mask = vec![false; n];
        let mut count = 0;
        let mut err_sum = 0.0;
        for (m, pair) in mask.iter_mut().zip(&corr.pairs) {
            let e = transfer_error(h, pair);
            if e < threshold_px {
                *m = true;
                count += 1;
                err_sum += e;
            }
        }
        (mask, count, err_sum)
    };
    let mut best: Option<(Vec<bool>, usize, f64)> = None;
    for _ in 0..max_iters {
        let idx = sample(&mut rng, n, 4);
        let Ok(h) = estimate_homography_dlt(&corr.subset(idx.into_iter())) else {
            continue;
        };
        let (mask, count, err) = consensus(&h);
        let better = match &best {
            None => true,
            Some((_, c, e)) => count > *c || (count == *c && err < *e),
        };
        if better {
            best = Some((mask, count, err));
            if count == n {
                break;
            }
        }
    }
    let (mask, count, _) = best.ok_or(GeometryError::NoConsensus { inliers: 0 })?;
    if count < 4 {
        return Err(GeometryError::NoConsensus { inliers: count });
    }
    let refit = |mask: &[bool]| {
        estimate_homography_dlt(&corr.subset((0..n).filter(|&i| mask[i])))
    };
    let h = refit(&mask)?;
    let (mask2, count2, _) = consensus(&h);
    if count2 < 4 {
        return Err(GeometryError::NoConsensus { inliers: count2 });
    }
    Ok((h, mask2))
}

/// `K (R − t nᵀ / d) K⁻¹` for the plane `nᵀX + d = 0` in the source camera
/// frame, where the destination camera sees `X' = R X + t`.
pub fn homography_from_camera_motion(
    k: &Intrinsics,
    r: &Mat3,
    t: &Vec3,
    plane_normal: &Vec3,
    plane_depth: f64,
) -> Result<Homography, GeometryError> {
    if !(plane_depth > 0.0) || !plane_depth.is_finite() {
        return Err(GeometryError::InvalidPlane {
            depth: plane_depth,
        });
    }
    let m = r - t * plane_normal.transpose() / plane_depth;
    Homography::new(k.matrix() * m * k.inverse_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::camera::{rotation_x, rotation_y};
    use rand::Rng;

    fn reproj(h: &Homography, corr: &Correspondences) -> f64 {
        corr.pairs
            .iter()
            .map(|p| transfer_error(h, p))
            .fold(0.0, f64::max)
    }

    fn random_h(rng: &mut impl Rng) -> Homography {
        let mut m = Matrix3::identity();
        for v in m.iter_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
        m[(0, 2)] = rng.random_range(-30.0..30.0);
        m[(1, 2)] = rng.random_range(-30.0..30.0);
        m[(2, 0)] = rng.random_range(-1e-4..1e-4);
        m[(2, 1)] = rng.random_range(-1e-4..1e-4);
        Homography::new(m).unwrap()
    }

    fn pairs_from(h: &Homography, n: usize, rng: &mut impl Rng) -> Correspondences {
        Correspondences::new(
            (0..n)
                .map(|_| {
                    let p = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
                    (p, apply_homography(h, p).unwrap())
                })
                .collect(),
        )
    }

    #[test]
    fn dlt_identity() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let corr = Correspondences::new(pts.iter().map(|&p| (p, p)).collect());
        let h = estimate_homography_dlt(&corr).unwrap();
        assert!((h.matrix() - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn dlt_pure_scaling() {
        let corr = Correspondences::new(vec![
            ([1.0, 1.0], [2.0, 2.0]),
            ([1.0, 2.0], [2.0, 4.0]),
            ([2.0, 1.0], [4.0, 2.0]),
            ([3.0, 3.0], [6.0, 6.0]),
        ]);
        let h = estimate_homography_dlt(&corr).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 1.0));
        assert!((h.matrix() - expected).amax() < 1e-12);
    }

    #[test]
    fn dlt_recovers_random_homography() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let h = random_h(&mut rng);
            let corr = pairs_from(&h, 8, &mut rng);
            let est = estimate_homography_dlt(&corr).unwrap();
            assert!(reproj(&est, &corr) < 1e-6);
        }
    }

    #[test]
    fn dlt_rejects_collinear_points() {
        let corr = Correspondences::new(
            (0..5)
                .map(|i| ([i as f64, 2.0 * i as f64], [i as f64, 2.0 * i as f64]))
                .collect(),
        );
        assert_eq!(
            estimate_homography_dlt(&corr),
            Err(GeometryError::DegenerateConfiguration)
        );
    }

    #[test]
    fn dlt_is_covariant_under_similarities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_h(&mut rng);
        let corr = pairs_from(&h, 12, &mut rng);
        let (a, b) = (0.7f64, -0.4f64);
        let s1 = Matrix3::new(1.5 * a.cos(), -1.5 * a.sin(), 40.0, 1.5 * a.sin(), 1.5 * a.cos(), -7.0, 0.0, 0.0, 1.0);
        let s2 = Matrix3::new(0.5 * b.cos(), -0.5 * b.sin(), -3.0, 0.5 * b.sin(), 0.5 * b.cos(), 12.0, 0.0, 0.0, 1.0);
        let moved = Correspondences::new(
            corr.pairs
                .iter()
                .map(|&(p, q)| (transform(&s1, p), transform(&s2, q)))
                .collect(),
        );
        let hm = estimate_homography_dlt(&moved).unwrap();
        let back = Homography::new(s2.try_inverse().unwrap() * hm.matrix() * s1).unwrap();
        assert!((back.matrix() - h.matrix()).norm() < 1e-6);
    }

    #[test]
    fn apply_examples() {
        let id = Homography::identity();
        assert_eq!(apply_homography(&id, [3.0, 4.0]).unwrap(), [3.0, 4.0]);
        let s = Homography::new(Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 1.0))).unwrap();
        assert_eq!(apply_homography(&s, [1.0, 1.0]).unwrap(), [2.0, 2.0]);
        let h = Homography::new(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0)).unwrap();
        assert_eq!(apply_homography(&h, [-1.0, 0.0]), Err(GeometryError::PointAtInfinity));
    }

    #[test]
    fn apply_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let h = random_h(&mut rng);
            let inv = h.inverse().unwrap();
            let p = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
            let q = apply_homography(&inv, apply_homography(&h, p).unwrap()).unwrap();
            assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn ransac_without_outliers_matches_dlt() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_h(&mut rng);
        let corr = pairs_from(&h, 20, &mut rng);
        let (est, mask) = estimate_homography_ransac(&corr, 3.0, 2000, 9).unwrap();
        assert!(mask.iter().all(|&m| m));
        assert!(reproj(&est, &corr) < 1e-6);
    }

    #[test]
    fn ransac_finds_planted_inliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_h(&mut rng);
        let mut corr = pairs_from(&h, 20, &mut rng);
        for _ in 0..8 {
            let p = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
            let q = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)];
            corr.pairs.push((p, q));
        }
        let (est, mask) = estimate_homography_ransac(&corr, 3.0, 2000, 11).unwrap();
        let planted: Vec<bool> = (0..28).map(|i| i < 20).collect();
        assert_eq!(mask, planted);
        assert!(reproj(&est, &corr.subset(0..20)) < 0.5);
    }

    #[test]
    fn ransac_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_h(&mut rng);
        let mut corr = pairs_from(&h, 15, &mut rng);
        corr.pairs.push(([1.0, 1.0], [300.0, 5.0]));
        let a = estimate_homography_ransac(&corr, 3.0, 100, 42).unwrap();
        let b = estimate_homography_ransac(&corr, 3.0, 100, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ransac_needs_four_pairs() {
        let corr = Correspondences::new(vec![([0.0, 0.0], [0.0, 0.0]); 3]);
        assert_eq!(
            estimate_homography_ransac(&corr, 3.0, 10, 0),
            Err(GeometryError::TooFewCorrespondences { got: 3 })
        );
    }

    fn desk_k() -> Intrinsics {
        Intrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn camera_motion_special_cases() {
        let k = desk_k();
        let n = Vector3::new(0.0, 0.0, -1.0);
        let h = homography_from_camera_motion(&k, &Matrix3::identity(), &Vector3::zeros(), &n, 1.0).unwrap();
        assert!((h.matrix() - Matrix3::identity()).amax() < 1e-12);
        let r = rotation_y(0.2) * rotation_x(0.1);
        let h = homography_from_camera_motion(&k, &r, &Vector3::zeros(), &n, 1.0).unwrap();
        let krk = Homography::new(k.matrix() * r * k.inverse_matrix()).unwrap();
        assert!((h.matrix() - krk.matrix()).amax() < 1e-12);
        assert!(matches!(
            homography_from_camera_motion(&k, &r, &Vector3::zeros(), &n, 0.0),
            Err(GeometryError::InvalidPlane { .. })
        ));
    }

    #[test]
    fn camera_motion_agrees_with_two_view_projection() {
        let k = desk_k();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let r = rotation_y(rng.random_range(-0.3..0.3)) * rotation_x(rng.random_range(-0.3..0.3));
            let t = Vector3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
            );
            let n = (Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), -1.0)).normalize();
            let d = rng.random_range(0.5..2.0);
            let h = homography_from_camera_motion(&k, &r, &t, &n, d).unwrap();
            for _ in 0..10 {
                // ray through a random pixel, intersected with the plane
                let ray = k.unproject([rng.random_range(100.0..540.0), rng.random_range(100.0..380.0)], 1.0);
                let x = ray * (-d / n.dot(&ray));
                let p0 = k.project(&x);
                let p1 = k.project(&(r * x + t));
                let mapped = apply_homography(&h, p0.uv).unwrap();
                assert!((mapped[0] - p1.uv[0]).abs() < 1e-6 && (mapped[1] - p1.uv[1]).abs() < 1e-6);
            }
        }
    }
}
