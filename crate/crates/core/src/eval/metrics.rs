use super::EvalError;
use crate::geometry::{Intrinsics, PoseSE3, Vec3};

fn check(pred: usize, gt: usize) -> Result<(), EvalError> {
    if pred != gt {
        return Err(EvalError::LengthMismatch { pred, gt });
    }
    if pred == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Mean Euclidean distance over aligned waypoints.
pub fn ade(pred: &[Vec3], gt: &[Vec3]) -> Result<f64, EvalError> {
    check(pred.len(), gt.len())?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).sum::<f64>() / pred.len() as f64)
}

/// Distance between the final waypoints.
pub fn fde(pred: &[Vec3], gt: &[Vec3]) -> Result<f64, EvalError> {
    check(pred.len(), gt.len())?;
    Ok((pred[pred.len() - 1] - gt[gt.len() - 1]).norm())
}

/// Per-frame `(u / width, v / height)` of global waypoints seen from
/// `poses[t]` (`cam_from_global`); `None` where the point is not in front of
/// the camera. Out-of-image points keep their (out-of-range) coordinates.
pub fn to_2d_normalized(
    waypoints: &[Vec3],
    k: &Intrinsics,
    poses: &[PoseSE3],
) -> Result<Vec<Option<[f64; 2]>>, EvalError> {
    if waypoints.len() != poses.len() {
        return Err(EvalError::Count {
            what: "camera poses",
            expected: waypoints.len(),
            got: poses.len(),
        });
    }
    Ok(waypoints
        .iter()
        .zip(poses)
        .map(|(w, pose)| {
            let p = k.project(&pose.apply(w));
            p.valid
                .then(|| [p.uv[0] / k.width as f64, p.uv[1] / k.height as f64])
        })
        .collect())
}

fn valid_pairs(pred: &[Option<[f64; 2]>], gt: &[Option<[f64; 2]>]) -> Result<(Vec<f64>, usize), EvalError> {
    check(pred.len(), gt.len())?;
    let mut dists = Vec::new();
    let mut excluded = 0;
    for (p, g) in pred.iter().zip(gt) {
        match (p, g) {
            (Some(p), Some(g)) => dists.push(((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt()),
            _ => excluded += 1,
        }
    }
    Ok((dists, excluded))
}

/// 2D ADE over pairs where both projections are valid, and the number of
/// excluded pairs; `None` when every pair is excluded.
pub fn ade_2d(pred: &[Option<[f64; 2]>], gt: &[Option<[f64; 2]>]) -> Result<(Option<f64>, usize), EvalError> {
    let (d, excluded) = valid_pairs(pred, gt)?;
    let mean = (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64);
    Ok((mean, excluded))
}

/// 2D FDE at the last frame; `None` when that pair is excluded.
pub fn fde_2d(pred: &[Option<[f64; 2]>], gt: &[Option<[f64; 2]>]) -> Result<Option<f64>, EvalError> {
    check(pred.len(), gt.len())?;
    let n = pred.len() - 1;
    Ok(match (pred[n], gt[n]) {
        (Some(p), Some(g)) => Some(((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt()),
        _ => None,
    })
}
