use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::numerics::{custom_op, Tape, Var};

/// Displacement vectors shorter than this are left out of the angle loss.
pub const MIN_DISPLACEMENT: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub vlb_ego: f64,
    pub vlb_htp: f64,
    pub dis: f64,
    pub reg: f64,
    pub angle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            vlb_ego: 1.0,
            vlb_htp: 1.0,
            dis: 1.0,
            reg: 1.0,
            angle: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let w = [self.vlb_ego, self.vlb_htp, self.dis, self.reg, self.angle];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DiffusionError::InvalidConfig(format!("loss weights must be finite and nonnegative: {w:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_vlb_ego: f64,
    pub l_vlb_htp: f64,
    pub l_dis: f64,
    pub l_reg: f64,
    pub l_angle: f64,
    pub total: f64,
}

/// Differentiable loss terms of one step; absent terms count as zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms<'t> {
    pub vlb_ego: Option<Var<'t>>,
    pub vlb_htp: Option<Var<'t>>,
    pub dis: Option<Var<'t>>,
    pub reg: Option<Var<'t>>,
    pub angle: Option<Var<'t>>,
}

impl<'t> LossTerms<'t> {
    /// Weighted sum as a tape scalar plus the evaluated bundle. `None` when
    /// every term is absent or has zero weight.
    pub fn combine(&self, w: &LossWeights) -> (Option<Var<'t>>, LossBundle) {
        let parts = [
            (self.vlb_ego, w.vlb_ego),
            (self.vlb_htp, w.vlb_htp),
            (self.dis, w.dis),
            (self.reg, w.reg),
            (self.angle, w.angle),
        ];
        let val = |v: Option<Var<'t>>| v.map_or(0.0, |v| v.scalar());
        let mut total: Option<Var<'t>> = None;
        let mut total_val = 0.0;
        for (v, weight) in parts {
            if let Some(v) = v {
                if weight != 0.0 {
                    total_val += weight * v.scalar();
                    let term = v.scale(weight);
                    total = Some(match total {
                        Some(t) => t.add(term).expect("scalars"),
                        None => term,
                    });
                }
            }
        }
        let bundle = LossBundle {
            l_vlb_ego: val(self.vlb_ego),
            l_vlb_htp: val(self.vlb_htp),
            l_dis: val(self.dis),
            l_reg: val(self.reg),
            l_angle: val(self.angle),
            total: total_val,
        };
        (total, bundle)
    }
}

fn same_shape(what: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(), DiffusionError> {
    if a != b {
        return Err(DiffusionError::ShapeMismatch { what, expected: b, got: a });
    }
    Ok(())
}

pub fn mse<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>, DiffusionError> {
    same_shape("mse operands", pred.shape(), target.shape())?;
    Ok(pred.sub(target)?.square().mean())
}

/// Mean Euclidean distance between matching rows. The subgradient at a
/// zero residual is zero.
pub fn displacement_loss<'t>(pred: Var<'t>, gt: &Array2<f64>) -> Result<Var<'t>, DiffusionError> {
    same_shape("waypoints", pred.shape(), gt.dim())?;
    let diff = &*pred.value() - gt;
    let norms: Vec<f64> = diff.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).collect();
    let r = gt.nrows().max(1) as f64;
    let value = Array2::from_elem((1, 1), norms.iter().sum::<f64>() / r);
    Ok(custom_op(pred.tape(), value, &[pred], move |g, _| {
        let mut d = diff.clone();
        for (mut row, &n) in d.axis_iter_mut(Axis(0)).zip(&norms) {
            let k = if n > 0.0 { g[[0, 0]] / (n * r) } else { 0.0 };
            row.mapv_inplace(|v| v * k);
        }
        vec![Some(d)]
    }))
}

/// Mean `1 − cos` between successive displacement vectors of predicted and
/// true future waypoints, per sequence of `n_future` rows. Pairs where
/// either vector is shorter than [`MIN_DISPLACEMENT`] are skipped.
pub fn angle_loss<'t>(pred: Var<'t>, gt: &Array2<f64>, n_future: usize) -> Result<Var<'t>, DiffusionError> {
    same_shape("waypoints", pred.shape(), gt.dim())?;
    if n_future == 0 || !gt.nrows().is_multiple_of(n_future) || gt.ncols() != 3 {
        return Err(DiffusionError::ShapeMismatch {
            what: "future waypoint stack",
            expected: (n_future, 3),
            got: gt.dim(),
        });
    }
    let p = pred.to_array();
    // (later row, pred displacement, gt displacement, norms, cos, loss)
    let mut pairs = Vec::new();
    for b in 0..gt.nrows() / n_future {
        for k in 1..n_future {
            let r = b * n_future + k;
            let a = &p.row(r) - &p.row(r - 1);
            let t = &gt.row(r) - &gt.row(r - 1);
            let (na, nt) = (a.dot(&a).sqrt(), t.dot(&t).sqrt());
            if na < MIN_DISPLACEMENT || nt < MIN_DISPLACEMENT {
                continue;
            }
            let cos = a.dot(&t) / (na * nt);
            // ½‖â − t̂‖² = 1 − cos, exactly zero for parallel vectors
            let gap = &a / na - &t / nt;
            pairs.push((r, a, t, na, nt, cos, 0.5 * gap.dot(&gap)));
        }
    }
    let count = pairs.len();
    let loss = if count == 0 {
        0.0
    } else {
        pairs.iter().map(|q| q.6).sum::<f64>() / count as f64
    };
    let rows = p.nrows();
    Ok(custom_op(pred.tape(), Array2::from_elem((1, 1), loss), &[pred], move |g, _| {
        let mut d = Array2::zeros((rows, 3));
        let k = g[[0, 0]] / count.max(1) as f64;
        for (r, a, t, na, nt, cos, _) in &pairs {
            // ∂cos/∂a = t/(|a||t|) − cos·a/|a|²
            let dcos = t / (na * nt) - a * (cos / (na * na));
            let da = dcos * -k;
            let mut later = d.row_mut(*r);
            later += &da;
            let mut earlier = d.row_mut(r - 1);
            earlier -= &da;
        }
        vec![Some(d)]
    }))
}

/// Evaluated inputs for [`compute_losses`].
#[derive(Clone, Debug)]
pub struct LossInputs<'a> {
    pub pred_ego: Option<(&'a Array2<f64>, &'a Array2<f64>)>,
    pub pred_htp: (&'a Array2<f64>, &'a Array2<f64>),
    pub reg: Option<(&'a Array2<f64>, &'a Array2<f64>)>,
    pub decoded: &'a Array2<f64>,
    pub gt_waypoints: &'a Array2<f64>,
    pub n_future: usize,
}

/// Loss bundle for precomputed predictions and targets.
pub fn compute_losses(inputs: &LossInputs<'_>, weights: &LossWeights) -> Result<LossBundle, DiffusionError> {
    weights.validate()?;
    let tape = Tape::inference();
    let c = |a: &Array2<f64>| tape.constant(a.clone());
    let pair = |p: Option<(&Array2<f64>, &Array2<f64>)>| -> Result<Option<Var<'_>>, DiffusionError> {
        p.map(|(a, b)| mse(c(a), c(b))).transpose()
    };
    let terms = LossTerms {
        vlb_ego: pair(inputs.pred_ego)?,
        vlb_htp: pair(Some(inputs.pred_htp))?,
        dis: Some(displacement_loss(c(inputs.decoded), inputs.gt_waypoints)?),
        reg: pair(inputs.reg)?,
        angle: Some(angle_loss(c(inputs.decoded), inputs.gt_waypoints, inputs.n_future)?),
    };
    Ok(terms.combine(weights).1)
}
