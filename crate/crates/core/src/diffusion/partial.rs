//! Forward noising restricted to the future suffix of each sequence.

use ndarray::{s, Array2};

use super::{DiffusionError, Schedule};
use crate::denoisers::SeqLayout;
use crate::numerics::{custom_op, Var};

/// Latent sequence whose first `anchor_len` rows are conditioning.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSeq {
    pub z: Array2<f64>,
    pub anchor_len: usize,
}

impl LatentSeq {
    pub fn new(z: Array2<f64>, anchor_len: usize) -> Result<Self, DiffusionError> {
        if anchor_len > z.nrows() {
            return Err(DiffusionError::ShapeMismatch {
                what: "anchor length",
                expected: (z.nrows(), z.ncols()),
                got: (anchor_len, z.ncols()),
            });
        }
        Ok(LatentSeq { z, anchor_len })
    }

    pub fn future_len(&self) -> usize {
        self.z.nrows() - self.anchor_len
    }
}

fn check_step(schedule: &Schedule, t: usize) -> Result<(), DiffusionError> {
    if t >= schedule.len() {
        return Err(DiffusionError::StepOutOfRange { t, t_total: schedule.len() });
    }
    Ok(())
}

/// `z_f ← √ᾱ_t·z0_f + √(1−ᾱ_t)·noise`; anchored rows copied verbatim.
pub fn q_sample_partial(
    z0: &LatentSeq,
    t: usize,
    noise: &Array2<f64>,
    schedule: &Schedule,
) -> Result<LatentSeq, DiffusionError> {
    check_step(schedule, t)?;
    let expected = (z0.future_len(), z0.z.ncols());
    if noise.dim() != expected {
        return Err(DiffusionError::ShapeMismatch {
            what: "noise",
            expected,
            got: noise.dim(),
        });
    }
    let (a, b) = (schedule.alpha_bar(t).sqrt(), (1.0 - schedule.alpha_bar(t)).sqrt());
    let mut z = z0.z.clone();
    let mut fut = z.slice_mut(s![z0.anchor_len.., ..]);
    fut.zip_mut_with(noise, |v, &e| *v = a * *v + b * e);
    Ok(LatentSeq {
        z,
        anchor_len: z0.anchor_len,
    })
}

/// Batched differentiable form of [`q_sample_partial`] over stacked
/// sequences, one step per sequence. `noise` holds the `B·N_f` future rows
/// in order.
pub fn partial_noise<'t>(
    z0: Var<'t>,
    layout: SeqLayout,
    steps: &[usize],
    noise: &Array2<f64>,
    schedule: &Schedule,
) -> Result<Var<'t>, DiffusionError> {
    let n = layout.len();
    let (rows, cols) = z0.shape();
    if rows != steps.len() * n {
        return Err(DiffusionError::ShapeMismatch {
            what: "stacked latents",
            expected: (steps.len() * n, cols),
            got: (rows, cols),
        });
    }
    if noise.dim() != (steps.len() * layout.n_future, cols) {
        return Err(DiffusionError::ShapeMismatch {
            what: "noise",
            expected: (steps.len() * layout.n_future, cols),
            got: noise.dim(),
        });
    }
    for &t in steps {
        check_step(schedule, t)?;
    }
    let scale: Vec<(f64, f64)> = steps
        .iter()
        .map(|&t| (schedule.alpha_bar(t).sqrt(), (1.0 - schedule.alpha_bar(t)).sqrt()))
        .collect();
    let mut value = z0.to_array();
    for (bi, &(a, b)) in scale.iter().enumerate() {
        for k in 0..layout.n_future {
            let r = bi * n + layout.n_past + k;
            let e = noise.row(bi * layout.n_future + k);
            value.row_mut(r).zip_mut_with(&e, |v, &e| *v = a * *v + b * e);
        }
    }
    Ok(custom_op(z0.tape(), value, &[z0], move |g, _| {
        let mut d = g.clone();
        for (bi, &(a, _)) in scale.iter().enumerate() {
            let start = bi * n + layout.n_past;
            d.slice_mut(s![start..start + layout.n_future, ..]).mapv_inplace(|v| v * a);
        }
        vec![Some(d)]
    }))
}

/// Row indices of the past and future parts of stacked sequences.
pub fn past_rows(layout: SeqLayout, batch: usize) -> Vec<usize> {
    (0..batch)
        .flat_map(|b| (0..layout.n_past).map(move |k| b * layout.len() + k))
        .collect()
}

pub fn future_rows(layout: SeqLayout, batch: usize) -> Vec<usize> {
    (0..batch)
        .flat_map(|b| (0..layout.n_future).map(move |k| b * layout.len() + layout.n_past + k))
        .collect()
}
