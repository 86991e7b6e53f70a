//! Reverse process over the future suffix with the past prefix held fixed.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{future_rows, respace_steps, DiffusionError, Schedule};
use crate::denoisers::{Hmtm, SeqLayout, VoxelTokens, Vm};
use crate::numerics::{Ctx, ParamStore, Tape, Var};

/// Anything that maps noisy stacked latents to a clean estimate.
pub trait Denoiser {
    fn predict_x0<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        z: Var<'t>,
        steps: &[usize],
        layout: SeqLayout,
    ) -> Result<Var<'t>, DiffusionError>;
}

impl Denoiser for Vm {
    fn predict_x0<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        z: Var<'t>,
        steps: &[usize],
        layout: SeqLayout,
    ) -> Result<Var<'t>, DiffusionError> {
        Ok(self.forward(ctx, z, steps, layout)?)
    }
}

/// HTP denoiser with its conditioning frozen for sampling.
#[derive(Clone, Copy, Debug)]
pub struct ConditionedHmtm<'a> {
    pub hmtm: &'a Hmtm,
    /// Egomotion condition, same shape as the latents.
    pub ego: Option<&'a Array2<f64>>,
    /// Voxel tokens and tokens per sample.
    pub voxels: Option<(&'a Array2<f64>, usize)>,
}

impl Denoiser for ConditionedHmtm<'_> {
    fn predict_x0<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        z: Var<'t>,
        steps: &[usize],
        layout: SeqLayout,
    ) -> Result<Var<'t>, DiffusionError> {
        let ego = self.ego.map(|e| ctx.tape.constant(e.clone()));
        let voxels = self.voxels.map(|(v, per)| VoxelTokens {
            tokens: ctx.tape.constant(v.clone()),
            per_sample: per,
        });
        Ok(self.hmtm.forward(ctx, z, steps, layout, ego, voxels)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    /// `B·N_f × f` final future latents.
    pub future: Array2<f64>,
    /// Working latent before every reverse step and after the last one,
    /// when tracing was requested.
    pub trace: Vec<Array2<f64>>,
}

/// Interleaves per-sequence past and future blocks into one stack.
pub fn assemble(past: &Array2<f64>, future: &Array2<f64>, layout: SeqLayout) -> Array2<f64> {
    let batch = past.nrows() / layout.n_past.max(1);
    let mut z = Array2::zeros((batch * layout.len(), past.ncols()));
    for b in 0..batch {
        for k in 0..layout.n_past {
            z.row_mut(b * layout.len() + k).assign(&past.row(b * layout.n_past + k));
        }
        for k in 0..layout.n_future {
            z.row_mut(b * layout.len() + layout.n_past + k)
                .assign(&future.row(b * layout.n_future + k));
        }
    }
    z
}

fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Ancestral sampling over `respace_steps(T, k)`. Future rows start from
/// `N(0, I)`; each step predicts `z0`, then draws from the posterior between
/// consecutive respaced steps. The last step returns the prediction itself.
#[allow(clippy::too_many_arguments)]
pub fn sample_partial(
    denoiser: &impl Denoiser,
    store: &ParamStore,
    schedule: &Schedule,
    past: &Array2<f64>,
    layout: SeqLayout,
    k: usize,
    seed: u64,
    trace: bool,
) -> Result<SampleOutput, DiffusionError> {
    if layout.n_past == 0 || !past.nrows().is_multiple_of(layout.n_past) || past.nrows() == 0 {
        return Err(DiffusionError::ShapeMismatch {
            what: "past latents",
            expected: (layout.n_past, past.ncols()),
            got: past.dim(),
        });
    }
    let batch = past.nrows() / layout.n_past;
    let f = past.ncols();
    let steps = respace_steps(schedule.len(), k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut zf = randn(batch * layout.n_future, f, &mut rng);
    let fut_idx = future_rows(layout, batch);
    let mut states = Vec::new();
    for (i, &t) in steps.iter().enumerate() {
        let z = assemble(past, &zf, layout);
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, store);
        let x0 = denoiser.predict_x0(&ctx, tape.constant(z.clone()), &vec![t; batch], layout)?;
        if x0.shape() != z.dim() {
            return Err(DiffusionError::ShapeMismatch {
                what: "denoiser output",
                expected: z.dim(),
                got: x0.shape(),
            });
        }
        if trace {
            states.push(z);
        }
        let x0f = x0.gather_rows(&fut_idx).to_array();
        zf = match steps.get(i + 1) {
            None => x0f,
            Some(&prev) => {
                let (c0, ct, var) = schedule.posterior(t, prev);
                let noise = randn(zf.nrows(), f, &mut rng);
                x0f * c0 + &zf * ct + noise * var.sqrt()
            }
        };
    }
    if trace {
        states.push(assemble(past, &zf, layout));
    }
    Ok(SampleOutput { future: zf, trace: states })
}

/// One-pass egomotion sampling (`k = 1`) or a respaced chain for `k > 1`.
pub fn sample_egomotion(
    vm: &impl Denoiser,
    store: &ParamStore,
    schedule: &Schedule,
    ego_past: &Array2<f64>,
    layout: SeqLayout,
    k: usize,
    seed: u64,
) -> Result<Array2<f64>, DiffusionError> {
    Ok(sample_partial(vm, store, schedule, ego_past, layout, k, seed, false)?.future)
}

#[allow(clippy::too_many_arguments)]
pub fn sample_htp(
    hmtm: &ConditionedHmtm<'_>,
    store: &ParamStore,
    schedule: &Schedule,
    htp_past: &Array2<f64>,
    layout: SeqLayout,
    k: usize,
    seed: u64,
    trace: bool,
) -> Result<SampleOutput, DiffusionError> {
    sample_partial(hmtm, store, schedule, htp_past, layout, k, seed, trace)
}
