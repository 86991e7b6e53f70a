use rand::Rng;

use super::EncoderError;
use crate::numerics::{concat_cols, Ctx, Linear, Mlp, ParamStore, Var};

/// Per-row standardization applied to every diffused latent.
pub const LATENT_EPS: f64 = 1e-5;

/// Hand/vision fusion: waypoint MLP and a projection of `X_sem`, joined
/// along channels, then a pointwise (1×1) linear map and an MLP. Rows never
/// mix. Output rows are standardized (zero mean, unit variance) so the
/// latent scale matches the unit-variance diffusion noise.
#[derive(Clone, Debug)]
pub struct FusionModule {
    pub traj: Mlp,
    pub sem: Linear,
    pub mix: Linear,
    pub out: Mlp,
    pub x: usize,
    pub f: usize,
}

impl FusionModule {
    pub fn new(store: &mut ParamStore, prefix: &str, x: usize, f: usize, rng: &mut impl Rng) -> Self {
        FusionModule {
            traj: Mlp::new(store, &format!("{prefix}.traj"), 3, f, f, rng),
            sem: Linear::new(store, &format!("{prefix}.sem"), x, f, true, rng),
            mix: Linear::new(store, &format!("{prefix}.mix"), 2 * f, f, true, rng),
            out: Mlp::new(store, &format!("{prefix}.out"), f, f, f, rng),
            x,
            f,
        }
    }

    /// `waypoints`: `R × 3`; `x_sem`: `R × x`. Returns `R × f` latents.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        waypoints: Var<'t>,
        x_sem: Var<'t>,
    ) -> Result<Var<'t>, EncoderError> {
        if waypoints.rows() != x_sem.rows() {
            return Err(EncoderError::LengthMismatch {
                what: "waypoint rows vs X_sem rows",
                expected: waypoints.rows(),
                got: x_sem.rows(),
            });
        }
        if waypoints.cols() != 3 || x_sem.cols() != self.x {
            return Err(EncoderError::LengthMismatch {
                what: "fusion input width",
                expected: self.x,
                got: x_sem.cols(),
            });
        }
        let tr = self.traj.forward(ctx, waypoints)?;
        let se = self.sem.forward(ctx, x_sem)?;
        let joined = concat_cols(&[tr, se])?;
        let mixed = self.mix.forward(ctx, joined)?.silu();
        Ok(self.out.forward(ctx, mixed)?.normalize_rows(LATENT_EPS))
    }
}

/// Row-wise MLP from latents to 3D waypoints.
#[derive(Clone, Debug)]
pub struct TrajectoryDecoder {
    pub mlp: Mlp,
}

impl TrajectoryDecoder {
    pub fn new(store: &mut ParamStore, prefix: &str, f: usize, rng: &mut impl Rng) -> Self {
        TrajectoryDecoder {
            mlp: Mlp::new(store, &format!("{prefix}.mlp"), f, f, 3, rng),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, latents: Var<'t>) -> Result<Var<'t>, EncoderError> {
        Ok(self.mlp.forward(ctx, latents)?)
    }
}
