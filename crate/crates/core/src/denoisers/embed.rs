use ndarray::Array2;
use rand::Rng;

use crate::numerics::{Ctx, Mlp, NumericsError, ParamStore, Var};

/// `[sin(p·ω_0), cos(p·ω_0), sin(p·ω_1), …]` with `ω_i = 10000^(−2i/dim)`.
pub fn sinusoid(pos: f64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for i in 0..dim / 2 {
        let w = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        out[2 * i] = (pos * w).sin();
        out[2 * i + 1] = (pos * w).cos();
    }
    out
}

/// Positional encoding for time indices `−n_past+1 ..= n_future`, tiled for
/// `batch` stacked sequences.
pub fn time_encoding(n_past: usize, n_future: usize, dim: usize, batch: usize) -> Array2<f64> {
    let n = n_past + n_future;
    let mut pe = Array2::zeros((batch * n, dim));
    for t in 0..n {
        let row = sinusoid(t as f64 - n_past as f64 + 1.0, dim);
        for b in 0..batch {
            for (j, v) in row.iter().enumerate() {
                pe[[b * n + t, j]] = *v;
            }
        }
    }
    pe
}

/// Sinusoidal diffusion-step features passed through an MLP.
#[derive(Clone, Debug)]
pub struct StepEmbedding {
    pub mlp: Mlp,
    pub dim: usize,
}

impl StepEmbedding {
    pub fn new(store: &mut ParamStore, prefix: &str, f: usize, rng: &mut impl Rng) -> Self {
        StepEmbedding {
            mlp: Mlp::new(store, &format!("{prefix}.mlp"), f, f, f, rng),
            dim: f,
        }
    }

    /// One embedding per sequence, repeated over its `rows_per` rows.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        steps: &[usize],
        rows_per: usize,
    ) -> Result<Var<'t>, NumericsError> {
        let mut raw = Array2::zeros((steps.len(), self.dim));
        for (b, &t) in steps.iter().enumerate() {
            for (j, v) in sinusoid(t as f64, self.dim).into_iter().enumerate() {
                raw[[b, j]] = v;
            }
        }
        let e = self.mlp.forward(ctx, ctx.tape.constant(raw))?;
        let idx: Vec<usize> = (0..steps.len()).flat_map(|b| std::iter::repeat_n(b, rows_per)).collect();
        Ok(e.gather_rows(&idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_at_zero() {
        let v = sinusoid(0.0, 6);
        assert_eq!(v, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(sinusoid(3.0, 5)[4], 0.0);
    }

    #[test]
    fn time_encoding_is_tiled() {
        let pe = time_encoding(3, 2, 4, 2);
        assert_eq!(pe.nrows(), 10);
        for t in 0..5 {
            assert_eq!(pe.row(t), pe.row(t + 5));
        }
        // last past frame sits at time 0
        assert_eq!(pe.row(2).to_vec(), sinusoid(0.0, 4));
    }
}
