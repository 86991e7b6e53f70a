//! Mamba block, with optional egomotion conditioning of the scan parameters.
//!
//! ```text
//! u      = LN(z + temb)
//! x, g   = split(in_proj(u))
//! x      = silu(causal_conv(x))
//! s      = x + ego_proj(ego)               (EAM only)
//! dt,B,C = split(x_proj(s)),   Δ = softplus(dt_proj(dt))
//! y      = (scan(x; Δ, −exp(A_log), B, C) + D ⊙ x) ⊙ silu(g)
//! out    = z + out_proj(y)
//! ```
//!
//! The egomotion row enters only through `(Δ, B, C)`, so it shapes the state
//! transition at every step. With `ego ≡ 0` and a zero `ego_proj` bias the
//! block reduces exactly to the unconditioned one.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DenoiserError;
use crate::numerics::{
    causal_conv1d, selective_scan_var, uniform_init, Ctx, LayerNorm, Linear, ParamStore, Var,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MambaConfig {
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
    /// Rank of the Δ projection; `ceil(f/16)` when absent.
    #[serde(default)]
    pub dt_rank: Option<usize>,
}

impl Default for MambaConfig {
    fn default() -> Self {
        MambaConfig {
            d_state: 16,
            d_conv: 2,
            expand: 1,
            dt_rank: None,
        }
    }
}

impl MambaConfig {
    pub fn dt_rank(&self, f: usize) -> usize {
        self.dt_rank.unwrap_or(f.div_ceil(16)).max(1)
    }
}

#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub norm: LayerNorm,
    pub in_proj: Linear,
    pub conv_weight: String,
    pub conv_bias: String,
    pub x_proj: Linear,
    pub dt_proj: Linear,
    pub a_log: String,
    pub d_skip: String,
    pub out_proj: Linear,
    pub ego_proj: Option<Linear>,
    pub d_inner: usize,
    pub d_state: usize,
    pub dt_rank: usize,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl MambaBlock {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        f: usize,
        cfg: &MambaConfig,
        ego: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let d_inner = cfg.expand * f;
        let n = cfg.d_state;
        let r = cfg.dt_rank(f);
        let conv_weight = format!("{prefix}.conv.weight");
        let conv_bias = format!("{prefix}.conv.bias");
        store.insert(conv_weight.clone(), uniform_init(cfg.d_conv, d_inner, cfg.d_conv, rng));
        store.insert(conv_bias.clone(), uniform_init(1, d_inner, cfg.d_conv, rng));
        let dt_proj = Linear::new(store, &format!("{prefix}.dt_proj"), r, d_inner, true, rng);
        // Δ starts log-uniform in [1e-3, 1e-1]
        let bias = Array2::from_shape_fn((1, d_inner), |_| {
            let dt = (rng.random_range(1e-3f64.ln()..1e-1f64.ln())).exp();
            inverse_softplus(dt)
        });
        *store.get_mut(dt_proj.bias.as_ref().expect("dt_proj has a bias")).expect("inserted") = bias;
        let a_log = format!("{prefix}.A_log");
        store.insert(
            a_log.clone(),
            Array2::from_shape_fn((d_inner, n), |(_, j)| ((j + 1) as f64).ln()),
        );
        let d_skip = format!("{prefix}.D");
        store.insert(d_skip.clone(), Array2::ones((1, d_inner)));
        MambaBlock {
            norm: LayerNorm::new(store, &format!("{prefix}.norm"), f),
            in_proj: Linear::new(store, &format!("{prefix}.in_proj"), f, 2 * d_inner, false, rng),
            conv_weight,
            conv_bias,
            x_proj: Linear::new(store, &format!("{prefix}.x_proj"), d_inner, r + 2 * n, false, rng),
            dt_proj,
            a_log,
            d_skip,
            out_proj: Linear::new(store, &format!("{prefix}.out_proj"), d_inner, f, false, rng),
            ego_proj: ego.then(|| Linear::new(store, &format!("{prefix}.ego_proj"), f, d_inner, true, rng)),
            d_inner,
            d_state: n,
            dt_rank: r,
        }
    }

    /// `z`, `temb` and `ego` are `B·seg_len × f` stacks of sequences.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        z: Var<'t>,
        temb: Var<'t>,
        ego: Option<Var<'t>>,
        seg_len: usize,
    ) -> Result<Var<'t>, DenoiserError> {
        if let Some(e) = ego {
            if e.shape() != z.shape() {
                return Err(DenoiserError::ShapeMismatch {
                    what: "egomotion conditioning",
                    expected: z.shape(),
                    got: e.shape(),
                });
            }
        }
        let di = self.d_inner;
        let u = self.norm.forward(ctx, z.add(temb)?)?;
        let xz = self.in_proj.forward(ctx, u)?;
        let x = xz.slice_cols(0, di);
        let gate = xz.slice_cols(di, 2 * di);
        let x = causal_conv1d(x, ctx.param(&self.conv_weight), ctx.param(&self.conv_bias), seg_len)?.silu();
        let s = match (ego, &self.ego_proj) {
            (Some(e), Some(p)) => x.add(p.forward(ctx, e)?)?,
            _ => x,
        };
        let dbc = self.x_proj.forward(ctx, s)?;
        let r = self.dt_rank;
        let n = self.d_state;
        let delta = self.dt_proj.forward(ctx, dbc.slice_cols(0, r))?.softplus();
        let b = dbc.slice_cols(r, r + n);
        let c = dbc.slice_cols(r + n, r + 2 * n);
        let a = ctx.param(&self.a_log).neg_exp();
        let y = selective_scan_var(x, delta, a, b, c, seg_len)?;
        let y = y.add(x.mul_row(ctx.param(&self.d_skip))?)?;
        let y = y.mul(gate.silu())?;
        Ok(z.add(self.out_proj.forward(ctx, y)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{softplus, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn initial_delta(store: &ParamStore, block: &MambaBlock) -> Vec<f64> {
        let b = store.get(block.dt_proj.bias.as_ref().unwrap()).unwrap();
        b.iter().map(|&v| softplus(v)).collect()
    }

    fn block(f: usize, ego: bool) -> (ParamStore, MambaBlock, ChaCha8Rng) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = MambaBlock::new(&mut store, "blk", f, &MambaConfig::default(), ego, &mut rng);
        (store, b, rng)
    }

    fn run(store: &ParamStore, b: &MambaBlock, z: &Array2<f64>, ego: Option<&Array2<f64>>, seg: usize) -> Array2<f64> {
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, store);
        let temb = tape.constant(Array2::from_elem(z.dim(), 0.1));
        b.forward(&ctx, tape.constant(z.clone()), temb, ego.map(|e| tape.constant(e.clone())), seg)
            .unwrap()
            .to_array()
    }

    #[test]
    fn initial_delta_range() {
        let (store, b, _) = block(8, false);
        assert!(initial_delta(&store, &b).iter().all(|&d| (1e-3 - 1e-12..=1e-1 + 1e-12).contains(&d)));
    }

    #[test]
    fn shape_and_causality() {
        let (store, b, mut rng) = block(8, false);
        let z = uniform_init(10, 8, 1, &mut rng);
        let base = run(&store, &b, &z, None, 10);
        assert_eq!(base.dim(), (10, 8));
        for t in [0, 4, 9] {
            let mut moved = z.clone();
            moved[[t, 3]] += 0.5;
            let out = run(&store, &b, &moved, None, 10);
            for r in 0..10 {
                assert_eq!(out.row(r) == base.row(r), r < t, "perturb {t}, row {r}");
            }
        }
    }

    #[test]
    fn zero_ego_reduces_to_vanilla() {
        let (mut store, b, mut rng) = block(8, true);
        let bias = b.ego_proj.as_ref().unwrap().bias.clone().unwrap();
        store.get_mut(&bias).unwrap().fill(0.0);
        let z = uniform_init(6, 8, 1, &mut rng);
        let zero = Array2::zeros((6, 8));
        assert_eq!(run(&store, &b, &z, Some(&zero), 6), run(&store, &b, &z, None, 6));
    }

    #[test]
    fn ego_row_affects_only_later_rows() {
        let (store, b, mut rng) = block(8, true);
        let z = uniform_init(8, 8, 1, &mut rng);
        let ego = uniform_init(8, 8, 1, &mut rng);
        let base = run(&store, &b, &z, Some(&ego), 8);
        let mut moved = ego.clone();
        moved[[5, 0]] += 1.0;
        let out = run(&store, &b, &z, Some(&moved), 8);
        for r in 0..8 {
            assert_eq!(out.row(r) == base.row(r), r < 5, "row {r}");
        }
    }

    #[test]
    fn stacked_sequences_do_not_interact() {
        let (store, b, mut rng) = block(8, true);
        let z = uniform_init(12, 8, 1, &mut rng);
        let ego = uniform_init(12, 8, 1, &mut rng);
        let joint = run(&store, &b, &z, Some(&ego), 6);
        for s in 0..2 {
            let rows = ndarray::s![s * 6..(s + 1) * 6, ..];
            let alone = run(&store, &b, &z.slice(rows).to_owned(), Some(&ego.slice(rows).to_owned()), 6);
            assert_eq!(joint.slice(rows), alone);
        }
    }

    #[test]
    fn ego_shape_is_checked() {
        let (store, b, _) = block(8, true);
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, &store);
        let z = tape.constant(Array2::zeros((4, 8)));
        let bad = tape.constant(Array2::zeros((3, 8)));
        assert!(matches!(
            b.forward(&ctx, z, z, Some(bad), 4),
            Err(DenoiserError::ShapeMismatch { .. })
        ));
    }
}
