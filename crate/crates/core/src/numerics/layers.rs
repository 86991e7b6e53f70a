use ndarray::Array2;
use rand::Rng;

use super::params::{uniform_init, Ctx, ParamStore};
use super::tape::Var;
use super::NumericsError;

/// `y = x·W + b` for `x: n×din`, `W: din×dout`, `b: 1×dout`.
pub fn affine_map<'t>(
    x: Var<'t>,
    w: Var<'t>,
    b: Option<Var<'t>>,
) -> Result<Var<'t>, NumericsError> {
    let y = x.matmul(w)?;
    match b {
        Some(b) => y.add_row(b),
        None => Ok(y),
    }
}

/// Per-row standardization followed by the `gamma`/`beta` affine.
pub fn layer_norm<'t>(
    x: Var<'t>,
    gamma: Var<'t>,
    beta: Var<'t>,
    eps: f64,
) -> Result<Var<'t>, NumericsError> {
    x.normalize_rows(eps).mul_row(gamma)?.add_row(beta)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: String,
    pub bias: Option<String>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = format!("{prefix}.weight");
        store.insert(weight.clone(), uniform_init(d_in, d_out, d_in, rng));
        let bias = bias.then(|| {
            let name = format!("{prefix}.bias");
            store.insert(name.clone(), uniform_init(1, d_out, d_in, rng));
            name
        });
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    /// Linear layer whose weight and bias start at zero.
    pub fn zeros(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize) -> Self {
        let weight = format!("{prefix}.weight");
        store.insert(weight.clone(), Array2::zeros((d_in, d_out)));
        let bias = format!("{prefix}.bias");
        store.insert(bias.clone(), Array2::zeros((1, d_out)));
        Linear {
            weight,
            bias: Some(bias),
            d_in,
            d_out,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>, NumericsError> {
        let w = ctx.param(&self.weight);
        let b = self.bias.as_deref().map(|n| ctx.param(n));
        affine_map(x, w, b)
    }
}

/// Two-layer perceptron with a SiLU hidden activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Mlp {
            hidden: Linear::new(store, &format!("{prefix}.0"), d_in, d_hidden, true, rng),
            out: Linear::new(store, &format!("{prefix}.1"), d_hidden, d_out, true, rng),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>, NumericsError> {
        let h = self.hidden.forward(ctx, x)?.silu();
        self.out.forward(ctx, h)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        let gamma = format!("{prefix}.gamma");
        let beta = format!("{prefix}.beta");
        store.insert(gamma.clone(), Array2::ones((1, d)));
        store.insert(beta.clone(), Array2::zeros((1, d)));
        LayerNorm {
            gamma,
            beta,
            eps: 1e-5,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>, NumericsError> {
        layer_norm(x, ctx.param(&self.gamma), ctx.param(&self.beta), self.eps)
    }
}
