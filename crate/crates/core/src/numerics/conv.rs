//! Convolutions.
//!
//! Volumes are `cells × channels` matrices whose rows enumerate cells with
//! x fastest, then y, then z. A 3-D convolution is an im2col gather followed
//! by a matrix product, which keeps the backward pass to a scatter-add.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;

use super::params::{uniform_init, Ctx, ParamStore};
use super::tape::{custom_op, Var};
use super::NumericsError;

/// Spatial extent `(x, y, z)`.
pub type Dims3 = (usize, usize, usize);

/// `floor((n + 2p − k) / s) + 1`, or `None` when non-positive.
pub fn conv_out_dim(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = n + 2 * p;
    if s == 0 || padded < k {
        return None;
    }
    Some((padded - k) / s + 1)
}

fn cell(dims: Dims3, x: usize, y: usize, z: usize) -> usize {
    x + dims.0 * (y + dims.1 * z)
}

/// Gather matrix for a cubic kernel. Output is
/// `out_cells × (channels · k³)`, column index `c·k³ + (kz·k + ky)·k + kx`.
pub fn im2col3d<'t>(
    x: Var<'t>,
    dims: Dims3,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(Var<'t>, Dims3), NumericsError> {
    let (rows, channels) = x.shape();
    let cells = dims.0 * dims.1 * dims.2;
    if rows != cells {
        return Err(NumericsError::ShapeMismatch {
            op: "im2col3d",
            left: vec![rows, channels],
            right: vec![dims.0, dims.1, dims.2],
        });
    }
    let out = match (
        conv_out_dim(dims.0, k, stride, pad),
        conv_out_dim(dims.1, k, stride, pad),
        conv_out_dim(dims.2, k, stride, pad),
    ) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(NumericsError::ShapeMismatch {
                op: "conv3d output",
                left: vec![dims.0, dims.1, dims.2],
                right: vec![k, stride, pad],
            })
        }
    };
    let k3 = k * k * k;
    let out_cells = out.0 * out.1 * out.2;
    let mut src = vec![usize::MAX; out_cells * k3];
    for oz in 0..out.2 {
        for oy in 0..out.1 {
            for ox in 0..out.0 {
                let o = cell(out, ox, oy, oz);
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let iz = (oz * stride + kz) as isize - pad as isize;
                            if ix < 0
                                || iy < 0
                                || iz < 0
                                || ix >= dims.0 as isize
                                || iy >= dims.1 as isize
                                || iz >= dims.2 as isize
                            {
                                continue;
                            }
                            src[o * k3 + (kz * k + ky) * k + kx] =
                                cell(dims, ix as usize, iy as usize, iz as usize);
                        }
                    }
                }
            }
        }
    }
    let src = Rc::new(src);
    let value = {
        let xv = x.value();
        let mut m = Array2::zeros((out_cells, channels * k3));
        for o in 0..out_cells {
            let mut row = m.row_mut(o);
            for kk in 0..k3 {
                let s = src[o * k3 + kk];
                if s == usize::MAX {
                    continue;
                }
                for c in 0..channels {
                    row[c * k3 + kk] = xv[[s, c]];
                }
            }
        }
        m
    };
    let back_src = Rc::clone(&src);
    let var = custom_op(x.tape(), value, &[x], move |g, _| {
        let mut dx = Array2::zeros((cells, channels));
        for o in 0..out_cells {
            let grow = g.row(o);
            for kk in 0..k3 {
                let s = back_src[o * k3 + kk];
                if s == usize::MAX {
                    continue;
                }
                for c in 0..channels {
                    dx[[s, c]] += grow[c * k3 + kk];
                }
            }
        }
        vec![Some(dx)]
    });
    Ok((var, out))
}

/// Cross-correlation of a `cells × c_in` volume with a cubic kernel stored
/// as a `(c_in · k³) × c_out` matrix.
#[allow(clippy::too_many_arguments)]
pub fn conv3d<'t>(
    x: Var<'t>,
    dims: Dims3,
    weight: Var<'t>,
    bias: Option<Var<'t>>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(Var<'t>, Dims3), NumericsError> {
    let (cols, out_dims) = im2col3d(x, dims, k, stride, pad)?;
    let y = cols.matmul(weight)?;
    let y = match bias {
        Some(b) => y.add_row(b)?,
        None => y,
    };
    Ok((y, out_dims))
}

#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: String,
    pub bias: Option<String>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * kernel.pow(3);
        let weight = format!("{prefix}.weight");
        store.insert(weight.clone(), uniform_init(fan_in, c_out, fan_in, rng));
        let bias = bias.then(|| {
            let name = format!("{prefix}.bias");
            store.insert(name.clone(), uniform_init(1, c_out, fan_in, rng));
            name
        });
        Conv3d {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        x: Var<'t>,
        dims: Dims3,
    ) -> Result<(Var<'t>, Dims3), NumericsError> {
        conv3d(
            x,
            dims,
            ctx.param(&self.weight),
            self.bias.as_deref().map(|b| ctx.param(b)),
            self.kernel,
            self.stride,
            self.pad,
        )
    }
}

/// Depthwise causal convolution over time.
/// `y[t, c] = b[c] + Σ_k w[k, c] · x[t − (K−1) + k, c]`.
///
/// Rows form consecutive independent sequences of `seg_len` rows each; the
/// input is zero before the start of each sequence.
pub fn causal_conv1d<'t>(
    x: Var<'t>,
    weight: Var<'t>,
    bias: Var<'t>,
    seg_len: usize,
) -> Result<Var<'t>, NumericsError> {
    let (t_len, d) = x.shape();
    let (kw, dw) = weight.shape();
    if dw != d || bias.shape() != (1, d) || kw == 0 || seg_len == 0 || t_len % seg_len != 0 {
        return Err(NumericsError::ShapeMismatch {
            op: "causal_conv1d",
            left: vec![t_len, d],
            right: vec![kw, dw],
        });
    }
    let value = {
        let (xv, wv, bv) = (x.value(), weight.value(), bias.value());
        let mut y = Array2::zeros((t_len, d));
        for t in 0..t_len {
            for c in 0..d {
                let mut acc = bv[[0, c]];
                for k in 0..kw {
                    let src = t as isize - (kw as isize - 1) + k as isize;
                    if src >= (t - t % seg_len) as isize {
                        acc += wv[[k, c]] * xv[[src as usize, c]];
                    }
                }
                y[[t, c]] = acc;
            }
        }
        y
    };
    let (xi, wi) = (x.id(), weight.id());
    Ok(custom_op(x.tape(), value, &[x, weight, bias], move |g, vals| {
        let (xv, wv) = (&vals[xi], &vals[wi]);
        let mut dx = Array2::zeros((t_len, d));
        let mut dw = Array2::zeros((kw, d));
        for t in 0..t_len {
            for c in 0..d {
                let gv = g[[t, c]];
                for k in 0..kw {
                    let src = t as isize - (kw as isize - 1) + k as isize;
                    if src >= (t - t % seg_len) as isize {
                        dx[[src as usize, c]] += gv * wv[[k, c]];
                        dw[[k, c]] += gv * xv[[src as usize, c]];
                    }
                }
            }
        }
        let db = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
        vec![Some(dx), Some(dw), Some(db)]
    }))
}
