//! Selective state-space scan.
//!
//! For each channel `i` and state `j`:
//!
//! ```text
//! h_t[i,j] = exp(Δ_t[i]·A[i,j]) · h_{t−1}[i,j] + Δ_t[i]·B_t[j]·x_t[i]
//! y_t[i]   = Σ_j C_t[j] · h_t[i,j]
//! ```
//!
//! with `h_0 = 0`. `A` is a diagonal (per channel, per state) matrix, `B_t`
//! and `C_t` are shared across channels, `Δ_t` is per channel.
//!
//! A batch is a stack of equal-length sequences; the state resets to zero at
//! the first row of every `seg_len`-row segment.


use ndarray::Array2;

use super::tape::{custom_op, Var};
use super::NumericsError;

/// Inputs of a scan besides the sequence itself.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanParams {
    /// `d_inner × d_state`.
    pub a: Array2<f64>,
    /// `T × d_state`.
    pub b: Array2<f64>,
    /// `T × d_state`.
    pub c: Array2<f64>,
    /// `T × d_inner`, strictly positive.
    pub delta: Array2<f64>,
}

fn check_shapes(
    x: (usize, usize),
    delta: (usize, usize),
    a: (usize, usize),
    b: (usize, usize),
    c: (usize, usize),
    seg_len: usize,
) -> Result<(), NumericsError> {
    let (t, d) = x;
    let n = a.1;
    if delta != (t, d) || a.0 != d || b != (t, n) || c != (t, n) || seg_len == 0 || t % seg_len != 0 {
        return Err(NumericsError::ShapeMismatch {
            op: "selective_scan",
            left: vec![t, d, n],
            right: vec![delta.0, delta.1, a.0, a.1, b.0, b.1, c.0, c.1],
        });
    }
    Ok(())
}

fn check_delta(delta: &Array2<f64>) -> Result<(), NumericsError> {
    for ((row, channel), &value) in delta.indexed_iter() {
        if !(value > 0.0) {
            return Err(NumericsError::NonPositiveDelta {
                row,
                channel,
                value,
            });
        }
    }
    Ok(())
}

/// Runs the recurrence, returning outputs, every hidden state and every
/// decay factor (both indexed `[t*d*n + i*n + j]`).
fn run(
    x: &Array2<f64>,
    delta: &Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    c: &Array2<f64>,
    seg_len: usize,
) -> (Array2<f64>, Vec<f64>, Vec<f64>) {
    let (t_len, d) = x.dim();
    let n = a.ncols();
    let dn = d * n;
    let (x, delta, a, b, c) = (
        x.as_standard_layout(),
        delta.as_standard_layout(),
        a.as_standard_layout(),
        b.as_standard_layout(),
        c.as_standard_layout(),
    );
    let (xs, ds, as_, bs, cs) = (
        x.as_slice().expect("standard layout"),
        delta.as_slice().expect("standard layout"),
        a.as_slice().expect("standard layout"),
        b.as_slice().expect("standard layout"),
        c.as_slice().expect("standard layout"),
    );
    let mut states = vec![0.0; t_len * dn];
    let mut decays = vec![0.0; t_len * dn];
    let mut y = vec![0.0; t_len * d];
    for t in 0..t_len {
        let (done, rest) = states.split_at_mut(t * dn);
        let h = &mut rest[..dn];
        let prev = if t % seg_len == 0 { None } else { Some(&done[(t - 1) * dn..]) };
        let dec = &mut decays[t * dn..(t + 1) * dn];
        let bt = &bs[t * n..(t + 1) * n];
        let ct = &cs[t * n..(t + 1) * n];
        for i in 0..d {
            let dt = ds[t * d + i];
            let u = dt * xs[t * d + i];
            let ai = &as_[i * n..(i + 1) * n];
            let hi = &mut h[i * n..(i + 1) * n];
            let di = &mut dec[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                let e = (dt * ai[j]).exp();
                di[j] = e;
                let hp = prev.map_or(0.0, |p| p[i * n + j]);
                let v = e * hp + u * bt[j];
                hi[j] = v;
                acc += ct[j] * v;
            }
            y[t * d + i] = acc;
        }
    }
    (Array2::from_shape_vec((t_len, d), y).expect("sized"), states, decays)
}

/// Plain forward scan over a single sequence.
pub fn selective_scan(x: &Array2<f64>, params: &ScanParams) -> Result<Array2<f64>, NumericsError> {
    let seg_len = x.nrows().max(1);
    check_shapes(
        x.dim(),
        params.delta.dim(),
        params.a.dim(),
        params.b.dim(),
        params.c.dim(),
        seg_len,
    )?;
    check_delta(&params.delta)?;
    Ok(run(x, &params.delta, &params.a, &params.b, &params.c, seg_len).0)
}

/// Differentiable segmented scan with respect to all five inputs.
pub fn selective_scan_var<'t>(
    x: Var<'t>,
    delta: Var<'t>,
    a: Var<'t>,
    b: Var<'t>,
    c: Var<'t>,
    seg_len: usize,
) -> Result<Var<'t>, NumericsError> {
    check_shapes(x.shape(), delta.shape(), a.shape(), b.shape(), c.shape(), seg_len)?;
    check_delta(&delta.value())?;
    let (y, states, decays) = run(&x.value(), &delta.value(), &a.value(), &b.value(), &c.value(), seg_len);
    let ids = [x.id(), delta.id(), a.id(), b.id(), c.id()];
    let (t_len, d) = x.shape();
    let n = a.cols();
    Ok(custom_op(x.tape(), y, &[x, delta, a, b, c], move |g, vals| {
        let std = |m: &Array2<f64>| m.as_standard_layout().into_owned();
        let (xv, dv, av, bv, cv, gv) = (
            std(&vals[ids[0]]),
            std(&vals[ids[1]]),
            std(&vals[ids[2]]),
            std(&vals[ids[3]]),
            std(&vals[ids[4]]),
            std(g),
        );
        let (xs, ds, as_, bs, cs, gs) = (
            xv.as_slice().expect("owned"),
            dv.as_slice().expect("owned"),
            av.as_slice().expect("owned"),
            bv.as_slice().expect("owned"),
            cv.as_slice().expect("owned"),
            gv.as_slice().expect("owned"),
        );
        let mut dx = vec![0.0; t_len * d];
        let mut dd = vec![0.0; t_len * d];
        let mut da = vec![0.0; d * n];
        let mut db = vec![0.0; t_len * n];
        let mut dc = vec![0.0; t_len * n];
        // carry[i*n+j]: gradient flowing into h_t from later steps.
        let mut carry = vec![0.0; d * n];
        let dn = d * n;
        for t in (0..t_len).rev() {
            let h_t = &states[t * dn..(t + 1) * dn];
            let dec_t = &decays[t * dn..(t + 1) * dn];
            let first = t % seg_len == 0;
            let h_prev = if first { None } else { Some(&states[(t - 1) * dn..t * dn]) };
            let bt = &bs[t * n..(t + 1) * n];
            let ct = &cs[t * n..(t + 1) * n];
            let dbt = &mut db[t * n..(t + 1) * n];
            let dct = &mut dc[t * n..(t + 1) * n];
            for i in 0..d {
                let dt = ds[t * d + i];
                let xt = xs[t * d + i];
                let gy = gs[t * d + i];
                let ai = &as_[i * n..(i + 1) * n];
                let dai = &mut da[i * n..(i + 1) * n];
                let ci = &mut carry[i * n..(i + 1) * n];
                let hi = &h_t[i * n..(i + 1) * n];
                let ei = &dec_t[i * n..(i + 1) * n];
                let dtx = dt * xt;
                let mut d_delta = 0.0;
                let mut d_x = 0.0;
                for j in 0..n {
                    dct[j] += gy * hi[j];
                    let gh = gy * ct[j] + ci[j];
                    let hp = h_prev.map_or(0.0, |p| p[i * n + j]);
                    let g_decay = gh * hp * ei[j];
                    d_delta += g_decay * ai[j] + gh * bt[j] * xt;
                    dai[j] += g_decay * dt;
                    dbt[j] += gh * dtx;
                    d_x += gh * bt[j];
                    ci[j] = if first { 0.0 } else { gh * ei[j] };
                }
                dd[t * d + i] += d_delta;
                dx[t * d + i] += d_x * dt;
            }
        }
        let m = |r, c, v| Some(Array2::from_shape_vec((r, c), v).expect("sized"));
        vec![m(t_len, d, dx), m(t_len, d, dd), m(d, n, da), m(t_len, n, db), m(t_len, n, dc)]
    }))
}
