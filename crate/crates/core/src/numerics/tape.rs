//! Tape-based reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value recorded on a [`Tape`] is a 2-D matrix. Operations push a new
//! node holding the forward value and a closure that maps the node's output
//! gradient onto the gradients of its parents. [`Tape::backward`] walks the
//! nodes in reverse insertion order, which is a valid topological order
//! because a node can only reference nodes recorded before it.
//!
//! Higher-rank tensors (the voxel volumes) are carried as `cells × channels`
//! matrices; the ops that need the spatial layout take it as an argument.

use std::cell::{Ref, RefCell};

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::NumericsError;

type BackFn = Box<dyn Fn(&Array2<f64>, &[Array2<f64>], &mut Grads)>;

/// Gradient accumulator handed to backward closures.
pub struct Grads {
    slots: Vec<Option<Array2<f64>>>,
    wanted: Vec<bool>,
}

impl Grads {
    /// Adds `delta` into the gradient slot of node `id`.
    pub fn accumulate(&mut self, id: usize, delta: Array2<f64>) {
        if !self.wanted[id] {
            return;
        }
        match &mut self.slots[id] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_view(&mut self, id: usize, delta: ArrayView2<f64>) {
        if !self.wanted[id] {
            return;
        }
        match &mut self.slots[id] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta.to_owned()),
        }
    }

    /// Gradient of node `id`, if any flowed into it.
    pub fn get(&self, id: usize) -> Option<&Array2<f64>> {
        self.slots.get(id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: usize) -> Option<Array2<f64>> {
        self.slots.get_mut(id).and_then(|g| g.take())
    }
}

struct Node {
    back: Option<BackFn>,
    needs_grad: bool,
}

#[derive(Default)]
struct Inner {
    values: Vec<Array2<f64>>,
    nodes: Vec<Node>,
}

/// Recording tape. Create one per forward pass.
pub struct Tape {
    inner: RefCell<Inner>,
    record: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}[{}x{}]", self.id, r, c)
    }
}

impl Tape {
    /// A tape that records backward closures.
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner::default()),
            record: true,
        }
    }

    /// A tape for inference: values are kept, backward closures are dropped.
    pub fn inference() -> Self {
        Tape {
            inner: RefCell::new(Inner::default()),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn leaf(&self, value: Array2<f64>) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Array2<f64>, needs_grad: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.values.push(value);
        inner.nodes.push(Node {
            back: None,
            needs_grad: needs_grad && self.record,
        });
        Var {
            tape: self,
            id: inner.values.len() - 1,
        }
    }

    fn push_op(&self, value: Array2<f64>, parents: &[usize], back: BackFn) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let needs = self.record && parents.iter().any(|&p| inner.nodes[p].needs_grad);
        inner.values.push(value);
        inner.nodes.push(Node {
            back: if needs { Some(back) } else { None },
            needs_grad: needs,
        });
        Var {
            tape: self,
            id: inner.values.len() - 1,
        }
    }

    fn needs_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].needs_grad
    }

    /// Backpropagates from a scalar (1×1) node. Returns all accumulated
    /// gradients, indexed by node id.
    pub fn backward(&self, root: Var<'_>) -> Grads {
        let inner = self.inner.borrow();
        assert_eq!(inner.values[root.id].dim(), (1, 1), "backward root must be 1x1");
        self.backward_with(root, Array2::ones((1, 1)), &inner)
    }

    /// Backpropagates an arbitrary output seed (same shape as `root`).
    pub fn backward_seeded(&self, root: Var<'_>, seed: Array2<f64>) -> Grads {
        let inner = self.inner.borrow();
        assert_eq!(inner.values[root.id].dim(), seed.dim());
        self.backward_with(root, seed, &inner)
    }

    fn backward_with(&self, root: Var<'_>, seed: Array2<f64>, inner: &Inner) -> Grads {
        let n = inner.values.len();
        let mut grads = Grads {
            slots: (0..n).map(|_| None).collect(),
            wanted: inner.nodes.iter().map(|n| n.needs_grad).collect(),
        };
        grads.slots[root.id] = Some(seed);
        for id in (0..=root.id).rev() {
            let Some(back) = &inner.nodes[id].back else {
                continue;
            };
            let Some(g) = grads.slots[id].take() else {
                continue;
            };
            back(&g, &inner.values, &mut grads);
            grads.slots[id] = Some(g);
        }
        grads
    }
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: vec![a.0, a.1],
        right: vec![b.0, b.1],
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Array2<f64>> {
        Ref::map(self.tape.inner.borrow(), |i| &i.values[self.id])
    }

    pub fn to_array(&self) -> Array2<f64> {
        self.value().clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().dim()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    fn unary(
        self,
        value: Array2<f64>,
        back: impl Fn(&Array2<f64>, &[Array2<f64>], usize, usize) -> Array2<f64> + 'static,
    ) -> Var<'t> {
        let a = self.id;
        let out_id = self.tape.len();
        self.tape.push_op(
            value,
            &[a],
            Box::new(move |g, vals, grads| {
                let d = back(g, vals, a, out_id);
                grads.accumulate(a, d);
            }),
        )
    }

    // ---- matrix products -------------------------------------------------

    /// `self · other`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, NumericsError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let value = self.value().dot(&*other.value());
        let (a, b) = (self.id, other.id);
        let need_a = self.tape.needs_grad(a);
        let need_b = self.tape.needs_grad(b);
        Ok(self.tape.push_op(
            value,
            &[a, b],
            Box::new(move |g, vals, grads| {
                if need_a {
                    grads.accumulate(a, g.dot(&vals[b].t()));
                }
                if need_b {
                    grads.accumulate(b, vals[a].t().dot(g));
                }
            }),
        ))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(self, other: Var<'t>) -> Result<Var<'t>, NumericsError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.1 != sb.1 {
            return Err(shape_err("matmul_t", sa, sb));
        }
        let value = self.value().dot(&other.value().t());
        let (a, b) = (self.id, other.id);
        let need_a = self.tape.needs_grad(a);
        let need_b = self.tape.needs_grad(b);
        Ok(self.tape.push_op(
            value,
            &[a, b],
            Box::new(move |g, vals, grads| {
                if need_a {
                    grads.accumulate(a, g.dot(&vals[b]));
                }
                if need_b {
                    grads.accumulate(b, g.t().dot(&vals[a]));
                }
            }),
        ))
    }

    // ---- elementwise binary ----------------------------------------------

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, NumericsError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let value = &*self.value() + &*other.value();
        let (a, b) = (self.id, other.id);
        Ok(self.tape.push_op(
            value,
            &[a, b],
            Box::new(move |g, _, grads| {
                grads.accumulate_view(a, g.view());
                grads.accumulate_view(b, g.view());
            }),
        ))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, NumericsError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(shape_err("sub", sa, sb));
        }
        let value = &*self.value() - &*other.value();
        let (a, b) = (self.id, other.id);
        Ok(self.tape.push_op(
            value,
            &[a, b],
            Box::new(move |g, _, grads| {
                grads.accumulate_view(a, g.view());
                grads.accumulate(b, -g);
            }),
        ))
    }

    /// Hadamard product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, NumericsError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(shape_err("mul", sa, sb));
        }
        let value = &*self.value() * &*other.value();
        let (a, b) = (self.id, other.id);
        Ok(self.tape.push_op(
            value,
            &[a, b],
            Box::new(move |g, vals, grads| {
                grads.accumulate(a, g * &vals[b]);
                grads.accumulate(b, g * &vals[a]);
            }),
        ))
    }

    /// Elementwise quotient.
    pub fn div(self, other: Var<'t>) -> Result<Var<'t>, NumericsError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(shape_err("div", sa, sb));
        }
        let value = &*self.value() / &*other.value();
        let (a, b) = (self.id, other.id);
        Ok(self.tape.push_op(
            value,
            &[a, b],
            Box::new(move |g, vals, grads| {
                let inv = vals[b].mapv(|v| 1.0 / v);
                grads.accumulate(a, g * &inv);
                let gb = -(g * &vals[a]) * &inv * &inv;
                grads.accumulate(b, gb);
            }),
        ))
    }

    /// Adds a `1×c` row vector to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>, NumericsError> {
        let (sa, sb) = (self.shape(), row.shape());
        if sb.0 != 1 || sa.1 != sb.1 {
            return Err(shape_err("add_row", sa, sb));
        }
        let value = &*self.value() + &*row.value();
        let (a, b) = (self.id, row.id);
        Ok(self.tape.push_op(
            value,
            &[a, b],
            Box::new(move |g, _, grads| {
                grads.accumulate_view(a, g.view());
                grads.accumulate(b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }),
        ))
    }

    /// Multiplies every row elementwise by a `1×c` row vector.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>, NumericsError> {
        let (sa, sb) = (self.shape(), row.shape());
        if sb.0 != 1 || sa.1 != sb.1 {
            return Err(shape_err("mul_row", sa, sb));
        }
        let value = &*self.value() * &*row.value();
        let (a, b) = (self.id, row.id);
        Ok(self.tape.push_op(
            value,
            &[a, b],
            Box::new(move |g, vals, grads| {
                grads.accumulate(a, g * &vals[b]);
                let gb = (g * &vals[a]).sum_axis(Axis(0)).insert_axis(Axis(0));
                grads.accumulate(b, gb);
            }),
        ))
    }

    /// Multiplies every column elementwise by an `r×1` column vector.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>, NumericsError> {
        let (sa, sb) = (self.shape(), col.shape());
        if sb.1 != 1 || sa.0 != sb.0 {
            return Err(shape_err("mul_col", sa, sb));
        }
        let value = &*self.value() * &*col.value();
        let (a, b) = (self.id, col.id);
        Ok(self.tape.push_op(
            value,
            &[a, b],
            Box::new(move |g, vals, grads| {
                grads.accumulate(a, g * &vals[b]);
                let gb = (g * &vals[a]).sum_axis(Axis(1)).insert_axis(Axis(1));
                grads.accumulate(b, gb);
            }),
        ))
    }

    // ---- elementwise unary -----------------------------------------------

    pub fn scale(self, k: f64) -> Var<'t> {
        let value = &*self.value() * k;
        self.unary(value, move |g, _, _, _| g * k)
    }

    pub fn add_scalar(self, k: f64) -> Var<'t> {
        let value = &*self.value() + k;
        self.unary(value, |g, _, _, _| g.clone())
    }

    pub fn square(self) -> Var<'t> {
        let value = self.value().mapv(|v| v * v);
        self.unary(value, |g, vals, a, _| g * &vals[a] * 2.0)
    }

    pub fn sqrt(self) -> Var<'t> {
        let value = self.value().mapv(f64::sqrt);
        self.unary(value, |g, vals, _, out| g / &(&vals[out] * 2.0))
    }

    pub fn exp(self) -> Var<'t> {
        let value = self.value().mapv(f64::exp);
        self.unary(value, |g, vals, _, out| g * &vals[out])
    }

    pub fn silu(self) -> Var<'t> {
        let value = self.value().mapv(|v| v * sigmoid(v));
        self.unary(value, |g, vals, a, _| {
            let mut d = vals[a].mapv(|v| {
                let s = sigmoid(v);
                s * (1.0 + v * (1.0 - s))
            });
            d *= g;
            d
        })
    }

    pub fn softplus(self) -> Var<'t> {
        let value = self.value().mapv(softplus);
        self.unary(value, |g, vals, a, _| g * &vals[a].mapv(sigmoid))
    }

    /// Negative-exponential reparameterization `−exp(x)`.
    pub fn neg_exp(self) -> Var<'t> {
        let value = self.value().mapv(|v| -v.exp());
        self.unary(value, |g, vals, _, out| g * &vals[out])
    }

    // ---- reductions ------------------------------------------------------

    pub fn sum(self) -> Var<'t> {
        let (r, c) = self.shape();
        let value = Array2::from_elem((1, 1), self.value().sum());
        self.unary(value, move |g, _, _, _| Array2::from_elem((r, c), g[[0, 0]]))
    }

    pub fn mean(self) -> Var<'t> {
        let (r, c) = self.shape();
        let n = (r * c).max(1) as f64;
        let value = Array2::from_elem((1, 1), self.value().sum() / n);
        self.unary(value, move |g, _, _, _| Array2::from_elem((r, c), g[[0, 0]] / n))
    }

    /// Row sums as an `r×1` column.
    pub fn sum_cols(self) -> Var<'t> {
        let c = self.cols();
        let value = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(value, move |g, _, _, _| {
            let r = g.nrows();
            let mut d = Array2::zeros((r, c));
            for (mut row, gv) in d.rows_mut().into_iter().zip(g.column(0).iter()) {
                row.fill(*gv);
            }
            d
        })
    }

    /// Column means as a `1×c` row.
    pub fn mean_rows(self) -> Var<'t> {
        let r = self.rows();
        let value = self.value().mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        self.unary(value, move |g, _, _, _| {
            let c = g.ncols();
            let mut d = Array2::zeros((r, c));
            for mut row in d.rows_mut() {
                row.assign(&(&g.row(0) / r as f64));
            }
            d
        })
    }

    // ---- structural ------------------------------------------------------

    pub fn transpose(self) -> Var<'t> {
        let value = self.value().t().to_owned();
        self.unary(value, |g, _, _, _| g.t().to_owned())
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(self, start: usize, end: usize) -> Var<'t> {
        let (r, c) = self.shape();
        assert!(start <= end && end <= r, "slice_rows {start}..{end} of {r}");
        let value = self.value().slice(s![start..end, ..]).to_owned();
        self.unary(value, move |g, _, _, _| {
            let mut d = Array2::zeros((r, c));
            d.slice_mut(s![start..end, ..]).assign(g);
            d
        })
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        let (r, c) = self.shape();
        assert!(start <= end && end <= c, "slice_cols {start}..{end} of {c}");
        let value = self.value().slice(s![.., start..end]).to_owned();
        self.unary(value, move |g, _, _, _| {
            let mut d = Array2::zeros((r, c));
            d.slice_mut(s![.., start..end]).assign(g);
            d
        })
    }

    /// Repeats a single row `n` times.
    pub fn repeat_row(self, n: usize) -> Var<'t> {
        let (r, c) = self.shape();
        assert_eq!(r, 1, "repeat_row expects a 1xc input");
        let row = self.value().row(0).to_owned();
        let mut value = Array2::zeros((n, c));
        for mut out in value.rows_mut() {
            out.assign(&row);
        }
        self.unary(value, |g, _, _, _| g.sum_axis(Axis(0)).insert_axis(Axis(0)))
    }

    /// Output row `i` is input row `idx[i]`; rows may repeat.
    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let (r, c) = self.shape();
        assert!(idx.iter().all(|&i| i < r), "gather_rows index out of range");
        let value = {
            let v = self.value();
            let mut out = Array2::zeros((idx.len(), c));
            for (mut dst, &i) in out.rows_mut().into_iter().zip(idx) {
                dst.assign(&v.row(i));
            }
            out
        };
        let idx = idx.to_vec();
        self.unary(value, move |g, _, _, _| {
            let mut d = Array2::zeros((r, c));
            for (src, &i) in g.rows().into_iter().zip(&idx) {
                let mut row = d.row_mut(i);
                row += &src;
            }
            d
        })
    }

    // ---- row-wise nonlinear blocks ----------------------------------------

    /// Row-wise softmax.
    pub fn softmax_rows(self) -> Var<'t> {
        let mut value = self.to_array();
        for mut row in value.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let z = row.sum();
            row /= z;
        }
        self.unary(value, |g, vals, _, out| {
            let s = &vals[out];
            let mut d = g * s;
            let dots = d.sum_axis(Axis(1));
            Zip::from(d.rows_mut())
                .and(s.rows())
                .and(&dots)
                .for_each(|mut dr, sr, &dot| {
                    dr.scaled_add(-dot, &sr);
                });
            d
        })
    }

    /// Row-wise standardization `(x − mean) / sqrt(var + eps)` (no affine).
    pub fn normalize_rows(self, eps: f64) -> Var<'t> {
        let x = self.to_array();
        let d = x.ncols() as f64;
        let mut value = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in value.rows_mut() {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let is = 1.0 / (var + eps).sqrt();
            row *= is;
            inv_std.push(is);
        }
        self.unary(value, move |g, vals, _, out| {
            let y = &vals[out];
            let mut dx = Array2::zeros(g.dim());
            for (i, (mut dr, (gr, yr))) in dx
                .rows_mut()
                .into_iter()
                .zip(g.rows().into_iter().zip(y.rows()))
                .enumerate()
            {
                let mg = gr.sum() / d;
                let mgy = gr.dot(&yr) / d;
                for ((o, &gv), &yv) in dr.iter_mut().zip(gr.iter()).zip(yr.iter()) {
                    *o = inv_std[i] * (gv - mg - yv * mgy);
                }
            }
            dx
        })
    }

    /// Euclidean norm of each row as an `r×1` column, `sqrt(Σ x² + eps)`.
    pub fn row_norms(self, eps: f64) -> Var<'t> {
        let value = self
            .value()
            .map_axis(Axis(1), |r| (r.dot(&r) + eps).sqrt())
            .insert_axis(Axis(1));
        self.unary(value, |g, vals, a, out| {
            let mut d = vals[a].clone();
            Zip::from(d.rows_mut())
                .and(g.column(0))
                .and(vals[out].column(0))
                .for_each(|mut r, &gv, &n| r *= gv / n);
            d
        })
    }
}

/// Concatenates along columns.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>, NumericsError> {
    let tape = parts[0].tape;
    let rows = parts[0].rows();
    for p in parts {
        if p.rows() != rows {
            return Err(shape_err("concat_cols", parts[0].shape(), p.shape()));
        }
    }
    let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
    let total: usize = widths.iter().sum();
    let mut value = Array2::zeros((rows, total));
    let mut off = 0;
    for (p, &w) in parts.iter().zip(&widths) {
        value.slice_mut(s![.., off..off + w]).assign(&*p.value());
        off += w;
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let back_ids = ids.clone();
    Ok(tape.push_op(
        value,
        &ids,
        Box::new(move |g, _, grads| {
            let mut off = 0;
            for (&id, &w) in back_ids.iter().zip(&widths) {
                grads.accumulate_view(id, g.slice(s![.., off..off + w]));
                off += w;
            }
        }),
    ))
}

/// Concatenates along rows.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>, NumericsError> {
    let tape = parts[0].tape;
    let cols = parts[0].cols();
    for p in parts {
        if p.cols() != cols {
            return Err(shape_err("concat_rows", parts[0].shape(), p.shape()));
        }
    }
    let heights: Vec<usize> = parts.iter().map(|p| p.rows()).collect();
    let total: usize = heights.iter().sum();
    let mut value = Array2::zeros((total, cols));
    let mut off = 0;
    for (p, &h) in parts.iter().zip(&heights) {
        value.slice_mut(s![off..off + h, ..]).assign(&*p.value());
        off += h;
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let back_ids = ids.clone();
    Ok(tape.push_op(
        value,
        &ids,
        Box::new(move |g, _, grads| {
            let mut off = 0;
            for (&id, &h) in back_ids.iter().zip(&heights) {
                grads.accumulate_view(id, g.slice(s![off..off + h, ..]));
                off += h;
            }
        }),
    ))
}

/// Records a custom op. `back` receives the output gradient and the value
/// table and returns one gradient per parent (or `None` to skip).
pub fn custom_op<'t>(
    tape: &'t Tape,
    value: Array2<f64>,
    parents: &[Var<'t>],
    back: impl Fn(&Array2<f64>, &[Array2<f64>]) -> Vec<Option<Array2<f64>>> + 'static,
) -> Var<'t> {
    let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
    let back_ids = ids.clone();
    tape.push_op(
        value,
        &ids,
        Box::new(move |g, vals, grads| {
            for (id, d) in back_ids.iter().zip(back(g, vals)) {
                if let Some(d) = d {
                    grads.accumulate(*id, d);
                }
            }
        }),
    )
}
