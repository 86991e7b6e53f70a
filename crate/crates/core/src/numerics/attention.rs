use ndarray::Array2;
use rand::Rng;

use super::layers::Linear;
use super::params::{Ctx, ParamStore};
use super::tape::{concat_cols, concat_rows, Var};
use super::NumericsError;

pub struct AttentionOutput<'t> {
    pub out: Var<'t>,
    /// Per-head attention weights, each `nq × nk`.
    pub weights: Vec<Array2<f64>>,
}

/// Scaled dot-product attention over already-projected `q`, `k`, `v`,
/// split into `n_head` column groups, followed by the output projection.
///
/// `mask`, when given, is added to the logits (use `-inf` to block).
pub fn multi_head_attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    out_proj: impl FnOnce(Var<'t>) -> Result<Var<'t>, NumericsError>,
    n_head: usize,
    mask: Option<&Array2<f64>>,
) -> Result<AttentionOutput<'t>, NumericsError> {
    let (nq, d) = q.shape();
    let (nk, dk) = k.shape();
    if dk != d || v.shape() != (nk, d) || n_head == 0 || d % n_head != 0 {
        return Err(NumericsError::ShapeMismatch {
            op: "multi_head_attention",
            left: vec![nq, d],
            right: vec![nk, dk, n_head],
        });
    }
    if let Some(m) = mask {
        if m.dim() != (nq, nk) {
            return Err(NumericsError::ShapeMismatch {
                op: "attention mask",
                left: vec![nq, nk],
                right: vec![m.nrows(), m.ncols()],
            });
        }
    }
    let dh = d / n_head;
    let scale = 1.0 / (dh as f64).sqrt();
    let tape = q.tape();
    let mut heads = Vec::with_capacity(n_head);
    let mut weights = Vec::with_capacity(n_head);
    for h in 0..n_head {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = q.slice_cols(lo, hi);
        let kh = k.slice_cols(lo, hi);
        let vh = v.slice_cols(lo, hi);
        let mut logits = qh.matmul_t(kh)?.scale(scale);
        if let Some(m) = mask {
            logits = logits.add(tape.constant(m.clone()))?;
        }
        let attn = logits.softmax_rows();
        weights.push(attn.to_array());
        heads.push(attn.matmul(vh)?);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        concat_cols(&heads)?
    };
    Ok(AttentionOutput {
        out: out_proj(joined)?,
        weights,
    })
}

/// Attention with learned query/key/value/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_head: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, n_head: usize, rng: &mut impl Rng) -> Self {
        assert!(d.is_multiple_of(n_head), "model dim {d} not divisible by {n_head} heads");
        MultiHeadAttention {
            q: Linear::new(store, &format!("{prefix}.q"), d, d, true, rng),
            k: Linear::new(store, &format!("{prefix}.k"), d, d, true, rng),
            v: Linear::new(store, &format!("{prefix}.v"), d, d, true, rng),
            o: Linear::new(store, &format!("{prefix}.o"), d, d, true, rng),
            n_head,
        }
    }

    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        queries: Var<'t>,
        keys: Var<'t>,
        values: Var<'t>,
        mask: Option<&Array2<f64>>,
    ) -> Result<AttentionOutput<'t>, NumericsError> {
        let q = self.q.forward(ctx, queries)?;
        let k = self.k.forward(ctx, keys)?;
        let v = self.v.forward(ctx, values)?;
        multi_head_attention(q, k, v, |x| self.o.forward(ctx, x), self.n_head, mask)
    }

    /// Attention within each of `B` stacked sequences: query segment `b`
    /// (rows `b·q_seg..`) attends only to key segment `b` (rows `b·k_seg..`).
    pub fn forward_segments<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        queries: Var<'t>,
        keys: Var<'t>,
        values: Var<'t>,
        q_seg: usize,
        k_seg: usize,
    ) -> Result<Var<'t>, NumericsError> {
        let (nq, nk) = (queries.rows(), keys.rows());
        if q_seg == 0 || k_seg == 0 || nq % q_seg != 0 || nk % k_seg != 0 || nq / q_seg != nk / k_seg {
            return Err(NumericsError::ShapeMismatch {
                op: "segmented attention",
                left: vec![nq, q_seg],
                right: vec![nk, k_seg],
            });
        }
        let q = self.q.forward(ctx, queries)?;
        let k = self.k.forward(ctx, keys)?;
        let v = self.v.forward(ctx, values)?;
        let parts = (0..nq / q_seg)
            .map(|b| {
                let (qs, ks) = (b * q_seg, b * k_seg);
                multi_head_attention(
                    q.slice_rows(qs, qs + q_seg),
                    k.slice_rows(ks, ks + k_seg),
                    v.slice_rows(ks, ks + k_seg),
                    Ok,
                    self.n_head,
                    None,
                )
                .map(|o| o.out)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let joined = if parts.len() == 1 {
            parts[0]
        } else {
            concat_rows(&parts)?
        };
        self.o.forward(ctx, joined)
    }
}
