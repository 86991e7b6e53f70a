use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DenoiserError;
use crate::numerics::{Ctx, LayerNorm, Mlp, MultiHeadAttention, ParamStore, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatConfig {
    pub n_head: usize,
    pub d_ffn: usize,
}

impl Default for SatConfig {
    fn default() -> Self {
        SatConfig { n_head: 4, d_ffn: 512 }
    }
}

/// Voxel tokens for cross-attention: `B·per_sample × f`.
#[derive(Clone, Copy, Debug)]
pub struct VoxelTokens<'t> {
    pub tokens: Var<'t>,
    pub per_sample: usize,
}

/// Post-norm transformer block: self-attention over the sequence, then
/// cross-attention to voxel tokens, then a SiLU feed-forward layer.
///
/// Without voxel tokens the cross-attention sublayer attends to the
/// sequence itself.
#[derive(Clone, Debug)]
pub struct SatBlock {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub ffn: Mlp,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub norm3: LayerNorm,
}

impl SatBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, f: usize, cfg: &SatConfig, rng: &mut impl Rng) -> Self {
        SatBlock {
            self_attn: MultiHeadAttention::new(store, &format!("{prefix}.self_attn"), f, cfg.n_head, rng),
            cross_attn: MultiHeadAttention::new(store, &format!("{prefix}.cross_attn"), f, cfg.n_head, rng),
            ffn: Mlp::new(store, &format!("{prefix}.ffn"), f, cfg.d_ffn, f, rng),
            norm1: LayerNorm::new(store, &format!("{prefix}.norm1"), f),
            norm2: LayerNorm::new(store, &format!("{prefix}.norm2"), f),
            norm3: LayerNorm::new(store, &format!("{prefix}.norm3"), f),
        }
    }

    /// `z`, `temb`, `pe`: `B·seg_len × f`.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        z: Var<'t>,
        temb: Var<'t>,
        pe: Var<'t>,
        voxels: Option<VoxelTokens<'t>>,
        seg_len: usize,
    ) -> Result<Var<'t>, DenoiserError> {
        if pe.shape() != z.shape() {
            return Err(DenoiserError::ShapeMismatch {
                what: "positional encoding",
                expected: z.shape(),
                got: pe.shape(),
            });
        }
        let u = z.add(temb)?.add(pe)?;
        let a = self.self_attn.forward_segments(ctx, u, u, u, seg_len, seg_len)?;
        let h1 = self.norm1.forward(ctx, u.add(a)?)?;
        let c = match voxels {
            Some(v) => self
                .cross_attn
                .forward_segments(ctx, h1, v.tokens, v.tokens, seg_len, v.per_sample)?,
            None => self.cross_attn.forward_segments(ctx, h1, h1, h1, seg_len, seg_len)?,
        };
        let h2 = self.norm2.forward(ctx, h1.add(c)?)?;
        let ff = self.ffn.forward(ctx, h2)?;
        Ok(self.norm3.forward(ctx, h2.add(ff)?)?)
    }
}
