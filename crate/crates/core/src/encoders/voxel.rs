use ndarray::Array2;
use rand::Rng;

use super::EncoderError;
use crate::geometry::{GridDims, OccupancyGrid};
use crate::numerics::{concat_rows, im2col3d, Ctx, Dims3, Linear, ParamStore, Var};

/// Grid size the encoder accepts.
pub const VOXEL_DIMS: GridDims = (20, 20, 20);
/// `20³ → 10³` (k4 s2 p1), then `10³ → 3³` (k4 s3 p1).
pub const VOXEL_PATCHES: usize = 27;

const KERNEL: usize = 4;

/// Two 3D convolutions turning a `20³` occupancy grid into `27 × f` patches
/// (x-fastest). The first layer has no bias, so an empty grid yields the same
/// bias-only response in every patch.
#[derive(Clone, Debug)]
pub struct VoxelEncoder {
    pub conv1: Linear,
    pub conv2: Linear,
    pub hidden: usize,
    pub f: usize,
}

impl VoxelEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, hidden: usize, f: usize, rng: &mut impl Rng) -> Self {
        let k3 = KERNEL.pow(3);
        VoxelEncoder {
            conv1: Linear::new(store, &format!("{prefix}.conv1"), k3, hidden, false, rng),
            conv2: Linear::new(store, &format!("{prefix}.conv2"), hidden * k3, f, true, rng),
            hidden,
            f,
        }
    }

    /// Stacked patches, `VOXEL_PATCHES` rows per grid.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, grids: &[&OccupancyGrid]) -> Result<Var<'t>, EncoderError> {
        let tape = ctx.tape;
        let mut cols1 = Vec::with_capacity(grids.len());
        let mut mid_dims: Dims3 = (0, 0, 0);
        for g in grids {
            if g.dims != VOXEL_DIMS {
                return Err(EncoderError::GridDimMismatch {
                    expected: VOXEL_DIMS,
                    got: g.dims,
                });
            }
            let cells = Array2::from_shape_fn((g.cells.len(), 1), |(i, _)| g.cells[i] as f64);
            let (cols, out) = im2col3d(tape.constant(cells), g.dims, KERNEL, 2, 1)?;
            mid_dims = out;
            cols1.push(cols);
        }
        if grids.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        let stacked = if cols1.len() == 1 { cols1[0] } else { concat_rows(&cols1)? };
        let h = self.conv1.forward(ctx, stacked)?.silu();
        let per = mid_dims.0 * mid_dims.1 * mid_dims.2;
        let mut cols2 = Vec::with_capacity(grids.len());
        for b in 0..grids.len() {
            let (cols, out) = im2col3d(h.slice_rows(b * per, (b + 1) * per), mid_dims, KERNEL, 3, 1)?;
            debug_assert_eq!(out.0 * out.1 * out.2, VOXEL_PATCHES);
            cols2.push(cols);
        }
        let stacked = if cols2.len() == 1 { cols2[0] } else { concat_rows(&cols2)? };
        Ok(self.conv2.forward(ctx, stacked)?)
    }
}
