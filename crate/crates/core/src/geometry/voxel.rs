use byteorder::{ByteOrder, LittleEndian};

use super::{GeometryError, PointCloud, Vec3};

pub type GridDims = (usize, usize, usize);

/// Binary occupancy, x-index fastest, then y, then z.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub origin: [f64; 3],
    pub resolution: f64,
    pub dims: GridDims,
    pub cells: Vec<u8>,
}

/// Largest cell count accepted by the decoder.
pub const MAX_GRID_CELLS: usize = 1 << 24;

const HEADER_LEN: usize = 4 * 8 + 3 * 4;

impl OccupancyGrid {
    pub fn empty(origin: [f64; 3], resolution: f64, dims: GridDims) -> Self {
        OccupancyGrid {
            origin,
            resolution,
            dims,
            cells: vec![0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims.1 + y) * self.dims.0 + x
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.cells[self.index(x, y, z)]
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; HEADER_LEN];
        for (i, v) in self.origin.iter().chain([self.resolution].iter()).enumerate() {
            LittleEndian::write_f64(&mut out[i * 8..], *v);
        }
        for (i, d) in [self.dims.0, self.dims.1, self.dims.2].iter().enumerate() {
            LittleEndian::write_u32(&mut out[32 + i * 4..], *d as u32);
        }
        out.extend_from_slice(&self.cells);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GeometryError> {
        let bad = |m: &str| GeometryError::GridFormat(m.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(bad("truncated header"));
        }
        let f = |i: usize| LittleEndian::read_f64(&bytes[i * 8..]);
        let origin = [f(0), f(1), f(2)];
        let resolution = f(3);
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(bad("non-finite origin"));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(bad("resolution must be positive"));
        }
        let d = |i: usize| LittleEndian::read_u32(&bytes[32 + i * 4..]) as usize;
        let dims = (d(0), d(1), d(2));
        let count = dims
            .0
            .checked_mul(dims.1)
            .and_then(|v| v.checked_mul(dims.2))
            .filter(|&c| c <= MAX_GRID_CELLS)
            .ok_or_else(|| bad("grid too large"))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != count {
            return Err(GeometryError::GridFormat(format!(
                "expected {count} cells, found {}",
                body.len()
            )));
        }
        if body.iter().any(|&c| c > 1) {
            return Err(bad("cell values must be 0 or 1"));
        }
        Ok(OccupancyGrid {
            origin,
            resolution,
            dims,
            cells: body.to_vec(),
        })
    }
}

/// Marks every cell containing at least one point; points outside the grid
/// are dropped.
pub fn voxelize(
    pc: &PointCloud,
    origin: [f64; 3],
    resolution: f64,
    dims: GridDims,
) -> Result<OccupancyGrid, GeometryError> {
    if !(resolution > 0.0) {
        return Err(GeometryError::InvalidResolution(resolution));
    }
    let mut grid = OccupancyGrid::empty(origin, resolution, dims);
    let lim = [dims.0, dims.1, dims.2];
    'points: for p in &pc.points {
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let f = ((p[k] - origin[k]) / resolution).floor();
            if !(f >= 0.0 && f < lim[k] as f64) {
                continue 'points;
            }
            idx[k] = f as usize;
        }
        let i = grid.index(idx[0], idx[1], idx[2]);
        grid.cells[i] = 1;
    }
    Ok(grid)
}

/// Origin that centers a grid of `dims` cells on `center`.
pub fn centered_origin(center: &Vec3, resolution: f64, dims: GridDims) -> [f64; 3] {
    [
        center.x - 0.5 * resolution * dims.0 as f64,
        center.y - 0.5 * resolution * dims.1 as f64,
        center.z - 0.5 * resolution * dims.2 as f64,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn cloud(points: Vec<Vec3>) -> PointCloud {
        PointCloud::new(points, Frame::Global).unwrap()
    }

    const DIMS: GridDims = (20, 20, 20);

    #[test]
    fn floor_indexing() {
        let origin = [1.0, -2.0, 0.5];
        let p = Vector3::new(1.26, -1.74, 0.76);
        let g = voxelize(&cloud(vec![p]), origin, 0.05, DIMS).unwrap();
        assert_eq!(g.occupied(), 1);
        assert_eq!(g.get(5, 5, 5), 1);
    }

    #[test]
    fn outside_points_are_dropped() {
        let g = voxelize(&cloud(vec![Vector3::new(1.2, 0.1, 0.1), Vector3::new(-0.01, 0.5, 0.5)]), [0.0; 3], 0.05, DIMS)
            .unwrap();
        assert_eq!(g.occupied(), 0);
    }

    #[test]
    fn occupancy_is_binary() {
        let pts = vec![Vector3::new(0.11, 0.11, 0.11), Vector3::new(0.12, 0.13, 0.14)];
        let g = voxelize(&cloud(pts), [0.0; 3], 0.05, DIMS).unwrap();
        assert_eq!(g.occupied(), 1);
        assert_eq!(g.cells.iter().map(|&c| c as usize).sum::<usize>(), 1);
    }

    #[test]
    fn x_is_fastest() {
        let g = voxelize(&cloud(vec![Vector3::new(0.06, 0.0, 0.0)]), [0.0; 3], 0.05, (3, 2, 2)).unwrap();
        assert_eq!(g.cells[1], 1);
        let g = voxelize(&cloud(vec![Vector3::new(0.0, 0.06, 0.0)]), [0.0; 3], 0.05, (3, 2, 2)).unwrap();
        assert_eq!(g.cells[3], 1);
        let g = voxelize(&cloud(vec![Vector3::new(0.0, 0.0, 0.06)]), [0.0; 3], 0.05, (3, 2, 2)).unwrap();
        assert_eq!(g.cells[6], 1);
    }

    #[test]
    fn resolution_must_be_positive() {
        assert!(voxelize(&cloud(vec![]), [0.0; 3], 0.0, DIMS).is_err());
    }

    #[test]
    fn decoder_rejects_bad_input() {
        let g = OccupancyGrid::empty([0.0; 3], 0.05, (2, 2, 2));
        let bytes = g.to_bytes();
        assert!(OccupancyGrid::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        *bad.last_mut().unwrap() = 2;
        assert!(OccupancyGrid::from_bytes(&bad).is_err());
        let mut huge = bytes[..HEADER_LEN].to_vec();
        LittleEndian::write_u32(&mut huge[32..], u32::MAX);
        LittleEndian::write_u32(&mut huge[36..], u32::MAX);
        assert!(OccupancyGrid::from_bytes(&huge).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(pts in prop::collection::vec((-0.2f64..1.2, -0.2f64..1.2, -0.2f64..1.2), 0..60), seed in 0u64..1000) {
            let pts: Vec<Vec3> = pts.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect();
            let mut shuffled = pts.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = voxelize(&cloud(pts), [0.0; 3], 0.05, DIMS).unwrap();
            let b = voxelize(&cloud(shuffled), [0.0; 3], 0.05, DIMS).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn serialization_round_trip(cells in prop::collection::vec(0u8..2, 60), ox in -5.0f64..5.0, res in 0.01f64..1.0) {
            let g = OccupancyGrid { origin: [ox, -ox, 0.5], resolution: res, dims: (3, 4, 5), cells };
            prop_assert_eq!(OccupancyGrid::from_bytes(&g.to_bytes()).unwrap(), g);
        }
    }
}
