//! Named parameter storage, forward contexts and the checkpoint archive.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! magic   b"HTPCKPT1"
//! u32     metadata length, followed by that many bytes of UTF-8 JSON
//! u32     entry count
//! entry*  u32 name length, name bytes, u32 ndim, ndim × u32 dims,
//!         product(dims) × f32 values (row-major)
//! ```

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

use super::tape::{Grads, Tape, Var};

const MAGIC: &[u8; 8] = b"HTPCKPT1";
/// Upper bound on any single dimension accepted when decoding.
const MAX_DIM: u32 = 1 << 24;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// Parameters keyed by dotted path (`module.block.index.param`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        let name = name.into();
        assert!(
            !self.params.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.params.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|v| v.len()).sum()
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for v in self.params.values_mut() {
            v.mapv_inplace(|x| x as f32 as f64);
        }
    }
}

/// `U(−1/√fan_in, 1/√fan_in)` initialization.
pub fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// A forward context binds parameters from a store onto a tape, once each.
pub struct Ctx<'t, 'p> {
    pub tape: &'t Tape,
    store: &'p ParamStore,
    bound: RefCell<BTreeMap<String, Var<'t>>>,
}

impl<'t, 'p> Ctx<'t, 'p> {
    pub fn new(tape: &'t Tape, store: &'p ParamStore) -> Self {
        Ctx {
            tape,
            store,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    /// Tape handle for parameter `name`.
    ///
    /// Panics if the parameter does not exist; parameter names are fixed at
    /// model construction.
    pub fn param(&self, name: &str) -> Var<'t> {
        if let Some(v) = self.bound.borrow().get(name) {
            return *v;
        }
        let value = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .clone();
        let v = self.tape.leaf(value);
        self.bound.borrow_mut().insert(name.to_string(), v);
        v
    }

    /// Gradients of every parameter bound during this pass. Parameters that
    /// were bound but received no gradient map to zeros.
    pub fn param_grads(&self, grads: &Grads) -> BTreeMap<String, Array2<f64>> {
        self.bound
            .borrow()
            .iter()
            .map(|(name, v)| {
                let g = grads
                    .get(v.id())
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(v.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// In-memory image of a checkpoint file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub arrays: BTreeMap<String, Array2<f64>>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, encode_checkpoint(self))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        decode_checkpoint(&bytes)
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let meta = serde_json::to_vec(&ckpt.metadata).expect("json metadata");
    out.write_u32::<LittleEndian>(meta.len() as u32).unwrap();
    out.extend_from_slice(&meta);
    out.write_u32::<LittleEndian>(ckpt.arrays.len() as u32)
        .unwrap();
    for (name, arr) in &ckpt.arrays {
        out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
        out.extend_from_slice(name.as_bytes());
        out.write_u32::<LittleEndian>(2).unwrap();
        out.write_u32::<LittleEndian>(arr.nrows() as u32).unwrap();
        out.write_u32::<LittleEndian>(arr.ncols() as u32).unwrap();
        for &v in arr.iter() {
            out.write_f32::<LittleEndian>(v as f32).unwrap();
        }
    }
    out
}

fn fmt_err(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

fn read_u32(cur: &mut Cursor<&[u8]>, what: &str) -> Result<u32, CheckpointError> {
    cur.read_u32::<LittleEndian>()
        .map_err(|_| fmt_err(format!("truncated while reading {what}")))
}

fn take_bytes<'a>(
    cur: &mut Cursor<&'a [u8]>,
    n: usize,
    what: &str,
) -> Result<&'a [u8], CheckpointError> {
    let pos = cur.position() as usize;
    let buf = *cur.get_ref();
    if buf.len() - pos < n {
        return Err(fmt_err(format!("truncated while reading {what}")));
    }
    cur.set_position((pos + n) as u64);
    Ok(&buf[pos..pos + n])
}

/// Parses a checkpoint archive. Never panics on malformed input.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)
        .map_err(|_| fmt_err("missing magic"))?;
    if &magic != MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let meta_len = read_u32(&mut cur, "metadata length")? as usize;
    let meta_bytes = take_bytes(&mut cur, meta_len, "metadata")?;
    let metadata: serde_json::Value = serde_json::from_slice(meta_bytes)
        .map_err(|e| fmt_err(format!("metadata json: {e}")))?;
    let count = read_u32(&mut cur, "entry count")?;
    let mut arrays = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut cur, "name length")? as usize;
        let name = std::str::from_utf8(take_bytes(&mut cur, name_len, "name")?)
            .map_err(|_| fmt_err("name is not utf-8"))?
            .to_string();
        let ndim = read_u32(&mut cur, "ndim")?;
        if !(1..=2).contains(&ndim) {
            return Err(fmt_err(format!("{name}: unsupported rank {ndim}")));
        }
        let mut dims = [1usize; 2];
        for d in 0..ndim as usize {
            let v = read_u32(&mut cur, "dim")?;
            if v > MAX_DIM {
                return Err(fmt_err(format!("{name}: dimension {v} too large")));
            }
            dims[d] = v as usize;
        }
        if ndim == 1 {
            dims = [1, dims[0]];
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .ok_or_else(|| fmt_err("size overflow"))?;
        let raw = take_bytes(
            &mut cur,
            n.checked_mul(4).ok_or_else(|| fmt_err("size overflow"))?,
            "values",
        )?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(fmt_err(format!("{name}: non-finite value")));
        }
        let arr = Array2::from_shape_vec((dims[0], dims[1]), values)
            .map_err(|e| fmt_err(e.to_string()))?;
        if arrays.insert(name.clone(), arr).is_some() {
            return Err(fmt_err(format!("duplicate entry {name}")));
        }
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(fmt_err("trailing bytes"));
    }
    Ok(Checkpoint { metadata, arrays })
}
