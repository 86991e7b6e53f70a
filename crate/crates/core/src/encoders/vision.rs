//! Visual semantic features `X_sem`, one row per frame.
//!
//! The features come from a provider. [`SyntheticProvider`] derives them from
//! the projected hand pixel and a seeded scene embedding; [`FileProvider`]
//! serves precomputed features from disk.

use std::collections::BTreeMap;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::EncoderError;

/// `(n_past + l) × x` semantic features; `l` is `N_f` in training, 0 at
/// inference.
#[derive(Clone, Debug, PartialEq)]
pub struct VisionFeatures {
    pub x_sem: Array2<f64>,
    pub n_past: usize,
    pub l: usize,
}

/// What a provider may look at for one sequence.
#[derive(Clone, Debug)]
pub struct VisionQuery<'a> {
    pub sequence_id: &'a str,
    pub scene_seed: u64,
    /// Projected hand pixel per frame, `None` when not visible.
    pub hand_pixels: &'a [Option<[f64; 2]>],
    pub width: usize,
    pub height: usize,
}

pub trait VisionProvider {
    /// Feature width `x`.
    fn width(&self) -> usize;

    fn features(
        &self,
        query: &VisionQuery<'_>,
        prompt: &str,
        n_past: usize,
        l: usize,
    ) -> Result<VisionFeatures, EncoderError>;
}

/// Number of sinusoid frequencies per image axis.
pub const POSITION_FREQS: usize = 8;
/// Frequencies kept when the prompt is empty.
const UNPROMPTED_FREQS: usize = 4;

/// Deterministic stand-in for a grounding model: `2·8` position channels
/// `sin((k+1)·π·p)` for `p ∈ {u/W, v/H}`, followed by `x − 16` channels of a
/// scene embedding drawn from `(scene_seed, prompt)`.
///
/// An empty prompt drops the four highest frequencies, so the hand is
/// localized less sharply.
#[derive(Clone, Debug)]
pub struct SyntheticProvider {
    pub x: usize,
}

impl SyntheticProvider {
    pub fn new(x: usize) -> Result<Self, EncoderError> {
        if x < 2 * POSITION_FREQS {
            return Err(EncoderError::ProviderUnavailable(format!(
                "synthetic provider needs x >= {}, got {x}",
                2 * POSITION_FREQS
            )));
        }
        Ok(SyntheticProvider { x })
    }

    fn scene_embedding(&self, scene_seed: u64, prompt: &str) -> Vec<f64> {
        let digest = Sha256::digest(prompt.trim().as_bytes());
        let salt = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed ^ salt);
        (0..self.x - 2 * POSITION_FREQS)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                0.5 * v
            })
            .collect()
    }
}

impl VisionProvider for SyntheticProvider {
    fn width(&self) -> usize {
        self.x
    }

    fn features(
        &self,
        query: &VisionQuery<'_>,
        prompt: &str,
        n_past: usize,
        l: usize,
    ) -> Result<VisionFeatures, EncoderError> {
        let rows = n_past + l;
        if query.hand_pixels.len() < rows {
            return Err(EncoderError::LengthMismatch {
                what: "frames for vision features",
                expected: rows,
                got: query.hand_pixels.len(),
            });
        }
        let freqs = if prompt.trim().is_empty() {
            UNPROMPTED_FREQS
        } else {
            POSITION_FREQS
        };
        let embed = self.scene_embedding(query.scene_seed, prompt);
        let mut x_sem = Array2::zeros((rows, self.x));
        for (t, px) in query.hand_pixels[..rows].iter().enumerate() {
            if let Some(uv) = px {
                let p = [uv[0] / query.width as f64, uv[1] / query.height as f64];
                for (axis, &pa) in p.iter().enumerate() {
                    for k in 0..freqs {
                        x_sem[[t, axis * POSITION_FREQS + k]] =
                            ((k + 1) as f64 * std::f64::consts::PI * pa).sin();
                    }
                }
            }
            for (j, &e) in embed.iter().enumerate() {
                x_sem[[t, 2 * POSITION_FREQS + j]] = e;
            }
        }
        Ok(VisionFeatures { x_sem, n_past, l })
    }
}

const VISION_MAGIC: &[u8; 7] = b"HTPVIS1";
/// Largest row count or width accepted from a feature file.
pub const MAX_FEATURE_DIM: usize = 1 << 16;

/// Precomputed features keyed by sequence id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FileProvider {
    pub x: usize,
    pub records: BTreeMap<String, Array2<f64>>,
}

impl FileProvider {
    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let bytes = std::fs::read(path)
            .map_err(|e| EncoderError::ProviderUnavailable(format!("{}: {e}", path.display())))?;
        decode_vision_features(&bytes)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, encode_vision_features(self))
    }
}

impl VisionProvider for FileProvider {
    fn width(&self) -> usize {
        self.x
    }

    fn features(
        &self,
        query: &VisionQuery<'_>,
        _prompt: &str,
        n_past: usize,
        l: usize,
    ) -> Result<VisionFeatures, EncoderError> {
        let rec = self.records.get(query.sequence_id).ok_or_else(|| {
            EncoderError::ProviderUnavailable(format!("no features for sequence {}", query.sequence_id))
        })?;
        let rows = n_past + l;
        if rec.nrows() < rows {
            return Err(EncoderError::LengthMismatch {
                what: "stored feature rows",
                expected: rows,
                got: rec.nrows(),
            });
        }
        Ok(VisionFeatures {
            x_sem: rec.slice(s![..rows, ..]).to_owned(),
            n_past,
            l,
        })
    }
}

/// Layout: magic, `u32 x`, `u32 count`, then per record `u32 id_len`, id
/// bytes (UTF-8), `u32 rows`, `rows·x` little-endian `f32`.
pub fn encode_vision_features(p: &FileProvider) -> Vec<u8> {
    let mut out = VISION_MAGIC.to_vec();
    let mut u32_buf = [0u8; 4];
    let mut put = |out: &mut Vec<u8>, v: usize| {
        LittleEndian::write_u32(&mut u32_buf, v as u32);
        out.extend_from_slice(&u32_buf);
    };
    put(&mut out, p.x);
    put(&mut out, p.records.len());
    for (id, rec) in &p.records {
        put(&mut out, id.len());
        out.extend_from_slice(id.as_bytes());
        put(&mut out, rec.nrows());
        for &v in rec.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_vision_features(bytes: &[u8]) -> Result<FileProvider, EncoderError> {
    let bad = |m: String| EncoderError::FeatureFormat(m);
    if bytes.len() < VISION_MAGIC.len() || &bytes[..VISION_MAGIC.len()] != VISION_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut pos = VISION_MAGIC.len();
    let u32_at = |pos: &mut usize| -> Result<usize, EncoderError> {
        let b = bytes
            .get(*pos..*pos + 4)
            .ok_or_else(|| EncoderError::FeatureFormat("truncated".into()))?;
        *pos += 4;
        Ok(LittleEndian::read_u32(b) as usize)
    };
    let x = u32_at(&mut pos)?;
    if x == 0 || x > MAX_FEATURE_DIM {
        return Err(bad(format!("feature width {x} out of range")));
    }
    let count = u32_at(&mut pos)?;
    let mut records = BTreeMap::new();
    for _ in 0..count {
        let id_len = u32_at(&mut pos)?;
        let id_bytes = bytes
            .get(pos..pos.saturating_add(id_len))
            .ok_or_else(|| bad("truncated id".into()))?;
        let id = std::str::from_utf8(id_bytes)
            .map_err(|_| bad("id is not UTF-8".into()))?
            .to_string();
        pos += id_len;
        let rows = u32_at(&mut pos)?;
        if rows > MAX_FEATURE_DIM {
            return Err(bad(format!("row count {rows} out of range")));
        }
        let n = rows * x;
        let body = bytes
            .get(pos..pos.saturating_add(n * 4))
            .ok_or_else(|| bad(format!("truncated record {id}")))?;
        pos += n * 4;
        let vals: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| LittleEndian::read_f32(c) as f64)
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite value in record {id}")));
        }
        let rec = Array2::from_shape_vec((rows, x), vals).expect("rows·x values");
        if records.insert(id.clone(), rec).is_some() {
            return Err(bad(format!("duplicate record {id}")));
        }
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    Ok(FileProvider { x, records })
}
