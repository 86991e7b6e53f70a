//! `HTPSEQ1` sequence files.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic   "HTPSEQ1"            7 bytes
//! version u16                  = 1
//! id      u16 length + UTF-8
//! n_past  u32, n_future u32
//! intrinsics fx fy cx cy width height   6 × f64
//! mode    u8                   0 head-leads, 1 hand-leads, 2 neutral
//! scene_seed u64
//! per frame:
//!   pose        12 × f64       row-major rotation, then translation
//!   waypoint     3 × f64
//!   homography   9 × f64       row-major, h[2][2] = 1
//!   points      u32 count, then count × 3 × f32
//!   mask        u32 width, u32 height, u32 runs, runs × u32
//! ```
//!
//! Mask runs alternate unmasked/masked in row-major order, starting with an
//! unmasked run that may be empty; they sum to `width · height`.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::synth::{FrameData, Sequence, SynergyMode};
use super::{DataError, FormatError};
use crate::geometry::{Homography, Intrinsics, Mask, PoseSE3, Vec3};

pub const MAGIC: &[u8; 7] = b"HTPSEQ1";
pub const VERSION: u16 = 1;
/// Upper bound on mask pixels accepted by the reader.
pub const MAX_MASK_PIXELS: usize = 1 << 22;
const MAX_FRAMES: usize = 1 << 16;

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for &v in vals {
        out.write_f64::<LittleEndian>(v).expect("vec write");
    }
}

fn encode_mask(out: &mut Vec<u8>, mask: &Mask) {
    let mut runs: Vec<u32> = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in &mask.bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    out.write_u32::<LittleEndian>(mask.width as u32).expect("vec write");
    out.write_u32::<LittleEndian>(mask.height as u32).expect("vec write");
    out.write_u32::<LittleEndian>(runs.len() as u32).expect("vec write");
    for r in runs {
        out.write_u32::<LittleEndian>(r).expect("vec write");
    }
}

pub fn encode_sequence(seq: &Sequence) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u16::<LittleEndian>(VERSION).expect("vec write");
    out.write_u16::<LittleEndian>(seq.id.len() as u16).expect("vec write");
    out.extend_from_slice(seq.id.as_bytes());
    out.write_u32::<LittleEndian>(seq.n_past as u32).expect("vec write");
    out.write_u32::<LittleEndian>(seq.n_future as u32).expect("vec write");
    let k = &seq.intrinsics;
    put_f64s(&mut out, &[k.fx, k.fy, k.cx, k.cy, k.width as f64, k.height as f64]);
    out.push(seq.mode.tag());
    out.write_u64::<LittleEndian>(seq.scene_seed).expect("vec write");
    for fr in &seq.frames {
        put_f64s(&mut out, &fr.pose.to_flat());
        put_f64s(&mut out, fr.waypoint.as_slice());
        put_f64s(&mut out, &fr.homography.to_flat());
        out.write_u32::<LittleEndian>(fr.points.len() as u32).expect("vec write");
        for p in &fr.points {
            for &c in p {
                out.write_f32::<LittleEndian>(c).expect("vec write");
            }
        }
        encode_mask(&mut out, &fr.mask);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated { what, offset: self.pos });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(LittleEndian::read_u16(self.take(2, what)?))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(LittleEndian::read_u64(self.take(8, what)?))
    }

    fn f64s<const N: usize>(&mut self, what: &'static str) -> Result<[f64; N], FormatError> {
        let b = self.take(8 * N, what)?;
        let mut out = [0.0; N];
        LittleEndian::read_f64_into(b, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::Invalid(format!("non-finite {what}")));
        }
        Ok(out)
    }
}

fn read_intrinsics(r: &mut Reader<'_>) -> Result<Intrinsics, FormatError> {
    let [fx, fy, cx, cy, w, h] = r.f64s::<6>("intrinsics")?;
    let whole = |v: f64| v >= 1.0 && v <= MAX_MASK_PIXELS as f64 && v.fract() == 0.0;
    if !whole(w) || !whole(h) || w * h > MAX_MASK_PIXELS as f64 {
        return Err(FormatError::Invalid(format!("image size {w}×{h}")));
    }
    let k = Intrinsics {
        fx,
        fy,
        cx,
        cy,
        width: w as usize,
        height: h as usize,
    };
    k.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
    Ok(k)
}

/// Reads a mask that must be `width × height`.
fn read_mask(r: &mut Reader<'_>, width: usize, height: usize) -> Result<Mask, FormatError> {
    let (w, h) = (r.u32("mask width")? as usize, r.u32("mask height")? as usize);
    if (w, h) != (width, height) {
        return Err(FormatError::Invalid(format!("mask is {w}×{h} but the image is {width}×{height}")));
    }
    let pixels = width * height;
    let runs = r.u32("mask run count")? as usize;
    if runs > r.remaining() / 4 {
        return Err(FormatError::Truncated { what: "mask runs", offset: r.pos });
    }
    let mut bits = Vec::with_capacity(pixels);
    let mut value = false;
    for _ in 0..runs {
        let len = r.u32("mask run")? as usize;
        if len > pixels - bits.len() {
            return Err(FormatError::Invalid("mask runs overflow the image".into()));
        }
        bits.extend(std::iter::repeat_n(value, len));
        value = !value;
    }
    if bits.len() != pixels {
        return Err(FormatError::Invalid(format!("mask runs cover {} of {pixels} pixels", bits.len())));
    }
    Ok(Mask { width, height, bits })
}

fn read_frame(r: &mut Reader<'_>, k: &Intrinsics) -> Result<FrameData, FormatError> {
    let pose = PoseSE3::from_flat(&r.f64s::<12>("pose")?);
    pose.validate().map_err(|_| FormatError::Invalid("pose rotation is not orthonormal".into()))?;
    let waypoint = Vec3::from(r.f64s::<3>("waypoint")?);
    let raw_h = r.f64s::<9>("homography")?;
    let homography = Homography::from_flat(&raw_h).map_err(|e| FormatError::Invalid(format!("homography: {e}")))?;
    if homography.to_flat() != raw_h {
        return Err(FormatError::Invalid("homography is not normalized to h[2][2] = 1".into()));
    }
    let count = r.u32("point count")? as usize;
    if count > r.remaining() / 12 {
        return Err(FormatError::Truncated { what: "points", offset: r.pos });
    }
    let raw = r.take(12 * count, "points")?;
    let mut flat = vec![0.0f32; 3 * count];
    LittleEndian::read_f32_into(raw, &mut flat);
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::Invalid("non-finite point".into()));
    }
    let points = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let mask = read_mask(r, k.width, k.height)?;
    Ok(FrameData {
        pose,
        waypoint,
        homography,
        points,
        mask,
    })
}

pub fn decode_sequence(bytes: &[u8]) -> Result<Sequence, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(FormatError::Version { found: version, expected: VERSION });
    }
    let id_len = r.u16("id length")? as usize;
    let id = std::str::from_utf8(r.take(id_len, "id")?)
        .map_err(|_| FormatError::Invalid("id is not UTF-8".into()))?
        .to_string();
    let n_past = r.u32("n_past")? as usize;
    let n_future = r.u32("n_future")? as usize;
    let total = n_past + n_future;
    if n_past == 0 || n_future == 0 || total > MAX_FRAMES {
        return Err(FormatError::Invalid(format!("frame counts {n_past} + {n_future}")));
    }
    let intrinsics = read_intrinsics(&mut r)?;
    let tag = r.u8("mode")?;
    let mode = SynergyMode::from_tag(tag).ok_or_else(|| FormatError::Invalid(format!("mode tag {tag}")))?;
    let scene_seed = r.u64("scene seed")?;
    let mut frames = Vec::new();
    for _ in 0..total {
        frames.push(read_frame(&mut r, &intrinsics)?);
    }
    if r.remaining() != 0 {
        return Err(FormatError::Invalid(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Sequence {
        id,
        n_past,
        n_future,
        intrinsics,
        mode,
        scene_seed,
        frames,
    })
}

pub fn write_sequence(seq: &Sequence, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, encode_sequence(seq)).map_err(|e| DataError::io(path, e))
}

pub fn read_sequence(path: &Path) -> Result<Sequence, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_sequence(&bytes).map_err(|source| DataError::Format {
        path: path.to_path_buf(),
        source,
    })
}
