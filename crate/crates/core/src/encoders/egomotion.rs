use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EncoderError, LATENT_EPS};
use crate::geometry::{Homography, PoseSE3};
use crate::numerics::{Ctx, Mlp, ParamStore, Var};

/// How camera egomotion is represented before encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EgoRepr {
    Homography,
    Se3,
}

impl EgoRepr {
    pub fn width(self) -> usize {
        match self {
            EgoRepr::Homography => 9,
            EgoRepr::Se3 => 12,
        }
    }
}

/// One flattened row per frame: 9 homography entries (normalized
/// `h[2][2] = 1`) or 9 rotation entries followed by the translation.
pub fn homography_rows(seq: &[Homography]) -> Result<Array2<f64>, EncoderError> {
    if seq.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    let flat: Vec<f64> = seq.iter().flat_map(|h| h.to_flat()).collect();
    Ok(Array2::from_shape_vec((seq.len(), 9), flat).expect("9 entries per row"))
}

pub fn pose_rows(seq: &[PoseSE3]) -> Result<Array2<f64>, EncoderError> {
    if seq.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    let flat: Vec<f64> = seq.iter().flat_map(|p| p.to_flat()).collect();
    Ok(Array2::from_shape_vec((seq.len(), 12), flat).expect("12 entries per row"))
}

/// Row-wise two-layer perceptron from flattened egomotion to `f` channels,
/// with standardized output rows.
#[derive(Clone, Debug)]
pub struct EgomotionEncoder {
    pub repr: EgoRepr,
    pub mlp: Mlp,
}

impl EgomotionEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, repr: EgoRepr, f: usize, rng: &mut impl Rng) -> Self {
        EgomotionEncoder {
            repr,
            mlp: Mlp::new(store, &format!("{prefix}.mlp"), repr.width(), f, f, rng),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, rows: Var<'t>) -> Result<Var<'t>, EncoderError> {
        if rows.rows() == 0 {
            return Err(EncoderError::EmptySequence);
        }
        if rows.cols() != self.repr.width() {
            return Err(EncoderError::LengthMismatch {
                what: "egomotion row width",
                expected: self.repr.width(),
                got: rows.cols(),
            });
        }
        Ok(self.mlp.forward(ctx, rows)?.normalize_rows(LATENT_EPS))
    }
}
