use super::EvalError;
use crate::data::{derive_seed, make_batch, Sample};
use crate::diffusion::TwinModel;
use crate::geometry::Vec3;

/// Maps observed samples to future waypoints in global metres.
pub trait Predictor {
    fn tag(&self) -> String;
    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Vec<Vec3>>, EvalError>;
}

/// `last + k·(last − second_to_last)` for `k = 1..=n_future`.
pub fn cvh_baseline(past: &[Vec3], n_future: usize) -> Result<Vec<Vec3>, EvalError> {
    let [.., prev, last] = past else {
        return Err(EvalError::TooShort { got: past.len() });
    };
    let v = last - prev;
    Ok((1..=n_future).map(|k| last + v * k as f64).collect())
}

pub fn constant_position(past: &[Vec3], n_future: usize) -> Result<Vec<Vec3>, EvalError> {
    let last = past.last().ok_or(EvalError::Empty)?;
    Ok(vec![*last; n_future])
}

pub struct Cvh;
pub struct ConstantPosition;
/// Returns the ground truth; every metric is zero.
pub struct Oracle;

impl Predictor for Cvh {
    fn tag(&self) -> String {
        "cvh".into()
    }
    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Vec<Vec3>>, EvalError> {
        samples.iter().map(|s| cvh_baseline(&s.past_global, s.layout.n_future)).collect()
    }
}

impl Predictor for ConstantPosition {
    fn tag(&self) -> String {
        "constant-position".into()
    }
    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Vec<Vec3>>, EvalError> {
        samples.iter().map(|s| constant_position(&s.past_global, s.layout.n_future)).collect()
    }
}

impl Predictor for Oracle {
    fn tag(&self) -> String {
        "oracle".into()
    }
    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Vec<Vec3>>, EvalError> {
        Ok(samples.iter().map(|s| s.future_global.clone()).collect())
    }
}

/// Trained model run on past-only batches. Chunk `i` is sampled with a seed
/// derived from `(seed, i)`, so the output does not depend on call history.
pub struct ModelPredictor<'a> {
    pub model: &'a TwinModel,
    pub tag: String,
    pub seed: u64,
    pub batch_size: usize,
}

impl Predictor for ModelPredictor<'_> {
    fn tag(&self) -> String {
        self.tag.clone()
    }

    fn predict(&self, samples: &[&Sample]) -> Result<Vec<Vec<Vec3>>, EvalError> {
        let nf = self.model.config.n_future;
        let mut out = Vec::with_capacity(samples.len());
        for (i, chunk) in samples.chunks(self.batch_size.max(1)).enumerate() {
            let batch = make_batch(chunk, &self.model.config, true)?;
            let pred = self.model.predict(&batch, derive_seed(self.seed, "predict", i as u64))?;
            for (b, s) in chunk.iter().enumerate() {
                out.push(s.to_global(pred.slice(ndarray::s![b * nf..(b + 1) * nf, ..])));
            }
        }
        Ok(out)
    }
}
