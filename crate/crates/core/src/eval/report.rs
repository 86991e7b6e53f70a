use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{ade, ade_2d, fde, fde_2d, to_2d_normalized};
use super::{EvalError, Predictor};
use crate::data::Sample;
use crate::geometry::Vec3;

pub const CSV_HEADER: &str = "sequence_id,ade3d,fde3d,ade2d,fde2d";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub sequence_id: String,
    /// Metres.
    pub ade3d: f64,
    pub fde3d: f64,
    /// Image-normalized units; `None` when every pair was excluded.
    pub ade2d: Option<f64>,
    pub fde2d: Option<f64>,
    /// Future frames left out of the 2D metrics.
    pub excluded_2d: usize,
}

/// Arithmetic means over sequences, in sequence order. 2D means run over
/// the sequences that have a value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub ade3d: f64,
    pub fde3d: f64,
    pub ade2d: Option<f64>,
    pub fde2d: Option<f64>,
    pub excluded_2d: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_tag: String,
    pub config_hash: String,
    pub sequences: Vec<SequenceMetrics>,
    pub mean: Aggregate,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    pub fn from_sequences(model_tag: String, config_hash: String, sequences: Vec<SequenceMetrics>) -> Self {
        let mean = Aggregate {
            ade3d: mean_of(sequences.iter().map(|s| Some(s.ade3d))).unwrap_or(0.0),
            fde3d: mean_of(sequences.iter().map(|s| Some(s.fde3d))).unwrap_or(0.0),
            ade2d: mean_of(sequences.iter().map(|s| s.ade2d)),
            fde2d: mean_of(sequences.iter().map(|s| s.fde2d)),
            excluded_2d: sequences.iter().map(|s| s.excluded_2d).sum(),
        };
        MetricReport {
            model_tag,
            config_hash,
            sequences,
            mean,
        }
    }

    /// Per-sequence CSV with [`CSV_HEADER`]; absent 2D values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for s in &self.sequences {
            writeln!(out, "{},{},{},{},{}", s.sequence_id, s.ade3d, s.fde3d, opt(s.ade2d), opt(s.fde2d)).unwrap();
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per report: model, the four means and the exclusion count.
pub fn summary_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("model,ade3d,fde3d,ade2d,fde2d,excluded_2d,config_hash\n");
    for r in reports {
        let m = &r.mean;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.model_tag,
            m.ade3d,
            m.fde3d,
            opt(m.ade2d),
            opt(m.fde2d),
            m.excluded_2d,
            r.config_hash
        )
        .unwrap();
    }
    out
}

/// Runs `predictor` over `samples` and scores it against their futures.
pub fn evaluate(predictor: &dyn Predictor, samples: &[Sample], config_hash: &str) -> Result<MetricReport, EvalError> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let preds = predictor.predict(&refs)?;
    if preds.len() != samples.len() {
        return Err(EvalError::Count {
            what: "predicted sequences",
            expected: samples.len(),
            got: preds.len(),
        });
    }
    let mut rows = Vec::with_capacity(samples.len());
    for (s, pred) in samples.iter().zip(&preds) {
        let gt = &s.future_global;
        let p2 = to_2d_normalized(pred, &s.intrinsics, &s.future_poses)?;
        let g2 = to_2d_normalized(gt, &s.intrinsics, &s.future_poses)?;
        let (ade2d, excluded_2d) = ade_2d(&p2, &g2)?;
        rows.push(SequenceMetrics {
            sequence_id: s.id.clone(),
            ade3d: ade(pred, gt)?,
            fde3d: fde(pred, gt)?,
            ade2d,
            fde2d: fde_2d(&p2, &g2)?,
            excluded_2d,
        });
    }
    Ok(MetricReport::from_sequences(predictor.tag(), config_hash.to_string(), rows))
}

/// Top-down (lateral x, depth z) plot: past green, ground-truth future
/// blue, predicted future red. The view is fitted to all points.
pub fn trajectory_svg(past: &[Vec3], gt: &[Vec3], pred: &[Vec3]) -> String {
    const SIZE: f64 = 400.0;
    const MARGIN: f64 = 20.0;
    let all: Vec<&Vec3> = past.iter().chain(gt).chain(pred).collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &all {
        for (k, v) in [p.x, p.z].into_iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let to_px = |p: &Vec3| (MARGIN + (p.x - lo[0]) * scale, SIZE - MARGIN - (p.z - lo[1]) * scale);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    // futures start at the last past point so the curves connect
    let joined = |tail: &[Vec3]| past.last().into_iter().chain(tail).copied().collect::<Vec<Vec3>>();
    for (pts, color) in [(past.to_vec(), "green"), (joined(gt), "blue"), (joined(pred), "red")] {
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = to_px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            coords.join(" ")
        )
        .unwrap();
        for p in &pts {
            let (x, y) = to_px(p);
            writeln!(out, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>").unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}
