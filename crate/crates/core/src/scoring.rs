//! Class probabilities from cosine similarity to class anchors, and the
//! per-sample confidence and argmax read-outs.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{ClassEmbeddings, EmbeddingSet, ProbMatrix};
use crate::error::{Error, Result};
use crate::par;

/// Softmax temperature applied to cosine similarities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    /// Logit scale 100 on cosine similarity, the usual setting for
    /// contrastively pretrained image/text encoders.
    pub const DEFAULT: f64 = 0.01;

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Self(value))
        } else {
            Err(Error::InvalidTemperature(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(Self::DEFAULT)
    }
}

/// Euclidean norms of the `classes` rows of `weights`.
pub(crate) fn row_norms(weights: &[f64], dim: usize) -> Vec<f64> {
    weights
        .chunks_exact(dim.max(1))
        .map(|w| libm::sqrt(w.iter().map(|v| v * v).sum()))
        .collect()
}

/// `out[k] = cos(z, w_k) / t`.
pub(crate) fn cosine_logits(
    z: &[f32],
    weights: &[f64],
    class_norms: &[f64],
    temp: f64,
    out: &mut [f64],
) {
    let dim = z.len();
    let z_norm = crate::data::norm(z);
    for (k, logit) in out.iter_mut().enumerate() {
        let w = &weights[k * dim..(k + 1) * dim];
        let d: f64 = z.iter().zip(w).map(|(&a, &b)| a as f64 * b).sum();
        *logit = d / (z_norm * class_norms[k]) / temp;
    }
}

/// Turns logits into probabilities in place, subtracting the row maximum
/// first. Returns `ln Σ exp(logit - max)`, which callers use for log-softmax.
pub(crate) fn softmax_in_place(values: &mut [f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
    libm::log(sum)
}

/// Probabilities for the given sample rows against f64 class weights. Shared
/// by zero-shot scoring and the learnable head so both agree bit for bit.
pub(crate) fn predict_rows(
    samples: &EmbeddingSet,
    rows: &[usize],
    weights: &[f64],
    classes: usize,
    temp: f64,
) -> Vec<f64> {
    let norms = row_norms(weights, samples.dim());
    let per_row = par::map_indices(rows.len(), |r| {
        let mut out = vec![0.0; classes];
        cosine_logits(samples.row(rows[r]), weights, &norms, temp, &mut out);
        softmax_in_place(&mut out);
        out
    });
    per_row.into_iter().flatten().collect()
}

/// Zero-shot class probabilities of every sample.
///
/// Both inputs must be row-normalized so the similarity is a cosine.
pub fn predict_probs(
    samples: &EmbeddingSet,
    classes: &ClassEmbeddings,
    temp: Temperature,
) -> Result<ProbMatrix> {
    if samples.dim() != classes.dim() {
        return Err(Error::DimMismatch {
            left: samples.dim(),
            right: classes.dim(),
        });
    }
    if !samples.is_normalized() {
        return Err(Error::NotNormalized("sample"));
    }
    if !classes.is_normalized() {
        return Err(Error::NotNormalized("class"));
    }
    let weights: Vec<f64> = classes.weights().iter().map(|&v| v as f64).collect();
    let rows: Vec<usize> = (0..samples.count()).collect();
    let probs = predict_rows(
        samples,
        &rows,
        &weights,
        classes.class_count(),
        temp.value(),
    );
    Ok(ProbMatrix::from_raw(
        samples.count(),
        classes.class_count(),
        probs,
    ))
}

/// Maximum class probability of each row.
pub fn confidence(probs: &ProbMatrix) -> Vec<f64> {
    (0..probs.rows())
        .map(|i| probs.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Predicted class of each row; ties go to the lowest class index.
pub fn argmax_labels(probs: &ProbMatrix) -> Vec<usize> {
    (0..probs.rows()).map(|i| argmax(probs.row(i))).collect()
}
