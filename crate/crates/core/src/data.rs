//! Core matrices and label containers.
//!
//! Embeddings are stored as row-major `f32`; every reduction over them (dot
//! products, norms, sums) accumulates in `f64`.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use crate::error::{Error, Result};

/// Rows whose Euclidean norm is within this distance of 1 count as normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn check_finite(data: &[f32], dim: usize) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(pos) => Err(Error::NonFiniteValue {
            row: pos / dim.max(1),
            col: pos % dim.max(1),
        }),
        None => Ok(()),
    }
}

fn rows_are_unit(data: &[f32], dim: usize) -> bool {
    dim > 0
        && data
            .chunks_exact(dim)
            .all(|row| libm::fabs(norm(row) - 1.0) <= UNIT_NORM_TOLERANCE)
}

/// `count` sample embeddings of dimension `dim`, with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    count: usize,
    dim: usize,
    data: Vec<f32>,
    normalized: bool,
    labels: Option<Vec<Option<usize>>>,
}

impl EmbeddingSet {
    /// Wraps a row-major matrix. The `normalized` flag is set when every row
    /// already has unit norm.
    pub fn new(count: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        let expected = count * dim;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: data.len(),
            });
        }
        check_finite(&data, dim)?;
        let normalized = count == 0 || rows_are_unit(&data, dim);
        Ok(Self {
            count,
            dim,
            data,
            normalized,
            labels: None,
        })
    }

    /// Attaches per-row ground truth; `None` marks an unlabelled row.
    pub fn with_labels(mut self, labels: Vec<Option<usize>>) -> Result<Self> {
        if labels.len() != self.count {
            return Err(Error::LabelCountMismatch {
                expected: self.count,
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.dim.max(1)).take(self.count)
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l[i])
    }

    /// Ground truth for row `i`, failing when it is absent.
    pub fn truth(&self, i: usize) -> Result<usize> {
        self.label(i).ok_or(Error::MissingGroundTruth(i))
    }

    /// Checks that every present label is below `class_count`.
    pub fn check_labels(&self, class_count: usize) -> Result<()> {
        if let Some(labels) = &self.labels {
            for (row, label) in labels.iter().enumerate() {
                if let Some(label) = *label {
                    if label >= class_count {
                        return Err(Error::LabelOutOfRange {
                            row,
                            label,
                            classes: class_count,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// A new set holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.count {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.count,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(Self {
            count: indices.len(),
            dim: self.dim,
            data,
            normalized: self.normalized,
            labels,
        })
    }
}

/// Scales every row to unit Euclidean norm.
pub fn normalize_rows(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut data = Vec::with_capacity(set.data.len());
    for (i, row) in set.rows().enumerate() {
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::ZeroNormRow(i));
        }
        data.extend(row.iter().map(|&v| (v as f64 / n) as f32));
    }
    Ok(EmbeddingSet {
        count: set.count,
        dim: set.dim,
        data,
        normalized: true,
        labels: set.labels.clone(),
    })
}

/// Class-anchor embeddings, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddings {
    class_count: usize,
    dim: usize,
    weights: Vec<f32>,
    names: Option<Vec<String>>,
}

impl ClassEmbeddings {
    pub fn new(class_count: usize, dim: usize, weights: Vec<f32>) -> Result<Self> {
        let expected = class_count * dim;
        if weights.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: weights.len(),
            });
        }
        check_finite(&weights, dim)?;
        Ok(Self {
            class_count,
            dim,
            weights,
            names: None,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.class_count {
            return Err(Error::InvalidConfig(format!(
                "{} class names for {} classes",
                names.len(),
                self.class_count
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.weights[k * self.dim..(k + 1) * self.dim]
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn is_normalized(&self) -> bool {
        self.class_count == 0 || rows_are_unit(&self.weights, self.dim)
    }

    /// Rows reordered so that new row `k` is old row `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.class_count {
            return Err(Error::ShapeMismatch {
                expected: self.class_count,
                got: order.len(),
            });
        }
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut seen = vec![false; self.class_count];
        for &k in order {
            if k >= self.class_count {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    len: self.class_count,
                });
            }
            if core::mem::replace(&mut seen[k], true) {
                return Err(Error::InvalidConfig(format!("class {k} repeated in permutation")));
            }
            weights.extend_from_slice(self.row(k));
        }
        let names = self
            .names
            .as_ref()
            .map(|n| order.iter().map(|&k| n[k].clone()).collect());
        Ok(Self {
            class_count: self.class_count,
            dim: self.dim,
            weights,
            names,
        })
    }

    /// Views the class rows as an embedding set (e.g. for nearest-anchor scans).
    pub fn as_embedding_set(&self) -> EmbeddingSet {
        EmbeddingSet {
            count: self.class_count,
            dim: self.dim,
            data: self.weights.clone(),
            normalized: self.is_normalized(),
            labels: None,
        }
    }
}

/// Row-stochastic matrix of class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
}

impl ProbMatrix {
    /// Validates entries in `[0, 1]` and row sums within `1e-5` of one.
    pub fn new(rows: usize, cols: usize, probs: Vec<f64>) -> Result<Self> {
        let expected = rows * cols;
        if probs.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: probs.len(),
            });
        }
        for (i, row) in probs.chunks_exact(cols.max(1)).take(rows).enumerate() {
            if let Some(c) = row
                .iter()
                .position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
            {
                return Err(Error::NonFiniteValue { row: i, col: c });
            }
            let sum: f64 = row.iter().sum();
            if libm::fabs(sum - 1.0) > 1e-5 {
                return Err(Error::InvalidConfig(format!(
                    "probability row {i} sums to {sum}"
                )));
            }
        }
        Ok(Self { rows, cols, probs })
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), rows * cols);
        Self { rows, cols, probs }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.cols..(i + 1) * self.cols]
    }

    /// Columns reordered so that new column `k` is old column `order[k]`.
    pub fn permute_columns(&self, order: &[usize]) -> Self {
        let mut probs = Vec::with_capacity(self.probs.len());
        for i in 0..self.rows {
            let row = self.row(i);
            probs.extend(order.iter().map(|&k| row[k]));
        }
        Self::from_raw(self.rows, self.cols, probs)
    }
}

/// Binary candidate-label vector of a weakly labelled sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CandidateMask(Vec<bool>);

impl CandidateMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn one_hot(classes: usize, class: usize) -> Self {
        let mut bits = vec![false; classes];
        bits[class] = true;
        Self(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.0.get(class).copied().unwrap_or(false)
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// The labelled set, the cluster pseudo-labels, the confident set (which
/// contains the cluster pseudo-labels) and the weak set with candidate masks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSets {
    pub labelled: Vec<(usize, usize)>,
    pub cluster_pseudo: Vec<(usize, usize)>,
    pub confident: Vec<(usize, usize)>,
    pub weak: Vec<(usize, CandidateMask)>,
}

impl LabelSets {
    /// Checks disjointness of labelled/confident/weak, `cluster_pseudo ⊆
    /// confident` with matching labels, and candidate-mask cardinalities.
    pub fn validate(&self, pool_size: usize, class_count: usize) -> Result<()> {
        // 0 = free, 1 = labelled, 2 = confident, 3 = weak
        let mut owner = vec![0u8; pool_size];
        let mut confident_label = vec![usize::MAX; pool_size];
        let mut claim = |i: usize, tag: u8| -> Result<()> {
            if i >= pool_size {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: pool_size,
                });
            }
            if owner[i] != 0 {
                return Err(Error::InvalidLabelSets(format!(
                    "sample {i} appears in more than one set"
                )));
            }
            owner[i] = tag;
            Ok(())
        };
        for &(i, c) in &self.labelled {
            check_class(c, class_count)?;
            claim(i, 1)?;
        }
        for &(i, c) in &self.confident {
            check_class(c, class_count)?;
            claim(i, 2)?;
            confident_label[i] = c;
        }
        for (i, mask) in &self.weak {
            claim(*i, 3)?;
            let ones = mask.count_ones();
            if mask.len() != class_count || ones == 0 {
                return Err(Error::InvalidLabelSets(format!(
                    "candidate mask of sample {i} has {ones} of {} bits set",
                    mask.len()
                )));
            }
        }
        for &(i, c) in &self.cluster_pseudo {
            if i >= pool_size || confident_label[i] != c {
                return Err(Error::InvalidLabelSets(format!(
                    "cluster pseudo-label ({i}, {c}) missing from the confident set"
                )));
            }
        }
        Ok(())
    }

    /// `(|labelled|, |cluster_pseudo|, |confident|, |weak|)`.
    pub fn sizes(&self) -> [usize; 4] {
        [
            self.labelled.len(),
            self.cluster_pseudo.len(),
            self.confident.len(),
            self.weak.len(),
        ]
    }
}

fn check_class(c: usize, class_count: usize) -> Result<()> {
    if c >= class_count {
        return Err(Error::IndexOutOfRange {
            index: c,
            len: class_count,
        });
    }
    Ok(())
}
