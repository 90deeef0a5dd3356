//! Confidence-aware set construction and the training losses.
//!
//! The confident set is the cluster pseudo-labels plus, for every class, the
//! `t` unlabelled samples predicted as that class with the highest
//! confidence. Everything else in the pool that is not labelled becomes weakly
//! labelled with a top-k candidate mask and is trained with the partial-label
//! loss.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{CandidateMask, LabelSets, ProbMatrix};
use crate::error::{Error, Result};
use crate::scoring::argmax;

/// Probabilities are clamped to this floor before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SslConfig {
    /// Fraction of the pool admitted to the confident set.
    pub tau: f64,
    /// Number of candidate classes in a weak-set mask.
    pub top_k: usize,
    /// Weight of the partial-label term.
    pub lambda: f64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            top_k: 2,
            lambda: 1.0,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig("tau must lie in (0, 1]".to_string()));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top-k must be at least 1".to_string()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be non-negative".to_string()));
        }
        Ok(())
    }

    /// Per-class confident budget `max(1, round(tau * pool / classes))`.
    pub fn per_class_budget(&self, pool: usize, classes: usize) -> usize {
        let t = libm::round(self.tau * pool as f64 / classes.max(1) as f64) as usize;
        t.max(1)
    }
}

/// Cluster pseudo-labels followed by the top-`t` most confident samples of
/// each predicted class, skipping labelled and cluster-pseudo-labelled
/// samples. Ties in confidence go to the lower sample index.
pub fn build_confident_set(
    probs: &ProbMatrix,
    cluster_pseudo: &[(usize, usize)],
    labelled: &[(usize, usize)],
    config: &SslConfig,
) -> Result<Vec<(usize, usize)>> {
    config.validate()?;
    let m = probs.rows();
    let classes = probs.cols();
    let mut taken = vec![false; m];
    for &(i, _) in labelled.iter().chain(cluster_pseudo) {
        if i >= m {
            return Err(Error::IndexOutOfRange { index: i, len: m });
        }
        taken[i] = true;
    }
    let mut by_class: Vec<Vec<(f64, usize)>> = vec![Vec::new(); classes];
    for (i, _) in taken.iter().enumerate().filter(|(_, &t)| !t) {
        let row = probs.row(i);
        let c = argmax(row);
        by_class[c].push((row[c], i));
    }
    let t = config.per_class_budget(m, classes);
    let mut confident = cluster_pseudo.to_vec();
    for (c, mut members) in by_class.into_iter().enumerate() {
        members.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        confident.extend(members.into_iter().take(t).map(|(_, i)| (i, c)));
    }
    Ok(confident)
}

/// Mask with ones at the `k` most probable classes (ties: lower class index).
pub fn top_k_mask(row: &[f64], k: usize) -> CandidateMask {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    let mut bits = vec![false; row.len()];
    for &c in order.iter().take(k) {
        bits[c] = true;
    }
    CandidateMask::new(bits)
}

/// Every pool sample not in `exclude`, with its top-k candidate mask.
pub fn build_weak_set(
    probs: &ProbMatrix,
    exclude: &[usize],
    config: &SslConfig,
) -> Result<Vec<(usize, CandidateMask)>> {
    if config.top_k > probs.cols() {
        return Err(Error::TopKExceedsClasses {
            k: config.top_k,
            classes: probs.cols(),
        });
    }
    let mut skip = vec![false; probs.rows()];
    for &i in exclude {
        if i >= probs.rows() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: probs.rows(),
            });
        }
        skip[i] = true;
    }
    Ok((0..probs.rows())
        .filter(|&i| !skip[i])
        .map(|i| (i, top_k_mask(probs.row(i), config.top_k)))
        .collect())
}

/// Builds all four sets for one session from the current predictions.
pub fn build_label_sets(
    probs: &ProbMatrix,
    labelled: &[(usize, usize)],
    cluster_pseudo: &[(usize, usize)],
    config: &SslConfig,
) -> Result<LabelSets> {
    let confident = build_confident_set(probs, cluster_pseudo, labelled, config)?;
    let exclude: Vec<usize> = labelled
        .iter()
        .chain(&confident)
        .map(|&(i, _)| i)
        .collect();
    let weak = build_weak_set(probs, &exclude, config)?;
    Ok(LabelSets {
        labelled: labelled.to_vec(),
        cluster_pseudo: cluster_pseudo.to_vec(),
        confident,
        weak,
    })
}

/// `-ln p(label)`, with the probability floored at [`LOG_FLOOR`].
pub fn cross_entropy(probs_row: &[f64], label: usize) -> f64 {
    -libm::log(probs_row[label].max(LOG_FLOOR))
}

/// `-Σ_c mask_c ln p(c)`, with probabilities floored at [`LOG_FLOOR`].
pub fn partial_label_loss(probs_row: &[f64], mask: &CandidateMask) -> f64 {
    probs_row
        .iter()
        .zip(mask.bits())
        .filter(|(_, &on)| on)
        .map(|(&p, _)| -libm::log(p.max(LOG_FLOOR)))
        .sum()
}

/// Supervision attached to one batch row.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchTarget {
    Labelled(usize),
    Confident(usize),
    Weak(CandidateMask),
}

/// Mean cross-entropy over labelled rows, plus mean cross-entropy over
/// confident rows, plus `lambda` times the mean partial-label loss over weak
/// rows. A term without rows contributes zero.
pub fn combined_loss(
    head_probs: &ProbMatrix,
    targets: &[BatchTarget],
    config: &SslConfig,
) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if head_probs.rows() != targets.len() {
        return Err(Error::ShapeMismatch {
            expected: targets.len(),
            got: head_probs.rows(),
        });
    }
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for (i, target) in targets.iter().enumerate() {
        let row = head_probs.row(i);
        let (slot, loss) = match target {
            BatchTarget::Labelled(c) => (0, cross_entropy(row, *c)),
            BatchTarget::Confident(c) => (1, cross_entropy(row, *c)),
            BatchTarget::Weak(mask) => (2, partial_label_loss(row, mask)),
        };
        sums[slot] += loss;
        counts[slot] += 1;
    }
    let mean = |s: usize| {
        if counts[s] == 0 {
            0.0
        } else {
            sums[s] / counts[s] as f64
        }
    };
    Ok(mean(0) + mean(1) + config.lambda * mean(2))
}
