//! Cluster-guided pseudo-labelling.
//!
//! Labelled samples act as fixed cluster centres in embedding space. Every
//! other sample joins its nearest centre, and the `p` members closest to each
//! centre inherit the centre's ground-truth label. Class embeddings and
//! zero-shot scores play no part here.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{squared_distance, EmbeddingSet};
use crate::error::{Error, Result};
use crate::par;
use crate::sampler::ClusterResult;

/// Members of each anchor's cluster with their squared distance to the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorClusters {
    pub anchor_indices: Vec<usize>,
    /// Per anchor, `(sample, squared distance)` sorted by distance then index.
    pub member_lists: Vec<Vec<(usize, f64)>>,
}

impl AnchorClusters {
    /// Anchor position owning each sample; `None` for anchors themselves.
    pub fn owner_of(&self, count: usize) -> Vec<Option<usize>> {
        let mut owner = vec![None; count];
        for (j, members) in self.member_lists.iter().enumerate() {
            for &(i, _) in members {
                owner[i] = Some(j);
            }
        }
        owner
    }
}

fn check_anchors(samples: &EmbeddingSet, anchors: &[usize]) -> Result<Vec<bool>> {
    let mut is_anchor = vec![false; samples.count()];
    for &a in anchors {
        if a >= samples.count() {
            return Err(Error::IndexOutOfRange {
                index: a,
                len: samples.count(),
            });
        }
        if is_anchor[a] {
            return Err(Error::DuplicateAnchor(a));
        }
        is_anchor[a] = true;
    }
    Ok(is_anchor)
}

fn nearest_anchor(samples: &EmbeddingSet, anchors: &[usize], i: usize) -> (usize, f64) {
    let z = samples.row(i);
    let mut best = (0, f64::INFINITY);
    for (j, &a) in anchors.iter().enumerate() {
        let d = squared_distance(z, samples.row(a));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn sort_members(lists: &mut [Vec<(usize, f64)>]) {
    for list in lists {
        list.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    }
}

/// Assigns every non-anchor sample to the nearest anchor by squared
/// Euclidean distance (ties: lower anchor position). Anchors stay fixed.
pub fn assign_to_anchors(samples: &EmbeddingSet, labelled: &[usize]) -> Result<AnchorClusters> {
    let is_anchor = check_anchors(samples, labelled)?;
    if labelled.is_empty() {
        return Err(Error::NotEnoughPoints {
            points: samples.count(),
            clusters: 0,
        });
    }
    let nearest = par::map_indices(samples.count(), |i| {
        (!is_anchor[i]).then(|| nearest_anchor(samples, labelled, i))
    });
    let mut lists = vec![Vec::new(); labelled.len()];
    for (i, n) in nearest.into_iter().enumerate() {
        if let Some((j, d)) = n {
            lists[j].push((i, d));
        }
    }
    sort_members(&mut lists);
    Ok(AnchorClusters {
        anchor_indices: labelled.to_vec(),
        member_lists: lists,
    })
}

/// Anchor clusters from a k-means run whose medoids became the labelled set.
///
/// Clustered points keep their k-means cluster; points outside the clustering
/// (filtered out before k-means) fall back to the nearest medoid. Distances
/// are always measured to the medoid sample.
pub fn anchors_from_kmeans(
    samples: &EmbeddingSet,
    clusters: &ClusterResult,
    medoids: &[usize],
) -> Result<AnchorClusters> {
    let is_anchor = check_anchors(samples, medoids)?;
    if medoids.len() != clusters.cluster_count() {
        return Err(Error::ShapeMismatch {
            expected: clusters.cluster_count(),
            got: medoids.len(),
        });
    }
    let mut cluster_of = vec![None; samples.count()];
    for (&i, &j) in clusters.indices.iter().zip(&clusters.assignments) {
        if i >= samples.count() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: samples.count(),
            });
        }
        cluster_of[i] = Some(j);
    }
    let placed = par::map_indices(samples.count(), |i| {
        if is_anchor[i] {
            return None;
        }
        Some(match cluster_of[i] {
            Some(j) => (j, squared_distance(samples.row(i), samples.row(medoids[j]))),
            None => nearest_anchor(samples, medoids, i),
        })
    });
    let mut lists = vec![Vec::new(); medoids.len()];
    for (i, p) in placed.into_iter().enumerate() {
        if let Some((j, d)) = p {
            lists[j].push((i, d));
        }
    }
    sort_members(&mut lists);
    Ok(AnchorClusters {
        anchor_indices: medoids.to_vec(),
        member_lists: lists,
    })
}

/// The `p` nearest members of every anchor, labelled with the anchor's class.
pub fn cluster_pseudolabels(
    clusters: &AnchorClusters,
    anchor_labels: &[usize],
    p: usize,
) -> Result<Vec<(usize, usize)>> {
    if anchor_labels.len() != clusters.anchor_indices.len() {
        return Err(Error::ShapeMismatch {
            expected: clusters.anchor_indices.len(),
            got: anchor_labels.len(),
        });
    }
    Ok(clusters
        .member_lists
        .iter()
        .zip(anchor_labels)
        .flat_map(|(members, &label)| members.iter().take(p).map(move |&(i, _)| (i, label)))
        .collect())
}

/// Fraction of pseudo-labels matching ground truth; 1.0 when there are none.
pub fn pseudolabel_accuracy(pseudo: &[(usize, usize)], truth: &EmbeddingSet) -> Result<f64> {
    if pseudo.is_empty() {
        return Ok(1.0);
    }
    let mut correct = 0usize;
    for &(i, c) in pseudo {
        if i >= truth.count() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: truth.count(),
            });
        }
        if truth.truth(i)? == c {
            correct += 1;
        }
    }
    Ok(correct as f64 / pseudo.len() as f64)
}
