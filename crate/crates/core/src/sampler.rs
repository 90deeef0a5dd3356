//! Labelled-set selection under a label budget.
//!
//! Weakly-supervised sampling runs in two steps: confidence quantile filtering
//! using the zero-shot probabilities, then k-means over the retained
//! embeddings with one medoid kept per cluster. A uniform random draw is
//! provided as the baseline.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EmbeddingSet, ProbMatrix};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, stream};
use crate::scoring::confidence;

/// Which confidence quantiles survive the filtering step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterStrategy {
    /// Drop the most and the least confident quantile.
    #[default]
    RemoveBoth,
    /// Drop only the least confident quantile.
    RemoveLowOnly,
    /// Drop only the most confident quantile.
    RemoveHighOnly,
    /// Keep only the most confident quantile.
    KeepHighOnly,
    /// Keep only the least confident quantile.
    KeepLowOnly,
    NoFilter,
}

impl FilterStrategy {
    pub const ALL: [FilterStrategy; 6] = [
        FilterStrategy::RemoveBoth,
        FilterStrategy::RemoveLowOnly,
        FilterStrategy::RemoveHighOnly,
        FilterStrategy::KeepHighOnly,
        FilterStrategy::KeepLowOnly,
        FilterStrategy::NoFilter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterStrategy::RemoveBoth => "remove-both",
            FilterStrategy::RemoveLowOnly => "remove-low",
            FilterStrategy::RemoveHighOnly => "remove-high",
            FilterStrategy::KeepHighOnly => "keep-high",
            FilterStrategy::KeepLowOnly => "keep-low",
            FilterStrategy::NoFilter => "none",
        }
    }
}

impl fmt::Display for FilterStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown filter strategy {s:?}")))
    }
}

/// k-means initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterAlgo {
    /// Uniformly random distinct points as initial centres.
    #[default]
    Lloyd,
    /// Distance-squared weighted seeding.
    PlusPlusInit,
    /// Repeated 2-way ++ splits of the highest-inertia cluster.
    BisectingPlusPlus,
}

impl ClusterAlgo {
    pub fn name(self) -> &'static str {
        match self {
            ClusterAlgo::Lloyd => "kmeans",
            ClusterAlgo::PlusPlusInit => "kmeans++",
            ClusterAlgo::BisectingPlusPlus => "bisecting-kmeans++",
        }
    }
}

impl fmt::Display for ClusterAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClusterAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" | "lloyd" => Ok(ClusterAlgo::Lloyd),
            "kmeans++" | "plusplus" => Ok(ClusterAlgo::PlusPlusInit),
            "bisecting-kmeans++" | "bisecting" => Ok(ClusterAlgo::BisectingPlusPlus),
            _ => Err(Error::InvalidConfig(alloc::format!(
                "unknown clustering algorithm {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Label budget: number of clusters and of selected samples.
    pub budget: usize,
    pub quantiles: usize,
    pub strategy: FilterStrategy,
    pub cluster_algo: ClusterAlgo,
    pub max_iterations: usize,
    /// Independent k-means runs; the one with the lowest final inertia wins.
    pub restarts: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            quantiles: 5,
            strategy: FilterStrategy::RemoveBoth,
            cluster_algo: ClusterAlgo::Lloyd,
            max_iterations: 100,
            restarts: 10,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidConfig("label budget must be at least 1".to_string()));
        }
        if self.strategy == FilterStrategy::RemoveBoth && self.quantiles < 3 {
            return Err(Error::InvalidConfig(
                "removing both extremes needs at least 3 quantiles".to_string(),
            ));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("at least one k-means run is required".to_string()));
        }
        if self.quantiles == 0 {
            return Err(Error::InvalidConfig("quantile count must be positive".to_string()));
        }
        Ok(())
    }
}

/// Indices kept by the confidence filter, in ascending order.
///
/// Samples are ranked by descending confidence (ties: lower index first) and
/// cut at ranks `floor(k * M / q)` for `k = 1..q-1`.
pub fn quantile_filter(conf: &[f64], config: &SamplerConfig) -> Result<Vec<usize>> {
    config.validate()?;
    let m = conf.len();
    let q = config.quantiles;
    if config.strategy == FilterStrategy::NoFilter {
        return Ok((0..m).collect());
    }
    if m < q {
        return Err(Error::TooFewSamples {
            samples: m,
            quantiles: q,
        });
    }
    let mut ranked: Vec<usize> = (0..m).collect();
    // stable: equal confidences keep ascending index order
    ranked.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]));

    let first_cut = m / q;
    let last_cut = (q - 1) * m / q;
    let range = match config.strategy {
        FilterStrategy::RemoveBoth => first_cut..last_cut,
        FilterStrategy::RemoveLowOnly => 0..last_cut,
        FilterStrategy::RemoveHighOnly => first_cut..m,
        FilterStrategy::KeepHighOnly => 0..first_cut,
        FilterStrategy::KeepLowOnly => last_cut..m,
        FilterStrategy::NoFilter => unreachable!(),
    };
    let mut kept = ranked[range].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Output of [`kmeans`] over a subset of the rows of an [`EmbeddingSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Sample index of each clustered point.
    pub indices: Vec<usize>,
    /// Cluster id of each clustered point, parallel to `indices`.
    pub assignments: Vec<usize>,
    /// `k × dim` row-major centres.
    pub centroids: Vec<f64>,
    pub dim: usize,
    /// Total within-cluster squared distance after every assignment step.
    pub inertia_trace: Vec<f64>,
    /// Whether the assignment reached a fixpoint before the iteration cap.
    pub converged: bool,
}

impl ClusterResult {
    pub fn cluster_count(&self) -> usize {
        self.centroids.len() / self.dim.max(1)
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }

    /// Sample indices of cluster `j`.
    pub fn members(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.indices
            .iter()
            .zip(&self.assignments)
            .filter(move |(_, &a)| a == j)
            .map(|(&i, _)| i)
    }
}

/// Row-major f64 copy of the selected rows.
fn gather(samples: &EmbeddingSet, points: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(points.len() * samples.dim());
    for &i in points {
        if i >= samples.count() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: samples.count(),
            });
        }
        out.extend(samples.row(i).iter().map(|&v| v as f64));
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Nearest centre of every point and its squared distance. Ties go to the
/// point's previous cluster when given, else to the lowest centre.
fn assign(
    data: &[f64],
    dim: usize,
    centroids: &[f64],
    previous: Option<&[usize]>,
) -> (Vec<usize>, Vec<f64>) {
    let n = data.len() / dim;
    let k = centroids.len() / dim;
    let nearest = par::map_indices(n, |i| {
        let p = &data[i * dim..(i + 1) * dim];
        let mut best = (0, f64::INFINITY);
        for j in 0..k {
            let d = sq_dist(p, &centroids[j * dim..(j + 1) * dim]);
            if d < best.1 {
                best = (j, d);
            }
        }
        if let Some(prev) = previous {
            let j = prev[i];
            if sq_dist(p, &centroids[j * dim..(j + 1) * dim]) <= best.1 {
                best.0 = j;
            }
        }
        best
    });
    nearest.into_iter().unzip()
}

/// Cluster means; empty clusters are reseeded with the point farthest from
/// its centre, taken from a cluster that has at least two members.
fn update(data: &[f64], dim: usize, k: usize, assignments: &mut [usize], centroids: &mut [f64]) {
    let n = assignments.len();
    loop {
        let mut counts = vec![0usize; k];
        centroids.iter_mut().for_each(|c| *c = 0.0);
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (c, x) in centroids[a * dim..(a + 1) * dim]
                .iter_mut()
                .zip(&data[i * dim..(i + 1) * dim])
            {
                *c += x;
            }
        }
        for (j, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = count as f64;
                centroids[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .for_each(|c| *c /= inv);
            }
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut farthest = None;
        let mut best = -1.0;
        for i in 0..n {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(&data[i * dim..(i + 1) * dim], &centroids[a * dim..(a + 1) * dim]);
            if d > best {
                best = d;
                farthest = Some(i);
            }
        }
        // k <= n guarantees a donor cluster with two or more members
        let i = farthest.expect("no cluster can donate a point");
        assignments[i] = empty;
    }
}

struct Lloyd {
    assignments: Vec<usize>,
    centroids: Vec<f64>,
    trace: Vec<f64>,
    converged: bool,
}

fn lloyd(data: &[f64], dim: usize, mut centroids: Vec<f64>, max_iterations: usize) -> Lloyd {
    let k = centroids.len() / dim;
    let (mut assignments, dists) = assign(data, dim, &centroids, None);
    let mut trace = vec![dists.iter().sum::<f64>()];
    let mut converged = false;
    for _ in 0..max_iterations {
        update(data, dim, k, &mut assignments, &mut centroids);
        let (next, dists) = assign(data, dim, &centroids, Some(&assignments));
        trace.push(dists.iter().sum());
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }
    Lloyd {
        assignments,
        centroids,
        trace,
        converged,
    }
}

fn centres_from(data: &[f64], dim: usize, picks: &[usize]) -> Vec<f64> {
    picks
        .iter()
        .flat_map(|&i| data[i * dim..(i + 1) * dim].iter().copied())
        .collect()
}

fn random_init(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let picks = index::sample(rng, n, k).into_vec();
    centres_from(data, dim, &picks)
}

fn plus_plus_init(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let mut picks = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(&data[i * dim..(i + 1) * dim], &data[picks[0] * dim..(picks[0] + 1) * dim]))
        .collect();
    while picks.len() < k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(w) => w.sample(rng),
            // every remaining point coincides with a centre
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|i| !picks.contains(i)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        picks.push(next);
        let c = &data[next * dim..(next + 1) * dim];
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(&data[i * dim..(i + 1) * dim], c));
        }
    }
    centres_from(data, dim, &picks)
}

fn bisecting_init(
    data: &[f64],
    dim: usize,
    k: usize,
    max_iterations: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = data.len() / dim;
    let mut clusters: Vec<Vec<usize>> = vec![(0..n).collect()];
    while clusters.len() < k {
        let sse = |members: &[usize]| -> f64 {
            let sub = centres_from(data, dim, members);
            let mut mean = vec![0.0; dim];
            for row in sub.chunks_exact(dim) {
                mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
            }
            mean.iter_mut().for_each(|m| *m /= members.len() as f64);
            sub.chunks_exact(dim).map(|row| sq_dist(row, &mean)).sum()
        };
        let (target, _) = clusters
            .iter()
            .enumerate()
            .filter(|(_, m)| m.len() >= 2)
            .map(|(j, m)| (j, sse(m)))
            .fold((usize::MAX, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
        let members = clusters.swap_remove(target);
        let sub = centres_from(data, dim, &members);
        let init = plus_plus_init(&sub, dim, 2, rng);
        let split = lloyd(&sub, dim, init, max_iterations);
        let (left, right): (Vec<_>, Vec<_>) = members
            .iter()
            .zip(&split.assignments)
            .partition(|(_, &a)| a == 0);
        clusters.push(left.into_iter().map(|(&i, _)| i).collect());
        clusters.push(right.into_iter().map(|(&i, _)| i).collect());
    }
    let mut centres = Vec::with_capacity(k * dim);
    for members in &clusters {
        let mut mean = vec![0.0; dim];
        for &i in members {
            mean.iter_mut()
                .zip(&data[i * dim..(i + 1) * dim])
                .for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= members.len() as f64);
        centres.extend(mean);
    }
    centres
}

/// Clusters the rows `points` of `samples` into `k` groups.
///
/// Lloyd iterations run until the assignment stops changing or
/// `config.max_iterations` is reached. Initialization follows
/// `config.cluster_algo` and is seeded by `config.seed`.
pub fn kmeans(
    samples: &EmbeddingSet,
    points: &[usize],
    k: usize,
    config: &SamplerConfig,
) -> Result<ClusterResult> {
    if k == 0 || points.len() < k {
        return Err(Error::NotEnoughPoints {
            points: points.len(),
            clusters: k,
        });
    }
    let dim = samples.dim();
    if dim == 0 {
        return Err(Error::InvalidConfig("cannot cluster zero-dimensional data".to_string()));
    }
    let data = gather(samples, points)?;
    let mut rng = rng::seeded(config.seed, stream::SAMPLER);
    let init = match config.cluster_algo {
        ClusterAlgo::Lloyd => random_init(&data, dim, k, &mut rng),
        ClusterAlgo::PlusPlusInit => plus_plus_init(&data, dim, k, &mut rng),
        ClusterAlgo::BisectingPlusPlus => {
            bisecting_init(&data, dim, k, config.max_iterations, &mut rng)
        }
    };
    let run = lloyd(&data, dim, init, config.max_iterations);
    Ok(ClusterResult {
        indices: points.to_vec(),
        assignments: run.assignments,
        centroids: run.centroids,
        dim,
        inertia_trace: run.trace,
        converged: run.converged,
    })
}

/// Best of `restarts` k-means runs (lowest final inertia) with seeds
/// `config.seed, config.seed + 1, ...`.
pub fn kmeans_restarts(
    samples: &EmbeddingSet,
    points: &[usize],
    k: usize,
    config: &SamplerConfig,
    restarts: usize,
) -> Result<ClusterResult> {
    let mut best: Option<ClusterResult> = None;
    for r in 0..restarts.max(1) {
        let cfg = SamplerConfig {
            seed: config.seed.wrapping_add(r as u64),
            ..config.clone()
        };
        let run = kmeans(samples, points, k, &cfg)?;
        if best.as_ref().is_none_or(|b| run.inertia() < b.inertia()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// One Lloyd step from `clusters`: recompute the means of the current
/// assignment and reassign. Returns the new assignment.
pub fn lloyd_step(samples: &EmbeddingSet, clusters: &ClusterResult) -> Result<Vec<usize>> {
    let dim = clusters.dim;
    let data = gather(samples, &clusters.indices)?;
    let mut assignments = clusters.assignments.clone();
    let mut centroids = clusters.centroids.clone();
    update(&data, dim, clusters.cluster_count(), &mut assignments, &mut centroids);
    Ok(assign(&data, dim, &centroids, Some(&assignments)).0)
}

/// For every cluster, the member closest to its centre (ties: lower sample index).
pub fn select_medoids(samples: &EmbeddingSet, clusters: &ClusterResult) -> Result<Vec<usize>> {
    let k = clusters.cluster_count();
    let mut best: Vec<Option<(f64, usize)>> = vec![None; k];
    for (&i, &j) in clusters.indices.iter().zip(&clusters.assignments) {
        let d: f64 = samples
            .row(i)
            .iter()
            .zip(clusters.centroid(j))
            .map(|(&x, c)| {
                let diff = x as f64 - c;
                diff * diff
            })
            .sum();
        let better = match best[j] {
            None => true,
            Some((bd, bi)) => d < bd || (d == bd && i < bi),
        };
        if better {
            best[j] = Some((d, i));
        }
    }
    best.into_iter()
        .enumerate()
        .map(|(j, b)| b.map(|(_, i)| i).ok_or(Error::EmptyCluster(j)))
        .collect()
}

/// The pieces of a weakly-supervised selection, kept so the clustering can
/// be reused for pseudo-labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected sample indices, one per cluster, in cluster order.
    pub selected: Vec<usize>,
    /// Indices that survived the confidence filter.
    pub retained: Vec<usize>,
    pub clusters: ClusterResult,
}

/// Filter, cluster (best of `config.restarts` runs) and take medoids.
/// `probs` must be the zero-shot scores.
pub fn weakly_supervised_selection(
    samples: &EmbeddingSet,
    probs: &ProbMatrix,
    config: &SamplerConfig,
) -> Result<Selection> {
    if probs.rows() != samples.count() {
        return Err(Error::DimMismatch {
            left: probs.rows(),
            right: samples.count(),
        });
    }
    let retained = quantile_filter(&confidence(probs), config)?;
    if retained.len() < config.budget {
        return Err(Error::NotEnoughPoints {
            points: retained.len(),
            clusters: config.budget,
        });
    }
    let clusters = kmeans_restarts(samples, &retained, config.budget, config, config.restarts)?;
    let selected = select_medoids(samples, &clusters)?;
    Ok(Selection {
        selected,
        retained,
        clusters,
    })
}

/// Indices of the weakly-supervised labelled set.
pub fn sample_labelled_set(
    samples: &EmbeddingSet,
    probs: &ProbMatrix,
    config: &SamplerConfig,
) -> Result<Vec<usize>> {
    weakly_supervised_selection(samples, probs, config).map(|s| s.selected)
}

/// `budget` distinct indices drawn uniformly from `0..count`, ascending.
pub fn random_labelled_set(count: usize, budget: usize, seed: u64) -> Result<Vec<usize>> {
    if budget == 0 || budget > count {
        return Err(Error::NotEnoughPoints {
            points: count,
            clusters: budget,
        });
    }
    let mut rng = rng::seeded(seed, stream::RANDOM_LABELLED);
    let mut picks = index::sample(&mut rng, count, budget).into_vec();
    picks.sort_unstable();
    Ok(picks)
}
