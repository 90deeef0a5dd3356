//! Learnable class-embedding head and the multi-session training loop.
//!
//! The head is a `C × d` matrix initialised from the class anchors. It scores
//! samples exactly like zero-shot prediction (cosine similarity, temperature
//! softmax) and is trained with plain mini-batch SGD on the combined loss.
//! Rows are projected back to unit norm after every step.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{ClassEmbeddings, EmbeddingSet, LabelSets, ProbMatrix};
use crate::error::{Error, Result};
use crate::par;
use crate::pseudo::{self, AnchorClusters};
use crate::rng::{self, stream};
use crate::sampler::SamplerConfig;
use crate::scoring::{self, argmax, Temperature};
use crate::ssl::{self, BatchTarget, SslConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    class_count: usize,
    dim: usize,
    weights: Vec<f64>,
    temperature: Temperature,
}

impl Head {
    /// Copies the class anchors (widened to f64) as initial weights.
    pub fn from_classes(classes: &ClassEmbeddings, temperature: Temperature) -> Self {
        Self {
            class_count: classes.class_count(),
            dim: classes.dim(),
            weights: classes.weights().iter().map(|&v| v as f64).collect(),
            temperature,
        }
    }

    pub fn new(
        class_count: usize,
        dim: usize,
        weights: Vec<f64>,
        temperature: Temperature,
    ) -> Result<Self> {
        if weights.len() != class_count * dim {
            return Err(Error::ShapeMismatch {
                expected: class_count * dim,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        Ok(Self {
            class_count,
            dim,
            weights,
            temperature,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn temperature(&self) -> Temperature {
        self.temperature
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.dim..(k + 1) * self.dim]
    }

    /// The weights narrowed to f32, e.g. for persisting.
    pub fn to_class_embeddings(&self) -> Result<ClassEmbeddings> {
        ClassEmbeddings::new(
            self.class_count,
            self.dim,
            self.weights.iter().map(|&w| w as f32).collect(),
        )
    }

    fn normalize_rows(&mut self) -> Result<()> {
        for k in 0..self.class_count {
            let row = &mut self.weights[k * self.dim..(k + 1) * self.dim];
            let n = libm::sqrt(row.iter().map(|v| v * v).sum());
            if n == 0.0 || !n.is_finite() {
                return Err(Error::ZeroNormRow(k));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(())
    }
}

fn check_dims(head: &Head, samples: &EmbeddingSet) -> Result<()> {
    if head.dim != samples.dim() {
        return Err(Error::DimMismatch {
            left: samples.dim(),
            right: head.dim,
        });
    }
    Ok(())
}

/// Head probabilities for the given rows of `samples`.
pub fn head_forward_rows(head: &Head, samples: &EmbeddingSet, rows: &[usize]) -> Result<ProbMatrix> {
    check_dims(head, samples)?;
    if let Some(&bad) = rows.iter().find(|&&i| i >= samples.count()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: samples.count(),
        });
    }
    let probs = scoring::predict_rows(
        samples,
        rows,
        &head.weights,
        head.class_count,
        head.temperature.value(),
    );
    Ok(ProbMatrix::from_raw(rows.len(), head.class_count, probs))
}

/// Head probabilities for every row of `samples`.
pub fn head_forward(head: &Head, samples: &EmbeddingSet) -> Result<ProbMatrix> {
    let rows: Vec<usize> = (0..samples.count()).collect();
    head_forward_rows(head, samples, &rows)
}

/// Fraction of rows whose predicted class equals the ground truth.
pub fn evaluate(head: &Head, test: &EmbeddingSet) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    let probs = head_forward(head, test)?;
    let mut correct = 0usize;
    for i in 0..test.count() {
        if argmax(probs.row(i)) == test.truth(i)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.count() as f64)
}

/// Which parts of the semi-supervised objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Components {
    /// Cluster-guided pseudo-labels.
    pub cluster_pseudo: bool,
    /// Per-class top-confidence pseudo-labels.
    pub confident: bool,
    /// Partial-label training on the remaining samples.
    pub weak: bool,
}

impl Components {
    pub const ALL: Components = Components {
        cluster_pseudo: true,
        confident: true,
        weak: true,
    };
    pub const SUPERVISED_ONLY: Components = Components {
        cluster_pseudo: false,
        confident: false,
        weak: false,
    };
}

impl Default for Components {
    fn default() -> Self {
        Self::ALL
    }
}

/// How the labelled set is chosen by [`run_pipeline`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelSelection {
    #[default]
    WeaklySupervised,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sessions: usize,
    pub epochs_per_session: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub temperature: Temperature,
    pub ssl: SslConfig,
    pub sampler: SamplerConfig,
    pub selection: LabelSelection,
    /// Pseudo-labels taken per cluster.
    pub pseudo_per_cluster: usize,
    pub components: Components,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sessions: 10,
            epochs_per_session: 50,
            learning_rate: 0.02,
            batch_size: 64,
            seed: 0,
            temperature: Temperature::default(),
            ssl: SslConfig::default(),
            // two labels per class for a ten-class problem
            sampler: SamplerConfig::new(20),
            selection: LabelSelection::WeaklySupervised,
            pseudo_per_cluster: 50,
            components: Components::ALL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sessions == 0 {
            return Err(Error::InvalidConfig("at least one session is required".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".to_string()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be non-negative".to_string()));
        }
        self.ssl.validate()?;
        self.sampler.validate()
    }
}

struct RowGrad {
    /// Weighted loss of the row.
    loss: f64,
    /// Weighted dL/dlogit per class.
    dlogits: Vec<f64>,
    cosines: Vec<f64>,
}

fn row_gradient(
    head: &Head,
    norms: &[f64],
    z: &[f32],
    target: &BatchTarget,
    weight: f64,
) -> RowGrad {
    let classes = head.class_count;
    let t = head.temperature.value();
    let mut logits = vec![0.0; classes];
    scoring::cosine_logits(z, &head.weights, norms, t, &mut logits);
    let cosines: Vec<f64> = logits.iter().map(|l| l * t).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = logits.clone();
    let log_sum = scoring::softmax_in_place(&mut probs);
    let log_prob = |k: usize| logits[k] - max - log_sum;

    let mut dlogits = probs;
    let loss = match target {
        BatchTarget::Labelled(y) | BatchTarget::Confident(y) => {
            dlogits[*y] -= 1.0;
            -log_prob(*y)
        }
        BatchTarget::Weak(mask) => {
            let ones = mask.count_ones() as f64;
            let mut loss = 0.0;
            for (k, g) in dlogits.iter_mut().enumerate() {
                *g *= ones;
                if mask.contains(k) {
                    *g -= 1.0;
                    loss -= log_prob(k);
                }
            }
            loss
        }
    };
    dlogits.iter_mut().for_each(|g| *g *= weight);
    RowGrad {
        loss: loss * weight,
        dlogits,
        cosines,
    }
}

/// Combined loss of a batch and its gradient with respect to the head
/// weights, differentiating through the cosine normalisation of every row.
///
/// Log-probabilities come from a log-softmax, so no floor is needed and the
/// gradient never vanishes on confidently wrong rows.
pub fn loss_and_gradient(
    head: &Head,
    samples: &EmbeddingSet,
    batch: &[(usize, BatchTarget)],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_dims(head, samples)?;
    let mut counts = [0usize; 3];
    for (i, target) in batch {
        if *i >= samples.count() {
            return Err(Error::IndexOutOfRange {
                index: *i,
                len: samples.count(),
            });
        }
        let c = match target {
            BatchTarget::Labelled(c) | BatchTarget::Confident(c) => Some(*c),
            BatchTarget::Weak(mask) => {
                if mask.len() != head.class_count {
                    return Err(Error::ShapeMismatch {
                        expected: head.class_count,
                        got: mask.len(),
                    });
                }
                None
            }
        };
        if let Some(c) = c {
            if c >= head.class_count {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    len: head.class_count,
                });
            }
        }
        counts[slot(target)] += 1;
    }
    let weights = [
        1.0 / counts[0].max(1) as f64,
        1.0 / counts[1].max(1) as f64,
        lambda / counts[2].max(1) as f64,
    ];

    let dim = head.dim;
    let t = head.temperature.value();
    let norms = scoring::row_norms(&head.weights, dim);
    let rows = par::map_indices(batch.len(), |r| {
        let (i, target) = &batch[r];
        row_gradient(head, &norms, samples.row(*i), target, weights[slot(target)])
    });

    let mut loss = 0.0;
    let mut grad = vec![0.0; head.weights.len()];
    for ((i, _), row) in batch.iter().zip(&rows) {
        loss += row.loss;
        let z = samples.row(*i);
        let z_norm = crate::data::norm(z);
        for k in 0..head.class_count {
            let g = row.dlogits[k];
            if g == 0.0 {
                continue;
            }
            let scale = g / (t * norms[k]);
            let cos = row.cosines[k];
            let w = &head.weights[k * dim..(k + 1) * dim];
            for ((out, &zj), &wj) in grad[k * dim..(k + 1) * dim].iter_mut().zip(z).zip(w) {
                *out += scale * (zj as f64 / z_norm - cos * wj / norms[k]);
            }
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok((loss, grad))
}

fn slot(target: &BatchTarget) -> usize {
    match target {
        BatchTarget::Labelled(_) => 0,
        BatchTarget::Confident(_) => 1,
        BatchTarget::Weak(_) => 2,
    }
}

/// One SGD step on the combined loss followed by row re-normalisation.
/// Returns the loss before the step.
pub fn grad_step(
    head: &mut Head,
    samples: &EmbeddingSet,
    batch: &[(usize, BatchTarget)],
    config: &TrainConfig,
) -> Result<f64> {
    let (loss, grad) = loss_and_gradient(head, samples, batch, config.ssl.lambda)?;
    for (w, g) in head.weights.iter_mut().zip(&grad) {
        *w -= config.learning_rate * g;
    }
    head.normalize_rows()?;
    Ok(loss)
}

/// Per-session training metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionMetrics {
    /// 1-based session number.
    pub session: usize,
    /// Accuracy of the confident set (cluster pseudo-labels included);
    /// `None` when the pool lacks complete ground truth.
    pub pseudo_label_accuracy: Option<f64>,
    pub test_accuracy: f64,
    pub mean_loss: f64,
    /// `|labelled|, |cluster pseudo|, |confident|, |weak|`.
    pub set_sizes: [usize; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Vec<SessionMetrics>,
    pub head: Head,
    pub cluster_pseudo: Vec<(usize, usize)>,
}

fn training_targets(sets: &LabelSets) -> Vec<(usize, BatchTarget)> {
    let labelled = sets
        .labelled
        .iter()
        .map(|&(i, c)| (i, BatchTarget::Labelled(c)));
    let confident = sets
        .confident
        .iter()
        .map(|&(i, c)| (i, BatchTarget::Confident(c)));
    let weak = sets
        .weak
        .iter()
        .map(|(i, m)| (*i, BatchTarget::Weak(m.clone())));
    labelled.chain(confident).chain(weak).collect()
}

/// Trains over `config.sessions` sessions, building cluster pseudo-labels
/// by 1-NN assignment to the labelled samples.
pub fn run_sessions(
    pool: &EmbeddingSet,
    test: &EmbeddingSet,
    classes: &ClassEmbeddings,
    labelled: &[(usize, usize)],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let anchors = if config.components.cluster_pseudo {
        let idx: Vec<usize> = labelled.iter().map(|&(i, _)| i).collect();
        Some(pseudo::assign_to_anchors(pool, &idx)?)
    } else {
        None
    };
    train(pool, test, classes, labelled, anchors.as_ref(), config)
}

/// Like [`run_sessions`] but with precomputed anchor clusters, whose anchors
/// must be the labelled samples in the same order.
pub fn run_sessions_with_anchors(
    pool: &EmbeddingSet,
    test: &EmbeddingSet,
    classes: &ClassEmbeddings,
    labelled: &[(usize, usize)],
    anchors: &AnchorClusters,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let same = anchors.anchor_indices.len() == labelled.len()
        && anchors
            .anchor_indices
            .iter()
            .zip(labelled)
            .all(|(&a, &(i, _))| a == i);
    if !same {
        return Err(Error::InvalidConfig(
            "anchor clusters do not match the labelled set".to_string(),
        ));
    }
    let anchors = config.components.cluster_pseudo.then_some(anchors);
    train(pool, test, classes, labelled, anchors, config)
}

fn train(
    pool: &EmbeddingSet,
    test: &EmbeddingSet,
    classes: &ClassEmbeddings,
    labelled: &[(usize, usize)],
    anchors: Option<&AnchorClusters>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if pool.dim() != classes.dim() || test.dim() != classes.dim() {
        return Err(Error::DimMismatch {
            left: pool.dim(),
            right: classes.dim(),
        });
    }
    if !pool.is_normalized() || !test.is_normalized() {
        return Err(Error::NotNormalized("sample"));
    }
    if test.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    let cluster_pseudo = match anchors {
        Some(a) => {
            let labels: Vec<usize> = labelled.iter().map(|&(_, c)| c).collect();
            pseudo::cluster_pseudolabels(a, &labels, config.pseudo_per_cluster)?
        }
        None => Vec::new(),
    };

    let pool_has_truth = pool
        .labels()
        .is_some_and(|labels| labels.iter().all(Option::is_some));
    let mut head = Head::from_classes(classes, config.temperature);
    let mut metrics = Vec::with_capacity(config.sessions);
    for session in 0..config.sessions {
        let probs = head_forward(&head, pool)?;
        let sets = session_sets(&probs, labelled, &cluster_pseudo, config)?;
        sets.validate(pool.count(), classes.class_count())?;
        let pseudo_acc = if pool_has_truth {
            Some(pseudo::pseudolabel_accuracy(&sets.confident, pool)?)
        } else {
            None
        };

        let mut targets = training_targets(&sets);
        let mut rng = rng::seeded_at(config.seed, stream::TRAIN, session as u64);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for _ in 0..config.epochs_per_session {
            targets.shuffle(&mut rng);
            for batch in targets.chunks(config.batch_size) {
                loss_sum += grad_step(&mut head, pool, batch, config)?;
                steps += 1;
            }
        }
        let mean_loss = if steps > 0 {
            loss_sum / steps as f64
        } else {
            loss_and_gradient(&head, pool, &targets, config.ssl.lambda)?.0
        };
        metrics.push(SessionMetrics {
            session: session + 1,
            pseudo_label_accuracy: pseudo_acc,
            test_accuracy: evaluate(&head, test)?,
            mean_loss,
            set_sizes: sets.sizes(),
        });
    }
    Ok(TrainOutcome {
        metrics,
        head,
        cluster_pseudo,
    })
}

fn session_sets(
    probs: &ProbMatrix,
    labelled: &[(usize, usize)],
    cluster_pseudo: &[(usize, usize)],
    config: &TrainConfig,
) -> Result<LabelSets> {
    let c = config.components;
    let confident = if c.confident {
        ssl::build_confident_set(probs, cluster_pseudo, labelled, &config.ssl)?
    } else {
        cluster_pseudo.to_vec()
    };
    let weak = if c.weak {
        let exclude: Vec<usize> = labelled
            .iter()
            .chain(&confident)
            .map(|&(i, _)| i)
            .collect();
        ssl::build_weak_set(probs, &exclude, &config.ssl)?
    } else {
        Vec::new()
    };
    Ok(LabelSets {
        labelled: labelled.to_vec(),
        cluster_pseudo: cluster_pseudo.to_vec(),
        confident,
        weak,
    })
}
