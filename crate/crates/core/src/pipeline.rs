//! End-to-end run: zero-shot scoring, labelled-set selection, cluster
//! pseudo-labels and session training.

use alloc::vec::Vec;

use crate::data::{ClassEmbeddings, EmbeddingSet};
use crate::error::Result;
use crate::pseudo::{self, AnchorClusters};
use crate::sampler;
use crate::scoring::predict_probs;
use crate::trainer::{self, LabelSelection, TrainConfig, TrainOutcome};

/// A labelled set with ground truth attached, plus the anchor clusters from
/// the sampler's k-means when one ran.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSelection {
    pub labelled: Vec<(usize, usize)>,
    pub anchors: Option<AnchorClusters>,
}

/// Chooses the labelled set and reads its labels from the pool's ground
/// truth, standing in for the annotator.
pub fn select_labelled(
    pool: &EmbeddingSet,
    classes: &ClassEmbeddings,
    config: &TrainConfig,
) -> Result<LabelledSelection> {
    let (indices, anchors) = match config.selection {
        LabelSelection::Random => (
            sampler::random_labelled_set(pool.count(), config.sampler.budget, config.sampler.seed)?,
            None,
        ),
        LabelSelection::WeaklySupervised => {
            let probs = predict_probs(pool, classes, config.temperature)?;
            let sel = sampler::weakly_supervised_selection(pool, &probs, &config.sampler)?;
            let anchors = pseudo::anchors_from_kmeans(pool, &sel.clusters, &sel.selected)?;
            (sel.selected, Some(anchors))
        }
    };
    let labelled = indices
        .iter()
        .map(|&i| pool.truth(i).map(|c| (i, c)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelledSelection { labelled, anchors })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub labelled: Vec<(usize, usize)>,
    pub train: TrainOutcome,
}

/// Selects the labelled set per `config.selection` and trains. Anchor
/// clusters from weakly-supervised sampling are reused for pseudo-labelling.
pub fn run_pipeline(
    pool: &EmbeddingSet,
    test: &EmbeddingSet,
    classes: &ClassEmbeddings,
    config: &TrainConfig,
) -> Result<PipelineOutcome> {
    config.validate()?;
    let selection = select_labelled(pool, classes, config)?;
    let train = match &selection.anchors {
        Some(anchors) => trainer::run_sessions_with_anchors(
            pool,
            test,
            classes,
            &selection.labelled,
            anchors,
            config,
        )?,
        None => trainer::run_sessions(pool, test, classes, &selection.labelled, config)?,
    };
    Ok(PipelineOutcome {
        labelled: selection.labelled,
        train,
    })
}
