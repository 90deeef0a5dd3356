//! Per-session metrics as JSON lines.

use std::path::Path;

use serde::{Deserialize, Serialize};
use semitune_core::trainer::SessionMetrics;

/// One line of the metrics file. `pseudo_acc` is `null` when the pool has no
/// complete ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub session: usize,
    pub pseudo_acc: Option<f64>,
    pub test_acc: f64,
    pub mean_loss: f64,
    pub sizes: [usize; 4],
}

impl From<&SessionMetrics> for MetricsLine {
    fn from(m: &SessionMetrics) -> Self {
        Self {
            session: m.session,
            pseudo_acc: m.pseudo_label_accuracy,
            test_acc: m.test_accuracy,
            mean_loss: m.mean_loss,
            sizes: m.set_sizes,
        }
    }
}

pub fn to_jsonl(metrics: &[SessionMetrics]) -> String {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(&MetricsLine::from(m)).expect("metrics serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> serde_json::Result<Vec<MetricsLine>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

pub fn write_jsonl(path: &Path, metrics: &[SessionMetrics]) -> std::io::Result<()> {
    std::fs::write(path, to_jsonl(metrics))
}
