#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semitune_core::data::normalize_rows;
use semitune_core::{ClassEmbeddings, EmbeddingSet, ProbMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn raw(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> EmbeddingSet {
    let data = (0..rows * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    EmbeddingSet::new(rows, dim, data).unwrap()
}

pub fn unit(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> EmbeddingSet {
    normalize_rows(&raw(rng, rows, dim)).unwrap()
}

pub fn classes(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> ClassEmbeddings {
    ClassEmbeddings::new(rows, dim, unit(rng, rows, dim).data().to_vec()).unwrap()
}

pub fn prob_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ProbMatrix {
    let mut probs = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let row: Vec<f64> = (0..cols).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = row.iter().sum();
        probs.extend(row.iter().map(|v| v / s));
    }
    ProbMatrix::new(rows, cols, probs).unwrap()
}

pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = a[k] as f64 - b[k] as f64;
        s += d * d;
    }
    s
}

/// Mean and binomial standard deviation of a chance-level accuracy.
pub fn chance_bounds(classes: usize, trials: usize) -> (f64, f64) {
    let p = 1.0 / classes as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}
