//! Synthetic Gaussian-mixture benchmarks with miscalibrated class anchors.
//!
//! Class means are random unit vectors with a minimum pairwise angle. Samples
//! are the mean plus isotropic Gaussian noise, projected back onto the unit
//! sphere. The "pretrained" anchors interpolate between the true means and a
//! random rotation of the set of means: rotated mean `k` is `Σ_j R[k][j] ·
//! mean_j` for a random proper rotation `R` in class space, so at high
//! miscalibration an anchor points at a blend of other classes.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{ClassEmbeddings, EmbeddingSet};
use crate::error::{Error, Result};
use crate::rng::{self, stream};

const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub class_count: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Per-coordinate noise standard deviation around a unit-norm mean.
    pub sigma: f64,
    /// 0 = anchors are the true means, 1 = anchors are the rotated means.
    pub miscalibration: f64,
    /// Minimum angle between any two class means, in degrees.
    pub min_angle_deg: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            class_count: 10,
            dim: 32,
            per_class: 200,
            sigma: 0.05,
            miscalibration: 0.6,
            min_angle_deg: 60.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.class_count == 0 || self.dim == 0 || self.per_class == 0 {
            return bad("class count, dimension and samples per class must be positive");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.miscalibration) {
            return bad("miscalibration must lie in [0, 1]");
        }
        if !(0.0..180.0).contains(&self.min_angle_deg) {
            return bad("minimum angle must lie in [0, 180)");
        }
        if self.per_class % 5 != 0 {
            return Err(Error::InvalidConfig(format!(
                "{} samples per class do not split 80/20 evenly",
                self.per_class
            )));
        }
        Ok(())
    }

    pub fn pool_per_class(&self) -> usize {
        self.per_class * 4 / 5
    }

    pub fn test_per_class(&self) -> usize {
        self.per_class / 5
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBenchmark {
    pub pool: EmbeddingSet,
    pub test: EmbeddingSet,
    pub zero_shot_anchors: ClassEmbeddings,
    pub true_anchors: ClassEmbeddings,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum());
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

fn place_means(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let max_cos = libm::cos(spec.min_angle_deg.to_radians());
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.class_count);
    while means.len() < spec.class_count {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let Some(v) = normalized(&gaussian(rng, spec.dim)) else {
                continue;
            };
            let separated = means
                .iter()
                .all(|m| m.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() <= max_cos);
            if separated {
                means.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::RejectionBudgetExceeded {
                classes: spec.class_count,
                dim: spec.dim,
            });
        }
    }
    Ok(means)
}

fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| libm::fabs(m[a][col]).total_cmp(&libm::fabs(m[b][col])))
            .unwrap_or(col);
        if m[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for c in col..n {
                m[row][c] -= f * m[col][c];
            }
        }
    }
    det
}

/// Random `n × n` rotation (orthogonal, determinant +1) by Gram-Schmidt.
fn random_rotation(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v = gaussian(rng, n);
        for r in &rows {
            let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= d * y);
        }
        // reject nearly dependent draws
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-6 {
            if let Some(u) = normalized(&v) {
                rows.push(u);
            }
        }
    }
    if determinant(rows.clone()) < 0.0 {
        rows[0].iter_mut().for_each(|x| *x = -*x);
    }
    rows
}

fn to_f32(rows: &[Vec<f64>]) -> Vec<f32> {
    rows.iter().flat_map(|r| r.iter().map(|&x| x as f32)).collect()
}

/// Builds a labelled pool/test split and the two anchor sets.
pub fn generate(spec: &SynthSpec) -> Result<SynthBenchmark> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed, stream::SYNTH);
    let means = place_means(spec, &mut rng)?;
    let rotation = random_rotation(spec.class_count, &mut rng);

    let m = spec.miscalibration;
    let mut anchors = Vec::with_capacity(spec.class_count);
    for (k, mean) in means.iter().enumerate() {
        let mut rotated = vec![0.0; spec.dim];
        for (r, other) in rotation[k].iter().zip(&means) {
            rotated.iter_mut().zip(other).for_each(|(x, y)| *x += r * y);
        }
        let blend: Vec<f64> = mean
            .iter()
            .zip(&rotated)
            .map(|(a, b)| (1.0 - m) * a + m * b)
            .collect();
        let anchor = normalized(&blend).ok_or(Error::ZeroNormRow(k))?;
        anchors.push(anchor);
    }

    let mut pool_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (k, mean) in means.iter().enumerate() {
        for s in 0..spec.per_class {
            let noisy: Vec<f64> = mean
                .iter()
                .zip(gaussian(&mut rng, spec.dim))
                .map(|(mu, e)| mu + spec.sigma * e)
                .collect();
            let row = normalized(&noisy).ok_or(Error::ZeroNormRow(k))?;
            if s < spec.pool_per_class() {
                pool_rows.push((row, k));
            } else {
                test_rows.push((row, k));
            }
        }
    }
    pool_rows.shuffle(&mut rng);
    test_rows.shuffle(&mut rng);

    let build = |rows: Vec<(Vec<f64>, usize)>| -> Result<EmbeddingSet> {
        let labels = rows.iter().map(|(_, k)| Some(*k)).collect();
        let data: Vec<f32> = rows
            .iter()
            .flat_map(|(r, _)| r.iter().map(|&x| x as f32))
            .collect();
        EmbeddingSet::new(rows.len(), spec.dim, data)?.with_labels(labels)
    };
    let names: Vec<_> = (0..spec.class_count).map(|k| format!("class_{k:02}")).collect();
    Ok(SynthBenchmark {
        pool: build(pool_rows)?,
        test: build(test_rows)?,
        zero_shot_anchors: ClassEmbeddings::new(spec.class_count, spec.dim, to_f32(&anchors))?
            .with_names(names.clone())?,
        true_anchors: ClassEmbeddings::new(spec.class_count, spec.dim, to_f32(&means))?
            .with_names(names)?,
    })
}

/// Brute-force nearest anchor (squared Euclidean, ties to the lower anchor)
/// for every query row. Deliberately written as plain nested loops.
pub fn oracle_nearest(queries: &EmbeddingSet, anchors: &EmbeddingSet) -> Result<Vec<usize>> {
    if queries.dim() != anchors.dim() {
        return Err(Error::DimMismatch {
            left: queries.dim(),
            right: anchors.dim(),
        });
    }
    let d = queries.dim();
    let q = queries.data();
    let a = anchors.data();
    let mut out = Vec::with_capacity(queries.count());
    for i in 0..queries.count() {
        let mut best_j = 0;
        let mut best_d = f64::INFINITY;
        for j in 0..anchors.count() {
            let mut s = 0.0f64;
            for c in 0..d {
                let diff = q[i * d + c] as f64 - a[j * d + c] as f64;
                s += diff * diff;
            }
            if s < best_d {
                best_d = s;
                best_j = j;
            }
        }
        out.push(best_j);
    }
    Ok(out)
}
