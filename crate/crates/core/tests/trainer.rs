mod common;

use rand::Rng;
use semitune_core::pipeline::run_pipeline;
use semitune_core::scoring::predict_probs;
use semitune_core::ssl::{build_confident_set, BatchTarget, SslConfig};
use semitune_core::synth::{generate, SynthSpec};
use semitune_core::trainer::{
    evaluate, grad_step, head_forward, loss_and_gradient, run_sessions, Head, TrainConfig,
};
use semitune_core::pseudo::pseudolabel_accuracy;
use semitune_core::{CandidateMask, EmbeddingSet, Temperature};

/// Combined loss recomputed from raw weights with scalar loops.
fn oracle_loss(
    weights: &[f64],
    classes: usize,
    t: f64,
    samples: &EmbeddingSet,
    batch: &[(usize, BatchTarget)],
    lambda: f64,
) -> f64 {
    let dim = samples.dim();
    let mut sums = [0.0; 3];
    let mut counts = [0.0; 3];
    for (i, target) in batch {
        let z = samples.row(*i);
        let mut logits = vec![0.0; classes];
        for k in 0..classes {
            let (mut dot, mut zz, mut ww) = (0.0, 0.0, 0.0);
            for j in 0..dim {
                let w = weights[k * dim + j];
                dot += z[j] as f64 * w;
                zz += z[j] as f64 * z[j] as f64;
                ww += w * w;
            }
            logits[k] = dot / (zz.sqrt() * ww.sqrt()) / t;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        match target {
            BatchTarget::Labelled(c) => {
                sums[0] += lse - logits[*c];
                counts[0] += 1.0;
            }
            BatchTarget::Confident(c) => {
                sums[1] += lse - logits[*c];
                counts[1] += 1.0;
            }
            BatchTarget::Weak(mask) => {
                for c in 0..classes {
                    if mask.bits()[c] {
                        sums[2] += lse - logits[c];
                    }
                }
                counts[2] += 1.0;
            }
        }
    }
    let mean = |s: usize| if counts[s] == 0.0 { 0.0 } else { sums[s] / counts[s] };
    mean(0) + mean(1) + lambda * mean(2)
}

fn random_batch(rng: &mut impl Rng, samples: usize, classes: usize) -> Vec<(usize, BatchTarget)> {
    (0..samples)
        .map(|i| {
            let target = match i % 3 {
                0 => BatchTarget::Labelled(rng.random_range(0..classes)),
                1 => BatchTarget::Confident(rng.random_range(0..classes)),
                _ => {
                    let bits: Vec<bool> = (0..classes).map(|_| rng.random_bool(0.5)).collect();
                    let mut bits = bits;
                    if !bits.contains(&true) {
                        bits[rng.random_range(0..classes)] = true;
                    }
                    BatchTarget::Weak(CandidateMask::new(bits))
                }
            };
            (i, target)
        })
        .collect()
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let (d, c, h) = (8usize, 3usize, 1e-4);
    for instance in 0..20u64 {
        let mut rng = common::rng(instance);
        let samples = common::unit(&mut rng, 5 + instance as usize % 4, d);
        let t = rng.random_range(0.1..1.0);
        let lambda = rng.random_range(0.2..2.0);
        let weights: Vec<f64> = (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let head = Head::new(c, d, weights.clone(), Temperature::new(t).unwrap()).unwrap();
        let batch = random_batch(&mut rng, samples.count(), c);
        let (loss, grad) = loss_and_gradient(&head, &samples, &batch, lambda).unwrap();
        let base = oracle_loss(&weights, c, t, &samples, &batch, lambda);
        assert!((loss - base).abs() < 1e-10 * base.max(1.0));
        for e in 0..c * d {
            let mut plus = weights.clone();
            let mut minus = weights.clone();
            plus[e] += h;
            minus[e] -= h;
            let numeric = (oracle_loss(&plus, c, t, &samples, &batch, lambda)
                - oracle_loss(&minus, c, t, &samples, &batch, lambda))
                / (2.0 * h);
            let denom = grad[e].abs().max(numeric.abs()).max(1e-6);
            let rel = (grad[e] - numeric).abs() / denom;
            assert!(rel < 1e-4, "instance {instance} entry {e}: {} vs {numeric}", grad[e]);
        }
    }
}

#[test]
fn single_sample_loss_decreases_for_ten_steps() {
    for seed in 0..10u64 {
        let mut rng = common::rng(seed);
        let samples = common::unit(&mut rng, 1, 16);
        let classes = common::classes(&mut rng, 5, 16);
        let mut head = Head::from_classes(&classes, Temperature::default());
        let label = rng.random_range(0..5);
        let batch = [(0usize, BatchTarget::Labelled(label))];
        let config = TrainConfig::default();
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let loss = grad_step(&mut head, &samples, &batch, &config).unwrap();
            assert!(loss <= last, "seed {seed}: {loss} after {last}");
            last = loss;
            for k in 0..5 {
                let n: f64 = head.row(k).iter().map(|v| v * v).sum();
                assert!((n.sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn near_optimal_sample_has_tiny_gradient() {
    let samples = EmbeddingSet::new(1, 2, vec![1.0, 0.0]).unwrap();
    let head = Head::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], Temperature::default()).unwrap();
    let (_, grad) = loss_and_gradient(&head, &samples, &[(0, BatchTarget::Labelled(0))], 1.0).unwrap();
    assert!(grad.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-3);
}

#[test]
fn random_heads_score_at_chance() {
    let bench = generate(&SynthSpec::default()).unwrap();
    let mut total = 0.0;
    let draws = 20;
    for seed in 0..draws {
        let mut rng = common::rng(seed);
        let classes = common::classes(&mut rng, 10, 32);
        total += evaluate(&Head::from_classes(&classes, Temperature::default()), &bench.test).unwrap();
    }
    let (mean, sd) = common::chance_bounds(10, draws as usize * bench.test.count());
    assert!((total / draws as f64 - mean).abs() <= 3.0 * sd, "{}", total / draws as f64);
}

#[test]
fn calibrated_anchors_are_nearly_perfect() {
    let bench = generate(&SynthSpec {
        miscalibration: 0.0,
        ..SynthSpec::default()
    })
    .unwrap();
    let acc = evaluate(&Head::from_classes(&bench.true_anchors, Temperature::default()), &bench.test).unwrap();
    assert_eq!(acc, 1.0);
}

fn benchmark_labelled(bench: &semitune_core::synth::SynthBenchmark) -> Vec<(usize, usize)> {
    (0..10)
        .flat_map(|c| {
            (0..bench.pool.count())
                .filter(move |&i| bench.pool.truth(i).unwrap() == c)
                .take(2)
                .map(move |i| (i, c))
        })
        .collect()
}

#[test]
fn no_training_reports_zero_shot_metrics() {
    let bench = generate(&SynthSpec::default()).unwrap();
    let labelled = benchmark_labelled(&bench);
    let config = TrainConfig {
        sessions: 1,
        epochs_per_session: 0,
        ..TrainConfig::default()
    };
    let out = run_sessions(&bench.pool, &bench.test, &bench.zero_shot_anchors, &labelled, &config).unwrap();
    let zero_shot = Head::from_classes(&bench.zero_shot_anchors, Temperature::default());
    assert_eq!(out.head, zero_shot);
    let m = &out.metrics[0];
    assert_eq!(m.session, 1);
    assert_eq!(m.test_accuracy, evaluate(&zero_shot, &bench.test).unwrap());
    let probs = predict_probs(&bench.pool, &bench.zero_shot_anchors, Temperature::default()).unwrap();
    assert_eq!(head_forward(&zero_shot, &bench.pool).unwrap(), probs);
    let confident = build_confident_set(&probs, &out.cluster_pseudo, &labelled, &SslConfig::default()).unwrap();
    assert_eq!(m.pseudo_label_accuracy, Some(pseudolabel_accuracy(&confident, &bench.pool).unwrap()));
    assert_eq!(m.set_sizes[0] + m.set_sizes[2] + m.set_sizes[3], bench.pool.count());
}

#[test]
fn reruns_are_identical() {
    let bench = generate(&SynthSpec::default()).unwrap();
    let config = TrainConfig {
        sessions: 3,
        epochs_per_session: 4,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = run_pipeline(&bench.pool, &bench.test, &bench.zero_shot_anchors, &config).unwrap();
    let b = run_pipeline(&bench.pool, &bench.test, &bench.zero_shot_anchors, &config).unwrap();
    assert_eq!(a, b);
    for m in &a.train.metrics {
        assert_eq!(m.set_sizes[0] + m.set_sizes[2] + m.set_sizes[3], bench.pool.count());
    }
}
