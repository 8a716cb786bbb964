use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tabxcheck::contrastive::{
    combined_loss, loss_gradient, loss_isolated, loss_nonisolated, standard_infonce, train_embedder, Batch,
    LossParams, Objective, TrainConfig,
};
use tabxcheck::corpus::{generate_corpus, GenConfig, SyntheticCorpus};
use tabxcheck::embedder::{EmbedderConfig, ProjectionEmbedder};

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Labels 0,0,1,1,2 then isolated.
fn batch(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Batch {
    let labels: Vec<Option<usize>> = (0..n).map(|i| if i < 5 { Some(i / 2) } else { None }).collect();
    let mut labels = labels;
    labels[4] = Some(0);
    Batch::from_labels(unit_rows(rng, n, dim), &labels).unwrap()
}

#[test]
fn losses_are_finite_and_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = LossParams::default();
    for _ in 0..50 {
        let n = rng.random_range(5..20);
        let b = batch(&mut rng, n, 8);
        for l in [combined_loss(&b, &p).unwrap(), standard_infonce(&b, &p)] {
            assert!(l.is_finite() && l >= 0.0);
        }
    }
}

#[test]
fn each_loss_ignores_the_other_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = LossParams::default();
    let b = batch(&mut rng, 10, 6);
    let mut rows = b.rows().to_vec();
    let fresh = unit_rows(&mut rng, 10, 6);
    for &i in b.nonisolated() {
        rows[i] = fresh[i].clone();
    }
    assert_eq!(loss_isolated(&b.with_rows(rows), &p), loss_isolated(&b, &p));
    let mut rows = b.rows().to_vec();
    for &i in b.isolated() {
        rows[i] = fresh[i].clone();
    }
    assert_eq!(loss_nonisolated(&b.with_rows(rows), &p).unwrap(), loss_nonisolated(&b, &p).unwrap());
}

#[test]
fn isolated_gradient_vanishes_on_nonisolated_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = LossParams {
        alpha1: 0.0,
        ..LossParams::default()
    };
    let b = batch(&mut rng, 12, 5);
    let g = loss_gradient(&b, &p).unwrap();
    for &i in b.nonisolated() {
        assert!(g[i].iter().all(|&x| x == 0.0));
    }
}

#[test]
fn losses_are_rotation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = LossParams::default();
    let b = batch(&mut rng, 9, 2);
    let (s, c) = 0.7f64.sin_cos();
    let rotated: Vec<Vec<f64>> = b.rows().iter().map(|r| vec![c * r[0] - s * r[1], s * r[0] + c * r[1]]).collect();
    let r = b.with_rows(rotated);
    assert!((combined_loss(&b, &p).unwrap() - combined_loss(&r, &p).unwrap()).abs() < 1e-12);
    assert!((standard_infonce(&b, &p) - standard_infonce(&r, &p)).abs() < 1e-12);
}

#[test]
fn single_mention_standard_loss_is_zero() {
    let b = Batch::new(vec![vec![0.6, 0.8]], vec![vec![]]).unwrap();
    assert!(standard_infonce(&b, &LossParams::default()).abs() < 1e-15);
}

#[test]
fn asymmetric_positives_are_rejected() {
    assert!(Batch::new(vec![vec![1.0], vec![1.0]], vec![vec![1], vec![]]).is_err());
}

fn small_corpus() -> SyntheticCorpus {
    generate_corpus(&GenConfig {
        n_docs: 8,
        rng_seed: 21,
        ..GenConfig::default()
    })
    .unwrap()
}

#[test]
fn zero_epochs_leave_weights_unchanged() {
    let init = ProjectionEmbedder::random(&EmbedderConfig::default());
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let out = train_embedder(&small_corpus(), &init, &cfg, &LossParams::default()).unwrap();
    assert_eq!(out.embedder.weights(), init.weights());
    assert!(out.log.is_empty());
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let init = ProjectionEmbedder::random(&EmbedderConfig::default());
    let corpus = generate_corpus(&GenConfig::default()).unwrap();
    let run = || train_embedder(&corpus, &init, &TrainConfig::default(), &LossParams::default()).unwrap();
    let a = run();
    let b = run();
    assert_eq!(a.embedder.weights(), b.embedder.weights());
    assert_eq!(a.log, b.log);
    let means = a.epoch_means();
    assert_eq!(means.len(), 3);
    assert!(means[2] < means[0], "{means:?}");
}

#[test]
fn standard_objective_also_trains() {
    let init = ProjectionEmbedder::random(&EmbedderConfig::default());
    let cfg = TrainConfig {
        objective: Objective::Standard,
        ..TrainConfig::default()
    };
    let out = train_embedder(&small_corpus(), &init, &cfg, &LossParams::default()).unwrap();
    let means = out.epoch_means();
    assert!(means.last() < means.first());
    assert!(out.log.iter().all(|r| r.loss_n.is_none() && r.loss_i.is_none()));
}
