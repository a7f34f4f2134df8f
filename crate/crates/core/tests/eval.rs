use c2f::encoder::{Encoder, EncoderConfig};
use c2f::eval::{
    classification_metrics, linear_probe, make_split, mean_pairwise_cosine, roc_auc,
    similarity_diagnostics, ProbeConfig,
};
use c2f::graph::{generate_sbm, SbmSpec};
use c2f::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(n_per: usize, classes: usize, spread: f64, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n_per * classes).map(|i| i / n_per).collect();
    let z = Tensor::from_fn(labels.len(), classes, |i, j| {
        let centre = if labels[i] == j { spread } else { 0.0 };
        centre + rng.random_range(-1.0..1.0)
    });
    (z, labels)
}

#[test]
fn split_membership_frequency() {
    let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
    let mut counts = vec![0usize; 200];
    let seeds = 100;
    for seed in 0..seeds {
        let s = make_split(&labels, 20, 30, seed).unwrap();
        s.validate(200).unwrap();
        for &i in &s.train {
            counts[i] += 1;
        }
    }
    let p = 0.2;
    let sigma = (seeds as f64 * p * (1.0 - p)).sqrt();
    // 200 nodes tested at 3σ: a handful of exceedances is expected.
    let outside = counts
        .iter()
        .filter(|&&c| (c as f64 - seeds as f64 * p).abs() > 3.0 * sigma)
        .count();
    assert!(outside <= 4, "{outside} nodes outside 3σ");
    assert!(counts
        .iter()
        .all(|&c| (c as f64 - seeds as f64 * p).abs() <= 4.5 * sigma));
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - seeds as f64 * p).powi(2) / sigma.powi(2))
        .sum();
    assert!((chi2 - 200.0).abs() < 3.0 * 400f64.sqrt(), "chi2 {chi2}");
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let classes = 3;
    let (z, labels) = blobs(100, classes, 3.0, 1);
    let runs = 20;
    let mut total = 0.0;
    for seed in 0..runs {
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let split = make_split(&shuffled, 20, 30, seed).unwrap();
        let m = linear_probe(&z, &shuffled, classes, &split, &ProbeConfig::default()).unwrap();
        total += m.accuracy;
    }
    let mean = total / runs as f64;
    // 150 test nodes per run; the selected epoch adds a little optimism.
    let sigma = ((1.0 / 3.0) * (2.0 / 3.0) / (150.0 * runs as f64)).sqrt();
    assert!(
        (mean - 1.0 / 3.0).abs() <= 3.0 * sigma + 0.02,
        "mean {mean}"
    );
}

#[test]
fn separable_blobs_are_learned() {
    let (z, labels) = blobs(60, 4, 6.0, 2);
    let split = make_split(&labels, 20, 10, 0).unwrap();
    let m = linear_probe(&z, &labels, 4, &split, &ProbeConfig::default()).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert_eq!(m.f1, 1.0);
    assert_eq!(m.auc, 1.0);
}

#[test]
fn metrics_ignore_class_names() {
    let (z, labels) = blobs(60, 3, 1.0, 3);
    let perm = [2, 0, 1];
    let renamed: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
    let cfg = ProbeConfig::default();
    let split = make_split(&labels, 20, 10, 4).unwrap();
    let a = linear_probe(&z, &labels, 3, &split, &cfg).unwrap();
    let b = linear_probe(&z, &renamed, 3, &split, &cfg).unwrap();
    assert!((a.accuracy - b.accuracy).abs() < 1e-12);
    assert!((a.f1 - b.f1).abs() < 1e-12);
    assert!((a.auc - b.auc).abs() < 1e-12);
    assert!((a.recall - b.recall).abs() < 1e-12);
}

#[test]
fn metric_hand_values() {
    // Predictions: 0, 1, 1, 0 for labels 0, 0, 1, 1.
    let probs = Tensor::from_rows(&[[0.9, 0.1], [0.4, 0.6], [0.2, 0.8], [0.7, 0.3]]).unwrap();
    let m = classification_metrics(&[0, 0, 1, 1], &probs).unwrap();
    assert_eq!(m.accuracy, 0.5);
    assert!((m.f1 - 0.5).abs() < 1e-12);
    assert!((m.recall - 0.5).abs() < 1e-12);
    // Class 1 scores 0.1, 0.6 (negatives) vs 0.8, 0.3 (positives): 3 of 4 pairs ordered.
    assert!((m.auc - 0.75).abs() < 1e-12);
}

#[test]
fn diagnostics_endpoints() {
    let g = generate_sbm(&SbmSpec {
        block_sizes: vec![15, 15],
        p_in: 0.3,
        p_out: 0.05,
        feature_dim: 4,
        mean_separation: 1.0,
        seed: 2,
    })
    .unwrap();
    let enc = Encoder::init(
        EncoderConfig::default(),
        4,
        &mut ChaCha8Rng::seed_from_u64(3),
    )
    .unwrap();
    let rows = similarity_diagnostics(&g, &enc, &[0.0, 1.0], 3, 7).unwrap();
    assert_eq!(rows[0].inter_view, 1.0);
    assert!(rows[1].inter_view < 1.0);
    assert!(rows.iter().all(|r| (-1.0..=1.0).contains(&r.intra_view)));
    assert!(similarity_diagnostics(&g, &enc, &[1.5], 1, 0).is_err());
}

proptest! {
    #[test]
    fn auc_is_rank_based(
        scores in prop::collection::vec(-5.0f64..5.0, 4..20),
        flags in prop::collection::vec(any::<bool>(), 20),
    ) {
        let pos = &flags[..scores.len()];
        let auc = roc_auc(&scores, pos);
        let shifted: Vec<f64> = scores.iter().map(|s| (s * 0.5 + 1.0).exp()).collect();
        prop_assert_eq!(auc, roc_auc(&shifted, pos));
        if let Some(a) = auc {
            let flipped: Vec<bool> = pos.iter().map(|b| !b).collect();
            let b = roc_auc(&scores, &flipped).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_cosine_matches_double_loop(
        data in prop::collection::vec(-1.0f64..1.0, 12),
    ) {
        let z = Tensor::from_vec(4, 3, data).unwrap();
        let mut total = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    total += c2f::eval::cosine(z.row(i), z.row(j));
                }
            }
        }
        prop_assert!((mean_pairwise_cosine(&z) - total / 12.0).abs() < 1e-9);
    }
}
