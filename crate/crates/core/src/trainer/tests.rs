use sha2::{Digest, Sha256};

use super::*;
use crate::network::Matrix;
use crate::toolkit::generate::{generate_corpus, GenConfig};

fn small_corpus(seed: u64) -> Vec<EmrRecord> {
    generate_corpus(&GenConfig {
        n_categories: 2,
        diseases_per_category: 3,
        symptoms_per_disease: 3,
        records: 40,
        seed,
        ..GenConfig::default()
    })
    .unwrap()
    .0
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        net: NetConfig {
            dim: 6,
            seed: 5,
            ..NetConfig::default()
        },
        epochs,
        step_vector: 0.01,
        step_weight: 0.01,
        step_softmax: 0.01,
        ..TrainConfig::default()
    }
}

fn stats(epoch: usize, loss: f64, p: f64, dcg: f64) -> EpochStats {
    EpochStats {
        epoch,
        loss,
        p_at_10: p,
        dcg,
    }
}

#[test]
fn zero_epochs_rejected() {
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn reference_regime_is_valid() {
    for dim in [50, 100, 150, 200] {
        let cfg = TrainConfig {
            net: NetConfig {
                dim,
                ..NetConfig::default()
            },
            ..TrainConfig::default()
        };
        cfg.validate().unwrap();
        assert_eq!(cfg.epochs, 800);
        assert_eq!(cfg.step_vector, 0.001);
    }
}

#[test]
fn bad_steps_rejected() {
    for step in [0.0, -1.0, f64::NAN] {
        let cfg = TrainConfig {
            step_weight: step,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}

fn toy_params() -> ModelParams {
    init_params(
        4,
        3,
        &NetConfig {
            dim: 3,
            seed: 2,
            ..NetConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn zero_gradient_leaves_non_embedding_params() {
    let mut params = toy_params();
    let before = params.clone();
    let grads = GradientSet::zeros_like(&params);
    apply_update(&mut params, &grads, &TrainConfig::default()).unwrap();
    assert_eq!(params, before);
}

#[test]
fn updated_rows_return_to_unit_norm() {
    let mut params = toy_params();
    let mut grads = GradientSet::zeros_like(&params);
    grads.embeddings.insert(1, vec![3.0, -2.0, 0.5]);
    grads.embeddings.insert(3, vec![0.1, 0.1, 0.1]);
    let cfg = TrainConfig {
        step_vector: 0.2,
        ..TrainConfig::default()
    };
    apply_update(&mut params, &grads, &cfg).unwrap();
    assert!(max_norm_deviation(&params, [1, 3]) < 1e-9);
}

#[test]
fn step_scales_weight_update_linearly() {
    let base = toy_params();
    let mut grads = GradientSet::zeros_like(&base);
    grads.composition = Matrix::from_fn(3, 6, |i, j| (i as f64 + 1.0) * (j as f64 - 2.0));
    grads.classifier = Matrix::from_fn(3, 3, |i, j| i as f64 - j as f64);
    let moved = |step: f64| {
        let mut p = base.clone();
        let cfg = TrainConfig {
            step_weight: step,
            step_softmax: step,
            ..TrainConfig::default()
        };
        apply_update(&mut p, &grads, &cfg).unwrap();
        p
    };
    let (one, two) = (moved(0.01), moved(0.02));
    for k in 0..18 {
        let a = one.composition.as_slice()[k] - base.composition.as_slice()[k];
        let b = two.composition.as_slice()[k] - base.composition.as_slice()[k];
        assert!((2.0 * a - b).abs() < 1e-12);
        assert!((a + 0.01 * grads.composition.as_slice()[k]).abs() < 1e-12);
    }
    for k in 0..9 {
        let a = one.classifier.as_slice()[k] - base.classifier.as_slice()[k];
        assert!((a + 0.01 * grads.classifier.as_slice()[k]).abs() < 1e-12);
    }
}

#[test]
fn non_finite_gradient_is_an_error() {
    let mut params = toy_params();
    let mut grads = GradientSet::zeros_like(&params);
    grads.classifier = Matrix::from_fn(3, 3, |i, _| if i == 1 { f64::NAN } else { 0.0 });
    assert!(matches!(
        apply_update(&mut params, &grads, &TrainConfig::default()),
        Err(Error::NonFiniteGradient(_))
    ));
}

#[test]
fn diverging_step_reports_epoch() {
    let cfg = TrainConfig {
        step_vector: 1e300,
        step_weight: 1e300,
        step_softmax: 1e300,
        ..small_config(5)
    };
    match train(&small_corpus(1), &cfg) {
        Err(Error::Training { epoch, .. }) => assert!(epoch >= 1),
        Err(Error::NonFiniteGradient(_)) => {}
        other => panic!("expected a training failure, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn select_single_entry() {
    assert_eq!(select_model(&[stats(1, 3.0, 0.2, 0.1)]), Some(1));
    assert_eq!(select_model(&[]), None);
}

#[test]
fn select_monotone_history_picks_last() {
    let history: Vec<_> = (1..=5)
        .map(|e| stats(e, 10.0 - e as f64, 0.1 * e as f64, 0.1 * e as f64))
        .collect();
    assert_eq!(select_model(&history), Some(5));
}

#[test]
fn select_interior_peak() {
    let history = vec![
        stats(1, 10.0, 0.2, 0.2),
        stats(2, 6.0, 0.7, 0.6),
        stats(3, 5.0, 0.9, 0.8),
        stats(4, 4.0, 0.6, 0.5),
        stats(5, 3.0, 0.5, 0.4),
    ];
    // scores: -0.6, 0.871, 1.414, 0.957, 0.9
    assert_eq!(select_model(&history), Some(3));
}

#[test]
fn select_tie_goes_to_later_epoch() {
    let history = vec![stats(1, 2.0, 0.5, 0.5), stats(2, 2.0, 0.5, 0.5)];
    assert_eq!(select_model(&history), Some(2));
}

#[test]
fn stats_recorded_on_schedule() {
    let cfg = TrainConfig {
        eval_every: 3,
        ..small_config(7)
    };
    let out = train(&small_corpus(2), &cfg).unwrap();
    let epochs: Vec<_> = out.history.iter().map(|s| s.epoch).collect();
    assert_eq!(epochs, vec![1, 3, 6, 7]);
}

#[test]
fn loss_threshold_stops_early() {
    let cfg = TrainConfig {
        loss_threshold: 1e9,
        ..small_config(50)
    };
    let out = train(&small_corpus(2), &cfg).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.history[0].epoch, 1);
}

#[test]
fn same_seed_same_checkpoint_bytes() {
    let records = small_corpus(3);
    let a = train(&records, &small_config(4)).unwrap();
    let b = train(&records, &small_config(4)).unwrap();
    assert_eq!(write_checkpoint(&a.checkpoint).unwrap(), write_checkpoint(&b.checkpoint).unwrap());
    let mut other = small_config(4);
    other.net.seed = 6;
    let c = train(&records, &other).unwrap();
    assert_ne!(a.checkpoint.params, c.checkpoint.params);
}

#[test]
fn full_batch_and_fixed_order_run() {
    let records = small_corpus(4);
    for (update, shuffle) in [(UpdateMode::FullBatch, true), (UpdateMode::PerTree, false)] {
        let cfg = TrainConfig {
            update,
            shuffle,
            ..small_config(3)
        };
        let out = train(&records, &cfg).unwrap();
        assert!(out.checkpoint.params.is_finite());
        assert_eq!(out.history.len(), 3);
    }
}

#[test]
fn checkpoint_round_trip() {
    let mut cfg = small_config(2);
    cfg.net.use_bias = true;
    let out = train(&small_corpus(5), &cfg).unwrap();
    let bytes = write_checkpoint(&out.checkpoint).unwrap();
    let back = read_checkpoint(&bytes).unwrap();
    assert_eq!(back, out.checkpoint);
    assert_eq!(write_checkpoint(&back).unwrap(), bytes);
}

#[test]
fn truncated_checkpoint_is_corrupt() {
    let out = train(&small_corpus(6), &small_config(1)).unwrap();
    let bytes = write_checkpoint(&out.checkpoint).unwrap();
    for cut in [9, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(read_checkpoint(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))));
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    assert!(matches!(read_checkpoint(&flipped), Err(Error::CorruptCheckpoint(_))));
}

#[test]
fn older_version_rejected() {
    let out = train(&small_corpus(7), &small_config(1)).unwrap();
    let mut bytes = write_checkpoint(&out.checkpoint).unwrap();
    bytes[4..8].copy_from_slice(&0u32.to_le_bytes());
    let body = bytes.len() - 32;
    let digest = Sha256::digest(&bytes[..body]);
    bytes[body..].copy_from_slice(&digest);
    assert!(matches!(
        read_checkpoint(&bytes),
        Err(Error::VersionMismatch {
            found: 0,
            expected: FORMAT_VERSION
        })
    ));
}

#[test]
fn records_without_evidence_are_skipped() {
    let mut records = small_corpus(8);
    records[0].evidence.iter_mut().for_each(|e| e.modifier = crate::corpus::Modifier::Absent);
    let set = TrainingSet::build(&records, EvidenceMode::PresentOnly).unwrap();
    assert_eq!(set.skipped + set.trees.len(), records.len());
    assert!(set.skipped >= 1);
}

#[test]
fn history_floats_survive_round_trip() {
    let mut out = train(&small_corpus(9), &small_config(1)).unwrap();
    out.checkpoint.history = vec![stats(1, 0.1 + 0.2, 1.0 / 3.0, std::f64::consts::PI * 1e-300)];
    let back = read_checkpoint(&write_checkpoint(&out.checkpoint).unwrap()).unwrap();
    assert_eq!(back.history, out.checkpoint.history);
}
