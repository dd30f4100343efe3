use std::collections::BTreeSet;

use proptest::prelude::*;

use rnkn::corpus::{build_vocabulary, filter_evidence, split_corpus, EmrRecord, EvidenceMode};
use rnkn::eval::{dcg, precision_at_k, rank_classes, DiagnosisResult, GoldMatch};
use rnkn::network::Matrix;
use rnkn::toolkit::generate::{generate_corpus, GenConfig};
use rnkn::toolkit::project::project_2d;
use rnkn::trainer::TrainingSet;
use rnkn::tree::{Origin, Payload};

fn corpus(seed: u64, modifier_noise: f64) -> Vec<EmrRecord> {
    generate_corpus(&GenConfig {
        n_categories: 3,
        diseases_per_category: 3,
        symptoms_per_disease: 4,
        records: 60,
        modifier_noise,
        seed,
        ..GenConfig::default()
    })
    .unwrap()
    .0
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn trees_are_well_formed_with_simplex_targets(seed in 0u64..1000) {
        let set = TrainingSet::build(&corpus(seed, 0.1), EvidenceMode::All).unwrap();
        for t in &set.trees {
            let tree = &t.tree;
            prop_assert_eq!(tree.root(), tree.len() - 1);
            for (id, node) in tree.nodes().iter().enumerate() {
                if let Payload::Logic { left, right, origin } = node.payload {
                    prop_assert!(left < id && right < id);
                    if origin == Origin::HuffmanMerge {
                        prop_assert_eq!(node.weight, tree.node(left).weight + tree.node(right).weight);
                    }
                }
            }
            for target in tree.targets().unwrap() {
                prop_assert!(target.iter().all(|&v| v >= 0.0));
                prop_assert!((target.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn present_only_is_subset_of_all(seed in 0u64..1000, noise in 0.0f64..0.9) {
        let records = corpus(seed, noise);
        let vocab = build_vocabulary(&records).unwrap();
        for r in &records {
            let all: BTreeSet<_> = filter_evidence(r, &vocab, EvidenceMode::All).ids.into_iter().collect();
            let present: BTreeSet<_> = filter_evidence(r, &vocab, EvidenceMode::PresentOnly).ids.into_iter().collect();
            prop_assert!(present.is_subset(&all));
        }
    }

    #[test]
    fn split_partitions_records(n in 2usize..80, fraction in 0.05f64..0.95, seed in any::<u64>()) {
        let records: Vec<EmrRecord> = corpus(1, 0.0).into_iter().cycle().take(n).enumerate()
            .map(|(i, mut r)| { r.id = format!("x{i}"); r })
            .collect();
        let (train, test) = split_corpus(&records, fraction, seed).unwrap();
        prop_assert_eq!(train.len() + test.len(), n);
        let ids: BTreeSet<_> = train.iter().chain(&test).map(|r| r.id.clone()).collect();
        prop_assert_eq!(ids.len(), n);
        let again = split_corpus(&records, fraction, seed).unwrap();
        prop_assert_eq!(again.1, test);
    }

    #[test]
    fn ranking_is_a_sorted_permutation(probs in prop::collection::vec(0u8..5, 1..30)) {
        let probs: Vec<f64> = probs.into_iter().map(f64::from).collect();
        let ranking = rank_classes(&probs);
        let ids: BTreeSet<_> = ranking.iter().map(|(c, _)| *c).collect();
        prop_assert_eq!(ids.len(), probs.len());
        for w in ranking.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
    }

    #[test]
    fn precision_monotone_and_dcg_bounded(
        cases in prop::collection::vec((prop::collection::vec(0.0f64..1.0, 12), prop::collection::btree_set(0usize..12, 1..4), any::<bool>()), 1..20)
    ) {
        let results: Vec<DiagnosisResult> = cases.iter().enumerate().map(|(i, (p, _, skip))| {
            if *skip && i % 3 == 0 {
                DiagnosisResult::undiagnosable(i.to_string())
            } else {
                DiagnosisResult { record_id: i.to_string(), ranking: rank_classes(p), undiagnosable: false }
            }
        }).collect();
        let gold: Vec<Vec<usize>> = cases.iter().map(|(_, g, _)| g.iter().copied().collect()).collect();
        for rule in [GoldMatch::Any, GoldMatch::All] {
            let mut prev = 0.0;
            for k in 1..=12 {
                let p = precision_at_k(&results, &gold, k, rule);
                prop_assert!(p >= prev);
                prev = p;
            }
        }
        let cap = 1.0 + (2..=10).map(|i| 1.0 / (i as f64).log2()).sum::<f64>();
        for (r, g) in results.iter().zip(&gold) {
            let d = dcg(r, g, 10);
            prop_assert!((0.0..=cap).contains(&d));
            if g.len() == 1 {
                prop_assert!(d <= 1.0);
            }
        }
    }

    #[test]
    fn projection_commutes_with_row_permutation(
        values in prop::collection::vec(-3.0f64..3.0, 40),
        shift in 1usize..9,
    ) {
        let data = Matrix::from_vec(10, 4, values).unwrap();
        let permuted = Matrix::from_fn(10, 4, |i, j| data[((i + shift) % 10, j)]);
        let a = project_2d(&data, 7).unwrap();
        let b = project_2d(&permuted, 7).unwrap();
        // first axis only, and only when it is well separated from the second
        let gap = (a.variances[0] - a.variances[1]) / a.variances[0].max(1e-12);
        prop_assume!(gap > 0.05);
        for i in 0..10 {
            prop_assert!((a.coords[((i + shift) % 10, 0)] - b.coords[(i, 0)]).abs() < 1e-6);
        }
    }
}
