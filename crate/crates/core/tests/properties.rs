mod common;

use proptest::prelude::*;
use rand::Rng;
use rfs_core::attacks::{self, AttackKind};
use rfs_core::classifier::{train_sec_svm, Hyperparams};
use rfs_core::corpus::{self, Dataset, DatasetFormat, Label, SyntheticSpec};
use rfs_core::depgraph::{self, pairwise_correlation};
use rfs_core::evaluation::curve_from_runs;
use rfs_core::transform::RobustTransform;
use rfs_core::Pipeline;

fn random_dataset(seed: u64, n: usize, d: usize, density: f64) -> Dataset {
    let mut rng = rfs_core::rng::seeded(seed);
    let rows = (0..n)
        .map(|_| (0..d).filter(|_| rng.random_bool(density)).collect())
        .collect();
    let mut labels: Vec<Label> = (0..n)
        .map(|i| {
            if i % 3 == 0 {
                Label::Malware
            } else {
                Label::Benign
            }
        })
        .collect();
    labels.rotate_left(seed as usize % n.max(1));
    Dataset::new(d, rows, labels).unwrap()
}

fn random_transform(seed: u64, d: usize, theta: f64) -> RobustTransform {
    let mut rng = rfs_core::rng::seeded(seed);
    let corr = common::random_graph(&mut rng, d);
    let primaries = common::random_primaries(&mut rng, d);
    let forest = depgraph::build_opf(&corr, &primaries).unwrap();
    RobustTransform::new(forest, theta).unwrap()
}

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_benign: 240,
        n_malware: 60,
        d: 120,
        n_behaviors: 3,
        n_benign_behaviors: 4,
        bundle_size_range: (4, 8),
        n_biased_features: 4,
        seed,
        ..SyntheticSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_is_monotone(seed in any::<u64>(), theta in 0.51f64..0.99, d in 2usize..12, bits in any::<u32>(), extra in any::<u32>()) {
        let t = random_transform(seed, d, theta);
        let x: Vec<usize> = (0..d).filter(|j| bits >> j & 1 == 1).collect();
        let y: Vec<usize> = (0..d).filter(|j| (bits | extra) >> j & 1 == 1).collect();
        let hx = t.apply(&x).unwrap();
        let hy = t.apply(&y).unwrap();
        prop_assert!(hx.iter().all(|i| hy.contains(i)));
        prop_assert!(t.apply(&[]).unwrap().is_empty());
    }

    #[test]
    fn correlation_is_symmetric_and_permutation_equivariant(seed in any::<u64>(), n in 4usize..40, d in 2usize..10) {
        let ds = random_dataset(seed, n, d, 0.4);
        let c = pairwise_correlation(&ds);
        for i in 0..d {
            for j in 0..d {
                prop_assert_eq!(c.get(i, j), c.get(j, i));
                prop_assert!((0.0..=1.0 + 1e-12).contains(&c.get(i, j)));
            }
        }
        // reverse the columns
        let rows = ds.rows().iter().map(|r| r.iter().map(|&j| d - 1 - j).collect()).collect();
        let flipped = Dataset::new(d, rows, ds.labels().to_vec()).unwrap();
        let cf = pairwise_correlation(&flipped);
        for i in 0..d {
            for j in 0..d {
                prop_assert!((c.get(i, j) - cf.get(d - 1 - i, d - 1 - j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn primaries_ignore_row_order(seed in any::<u64>(), n in 4usize..40, d in 2usize..12, m in 1usize..6) {
        let ds = random_dataset(seed, n, d, 0.35);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.reverse();
        idx.rotate_left(seed as usize % n);
        let shuffled = ds.subset(&idx);
        let m = m.min(d);
        let a = depgraph::select_primaries(&pairwise_correlation(&ds), m).unwrap();
        let b = depgraph::select_primaries(&pairwise_correlation(&shuffled), m).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dataset_roundtrips_through_both_formats(seed in any::<u64>(), n in 0usize..30, d in 1usize..50) {
        let ds = random_dataset(seed, n, d, 0.2);
        let dir = tempfile::tempdir().unwrap();
        for (format, name) in [(DatasetFormat::SparseText, "a.txt"), (DatasetFormat::Jsonl, "a.jsonl")] {
            let path = dir.path().join(name);
            ds.save(&path, format).unwrap();
            let back = Dataset::load(&path, format, Some(d)).unwrap();
            prop_assert_eq!(&back, &ds);
        }
    }

    #[test]
    fn sec_svm_box_holds_exactly(seed in any::<u64>(), c in 0.001f64..2.0) {
        let ds = random_dataset(seed, 40, 8, 0.3);
        let hp = Hyperparams { epochs: 5, seed, ..Hyperparams::default() };
        let m = train_sec_svm(&ds, &hp, c).unwrap();
        prop_assert!(m.weights.iter().all(|w| w.abs() <= c));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Addition-only, query and growth budgets, for every attack on every
    /// detector and seed.
    #[test]
    fn attacks_respect_threat_model(seed in 0u64..1000, q in 0usize..12, alpha in 0.0f64..1.0) {
        let (ds, _) = corpus::generate_synthetic(&small_spec(seed)).unwrap();
        let (train, test) = corpus::split(&ds, 0.7, seed).unwrap();
        let hp = Hyperparams { epochs: 10, seed, ..Hyperparams::default() };
        let t = RobustTransform::fit(&train, 8, 0.8).unwrap();
        let pipes = [
            Pipeline::original(&train, &hp).unwrap(),
            Pipeline::sec_svm(&train, &hp, 0.1).unwrap(),
            Pipeline::feature_select(&train, 20, &hp).unwrap(),
            Pipeline::robust(&train, t, &hp).unwrap(),
        ];
        let lib = corpus::harvest_transformations(&train, 40, (2, 6), seed).unwrap();
        let kinds = [
            AttackKind::Greedy { budget: 15 },
            AttackKind::PkGreedy { budget: 5 },
            AttackKind::EvadeDroid { q, alpha, n_candidates: 3 },
        ];
        for p in &pipes {
            let samples: Vec<(usize, Vec<usize>)> = test
                .indices_of(Label::Malware)
                .into_iter()
                .filter(|&i| p.predict(test.row(i)).unwrap() == Label::Malware)
                .map(|i| (i, test.row(i).to_vec()))
                .collect();
            for kind in &kinds {
                let runs = attacks::attack_all(p, &samples, kind, Some(&lib), seed).unwrap();
                for r in &runs {
                    prop_assert!(r.respects_addition_only());
                    if let AttackKind::EvadeDroid { q, alpha, .. } = *kind {
                        prop_assert!(r.queries_used <= q);
                        prop_assert!(r.adversarial.len() as f64 <= (1.0 + alpha) * r.original.len() as f64);
                    }
                    if let AttackKind::Greedy { budget } = *kind {
                        prop_assert!(r.nof() <= budget);
                    }
                    if r.success {
                        prop_assert_eq!(p.predict(&r.adversarial).unwrap(), Label::Benign);
                    }
                }
                if let AttackKind::Greedy { .. } = kind {
                    let curve = curve_from_runs(&runs, &[0, 1, 2, 4, 8, 15]);
                    prop_assert!(curve.windows(2).all(|w| w[0].success_rate <= w[1].success_rate));
                }
            }
        }
    }
}

#[test]
fn evadedroid_is_reproducible_per_sample() {
    let (ds, _) = corpus::generate_synthetic(&small_spec(3)).unwrap();
    let (train, test) = corpus::split(&ds, 0.7, 3).unwrap();
    let p = Pipeline::original(&train, &Hyperparams::default()).unwrap();
    let lib = corpus::harvest_transformations(&train, 40, (2, 6), 3).unwrap();
    let samples: Vec<(usize, Vec<usize>)> = test
        .indices_of(Label::Malware)
        .into_iter()
        .filter(|&i| p.predict(test.row(i)).unwrap() == Label::Malware)
        .map(|i| (i, test.row(i).to_vec()))
        .collect();
    let kind = AttackKind::EvadeDroid {
        q: 10,
        alpha: 0.5,
        n_candidates: 3,
    };
    let all = attacks::attack_all(&p, &samples, &kind, Some(&lib), 11).unwrap();
    // attacking a sample on its own gives the same trace as in the batch
    let reversed: Vec<_> = samples.iter().rev().cloned().collect();
    let mut back = attacks::attack_all(&p, &reversed, &kind, Some(&lib), 11).unwrap();
    back.reverse();
    assert_eq!(all, back);
}
