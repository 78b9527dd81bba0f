use std::collections::BTreeMap;

use prefsel::align::{best_of_n, CandidateSet};
use prefsel::data::{load_dataset, save_dataset};
use prefsel::model::LinearScorer;
use prefsel::ot::OtConfig;
use prefsel::select::{distance_scores, select_lowest};
use prefsel::gradfeat::GradientFeature;
use prefsel::train::RewardQueue;
use prefsel::{Dataset, FeatureVector, Modality, PreferenceSample};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Push(f64),
    Clear,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        20 => (-1e3f64..1e3).prop_map(Op::Push),
        1 => Just(Op::Clear),
    ]
}

fn brute(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (mean, values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn queue_stats_match_recomputation(cap in 1usize..40, ops in proptest::collection::vec(op(), 0..300)) {
        let mut q = RewardQueue::new(cap);
        for o in ops {
            match o {
                Op::Push(r) => q.push(r),
                Op::Clear => q.clear(),
            }
            let vals: Vec<f64> = q.values().collect();
            prop_assert!(vals.len() <= cap);
            let (m, v) = brute(&vals);
            prop_assert!((q.mean() - m).abs() <= 1e-9 * (1.0 + m.abs()));
            prop_assert!((q.variance() - v).abs() <= 1e-9 * (1.0 + v));
        }
    }

    #[test]
    fn dataset_round_trips_bit_exact(
        rows in proptest::collection::vec(
            (proptest::collection::vec(-1e6f64..1e6, 3), proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 2), 2..5)),
            1..20,
        )
    ) {
        let samples: Vec<PreferenceSample<f64>> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (x, ys))| PreferenceSample::from_raw(format!("id{i}"), x, ys, Modality::Caption).unwrap())
            .collect();
        let d = Dataset::new("rt", Modality::Caption, samples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.jsonl");
        save_dataset(&d, &path).unwrap();
        let back: Dataset<f64> = load_dataset(&path, Modality::Caption).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn lower_budget_is_prefix(scores in proptest::collection::vec(0u8..10, 1..40), cut in 0usize..40) {
        let map: BTreeMap<String, f64> = scores.iter().enumerate().map(|(i, &s)| (format!("s{i:02}"), f64::from(s))).collect();
        let full = select_lowest(&map, map.len()).unwrap().selected_ids;
        let b = cut.min(map.len());
        let part = select_lowest(&map, b).unwrap().selected_ids;
        prop_assert_eq!(&full[..b], &part[..]);
    }

    #[test]
    fn best_of_n_invariant_under_monotone_maps(ws in proptest::collection::vec(-3.0f64..3.0, 8), a in 0.1f64..5.0, c in -10.0f64..10.0) {
        let base = LinearScorer::new(1, 1, vec![0.0, 1.0]).unwrap();
        let shifted = LinearScorer::new(1, 1, vec![c, a]).unwrap();
        let cs = CandidateSet::new(
            "c",
            FeatureVector::new(vec![1.0]).unwrap(),
            ws.iter().map(|&w| FeatureVector::new(vec![w]).unwrap()).collect(),
        ).unwrap();
        let (i, scores) = best_of_n(&base, &cs).unwrap();
        prop_assert_eq!(best_of_n(&shifted, &cs).unwrap().0, i);
        // A strictly increasing nonlinear map of the scores keeps the argmax.
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3) + s).collect();
        let j = cubed.iter().enumerate().fold(0, |b, (k, v)| if *v > cubed[b] { k } else { b });
        prop_assert_eq!(j, i);
    }
}

fn feature(id: &str, values: Vec<f64>) -> GradientFeature<f64> {
    GradientFeature {
        sample_id: id.into(),
        seed: 0,
        source_dim: values.len(),
        values,
    }
}

#[test]
fn scores_ignore_subset_order() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let mut f = |id: String| feature(&id, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
    let source: Vec<_> = (0..5).map(|i| f(format!("s{i}"))).collect();
    let mut subset: Vec<_> = (0..6).map(|i| f(format!("t{i}"))).collect();
    let ot = OtConfig {
        block_size: 4,
        ..Default::default()
    };
    let a = distance_scores(&source, &subset, &ot, Some(2)).unwrap();
    subset.reverse();
    let b = distance_scores(&source, &subset, &ot, None).unwrap();
    for (k, v) in &a {
        assert!((v - b[k]).abs() <= 1e-12);
    }
}

#[test]
fn scores_match_oracle_mean() {
    use prefsel::ot::{cost_matrix, featurize_values};
    use prefsel::testing::brute_force_transport;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let ot = OtConfig {
        block_size: 2,
        ..Default::default()
    };
    for _ in 0..50 {
        let dim = 2 * rng.random_range(1..=4);
        let mut f = |id: &str| feature(id, (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect());
        let src = f("s");
        let subset = [f("a"), f("b"), f("c")];
        let got = distance_scores(std::slice::from_ref(&src), &subset, &ot, None).unwrap()["s"];
        let expected = subset
            .iter()
            .map(|t| {
                let (pa, pb) = (featurize_values(&src.values, 2).unwrap(), featurize_values(&t.values, 2).unwrap());
                brute_force_transport(pa.masses(), pb.masses(), &cost_matrix(&pa, &pb).unwrap().data)
            })
            .sum::<f64>()
            / 3.0;
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }
}
