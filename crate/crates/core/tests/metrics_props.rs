use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visagent_core::domain::{Label, Prediction};
use visagent_core::eval::{compute_metrics, MetricsReport};

struct Brute {
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    auc: Option<f64>,
}

// O(n^2) pairwise AUC and direct confusion counting.
fn brute(pairs: &[(Label, Prediction)]) -> Brute {
    let (mut tp, mut fp, mut tn, mut fnn) = (0usize, 0usize, 0usize, 0usize);
    for (t, p) in pairs {
        match (*t == Label::Positive, p.label == Label::Positive) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fnn += 1,
        }
    }
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fnn);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let pos: Vec<f64> = pairs.iter().filter(|(t, _)| *t == Label::Positive).map(|(_, p)| p.score).collect();
    let neg: Vec<f64> = pairs.iter().filter(|(t, _)| *t == Label::Negative).map(|(_, p)| p.score).collect();
    let auc = if pos.is_empty() || neg.is_empty() {
        None
    } else {
        let mut wins = 0.0;
        for &a in &pos {
            for &b in &neg {
                if a > b {
                    wins += 1.0;
                } else if a == b {
                    wins += 0.5;
                }
            }
        }
        Some(wins / (pos.len() * neg.len()) as f64)
    };
    Brute {
        accuracy: div(tp + tn, pairs.len()),
        precision,
        recall,
        f1,
        auc,
    }
}

fn random_set(rng: &mut ChaCha8Rng) -> Vec<(Label, Prediction)> {
    let n = rng.random_range(1..=200);
    // a coarse grid for some sets forces many tied scores
    let grid = rng.random_bool(0.5).then(|| rng.random_range(2..=10));
    (0..n)
        .map(|_| {
            let truth = if rng.random_bool(0.4) { Label::Positive } else { Label::Negative };
            let score = match grid {
                Some(g) => rng.random_range(0..=g) as f64 / g as f64,
                None => rng.random::<f64>(),
            };
            let label = if rng.random_bool(0.8) {
                if score > 0.5 { Label::Positive } else { Label::Negative }
            } else if rng.random_bool(0.5) {
                Label::Positive
            } else {
                Label::Negative
            };
            (truth, Prediction::from_score(label, score).unwrap())
        })
        .collect()
}

fn check(m: &MetricsReport, b: &Brute) {
    assert_eq!(m.accuracy, b.accuracy);
    assert_eq!(m.precision, b.precision);
    assert_eq!(m.recall, b.recall);
    assert_eq!(m.f1, b.f1);
    match (m.auc, b.auc) {
        (None, None) => {}
        (Some(a), Some(o)) => assert!((a - o).abs() <= 1e-12, "auc {a} vs {o}"),
        other => panic!("auc definedness differs: {other:?}"),
    }
}

#[test]
fn matches_brute_force_oracle_on_1000_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let set = random_set(&mut rng);
        let m = compute_metrics(&set).unwrap();
        check(&m, &brute(&set));
        assert_eq!(m.n, set.len());
        assert_eq!(m.confusion.total(), set.len());
    }
}

#[test]
fn all_negative_predictions_give_zero_f1() {
    let mut set = Vec::new();
    for i in 0..10 {
        let truth = if i < 3 { Label::Positive } else { Label::Negative };
        set.push((truth, Prediction::from_score(Label::Negative, 0.1 + i as f64 * 0.01).unwrap()));
    }
    let m = compute_metrics(&set).unwrap();
    assert_eq!(m.f1, 0.0);
    assert_eq!(m.precision, 0.0);
    assert_eq!(m.recall, 0.0);
    assert_eq!(m.accuracy, 0.7);
    check(&m, &brute(&set));
}

#[test]
fn empty_input_is_an_error() {
    assert!(compute_metrics(&[]).is_err());
}

#[test]
fn single_class_truth_has_no_auc() {
    let set = vec![
        (Label::Positive, Prediction::from_score(Label::Positive, 0.9).unwrap()),
        (Label::Positive, Prediction::from_score(Label::Negative, 0.2).unwrap()),
    ];
    assert_eq!(compute_metrics(&set).unwrap().auc, None);
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_transform(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng);
        let squashed: Vec<_> = set
            .iter()
            .map(|(t, p)| (*t, Prediction::from_score(p.label, p.score * p.score * 0.5 + 0.1).unwrap()))
            .collect();
        let a = compute_metrics(&set).unwrap();
        let b = compute_metrics(&squashed).unwrap();
        match (a.auc, b.auc) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
        prop_assert_eq!(a.confusion, b.confusion);
    }

    #[test]
    fn permutation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(&mut rng);
        let mut rev = set.clone();
        rev.reverse();
        let a = compute_metrics(&set).unwrap();
        let b = compute_metrics(&rev).unwrap();
        prop_assert_eq!(a.confusion, b.confusion);
        prop_assert_eq!(a.accuracy, b.accuracy);
        prop_assert_eq!(a.f1, b.f1);
        match (a.auc, b.auc) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
    }
}
