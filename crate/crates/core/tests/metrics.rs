//! Metrics against a brute-force oracle written straight from the
//! definitions, plus property checks.

use imaginenet::metrics::{average_precision, macro_map, mmit_map, topk_accuracy, ScoreTable};
use imaginenet::nn::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rank of item `i`: one plus the number of items ahead of it (higher score,
/// or equal score at a lower index). Quadratic, no sorting.
fn brute_ap(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let rank = |i: usize| {
        1 + (0..scores.len())
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| labels[i] == 1.0).collect();
    if positives.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &i in &positives {
        let r = rank(i);
        let hits = positives.iter().filter(|&&j| rank(j) <= r).count();
        total += hits as f64 / r as f64;
    }
    Some(total / positives.len() as f64)
}

fn brute_macro(scores: &Matrix, labels: &Matrix) -> Option<f64> {
    let col = |m: &Matrix, c: usize| (0..m.rows()).map(|r| m[(r, c)]).collect::<Vec<_>>();
    let aps: Vec<f64> = (0..scores.cols())
        .filter_map(|c| brute_ap(&col(scores, c), &col(labels, c)))
        .collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

fn brute_mmit(scores: &Matrix, labels: &Matrix) -> Option<f64> {
    let mut total = 0.0;
    for r in 0..scores.rows() {
        total += brute_ap(scores.row(r), labels.row(r))?;
    }
    (scores.rows() > 0).then(|| total / scores.rows() as f64)
}

/// Random table; scores quantised to a few levels so ties are common.
fn random_table(rng: &mut ChaCha8Rng, n: usize, c: usize) -> (Matrix, Matrix) {
    let scores = (0..n * c).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
    let mut labels: Vec<f64> = (0..n * c).map(|_| rng.random_bool(0.35) as u8 as f64).collect();
    // every row keeps at least one positive
    for r in 0..n {
        if labels[r * c..(r + 1) * c].iter().all(|&l| l == 0.0) {
            labels[r * c + rng.random_range(0..c)] = 1.0;
        }
    }
    (Matrix::from_vec(n, c, scores).unwrap(), Matrix::from_vec(n, c, labels).unwrap())
}

#[test]
fn hand_case_is_exact() {
    let ap = average_precision(&[0.9, 0.8, 0.1], &[1.0, 0.0, 1.0]).unwrap();
    assert_eq!(ap, (1.0 + 2.0 / 3.0) / 2.0);
    assert!((ap - 0.833_333_333_333_333_4).abs() < 1e-15);
}

#[test]
fn both_map_variants_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..200 {
        let n = rng.random_range(1..=20);
        let c = rng.random_range(1..=6);
        let (s, l) = random_table(&mut rng, n, c);
        let table = ScoreTable::new(s.clone(), l.clone()).unwrap();
        let fast = macro_map(&table).ok();
        let slow = brute_macro(&s, &l);
        match (fast, slow) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "trial {trial}: {a} vs {b}"),
            (a, b) => assert_eq!(a, b, "trial {trial}"),
        }
        let a = mmit_map(&table).unwrap();
        let b = brute_mmit(&s, &l).unwrap();
        assert!((a - b).abs() <= 1e-12, "trial {trial}: {a} vs {b}");
    }
}

#[test]
fn wide_tables_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (s, l) = random_table(&mut rng, 50, 8);
        let table = ScoreTable::new(s.clone(), l.clone()).unwrap();
        // summation order differs, so allow for the last ulp
        assert!((macro_map(&table).unwrap() - brute_macro(&s, &l).unwrap()).abs() <= 1e-14);
        assert!((mmit_map(&table).unwrap() - brute_mmit(&s, &l).unwrap()).abs() <= 1e-14);
    }
}

#[test]
fn random_scores_hit_k_over_c() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (n, c) = (10_000, 6);
    let scores = (0..n * c).map(|_| rng.random::<f64>()).collect();
    let mut labels = vec![0.0; n * c];
    for r in 0..n {
        labels[r * c + rng.random_range(0..c)] = 1.0;
    }
    let table = ScoreTable::new(
        Matrix::from_vec(n, c, scores).unwrap(),
        Matrix::from_vec(n, c, labels).unwrap(),
    )
    .unwrap();
    for k in 1..=c {
        let acc = topk_accuracy(&table, k).unwrap();
        assert!((acc - k as f64 / c as f64).abs() < 0.05, "k={k}: {acc}");
    }
}

fn ap_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(prop::bool::ANY, n),
        )
            .prop_filter_map("needs a positive", |(s, l)| {
                l.iter().any(|&b| b).then(|| (s, l.into_iter().map(|b| b as u8 as f64).collect()))
            })
    })
}

proptest! {
    #[test]
    fn ap_is_a_probability((scores, labels) in ap_case()) {
        let ap = average_precision(&scores, &labels).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0);
        prop_assert!((ap - brute_ap(&scores, &labels).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn raising_a_positive_never_hurts((scores, labels) in ap_case(), pick in any::<prop::sample::Index>(), bump in 0.0f64..1.0) {
        let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1.0).collect();
        let i = positives[pick.index(positives.len())];
        let before = average_precision(&scores, &labels).unwrap();
        let mut raised = scores.clone();
        raised[i] += bump;
        let after = average_precision(&raised, &labels).unwrap();
        prop_assert!(after >= before - 1e-15);
    }

    #[test]
    fn positives_on_top_score_one((scores, labels) in ap_case()) {
        let perfect: Vec<f64> = scores.iter().zip(&labels).map(|(s, l)| s + 2.0 * l).collect();
        prop_assert_eq!(average_precision(&perfect, &labels).unwrap(), 1.0);
    }

    #[test]
    fn top_c_is_always_correct(n in 1usize..20, c in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = (0..n * c).map(|_| rng.random::<f64>()).collect();
        let mut labels = vec![0.0; n * c];
        for r in 0..n {
            labels[r * c + rng.random_range(0..c)] = 1.0;
        }
        let table = ScoreTable::new(
            Matrix::from_vec(n, c, scores).unwrap(),
            Matrix::from_vec(n, c, labels).unwrap(),
        ).unwrap();
        prop_assert_eq!(topk_accuracy(&table, c).unwrap(), 1.0);
    }
}
