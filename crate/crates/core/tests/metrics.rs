use glance_core::metrics::{
    confusion_matrix, macro_auc, mean_std, paired_t_test_one_tailed, roc_auc_binary, student_t_upper_tail, ReportTable,
    ScoredPredictions,
};
use glance_core::{metrics::evaluate, Error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mann-Whitney count over every positive/negative pair, ties worth one half.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let (mut np, mut nn) = (0usize, 0usize);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            np += 1;
        } else {
            nn += 1;
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / (np as f64 * nn as f64)
}

/// Random case with both classes present; scores drawn from a small grid so ties are common.
fn random_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.gen_range(2..=1000);
    let levels = rng.gen_range(2..=50);
    let rate = rng.gen_range(0.05..0.95);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(rate)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&l| {
            let shift = if l { rng.gen_range(0..levels / 2 + 1) } else { 0 };
            ((rng.gen_range(0..levels) + shift) as f64) / levels as f64
        })
        .collect();
    (scores, labels)
}

#[test]
fn sorted_auc_matches_pairwise_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let (s, l) = random_case(&mut rng);
        let fast = roc_auc_binary(&s, &l).unwrap();
        let slow = pairwise_auc(&s, &l);
        assert_eq!(fast.to_bits(), slow.to_bits(), "case {case}: {fast} vs {slow}");
    }
}

#[test]
fn hand_case() {
    let auc = roc_auc_binary(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
    assert_eq!(auc, 0.75);
}

#[test]
fn single_class_is_undefined() {
    assert!(matches!(roc_auc_binary(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedAuc(_))));
    assert!(matches!(roc_auc_binary(&[0.1, 0.2], &[false, false]), Err(Error::UndefinedAuc(_))));
}

fn case_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..20, any::<bool>()), 2..200).prop_map(|v| {
        let scores: Vec<f64> = v.iter().map(|(s, _)| *s as f64 / 20.0).collect();
        let mut labels: Vec<bool> = v.iter().map(|(_, l)| *l).collect();
        labels[0] = true;
        labels[1] = false;
        (scores, labels)
    })
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_maps((s, l) in case_strategy()) {
        let base = roc_auc_binary(&s, &l).unwrap();
        let mapped: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
        prop_assert_eq!(roc_auc_binary(&mapped, &l).unwrap(), base);
    }

    #[test]
    fn flipping_labels_complements_auc((s, l) in case_strategy()) {
        let flipped: Vec<bool> = l.iter().map(|x| !x).collect();
        let a = roc_auc_binary(&s, &l).unwrap();
        let b = roc_auc_binary(&s, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_is_in_unit_interval((s, l) in case_strategy()) {
        let a = roc_auc_binary(&s, &l).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

/// 12 rows over 3 classes; per-class one-vs-rest AUCs computed with the pairwise oracle.
#[test]
fn macro_auc_matches_per_class_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n_classes = 3;
    let truth: Vec<usize> = (0..12).map(|i| i % n_classes).collect();
    let mut probs = Vec::new();
    for _ in 0..12 {
        let raw: Vec<f64> = (0..n_classes).map(|_| rng.gen_range(0.0..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        probs.extend(raw.iter().map(|r| r / sum));
    }
    let preds = ScoredPredictions::new(n_classes, probs.clone(), truth.clone(), (0..12).collect()).unwrap();
    let m = macro_auc(&preds).unwrap();
    let mut expected = 0.0;
    for c in 0..n_classes {
        let s: Vec<f64> = (0..12).map(|i| probs[i * n_classes + c]).collect();
        let l: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        let a = pairwise_auc(&s, &l);
        assert!((m.per_class[c].unwrap() - a).abs() < 1e-15);
        expected += a / n_classes as f64;
    }
    assert!((m.macro_avg - expected).abs() < 1e-15);
    assert!(m.excluded.is_empty());
}

#[test]
fn macro_auc_excludes_absent_classes() {
    // Class 2 never occurs in the truth, so it is dropped from the average.
    let probs = vec![0.7, 0.2, 0.1, 0.2, 0.7, 0.1, 0.6, 0.3, 0.1, 0.4, 0.5, 0.1];
    let preds = ScoredPredictions::new(3, probs, vec![0, 1, 0, 1], vec![0, 1, 2, 3]).unwrap();
    let m = macro_auc(&preds).unwrap();
    assert_eq!(m.excluded, vec![2]);
    assert!(m.per_class[2].is_none());
    assert_eq!(m.macro_avg, 1.0);
}

#[test]
fn confusion_matches_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n_classes = 4;
    let n = 200;
    let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n_classes)).collect();
    let mut probs: Vec<f64> = (0..n * n_classes).map(|_| rng.gen_range(0.01..1.0)).collect();
    for row in probs.chunks_mut(n_classes) {
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= sum);
    }
    let preds = ScoredPredictions::new(n_classes, probs.clone(), truth.clone(), (0..n as u64).collect()).unwrap();
    let cm = confusion_matrix(&preds);
    let mut counts = vec![vec![0usize; n_classes]; n_classes];
    for i in 0..n {
        let row = &probs[i * n_classes..(i + 1) * n_classes];
        let mut best = 0;
        for c in 1..n_classes {
            if row[c] > row[best] {
                best = c;
            }
        }
        counts[truth[i]][best] += 1;
    }
    for t in 0..n_classes {
        let total: usize = counts[t].iter().sum();
        assert_eq!(cm.counts[t], total);
        for p in 0..n_classes {
            assert!((cm.rows[t][p] - counts[t][p] as f64 / total as f64).abs() < 1e-15);
        }
        assert!((cm.rows[t].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn constant_predictor_fills_one_column() {
    let n = 12;
    let probs: Vec<f64> = (0..n).flat_map(|_| [0.1, 0.6, 0.3]).collect();
    let truth: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let preds = ScoredPredictions::new(3, probs, truth, (0..n as u64).collect()).unwrap();
    let report = evaluate(&preds).unwrap();
    for row in &report.confusion.rows {
        assert_eq!(row, &vec![0.0, 1.0, 0.0]);
    }
    // Identical scores everywhere: every class AUC is exactly one half.
    assert_eq!(report.auc.macro_avg, 0.5);
}

/// Exact finite series for the two-sided Student-t CDF at integer df.
fn t_upper_tail_series(t: f64, df: usize) -> f64 {
    let theta = (t / (df as f64).sqrt()).atan();
    let (s, c) = (theta.sin(), theta.cos());
    let a = if df % 2 == 1 {
        let mut sum = 0.0;
        if df > 1 {
            let mut term = c;
            sum = term;
            let mut k = 2;
            while k < df - 1 {
                term *= c * c * k as f64 / (k + 1) as f64;
                sum += term;
                k += 2;
            }
        }
        2.0 / std::f64::consts::PI * (theta + s * sum)
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1;
        while k < df - 1 {
            term *= c * c * k as f64 / (k + 1) as f64;
            sum += term;
            k += 2;
        }
        s * sum
    };
    (1.0 - a) / 2.0
}

#[test]
fn t_tail_matches_series_oracle() {
    for df in 1..=30 {
        for &t in &[0.0, 0.1, 0.5, 1.0, 1.7, 2.5, 4.2426, 8.0, 20.0] {
            let got = student_t_upper_tail(t, df as f64);
            let want = t_upper_tail_series(t, df);
            assert!((got - want).abs() < 1e-6, "df {df} t {t}: {got} vs {want}");
            let neg = student_t_upper_tail(-t, df as f64);
            assert!((neg - (1.0 - want)).abs() < 1e-6);
        }
    }
}

#[test]
fn paired_t_test_reference_case() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [0.0; 5];
    let r = paired_t_test_one_tailed(&a, &b).unwrap();
    assert!((r.t - 18f64.sqrt()).abs() < 1e-12);
    assert_eq!(r.df, 4);
    let oracle = t_upper_tail_series(18f64.sqrt(), 4);
    assert!((r.p - oracle).abs() < 1e-9);
    assert!((r.p - 0.0066).abs() < 1e-4);
}

#[test]
fn paired_t_test_zero_difference() {
    let a = [0.9, 0.8, 0.85];
    let r = paired_t_test_one_tailed(&a, &a).unwrap();
    assert_eq!(r.p, 0.5);
    assert!(r.degenerate.is_some());
}

#[test]
fn swapping_samples_mirrors_the_test() {
    let a = [0.91, 0.88, 0.93, 0.90, 0.95];
    let b = [0.90, 0.89, 0.91, 0.87, 0.92];
    let ab = paired_t_test_one_tailed(&a, &b).unwrap();
    let ba = paired_t_test_one_tailed(&b, &a).unwrap();
    assert!((ab.t + ba.t).abs() < 1e-12);
    assert!((ab.p + ba.p - 1.0).abs() < 1e-12);
}

#[test]
fn t_test_rejects_mismatched_or_short_input() {
    assert!(paired_t_test_one_tailed(&[1.0, 2.0], &[1.0]).is_err());
    assert!(paired_t_test_one_tailed(&[1.0], &[0.0]).is_err());
}

#[test]
fn mean_and_sample_sd() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
}

#[test]
fn report_table_round_trips() {
    let mut table = ReportTable::new("abc123");
    for seed in 0..3u64 {
        let probs: Vec<f64> = (0..12).flat_map(|i| if i % 3 == (i + seed as usize) % 2 { [0.8, 0.1, 0.1] } else { [0.1, 0.1, 0.8] }).collect();
        let truth: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let preds = ScoredPredictions::new(3, probs, truth, (0..12).collect()).unwrap();
        table.add_run("exp", "standard", 1.0, seed, "test", &evaluate(&preds).unwrap());
    }
    table.add_aggregates();
    let text = table.to_tsv();
    assert!(text.starts_with("# config_hash=abc123\n"));
    let back = ReportTable::from_tsv(&text).unwrap();
    assert_eq!(back.rows, table.rows);
    assert_eq!(back.config_hash, "abc123");
    let by_seed = back.macro_by_seed("exp", "test");
    assert_eq!(by_seed.iter().map(|(s, _)| *s).collect::<Vec<_>>(), vec![0, 1, 2]);
}
