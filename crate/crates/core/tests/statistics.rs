use diffaudit_core::attacks::*;
use diffaudit_core::evaluation::*;
use diffaudit_core::image::{Image, Shape};
use diffaudit_core::occlusion::PixelMask;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook statistics written independently of the library: sums of
/// powers about the mean, computed pairwise-free in a single pass each.
struct Oracle {
    mean: f64,
    std: f64,
    cv: f64,
    skew: f64,
    delta: f64,
}

fn oracle(e: &[f64]) -> Oracle {
    let n = e.len() as f64;
    let mut total = 0.0;
    for v in e {
        total += v;
    }
    let mean = total / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    for v in e {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    let std = m2.sqrt();
    let skew = if std == 0.0 { 0.0 } else { m3 / (std * std * std) };
    let mut delta = 0.0;
    for i in 1..e.len() {
        delta += (e[i] - e[i - 1]).abs();
    }
    delta /= n - 1.0;
    Oracle {
        mean,
        std,
        cv: if mean == 0.0 { 0.0 } else { std / mean },
        skew,
        delta,
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn random_errors(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.random_range(-3.0..1.0));
    (0..n).map(|_| scale * rng.random::<f64>().powi(rng.random_range(1..4))).collect()
}

#[test]
fn trajectory_stats_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for case in 0..1000 {
        let n = if case % 10 == 0 { 50 } else { rng.random_range(2..80) };
        let e = random_errors(&mut rng, n);
        let traj = LossTrajectory::new("m", e.iter().enumerate().map(|(i, &v)| (n - i, v)).collect()).unwrap();
        let s = trajectory_stats(&traj);
        let o = oracle(&e);
        assert!(close(s.mean, o.mean, 1e-9), "case {case} mean");
        assert!(close(s.std, o.std, 1e-9), "case {case} std");
        assert!(close(s.cv, o.cv, 1e-9), "case {case} cv");
        assert!(close(s.skewness, o.skew, 1e-9), "case {case} skew {} {}", s.skewness, o.skew);
        assert!(close(s.mean_rate_of_change, o.delta, 1e-9), "case {case} delta");
    }
}

#[test]
fn confidence_and_identity_scores_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..1000 {
        let k = rng.random_range(1..15);
        let stats: Vec<MaskStats> = (0..k)
            .map(|_| MaskStats::from_values(&random_errors(&mut rng, 25)))
            .collect();
        let mut acc = 0.0;
        for s in &stats {
            acc += s.cv + s.skewness.abs() + s.mean_rate_of_change;
        }
        let want = 1.0 / (1.0 + acc / k as f64);
        assert!(close(confidence_score(&stats), want, 1e-9));

        let (mu, sigma) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        let want = std::f64::consts::E.powf(-(mu + sigma));
        assert!(close(identity_score(mu, sigma), want, 1e-9));
    }
}

/// All-pairs Mann–Whitney statistic.
fn auc_oracle(scores: &[LabeledScore]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for p in scores.iter().filter(|s| s.member) {
        for n in scores.iter().filter(|s| !s.member) {
            pairs += 1.0;
            if p.score > n.score {
                wins += 1.0;
            } else if p.score == n.score {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn random_labeled(rng: &mut ChaCha8Rng, n: usize) -> Vec<LabeledScore> {
    let coarse = rng.random_bool(0.5);
    let mut v: Vec<LabeledScore> = (0..n)
        .map(|i| {
            let s = if coarse {
                rng.random_range(0..5) as f64 / 4.0
            } else {
                rng.random::<f64>()
            };
            LabeledScore::new(s, rng.random_bool(0.5), format!("q{i}"))
        })
        .collect();
    v[0].member = true;
    v[1].member = false;
    v
}

#[test]
fn auc_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for case in 0..1000 {
        let n = if case == 0 { 200 } else { rng.random_range(2..120) };
        let scores = random_labeled(&mut rng, n);
        let got = auc_roc(&scores).unwrap();
        let want = auc_oracle(&scores);
        assert!((got - want).abs() < 1e-12, "case {case}: {got} vs {want}");
    }
}

#[test]
fn metrics_on_a_hand_computed_set() {
    // threshold 0.5: TP = 3 (0.9, 0.7, 0.5), FN = 2 (0.4, 0.1),
    // FP = 2 (0.8, 0.6), TN = 3 (0.3, 0.2, 0.0).
    let member = [0.9, 0.7, 0.5, 0.4, 0.1];
    let other = [0.8, 0.6, 0.3, 0.2, 0.0];
    let mut scores: Vec<LabeledScore> = member.iter().map(|&s| LabeledScore::new(s, true, "m")).collect();
    scores.extend(other.iter().map(|&s| LabeledScore::new(s, false, "n")));
    let m = classification_metrics(&scores, 0.5).unwrap();
    assert_eq!(m.confusion, Confusion { tp: 3, fp: 2, tn: 3, fn_: 2 });
    assert_eq!(m.accuracy, 0.6);
    assert_eq!(m.precision, 0.6);
    assert_eq!(m.recall, 0.6);
    // Pairs won: 0.9 beats 5, 0.7 beats 4, 0.5 beats 3, 0.4 beats 3, 0.1 beats 1.
    assert_eq!(auc_roc(&scores).unwrap(), 16.0 / 25.0);
}

#[test]
fn mask_error_normalization_scales_by_sqrt_two_over_two() {
    let shape = Shape::new(2, 4, 1);
    let x = Image::new(shape, vec![0.3, 0.8, 0.0, 0.0, 0.3, 0.8, 0.0, 0.0]).unwrap();
    let recon = Image::new(shape, vec![0.1, 0.5, 0.0, 0.0, 0.1, 0.5, 0.0, 0.0]).unwrap();
    let top = PixelMask::from_bits(2, 4, vec![true, true, false, false, false, false, false, false], "top").unwrap();
    let both = PixelMask::from_bits(2, 4, vec![true, true, false, false, true, true, false, false], "both").unwrap();
    let single = masked_error(&x, &recon, &top).unwrap();
    let double = masked_error(&x, &recon, &both).unwrap();
    assert!((double - single * 2f64.sqrt() / 2.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn metrics_are_permutation_invariant(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = random_labeled(&mut rng, n);
        let mut shuffled = scores.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        prop_assert_eq!(auc_roc(&scores).unwrap(), auc_roc(&shuffled).unwrap());
        prop_assert_eq!(
            classification_metrics(&scores, 0.5).unwrap(),
            classification_metrics(&shuffled, 0.5).unwrap()
        );
    }

    #[test]
    fn confidence_decreases_with_each_statistic(
        cv in 0.0f64..5.0, skew in -5.0f64..5.0, delta in 0.0f64..5.0, bump in 1e-6f64..2.0, which in 0usize..3,
    ) {
        let base = MaskStats { cv, skewness: skew, mean_rate_of_change: delta, ..MaskStats::ZERO };
        let mut more = base;
        match which {
            0 => more.cv += bump,
            // Push the skewness further from zero.
            1 => more.skewness += if skew >= 0.0 { bump } else { -bump },
            _ => more.mean_rate_of_change += bump,
        }
        let c0 = confidence_score(&[base]);
        let c1 = confidence_score(&[more]);
        prop_assert!(c0 > 0.0 && c0 <= 1.0);
        prop_assert!(c1 < c0);
    }

    #[test]
    fn identity_score_decreases_in_both_arguments(mu in 0.0f64..5.0, sigma in 0.0f64..5.0, bump in 1e-6f64..1.0) {
        let s = identity_score(mu, sigma);
        prop_assert!(s > 0.0 && s <= 1.0);
        prop_assert!(identity_score(mu + bump, sigma) < s);
        prop_assert!(identity_score(mu, sigma + bump) < s);
    }

    #[test]
    fn symmetric_sequences_have_zero_skew(half in prop::collection::vec(0.0f64..10.0, 1..20)) {
        let centre = 10.0;
        let mut e: Vec<f64> = half.iter().map(|v| centre + v).collect();
        e.extend(half.iter().map(|v| centre - v));
        let s = MaskStats::from_values(&e);
        prop_assert!(s.skewness.abs() < 1e-9);
        prop_assert!(s.mean_rate_of_change >= 0.0);
    }

    #[test]
    fn sorted_sum_ignores_order(mut v in prop::collection::vec(-1e6f64..1e6, 0..40), seed in any::<u64>()) {
        let a = sorted_sum(v.clone());
        use rand::seq::SliceRandom;
        v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a.to_bits(), sorted_sum(v).to_bits());
    }
}
