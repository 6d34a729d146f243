mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rqreg::eval::{evaluate, mae, norm_gini, positive_subset_metrics, spearman, xauc, xauc_exact, xauc_sampled};

fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // continuous draws are distinct with probability one
    (0..n).map(|_| rng.random_range(0.0..10.0)).collect()
}

fn tied(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| f64::from(rng.random_range(0..5u8))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn xauc_of_negated_predictions_is_complement(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, t) = (distinct(&mut rng, n), distinct(&mut rng, n));
        let neg: Vec<f64> = p.iter().map(|v| -v).collect();
        let sum = xauc_exact(&p, &t).unwrap() + xauc_exact(&neg, &t).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_metrics_ignore_positive_affine_maps(seed in any::<u64>(), n in 2usize..40, a in 0.01f64..100.0, b in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = tied(&mut rng, n);
        let t = tied(&mut rng, n);
        let q: Vec<f64> = p.iter().map(|v| a * v + b).collect();
        prop_assert_eq!(xauc_exact(&p, &t).unwrap(), xauc_exact(&q, &t).unwrap());
        prop_assert_eq!(spearman(&p, &t).unwrap(), spearman(&q, &t).unwrap());
        prop_assert_eq!(norm_gini(&p, &t).unwrap(), norm_gini(&q, &t).unwrap());
    }

    #[test]
    fn metrics_stay_in_range(seed in any::<u64>(), n in 2usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = tied(&mut rng, n);
        let t: Vec<f64> = tied(&mut rng, n).into_iter().map(|v| (v - 1.0).max(0.0)).collect();
        let r = evaluate(&p, &t, None, seed).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.xauc));
        for v in [r.spearman_rho, r.norm_gini, r.norm_gini_pos, r.spearman_rho_pos] {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
        }
        prop_assert!(r.n_positive <= r.n_samples);
        prop_assert_eq!(r.xauc_pairs_used, (n * (n - 1)) as u64);
    }

    #[test]
    fn perfect_ordering_has_unit_gini(seed in any::<u64>(), n in 2usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = tied(&mut rng, n);
        // a constant truth has zero ideal Gini, so the ratio is undefined
        prop_assume!(t.iter().any(|&v| v != t[0]));
        let p: Vec<f64> = t.iter().enumerate().map(|(i, v)| v * 1000.0 - i as f64 * 1e-3).collect();
        let g = norm_gini(&p, &t).unwrap();
        prop_assert!(g.defined);
        prop_assert!((g.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mae_is_permutation_invariant(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, t) = (distinct(&mut rng, n), distinct(&mut rng, n));
        let (rp, rt): (Vec<f64>, Vec<f64>) = p.iter().rev().zip(t.iter().rev()).map(|(a, b)| (*a, *b)).unzip();
        prop_assert!((mae(&p, &t).unwrap() - mae(&rp, &rt).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn positive_subset_equals_filtered_recomputation(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = distinct(&mut rng, n);
        let t: Vec<f64> = tied(&mut rng, n).into_iter().map(|v| (v - 2.0).max(0.0)).collect();
        let (fp, ft): (Vec<f64>, Vec<f64>) = p.iter().zip(&t).filter(|(_, &y)| y > 0.0).map(|(a, b)| (*a, *b)).unzip();
        let (g, s) = positive_subset_metrics(&p, &t).unwrap();
        if ft.len() < 2 {
            prop_assert!(!g.defined && !s.defined);
        } else {
            prop_assert_eq!(g, norm_gini(&fp, &ft).unwrap());
            prop_assert_eq!(s, spearman(&fp, &ft).unwrap());
        }
    }
}

#[test]
fn sampled_xauc_is_within_binomial_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pairs = 20_000;
    let bound = 3.0 * (0.25f64 / pairs as f64).sqrt();
    for trial in 0..20 {
        let n = 400;
        let t = distinct(&mut rng, n);
        let p: Vec<f64> = t.iter().map(|v| v + rng.random_range(-4.0..4.0)).collect();
        let exact = xauc_exact(&p, &t).unwrap();
        let sampled = xauc_sampled(&p, &t, pairs, trial).unwrap();
        assert!((exact - sampled).abs() <= bound, "trial {trial}: exact {exact} sampled {sampled}");
    }
}

#[test]
fn large_inputs_switch_to_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = distinct(&mut rng, 10_001);
    let (v, used) = xauc(&t, &t, Some(5_000), 9).unwrap();
    assert_eq!(used, 5_000);
    assert!(v > 0.99);
    let r = evaluate(&t, &t, Some(5_000), 9).unwrap();
    assert!(!r.xauc_exact);
    assert_eq!(r.xauc_seed, 9);
}

#[test]
fn positive_subset_boundaries() {
    let p = [0.3, 0.1, 0.9, 0.4];
    let t = [0.0, 0.0, 2.0, 1.0];
    let (g, s) = positive_subset_metrics(&p, &t).unwrap();
    assert_eq!(g, norm_gini(&[0.9, 0.4], &[2.0, 1.0]).unwrap());
    assert_eq!(s.value, 1.0);
    let all = [1.0, 2.0, 3.0, 4.0];
    let (g, s) = positive_subset_metrics(&p, &all).unwrap();
    assert_eq!(g, norm_gini(&p, &all).unwrap());
    assert_eq!(s, spearman(&p, &all).unwrap());
}

#[test]
fn gini_hand_case_matches_lorenz_oracle() {
    let t = [0.0, 0.0, 1.0, 3.0];
    let p = [0.1, 0.2, 0.3, 0.4];
    let g = norm_gini(&p, &t).unwrap();
    assert!((g.value - common::brute_norm_gini(&p, &t).unwrap()).abs() < 1e-15);
    assert!((g.value - 1.0).abs() < 1e-12);
    let constant = norm_gini(&p, &[2.0; 4]).unwrap();
    assert!(!constant.defined && constant.value == 0.0);
}

#[test]
fn report_uses_fixed_key_names() {
    let r = evaluate(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0], None, 0).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    for key in [
        "mae",
        "xauc",
        "spearman_rho",
        "norm_gini",
        "norm_gini_pos",
        "spearman_rho_pos",
        "n_samples",
        "n_positive",
        "xauc_pairs_used",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}
