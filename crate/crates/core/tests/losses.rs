mod common;

use proptest::prelude::*;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rqreg::losses::{
    huber, huber_grad, loss_graph, nll_loss, reg_loss, rnc_loss, rnc_value, ss_probability, total_loss, Batch,
    LossConfig, Similarity,
};
use rqreg::model::{FeedMask, ModelConfig, ModelParams, StepVars};
use rqreg::numerics::{Graph, Tensor, Var};
use rqreg::quantizer::{build_codebook, ClusterMethod, Codebook};

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Labels with frequent ties.
fn labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| f64::from(rng.random_range(0..4u8))).collect()
}

/// Step outputs whose only live fields are `log_probs` and `value`.
fn fake_step(log_probs: Var, value: Var) -> StepVars {
    StepVars {
        logits: log_probs,
        probs: log_probs,
        log_probs,
        value,
        mixture: log_probs,
        h: log_probs,
        c: log_probs,
    }
}

fn tiny_setup(seed: u64, batch: usize) -> (ModelParams<f64>, Codebook, Vec<f64>, Vec<f64>) {
    let cfg = ModelConfig {
        feature_dim: 3,
        embed_dim: 4,
        hidden_dim: 6,
        levels: 3,
        per_level_size: 3,
        enc_hidden: 5,
        pred_hidden: 5,
        reg_hidden: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(StandardNormal).exp() * 3.0).collect();
    let cb = build_codebook(&train, 3, 3, ClusterMethod::Kmeans).unwrap();
    let p = ModelParams::<f64>::init(&cfg, seed).unwrap();
    let y: Vec<f64> = train[..batch].to_vec();
    let x = normal_vec(&mut rng, batch * 3);
    (p, cb, x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rnc_matches_triple_enumeration(seed in any::<u64>(), n in 1usize..7, dim in 1usize..4, cosine in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = normal_vec(&mut rng, n * dim);
        let y = labels(&mut rng, n);
        let tau = rng.random_range(0.5..3.0);
        let sim = if cosine { Similarity::Cosine } else { Similarity::NegEuclidean };
        let got = rnc_value(&emb, dim, &y, tau, sim);
        let want = common::brute_rnc(&emb, dim, &y, tau, cosine);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        prop_assert!(got >= -1e-15);

        let mut g = Graph::<f64>::new();
        let e = g.param(Tensor::from_f64(&[n, dim], &emb).unwrap());
        let l = rnc_loss(&mut g, e, &y, tau, sim).unwrap();
        prop_assert!((g.value(l).item() - got).abs() <= 1e-12 * got.abs().max(1.0));
    }

    #[test]
    fn rnc_is_translation_and_permutation_invariant(seed in any::<u64>(), n in 2usize..8, dim in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = normal_vec(&mut rng, n * dim);
        let y = labels(&mut rng, n);
        let base = rnc_value(&emb, dim, &y, 2.0, Similarity::NegEuclidean);
        let shift = normal_vec(&mut rng, dim);
        let moved: Vec<f64> = emb.iter().enumerate().map(|(i, v)| v + 3.0 * shift[i % dim]).collect();
        let after = rnc_value(&moved, dim, &y, 2.0, Similarity::NegEuclidean);
        prop_assert!((base - after).abs() <= 1e-10 * base.max(1.0));

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pe: Vec<f64> = perm.iter().flat_map(|&i| emb[i * dim..(i + 1) * dim].to_vec()).collect();
        let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let permuted = rnc_value(&pe, dim, &py, 2.0, Similarity::NegEuclidean);
        prop_assert!((base - permuted).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn nll_gradient_is_softmax_minus_onehot(seed in any::<u64>(), b in 1usize..5, v in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = normal_vec(&mut rng, b * v);
        let gt: Vec<Vec<usize>> = (0..b).map(|_| vec![rng.random_range(0..v)]).collect();
        let mut g = Graph::<f64>::new();
        let logits = g.param(Tensor::from_f64(&[b, v], &z).unwrap());
        let lp = g.log_softmax(logits);
        let loss = nll_loss(&mut g, &[fake_step(lp, lp)], &gt).unwrap();
        let grad = g.backward(loss).get(logits).unwrap().clone();
        for r in 0..b {
            let row = &z[r * v..(r + 1) * v];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|x| (x - m).exp()).sum();
            for c in 0..v {
                let want = ((row[c] - m).exp() / s - f64::from(u8::from(c == gt[r][0]))) / b as f64;
                prop_assert!((grad.at(r, c) - want).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn total_loss_is_batch_permutation_invariant(seed in any::<u64>(), lambda2 in prop_oneof![Just(0.0), Just(0.1), Just(1.0)]) {
        let (p, cb, x, y) = tiny_setup(seed, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mask = FeedMask::from_fn(6, 3, |_, _| rng.random::<bool>());
        let cfg = LossConfig { lambda2, ..LossConfig::default() };
        let (a, _) = total_loss(&p, &Batch::new(&x, &y, &cb).unwrap(), &cfg, &mask).unwrap();
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng);
        let px: Vec<f64> = perm.iter().flat_map(|&i| x[i * 3..i * 3 + 3].to_vec()).collect();
        let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let pmask = FeedMask::from_fn(6, 3, |r, l| mask.get(perm[r], l));
        let (b, _) = total_loss(&p, &Batch::new(&px, &py, &cb).unwrap(), &cfg, &pmask).unwrap();
        prop_assert!((a.total - b.total).abs() <= 1e-12 * a.total.abs().max(1.0), "{} vs {}", a.total, b.total);
    }
}

#[test]
fn uniform_nll_over_145_codes() {
    let mut g = Graph::<f64>::new();
    let steps: Vec<StepVars> = (0..3)
        .map(|_| {
            let z = g.param(Tensor::zeros(&[2, 145]));
            let lp = g.log_softmax(z);
            fake_step(lp, lp)
        })
        .collect();
    let loss = nll_loss(&mut g, &steps, &[vec![0, 50, 100], vec![144, 7, 9]]).unwrap();
    assert!((g.value(loss).item() - 3.0 * 145f64.ln()).abs() < 1e-12);
    assert!((3.0 * 145f64.ln() - 14.93).abs() < 5e-3);
}

#[test]
fn certain_predictions_give_zero_nll() {
    let mut g = Graph::<f64>::new();
    let z = g.param(Tensor::from_f64(&[1, 3], &[1e3, 0.0, 0.0]).unwrap());
    let lp = g.log_softmax(z);
    let loss = nll_loss(&mut g, &[fake_step(lp, lp)], &[vec![0]]).unwrap();
    assert!(g.value(loss).item().abs() < 1e-300);
}

#[test]
fn raising_the_true_logit_lowers_nll() {
    let nll = |bump: f64| {
        let mut g = Graph::<f64>::new();
        let z = g.param(Tensor::from_f64(&[1, 4], &[0.3, -0.2 + bump, 0.9, 0.0]).unwrap());
        let lp = g.log_softmax(z);
        let loss = nll_loss(&mut g, &[fake_step(lp, lp)], &[vec![1]]).unwrap();
        g.value(loss).item()
    };
    assert!(nll(0.5) < nll(0.0) && nll(0.0) < nll(-0.5));
}

#[test]
fn reg_loss_hand_example() {
    let mut g = Graph::<f64>::new();
    let s1 = g.constant(Tensor::from_f64(&[1, 1], &[10.0]).unwrap());
    let s2 = g.constant(Tensor::from_f64(&[1, 1], &[-1.0]).unwrap());
    let steps = [fake_step(s1, s1), fake_step(s2, s2)];
    let l = reg_loss(&mut g, &steps, &[9.4], &[vec![10.0, -1.0]], 2.0).unwrap();
    assert!((g.value(l).item() - 0.08).abs() < 1e-12);
    assert!((huber(9.4, 9.0, 2.0) - 0.08).abs() < 1e-12);
}

#[test]
fn single_level_reg_loss_doubles_huber() {
    let mut g = Graph::<f64>::new();
    let s = g.constant(Tensor::from_f64(&[2, 1], &[1.0, 7.5]).unwrap());
    let l = reg_loss(&mut g, &[fake_step(s, s)], &[4.0, 2.0], &[vec![4.0], vec![2.0]], 2.0).unwrap();
    let want = (2.0 * huber(4.0, 1.0, 2.0) + 2.0 * huber(2.0, 7.5, 2.0)) / 2.0;
    assert!((g.value(l).item() - want).abs() < 1e-12);
}

#[test]
fn zero_weights_leave_only_nll() {
    let (p, cb, x, y) = tiny_setup(4, 5);
    let batch = Batch::new(&x, &y, &cb).unwrap();
    let mask = FeedMask::filled(5, 3, true);
    let cfg = LossConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..LossConfig::default()
    };
    let (parts, _) = total_loss(&p, &batch, &cfg, &mask).unwrap();
    assert_eq!(parts.total, parts.l_gen);

    let mut g = Graph::<f64>::new();
    let mv = p.attach(&mut g, true);
    let lv = loss_graph(&mut g, &p, &mv, &batch, &cfg, &mask).unwrap();
    let x = g.constant(batch.x.clone());
    let steps = rqreg::model::forward_teacher_forced(&mut g, &p.config, &mv, x, Some(&batch.codes), &mask).unwrap();
    let alone = nll_loss(&mut g, &steps, &batch.codes).unwrap();
    assert_eq!(g.value(lv.total).item(), g.value(alone).item());
}

#[test]
fn equal_labels_keep_the_loss_finite() {
    let (p, cb, x, _) = tiny_setup(8, 6);
    let y = vec![2.5; 6];
    let batch = Batch::new(&x, &y, &cb).unwrap();
    let (parts, grads) = total_loss(&p, &batch, &LossConfig::default(), &FeedMask::filled(6, 3, false)).unwrap();
    assert!(parts.all_finite());
    assert!(grads.iter().all(|t| t.all_finite()));
    // every denominator spans all other samples, so Jensen bounds the loss below
    assert!(parts.l_rnc >= 5f64.ln() - 1e-12);
}

#[test]
fn rnc_closed_forms() {
    assert_eq!(rnc_value(&[0.3, -1.0], 1, &[1.0, 5.0], 2.0, Similarity::NegEuclidean), 0.0);
    let b = 5;
    let v = rnc_value(&vec![0.7; b * 2], 2, &[3.0; 5], 2.0, Similarity::NegEuclidean);
    assert!((v - ((b - 1) as f64).ln()).abs() < 1e-12);
    assert_eq!(rnc_value(&[0.1, 0.2], 2, &[1.0], 2.0, Similarity::Cosine), 0.0);
}

#[test]
fn schedule_is_strictly_decreasing_in_unit_interval() {
    let mut prev = 1.0;
    for t in 0..60 {
        let p = ss_probability(t as f64, 0.1, 10.0);
        assert!(p > 0.0 && p < 1.0 && p < prev);
        prev = p;
    }
    assert_eq!(ss_probability(10.0, 0.1, 10.0), 0.5);
    assert!(ss_probability(1e4, 0.1, 10.0) < 1e-300);
    assert!(ss_probability(-1e4, 0.1, 10.0) == 1.0);
}

#[test]
fn huber_derivative_is_continuous_at_delta() {
    for delta in [0.1, 1.0, 2.0, 10.0] {
        let inside = huber_grad(0.0, delta * (1.0 - 1e-12), delta);
        let outside = huber_grad(0.0, delta * (1.0 + 1e-12), delta);
        assert!((inside - outside).abs() < 1e-9);
        assert!((huber(0.0, delta, delta) - 0.5 * delta * delta).abs() < 1e-15);
    }
}

#[test]
fn config_validation() {
    assert!(LossConfig::default().validate().is_ok());
    for bad in [
        LossConfig { delta: 0.0, ..LossConfig::default() },
        LossConfig { tau: -1.0, ..LossConfig::default() },
        LossConfig { lambda2: -0.1, ..LossConfig::default() },
        LossConfig { ss_k: 0.0, ..LossConfig::default() },
    ] {
        assert!(bad.validate().is_err());
    }
}
