//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line reaches stdout. Set
//! `RQREG_ACCEPTANCE_QUICK=1` to skip the training criteria (6, 7, 8, 10).

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use rqreg::baseline::BaselineKind;
use rqreg::checkpoint::Checkpoint;
use rqreg::data::{gen_synthetic, SyntheticKind, SyntheticSpec};
use rqreg::eval::{norm_gini, spearman, xauc_exact};
use rqreg::experiment::{run_baseline, run_train, DataSource, ExperimentConfig, Profile, RunPaths, TrainSummary};
use rqreg::losses::{loss_graph, Batch, LossConfig};
use rqreg::model::{export_embeddings, forward_teacher_forced, infer, FeedMask, ModelConfig, ModelParams, ModelVars};
use rqreg::numerics::{grad_check, Graph, Tensor};
use rqreg::quantizer::{build_codebook, cluster_1d, decode, reconstruction_report, ClusterMethod, Codebook};
use rqreg::training::Schedule;
use rqreg::Precision;

struct Outcome {
    passed: bool,
    detail: String,
    /// Failed only on inputs shown to have no exact answer in f64.
    known_limit: bool,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
            known_limit: false,
        }
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Initialized parameters with every entry perturbed by `scale·N(0, 1)`.
fn perturbed(cfg: &ModelConfig, seed: u64, scale: f64) -> ModelParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut p = ModelParams::<f64>::init(cfg, seed).unwrap();
    for t in p.store.tensors_mut() {
        for v in t.data_mut() {
            *v += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    p
}

fn criterion_1() -> Outcome {
    let cfg = ModelConfig {
        feature_dim: 3,
        embed_dim: 4,
        hidden_dim: 8,
        levels: 3,
        per_level_size: 3,
        enc_hidden: 6,
        pred_hidden: 6,
        reg_hidden: 6,
    };
    let p = perturbed(&cfg, 1, 0.3);
    let y_train: Vec<f64> = (0..40).map(|i| (0.15 * i as f64).exp()).collect();
    let cb = build_codebook(&y_train, 3, 3, ClusterMethod::Kmeans).unwrap();
    let x = [0.3, -1.1, 0.7, 1.4, 0.2, -0.5, -0.8, 0.9, 0.1, 0.05, -0.3, 1.2];
    let y = [0.4, 2.5, 11.0, 60.0];
    let batch = Batch::<f64>::new(&x, &y, &cb).unwrap();
    let mask = FeedMask::from_fn(4, 3, |i, l| (i + l) % 2 == 0);
    let loss = LossConfig::default();
    let report = grad_check(
        |g, w| {
            let mv = ModelVars { vars: w.to_vec() };
            Ok(loss_graph(g, &p, &mv, &batch, &loss, &mask)?.total)
        },
        p.store.tensors(),
        1e-6,
        1e-4,
    )
    .unwrap();
    Outcome::new(
        report.passed,
        format!("max rel error {:.2e} over {} tensors (tol 1e-4)", report.max_rel_error, report.per_param.len()),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..200 {
        let n = rng.random_range(1..=12);
        let mut v: Vec<f64> = if i % 2 == 0 {
            (0..n).map(|_| f64::from(rng.random_range(0..6u8))).collect()
        } else {
            (0..n).map(|_| rng.random_range(-20.0..20.0)).collect()
        };
        v.sort_by(f64::total_cmp);
        let k = rng.random_range(1..=4);
        for m in [ClusterMethod::Kmeans, ClusterMethod::Kmedians] {
            let dp = cluster_1d(&v, k, m).unwrap().cost;
            let brute = common::brute_cluster_cost(&v, k, m);
            let gap = (dp - brute).abs() / brute.max(1.0);
            worst = worst.max(gap);
            if gap > 1e-12 {
                failures += 1;
            }
        }
    }
    Outcome::new(failures == 0, format!("400 comparisons, {failures} mismatches, worst scaled gap {worst:.1e}"))
}

fn mixture_codebook() -> (Vec<f64>, Codebook) {
    let ds = gen_synthetic(&SyntheticSpec::new(SyntheticKind::LognormalMixture, 50_000, 16, 3)).unwrap();
    let cb = build_codebook(&ds.targets, 3, 48, ClusterMethod::Kmeans).unwrap();
    (ds.targets, cb)
}

fn criterion_3(y: &[f64], cb: &Codebook) -> Outcome {
    let r = reconstruction_report(y, cb).unwrap();
    let mae: Vec<f64> = r.per_level.iter().map(|s| s.mae).collect();
    let passed = mae[1] < mae[0] && mae[2] < mae[1] && mae[2] < 0.05 * mae[0];
    Outcome::new(
        passed,
        format!("MAE by level {:.3e} > {:.3e} > {:.3e}, ratio L3/L1 {:.2e}", mae[0], mae[1], mae[2], mae[2] / mae[0]),
    )
}

fn criterion_4(y: &[f64], cb: &Codebook) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let max = y.iter().cloned().fold(0.0, f64::max);
    let mut misses = 0;
    let mut out_of_range = 0;
    let mut unreachable = 0;
    for i in 0..10_000 {
        let v = match i % 4 {
            0 => y[rng.random_range(0..y.len())] * rng.random_range(0.9..1.1),
            1 => rng.random_range(0.0..max),
            2 => max * rng.random_range(1.0..100.0),
            _ => -rng.random_range(0.0..1e3),
        };
        if !(0.0..=max).contains(&v) {
            out_of_range += 1;
        }
        let cs = cb.encode(v);
        if decode(&cs) + cs.final_residual != v {
            misses += 1;
            if !common::residual_exists(decode(&cs), v) {
                unreachable += 1;
            }
        }
    }
    let mut o = Outcome::new(
        misses == 0,
        format!("10000 values ({out_of_range} out of range), {misses} inexact, {unreachable} of them with no f64 residual that adds back"),
    );
    // A sum s one binade below the residual with an odd last bit leaves y on a
    // rounding tie, so the greedy codes admit no exact residual at all.
    o.known_limit = misses > 0 && misses == unreachable;
    o
}

fn criterion_5() -> Outcome {
    let mut mismatches = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig {
            feature_dim: rng.random_range(1..6),
            embed_dim: rng.random_range(1..6),
            hidden_dim: rng.random_range(1..9),
            levels: rng.random_range(1..4),
            per_level_size: rng.random_range(1..5),
            enc_hidden: rng.random_range(1..7),
            pred_hidden: rng.random_range(1..7),
            reg_hidden: rng.random_range(1..7),
        };
        let p = perturbed(&cfg, seed, 0.5);
        let x: Vec<f64> = (0..cfg.feature_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let got = infer(&p, &x).unwrap();
        let mut g = Graph::<f64>::new();
        let mv = p.attach(&mut g, false);
        let xv = g.constant(Tensor::from_f64(&[1, x.len()], &x).unwrap());
        let steps = forward_teacher_forced(&mut g, &cfg, &mv, xv, None, &FeedMask::filled(1, cfg.levels, false)).unwrap();
        let per_step: Vec<f64> = steps.iter().map(|s| g.value(s.value).item()).collect();
        let total = per_step.iter().fold(0.0, |a, v| a + v);
        if got.per_step != per_step || got.value != total {
            mismatches += 1;
        }
    }
    Outcome::new(mismatches == 0, format!("100 instances, {mismatches} differ"))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = 0;
    for i in 0..500 {
        let n = rng.random_range(2..=8);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            if i % 2 == 0 {
                (0..n).map(|_| f64::from(rng.random_range(0..4u8))).collect()
            } else {
                (0..n).map(|_| rng.random_range(0.0..5.0)).collect()
            }
        };
        let p = draw(&mut rng);
        let t = draw(&mut rng);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        let x_ok = close(xauc_exact(&p, &t).unwrap(), common::brute_xauc(&p, &t));
        let s = spearman(&p, &t).unwrap();
        let s_ok = match common::brute_spearman(&p, &t) {
            Some(v) => s.defined && close(s.value, v),
            None => !s.defined,
        };
        let g = norm_gini(&p, &t).unwrap();
        let g_ok = match common::brute_norm_gini(&p, &t) {
            Some(v) => g.defined && close(g.value, v),
            None => !g.defined,
        };
        if !(x_ok && s_ok && g_ok) {
            failures += 1;
        }
    }
    Outcome::new(failures == 0, format!("500 instances, {failures} disagree with enumeration"))
}

// Training criteria share one task and a cache of finished runs.

const TASK_SEED: u64 = 7;
const SEEDS: [u64; 3] = [0, 1, 2];

fn task_config(seed: u64) -> ExperimentConfig {
    let data = DataSource::Synthetic {
        spec: SyntheticSpec::new(SyntheticKind::LognormalMixture, 20_000, 16, TASK_SEED),
        split: vec![0.7, 0.1, 0.2],
        split_seed: TASK_SEED,
    };
    let mut cfg = ExperimentConfig::new(data, Profile::Desk);
    cfg.train.precision = Precision::F32;
    cfg.train.seed = seed;
    cfg
}

struct Run {
    dir: PathBuf,
    summary: TrainSummary,
    elapsed: Duration,
}

impl Run {
    fn test_mae(&self) -> f64 {
        self.summary.test.as_ref().unwrap().mae
    }
}

fn train(root: &Path, name: &str, cfg: &ExperimentConfig) -> Run {
    let dir = root.join(name);
    let start = Instant::now();
    let summary = run_train(cfg, &dir, None).unwrap();
    let elapsed = start.elapsed();
    println!("    run {name}: test MAE {:.4} in {:.0}s", summary.test.as_ref().unwrap().mae, elapsed.as_secs_f64());
    Run { dir, summary, elapsed }
}

/// Values recorded after the first run of criterion 6.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Thresholds {
    bayes_test_mae: f64,
    max_test_mae: f64,
    bucket_cls_xauc: f64,
    min_test_xauc: f64,
}

fn thresholds_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/acceptance_thresholds.json")
}

fn criterion_6(root: &Path, scheduled: &Run) -> Outcome {
    let cfg = task_config(SEEDS[0]);
    let start = Instant::now();
    let baseline = run_baseline(&cfg, BaselineKind::BucketCls, 48, &root.join("bucket_cls")).unwrap();
    let bucket_xauc = baseline.test.as_ref().unwrap().xauc;
    println!("    run bucket_cls: test XAUC {bucket_xauc:.4} in {:.0}s", start.elapsed().as_secs_f64());
    let bayes = scheduled.summary.bayes_test_mae.unwrap();
    let live = Thresholds {
        bayes_test_mae: bayes,
        max_test_mae: 1.5 * bayes,
        bucket_cls_xauc: bucket_xauc,
        min_test_xauc: bucket_xauc - 0.005,
    };
    let path = thresholds_path();
    let frozen: Thresholds = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap(),
        Err(_) => {
            std::fs::write(&path, serde_json::to_string_pretty(&live).unwrap() + "\n").unwrap();
            println!("    froze thresholds into {}", path.display());
            live.clone()
        }
    };
    let drift = (frozen.bayes_test_mae - live.bayes_test_mae).abs() > 1e-9
        || (frozen.bucket_cls_xauc - live.bucket_cls_xauc).abs() > 1e-9;
    let test = scheduled.summary.test.as_ref().unwrap();
    let passed = !drift
        && test.mae <= frozen.max_test_mae
        && test.xauc >= frozen.min_test_xauc
        && within(scheduled.elapsed, 600.0);
    Outcome::new(
        passed,
        format!(
            "test MAE {:.4} (limit {:.4} = 1.5 x Bayes {:.4}), XAUC {:.4} (limit {:.4}), {:.0}s{}",
            test.mae,
            frozen.max_test_mae,
            frozen.bayes_test_mae,
            test.xauc,
            frozen.min_test_xauc,
            scheduled.elapsed.as_secs_f64(),
            if drift { ", live thresholds drifted from the frozen file" } else { "" }
        ),
    )
}

fn criterion_10(root: &Path, first: &Run) -> Outcome {
    let second = train(root, "repeat", &task_config(SEEDS[0]));
    let (a, b) = (RunPaths::new(&first.dir), RunPaths::new(&second.dir));
    let same = |x: &Path, y: &Path| std::fs::read(x).unwrap() == std::fs::read(y).unwrap();
    let history = same(&a.history, &b.history);
    let last = same(&a.last, &b.last);
    let best = same(&a.best, &b.best);
    Outcome::new(
        history && last && best,
        format!("history identical: {history}, last checkpoint identical: {last}, best checkpoint identical: {best}"),
    )
}

fn criterion_7(scheduled: &[Run], teacher: &[Run], free: &[Run]) -> Outcome {
    let mae = |runs: &[Run]| median(runs.iter().map(Run::test_mae).collect());
    let (s, t, f) = (mae(scheduled), mae(teacher), mae(free));
    Outcome::new(
        t >= s && f >= s,
        format!("median test MAE scheduled {s:.4}, p=1 {t:.4}, p=0 {f:.4}"),
    )
}

/// Spearman correlation between pairwise embedding distances and label
/// distances over an evenly spaced 200-value grid of the codebook range.
fn alignment(run: &Run) -> f64 {
    let ck = Checkpoint::load(&RunPaths::new(&run.dir).best).unwrap();
    let cb = ck.codebook.clone().unwrap();
    let params: ModelParams<f32> = ck.model().unwrap();
    let lo: f64 = (0..cb.levels()).map(|l| cb.centroids(l)[0]).sum();
    let hi: f64 = (0..cb.levels()).map(|l| *cb.centroids(l).last().unwrap()).sum();
    let grid: Vec<f64> = (0..200).map(|i| lo + (hi - lo) * i as f64 / 199.0).collect();
    let rows = export_embeddings(&params, &cb, &grid).unwrap();
    let (mut emb_dist, mut label_dist) = (Vec::new(), Vec::new());
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d2: f64 = rows[i].embedding.iter().zip(&rows[j].embedding).map(|(a, b)| (a - b) * (a - b)).sum();
            emb_dist.push(d2.sqrt());
            label_dist.push((rows[i].y - rows[j].y).abs());
        }
    }
    spearman(&emb_dist, &label_dist).unwrap().value
}

fn criterion_8(with_rnc: &[Run], without: &[Run]) -> Outcome {
    let a = median(with_rnc.iter().map(alignment).collect());
    let b = median(without.iter().map(alignment).collect());
    Outcome::new(a > b, format!("median Spearman lambda2=0.1 {a:.4}, lambda2=0 {b:.4}"))
}

struct Tally {
    id: u32,
    passed: bool,
    known_limit: bool,
}

fn report(id: u32, name: &str, f: impl FnOnce() -> Outcome, results: &mut Vec<Tally>) {
    let start = Instant::now();
    let o = f();
    let status = match (o.passed, o.known_limit) {
        (true, _) => "PASS",
        (false, true) => "FAIL (known f64 limit)",
        (false, false) => "FAIL",
    };
    println!("criterion {id:>2} {name:<28} {status}  {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
    results.push(Tally {
        id,
        passed: o.passed,
        known_limit: o.known_limit,
    });
}

fn main() {
    let quick = std::env::var("RQREG_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1");
    let mut results = Vec::new();
    report(1, "gradient correctness", criterion_1, &mut results);
    report(2, "quantizer optimality", criterion_2, &mut results);
    let (y, cb) = mixture_codebook();
    report(3, "monotone refinement", || criterion_3(&y, &cb), &mut results);
    report(4, "round-trip exactness", || criterion_4(&y, &cb), &mut results);
    report(5, "inference-path consistency", criterion_5, &mut results);
    report(9, "metric correctness", criterion_9, &mut results);

    if quick {
        for (id, name) in [(6, "learnable-task regression"), (7, "ablation direction"), (8, "rnc alignment"), (10, "determinism")] {
            println!("criterion {id:>2} {name:<28} SKIP  quick mode");
        }
    } else {
        let root = tempfile::tempdir().unwrap();
        let root = root.path();
        let mut scheduled = Vec::new();
        let mut teacher = Vec::new();
        let mut free = Vec::new();
        let mut no_rnc = Vec::new();
        for &s in &SEEDS {
            scheduled.push(train(root, &format!("scheduled_{s}"), &task_config(s)));
        }
        report(6, "learnable-task regression", || criterion_6(root, &scheduled[0]), &mut results);
        report(10, "determinism", || criterion_10(root, &scheduled[0]), &mut results);
        for &s in &SEEDS {
            let mut cfg = task_config(s);
            cfg.train.schedule = Schedule::Constant { p: 1.0 };
            teacher.push(train(root, &format!("teacher_{s}"), &cfg));
            cfg.train.schedule = Schedule::Constant { p: 0.0 };
            free.push(train(root, &format!("free_{s}"), &cfg));
            let mut cfg = task_config(s);
            cfg.train.loss.lambda2 = 0.0;
            no_rnc.push(train(root, &format!("no_rnc_{s}"), &cfg));
        }
        report(7, "ablation direction", || criterion_7(&scheduled, &teacher, &free), &mut results);
        report(8, "rnc alignment", || criterion_8(&scheduled, &no_rnc), &mut results);
    }

    let ids = |keep: fn(&Tally) -> bool| -> Vec<u32> { results.iter().filter(|t| keep(t)).map(|t| t.id).collect() };
    let passed = ids(|t| t.passed);
    let known = ids(|t| !t.passed && t.known_limit);
    let failed = ids(|t| !t.passed && !t.known_limit);
    println!(
        "acceptance: {} passed {passed:?}, {} failed on known f64 limits {known:?}, {} failed {failed:?}",
        passed.len(),
        known.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
