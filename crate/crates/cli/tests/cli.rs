use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rqreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rqreg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rqreg(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> Option<i32> {
    rqreg(args).status.code()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_data(dir: &Path, seed: &str) -> PathBuf {
    let path = dir.join(format!("data_{seed}.json"));
    ok(&["gen-data", "--kind", "lognormal_mixture", "--n", "300", "--d", "4", "--seed", seed, "--out", s(&path)]);
    path
}

const SMALL: [&str; 12] = [
    "--epochs", "2", "--k", "6", "--hidden", "8", "--embed-dim", "4", "--batch-size", "64", "--precision", "f32",
];

fn train(data: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--data", s(data), "--out-dir", s(out)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    ok(&args)
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_data(dir.path(), "5");
    let first = std::fs::read(&a).unwrap();
    let stdout = ok(&["gen-data", "--kind", "lognormal_mixture", "--n", "300", "--d", "4", "--seed", "5", "--out", s(&a)]);
    assert_eq!(std::fs::read(&a).unwrap(), first);
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["n"], 300);
    assert_eq!(summary["splits"]["train"], 210);
    assert!(summary["skewness"].as_f64().unwrap() > 0.0);
    let b = gen_data(dir.path(), "6");
    assert_ne!(std::fs::read(&b).unwrap(), first);
    assert!(dir.path().join("gen_config.json").exists());
}

#[test]
fn build_codebook_and_compare_quantizers() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path(), "1");
    let cb_path = dir.path().join("cb/codebook.json");
    let table = ok(&["build-codebook", "--data", s(&data), "--levels", "2", "--k", "5", "--out", s(&cb_path)]);
    assert_eq!(table.lines().count(), 3, "{table}");
    let cb: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cb_path).unwrap()).unwrap();
    assert_eq!(cb["centroids"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("cb/codebook_report.json").exists());
    let cmp = ok(&["compare-quantizers", "--data", s(&data), "--levels", "3", "--k", "4", "--out", s(&dir.path().join("cmp.json"))]);
    assert!(cmp.contains("kmeans") && cmp.contains("kmedians"), "{cmp}");
}

#[test]
fn train_resume_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path(), "2");
    let run = dir.path().join("run");
    train(&data, &run, &[]);
    for f in ["config.json", "codebook.json", "history.jsonl", "best.json", "last.json", "summary.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    assert_eq!(lines(&run.join("history.jsonl")), 2);

    let mut args = vec!["train", "--data", s(&data), "--out-dir", s(&run)];
    args.extend_from_slice(&SMALL[2..]);
    let last = run.join("last.json");
    args.extend_from_slice(&["--epochs", "3", "--resume", s(&last)]);
    ok(&args);
    assert_eq!(lines(&run.join("history.jsonl")), 3);

    let report_path = dir.path().join("report.json");
    let best = run.join("best.json");
    let printed = ok(&["eval", "--checkpoint", s(&best), "--data", s(&data), "--split", "test", "--out", s(&report_path)]);
    let report: serde_json::Value = serde_json::from_str(&printed).unwrap();
    assert_eq!(report["n_samples"], 60);
    assert!(report["mae"].as_f64().unwrap().is_finite());
    assert_eq!(serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(&report_path).unwrap()).unwrap(), report);

    let grid = dir.path().join("grid.csv");
    ok(&["export-embeddings", "--checkpoint", s(&best), "--out", s(&grid)]);
    let text = std::fs::read_to_string(&grid).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 1 + 3 * 4);

    let listed = dir.path().join("listed.csv");
    ok(&["export-embeddings", "--checkpoint", s(&best), "--targets", "0.5,2,40", "--out", s(&listed)]);
    let text = std::fs::read_to_string(&listed).unwrap();
    let ys: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ys, ["0.5", "2", "40"]);
}

#[test]
fn same_seed_runs_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path(), "3");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&data, &a, &["--seed", "4"]);
    train(&data, &b, &["--seed", "4"]);
    for f in ["history.jsonl", "last.json", "best.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn paper_profile_sets_paper_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path(), "4");
    let run = dir.path().join("paper");
    ok(&["train", "--data", s(&data), "--out-dir", s(&run), "--profile", "paper", "--epochs", "0", "--k", "4"]);
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["model"]["hidden_dim"], 512);
    assert_eq!(cfg["train"]["batch_size"], 1024);
    assert_eq!(cfg["profile"], "paper");
}

#[test]
fn baselines_write_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path(), "5");
    let out = dir.path().join("base");
    for kind in ["bucket_cls", "huber_mlp"] {
        let mut args = vec!["baseline", "--kind", kind, "--buckets", "6", "--data", s(&data), "--out-dir", s(&out)];
        args.extend_from_slice(&SMALL);
        ok(&args);
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(format!("{kind}_summary.json"))).unwrap()).unwrap();
        assert!(summary["test"]["mae"].as_f64().unwrap().is_finite());
    }
    let mut args = vec!["baseline", "--kind", "bucket_cls", "--data", s(&data), "--out-dir", s(&out), "--recon-sweep", "2,8"];
    args.extend_from_slice(&SMALL);
    let table = ok(&args);
    assert!(table.lines().count() >= 3, "{table}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path(), "6");
    let run = s(&dir.path().join("run")).to_string();
    let missing = s(&dir.path().join("nope.json")).to_string();

    assert_eq!(code(&["train", "--bogus"]), Some(2));
    assert_eq!(code(&["train", "--data", s(&data), "--out-dir", &run, "--lr", "-1"]), Some(2));
    assert_eq!(code(&["train", "--data", s(&data), "--out-dir", &run, "--schedule", "constant:x"]), Some(2));
    assert_eq!(code(&["train", "--out-dir", &run]), Some(2));
    assert_eq!(code(&["train", "--data", &missing, "--out-dir", &run]), Some(3));
    assert_eq!(code(&["eval", "--checkpoint", &missing, "--data", s(&data)]), Some(3));
    assert_eq!(code(&["export-embeddings", "--checkpoint", &missing]), Some(3));

    let mut args = vec!["train", "--data", s(&data), "--out-dir", &run];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(&["--lr", "1e30"]);
    assert_eq!(code(&args), Some(4));
}
