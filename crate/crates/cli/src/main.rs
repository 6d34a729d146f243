use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rqreg::baseline::{BaselineKind, Buckets};
use rqreg::checkpoint::Checkpoint;
use rqreg::data::{gen_synthetic, skewness, CsvOptions, Dataset, SplitLabel, SyntheticKind, SyntheticSpec};
use rqreg::experiment::{run_baseline, run_eval, run_train, DataSource, ExperimentConfig, Profile, QuantizerConfig};
use rqreg::losses::Similarity;
use rqreg::model::{export_embeddings, write_embeddings_csv, ModelParams};
use rqreg::quantizer::{build_codebook_with_report, reconstruction_report, ClusterMethod};
use rqreg::training::{Schedule, TrainConfig};
use rqreg::{Precision, Scalar};

/// Regression by residual-quantization code generation.
#[derive(Parser)]
#[command(name = "rqreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    GenData(GenDataArgs),
    /// Build a residual codebook from the training split and report reconstruction error.
    BuildCodebook(BuildCodebookArgs),
    /// Train the sequence regressor.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Train and score a reference model.
    Baseline(BaselineArgs),
    /// Reconstruction error per level for k-means and k-medians first levels.
    CompareQuantizers(BuildCodebookArgs),
    /// Write code-sequence embeddings of target values as CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    kind: SyntheticKind,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Log-scale noise; defaults per kind.
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    positive_rate: f64,
    /// Comma-separated train[,val[,test]] ratios.
    #[arg(long, default_value = "0.7,0.1,0.2", value_delimiter = ',')]
    split: Vec<f64>,
    /// Defaults to --seed.
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long, default_value = "data.json")]
    out: PathBuf,
    /// Also write features and target as CSV.
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// Experiment config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file written by gen-data.
    #[arg(long, conflicts_with = "csv")]
    data: Option<PathBuf>,
    /// Headered CSV input.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, requires = "csv")]
    target: Option<String>,
    /// Comma-separated feature columns (default: all but the target).
    #[arg(long, value_delimiter = ',', requires = "csv")]
    features: Option<Vec<String>>,
    #[arg(long, requires = "csv")]
    normalize: bool,
    /// Comma-separated train[,val[,test]] ratios for CSV input.
    #[arg(long, value_delimiter = ',', requires = "csv")]
    csv_split: Option<Vec<f64>>,
    #[arg(long, requires = "csv")]
    csv_split_seed: Option<u64>,
    #[arg(long, requires = "csv")]
    clip_quantile: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct QuantArgs {
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    first_level: Option<ClusterMethod>,
}

#[derive(Args)]
struct BuildCodebookArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    quant: QuantArgs,
    #[arg(long, default_value = "codebook.json")]
    out: PathBuf,
}

#[derive(Args, Clone, Default)]
struct TrainOpts {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    quant: QuantArgs,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    ss_k: Option<f64>,
    #[arg(long)]
    ss_t0: Option<f64>,
    #[arg(long)]
    similarity: Option<Similarity>,
    /// `inverse_sigmoid` or `constant:<p>`.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long)]
    max_grad_norm: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// Continue from a `last.json` checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    kind: BaselineKind,
    /// Bucket count for bucket_cls.
    #[arg(long, default_value_t = 48)]
    buckets: usize,
    /// Comma-separated bucket counts whose reconstruction MAE is printed.
    #[arg(long, value_delimiter = ',')]
    recon_sweep: Option<Vec<usize>>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "embeddings.csv")]
    out: PathBuf,
    /// Comma-separated target values.
    #[arg(long, value_delimiter = ',', conflicts_with = "targets_file")]
    targets: Option<Vec<f64>>,
    /// One target value per line.
    #[arg(long)]
    targets_file: Option<PathBuf>,
    /// Size of the default evenly spaced grid over the codebook range.
    #[arg(long, default_value_t = 200)]
    grid: usize,
}

/// Process exit codes.
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rqreg::Error>() {
            return match e {
                rqreg::Error::NonFinite { .. } => EXIT_NUMERIC,
                rqreg::Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
    }
    EXIT_DATA
}

/// Argument combinations clap cannot express.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        writeln!(std::io::stdout(), $($arg)*)?
    }};
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::GenData(a) => cmd_gen_data(a),
        Command::BuildCodebook(a) => cmd_build_codebook(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::CompareQuantizers(a) => cmd_compare_quantizers(a),
        Command::ExportEmbeddings(a) => cmd_export_embeddings(a),
    }
}

fn print_json<S: Serialize>(value: &S) -> anyhow::Result<()> {
    out!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// `dir/name`, where `dir` is the parent of `path`.
fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn cmd_gen_data(a: GenDataArgs) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        n: a.n,
        d: a.d,
        kind: a.kind,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
        positive_rate: a.positive_rate,
    };
    let split_seed = a.split_seed.unwrap_or(a.seed);
    let ds = gen_synthetic(&spec)?.split(&a.split, split_seed)?;
    create_parent(&a.out)?;
    ds.save(&a.out)?;
    if let Some(csv) = &a.csv_out {
        rqreg::data::write_csv(&ds, csv, "y")?;
    }
    let source = DataSource::Synthetic {
        spec,
        split: a.split.clone(),
        split_seed,
    };
    ExperimentConfig::new(source, Profile::Desk).save(&sibling(&a.out, "gen_config.json"))?;

    let y = &ds.targets;
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let sizes = ds.split_sizes();
    print_json(&serde_json::json!({
        "path": a.out.display().to_string(),
        "content_sha256": ds.content_hash(),
        "n": ds.len(),
        "d": ds.dim,
        "splits": sizes.iter().map(|(k, v)| (k.to_string(), *v)).collect::<std::collections::BTreeMap<_, _>>(),
        "target_mean": y.iter().sum::<f64>() / y.len() as f64,
        "target_median": sorted[sorted.len() / 2],
        "target_max": sorted[sorted.len() - 1],
        "zero_fraction": y.iter().filter(|&&v| v == 0.0).count() as f64 / y.len() as f64,
        "skewness": skewness(y),
        "bayes_mae": ds.provenance.bayes_mae,
    }))
}

fn data_source(a: &DataArgs, base: Option<&DataSource>) -> anyhow::Result<DataSource> {
    if let Some(path) = &a.data {
        return Ok(DataSource::Cache { path: path.clone() });
    }
    if let Some(path) = &a.csv {
        let target = a.target.clone().ok_or_else(|| usage("--csv needs --target"))?;
        let mut options = CsvOptions::new(target);
        options.feature_columns = a.features.clone();
        options.normalize = a.normalize;
        if let Some(s) = &a.csv_split {
            options.split_ratios = s.clone();
        }
        options.split_seed = a.csv_split_seed.unwrap_or(0);
        options.clip_quantile = a.clip_quantile;
        return Ok(DataSource::Csv {
            path: path.clone(),
            options,
        });
    }
    base.cloned().ok_or_else(|| usage("no data: pass --data, --csv or a --config with a data section"))
}

fn base_config(a: &DataArgs) -> anyhow::Result<Option<ExperimentConfig>> {
    a.config.as_deref().map(ExperimentConfig::load).transpose().map_err(Into::into)
}

fn apply_quant(q: &mut QuantizerConfig, a: &QuantArgs) {
    if let Some(l) = a.levels {
        q.levels = l;
    }
    if let Some(k) = a.k {
        q.per_level_size = k;
    }
    if let Some(m) = a.first_level {
        q.first_level = m;
    }
}

fn parse_schedule(s: &str) -> anyhow::Result<Schedule> {
    if s == "inverse_sigmoid" {
        return Ok(Schedule::InverseSigmoid);
    }
    if let Some(p) = s.strip_prefix("constant:") {
        let p: f64 = p.parse().map_err(|_| usage(format!("bad schedule probability `{p}`")))?;
        return Ok(Schedule::Constant { p });
    }
    Err(usage(format!("unknown schedule `{s}` (inverse_sigmoid | constant:<p>)")))
}

/// Config file first, then flags.
fn resolve(o: &TrainOpts) -> anyhow::Result<ExperimentConfig> {
    let base = base_config(&o.data)?;
    let data = data_source(&o.data, base.as_ref().map(|c| &c.data))?;
    let mut cfg = match base {
        Some(mut c) => {
            c.data = data;
            c
        }
        None => ExperimentConfig::new(data, o.profile.unwrap_or_default()),
    };
    if let Some(p) = o.profile.filter(|&p| p != cfg.profile) {
        let (seed, loss) = (cfg.train.seed, cfg.train.loss.clone());
        cfg.train = match p {
            Profile::Desk => TrainConfig::desk(),
            Profile::Paper => TrainConfig::paper(),
        };
        cfg.train.seed = seed;
        cfg.train.loss = loss;
        cfg.model = None;
        cfg.profile = p;
    }
    apply_quant(&mut cfg.quantizer, &o.quant);
    let t = &mut cfg.train;
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(o.epochs, t.epochs);
    set!(o.batch_size, t.batch_size);
    set!(o.lr, t.learning_rate);
    set!(o.seed, t.seed);
    set!(o.lambda1, t.loss.lambda1);
    set!(o.lambda2, t.loss.lambda2);
    set!(o.tau, t.loss.tau);
    set!(o.delta, t.loss.delta);
    set!(o.ss_k, t.loss.ss_k);
    set!(o.ss_t0, t.loss.ss_t0);
    set!(o.similarity, t.loss.similarity);
    set!(o.precision, t.precision);
    set!(o.eval_every, t.eval_every);
    if o.max_grad_norm.is_some() {
        t.max_grad_norm = o.max_grad_norm;
    }
    if o.patience.is_some() {
        t.early_stop_patience = o.patience;
    }
    if let Some(s) = &o.schedule {
        t.schedule = parse_schedule(s)?;
    }
    if o.hidden.is_some() || o.embed_dim.is_some() {
        let dim = match &cfg.model {
            Some(m) => m.feature_dim,
            None => cfg.data.load()?.dim,
        };
        let mut m = match cfg.model.take() {
            Some(m) => m,
            None => cfg.resolve_model(dim)?,
        };
        if let Some(h) = o.hidden {
            m.hidden_dim = h;
        }
        if let Some(e) = o.embed_dim {
            m.embed_dim = e;
        }
        cfg.model = Some(m);
    }
    if let Some(m) = &mut cfg.model {
        m.levels = cfg.quantizer.levels;
        m.per_level_size = cfg.quantizer.per_level_size;
    }
    Ok(cfg)
}

fn cmd_build_codebook(a: BuildCodebookArgs) -> anyhow::Result<()> {
    let base = base_config(&a.data)?;
    let source = data_source(&a.data, base.as_ref().map(|c| &c.data))?;
    let mut cfg = base.unwrap_or_else(|| ExperimentConfig::new(source.clone(), Profile::Desk));
    cfg.data = source;
    apply_quant(&mut cfg.quantizer, &a.quant);
    let ds = cfg.data.load()?;
    let train = ds.subset(SplitLabel::Train);
    let q = &cfg.quantizer;
    let (cb, build) = build_codebook_with_report(&train.targets, q.levels, q.per_level_size, q.first_level)?;
    let report = reconstruction_report(&train.targets, &cb)?;
    create_parent(&a.out)?;
    cb.save(&a.out)?;
    cfg.save(&sibling(&a.out, "codebook_config.json"))?;
    write_json(&sibling(&a.out, "codebook_report.json"), &report)?;
    out!("level  method    effective_k  train_MAE      max_abs");
    for (lv, stats) in report.per_level.iter().enumerate() {
        out!(
            "{:>5}  {:<8}  {:>11}  {:<13.6e}  {:.6e}",
            lv + 1,
            cb.methods()[lv].to_string(),
            build.effective_sizes[lv],
            stats.mae,
            stats.max_abs
        );
    }
    Ok(())
}

fn cmd_compare_quantizers(a: BuildCodebookArgs) -> anyhow::Result<()> {
    let base = base_config(&a.data)?;
    let source = data_source(&a.data, base.as_ref().map(|c| &c.data))?;
    let mut q = base.map(|c| c.quantizer).unwrap_or_default();
    apply_quant(&mut q, &a.quant);
    let ds = source.load()?;
    let train = ds.subset(SplitLabel::Train);
    let mut rows = Vec::new();
    out!("first_level  levels  train_MAE");
    for method in [ClusterMethod::Kmeans, ClusterMethod::Kmedians] {
        let (cb, _) = build_codebook_with_report(&train.targets, q.levels, q.per_level_size, method)?;
        let report = reconstruction_report(&train.targets, &cb)?;
        for s in &report.per_level {
            out!("{:<11}  {:>6}  {:.6e}", method.to_string(), s.level, s.mae);
            rows.push(serde_json::json!({"first_level": method, "levels": s.level, "mae": s.mae}));
        }
    }
    create_parent(&a.out)?;
    write_json(&a.out, &rows)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = resolve(&a.opts)?;
    let summary = run_train(&cfg, &a.opts.out_dir, a.resume.as_deref())?;
    print_json(&summary)
}

fn load_dataset(a: &DataArgs) -> anyhow::Result<Dataset> {
    let base = base_config(a)?;
    Ok(data_source(a, base.as_ref().map(|c| &c.data))?.load()?)
}

fn parse_split(s: &str) -> anyhow::Result<SplitLabel> {
    match s {
        "train" => Ok(SplitLabel::Train),
        "val" => Ok(SplitLabel::Val),
        "test" => Ok(SplitLabel::Test),
        other => Err(usage(format!("unknown split `{other}` (train | val | test)"))),
    }
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let split = parse_split(&a.split)?;
    if !a.checkpoint.exists() {
        return Err(rqreg::Error::Io {
            path: a.checkpoint.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        }
        .into());
    }
    let ds = load_dataset(&a.data)?;
    let report = run_eval(&a.checkpoint, &ds, split, a.seed)?;
    if let Some(out) = &a.out {
        create_parent(out)?;
        write_json(out, &report)?;
    }
    print_json(&report)
}

fn cmd_baseline(a: BaselineArgs) -> anyhow::Result<()> {
    let cfg = resolve(&a.opts)?;
    if let Some(sweep) = &a.recon_sweep {
        let ds = cfg.data.load()?;
        let train = ds.subset(SplitLabel::Train);
        out!("buckets  effective  train_recon_MAE");
        for &b in sweep {
            let bk = Buckets::fit(&train.targets, b)?;
            out!("{:>7}  {:>9}  {:.6e}", b, bk.len(), bk.reconstruction_mae(&train.targets));
        }
    }
    let summary = run_baseline(&cfg, a.kind, a.buckets, &a.opts.out_dir)?;
    print_json(&summary)
}

fn read_targets(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| rqreg::Error::Data(format!("bad target value `{l}` in {}", path.display())).into())
        })
        .collect()
}

fn cmd_export_embeddings(a: ExportArgs) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cb = ck
        .codebook
        .clone()
        .ok_or_else(|| rqreg::Error::Data(format!("{}: checkpoint has no codebook", a.checkpoint.display())))?;
    let targets = match (&a.targets, &a.targets_file) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => read_targets(p)?,
        (None, None) => {
            if a.grid < 2 {
                return Err(usage("--grid must be >= 2"));
            }
            let lo: f64 = (0..cb.levels()).map(|l| cb.centroids(l)[0]).sum();
            let hi: f64 = (0..cb.levels()).map(|l| *cb.centroids(l).last().unwrap()).sum();
            (0..a.grid).map(|i| lo + (hi - lo) * i as f64 / (a.grid - 1) as f64).collect()
        }
    };
    fn rows<T: Scalar>(ck: &Checkpoint, cb: &rqreg::Codebook, t: &[f64]) -> rqreg::Result<Vec<rqreg::model::EmbeddingRow>> {
        let p: ModelParams<T> = ck.model()?;
        export_embeddings(&p, cb, t)
    }
    let out = match ck.precision {
        Precision::F32 => rows::<f32>(&ck, &cb, &targets)?,
        Precision::F64 => rows::<f64>(&ck, &cb, &targets)?,
    };
    create_parent(&a.out)?;
    let file = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_embeddings_csv(&out, file)?;
    out!("wrote {} rows of width {} to {}", out.len(), out.first().map_or(0, |r| r.embedding.len() + 1), a.out.display());
    Ok(())
}
