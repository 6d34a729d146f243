//! End-to-end experiment runs: resolve a config, load data, build the
//! codebook from the training split, train, evaluate and write artifacts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineKind, BucketCls, Buckets, HuberMlp, MlpConfig};
use crate::checkpoint::Checkpoint;
use crate::data::{gen_synthetic, load_csv, CsvOptions, Dataset, SplitLabel, Subset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{ModelConfig, ModelParams};
use crate::quantizer::{build_codebook_with_report, reconstruction_report, ClusterMethod, Codebook, ReconstructionReport};
use crate::scalar::{Precision, Scalar};
use crate::training::{fit, EpochRecord, RqModel, TrainConfig, TrainState, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Hidden 128, batch 256.
    #[default]
    Desk,
    /// Hidden 512, batch 1024.
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile `{other}` (desk | paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub levels: usize,
    pub per_level_size: usize,
    pub first_level: ClusterMethod,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            per_level_size: 48,
            first_level: ClusterMethod::Kmeans,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    /// Generated on the fly, then split.
    Synthetic {
        spec: SyntheticSpec,
        split: Vec<f64>,
        split_seed: u64,
    },
    Csv {
        path: PathBuf,
        options: CsvOptions,
    },
    /// A dataset file written by [`Dataset::save`].
    Cache { path: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic { spec, split, split_seed } => gen_synthetic(spec)?.split(split, *split_seed),
            DataSource::Csv { path, options } => load_csv(path, options),
            DataSource::Cache { path } => Dataset::load(path),
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub profile: Profile,
    pub quantizer: QuantizerConfig,
    /// Filled from the profile and the data when absent.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn new(data: DataSource, profile: Profile) -> Self {
        let train = match profile {
            Profile::Desk => TrainConfig::desk(),
            Profile::Paper => TrainConfig::paper(),
        };
        Self {
            data,
            profile,
            quantizer: QuantizerConfig::default(),
            model: None,
            train,
        }
    }

    /// Model config for `feature_dim`, from the explicit config or the profile.
    pub fn resolve_model(&self, feature_dim: usize) -> Result<ModelConfig> {
        let q = &self.quantizer;
        let model = match &self.model {
            Some(m) => m.clone(),
            None => match self.profile {
                Profile::Desk => ModelConfig::desk(feature_dim, q.levels, q.per_level_size),
                Profile::Paper => ModelConfig::paper(feature_dim, q.levels, q.per_level_size),
            },
        };
        if model.feature_dim != feature_dim || model.levels != q.levels || model.per_level_size != q.per_level_size {
            return Err(Error::Config(format!(
                "model config ({} features, {}x{} codes) does not match data/quantizer ({} features, {}x{})",
                model.feature_dim, model.levels, model.per_level_size, feature_dim, q.levels, q.per_level_size
            )));
        }
        model.validate()?;
        self.train.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Builds the codebook from training targets only.
pub fn codebook_for(train: &Subset, q: &QuantizerConfig) -> Result<(Codebook, ReconstructionReport)> {
    let (cb, _) = build_codebook_with_report(&train.targets, q.levels, q.per_level_size, q.first_level)?;
    let report = reconstruction_report(&train.targets, &cb)?;
    Ok((cb, report))
}

pub fn report_for<T: Scalar, M: Trainable<T>>(model: &M, subset: &Subset, seed: u64) -> Result<MetricsReport> {
    let pred = model.predict(&subset.features)?;
    evaluate(&pred, &subset.targets, None, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_mae: Option<f64>,
    pub bayes_test_mae: Option<f64>,
    pub test: Option<MetricsReport>,
}

/// File layout of a training run directory.
pub struct RunPaths {
    pub config: PathBuf,
    pub codebook: PathBuf,
    pub history: PathBuf,
    pub best: PathBuf,
    pub last: PathBuf,
    pub summary: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        Self {
            config: dir.join("config.json"),
            codebook: dir.join("codebook.json"),
            history: dir.join("history.jsonl"),
            best: dir.join("best.json"),
            last: dir.join("last.json"),
            summary: dir.join("summary.json"),
        }
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_typed<T: Scalar>(cfg: &ExperimentConfig, ds: &Dataset, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    let paths = RunPaths::new(out);
    let train = ds.subset(SplitLabel::Train);
    let val = ds.subset(SplitLabel::Val);
    let test = ds.subset(SplitLabel::Test);
    let mut state = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let st = TrainState::<T, RqModel<T>>::from_checkpoint(&ck)?;
            if st.model.params.config.feature_dim != ds.dim {
                return Err(Error::Config(format!(
                    "checkpoint expects {} features, data has {}",
                    st.model.params.config.feature_dim, ds.dim
                )));
            }
            st
        }
        None => {
            let model_cfg = cfg.resolve_model(ds.dim)?;
            let (cb, report) = codebook_for(&train, &cfg.quantizer)?;
            for lv in &report.per_level {
                log::info!("codebook level {}: reconstruction MAE {:.6e}", lv.level, lv.mae);
            }
            let params = ModelParams::<T>::init(&model_cfg, cfg.train.seed)?;
            TrainState::new(RqModel::new(params, cb)?)
        }
    };
    let mut resolved = cfg.clone();
    resolved.model = Some(state.model.params.config.clone());
    resolved.train.precision = T::PRECISION;
    resolved.save(&paths.config)?;
    state.model.codebook.save(&paths.codebook)?;

    let records: Vec<EpochRecord> = fit(&mut state, &train, &val, &cfg.train, Some(&paths.history))?;
    state.to_checkpoint(cfg.train.seed).save(&paths.last)?;
    let best = state.best_model();
    Checkpoint::new(&best.params).with_codebook(&best.codebook).save(&paths.best)?;
    let test_report = if test.len() >= 2 {
        Some(report_for(best, &test, cfg.train.seed)?)
    } else {
        None
    };
    let summary = TrainSummary {
        epochs_run: records.len(),
        best_epoch: state.best_epoch,
        best_val_mae: state.best_val_mae,
        bayes_test_mae: test.bayes_mae(),
        test: test_report,
    };
    write_json(&paths.summary, &summary)?;
    Ok(summary)
}

/// Trains RQ-Reg and writes config, codebook, history, checkpoints and a summary into `out`.
pub fn run_train(cfg: &ExperimentConfig, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ds = cfg.data.load()?;
    match cfg.train.precision {
        Precision::F32 => train_typed::<f32>(cfg, &ds, out, resume),
        Precision::F64 => train_typed::<f64>(cfg, &ds, out, resume),
    }
}

/// Loads a checkpoint and scores it on one split.
pub fn run_eval(checkpoint: &Path, ds: &Dataset, split: SplitLabel, seed: u64) -> Result<MetricsReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let cb = ck
        .codebook
        .clone()
        .ok_or_else(|| Error::Data(format!("{}: checkpoint has no codebook", checkpoint.display())))?;
    let subset = ds.subset(split);
    if subset.len() < 2 {
        return Err(Error::Data(format!("split `{split}` has fewer than 2 rows")));
    }
    fn go<T: Scalar>(ck: &Checkpoint, cb: Codebook, s: &Subset, seed: u64) -> Result<MetricsReport> {
        let m = RqModel::new(ck.model::<T>()?, cb)?;
        if m.params.config.feature_dim != s.dim {
            return Err(Error::Data(format!(
                "checkpoint expects {} features, data has {}",
                m.params.config.feature_dim, s.dim
            )));
        }
        report_for(&m, s, seed)
    }
    match ck.precision {
        Precision::F32 => go::<f32>(&ck, cb, &subset, seed),
        Precision::F64 => go::<f64>(&ck, cb, &subset, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub kind: BaselineKind,
    pub buckets: Option<usize>,
    pub effective_buckets: Option<usize>,
    pub bucket_reconstruction_mae: Option<f64>,
    pub best_val_mae: Option<f64>,
    pub bayes_test_mae: Option<f64>,
    pub test: Option<MetricsReport>,
}

/// Encoder width shared with the sequence model so comparisons are like for like.
pub fn baseline_mlp_config(model: &ModelConfig) -> MlpConfig {
    MlpConfig {
        feature_dim: model.feature_dim,
        hidden: model.enc_hidden,
        width: 2 * model.hidden_dim,
    }
}

fn baseline_typed<T: Scalar>(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    kind: BaselineKind,
    buckets: usize,
    out: &Path,
) -> Result<BaselineSummary> {
    let train = ds.subset(SplitLabel::Train);
    let val = ds.subset(SplitLabel::Val);
    let test = ds.subset(SplitLabel::Test);
    let mlp = baseline_mlp_config(&cfg.resolve_model(ds.dim)?);
    let history = out.join(format!("{kind}_history.jsonl"));
    fn finish<T: Scalar, M: Trainable<T>>(
        model: M,
        train: &Subset,
        val: &Subset,
        test: &Subset,
        cfg: &TrainConfig,
        history: &Path,
    ) -> Result<(Option<f64>, Option<MetricsReport>)> {
        let mut st = TrainState::new(model);
        fit(&mut st, train, val, cfg, Some(history))?;
        let report = if test.len() >= 2 {
            Some(report_for(st.best_model(), test, cfg.seed)?)
        } else {
            None
        };
        Ok((st.best_val_mae, report))
    }
    let summary = match kind {
        BaselineKind::HuberMlp => {
            let (best, test_report) = finish(HuberMlp::<T>::new(mlp, cfg.train.seed)?, &train, &val, &test, &cfg.train, &history)?;
            BaselineSummary {
                kind,
                buckets: None,
                effective_buckets: None,
                bucket_reconstruction_mae: None,
                best_val_mae: best,
                bayes_test_mae: test.bayes_mae(),
                test: test_report,
            }
        }
        BaselineKind::BucketCls => {
            let b = Buckets::fit(&train.targets, buckets)?;
            let recon = b.reconstruction_mae(&train.targets);
            let eff = b.len();
            let (best, test_report) = finish(BucketCls::<T>::new(mlp, b, cfg.train.seed)?, &train, &val, &test, &cfg.train, &history)?;
            BaselineSummary {
                kind,
                buckets: Some(buckets),
                effective_buckets: Some(eff),
                bucket_reconstruction_mae: Some(recon),
                best_val_mae: best,
                bayes_test_mae: test.bayes_mae(),
                test: test_report,
            }
        }
    };
    write_json(&out.join(format!("{kind}_summary.json")), &summary)?;
    Ok(summary)
}

/// Trains and evaluates a baseline; writes its history and summary into `out`.
pub fn run_baseline(cfg: &ExperimentConfig, kind: BaselineKind, buckets: usize, out: &Path) -> Result<BaselineSummary> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ds = cfg.data.load()?;
    cfg.save(&out.join(format!("{kind}_config.json")))?;
    match cfg.train.precision {
        Precision::F32 => baseline_typed::<f32>(cfg, &ds, kind, buckets, out),
        Precision::F64 => baseline_typed::<f64>(cfg, &ds, kind, buckets, out),
    }
}
