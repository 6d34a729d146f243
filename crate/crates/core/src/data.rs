//! Datasets: synthetic generators with a known Bayes-optimal predictor, CSV
//! ingestion, deterministic splits and a hashed JSON cache.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Zero-inflated lognormal.
    Ziln,
    /// Three lognormal components selected by a feature gate.
    LognormalMixture,
    /// Targets near a handful of price points.
    PriceClustered,
}

impl SyntheticKind {
    pub fn default_noise_sigma(self) -> f64 {
        match self {
            SyntheticKind::Ziln => 1.0,
            SyntheticKind::LognormalMixture => 0.5,
            SyntheticKind::PriceClustered => 0.05,
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::Ziln => "ziln",
            SyntheticKind::LognormalMixture => "lognormal_mixture",
            SyntheticKind::PriceClustered => "price_clustered",
        })
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "ziln" => Ok(SyntheticKind::Ziln),
            "lognormal_mixture" | "mixture" => Ok(SyntheticKind::LognormalMixture),
            "price_clustered" | "price" => Ok(SyntheticKind::PriceClustered),
            other => Err(Error::Config(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub kind: SyntheticKind,
    /// Log-scale noise σ; the kind's default when absent.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    pub seed: u64,
    /// Baseline probability of a nonzero target for `ziln`; the gate shifts it per sample.
    #[serde(default = "default_positive_rate")]
    pub positive_rate: f64,
}

fn default_positive_rate() -> f64 {
    0.5
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, n: usize, d: usize, seed: u64) -> Self {
        Self {
            n,
            d,
            kind,
            noise_sigma: None,
            seed,
            positive_rate: default_positive_rate(),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.noise_sigma.unwrap_or_else(|| self.kind.default_noise_sigma())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Config(format!("synthetic n must be >= 10, got {}", self.n)));
        }
        if self.d < 1 {
            return Err(Error::Config("synthetic d must be >= 1".into()));
        }
        let s = self.sigma();
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {s}")));
        }
        if !(0.0..=1.0).contains(&self.positive_rate) {
            return Err(Error::Config(format!("positive_rate must lie in [0, 1], got {}", self.positive_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitLabel::Train => "train",
            SplitLabel::Val => "val",
            SplitLabel::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Source {
    Synthetic(SyntheticSpec),
    Csv {
        path: String,
        sha256: String,
        target_column: String,
        feature_columns: Vec<String>,
        rejected_rows: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    /// Population MAE of the Bayes-optimal predictor, averaged over all rows.
    pub bayes_mae: Option<f64>,
    pub split_ratios: Vec<f64>,
    pub split_seed: u64,
    pub normalization: Option<Normalization>,
    pub clip_quantile: Option<f64>,
    pub clip_value: Option<f64>,
}

/// Known-law oracle for synthetic rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesOracle {
    /// Conditional median of `y` given `x`.
    pub prediction: Vec<f64>,
    /// `E|y − median| ` given `x`.
    pub expected_abs_dev: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    pub feature_names: Vec<String>,
    /// Row-major `n × dim`.
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub splits: Vec<SplitLabel>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bayes: Option<BayesOracle>,
}

/// Rows of one split, copied out of a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    pub dim: usize,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub bayes: Option<BayesOracle>,
}

impl Subset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Expected MAE of the Bayes-optimal predictor on these rows.
    pub fn bayes_mae(&self) -> Option<f64> {
        let b = self.bayes.as_ref()?;
        if b.expected_abs_dev.is_empty() {
            return None;
        }
        Some(b.expected_abs_dev.iter().sum::<f64>() / b.expected_abs_dev.len() as f64)
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Subset {
        let n = n.min(self.len());
        Subset {
            dim: self.dim,
            features: self.features[..n * self.dim].to_vec(),
            targets: self.targets[..n].to_vec(),
            bayes: self.bayes.as_ref().map(|b| BayesOracle {
                prediction: b.prediction[..n].to_vec(),
                expected_abs_dev: b.expected_abs_dev[..n].to_vec(),
            }),
        }
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn indices(&self, label: SplitLabel) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == label).collect()
    }

    pub fn subset(&self, label: SplitLabel) -> Subset {
        let idx = self.indices(label);
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in &idx {
            features.extend_from_slice(self.row(i));
        }
        Subset {
            dim: self.dim,
            features,
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            bayes: self.bayes.as_ref().map(|b| BayesOracle {
                prediction: idx.iter().map(|&i| b.prediction[i]).collect(),
                expected_abs_dev: idx.iter().map(|&i| b.expected_abs_dev[i]).collect(),
            }),
        }
    }

    pub fn split_sizes(&self) -> BTreeMap<SplitLabel, usize> {
        let mut m = BTreeMap::new();
        for s in &self.splits {
            *m.entry(*s).or_insert(0) += 1;
        }
        m
    }

    /// Reassigns split labels by a seeded permutation with contiguous blocks.
    pub fn split(mut self, ratios: &[f64], seed: u64) -> Result<Self> {
        self.splits = split_labels(self.len(), ratios, seed)?;
        self.provenance.split_ratios = ratios.to_vec();
        self.provenance.split_seed = seed;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.features.len() != n * self.dim || self.splits.len() != n {
            return Err(Error::Data(format!(
                "inconsistent dataset: {} targets, {} feature values (dim {}), {} split labels",
                n,
                self.features.len(),
                self.dim,
                self.splits.len()
            )));
        }
        if let Some(i) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature at row {}", i / self.dim.max(1))));
        }
        if let Some(i) = self.targets.iter().position(|y| !(y.is_finite() && *y >= 0.0)) {
            return Err(Error::Data(format!("target {} at row {i} is not a nonnegative real", self.targets[i])));
        }
        Ok(())
    }

    /// SHA-256 over dimensions, features, targets and split labels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        for v in self.features.iter().chain(&self.targets) {
            h.update(v.to_bits().to_le_bytes());
        }
        for s in &self.splits {
            h.update([*s as u8]);
        }
        hex(&h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CacheFile {
            content_sha256: self.content_hash(),
            dataset: self.clone(),
        };
        let text = serde_json::to_string(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CacheFile = serde_json::from_str(&text)?;
        file.dataset.validate()?;
        let actual = file.dataset.content_hash();
        if actual != file.content_sha256 {
            return Err(Error::Data(format!(
                "{}: content hash {actual} does not match recorded {}",
                path.display(),
                file.content_sha256
            )));
        }
        Ok(file.dataset)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    content_sha256: String,
    dataset: Dataset,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Labels for `n` rows: `ratios` has 1 to 3 parts (train, val, test).
pub fn split_labels(n: usize, ratios: &[f64], seed: u64) -> Result<Vec<SplitLabel>> {
    if ratios.is_empty() || ratios.len() > 3 {
        return Err(Error::Config(format!("split needs 1 to 3 ratios, got {}", ratios.len())));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {total}")));
    }
    let labels: &[SplitLabel] = match ratios.len() {
        1 => &[SplitLabel::Train],
        2 => &[SplitLabel::Train, SplitLabel::Test],
        _ => &[SplitLabel::Train, SplitLabel::Val, SplitLabel::Test],
    };
    let mut bounds = Vec::with_capacity(ratios.len());
    let mut cum = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cum += r;
        bounds.push(if i + 1 == ratios.len() { n } else { (cum * n as f64).round() as usize });
    }
    let mut start = 0;
    for (i, &b) in bounds.iter().enumerate() {
        if b <= start {
            return Err(Error::Data(format!("split `{}` would be empty for n = {n}", labels[i])));
        }
        start = b;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![SplitLabel::Train; n];
    let mut start = 0;
    for (i, &b) in bounds.iter().enumerate() {
        for &row in &perm[start..b] {
            out[row] = labels[i];
        }
        start = b;
    }
    Ok(out)
}

/// Sparse linear map `x ↦ Σ w_j x_j` over a few seed-chosen coordinates.
#[derive(Debug, Clone)]
struct SparseMap {
    terms: Vec<(usize, f64)>,
}

impl SparseMap {
    fn draw<R: Rng>(rng: &mut R, d: usize, nnz: usize) -> Self {
        let mut idx: Vec<usize> = (0..d).collect();
        idx.shuffle(rng);
        let nnz = nnz.min(d);
        let scale = 1.0 / (nnz as f64).sqrt();
        let terms = idx[..nnz]
            .iter()
            .map(|&j| {
                let w: f64 = rng.sample(StandardNormal);
                (j, w * scale)
            })
            .collect();
        Self { terms }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, w)| w * x[j]).sum()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

const MIXTURE_OFFSETS: [f64; 3] = [0.0, 1.2, 2.4];
const MIXTURE_SLOPE: f64 = 0.5;
const PRICE_POINTS: [f64; 6] = [9.9, 19.9, 29.9, 49.9, 99.9, 199.9];

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// `E|X − m|` for `X = exp(μ + σZ)`.
pub fn lognormal_abs_dev(mu: f64, sigma: f64, m: f64) -> f64 {
    if sigma == 0.0 {
        return (mu.exp() - m).abs();
    }
    let mean = (mu + 0.5 * sigma * sigma).exp();
    if m <= 0.0 {
        return mean - m;
    }
    let phi = std_normal();
    let z = (m.ln() - mu) / sigma;
    mean - m + 2.0 * (m * phi.cdf(z) - mean * phi.cdf(z - sigma))
}

/// Median and `E|y − median|` of `B · exp(μ + σZ)` with `B ~ Bernoulli(p)`.
pub fn zero_inflated_median(p: f64, mu: f64, sigma: f64) -> (f64, f64) {
    let m = if 1.0 - p >= 0.5 {
        0.0
    } else if sigma == 0.0 {
        mu.exp()
    } else {
        (mu + sigma * std_normal().inverse_cdf(1.0 - 0.5 / p)).exp()
    };
    let dev = (1.0 - p) * m + if p > 0.0 { p * lognormal_abs_dev(mu, sigma, m) } else { 0.0 };
    (m, dev)
}

/// Draws a synthetic dataset (all rows labelled train; see [`Dataset::split`]).
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, d, sigma) = (spec.n, spec.d, spec.sigma());
    let mut law_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_1a55_0000_0001);
    let mut row_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nnz = 3;
    let (gates, means): (Vec<SparseMap>, Vec<SparseMap>) = match spec.kind {
        SyntheticKind::Ziln => (
            vec![SparseMap::draw(&mut law_rng, d, nnz)],
            vec![SparseMap::draw(&mut law_rng, d, nnz)],
        ),
        SyntheticKind::LognormalMixture => (
            (0..3).map(|_| SparseMap::draw(&mut law_rng, d, nnz)).collect(),
            (0..3).map(|_| SparseMap::draw(&mut law_rng, d, nnz)).collect(),
        ),
        SyntheticKind::PriceClustered => (
            (0..PRICE_POINTS.len()).map(|_| SparseMap::draw(&mut law_rng, d, nnz)).collect(),
            Vec::new(),
        ),
    };
    let logit_base = {
        let p = spec.positive_rate;
        if p <= 0.0 {
            f64::NEG_INFINITY
        } else if p >= 1.0 {
            f64::INFINITY
        } else {
            (p / (1.0 - p)).ln()
        }
    };
    let mut features = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    let mut prediction = Vec::with_capacity(n);
    let mut expected_abs_dev = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| row_rng.sample(StandardNormal)).collect();
        let eps: f64 = row_rng.sample(StandardNormal);
        let u: f64 = row_rng.random();
        let (y, (m, dev)) = match spec.kind {
            SyntheticKind::Ziln => {
                let a = logit_base + gates[0].eval(&x);
                let p = if a.is_infinite() { if a > 0.0 { 1.0 } else { 0.0 } } else { 1.0 / (1.0 + (-a).exp()) };
                let mu = 1.0 + MIXTURE_SLOPE * means[0].eval(&x);
                let b = u < p;
                let y = if b { (mu + sigma * eps).exp() } else { 0.0 };
                (y, zero_inflated_median(p, mu, sigma))
            }
            SyntheticKind::LognormalMixture => {
                let scores: Vec<f64> = gates.iter().map(|g| g.eval(&x)).collect();
                let c = argmax(&scores);
                let mu = MIXTURE_OFFSETS[c] + MIXTURE_SLOPE * means[c].eval(&x);
                let y = (mu + sigma * eps).exp();
                (y, (mu.exp(), lognormal_abs_dev(mu, sigma, mu.exp())))
            }
            SyntheticKind::PriceClustered => {
                let scores: Vec<f64> = gates.iter().map(|g| g.eval(&x)).collect();
                let mu = PRICE_POINTS[argmax(&scores)].ln();
                let y = (mu + sigma * eps).exp();
                (y, (mu.exp(), lognormal_abs_dev(mu, sigma, mu.exp())))
            }
        };
        features.extend(x);
        targets.push(y);
        prediction.push(m);
        expected_abs_dev.push(dev);
    }
    let bayes_mae = expected_abs_dev.iter().sum::<f64>() / n as f64;
    let ds = Dataset {
        dim: d,
        feature_names: (0..d).map(|j| format!("x{j}")).collect(),
        features,
        targets,
        splits: vec![SplitLabel::Train; n],
        provenance: Provenance {
            source: Source::Synthetic(spec.clone()),
            bayes_mae: Some(bayes_mae),
            split_ratios: vec![1.0],
            split_seed: 0,
            normalization: None,
            clip_quantile: None,
            clip_value: None,
        },
        bayes: Some(BayesOracle {
            prediction,
            expected_abs_dev,
        }),
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub target_column: String,
    /// All other columns when `None`.
    pub feature_columns: Option<Vec<String>>,
    pub normalize: bool,
    pub split_ratios: Vec<f64>,
    pub split_seed: u64,
    /// Clip targets at this quantile of the training split.
    pub clip_quantile: Option<f64>,
}

impl CsvOptions {
    pub fn new(target_column: impl Into<String>) -> Self {
        Self {
            target_column: target_column.into(),
            feature_columns: None,
            normalize: false,
            split_ratios: vec![1.0],
            split_seed: 0,
            clip_quantile: None,
        }
    }
}

/// Linear-interpolated quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Reads a headered CSV, splits it, then clips and normalizes using training-split statistics.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let target_idx = col(&opts.target_column)?;
    let feature_columns: Vec<String> = match &opts.feature_columns {
        Some(cols) => cols.clone(),
        None => headers.iter().filter(|h| **h != opts.target_column).cloned().collect(),
    };
    let feature_idx: Vec<usize> = feature_columns.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let dim = feature_idx.len();
    if dim == 0 {
        return Err(Error::Data("no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut total = 0usize;
    let mut rejected = 0usize;
    for rec in reader.records() {
        total += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(_) => {
                rejected += 1;
                continue;
            }
        };
        let parse = |i: usize| rec.get(i).and_then(|s| s.trim().parse::<f64>().ok()).filter(|v| v.is_finite());
        let y = parse(target_idx).filter(|y| *y >= 0.0);
        let x: Option<Vec<f64>> = feature_idx.iter().map(|&i| parse(i)).collect();
        match (y, x) {
            (Some(y), Some(x)) => {
                targets.push(y);
                features.extend(x);
            }
            _ => rejected += 1,
        }
    }
    if total > 0 && rejected as f64 > 0.01 * total as f64 {
        return Err(Error::Data(format!(
            "{}: rejected {rejected} of {total} rows (limit 1%)",
            path.display()
        )));
    }
    if rejected > 0 {
        log::warn!("{}: rejected {rejected} of {total} rows", path.display());
    }
    let n = targets.len();
    let splits = split_labels(n, &opts.split_ratios, opts.split_seed)?;
    let train: Vec<usize> = (0..n).filter(|&i| splits[i] == SplitLabel::Train).collect();

    let mut clip_value = None;
    if let Some(q) = opts.clip_quantile {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Config(format!("clip quantile must lie in [0, 1], got {q}")));
        }
        let train_y: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
        let c = quantile(&train_y, q);
        targets.iter_mut().for_each(|y| *y = y.min(c));
        clip_value = Some(c);
    }

    let normalization = if opts.normalize {
        let mut mean = vec![0.0; dim];
        let mut std = vec![0.0; dim];
        for &i in &train {
            for j in 0..dim {
                mean[j] += features[i * dim + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= train.len() as f64);
        for &i in &train {
            for j in 0..dim {
                let c = features[i * dim + j] - mean[j];
                std[j] += c * c;
            }
        }
        for s in &mut std {
            *s = (*s / train.len() as f64).sqrt();
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }
        for row in features.chunks_mut(dim) {
            for j in 0..dim {
                row[j] = (row[j] - mean[j]) / std[j];
            }
        }
        Some(Normalization { mean, std })
    } else {
        None
    };

    let ds = Dataset {
        dim,
        feature_names: feature_columns.clone(),
        features,
        targets,
        splits,
        provenance: Provenance {
            source: Source::Csv {
                path: path.display().to_string(),
                sha256: hex(&Sha256::digest(&bytes)),
                target_column: opts.target_column.clone(),
                feature_columns,
                rejected_rows: rejected,
            },
            bayes_mae: None,
            split_ratios: opts.split_ratios.clone(),
            split_seed: opts.split_seed,
            normalization,
            clip_quantile: opts.clip_quantile,
            clip_value,
        },
        bayes: None,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes features and target as a headered CSV readable by [`load_csv`].
pub fn write_csv(ds: &Dataset, path: &Path, target_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = ds.feature_names.clone();
    header.push(target_column.to_string());
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.targets[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sample skewness.
pub fn skewness(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}
