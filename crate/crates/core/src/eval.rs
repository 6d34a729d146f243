//! Regression and ranking metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest sample count for which XAUC is computed over all ordered pairs.
pub const XAUC_EXACT_LIMIT: usize = 10_000;
pub const DEFAULT_XAUC_PAIRS: usize = 2_000_000;

/// Tie rule used when ordering by prediction for Norm-Gini.
pub const GINI_TIE_POLICY: &str = "stable: equal predictions keep original index order";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub xauc: f64,
    pub spearman_rho: f64,
    pub norm_gini: f64,
    pub norm_gini_pos: f64,
    pub spearman_rho_pos: f64,
    pub n_samples: usize,
    pub n_positive: usize,
    pub xauc_pairs_used: u64,
    pub xauc_exact: bool,
    pub xauc_seed: u64,
    pub tie_policy: String,
    /// Metrics that were undefined on this data and reported as 0.
    pub warnings: Vec<String>,
}

/// A metric value together with whether it was defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flagged {
    pub value: f64,
    pub defined: bool,
}

impl Flagged {
    fn ok(value: f64) -> Self {
        Self { value, defined: true }
    }

    fn undefined() -> Self {
        Self {
            value: 0.0,
            defined: false,
        }
    }
}

fn check_lengths(pred: &[f64], truth: &[f64], min: usize, op: &'static str) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            op,
            left: vec![pred.len()],
            right: vec![truth.len()],
        });
    }
    if pred.len() < min {
        return Err(Error::Data(format!("{op} needs at least {min} samples, got {}", pred.len())));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth, 1, "mae")?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Fenwick tree over ranks for counting strictly smaller predictions.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Dense ranks `0..` with equal values sharing a rank.
fn dense_ranks(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0; v.len()];
    let mut rank = 0;
    for (pos, &i) in idx.iter().enumerate() {
        if pos > 0 && v[i] != v[idx[pos - 1]] {
            rank += 1;
        }
        r[i] = rank;
    }
    r
}

/// Number of unordered pairs with `(y_i − y_j)(ŷ_i − ŷ_j) > 0`, in `O(N log N)`.
fn concordant_pairs(pred: &[f64], truth: &[f64]) -> u64 {
    let pr = dense_ranks(pred);
    let mut idx: Vec<usize> = (0..truth.len()).collect();
    idx.sort_by(|&a, &b| truth[a].total_cmp(&truth[b]));
    let mut tree = Fenwick(vec![0; pred.len() + 1]);
    let mut count = 0u64;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && truth[idx[end]] == truth[idx[start]] {
            end += 1;
        }
        for &i in &idx[start..end] {
            count += tree.prefix(pr[i]);
        }
        for &i in &idx[start..end] {
            tree.add(pr[i]);
        }
        start = end;
    }
    count
}

/// Exact XAUC over all `N(N−1)` ordered pairs; ties in either vector count 0.
pub fn xauc_exact(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth, 2, "xauc")?;
    let n = pred.len() as f64;
    Ok(2.0 * concordant_pairs(pred, truth) as f64 / (n * (n - 1.0)))
}

/// Estimate from `pairs` uniformly drawn ordered pairs `i ≠ j`.
pub fn xauc_sampled(pred: &[f64], truth: &[f64], pairs: usize, seed: u64) -> Result<f64> {
    check_lengths(pred, truth, 2, "xauc")?;
    if pairs == 0 {
        return Err(Error::Config("xauc pair budget must be >= 1".into()));
    }
    let n = pred.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        if (truth[i] - truth[j]) * (pred[i] - pred[j]) > 0.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs as f64)
}

/// XAUC, exact up to [`XAUC_EXACT_LIMIT`] samples and sampled beyond.
/// Returns the value and the number of ordered pairs evaluated.
pub fn xauc(pred: &[f64], truth: &[f64], max_pairs: Option<usize>, seed: u64) -> Result<(f64, u64)> {
    let n = pred.len() as u64;
    if pred.len() <= XAUC_EXACT_LIMIT {
        Ok((xauc_exact(pred, truth)?, n.saturating_mul(n.saturating_sub(1))))
    } else {
        let pairs = max_pairs.unwrap_or(DEFAULT_XAUC_PAIRS);
        Ok((xauc_sampled(pred, truth, pairs, seed)?, pairs as u64))
    }
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            r[i] = mid;
        }
        start = end;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> Flagged {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Flagged::undefined();
    }
    Flagged::ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of mid-ranks; undefined (0) when either side is constant.
pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<Flagged> {
    check_lengths(pred, truth, 2, "spearman")?;
    Ok(pearson(&mid_ranks(pred), &mid_ranks(truth)))
}

fn gini_raw(truth: &[f64], order_by: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..truth.len()).collect();
    // descending key, ties in original order
    idx.sort_by(|&a, &b| order_by[b].total_cmp(&order_by[a]));
    let total: f64 = truth.iter().sum();
    let n = truth.len() as f64;
    let mut cum = 0.0;
    let mut area = 0.0;
    for &i in &idx {
        cum += truth[i];
        area += cum / total;
    }
    area / n - (n + 1.0) / (2.0 * n)
}

/// Cumulative-gain Gini of the prediction ordering divided by that of the
/// ideal (truth) ordering.
pub fn norm_gini(pred: &[f64], truth: &[f64]) -> Result<Flagged> {
    check_lengths(pred, truth, 2, "norm_gini")?;
    if let Some(bad) = truth.iter().find(|&&t| t < 0.0 || !t.is_finite()) {
        return Err(Error::Data(format!("norm_gini needs nonnegative truth, got {bad}")));
    }
    if truth.iter().all(|&t| t == 0.0) {
        return Ok(Flagged::undefined());
    }
    let ideal = gini_raw(truth, truth);
    if ideal == 0.0 {
        return Ok(Flagged::undefined());
    }
    Ok(Flagged::ok(gini_raw(truth, pred) / ideal))
}

/// `(norm_gini, spearman)` restricted to samples with `truth > 0`.
pub fn positive_subset_metrics(pred: &[f64], truth: &[f64]) -> Result<(Flagged, Flagged)> {
    check_lengths(pred, truth, 0, "positive_subset_metrics")?;
    let (p, t): (Vec<f64>, Vec<f64>) = pred.iter().zip(truth).filter(|(_, &t)| t > 0.0).map(|(&p, &t)| (p, t)).unzip();
    if t.len() < 2 {
        return Ok((Flagged::undefined(), Flagged::undefined()));
    }
    Ok((norm_gini(&p, &t)?, spearman(&p, &t)?))
}

/// All metrics for one prediction vector.
pub fn evaluate(pred: &[f64], truth: &[f64], max_pairs: Option<usize>, seed: u64) -> Result<MetricsReport> {
    check_lengths(pred, truth, 2, "evaluate")?;
    let mut warnings = Vec::new();
    let mut take = |name: &str, f: Flagged| {
        if !f.defined {
            log::warn!("{name} is undefined on this data; reporting 0");
            warnings.push(format!("{name} undefined"));
        }
        f.value
    };
    let (x, pairs) = xauc(pred, truth, max_pairs, seed)?;
    let (gp, sp) = positive_subset_metrics(pred, truth)?;
    let spearman_rho = take("spearman_rho", spearman(pred, truth)?);
    let norm_gini = take("norm_gini", norm_gini(pred, truth)?);
    let norm_gini_pos = take("norm_gini_pos", gp);
    let spearman_rho_pos = take("spearman_rho_pos", sp);
    Ok(MetricsReport {
        mae: mae(pred, truth)?,
        xauc: x,
        spearman_rho,
        norm_gini,
        norm_gini_pos,
        spearman_rho_pos,
        n_samples: pred.len(),
        n_positive: truth.iter().filter(|&&t| t > 0.0).count(),
        xauc_pairs_used: pairs,
        xauc_exact: pred.len() <= XAUC_EXACT_LIMIT,
        xauc_seed: seed,
        tie_policy: GINI_TIE_POLICY.to_string(),
        warnings,
    })
}
