use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cluster::{cluster_1d, ClusterMethod};
use crate::error::{Error, Result};

/// L levels of scalar centroids addressed through one shared vocabulary.
///
/// Centroid `k` of level `l` (both zero-based) has vocabulary index
/// `l * per_level_size + k`; index `levels * per_level_size` is `<start>`.
/// A level with fewer distinct residuals than `per_level_size` keeps its
/// smaller centroid list and leaves the surplus slots unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CodebookFile", into = "CodebookFile")]
pub struct Codebook {
    levels: usize,
    per_level_size: usize,
    methods: Vec<ClusterMethod>,
    centroids: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    levels: usize,
    per_level_size: usize,
    method_per_level: Vec<ClusterMethod>,
    centroids: Vec<Vec<f64>>,
}

impl TryFrom<CodebookFile> for Codebook {
    type Error = String;

    fn try_from(f: CodebookFile) -> std::result::Result<Self, String> {
        Codebook::from_parts(f.per_level_size, f.method_per_level, f.centroids)
            .and_then(|cb| {
                if cb.levels == f.levels {
                    Ok(cb)
                } else {
                    Err(Error::Data(format!(
                        "levels = {} but {} centroid lists",
                        f.levels, cb.levels
                    )))
                }
            })
            .map_err(|e| e.to_string())
    }
}

impl From<Codebook> for CodebookFile {
    fn from(cb: Codebook) -> Self {
        CodebookFile {
            levels: cb.levels,
            per_level_size: cb.per_level_size,
            method_per_level: cb.methods,
            centroids: cb.centroids,
        }
    }
}

/// One step of a code sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Code {
    pub level: usize,
    pub vocab_index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSequence {
    pub codes: Vec<Code>,
    pub final_residual: f64,
    /// Sum of the code values.
    pub reconstructed: f64,
}

impl CodeSequence {
    pub fn vocab_indices(&self) -> Vec<usize> {
        self.codes.iter().map(|c| c.vocab_index).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.codes.iter().map(|c| c.value).collect()
    }
}

/// Statistics gathered while building a codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    /// Sum of squared residuals before level 1 (the targets themselves), then after each level.
    pub residual_sse: Vec<f64>,
    pub effective_sizes: Vec<usize>,
    pub collapsed_levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub mae: f64,
    pub sse: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub n: usize,
    pub per_level: Vec<LevelStats>,
    pub max_abs_residual: f64,
}

/// `y - s`, nudged by ulps until `s + r == y` holds in floating point when reachable.
fn exact_residual(y: f64, s: f64) -> f64 {
    let mut r = y - s;
    for _ in 0..64 {
        let back = s + r;
        if back == y {
            return r;
        }
        r = if back < y { r.next_up() } else { r.next_down() };
    }
    y - s
}

impl Codebook {
    pub fn from_parts(per_level_size: usize, methods: Vec<ClusterMethod>, centroids: Vec<Vec<f64>>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::Data("codebook needs at least one level".into()));
        }
        if per_level_size == 0 {
            return Err(Error::Data("per_level_size must be >= 1".into()));
        }
        if methods.len() != centroids.len() {
            return Err(Error::Data(format!(
                "{} methods for {} levels",
                methods.len(),
                centroids.len()
            )));
        }
        for (l, level) in centroids.iter().enumerate() {
            if level.is_empty() || level.len() > per_level_size {
                return Err(Error::Data(format!(
                    "level {l} has {} centroids (allowed 1..={per_level_size})",
                    level.len()
                )));
            }
            if level.iter().any(|c| !c.is_finite()) {
                return Err(Error::Data(format!("level {l} has a non-finite centroid")));
            }
            if level.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Data(format!("level {l} centroids are not strictly increasing")));
            }
        }
        Ok(Self {
            levels: centroids.len(),
            per_level_size,
            methods,
            centroids,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn per_level_size(&self) -> usize {
        self.per_level_size
    }

    pub fn methods(&self) -> &[ClusterMethod] {
        &self.methods
    }

    pub fn centroids(&self, level: usize) -> &[f64] {
        &self.centroids[level]
    }

    pub fn effective_sizes(&self) -> Vec<usize> {
        self.centroids.iter().map(Vec::len).collect()
    }

    /// `L·K` code slots plus `<start>`.
    pub fn vocab_size(&self) -> usize {
        self.levels * self.per_level_size + 1
    }

    pub fn start_index(&self) -> usize {
        self.levels * self.per_level_size
    }

    pub fn vocab_index(&self, level: usize, k: usize) -> usize {
        level * self.per_level_size + k
    }

    /// Centroid value behind a vocabulary index; `None` for `<start>` and unused slots.
    pub fn value_of(&self, vocab_index: usize) -> Option<f64> {
        let level = vocab_index / self.per_level_size;
        let k = vocab_index % self.per_level_size;
        self.centroids.get(level).and_then(|c| c.get(k)).copied()
    }

    /// Nearest centroid of `level` to `r`; equidistant candidates resolve to the smaller one.
    pub fn nearest(&self, level: usize, r: f64) -> (usize, f64) {
        let cs = &self.centroids[level];
        let hi = cs.partition_point(|&c| c < r);
        if hi == 0 {
            return (0, cs[0]);
        }
        if hi == cs.len() {
            return (hi - 1, cs[hi - 1]);
        }
        let (lo_c, hi_c) = (cs[hi - 1], cs[hi]);
        if (r - lo_c).abs() <= (hi_c - r).abs() {
            (hi - 1, lo_c)
        } else {
            (hi, hi_c)
        }
    }

    /// Greedy residual encoding, one nearest centroid per level.
    pub fn encode(&self, y: f64) -> CodeSequence {
        let mut residual = y;
        let mut codes = Vec::with_capacity(self.levels);
        let mut reconstructed = 0.0;
        for level in 0..self.levels {
            let (k, value) = self.nearest(level, residual);
            codes.push(Code {
                level,
                vocab_index: self.vocab_index(level, k),
                value,
            });
            residual -= value;
            reconstructed += value;
        }
        CodeSequence {
            codes,
            final_residual: exact_residual(y, reconstructed),
            reconstructed,
        }
    }

    /// Residual magnitudes after each level for one target.
    fn residual_path(&self, y: f64) -> Vec<f64> {
        let mut residual = y;
        (0..self.levels)
            .map(|level| {
                residual -= self.nearest(level, residual).1;
                residual
            })
            .collect()
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

/// Sum of the code values of a sequence.
pub fn decode(cs: &CodeSequence) -> f64 {
    cs.codes.iter().fold(0.0, |acc, c| acc + c.value)
}

/// Residual k-means codebook construction.
///
/// Level 1 clusters the targets with `first_level`; each later level clusters
/// the residuals left by nearest-centroid quantization at the level before,
/// always with the squared-error objective.
pub fn build_codebook_with_report(
    targets: &[f64],
    levels: usize,
    k: usize,
    first_level: ClusterMethod,
) -> Result<(Codebook, BuildReport)> {
    if targets.is_empty() {
        return Err(Error::Data("cannot build a codebook from no targets".into()));
    }
    if levels == 0 || k == 0 {
        return Err(Error::Config(format!("levels ({levels}) and K ({k}) must be >= 1")));
    }
    let mut residuals = targets.to_vec();
    let mut centroids = Vec::with_capacity(levels);
    let mut methods = Vec::with_capacity(levels);
    let mut residual_sse = vec![residuals.iter().map(|r| r * r).sum::<f64>()];
    let mut collapsed_levels = Vec::new();

    for level in 0..levels {
        let method = if level == 0 { first_level } else { ClusterMethod::Kmeans };
        let mut sorted = residuals.clone();
        sorted.sort_by(f64::total_cmp);
        let clustering = cluster_1d(&sorted, k, method)?;
        if clustering.collapsed {
            collapsed_levels.push(level);
        }
        centroids.push(clustering.centroids);
        methods.push(method);
        let partial = Codebook::from_parts(k, methods.clone(), centroids.clone())?;
        for r in residuals.iter_mut() {
            *r -= partial.nearest(level, *r).1;
        }
        let sse: f64 = residuals.iter().map(|r| r * r).sum();
        if method == ClusterMethod::Kmeans {
            let prev = *residual_sse.last().unwrap();
            debug_assert!(
                sse <= prev * (1.0 + 1e-9) + 1e-12,
                "level {level} increased residual SSE: {prev} -> {sse}"
            );
        }
        residual_sse.push(sse);
    }
    let cb = Codebook::from_parts(k, methods, centroids)?;
    let report = BuildReport {
        residual_sse,
        effective_sizes: cb.effective_sizes(),
        collapsed_levels,
    };
    Ok((cb, report))
}

pub fn build_codebook(targets: &[f64], levels: usize, k: usize, first_level: ClusterMethod) -> Result<Codebook> {
    build_codebook_with_report(targets, levels, k, first_level).map(|(cb, _)| cb)
}

/// Per-level reconstruction error of `targets` under `cb`.
pub fn reconstruction_report(targets: &[f64], cb: &Codebook) -> Result<ReconstructionReport> {
    if targets.is_empty() {
        return Err(Error::Data("reconstruction report needs targets".into()));
    }
    let n = targets.len();
    let mut abs_sum = vec![0.0; cb.levels()];
    let mut sq_sum = vec![0.0; cb.levels()];
    let mut max_abs = vec![0.0f64; cb.levels()];
    for &y in targets {
        for (l, r) in cb.residual_path(y).into_iter().enumerate() {
            abs_sum[l] += r.abs();
            sq_sum[l] += r * r;
            max_abs[l] = max_abs[l].max(r.abs());
        }
    }
    let per_level: Vec<LevelStats> = (0..cb.levels())
        .map(|l| LevelStats {
            level: l + 1,
            mae: abs_sum[l] / n as f64,
            sse: sq_sum[l],
            max_abs: max_abs[l],
        })
        .collect();
    let max_abs_residual = per_level.last().map(|s| s.max_abs).unwrap_or(0.0);
    Ok(ReconstructionReport {
        n,
        per_level,
        max_abs_residual,
    })
}
