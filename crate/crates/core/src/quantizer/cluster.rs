//! Exact 1-D clustering by dynamic programming over contiguous partitions.
//!
//! On sorted data the optimal k-means (and k-medians) clusters are contiguous
//! runs, so the optimum is a shortest-path over split points. The split
//! argmin is monotone in the prefix length, which lets each DP layer be
//! filled by divide and conquer in `O(n log n)` cost evaluations.
//!
//! Accumulation is done in `f64` regardless of the caller's scalar type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    /// Sum of squared deviations, centroid = cluster mean.
    Kmeans,
    /// Sum of absolute deviations, centroid = lower median.
    Kmedians,
}

impl std::fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClusterMethod::Kmeans => "kmeans",
            ClusterMethod::Kmedians => "kmedians",
        })
    }
}

impl std::str::FromStr for ClusterMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "kmeans" => Ok(ClusterMethod::Kmeans),
            "kmedians" => Ok(ClusterMethod::Kmedians),
            other => Err(format!("unknown clustering method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering<T> {
    /// Strictly increasing; length is the effective cluster count.
    pub centroids: Vec<T>,
    /// Cluster index of every input value.
    pub assignment: Vec<usize>,
    /// Objective value of the returned partition.
    pub cost: f64,
    pub requested_k: usize,
    /// Fewer distinct values than `requested_k`; surplus slots were dropped.
    pub collapsed: bool,
}

impl<T> Clustering<T> {
    pub fn effective_k(&self) -> usize {
        self.centroids.len()
    }
}

/// Distinct sorted values with multiplicities.
struct Runs {
    values: Vec<f64>,
    weights: Vec<usize>,
    /// prefix sums over runs: weight, weighted value, weighted square (values are centered)
    cw: Vec<f64>,
    cs: Vec<f64>,
    cq: Vec<f64>,
    cwi: Vec<usize>,
    center: f64,
}

impl Runs {
    fn new(sorted: &[f64]) -> Self {
        let mut values = Vec::new();
        let mut weights = Vec::new();
        for &v in sorted {
            if values.last() == Some(&v) {
                *weights.last_mut().unwrap() += 1;
            } else {
                values.push(v);
                weights.push(1);
            }
        }
        let center = sorted.iter().sum::<f64>() / sorted.len() as f64;
        let m = values.len();
        let (mut cw, mut cs, mut cq, mut cwi) = (
            Vec::with_capacity(m + 1),
            Vec::with_capacity(m + 1),
            Vec::with_capacity(m + 1),
            Vec::with_capacity(m + 1),
        );
        cw.push(0.0);
        cs.push(0.0);
        cq.push(0.0);
        cwi.push(0);
        for (&v, &w) in values.iter().zip(&weights) {
            let x = v - center;
            let wf = w as f64;
            cw.push(cw.last().unwrap() + wf);
            cs.push(cs.last().unwrap() + wf * x);
            cq.push(cq.last().unwrap() + wf * x * x);
            cwi.push(cwi.last().unwrap() + w);
        }
        Self {
            values,
            weights,
            cw,
            cs,
            cq,
            cwi,
            center,
        }
    }

    fn len(&self) -> usize {
        self.values.len()
    }

    /// Run index holding the lower median of runs `a..=b`.
    fn median_run(&self, a: usize, b: usize) -> usize {
        let count = self.cwi[b + 1] - self.cwi[a];
        let target = self.cwi[a] + (count - 1) / 2;
        // first run whose cumulative count exceeds `target`
        let mut lo = a;
        let mut hi = b;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.cwi[mid + 1] > target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    fn cost(&self, method: ClusterMethod, a: usize, b: usize) -> f64 {
        let w = self.cw[b + 1] - self.cw[a];
        let s = self.cs[b + 1] - self.cs[a];
        match method {
            ClusterMethod::Kmeans => {
                let q = self.cq[b + 1] - self.cq[a];
                (q - s * s / w).max(0.0)
            }
            ClusterMethod::Kmedians => {
                let m = self.median_run(a, b);
                let x = self.values[m] - self.center;
                let wl = self.cw[m + 1] - self.cw[a];
                let sl = self.cs[m + 1] - self.cs[a];
                let wr = self.cw[b + 1] - self.cw[m + 1];
                let sr = self.cs[b + 1] - self.cs[m + 1];
                ((x * wl - sl) + (sr - x * wr)).max(0.0)
            }
        }
    }

    fn centroid(&self, method: ClusterMethod, a: usize, b: usize) -> f64 {
        match method {
            ClusterMethod::Kmeans => {
                let mut s = 0.0;
                let mut w = 0usize;
                for r in a..=b {
                    s += self.values[r] * self.weights[r] as f64;
                    w += self.weights[r];
                }
                s / w as f64
            }
            ClusterMethod::Kmedians => self.values[self.median_run(a, b)],
        }
    }
}

/// Fills `cur[i]` for `i in lo..=hi` given the previous layer, knowing the
/// optimal split for each `i` lies in `opt_lo..=opt_hi`.
#[allow(clippy::too_many_arguments)]
fn fill_layer(
    runs: &Runs,
    method: ClusterMethod,
    clusters: usize,
    prev: &[f64],
    cur: &mut [f64],
    arg: &mut [usize],
    lo: usize,
    hi: usize,
    opt_lo: usize,
    opt_hi: usize,
) {
    if lo > hi {
        return;
    }
    let mid = (lo + hi) / 2;
    // prefix of length `mid`: last cluster covers runs t..mid-1, t >= clusters-1
    let start = opt_lo.max(clusters - 1);
    let end = opt_hi.min(mid - 1);
    let mut best = f64::INFINITY;
    let mut best_t = start;
    for t in start..=end {
        let c = prev[t] + runs.cost(method, t, mid - 1);
        if c < best {
            best = c;
            best_t = t;
        }
    }
    cur[mid] = best;
    arg[mid] = best_t;
    if mid > lo {
        fill_layer(runs, method, clusters, prev, cur, arg, lo, mid - 1, opt_lo, best_t);
    }
    fill_layer(runs, method, clusters, prev, cur, arg, mid + 1, hi, best_t, opt_hi);
}

/// Optimal partition of the runs into `k` contiguous groups, as run-index bounds.
fn optimal_segments(runs: &Runs, k: usize, method: ClusterMethod) -> Vec<(usize, usize)> {
    let m = runs.len();
    if k >= m {
        return (0..m).map(|i| (i, i)).collect();
    }
    let mut prev = vec![f64::INFINITY; m + 1];
    for (i, p) in prev.iter_mut().enumerate().skip(1) {
        *p = runs.cost(method, 0, i - 1);
    }
    prev[0] = 0.0;
    // args[j][i]: start of the last cluster for prefix i with j+1 clusters
    let mut args: Vec<Vec<usize>> = vec![vec![0; m + 1]];
    for clusters in 2..=k {
        let mut cur = vec![f64::INFINITY; m + 1];
        let mut arg = vec![0usize; m + 1];
        fill_layer(runs, method, clusters, &prev, &mut cur, &mut arg, clusters, m, clusters - 1, m - 1);
        args.push(arg);
        prev = cur;
    }
    let mut segments = Vec::with_capacity(k);
    let mut end = m;
    for clusters in (1..=k).rev() {
        let start = if clusters == 1 { 0 } else { args[clusters - 1][end] };
        segments.push((start, end - 1));
        end = start;
    }
    segments.reverse();
    segments
}

fn validate<T: Scalar>(values: &[T], k: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Data("cannot cluster an empty value list".into()));
    }
    if k == 0 {
        return Err(Error::Config("cluster count must be >= 1".into()));
    }
    let xs: Vec<f64> = values.iter().map(|v| v.as_f64()).collect();
    if let Some(i) = xs.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain {
            op: "cluster_1d",
            index: i,
            value: xs[i],
        });
    }
    if xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Data("cluster_1d expects values sorted ascending".into()));
    }
    Ok(xs)
}

/// Globally optimal 1-D clustering of `sorted` into at most `k` groups.
pub fn cluster_1d<T: Scalar>(sorted: &[T], k: usize, method: ClusterMethod) -> Result<Clustering<T>> {
    let xs = validate(sorted, k)?;
    let runs = Runs::new(&xs);
    let collapsed = k > runs.len();
    if collapsed {
        log::warn!(
            "{method}: {} distinct values for {k} clusters; using {} centroids",
            runs.len(),
            runs.len()
        );
    }
    let segments = optimal_segments(&runs, k.min(runs.len()), method);

    let centroids_f: Vec<f64> = segments.iter().map(|&(a, b)| runs.centroid(method, a, b)).collect();
    let mut run_cluster = vec![0usize; runs.len()];
    for (c, &(a, b)) in segments.iter().enumerate() {
        for r in a..=b {
            run_cluster[r] = c;
        }
    }
    let mut assignment = Vec::with_capacity(xs.len());
    let mut run = 0;
    for &x in &xs {
        while runs.values[run] != x {
            run += 1;
        }
        assignment.push(run_cluster[run]);
    }
    let cost = partition_cost(&xs, &assignment, &centroids_f, method);
    Ok(Clustering {
        centroids: centroids_f.iter().map(|&c| T::lit(c)).collect(),
        assignment,
        cost,
        requested_k: k,
        collapsed,
    })
}

/// Sum of squared errors; centroids are cluster means.
pub fn kmeans_1d_exact<T: Scalar>(sorted: &[T], k: usize) -> Result<Clustering<T>> {
    cluster_1d(sorted, k, ClusterMethod::Kmeans)
}

/// Sum of absolute errors; centroids are lower medians.
pub fn kmedians_1d_exact<T: Scalar>(sorted: &[T], k: usize) -> Result<Clustering<T>> {
    cluster_1d(sorted, k, ClusterMethod::Kmedians)
}

/// Objective of an explicit assignment, evaluated directly.
pub fn partition_cost(values: &[f64], assignment: &[usize], centroids: &[f64], method: ClusterMethod) -> f64 {
    values
        .iter()
        .zip(assignment)
        .map(|(&x, &c)| {
            let d = x - centroids[c];
            match method {
                ClusterMethod::Kmeans => d * d,
                ClusterMethod::Kmedians => d.abs(),
            }
        })
        .sum()
}
