//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use rqreg::quantizer::ClusterMethod;

/// Cost of one cluster under `method`, centroid chosen by exhaustive search
/// over the cluster's own values for L1 and by the mean for L2.
fn cluster_cost(vals: &[f64], method: ClusterMethod) -> f64 {
    match method {
        ClusterMethod::Kmeans => {
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - m) * (v - m)).sum()
        }
        ClusterMethod::Kmedians => vals
            .iter()
            .map(|&c| vals.iter().map(|v| (v - c).abs()).sum::<f64>())
            .fold(f64::INFINITY, f64::min),
    }
}

/// Minimum cost over every split of `sorted` into at most `k` contiguous
/// non-empty groups, enumerating all `2^(n-1)` cut sets.
pub fn brute_cluster_cost(sorted: &[f64], k: usize, method: ClusterMethod) -> f64 {
    let n = sorted.len();
    let mut best = f64::INFINITY;
    for cuts in 0u32..(1 << (n - 1)) {
        if cuts.count_ones() as usize + 1 > k {
            continue;
        }
        let mut cost = 0.0;
        let mut start = 0;
        for i in 0..n {
            if i == n - 1 || cuts & (1 << i) != 0 {
                cost += cluster_cost(&sorted[start..=i], method);
                start = i + 1;
            }
        }
        best = best.min(cost);
    }
    best
}

/// Ordered pairs with strictly concordant signs over `N(N−1)`.
pub fn brute_xauc(pred: &[f64], truth: &[f64]) -> f64 {
    let n = pred.len();
    let mut hits = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && (truth[i] - truth[j]) * (pred[i] - pred[j]) > 0.0 {
                hits += 1;
            }
        }
    }
    hits as f64 / (n * (n - 1)) as f64
}

/// 1-based mid-ranks by counting smaller and equal elements.
pub fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Pearson correlation of [`brute_ranks`]; `None` when either side is constant.
pub fn brute_spearman(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let (a, b) = (brute_ranks(pred), brute_ranks(truth));
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Gini from each sample's position in the descending order of `key`
/// (equal keys keep index order): `Σ_k cum_k = Σ_i t_i·(n − pos_i)`.
fn brute_gini_raw(truth: &[f64], key: &[f64]) -> f64 {
    let n = truth.len();
    let total: f64 = truth.iter().sum();
    let mut lorenz = 0.0;
    for i in 0..n {
        let pos = (0..n).filter(|&j| key[j] > key[i] || (key[j] == key[i] && j < i)).count();
        lorenz += truth[i] * (n - pos) as f64;
    }
    let nf = n as f64;
    lorenz / (total * nf) - (nf + 1.0) / (2.0 * nf)
}

/// `None` when the ideal Gini is zero (all-zero or constant truth).
pub fn brute_norm_gini(pred: &[f64], truth: &[f64]) -> Option<f64> {
    if truth.iter().all(|&t| t == 0.0) {
        return None;
    }
    let ideal = brute_gini_raw(truth, truth);
    (ideal != 0.0).then(|| brute_gini_raw(truth, pred) / ideal)
}

fn similarity(a: &[f64], b: &[f64], cosine: bool) -> f64 {
    if cosine {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    } else {
        -a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

/// Rank-N-Contrast by enumerating every `(i, j, k)` triple.
pub fn brute_rnc(emb: &[f64], dim: usize, labels: &[f64], tau: f64, cosine: bool) -> f64 {
    let b = labels.len();
    if b < 2 {
        return 0.0;
    }
    let e = |i: usize| &emb[i * dim..(i + 1) * dim];
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            if j == i {
                continue;
            }
            let num = (similarity(e(i), e(j), cosine) / tau).exp();
            let gap = (labels[i] - labels[j]).abs();
            let den: f64 = (0..b)
                .filter(|&k| k != i && (labels[i] - labels[k]).abs() >= gap)
                .map(|k| (similarity(e(i), e(k), cosine) / tau).exp())
                .sum();
            total -= (num / den).ln() / (b - 1) as f64;
        }
    }
    total / b as f64
}

/// Searches residuals within 256 ulps of `v - s` for one that adds back exactly.
pub fn residual_exists(s: f64, v: f64) -> bool {
    let mut r = v - s;
    for _ in 0..256 {
        r = r.next_down();
    }
    (0..512).any(|_| {
        r = r.next_up();
        s + r == v
    })
}
