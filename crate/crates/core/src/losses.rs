//! Training objectives: code-sequence NLL, per-step and total Huber
//! regression, Rank-N-Contrast on mixture embeddings, and the
//! scheduled-sampling probability.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_teacher_forced, FeedMask, ModelParams, ModelVars, StepVars};
use crate::numerics::{Graph, Tensor, Var};
use crate::quantizer::Codebook;
use crate::scalar::Scalar;

/// Pairwise similarity used inside Rank-N-Contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// `-‖a − b‖₂`
    #[default]
    NegEuclidean,
    /// `a·b / (‖a‖‖b‖)`, zero when either norm is zero.
    Cosine,
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Similarity::NegEuclidean => "neg_euclidean",
            Similarity::Cosine => "cosine",
        })
    }
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg_euclidean" | "euclidean" => Ok(Similarity::NegEuclidean),
            "cosine" => Ok(Similarity::Cosine),
            other => Err(Error::Config(format!("unknown similarity `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Huber threshold δ.
    pub delta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// RnC temperature τ.
    pub tau: f64,
    pub ss_k: f64,
    pub ss_t0: f64,
    pub similarity: Similarity,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            delta: 2.0,
            lambda1: 1.0,
            lambda2: 0.1,
            tau: 2.0,
            ss_k: 0.1,
            ss_t0: 10.0,
            similarity: Similarity::NegEuclidean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("delta", self.delta), ("tau", self.tau), ("ss_k", self.ss_k)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("loss {name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss {name} must be >= 0, got {v}")));
            }
        }
        if !self.ss_t0.is_finite() {
            return Err(Error::Config("ss_t0 must be finite".into()));
        }
        Ok(())
    }
}

/// `½(u−v)²` inside `|u−v| ≤ δ`, `δ|u−v| − ½δ²` outside.
pub fn huber(u: f64, v: f64, delta: f64) -> f64 {
    let a = (u - v).abs();
    if a <= delta {
        0.5 * a * a
    } else {
        delta * a - 0.5 * delta * delta
    }
}

/// `∂ huber(u, v) / ∂v`
pub fn huber_grad(u: f64, v: f64, delta: f64) -> f64 {
    (v - u).clamp(-delta, delta)
}

/// Batch mean of `huber(target_b, pred_b)` for a `[B × 1]` prediction.
pub fn huber_mean<T: Scalar>(g: &mut Graph<T>, pred: Var, targets: &[f64], delta: f64) -> Result<Var> {
    let p = g.value(pred);
    if p.len() != targets.len() || targets.is_empty() {
        return Err(Error::Dimension {
            op: "huber_mean",
            left: p.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    let preds = p.to_f64_vec();
    let n = targets.len() as f64;
    let value: f64 = preds.iter().zip(targets).map(|(&v, &u)| huber(u, v, delta)).sum::<f64>() / n;
    let shape = p.shape().to_vec();
    let local: Vec<f64> = preds.iter().zip(targets).map(|(&v, &u)| huber_grad(u, v, delta) / n).collect();
    Ok(g.custom(
        &[pred],
        Tensor::scalar(T::lit(value)),
        Box::new(move |up| {
            let s = up.item().as_f64();
            let data = local.iter().map(|&d| T::lit(d * s)).collect();
            vec![Some(Tensor::new(shape.clone(), data).expect("huber grad shape"))]
        }),
    ))
}

/// `−(1/B) Σ_b Σ_l log p_l[b, gt[b][l]]` from the stabilized log-softmax.
pub fn nll_loss<T: Scalar>(g: &mut Graph<T>, steps: &[StepVars], gt: &[Vec<usize>]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (l, s) in steps.iter().enumerate() {
        let cols: Vec<usize> = gt.iter().map(|r| r[l]).collect();
        let picked = g.pick_cols(s.log_probs, &cols)?;
        let total = g.sum(picked);
        acc = Some(match acc {
            None => total,
            Some(a) => g.add(a, total)?,
        });
    }
    let acc = acc.ok_or_else(|| Error::Config("nll_loss needs at least one step".into()))?;
    Ok(g.scale(acc, T::lit(-1.0 / gt.len().max(1) as f64)))
}

/// `mean_b [huber(y, Σ_l ŷ_l) + Σ_l huber(q_l, ŷ_l)]`.
pub fn reg_loss<T: Scalar>(
    g: &mut Graph<T>,
    steps: &[StepVars],
    targets: &[f64],
    code_values: &[Vec<f64>],
    delta: f64,
) -> Result<Var> {
    let mut total_pred = steps[0].value;
    for s in &steps[1..] {
        total_pred = g.add(total_pred, s.value)?;
    }
    let mut loss = huber_mean(g, total_pred, targets, delta)?;
    for (l, s) in steps.iter().enumerate() {
        let q: Vec<f64> = code_values.iter().map(|r| r[l]).collect();
        let term = huber_mean(g, s.value, &q, delta)?;
        loss = g.add(loss, term)?;
    }
    Ok(loss)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}

fn similarity_matrix(emb: &[f64], n: usize, dim: usize, sim: Similarity) -> Vec<f64> {
    let row = |i: usize| &emb[i * dim..(i + 1) * dim];
    let norms: Vec<f64> = (0..n).map(|i| row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for k in i + 1..n {
            let v = match sim {
                Similarity::NegEuclidean => {
                    -row(i)
                        .iter()
                        .zip(row(k))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                }
                Similarity::Cosine => {
                    let d = norms[i] * norms[k];
                    if d == 0.0 {
                        0.0
                    } else {
                        row(i).iter().zip(row(k)).map(|(a, b)| a * b).sum::<f64>() / d
                    }
                }
            };
            s[i * n + k] = v;
            s[k * n + i] = v;
        }
    }
    s
}

/// Value and `∂loss/∂s_ik` (flattened `n × n`, diagonal zero).
fn rnc_core(sim: &[f64], labels: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let n = labels.len();
    let mut grad = vec![0.0; n * n];
    let c = 1.0 / (n as f64 * (n - 1) as f64);
    let mut total = 0.0;
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    let mut group_of = vec![0usize; n];
    let mut group_start: Vec<usize> = Vec::new();
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&k| k != i));
        let dist = |k: usize| (labels[i] - labels[k]).abs();
        order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
        group_start.clear();
        for (pos, &k) in order.iter().enumerate() {
            if pos == 0 || dist(k) != dist(order[pos - 1]) {
                group_start.push(pos);
            }
            group_of[k] = group_start.len() - 1;
        }
        let groups = group_start.len();
        let z = |k: usize| sim[i * n + k] / tau;
        // log of the denominator for each label-distance group: suffix log-sum-exp
        let mut log_den = vec![f64::NEG_INFINITY; groups];
        let mut run = f64::NEG_INFINITY;
        for gi in (0..groups).rev() {
            let end = if gi + 1 < groups { group_start[gi + 1] } else { order.len() };
            for &k in &order[group_start[gi]..end] {
                run = log_add(run, z(k));
            }
            log_den[gi] = run;
        }
        let mut anchor = 0.0;
        for &j in &order {
            anchor += z(j) - log_den[group_of[j]];
        }
        total -= anchor / (n - 1) as f64;
        // prefix log-sum-exp of 1/den over j with d_ij ≤ d_ik
        let mut prefix = f64::NEG_INFINITY;
        for gi in 0..groups {
            let end = if gi + 1 < groups { group_start[gi + 1] } else { order.len() };
            let members = (end - group_start[gi]) as f64;
            prefix = log_add(prefix, members.ln() - log_den[gi]);
            for &k in &order[group_start[gi]..end] {
                grad[i * n + k] += c / tau * ((z(k) + prefix).exp() - 1.0);
            }
        }
    }
    (total / n as f64, grad)
}

/// Rank-N-Contrast value for row-major embeddings `n × dim`.
pub fn rnc_value(emb: &[f64], dim: usize, labels: &[f64], tau: f64, sim: Similarity) -> f64 {
    let n = labels.len();
    if n < 2 {
        return 0.0;
    }
    rnc_core(&similarity_matrix(emb, n, dim, sim), labels, tau).0
}

/// Rank-N-Contrast over the rows of `emb` (`[B × dim]`) as a fused graph node.
///
/// For anchor `i` and every `j ≠ i` the positive `j` is contrasted against all
/// `k ≠ i` at least as far from `y_i` in label space as `j`.
pub fn rnc_loss<T: Scalar>(g: &mut Graph<T>, emb: Var, labels: &[f64], tau: f64, sim: Similarity) -> Result<Var> {
    let e = g.value(emb);
    let (n, dim) = (e.rows(), e.cols());
    if n != labels.len() {
        return Err(Error::Dimension {
            op: "rnc_loss",
            left: e.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if n < 2 {
        log::warn!("rank-contrastive loss needs a batch of at least 2; using 0");
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let x = e.to_f64_vec();
    let s = similarity_matrix(&x, n, dim, sim);
    let (value, ds) = rnc_core(&s, labels, tau);
    let shape = e.shape().to_vec();
    Ok(g.custom(
        &[emb],
        Tensor::scalar(T::lit(value)),
        Box::new(move |up| {
            let scale = up.item().as_f64();
            let mut out = vec![0.0f64; n * dim];
            let row = |i: usize| &x[i * dim..(i + 1) * dim];
            let norm = |i: usize| row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let norms: Vec<f64> = (0..n).map(norm).collect();
            for i in 0..n {
                for k in i + 1..n {
                    // s is symmetric; both anchors contribute
                    let w = (ds[i * n + k] + ds[k * n + i]) * scale;
                    if w == 0.0 {
                        continue;
                    }
                    match sim {
                        Similarity::NegEuclidean => {
                            let d = -s[i * n + k];
                            if d == 0.0 {
                                continue;
                            }
                            for t in 0..dim {
                                let u = (row(i)[t] - row(k)[t]) / d;
                                out[i * dim + t] -= w * u;
                                out[k * dim + t] += w * u;
                            }
                        }
                        Similarity::Cosine => {
                            let (na, nb) = (norms[i], norms[k]);
                            if na == 0.0 || nb == 0.0 {
                                continue;
                            }
                            let sv = s[i * n + k];
                            for t in 0..dim {
                                let (a, b) = (row(i)[t], row(k)[t]);
                                out[i * dim + t] += w * (b / (na * nb) - sv * a / (na * na));
                                out[k * dim + t] += w * (a / (na * nb) - sv * b / (nb * nb));
                            }
                        }
                    }
                }
            }
            let data = out.into_iter().map(T::lit).collect();
            vec![Some(Tensor::new(shape.clone(), data).expect("rnc grad shape"))]
        }),
    ))
}

/// `sigmoid(−k(t − t0))`: probability of feeding the ground-truth embedding at epoch `t`.
pub fn ss_probability(t: f64, k: f64, t0: f64) -> f64 {
    let a = -k * (t - t0);
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// One training mini-batch with its codebook encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    /// `[B × d]`
    pub x: Tensor<T>,
    pub y: Vec<f64>,
    /// Vocabulary index of each sample's code at each level.
    pub codes: Vec<Vec<usize>>,
    /// Centroid value of each sample's code at each level.
    pub code_values: Vec<Vec<f64>>,
}

impl<T: Scalar> Batch<T> {
    /// `features` is row-major `targets.len() × d`.
    pub fn new(features: &[f64], targets: &[f64], cb: &Codebook) -> Result<Self> {
        let n = targets.len();
        if n == 0 || features.len() % n != 0 {
            return Err(Error::Dimension {
                op: "batch",
                left: vec![features.len()],
                right: vec![n],
            });
        }
        let d = features.len() / n;
        let mut codes = Vec::with_capacity(n);
        let mut code_values = Vec::with_capacity(n);
        for &y in targets {
            let cs = cb.encode(y);
            codes.push(cs.vocab_indices());
            code_values.push(cs.values());
        }
        Ok(Self {
            x: Tensor::from_f64(&[n, d], features)?,
            y: targets.to_vec(),
            codes,
            code_values,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub l_gen: f64,
    pub l_reg: f64,
    pub l_rnc: f64,
    pub total: f64,
}

impl LossParts {
    pub fn all_finite(&self) -> bool {
        [self.l_gen, self.l_reg, self.l_rnc, self.total].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub l_gen: Var,
    pub l_reg: Var,
    pub l_rnc: Var,
}

/// Builds `L_gen + λ1·L_reg + λ2·L_rnc` on `g` for an attached model.
pub fn loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    mv: &ModelVars,
    batch: &Batch<T>,
    cfg: &LossConfig,
    mask: &FeedMask,
) -> Result<LossVars> {
    let x = g.constant(batch.x.clone());
    let steps = forward_teacher_forced(g, &params.config, mv, x, Some(&batch.codes), mask)?;
    let l_gen = nll_loss(g, &steps, &batch.codes)?;
    let l_reg = reg_loss(g, &steps, &batch.y, &batch.code_values, cfg.delta)?;
    let mixtures: Vec<Var> = steps.iter().map(|s| s.mixture).collect();
    let emb = g.concat_cols(&mixtures)?;
    let l_rnc = rnc_loss(g, emb, &batch.y, cfg.tau, cfg.similarity)?;
    let a = g.scale(l_reg, T::lit(cfg.lambda1));
    let b = g.scale(l_rnc, T::lit(cfg.lambda2));
    let total = g.add(l_gen, a)?;
    let total = g.add(total, b)?;
    Ok(LossVars {
        total,
        l_gen,
        l_reg,
        l_rnc,
    })
}

pub(crate) fn read_parts<T: Scalar>(g: &Graph<T>, v: &LossVars) -> LossParts {
    LossParts {
        l_gen: g.value(v.l_gen).item().as_f64(),
        l_reg: g.value(v.l_reg).item().as_f64(),
        l_rnc: g.value(v.l_rnc).item().as_f64(),
        total: g.value(v.total).item().as_f64(),
    }
}

/// Loss components and one gradient per parameter tensor from a single backward pass.
pub fn total_loss<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    cfg: &LossConfig,
    mask: &FeedMask,
) -> Result<(LossParts, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let mv = params.attach(&mut g, true);
    let lv = loss_graph(&mut g, params, &mv, batch, cfg, mask)?;
    let parts = read_parts(&g, &lv);
    let mut grads = g.backward(lv.total);
    let out = mv
        .vars
        .iter()
        .zip(params.store.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((parts, out))
}
