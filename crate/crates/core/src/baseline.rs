//! Reference models sharing the training loop: a Huber-loss MLP regressor and
//! an equal-frequency bucket classifier decoded by bucket-mean expectation.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{huber_mean, LossConfig, LossParts};
use crate::numerics::{Graph, Tensor, Var};
use crate::params::{xavier, ParamStore};
use crate::scalar::Scalar;
use crate::training::{Trainable, PREDICT_CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    HuberMlp,
    BucketCls,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::HuberMlp => "huber_mlp",
            BaselineKind::BucketCls => "bucket_cls",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "huber_mlp" => Ok(BaselineKind::HuberMlp),
            "bucket_cls" => Ok(BaselineKind::BucketCls),
            other => Err(Error::Config(format!("unknown baseline `{other}` (huber_mlp | bucket_cls)"))),
        }
    }
}

/// `d → hidden → width → out` with ReLU after the first two layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub width: usize,
}

fn init_mlp<T: Scalar>(cfg: &MlpConfig, out: usize, seed: u64) -> Result<ParamStore<T>> {
    if cfg.feature_dim == 0 || cfg.hidden == 0 || cfg.width == 0 || out == 0 {
        return Err(Error::Config("baseline dimensions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    s.push("w1", xavier(&mut rng, cfg.feature_dim, cfg.hidden));
    s.push("b1", Tensor::zeros(&[cfg.hidden]));
    s.push("w2", xavier(&mut rng, cfg.hidden, cfg.width));
    s.push("b2", Tensor::zeros(&[cfg.width]));
    s.push("w3", xavier(&mut rng, cfg.width, out));
    s.push("b3", Tensor::zeros(&[out]));
    Ok(s)
}

fn mlp3<T: Scalar>(g: &mut Graph<T>, x: Var, w: &[Var]) -> Result<Var> {
    let mut h = x;
    for layer in 0..3 {
        h = g.matmul(h, w[2 * layer])?;
        h = g.add_row(h, w[2 * layer + 1])?;
        if layer < 2 {
            h = g.relu(h);
        }
    }
    Ok(h)
}

fn grads_of<T: Scalar>(g: &Graph<T>, out: Var, vars: &[Var], store: &ParamStore<T>) -> Vec<Tensor<T>> {
    let mut grads = g.backward(out);
    vars.iter()
        .zip(store.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect()
}

fn chunked<T: Scalar>(
    store: &ParamStore<T>,
    dim: usize,
    features: &[f64],
    mut read: impl FnMut(&Graph<T>, Var, &mut Vec<f64>),
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(features.len() / dim.max(1));
    for rows in features.chunks(PREDICT_CHUNK * dim) {
        let mut g = Graph::new();
        let vars = store.attach(&mut g, false);
        let x = g.constant(Tensor::from_f64(&[rows.len() / dim, dim], rows)?);
        let o = mlp3(&mut g, x, &vars)?;
        read(&g, o, &mut out);
    }
    Ok(out)
}

/// MLP with a scalar head trained on Huber loss only.
#[derive(Debug, Clone, PartialEq)]
pub struct HuberMlp<T> {
    pub config: MlpConfig,
    pub store: ParamStore<T>,
}

impl<T: Scalar> HuberMlp<T> {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        let store = init_mlp(&config, 1, seed)?;
        Ok(Self { config, store })
    }
}

impl<T: Scalar> Trainable<T> for HuberMlp<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn batch_loss(
        &self,
        features: &[f64],
        targets: &[f64],
        _p_teacher: f64,
        _rng: &mut ChaCha8Rng,
        loss: &LossConfig,
    ) -> Result<(LossParts, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let vars = self.store.attach(&mut g, true);
        let x = g.constant(Tensor::from_f64(&[targets.len(), self.config.feature_dim], features)?);
        let pred = mlp3(&mut g, x, &vars)?;
        let l = huber_mean(&mut g, pred, targets, loss.delta)?;
        let v = g.value(l).item().as_f64();
        let parts = LossParts {
            l_gen: 0.0,
            l_reg: v,
            l_rnc: 0.0,
            total: v,
        };
        Ok((parts, grads_of(&g, l, &vars, &self.store)))
    }

    fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        chunked(&self.store, self.config.feature_dim, features, |g, o, out| {
            out.extend(g.value(o).data().iter().map(|v| v.as_f64()))
        })
    }
}

/// Equal-frequency buckets over training targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buckets {
    /// Inclusive upper edge of every bucket but the last, increasing.
    pub upper: Vec<f64>,
    /// Mean training target of each bucket.
    pub means: Vec<f64>,
}

impl Buckets {
    /// At most `b` buckets; ties that straddle a boundary merge buckets.
    pub fn fit(targets: &[f64], b: usize) -> Result<Self> {
        if b == 0 || targets.is_empty() {
            return Err(Error::Config("bucket count and target list must be non-empty".into()));
        }
        let mut v = targets.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mut upper = Vec::new();
        for k in 1..b {
            let edge = v[(k * n / b).max(1) - 1];
            if upper.last().is_none_or(|&u| edge > u) && edge < v[n - 1] {
                upper.push(edge);
            }
        }
        let mut sums = vec![0.0; upper.len() + 1];
        let mut counts = vec![0usize; upper.len() + 1];
        let mut tmp = Self {
            upper,
            means: Vec::new(),
        };
        for &y in &v {
            let i = tmp.bucket_of(y);
            sums[i] += y;
            counts[i] += 1;
        }
        tmp.means = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
        Ok(tmp)
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn bucket_of(&self, y: f64) -> usize {
        self.upper.partition_point(|&u| u < y)
    }

    /// MAE of replacing each target by its bucket mean.
    pub fn reconstruction_mae(&self, targets: &[f64]) -> f64 {
        targets.iter().map(|&y| (y - self.means[self.bucket_of(y)]).abs()).sum::<f64>() / targets.len() as f64
    }
}

/// Softmax classifier over [`Buckets`], predicting `Σ_b p_b · mean_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketCls<T> {
    pub config: MlpConfig,
    pub buckets: Buckets,
    pub store: ParamStore<T>,
}

impl<T: Scalar> BucketCls<T> {
    pub fn new(config: MlpConfig, buckets: Buckets, seed: u64) -> Result<Self> {
        let store = init_mlp(&config, buckets.len(), seed)?;
        Ok(Self { config, buckets, store })
    }
}

impl<T: Scalar> Trainable<T> for BucketCls<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn batch_loss(
        &self,
        features: &[f64],
        targets: &[f64],
        _p_teacher: f64,
        _rng: &mut ChaCha8Rng,
        _loss: &LossConfig,
    ) -> Result<(LossParts, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let vars = self.store.attach(&mut g, true);
        let x = g.constant(Tensor::from_f64(&[targets.len(), self.config.feature_dim], features)?);
        let logits = mlp3(&mut g, x, &vars)?;
        let lp = g.log_softmax(logits);
        let cols: Vec<usize> = targets.iter().map(|&y| self.buckets.bucket_of(y)).collect();
        let picked = g.pick_cols(lp, &cols)?;
        let s = g.sum(picked);
        let l = g.scale(s, T::lit(-1.0 / targets.len() as f64));
        let v = g.value(l).item().as_f64();
        let parts = LossParts {
            l_gen: v,
            l_reg: 0.0,
            l_rnc: 0.0,
            total: v,
        };
        Ok((parts, grads_of(&g, l, &vars, &self.store)))
    }

    fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        let means = self.buckets.means.clone();
        chunked(&self.store, self.config.feature_dim, features, |g, o, out| {
            let probs = crate::numerics::softmax_rows(g.value(o));
            for r in 0..probs.rows() {
                out.push(probs.row(r).iter().zip(&means).map(|(p, m)| p.as_f64() * m).sum());
            }
        })
    }
}
