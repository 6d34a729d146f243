//! Adam training loop with scheduled sampling, seeded per-batch RNG streams,
//! validation-MAE model selection and resumable state.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainSnapshot};
use crate::data::Subset;
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{ss_probability, total_loss, Batch, LossConfig, LossParts};
use crate::model::{predict, FeedMask, ModelParams};
use crate::numerics::Tensor;
use crate::params::{NamedArray, ParamStore};
use crate::quantizer::Codebook;
use crate::scalar::{Precision, Scalar};

/// Teacher-forcing probability as a function of the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Schedule {
    /// `sigmoid(−k(t − t0))` with `k`, `t0` from the loss config.
    InverseSigmoid,
    /// Fixed probability: 1 is pure teacher forcing, 0 pure self-feeding.
    Constant { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub early_stop_patience: Option<usize>,
    pub eval_every: usize,
    pub max_grad_norm: Option<f64>,
    pub schedule: Schedule,
    pub precision: Precision,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 256,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            early_stop_patience: None,
            eval_every: 1,
            max_grad_norm: None,
            schedule: Schedule::InverseSigmoid,
            precision: Precision::F64,
            loss: LossConfig::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            batch_size: 1024,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size and eval_every must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam eps must be > 0".into()));
        }
        if let Schedule::Constant { p } = self.schedule {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("constant schedule p must lie in [0, 1], got {p}")));
            }
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::Config("max_grad_norm must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Teacher-forcing probability at zero-based epoch `t`.
    pub fn teacher_probability(&self, t: usize) -> f64 {
        match self.schedule {
            Schedule::InverseSigmoid => ss_probability(t as f64, self.loss.ss_k, self.loss.ss_t0),
            Schedule::Constant { p } => p,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, epoch, batch)`; `batch = u64::MAX` is the epoch shuffle.
pub fn stream_rng(seed: u64, epoch: u64, batch: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ epoch) ^ batch))
}

/// One Bernoulli(`p`) draw per sample per step.
pub fn draw_feed_mask<R: Rng>(rng: &mut R, rows: usize, levels: usize, p: f64) -> FeedMask {
    FeedMask::from_fn(rows, levels, |_, _| rng.random::<f64>() < p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam step applied in place.
pub fn adam_update<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Dimension {
            op: "adam_update",
            left: vec![params.len()],
            right: vec![grads.len()],
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let (one, eps) = (T::one(), T::lit(eps));
    let c1 = T::lit(1.0 - beta1.powi(t));
    let c2 = T::lit(1.0 - beta2.powi(t));
    let lr = T::lit(lr);
    for (i, g) in grads.iter().enumerate() {
        let p = params.get_mut(i);
        if p.shape() != g.shape() {
            return Err(Error::Dimension {
                op: "adam_update",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gk), mk), vk) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mk = b1 * *mk + (one - b1) * gk;
            *vk = b2 * *vk + (one - b2) * gk * gk;
            let mh = *mk / c1;
            let vh = *vk / c2;
            *w = *w - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

fn clip_gradients<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
}

/// A model the training loop can optimize.
pub trait Trainable<T: Scalar>: Clone {
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;

    /// Loss components and gradients for one batch of row-major features.
    fn batch_loss(
        &self,
        features: &[f64],
        targets: &[f64],
        p_teacher: f64,
        rng: &mut ChaCha8Rng,
        loss: &LossConfig,
    ) -> Result<(LossParts, Vec<Tensor<T>>)>;

    fn predict(&self, features: &[f64]) -> Result<Vec<f64>>;
}

/// The sequence regressor together with the codebook defining its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RqModel<T> {
    pub params: ModelParams<T>,
    pub codebook: Codebook,
}

impl<T: Scalar> RqModel<T> {
    pub fn new(params: ModelParams<T>, codebook: Codebook) -> Result<Self> {
        params.config.check_codebook(&codebook)?;
        Ok(Self { params, codebook })
    }
}

pub const PREDICT_CHUNK: usize = 1024;

impl<T: Scalar> Trainable<T> for RqModel<T> {
    fn store(&self) -> &ParamStore<T> {
        &self.params.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params.store
    }

    fn batch_loss(
        &self,
        features: &[f64],
        targets: &[f64],
        p_teacher: f64,
        rng: &mut ChaCha8Rng,
        loss: &LossConfig,
    ) -> Result<(LossParts, Vec<Tensor<T>>)> {
        let batch = Batch::new(features, targets, &self.codebook)?;
        let mask = draw_feed_mask(rng, batch.len(), self.params.config.levels, p_teacher);
        total_loss(&self.params, &batch, loss, &mask)
    }

    fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        predict(&self.params, features, PREDICT_CHUNK)
    }
}

/// Mean loss components over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub p_t: f64,
    pub l_gen: f64,
    pub l_reg: f64,
    pub l_rnc: f64,
    pub total: f64,
}

/// One line of the JSONL history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub p_t: f64,
    pub l_gen: f64,
    pub l_reg: f64,
    pub l_rnc: f64,
    pub total: f64,
    pub val_mae: Option<f64>,
    pub val_xauc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T, M> {
    pub model: M,
    pub adam: AdamState<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_mae: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best: Option<M>,
}

impl<T: Scalar, M: Trainable<T>> TrainState<T, M> {
    pub fn new(model: M) -> Self {
        let adam = AdamState::new(model.store());
        Self {
            model,
            adam,
            epoch: 0,
            best_val_mae: None,
            best_epoch: None,
            best: None,
        }
    }

    /// Best model by validation MAE, or the current one if none was evaluated.
    pub fn best_model(&self) -> &M {
        self.best.as_ref().unwrap_or(&self.model)
    }
}

fn gather(train: &Subset, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(idx.len() * train.dim);
    let mut y = Vec::with_capacity(idx.len());
    for &i in idx {
        x.extend_from_slice(train.row(i));
        y.push(train.targets[i]);
    }
    (x, y)
}

/// Runs one pass over `train` and advances `state.epoch`.
pub fn train_epoch<T: Scalar, M: Trainable<T>>(
    state: &mut TrainState<T, M>,
    train: &Subset,
    cfg: &TrainConfig,
) -> Result<EpochStats> {
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let epoch = state.epoch;
    let p_t = cfg.teacher_probability(epoch);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut stream_rng(cfg.seed, epoch as u64, u64::MAX));
    let mut sums = LossParts::default();
    for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
        let (x, y) = gather(train, idx);
        let mut rng = stream_rng(cfg.seed, epoch as u64, b as u64);
        let (parts, mut grads) = state.model.batch_loss(&x, &y, p_t, &mut rng, &cfg.loss)?;
        let grads_finite = grads.iter().all(Tensor::all_finite);
        if !parts.all_finite() || !grads_finite {
            return Err(Error::NonFinite {
                epoch,
                batch: b,
                gen: parts.l_gen,
                reg: parts.l_reg,
                rnc: parts.l_rnc,
            });
        }
        if let Some(c) = cfg.max_grad_norm {
            clip_gradients(&mut grads, c);
        }
        adam_update(
            state.model.store_mut(),
            &grads,
            &mut state.adam,
            cfg.learning_rate,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
        )?;
        let w = idx.len() as f64;
        sums.l_gen += w * parts.l_gen;
        sums.l_reg += w * parts.l_reg;
        sums.l_rnc += w * parts.l_rnc;
        sums.total += w * parts.total;
    }
    state.epoch += 1;
    let n = train.len() as f64;
    Ok(EpochStats {
        p_t,
        l_gen: sums.l_gen / n,
        l_reg: sums.l_reg / n,
        l_rnc: sums.l_rnc / n,
        total: sums.total / n,
    })
}

/// Validation MAE and XAUC of `model`.
pub fn validate<T: Scalar, M: Trainable<T>>(model: &M, val: &Subset, seed: u64) -> Result<(f64, Option<f64>)> {
    let pred = model.predict(&val.features)?;
    let mae = eval::mae(&pred, &val.targets)?;
    let xauc = if val.len() >= 2 {
        Some(eval::xauc(&pred, &val.targets, None, seed)?.0)
    } else {
        None
    };
    Ok((mae, xauc))
}

/// Trains from `state` until `cfg.epochs` epochs have completed in total.
///
/// History records are appended to `history` when given.
pub fn fit<T: Scalar, M: Trainable<T>>(
    state: &mut TrainState<T, M>,
    train: &Subset,
    val: &Subset,
    cfg: &TrainConfig,
    history: Option<&Path>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let mut writer = match history {
        Some(path) => {
            let file = if state.epoch == 0 {
                File::create(path)
            } else {
                OpenOptions::new().append(true).create(true).open(path)
            };
            Some((BufWriter::new(file.map_err(|e| Error::io(path, e))?), path))
        }
        None => None,
    };
    if val.is_empty() && state.epoch < cfg.epochs {
        log::warn!("validation split is empty; skipping evaluation and keeping the last model");
    }
    let mut records = Vec::new();
    let mut since_best = 0usize;
    while state.epoch < cfg.epochs {
        let stats = train_epoch(state, train, cfg)?;
        let done = state.epoch;
        let mut rec = EpochRecord {
            epoch: done - 1,
            p_t: stats.p_t,
            l_gen: stats.l_gen,
            l_reg: stats.l_reg,
            l_rnc: stats.l_rnc,
            total: stats.total,
            val_mae: None,
            val_xauc: None,
        };
        let mut stop = false;
        if !val.is_empty() && (done % cfg.eval_every == 0 || done == cfg.epochs) {
            let (mae, xauc) = validate(&state.model, val, cfg.seed)?;
            rec.val_mae = Some(mae);
            rec.val_xauc = xauc;
            if state.best_val_mae.is_none_or(|b| mae < b) {
                state.best_val_mae = Some(mae);
                state.best_epoch = Some(done - 1);
                state.best = Some(state.model.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.early_stop_patience.is_some_and(|p| since_best >= p) {
                    log::info!("early stop after epoch {} ({} evaluations without improvement)", done - 1, since_best);
                    stop = true;
                }
            }
        }
        log::info!(
            "epoch {:>3} p={:.3} gen={:.4} reg={:.4} rnc={:.4} total={:.4} val_mae={}",
            rec.epoch,
            rec.p_t,
            rec.l_gen,
            rec.l_reg,
            rec.l_rnc,
            rec.total,
            rec.val_mae.map_or("-".to_string(), |v| format!("{v:.4}"))
        );
        if let Some((w, path)) = writer.as_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(*path, e))?;
        }
        records.push(rec);
        if stop {
            break;
        }
    }
    if let Some((mut w, path)) = writer {
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(records)
}

fn to_named(names: &[String], tensors: &[Tensor<impl Scalar>]) -> Vec<NamedArray> {
    names
        .iter()
        .zip(tensors)
        .map(|(n, t)| NamedArray {
            name: n.clone(),
            shape: t.shape().to_vec(),
            values: t.to_f64_vec(),
        })
        .collect()
}

fn from_named<T: Scalar>(arrays: &[NamedArray]) -> Result<Vec<Tensor<T>>> {
    arrays.iter().map(|a| Tensor::from_f64(&a.shape, &a.values)).collect()
}

impl<T: Scalar> TrainState<T, RqModel<T>> {
    /// Full resumable checkpoint including optimizer state and the best model.
    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let names = self.model.params.store.names();
        let mut snap = TrainSnapshot {
            epoch: self.epoch,
            step: self.adam.step,
            seed,
            best_val_mae: self.best_val_mae,
            best_epoch: self.best_epoch,
            adam_m: to_named(names, &self.adam.m),
            adam_v: to_named(names, &self.adam.v),
            best_params: None,
        };
        snap.best_params = self.best.as_ref().map(|b| b.params.store.to_arrays());
        Checkpoint::new(&self.model.params)
            .with_codebook(&self.model.codebook)
            .with_train(snap)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let codebook = ck
            .codebook
            .clone()
            .ok_or_else(|| Error::Data("checkpoint has no codebook".into()))?;
        let model = RqModel::new(ck.model::<T>()?, codebook.clone())?;
        let Some(snap) = &ck.train else {
            return Ok(Self::new(model));
        };
        let m = from_named::<T>(&snap.adam_m)?;
        let v = from_named::<T>(&snap.adam_v)?;
        let shapes_ok = |ts: &[Tensor<T>]| {
            ts.len() == model.params.store.len()
                && ts.iter().zip(model.params.store.tensors()).all(|(a, b)| a.shape() == b.shape())
        };
        if !shapes_ok(&m) || !shapes_ok(&v) {
            return Err(Error::Data("optimizer moments do not match parameter shapes".into()));
        }
        let best = match &snap.best_params {
            Some(arrays) => {
                let store = ParamStore::from_arrays(arrays)?;
                Some(RqModel::new(ModelParams::from_store(ck.config.clone(), store)?, codebook)?)
            }
            None => None,
        };
        Ok(Self {
            model,
            adam: AdamState { m, v, step: snap.step },
            epoch: snap.epoch,
            best_val_mae: snap.best_val_mae,
            best_epoch: snap.best_epoch,
            best,
        })
    }
}
