//! The sequence regressor: feature encoder → LSTM over code embeddings →
//! vocabulary logits and per-step values.
//!
//! Every forward pass is expressed on a [`Graph`]. Inference builds the same
//! graph with the parameters attached as constants, so training with an
//! all-self-feed mask and inference evaluate identical operations.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::params::{mlp2, normal_matrix, xavier, ParamStore};
use crate::quantizer::Codebook;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub levels: usize,
    pub per_level_size: usize,
    pub enc_hidden: usize,
    pub pred_hidden: usize,
    pub reg_hidden: usize,
}

impl ModelConfig {
    /// Laptop-scale sizes: LSTM hidden 128.
    pub fn desk(feature_dim: usize, levels: usize, per_level_size: usize) -> Self {
        Self {
            feature_dim,
            embed_dim: 16,
            hidden_dim: 128,
            levels,
            per_level_size,
            enc_hidden: 64,
            pred_hidden: 64,
            reg_hidden: 64,
        }
    }

    /// LSTM hidden 512 with matching MLP widths.
    pub fn paper(feature_dim: usize, levels: usize, per_level_size: usize) -> Self {
        Self {
            feature_dim,
            embed_dim: 64,
            hidden_dim: 512,
            levels,
            per_level_size,
            enc_hidden: 256,
            pred_hidden: 256,
            reg_hidden: 256,
        }
    }

    /// `L·K` codes plus `<start>`.
    pub fn vocab_size(&self) -> usize {
        self.levels * self.per_level_size + 1
    }

    pub fn start_index(&self) -> usize {
        self.levels * self.per_level_size
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("levels", self.levels),
            ("per_level_size", self.per_level_size),
            ("enc_hidden", self.enc_hidden),
            ("pred_hidden", self.pred_hidden),
            ("reg_hidden", self.reg_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model {name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn check_codebook(&self, cb: &Codebook) -> Result<()> {
        if cb.levels() != self.levels || cb.per_level_size() != self.per_level_size {
            return Err(Error::Config(format!(
                "codebook is {}x{} but model expects {}x{}",
                cb.levels(),
                cb.per_level_size(),
                self.levels,
                self.per_level_size
            )));
        }
        Ok(())
    }
}

/// Parameter slots, in storage order.
pub mod slot {
    pub const EMBEDDING: usize = 0;
    pub const ENC: usize = 1; // w1, b1, w2, b2
    pub const LSTM_W_IN: usize = 5;
    pub const LSTM_W_HID: usize = 6;
    pub const LSTM_BIAS: usize = 7;
    pub const PRED: usize = 8; // w1, b1, w2, b2
    pub const REG: usize = 12; // w1, b1, w2, b2
    pub const COUNT: usize = 16;
}

const PARAM_NAMES: [&str; slot::COUNT] = [
    "embedding",
    "enc.w1",
    "enc.b1",
    "enc.w2",
    "enc.b2",
    "lstm.w_in",
    "lstm.w_hid",
    "lstm.bias",
    "pred.w1",
    "pred.b1",
    "pred.w2",
    "pred.b2",
    "reg.w1",
    "reg.b1",
    "reg.w2",
    "reg.b2",
];

/// All trainable tensors. LSTM gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform weights, zero biases, forget-gate bias 1, embeddings ~ N(0, 0.02²).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = c.hidden_dim;
        let v = c.vocab_size();
        let mut store = ParamStore::new();
        store.push(PARAM_NAMES[0], normal_matrix(&mut rng, v, c.embed_dim, 0.02));
        store.push(PARAM_NAMES[1], xavier(&mut rng, c.feature_dim, c.enc_hidden));
        store.push(PARAM_NAMES[2], Tensor::zeros(&[c.enc_hidden]));
        store.push(PARAM_NAMES[3], xavier(&mut rng, c.enc_hidden, 2 * h));
        store.push(PARAM_NAMES[4], Tensor::zeros(&[2 * h]));
        store.push(PARAM_NAMES[5], xavier(&mut rng, c.embed_dim, 4 * h));
        store.push(PARAM_NAMES[6], xavier(&mut rng, h, 4 * h));
        let mut bias = Tensor::zeros(&[4 * h]);
        for b in &mut bias.data_mut()[h..2 * h] {
            *b = T::one();
        }
        store.push(PARAM_NAMES[7], bias);
        store.push(PARAM_NAMES[8], xavier(&mut rng, h, c.pred_hidden));
        store.push(PARAM_NAMES[9], Tensor::zeros(&[c.pred_hidden]));
        store.push(PARAM_NAMES[10], xavier(&mut rng, c.pred_hidden, v));
        store.push(PARAM_NAMES[11], Tensor::zeros(&[v]));
        store.push(PARAM_NAMES[12], xavier(&mut rng, v, c.reg_hidden));
        store.push(PARAM_NAMES[13], Tensor::zeros(&[c.reg_hidden]));
        store.push(PARAM_NAMES[14], xavier(&mut rng, c.reg_hidden, 1));
        store.push(PARAM_NAMES[15], Tensor::zeros(&[1]));
        Ok(Self {
            config: config.clone(),
            store,
        })
    }

    /// Rebuilds from a store, checking names and shapes against `config`.
    pub fn from_store(config: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        let reference = Self::init(&config, 0)?;
        reference.store.check_layout(&store)?;
        Ok(Self { config, store })
    }

    pub fn embedding(&self) -> &Tensor<T> {
        self.store.get(slot::EMBEDDING)
    }

    pub fn attach(&self, g: &mut Graph<T>, trainable: bool) -> ModelVars {
        ModelVars {
            vars: self.store.attach(g, trainable),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            store: self.store.cast(),
        }
    }
}

/// Graph handles for every parameter of one attached [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub vars: Vec<Var>,
}

impl ModelVars {
    fn embedding(&self) -> Var {
        self.vars[slot::EMBEDDING]
    }

    fn enc(&self) -> &[Var] {
        &self.vars[slot::ENC..slot::ENC + 4]
    }

    fn pred(&self) -> &[Var] {
        &self.vars[slot::PRED..slot::PRED + 4]
    }

    fn reg(&self) -> &[Var] {
        &self.vars[slot::REG..slot::REG + 4]
    }
}

/// Outputs of one decoding step for a batch.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    /// `[B × |V|]`
    pub logits: Var,
    pub probs: Var,
    pub log_probs: Var,
    /// `[B × 1]`
    pub value: Var,
    /// Expected code embedding under `probs`, `[B × D]`.
    pub mixture: Var,
    pub h: Var,
    pub c: Var,
}

/// Which steps consume the ground-truth embedding rather than the mixture.
///
/// Entry `(b, l)` set means sample `b` feeds `E[q_l]` into step `l + 1`; the
/// last column is never read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedMask {
    rows: usize,
    levels: usize,
    bits: Vec<bool>,
}

impl FeedMask {
    pub fn filled(rows: usize, levels: usize, teacher: bool) -> Self {
        Self {
            rows,
            levels,
            bits: vec![teacher; rows * levels],
        }
    }

    pub fn from_fn(rows: usize, levels: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * levels);
        for b in 0..rows {
            for l in 0..levels {
                bits.push(f(b, l));
            }
        }
        Self { rows, levels, bits }
    }

    pub fn get(&self, row: usize, level: usize) -> bool {
        self.bits[row * self.levels + level]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Fraction of teacher-forced entries among the columns that are read.
    pub fn teacher_rate(&self) -> f64 {
        if self.levels < 2 || self.rows == 0 {
            return 1.0;
        }
        let mut n = 0usize;
        for b in 0..self.rows {
            for l in 0..self.levels - 1 {
                n += self.get(b, l) as usize;
            }
        }
        n as f64 / (self.rows * (self.levels - 1)) as f64
    }
}

/// `[h_0; c_0] = f_enc(x)`, split into the two halves.
pub fn encode_features<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, mv: &ModelVars, x: Var) -> Result<(Var, Var)> {
    let xs = g.value(x);
    if xs.cols() != cfg.feature_dim {
        return Err(Error::Dimension {
            op: "encode_features",
            left: xs.shape().to_vec(),
            right: vec![cfg.feature_dim],
        });
    }
    let out = mlp2(g, x, mv.enc())?;
    let h = g.narrow_cols(out, 0, cfg.hidden_dim)?;
    let c = g.narrow_cols(out, cfg.hidden_dim, cfg.hidden_dim)?;
    Ok((h, c))
}

/// One LSTM cell update.
pub fn lstm_step<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    mv: &ModelVars,
    input: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let hd = cfg.hidden_dim;
    let a = g.matmul(input, mv.vars[slot::LSTM_W_IN])?;
    let b = g.matmul(h_prev, mv.vars[slot::LSTM_W_HID])?;
    let pre = g.add(a, b)?;
    let pre = g.add_row(pre, mv.vars[slot::LSTM_BIAS])?;
    let i = g.narrow_cols(pre, 0, hd)?;
    let f = g.narrow_cols(pre, hd, hd)?;
    let cand = g.narrow_cols(pre, 2 * hd, hd)?;
    let o = g.narrow_cols(pre, 3 * hd, hd)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// LSTM step followed by the predictor, regressor and mixture embedding.
pub fn step<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    mv: &ModelVars,
    prev_embed: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<StepVars> {
    let (h, c) = lstm_step(g, cfg, mv, prev_embed, h_prev, c_prev)?;
    let logits = mlp2(g, h, mv.pred())?;
    let probs = g.softmax(logits);
    let log_probs = g.log_softmax(logits);
    let value = mlp2(g, logits, mv.reg())?;
    let mixture = g.matmul(probs, mv.embedding())?;
    Ok(StepVars {
        logits,
        probs,
        log_probs,
        value,
        mixture,
        h,
        c,
    })
}

/// Runs all `L` steps. Step 1 consumes `E[<start>]`; step `l + 1` consumes
/// `E[q_l]` where the mask is set and the mixture `ê_l` elsewhere.
///
/// `gt` holds `B × L` vocabulary indices and may be `None` only when no mask
/// entry that is read is set.
pub fn forward_teacher_forced<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    mv: &ModelVars,
    x: Var,
    gt: Option<&[Vec<usize>]>,
    mask: &FeedMask,
) -> Result<Vec<StepVars>> {
    let batch = g.value(x).rows();
    if mask.rows() != batch || mask.levels() != cfg.levels {
        return Err(Error::Dimension {
            op: "feed mask",
            left: vec![mask.rows(), mask.levels()],
            right: vec![batch, cfg.levels],
        });
    }
    if let Some(gt) = gt {
        if gt.len() != batch || gt.iter().any(|r| r.len() != cfg.levels) {
            return Err(Error::Dimension {
                op: "ground-truth codes",
                left: vec![gt.len()],
                right: vec![batch, cfg.levels],
            });
        }
    }
    let (mut h, mut c) = encode_features(g, cfg, mv, x)?;
    let mut input = g.gather_rows(mv.embedding(), &vec![cfg.start_index(); batch])?;
    let mut steps = Vec::with_capacity(cfg.levels);
    for l in 0..cfg.levels {
        let out = step(g, cfg, mv, input, h, c)?;
        h = out.h;
        c = out.c;
        steps.push(out);
        if l + 1 == cfg.levels {
            break;
        }
        let teacher: Vec<bool> = (0..batch).map(|b| mask.get(b, l)).collect();
        input = if teacher.iter().all(|&t| !t) {
            out.mixture
        } else {
            let gt = gt.ok_or_else(|| Error::Config("teacher forcing requested without ground-truth codes".into()))?;
            let idx: Vec<usize> = gt.iter().map(|r| r[l]).collect();
            let truth = g.gather_rows(mv.embedding(), &idx)?;
            if teacher.iter().all(|&t| t) {
                truth
            } else {
                let d = cfg.embed_dim;
                let keep: Vec<T> = teacher
                    .iter()
                    .flat_map(|&t| std::iter::repeat_n(if t { T::one() } else { T::zero() }, d))
                    .collect();
                let flip: Vec<T> = keep.iter().map(|&k| T::one() - k).collect();
                let keep = g.constant(Tensor::matrix(batch, d, keep)?);
                let flip = g.constant(Tensor::matrix(batch, d, flip)?);
                let a = g.mul(truth, keep)?;
                let b = g.mul(out.mixture, flip)?;
                g.add(a, b)?
            }
        };
    }
    Ok(steps)
}

/// Result of autoregressive inference for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// `Σ_l ŷ_l`
    pub value: f64,
    pub per_step: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
}

/// Inference for a batch of rows: every step consumes the previous mixture embedding.
pub fn infer_batch<T: Scalar>(params: &ModelParams<T>, x: &Tensor<T>) -> Result<Vec<Inference>> {
    let cfg = &params.config;
    let mut g = Graph::new();
    let mv = params.attach(&mut g, false);
    let xv = g.constant(x.clone());
    let batch = x.rows();
    let steps = forward_teacher_forced(&mut g, cfg, &mv, xv, None, &FeedMask::filled(batch, cfg.levels, false))?;
    Ok(collect_inference(&g, &steps, batch))
}

pub(crate) fn collect_inference<T: Scalar>(g: &Graph<T>, steps: &[StepVars], batch: usize) -> Vec<Inference> {
    (0..batch)
        .map(|b| {
            let per_step: Vec<f64> = steps.iter().map(|s| g.value(s.value).at(b, 0).as_f64()).collect();
            // summed in scalar precision, step order
            let value = steps
                .iter()
                .fold(T::zero(), |acc, s| acc + g.value(s.value).at(b, 0))
                .as_f64();
            let probs = steps
                .iter()
                .map(|s| g.value(s.probs).row(b).iter().map(|p| p.as_f64()).collect())
                .collect();
            Inference { value, per_step, probs }
        })
        .collect()
}

pub fn infer<T: Scalar>(params: &ModelParams<T>, x: &[f64]) -> Result<Inference> {
    let x = Tensor::from_f64(&[1, x.len()], x)?;
    Ok(infer_batch(params, &x)?.remove(0))
}

/// Predicted values for row-major `features` (`n × d`), evaluated in chunks.
pub fn predict<T: Scalar>(params: &ModelParams<T>, features: &[f64], chunk: usize) -> Result<Vec<f64>> {
    let d = params.config.feature_dim;
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(features.len() / d.max(1));
    for rows in features.chunks(chunk * d) {
        let x = Tensor::from_f64(&[rows.len() / d, d], rows)?;
        out.extend(infer_batch(params, &x)?.into_iter().map(|r| r.value));
    }
    Ok(out)
}

/// Target value with the concatenated embeddings of its codes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub y: f64,
    pub embedding: Vec<f64>,
}

/// Maps each target to `[E[q_1]; …; E[q_L]]` of its codebook encoding.
pub fn export_embeddings<T: Scalar>(params: &ModelParams<T>, cb: &Codebook, targets: &[f64]) -> Result<Vec<EmbeddingRow>> {
    params.config.check_codebook(cb)?;
    let e = params.embedding();
    Ok(targets
        .iter()
        .map(|&y| {
            let cs = cb.encode(y);
            let embedding = cs
                .codes
                .iter()
                .flat_map(|code| e.row(code.vocab_index).iter().map(|v| v.as_f64()))
                .collect();
            EmbeddingRow { y, embedding }
        })
        .collect())
}

pub fn write_embeddings_csv<W: Write>(rows: &[EmbeddingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let width = rows.first().map(|r| r.embedding.len()).unwrap_or(0);
    let mut header = vec!["y".to_string()];
    header.extend((0..width).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.y.to_string()];
        rec.extend(r.embedding.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<embeddings>", e))?;
    Ok(())
}

pub fn read_embeddings_csv<R: Read>(input: R) -> Result<Vec<EmbeddingRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Data(format!("bad embedding value `{s}`: {e}"))))
            .collect::<Result<_>>()?;
        let (y, rest) = vals.split_first().ok_or_else(|| Error::Data("empty embedding row".into()))?;
        rows.push(EmbeddingRow {
            y: *y,
            embedding: rest.to_vec(),
        });
    }
    Ok(rows)
}
