//! Named parameter tensors shared by the model, the baselines and the optimizer.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

/// Serialized form: values are always written as `f64`, which is exact for both precisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Adds every tensor to `g`, trainable or constant.
    pub fn attach(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(name, t)| NamedArray {
                name: name.clone(),
                shape: t.shape().to_vec(),
                values: t.to_f64_vec(),
            })
            .collect()
    }

    pub fn from_arrays(arrays: &[NamedArray]) -> Result<Self> {
        let mut store = Self::new();
        for a in arrays {
            store.push(a.name.clone(), Tensor::from_f64(&a.shape, &a.values)?);
        }
        Ok(store)
    }

    /// Arrays must carry the same names and shapes as `self`, in order.
    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Data(format!(
                "parameter names differ: {:?} vs {:?}",
                self.names, other.names
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::Dimension {
                    op: "parameter layout",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Glorot-uniform `[fan_in × fan_out]` matrix.
pub(crate) fn xavier<T: Scalar, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("valid uniform bounds");
    let data = (0..fan_in * fan_out).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("xavier shape")
}

pub(crate) fn normal_matrix<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("valid normal");
    let data = (0..rows * cols).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::new(vec![rows, cols], data).expect("normal shape")
}

/// Two-layer perceptron `relu(x·w1 + b1)·w2 + b2` on the tape.
pub(crate) fn mlp2<T: Scalar>(g: &mut Graph<T>, x: Var, w: &[Var]) -> Result<Var> {
    let h = g.matmul(x, w[0])?;
    let h = g.add_row(h, w[1])?;
    let h = g.relu(h);
    let o = g.matmul(h, w[2])?;
    g.add_row(o, w[3])
}
