use serde::{Deserialize, Serialize};

use super::layers::{kaiming_bound, lecun_bound, relu_backward_inplace, relu_inplace, Dense};
use super::params::{join, Parameters, TensorView};
use super::{Matrix, Real};
use crate::rng::StreamRng;
use crate::{Error, Result};

/// Dense layers with ReLU between consecutive layers (not after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    inputs: Vec<Matrix<T>>,
}

impl<T: Real> Mlp<T> {
    /// Hidden layers get Kaiming-uniform weights; the output layer gets
    /// LeCun-uniform weights, or zeros when `zero_output` is set. Biases
    /// start at zero.
    pub fn init(widths: &[usize], zero_output: bool, rng: &mut StreamRng) -> Self {
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if i < last {
                    Dense::init_uniform(w[0], w[1], kaiming_bound(w[0]), rng)
                } else if zero_output {
                    Dense::zeros(w[0], w[1])
                } else {
                    Dense::init_uniform(w[0], w[1], lecun_bound(w[0]), rng)
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut cur = self.layers[0].forward(x);
        for l in &self.layers[1..] {
            relu_inplace(&mut cur.data);
            cur = l.forward(&cur);
        }
        cur
    }

    pub fn forward_train(&self, x: &Matrix<T>) -> (Matrix<T>, MlpCache<T>) {
        let mut inputs = vec![x.clone()];
        let mut cur = self.layers[0].forward(x);
        for l in &self.layers[1..] {
            relu_inplace(&mut cur.data);
            let next = l.forward(&cur);
            inputs.push(std::mem::replace(&mut cur, next));
        }
        (cur, MlpCache { inputs })
    }

    /// Accumulates gradients into `grads`; returns the input gradient.
    pub fn backward(&self, cache: &MlpCache<T>, dout: &Matrix<T>, grads: &mut Mlp<T>) -> Matrix<T> {
        let mut d = dout.clone();
        for i in (0..self.layers.len()).rev() {
            d = self.layers[i].backward(&cache.inputs[i], &d, &mut grads.layers[i]);
            if i > 0 {
                relu_backward_inplace(&cache.inputs[i].data, &mut d.data);
            }
        }
        d
    }
}

impl<T: Real> Parameters<T> for Mlp<T> {
    fn collect_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a, T>>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_tensors(&join(prefix, &format!("fc{i}")), out);
        }
    }

    fn collect_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        for l in &mut self.layers {
            l.collect_tensors_mut(out);
        }
    }
}

/// Maps features into the embedding space the self-supervised losses see.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector<T> {
    pub mlp: Mlp<T>,
}

impl<T: Real> Projector<T> {
    pub fn init(feature_dim: usize, hidden: usize, embedding_dim: usize, rng: &mut StreamRng) -> Self {
        Self {
            mlp: Mlp::init(&[feature_dim, hidden, embedding_dim], false, rng),
        }
    }
}

impl<T: Real> Parameters<T> for Projector<T> {
    fn collect_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a, T>>) {
        self.mlp.collect_tensors(prefix, out);
    }

    fn collect_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        self.mlp.collect_tensors_mut(out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `D → 1`
    Linear,
    /// `D → 32 → 1` with ReLU.
    Mlp32,
}

pub const MLP_HIDDEN: usize = 32;

/// Task classifier producing one logit per feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub kind: HeadKind,
    pub mlp: Mlp<T>,
}

impl<T: Real> Head<T> {
    /// The output layer starts at zero, so an untrained head predicts 0.5
    /// everywhere; the hidden layer of `Mlp32` is Kaiming-uniform.
    pub fn init(kind: HeadKind, feature_dim: usize, rng: &mut StreamRng) -> Self {
        let widths: &[usize] = match kind {
            HeadKind::Linear => &[feature_dim, 1],
            HeadKind::Mlp32 => &[feature_dim, MLP_HIDDEN, 1],
        };
        Self {
            kind,
            mlp: Mlp::init(widths, true, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn logits(&self, features: &Matrix<T>) -> Result<Vec<T>> {
        if features.cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "head expects {} features, got {}",
                self.input_dim(),
                features.cols
            )));
        }
        Ok(self.mlp.forward(features).data)
    }

    /// Logit for a single feature vector.
    pub fn logit(&self, features: &[T]) -> Result<T> {
        let m = Matrix::from_vec(1, features.len(), features.to_vec());
        Ok(self.logits(&m)?[0])
    }
}

impl<T: Real> Parameters<T> for Head<T> {
    fn collect_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a, T>>) {
        self.mlp.collect_tensors(prefix, out);
    }

    fn collect_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        self.mlp.collect_tensors_mut(out);
    }
}
