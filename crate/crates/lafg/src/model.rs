//! Tiny feature-vector backbone + linear embedding head, with manual
//! backprop and SGD (momentum + weight decay). The synthetic pipeline feeds
//! feature vectors directly; real-image backbones plug in behind the same
//! forward/backward surface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LafgError, Result};

/// MLP with one optional ReLU hidden layer. `hidden_dim == 0` collapses to a
/// single linear map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalModel {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    /// First layer, row-major (hidden_dim or out_dim) x in_dim.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Second layer, out_dim x hidden_dim; empty when linear.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl RetrievalModel {
    pub fn seeded(in_dim: usize, hidden_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(LafgError::invalid("model dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |rows: usize, cols: usize| -> Vec<f64> {
            let scale = (2.0 / cols as f64).sqrt();
            (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()
        };
        let first_out = if hidden_dim == 0 { out_dim } else { hidden_dim };
        let w1 = init(first_out, in_dim);
        let (w2, b2) = if hidden_dim == 0 {
            (Vec::new(), Vec::new())
        } else {
            (init(out_dim, hidden_dim), vec![0.0; out_dim])
        };
        Ok(RetrievalModel {
            in_dim,
            hidden_dim,
            out_dim,
            w1,
            b1: vec![0.0; first_out],
            w2,
            b2,
        })
    }

    /// Linear model starting near the identity map, the desk-scale analogue
    /// of a backbone pretrained into the shared vision-language space.
    pub fn near_identity(dim: usize, noise: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(LafgError::invalid("model dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w1 = vec![0.0f64; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                w1[i * dim + j] =
                    if i == j { 1.0 } else { 0.0 } + rng.gen_range(-noise..noise);
            }
        }
        Ok(RetrievalModel {
            in_dim: dim,
            hidden_dim: 0,
            out_dim: dim,
            w1,
            b1: vec![0.0; dim],
            w2: Vec::new(),
            b2: Vec::new(),
        })
    }

    pub fn forward(&self, x: &[f32]) -> Forward {
        debug_assert_eq!(x.len(), self.in_dim);
        let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let first_out = if self.hidden_dim == 0 {
            self.out_dim
        } else {
            self.hidden_dim
        };
        let mut pre1 = vec![0.0f64; first_out];
        for i in 0..first_out {
            let row = &self.w1[i * self.in_dim..(i + 1) * self.in_dim];
            pre1[i] = self.b1[i] + row.iter().zip(&x64).map(|(w, v)| w * v).sum::<f64>();
        }
        if self.hidden_dim == 0 {
            return Forward {
                input: x64,
                pre1: pre1.clone(),
                embedding: pre1,
            };
        }
        let h: Vec<f64> = pre1.iter().map(|&v| v.max(0.0)).collect();
        let mut out = vec![0.0f64; self.out_dim];
        for i in 0..self.out_dim {
            let row = &self.w2[i * self.hidden_dim..(i + 1) * self.hidden_dim];
            out[i] = self.b2[i] + row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
        }
        Forward {
            input: x64,
            pre1,
            embedding: out,
        }
    }

    /// Accumulates parameter gradients for one sample given d loss / d embedding.
    pub fn backward(&self, fwd: &Forward, grad_out: &[f64], grads: &mut ModelGrads) {
        if self.hidden_dim == 0 {
            for (i, &g) in grad_out.iter().enumerate() {
                grads.b1[i] += g;
                for (j, &x) in fwd.input.iter().enumerate() {
                    grads.w1[i * self.in_dim + j] += g * x;
                }
            }
            return;
        }
        let h: Vec<f64> = fwd.pre1.iter().map(|&v| v.max(0.0)).collect();
        let mut grad_h = vec![0.0f64; self.hidden_dim];
        for (i, &g) in grad_out.iter().enumerate() {
            grads.b2[i] += g;
            let row = &self.w2[i * self.hidden_dim..(i + 1) * self.hidden_dim];
            for j in 0..self.hidden_dim {
                grads.w2[i * self.hidden_dim + j] += g * h[j];
                grad_h[j] += g * row[j];
            }
        }
        for j in 0..self.hidden_dim {
            if fwd.pre1[j] <= 0.0 {
                grad_h[j] = 0.0;
            }
            grads.b1[j] += grad_h[j];
            for (k, &x) in fwd.input.iter().enumerate() {
                grads.w1[j * self.in_dim + k] += grad_h[j] * x;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub input: Vec<f64>,
    pub pre1: Vec<f64>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros(model: &RetrievalModel) -> Self {
        ModelGrads {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: vec![0.0; model.b2.len()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
        {
            *g *= s;
        }
    }
}

/// One SGD-with-momentum update: v <- momentum*v + grad + wd*param, then
/// param <- param - lr*v.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), velocity.len());
    for i in 0..params.len() {
        velocity[i] = momentum * velocity[i] + grads[i] + weight_decay * params[i];
        params[i] -= lr * velocity[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_model_grad(model: &RetrievalModel, x: &[f32], which: impl Fn(&mut RetrievalModel) -> &mut f64) -> f64 {
        // Loss = sum of embedding (simple linear functional for FD checks).
        let h = 1e-6;
        let mut plus = model.clone();
        *which(&mut plus) += h;
        let mut minus = model.clone();
        *which(&mut minus) -= h;
        let lp: f64 = plus.forward(x).embedding.iter().sum();
        let lm: f64 = minus.forward(x).embedding.iter().sum();
        (lp - lm) / (2.0 * h)
    }

    #[test]
    fn backward_matches_fd_mlp() {
        let model = RetrievalModel::seeded(5, 7, 3, 42).unwrap();
        let x: Vec<f32> = vec![0.3, -0.8, 0.1, 0.9, -0.2];
        let fwd = model.forward(&x);
        let grad_out = vec![1.0f64; 3];
        let mut grads = ModelGrads::zeros(&model);
        model.backward(&fwd, &grad_out, &mut grads);
        for idx in [0usize, 3, 11, 34] {
            let num = fd_model_grad(&model, &x, |m| &mut m.w1[idx]);
            assert!((grads.w1[idx] - num).abs() < 1e-5, "{} vs {num}", grads.w1[idx]);
        }
        for idx in [0usize, 5, 20] {
            let num = fd_model_grad(&model, &x, |m| &mut m.w2[idx]);
            assert!((grads.w2[idx] - num).abs() < 1e-5);
        }
    }

    #[test]
    fn backward_matches_fd_linear() {
        let model = RetrievalModel::seeded(4, 0, 3, 1).unwrap();
        assert!(model.w2.is_empty());
        let x = vec![0.5f32, -0.5, 1.0, 0.25];
        let fwd = model.forward(&x);
        let mut grads = ModelGrads::zeros(&model);
        model.backward(&fwd, &vec![1.0; 3], &mut grads);
        for idx in [0usize, 4, 11] {
            let num = fd_model_grad(&model, &x, |m| &mut m.w1[idx]);
            assert!((grads.w1[idx] - num).abs() < 1e-5);
        }
    }

    #[test]
    fn near_identity_starts_close_to_identity() {
        let model = RetrievalModel::near_identity(6, 0.02, 9).unwrap();
        assert_eq!(model.hidden_dim, 0);
        assert!(model.w2.is_empty());
        let x = vec![0.5f32, -1.0, 0.25, 0.0, 2.0, -0.125];
        let out = model.forward(&x).embedding;
        for (o, &xi) in out.iter().zip(&x) {
            // Each output deviates by at most sum_j |noise_ij * x_j|.
            assert!((o - xi as f64).abs() < 0.02 * 4.0, "{o} vs {xi}");
        }
        assert!(RetrievalModel::near_identity(0, 0.02, 9).is_err());
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut params = vec![1.0, -1.0];
        let mut vel = vec![0.0, 0.0];
        sgd_step(&mut params, &[0.5, -0.5], &mut vel, 0.1, 0.9, 0.0);
        assert!(params[0] < 1.0);
        assert!(params[1] > -1.0);
        // Momentum keeps moving even with zero gradient.
        let before = params[0];
        sgd_step(&mut params, &[0.0, 0.0], &mut vel, 0.1, 0.9, 0.0);
        assert!(params[0] < before);
    }
}
