//! Auxiliary contrastive objective over squared Euclidean distances between
//! normalized embeddings, and the total-loss combiner.

use crate::error::{LafgError, Result};
use crate::vecmath::{dot_f64, norm_f64};

/// 2N embeddings with exactly two instances per class.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
}

impl EmbeddingBatch {
    pub fn new(embeddings: Vec<Vec<f64>>, labels: Vec<u32>) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(LafgError::invalid("embeddings and labels length mismatch"));
        }
        if embeddings.is_empty() || embeddings.len() % 2 != 0 {
            return Err(LafgError::invalid("batch size must be even and non-zero"));
        }
        let mut counts = std::collections::HashMap::new();
        for &l in &labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        if counts.values().any(|&c| c != 2) {
            return Err(LafgError::invalid(
                "every label must appear exactly twice in a batch",
            ));
        }
        if embeddings.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LafgError::invalid("non-finite embedding in batch"));
        }
        Ok(EmbeddingBatch { embeddings, labels })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Index of the positive partner of anchor `i`.
    pub fn partner(&self, i: usize) -> usize {
        self.labels
            .iter()
            .enumerate()
            .position(|(j, &l)| j != i && l == self.labels[i])
            .expect("validated batch always has a partner")
    }
}

/// D(z_i, z_j) = 2 - 2 cos(z_i, z_j), the squared Euclidean distance between
/// the normalized vectors. Range [0, 4].
pub fn pair_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(LafgError::invalid("pair_distance: length mismatch"));
    }
    let na = norm_f64(a);
    let nb = norm_f64(b);
    if na == 0.0 || nb == 0.0 {
        return Err(LafgError::invalid("pair_distance: zero vector"));
    }
    Ok(2.0 - 2.0 * dot_f64(a, b) / (na * nb))
}

#[derive(Debug, Clone)]
pub struct AuxLossGrads {
    pub loss: f64,
    /// d loss / d embedding, same shape as the batch.
    pub grads: Vec<Vec<f64>>,
}

/// Mean over anchors of
/// -log( exp(-D(z_i, z_j)/tau) / sum_{k != i} exp(-D(z_i, z_k)/tau) ),
/// with j the positive partner of anchor i. Also returns analytic gradients
/// with respect to every (unnormalized) embedding.
pub fn aux_loss(batch: &EmbeddingBatch, tau: f64) -> Result<AuxLossGrads> {
    if tau <= 0.0 {
        return Err(LafgError::invalid("tau must be positive"));
    }
    let k_total = batch.len();
    let dim = batch.embeddings[0].len();

    // Normalize once; keep norms for the backward pass.
    let mut units: Vec<Vec<f64>> = Vec::with_capacity(k_total);
    let mut norms: Vec<f64> = Vec::with_capacity(k_total);
    for z in &batch.embeddings {
        let n = norm_f64(z);
        if n == 0.0 {
            return Err(LafgError::invalid("zero embedding in batch"));
        }
        norms.push(n);
        units.push(z.iter().map(|v| v / n).collect());
    }

    let dist = |i: usize, k: usize| 2.0 - 2.0 * dot_f64(&units[i], &units[k]);

    let mut loss = 0.0;
    let mut grad_units = vec![vec![0.0f64; dim]; k_total];
    for i in 0..k_total {
        let j = batch.partner(i);
        // log-sum-exp over negatives-and-positive in a stable form.
        let logits: Vec<(usize, f64)> = (0..k_total)
            .filter(|&k| k != i)
            .map(|k| (k, -dist(i, k) / tau))
            .collect();
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &(_, v)| m.max(v));
        let sum: f64 = logits.iter().map(|&(_, v)| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += dist(i, j) / tau + lse;

        // d loss_i / d D_ik = (1/tau) ([k = j] - w_ik).
        for &(k, v) in &logits {
            let w = (v - max).exp() / sum;
            let coeff = (if k == j { 1.0 } else { 0.0 } - w) / tau;
            // d D_ik / d u_i = -2 u_k, d D_ik / d u_k = -2 u_i.
            for t in 0..dim {
                grad_units[i][t] += coeff * (-2.0 * units[k][t]);
                grad_units[k][t] += coeff * (-2.0 * units[i][t]);
            }
        }
    }
    let inv_k = 1.0 / k_total as f64;
    loss *= inv_k;

    // Backprop through the normalization: dz = (du - u (u . du)) / |z|.
    let mut grads = vec![vec![0.0f64; dim]; k_total];
    for i in 0..k_total {
        let proj = dot_f64(&units[i], &grad_units[i]);
        for t in 0..dim {
            grads[i][t] = inv_k * (grad_units[i][t] - units[i][t] * proj) / norms[i];
        }
    }
    Ok(AuxLossGrads { loss, grads })
}

/// L = L_aux + beta * L_ali.
pub fn total_loss(l_aux: f64, l_ali: f64, beta: f64) -> Result<f64> {
    if beta < 0.0 {
        return Err(LafgError::invalid("beta must be >= 0"));
    }
    Ok(l_aux + beta * l_ali)
}
