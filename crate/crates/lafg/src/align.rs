//! Modality projectors, symmetric-KL alignment objectives, and EMA mean
//! projectors.
//!
//! Two loss variants exist. The naive variant compares live projector
//! distributions in both directions and backpropagates everywhere. The
//! stabilized variant replaces each KL target with the distribution produced
//! by the EMA copy of the opposite-modality projector; targets are detached,
//! so gradients reach only the live parameters in each denominator and the
//! visual embedding. `ProjectorGradMode::Frozen` additionally detaches the
//! live projector parameters, leaving the retrieval model as the only
//! trainable input.
//!
//! All gradients here are analytic; the test suite checks them against
//! central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LafgError, Result};

/// Probability floor applied only in the generic `kl` entry point.
const KL_FLOOR: f64 = 1e-12;

/// Linear layer + softmax producing an attribute distribution over `out_dim`
/// bins from a `in_dim` embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major out_dim x in_dim.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Projector {
    pub fn seeded(in_dim: usize, out_dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        Projector {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Projector {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|i| {
                let row = &self.weight[i * self.in_dim..(i + 1) * self.in_dim];
                self.bias[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Probability vector over the attribute bins.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(LafgError::invalid(format!(
                "projector input dimension {} != {}",
                x.len(),
                self.in_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LafgError::invalid("projector input contains NaN/inf"));
        }
        Ok(softmax(&self.logits(x)))
    }

    #[cfg(test)]
    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&v| v - lse).collect()
}

/// KL(p || q) = sum_i p_i log(p_i / q_i) for two probability vectors.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(LafgError::invalid("kl: length mismatch"));
    }
    Ok(p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let pi = pi.max(KL_FLOOR);
            let qi = qi.max(KL_FLOOR);
            pi * (pi / qi).ln()
        })
        .sum())
}

/// KL between the softmaxes of two logit vectors, computed in log-space.
fn kl_from_logits(zp: &[f64], zq: &[f64]) -> f64 {
    let p = softmax(zp);
    let lp = log_softmax(zp);
    let lq = log_softmax(zq);
    p.iter().zip(&lp).zip(&lq).map(|((&pi, &a), &b)| pi * (a - b)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ProjectorGrad {
    pub fn zeros(p: &Projector) -> Self {
        ProjectorGrad {
            weight: vec![0.0; p.weight.len()],
            bias: vec![0.0; p.bias.len()],
        }
    }

    fn accumulate(&mut self, dlogits: &[f64], input: &[f64]) {
        let in_dim = input.len();
        for (i, &dz) in dlogits.iter().enumerate() {
            self.bias[i] += dz;
            for (j, &x) in input.iter().enumerate() {
                self.weight[i * in_dim + j] += dz * x;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weight {
            *w *= s;
        }
        for b in &mut self.bias {
            *b *= s;
        }
    }

    pub fn add(&mut self, other: &ProjectorGrad) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// d KL(softmax(zp) || softmax(zq)) / d zp, with p carried through the
/// softmax Jacobian.
fn dkl_dzp(zp: &[f64], zq: &[f64]) -> Vec<f64> {
    let p = softmax(zp);
    let lp = log_softmax(zp);
    let lq = log_softmax(zq);
    let s: Vec<f64> = lp.iter().zip(&lq).map(|(a, b)| a - b).collect();
    let mean: f64 = p.iter().zip(&s).map(|(pi, si)| pi * si).sum();
    p.iter().zip(&s).map(|(pi, si)| pi * (si - mean)).collect()
}

/// d KL(softmax(zp) || softmax(zq)) / d zq = q - p.
fn dkl_dzq(zp: &[f64], zq: &[f64]) -> Vec<f64> {
    let p = softmax(zp);
    let q = softmax(zq);
    q.iter().zip(&p).map(|(qi, pi)| qi - pi).collect()
}

/// Adds W^T dlogits into grad_x.
fn backprop_input(p: &Projector, dlogits: &[f64], grad_x: &mut [f64]) {
    for (i, &dz) in dlogits.iter().enumerate() {
        let row = &p.weight[i * p.in_dim..(i + 1) * p.in_dim];
        for (g, &w) in grad_x.iter_mut().zip(row) {
            *g += dz * w;
        }
    }
}

#[derive(Debug, Clone)]
pub struct NaiveAlignGrads {
    pub loss: f64,
    pub grad_v: Vec<f64>,
    pub grad_proj_v: ProjectorGrad,
    pub grad_proj_t: ProjectorGrad,
}

/// Naive symmetric objective:
/// KL(P_v(T_c) || P_t(T_c)) + KL(P_t(V) || P_v(V)), all on live parameters,
/// with gradients to both projectors and to V.
pub fn naive_alignment_loss(
    visual: &[f64],
    prototype: &[f64],
    proj_v: &Projector,
    proj_t: &Projector,
) -> Result<NaiveAlignGrads> {
    check_inputs(visual, prototype, proj_v, proj_t)?;
    let mut grad_proj_v = ProjectorGrad::zeros(proj_v);
    let mut grad_proj_t = ProjectorGrad::zeros(proj_t);
    let mut grad_v = vec![0.0; visual.len()];

    // KL( P_v(T_c) || P_t(T_c) )
    let zp = proj_v.logits(prototype);
    let zq = proj_t.logits(prototype);
    let mut loss = kl_from_logits(&zp, &zq);
    grad_proj_v.accumulate(&dkl_dzp(&zp, &zq), prototype);
    grad_proj_t.accumulate(&dkl_dzq(&zp, &zq), prototype);

    // KL( P_t(V) || P_v(V) )
    let zp = proj_t.logits(visual);
    let zq = proj_v.logits(visual);
    loss += kl_from_logits(&zp, &zq);
    let dzp = dkl_dzp(&zp, &zq);
    let dzq = dkl_dzq(&zp, &zq);
    grad_proj_t.accumulate(&dzp, visual);
    grad_proj_v.accumulate(&dzq, visual);
    backprop_input(proj_t, &dzp, &mut grad_v);
    backprop_input(proj_v, &dzq, &mut grad_v);

    Ok(NaiveAlignGrads {
        loss,
        grad_v,
        grad_proj_v,
        grad_proj_t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectorGradMode {
    /// Live projector parameters train through the alignment loss.
    Live,
    /// Projectors are never updated by backpropagation; only the retrieval
    /// model receives gradients from this loss.
    Frozen,
}

impl std::str::FromStr for ProjectorGradMode {
    type Err = LafgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(ProjectorGradMode::Live),
            "frozen" => Ok(ProjectorGradMode::Frozen),
            other => Err(LafgError::invalid(format!(
                "projector_grad must be live|frozen, got {other}"
            ))),
        }
    }
}

/// Live projectors plus their EMA mean copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaProjectorPair {
    pub live_v: Projector,
    pub live_t: Projector,
    pub mean_v: Projector,
    pub mean_t: Projector,
    pub alpha: f64,
    pub step: u64,
}

impl EmaProjectorPair {
    pub fn new(live_v: Projector, live_t: Projector, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(LafgError::invalid(format!(
                "ema alpha must be in (0, 1], got {alpha}"
            )));
        }
        // Mean parameters start equal to live parameters.
        Ok(EmaProjectorPair {
            mean_v: live_v.clone(),
            mean_t: live_t.clone(),
            live_v,
            live_t,
            alpha,
            step: 0,
        })
    }

    pub fn seeded(in_dim: usize, out_dim: usize, alpha: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 6.0 / (in_dim as f64).sqrt();
        let live_v = Projector::seeded(in_dim, out_dim, scale, &mut rng);
        let live_t = Projector::seeded(in_dim, out_dim, scale, &mut rng);
        EmaProjectorPair::new(live_v, live_t, alpha)
    }

    /// E[theta] <- (1 - alpha) E[theta] + alpha * theta, both modalities.
    /// Never carries gradients.
    pub fn ema_update(&mut self) {
        let a = self.alpha;
        for (m, &l) in self.mean_v.weight.iter_mut().zip(&self.live_v.weight) {
            *m = (1.0 - a) * *m + a * l;
        }
        for (m, &l) in self.mean_v.bias.iter_mut().zip(&self.live_v.bias) {
            *m = (1.0 - a) * *m + a * l;
        }
        for (m, &l) in self.mean_t.weight.iter_mut().zip(&self.live_t.weight) {
            *m = (1.0 - a) * *m + a * l;
        }
        for (m, &l) in self.mean_t.bias.iter_mut().zip(&self.live_t.bias) {
            *m = (1.0 - a) * *m + a * l;
        }
        self.step += 1;
    }
}

#[derive(Debug, Clone)]
pub struct AlignGrads {
    pub loss: f64,
    pub grad_v: Vec<f64>,
    /// Zero in `Frozen` mode.
    pub grad_proj_v: ProjectorGrad,
    pub grad_proj_t: ProjectorGrad,
}

/// Stabilized objective:
/// KL( P_v(T_c; E[theta_v]) || P_t(T_c; theta_t) )
/// + KL( P_t(V; E[theta_t]) || P_v(V; theta_v) ).
/// The EMA target distributions are detached with respect to the EMA
/// parameters; gradients reach the live parameters in each denominator and V,
/// which feeds both distributions of its KL term.
pub fn alignment_loss(
    visual: &[f64],
    prototype: &[f64],
    pair: &EmaProjectorPair,
    mode: ProjectorGradMode,
) -> Result<AlignGrads> {
    check_inputs(visual, prototype, &pair.live_v, &pair.live_t)?;
    let mut grad_proj_v = ProjectorGrad::zeros(&pair.live_v);
    let mut grad_proj_t = ProjectorGrad::zeros(&pair.live_t);
    let mut grad_v = vec![0.0; visual.len()];

    // KL( P_v(T_c; E[theta_v]) || P_t(T_c; theta_t) ), target detached.
    let z_target = pair.mean_v.logits(prototype);
    let zq = pair.live_t.logits(prototype);
    let mut loss = kl_from_logits(&z_target, &zq);
    if mode == ProjectorGradMode::Live {
        grad_proj_t.accumulate(&dkl_dzq(&z_target, &zq), prototype);
    }

    // KL( P_t(V; E[theta_t]) || P_v(V; theta_v) ). Detachment stops gradients
    // to the EMA parameters, but V itself feeds both distributions, so its
    // gradient flows through the target's logits as well.
    let z_target = pair.mean_t.logits(visual);
    let zq = pair.live_v.logits(visual);
    loss += kl_from_logits(&z_target, &zq);
    let dzq = dkl_dzq(&z_target, &zq);
    if mode == ProjectorGradMode::Live {
        grad_proj_v.accumulate(&dzq, visual);
    }
    backprop_input(&pair.live_v, &dzq, &mut grad_v);
    backprop_input(&pair.mean_t, &dkl_dzp(&z_target, &zq), &mut grad_v);

    Ok(AlignGrads {
        loss,
        grad_v,
        grad_proj_v,
        grad_proj_t,
    })
}

fn check_inputs(
    visual: &[f64],
    prototype: &[f64],
    proj_v: &Projector,
    proj_t: &Projector,
) -> Result<()> {
    if proj_v.in_dim != proj_t.in_dim || proj_v.out_dim != proj_t.out_dim {
        return Err(LafgError::invalid("projector shapes differ"));
    }
    if visual.len() != proj_v.in_dim || prototype.len() != proj_v.in_dim {
        return Err(LafgError::invalid("embedding dimension mismatch"));
    }
    if visual.iter().chain(prototype).any(|v| !v.is_finite()) {
        return Err(LafgError::invalid("non-finite loss input"));
    }
    Ok(())
}
