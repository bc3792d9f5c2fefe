//! Training loop: two-instance-per-class batch sampling, the combined
//! contrastive + alignment objective, SGD with momentum and the stepped
//! exponential learning-rate decay, EMA projector updates, and checkpointing.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{
    alignment_loss, EmaProjectorPair, ProjectorGrad, ProjectorGradMode,
};
use crate::error::{LafgError, Result};
use crate::metric::{aux_loss, total_loss, EmbeddingBatch};
use crate::model::{sgd_step, Forward, ModelGrads, RetrievalModel};
use crate::synth::FeatureDataset;
use crate::vecmath::normalize_f64;
use crate::vocab::PrototypeSet;

fn default_n_descriptions() -> usize { 20 }
fn default_vocab_size() -> usize { 128 }
fn default_top_k() -> usize { 40 }
fn default_proj_dim() -> usize { 256 }
fn default_ema_alpha() -> f64 { 0.2 }
fn default_projector_grad() -> ProjectorGradMode { ProjectorGradMode::Live }
fn default_beta() -> f64 { 10.0 }
fn default_tau() -> f64 { 0.1 }
fn default_lr() -> f64 { 1e-5 }
fn default_momentum() -> f64 { 0.9 }
fn default_weight_decay() -> f64 { 1e-4 }
fn default_batch_classes() -> usize { 5 }
fn default_epochs() -> usize { 200 }
fn default_lr_decay() -> f64 { 0.9 }
fn default_lr_decay_every() -> usize { 5 }
fn default_image_resize() -> usize { 256 }
fn default_image_crop() -> usize { 224 }
fn default_seed() -> u64 { 7 }
fn default_embed_dim() -> usize { 32 }

/// All training hyperparameters. Unknown keys in a config file are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_n_descriptions")]
    pub n_descriptions: usize,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_proj_dim")]
    pub proj_dim: usize,
    #[serde(default = "default_ema_alpha")]
    pub ema_alpha: f64,
    #[serde(default = "default_projector_grad")]
    pub projector_grad: ProjectorGradMode,
    #[serde(default)]
    pub normalize_prototypes: bool,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// N: classes per batch; the batch holds 2N samples.
    #[serde(default = "default_batch_classes")]
    pub batch_classes: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_lr_decay_every")]
    pub lr_decay_every: usize,
    #[serde(default = "default_image_resize")]
    pub image_resize: usize,
    #[serde(default = "default_image_crop")]
    pub image_crop: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// d: retrieval embedding dimension; must match the prototype dimension.
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    /// Backbone hidden width; 0 selects a single linear layer.
    #[serde(default)]
    pub hidden_dim: usize,
    /// Start the (linear, square) backbone near the identity map, standing in
    /// for a backbone pretrained into the shared vision-language space.
    /// Requires hidden_dim == 0 and matching input/embedding dimensions.
    #[serde(default)]
    pub identity_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses all defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positives: [(&str, f64); 7] = [
            ("ema_alpha", self.ema_alpha),
            ("tau", self.tau),
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("n_descriptions", self.n_descriptions as f64),
            ("batch_classes", self.batch_classes as f64),
            ("epochs", self.epochs as f64),
        ];
        for (name, v) in positives {
            if v <= 0.0 {
                return Err(LafgError::invalid(format!("{name} must be positive")));
            }
        }
        if self.beta < 0.0 || self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(LafgError::invalid("beta/momentum/weight_decay must be >= 0"));
        }
        if self.ema_alpha > 1.0 {
            return Err(LafgError::invalid("ema_alpha must be in (0, 1]"));
        }
        if self.top_k == 0 || self.top_k > self.vocab_size {
            return Err(LafgError::invalid("top_k must be in [1, vocab_size]"));
        }
        if self.lr_decay_every == 0 || self.proj_dim == 0 || self.embed_dim == 0 {
            return Err(LafgError::invalid(
                "lr_decay_every, proj_dim and embed_dim must be positive",
            ));
        }
        Ok(())
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LafgError::io(path, e))?;
        let cfg: TrainConfig =
            toml::from_str(&text).map_err(|e| LafgError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Learning rate at a 0-based epoch under the stepped exponential decay.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// Draws N eligible classes (>= 2 samples each) and two distinct sample rows
/// per class, all without replacement within the batch.
pub fn sample_batch(
    dataset: &FeatureDataset,
    n_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<u32>)> {
    let mut by_class: HashMap<u32, Vec<usize>> = HashMap::new();
    for (row, s) in dataset.samples.iter().enumerate() {
        by_class.entry(s.class_id).or_default().push(row);
    }
    let mut eligible: Vec<u32> = by_class
        .iter()
        .filter(|(_, rows)| rows.len() >= 2)
        .map(|(&c, _)| c)
        .collect();
    eligible.sort_unstable();
    if eligible.len() < n_classes {
        return Err(LafgError::invalid(format!(
            "need {n_classes} classes with >= 2 samples, found {}",
            eligible.len()
        )));
    }
    // Partial Fisher-Yates for the class draw.
    for i in 0..n_classes {
        let j = rng.gen_range(i..eligible.len());
        eligible.swap(i, j);
    }
    let mut rows = Vec::with_capacity(2 * n_classes);
    let mut labels = Vec::with_capacity(2 * n_classes);
    for &c in &eligible[..n_classes] {
        let class_rows = &by_class[&c];
        let a = rng.gen_range(0..class_rows.len());
        let mut b = rng.gen_range(0..class_rows.len() - 1);
        if b >= a {
            b += 1;
        }
        rows.push(class_rows[a]);
        rows.push(class_rows[b]);
        labels.push(c);
        labels.push(c);
    }
    Ok((rows, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub aux: f64,
    pub align: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_aux: f64,
    pub l_ali: f64,
    pub l_total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: RetrievalModel,
    pub pair: EmaProjectorPair,
    pub model_vel: ModelGrads,
    pub vel_proj_v: ProjectorGrad,
    pub vel_proj_t: ProjectorGrad,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub global_step: u64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: RetrievalModel,
    pub pair: EmaProjectorPair,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub global_step: u64,
    model_vel: ModelGrads,
    vel_proj_v: ProjectorGrad,
    vel_proj_t: ProjectorGrad,
    prototypes: HashMap<u32, Vec<f64>>,
}

impl Trainer {
    pub fn new(config: TrainConfig, in_dim: usize, protos: &PrototypeSet) -> Result<Self> {
        config.validate()?;
        if protos.dim != config.embed_dim {
            return Err(LafgError::Config(format!(
                "prototype dimension {} != embed_dim {}",
                protos.dim, config.embed_dim
            )));
        }
        let model = if config.identity_init {
            if config.hidden_dim != 0 || in_dim != config.embed_dim {
                return Err(LafgError::Config(
                    "identity_init needs hidden_dim = 0 and embed_dim equal to the feature dimension"
                        .into(),
                ));
            }
            RetrievalModel::near_identity(in_dim, 0.02, config.seed ^ 0x6d6f64656c)?
        } else {
            RetrievalModel::seeded(
                in_dim,
                config.hidden_dim,
                config.embed_dim,
                config.seed ^ 0x6d6f64656c,
            )?
        };
        let pair = EmaProjectorPair::seeded(
            config.embed_dim,
            config.proj_dim,
            config.ema_alpha,
            config.seed ^ 0x70726f6a,
        )?;
        let mut prototypes = HashMap::new();
        for p in &protos.prototypes {
            let mut t: Vec<f64> = p.prototype.iter().map(|&v| v as f64).collect();
            if config.normalize_prototypes {
                normalize_f64(&mut t);
            }
            prototypes.insert(p.class_id, t);
        }
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model_vel: ModelGrads::zeros(&model),
            vel_proj_v: ProjectorGrad::zeros(&pair.live_v),
            vel_proj_t: ProjectorGrad::zeros(&pair.live_t),
            model,
            pair,
            config,
            epoch: 0,
            global_step: 0,
            prototypes,
        })
    }

    /// One optimizer step on a sampled batch, followed by the EMA update.
    pub fn train_step(
        &mut self,
        dataset: &FeatureDataset,
        rows: &[usize],
        labels: &[u32],
        lr: f64,
    ) -> Result<StepLosses> {
        for l in labels {
            if !self.prototypes.contains_key(l) {
                return Err(LafgError::Config(format!(
                    "no prototype for class {l} in batch"
                )));
            }
        }
        let forwards: Vec<Forward> = rows
            .iter()
            .map(|&r| self.model.forward(dataset.feature(r)))
            .collect();
        let embeddings: Vec<Vec<f64>> = forwards.iter().map(|f| f.embedding.clone()).collect();
        let batch = EmbeddingBatch::new(embeddings, labels.to_vec())?;
        let aux = aux_loss(&batch, self.config.tau)?;

        let k_total = rows.len() as f64;
        let mut align_total = 0.0;
        let mut grad_proj_v = ProjectorGrad::zeros(&self.pair.live_v);
        let mut grad_proj_t = ProjectorGrad::zeros(&self.pair.live_t);
        let mut grad_embeddings: Vec<Vec<f64>> = aux.grads;
        if self.config.beta > 0.0 {
            for (i, fwd) in forwards.iter().enumerate() {
                let proto = &self.prototypes[&labels[i]];
                let out = alignment_loss(
                    &fwd.embedding,
                    proto,
                    &self.pair,
                    self.config.projector_grad,
                )?;
                align_total += out.loss;
                let coeff = self.config.beta / k_total;
                for (g, &dv) in grad_embeddings[i].iter_mut().zip(&out.grad_v) {
                    *g += coeff * dv;
                }
                grad_proj_v.add(&out.grad_proj_v);
                grad_proj_t.add(&out.grad_proj_t);
            }
            grad_proj_v.scale(self.config.beta / k_total);
            grad_proj_t.scale(self.config.beta / k_total);
        }
        let align_mean = align_total / k_total;
        let total = total_loss(aux.loss, align_mean, self.config.beta)?;
        if !total.is_finite() {
            return Err(LafgError::Config("non-finite training loss".into()));
        }

        let mut model_grads = ModelGrads::zeros(&self.model);
        for (fwd, grad) in forwards.iter().zip(&grad_embeddings) {
            self.model.backward(fwd, grad, &mut model_grads);
        }
        let (m, wd) = (self.config.momentum, self.config.weight_decay);
        sgd_step(&mut self.model.w1, &model_grads.w1, &mut self.model_vel.w1, lr, m, wd);
        sgd_step(&mut self.model.b1, &model_grads.b1, &mut self.model_vel.b1, lr, m, wd);
        sgd_step(&mut self.model.w2, &model_grads.w2, &mut self.model_vel.w2, lr, m, wd);
        sgd_step(&mut self.model.b2, &model_grads.b2, &mut self.model_vel.b2, lr, m, wd);
        if self.config.projector_grad == ProjectorGradMode::Live {
            sgd_step(&mut self.pair.live_v.weight, &grad_proj_v.weight, &mut self.vel_proj_v.weight, lr, m, wd);
            sgd_step(&mut self.pair.live_v.bias, &grad_proj_v.bias, &mut self.vel_proj_v.bias, lr, m, wd);
            sgd_step(&mut self.pair.live_t.weight, &grad_proj_t.weight, &mut self.vel_proj_t.weight, lr, m, wd);
            sgd_step(&mut self.pair.live_t.bias, &grad_proj_t.bias, &mut self.vel_proj_t.bias, lr, m, wd);
        }
        self.global_step += 1;
        // EMA follows the optimizer step, one update per step.
        self.pair.ema_update();
        debug_assert_eq!(self.pair.step, self.global_step);

        Ok(StepLosses {
            aux: aux.loss,
            align: align_mean,
            total,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            pair: self.pair.clone(),
            model_vel: self.model_vel.clone(),
            vel_proj_v: self.vel_proj_v.clone(),
            vel_proj_t: self.vel_proj_t.clone(),
            rng: self.rng.clone(),
            epoch: self.epoch,
            global_step: self.global_step,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint, protos: &PrototypeSet) -> Result<Self> {
        let mut t = Trainer::new(ck.config.clone(), ck.model.in_dim, protos)?;
        t.model = ck.model;
        t.pair = ck.pair;
        t.model_vel = ck.model_vel;
        t.vel_proj_v = ck.vel_proj_v;
        t.vel_proj_t = ck.vel_proj_t;
        t.rng = ck.rng;
        t.epoch = ck.epoch;
        t.global_step = ck.global_step;
        Ok(t)
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub per_step: Vec<StepLosses>,
    pub per_epoch: Vec<EpochRecord>,
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(ck).map_err(|e| LafgError::Serde(e.to_string()))?;
    fs::write(path, json).map_err(|e| LafgError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| LafgError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LafgError::corrupt(path, e.to_string()))
}

/// Runs the full schedule. `out_dir`, when given, receives `metrics.jsonl`
/// and `checkpoint.json`. `resume` restores a checkpoint whose config must
/// match exactly.
pub fn run_training(
    config: &TrainConfig,
    dataset: &FeatureDataset,
    protos: &PrototypeSet,
    out_dir: Option<&Path>,
    resume: Option<&Path>,
) -> Result<(Trainer, TrainResult)> {
    let mut trainer = match resume {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            if &ck.config != config {
                return Err(LafgError::Config(
                    "resume checkpoint was trained with a different config".into(),
                ));
            }
            Trainer::from_checkpoint(ck, protos)?
        }
        None => Trainer::new(config.clone(), dataset.dim, protos)?,
    };
    let steps_per_epoch =
        (dataset.num_samples() / (2 * config.batch_classes)).max(1);
    let mut result = TrainResult {
        per_step: Vec::new(),
        per_epoch: Vec::new(),
    };
    let mut metrics_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| LafgError::io(dir, e))?;
            Some(
                fs::File::create(dir.join("metrics.jsonl"))
                    .map_err(|e| LafgError::io(dir.join("metrics.jsonl"), e))?,
            )
        }
        None => None,
    };
    while trainer.epoch < config.epochs {
        let lr = config.lr_at_epoch(trainer.epoch);
        let mut sums = StepLosses {
            aux: 0.0,
            align: 0.0,
            total: 0.0,
        };
        for _ in 0..steps_per_epoch {
            let (rows, labels) = sample_batch(dataset, config.batch_classes, &mut trainer.rng)?;
            let losses = trainer.train_step(dataset, &rows, &labels, lr)?;
            sums.aux += losses.aux;
            sums.align += losses.align;
            sums.total += losses.total;
            result.per_step.push(losses);
        }
        let record = EpochRecord {
            epoch: trainer.epoch,
            l_aux: sums.aux / steps_per_epoch as f64,
            l_ali: sums.align / steps_per_epoch as f64,
            l_total: sums.total / steps_per_epoch as f64,
            lr,
        };
        if let Some(f) = metrics_file.as_mut() {
            let line =
                serde_json::to_string(&record).map_err(|e| LafgError::Serde(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| LafgError::io("metrics.jsonl", e))?;
        }
        result.per_epoch.push(record);
        trainer.epoch += 1;
    }
    if let Some(dir) = out_dir {
        write_checkpoint(&dir.join("checkpoint.json"), &trainer.checkpoint())?;
    }
    Ok((trainer, result))
}
