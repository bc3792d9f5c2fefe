//! Recall@K evaluation with cosine distance on unseen-class splits, plus the
//! ablation harness that sweeps one hyperparameter axis over the synthetic
//! task.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LafgError, Result};
use crate::model::RetrievalModel;
use crate::synth::{generate_synthetic, FeatureDataset, SyntheticSpec};
use crate::text_encode::{encode_bank, encode_class_descriptors, MockTextEncoder};
use crate::text_gen::{generate_descriptions, GenerateOptions, MockLlm};
use crate::trainer::{run_training, TrainConfig, TrainResult, Trainer};
use crate::vecmath::{dot_f64, normalize_f64};
use crate::vocab::{build_prototypes, build_vocabulary};

/// Unit-normalized gallery; by convention the query set is the gallery itself
/// with self-matches excluded.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    pub dim: usize,
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
}

impl RetrievalIndex {
    pub fn build(embeddings: Vec<Vec<f64>>, labels: Vec<u32>) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(LafgError::invalid("embeddings and labels length mismatch"));
        }
        if embeddings.is_empty() {
            return Err(LafgError::invalid("empty gallery"));
        }
        let dim = embeddings[0].len();
        let mut normalized = Vec::with_capacity(embeddings.len());
        for mut e in embeddings {
            if e.len() != dim {
                return Err(LafgError::invalid("ragged gallery embeddings"));
            }
            if !normalize_f64(&mut e) {
                return Err(LafgError::invalid("zero gallery embedding"));
            }
            normalized.push(e);
        }
        Ok(RetrievalIndex {
            dim,
            embeddings: normalized,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Recall@k for each requested k: a query scores 1 when any of its k
    /// nearest gallery items (cosine, self excluded, similarity ties broken
    /// by lower gallery index) shares its label.
    pub fn recall_at_k(&self, ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
        let m = self.len();
        for &k in ks {
            if k == 0 || k >= m {
                return Err(LafgError::invalid(format!(
                    "k = {k} must be in [1, gallery size {m})"
                )));
            }
        }
        let max_k = ks.iter().copied().max().unwrap_or(1);
        let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
        for q in 0..m {
            let mut ranked: Vec<(usize, f64)> = (0..m)
                .filter(|&g| g != q)
                .map(|g| (g, dot_f64(&self.embeddings[q], &self.embeddings[g])))
                .collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let top: Vec<usize> = ranked[..max_k.min(ranked.len())]
                .iter()
                .map(|r| r.0)
                .collect();
            for &k in ks {
                if top[..k.min(top.len())]
                    .iter()
                    .any(|&g| self.labels[g] == self.labels[q])
                {
                    *hits.get_mut(&k).unwrap() += 1;
                }
            }
        }
        Ok(hits
            .into_iter()
            .map(|(k, h)| (k, h as f64 / m as f64))
            .collect())
    }
}

/// Embeds every sample of a feature split through the trained model.
pub fn embed_dataset(model: &RetrievalModel, ds: &FeatureDataset) -> (Vec<Vec<f64>>, Vec<u32>) {
    let embeddings = (0..ds.num_samples())
        .map(|r| model.forward(ds.feature(r)).embedding)
        .collect();
    let labels = ds.samples.iter().map(|s| s.class_id).collect();
    (embeddings, labels)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub recall: BTreeMap<usize, f64>,
    pub final_epoch_loss: f64,
}

/// End-to-end synthetic run: mock descriptions -> bank -> vocabulary ->
/// prototypes -> training -> unseen-class Recall@K.
pub fn run_synthetic_experiment(
    spec: &SyntheticSpec,
    config: &TrainConfig,
    ks: &[usize],
) -> Result<(ExperimentReport, TrainResult, Trainer)> {
    config.validate()?;
    let ds = generate_synthetic(spec)?;
    let encoder = MockTextEncoder::new(config.embed_dim)?;
    let descs = generate_descriptions(
        &ds.train.classes,
        config.n_descriptions,
        &MockLlm,
        None,
        &GenerateOptions::default(),
    )?
    .into_result()?;
    let bank = encode_bank(&descs, &encoder)?;
    let (vocab, _) = build_vocabulary(&bank, config.vocab_size, config.seed)?;
    let table = encode_class_descriptors(&ds.train.classes, &encoder)?;
    let protos = build_prototypes(&table, &vocab, config.top_k, 0)?;
    let (trainer, result) = run_training(config, &ds.train, &protos, None, None)?;
    let (embeddings, labels) = embed_dataset(&trainer.model, &ds.test);
    let index = RetrievalIndex::build(embeddings, labels)?;
    let recall = index.recall_at_k(ks)?;
    let report = ExperimentReport {
        recall,
        final_epoch_loss: result.per_epoch.last().map(|e| e.l_total).unwrap_or(0.0),
    };
    Ok((report, result, trainer))
}

/// Sweep axes mirroring the published hyperparameter tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    N,
    VocabSize,
    TopK,
    ProjDim,
    EmaAlpha,
    Beta,
}

impl std::str::FromStr for AblationAxis {
    type Err = LafgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(AblationAxis::N),
            "vocab_size" => Ok(AblationAxis::VocabSize),
            "top_k" => Ok(AblationAxis::TopK),
            "proj_dim" => Ok(AblationAxis::ProjDim),
            "ema_alpha" => Ok(AblationAxis::EmaAlpha),
            "beta" => Ok(AblationAxis::Beta),
            other => Err(LafgError::invalid(format!("unknown ablation axis: {other}"))),
        }
    }
}

impl AblationAxis {
    /// The value grid published for this axis.
    pub fn published_grid(&self) -> Vec<f64> {
        match self {
            AblationAxis::N => vec![5.0, 10.0, 15.0, 20.0, 25.0],
            AblationAxis::VocabSize => vec![32.0, 64.0, 128.0, 256.0, 512.0],
            AblationAxis::TopK => vec![16.0, 24.0, 32.0, 40.0, 48.0],
            AblationAxis::ProjDim => vec![32.0, 64.0, 128.0, 256.0, 512.0],
            AblationAxis::EmaAlpha => vec![0.1, 0.2, 0.4, 0.6, 0.8],
            AblationAxis::Beta => vec![1.0, 5.0, 10.0, 15.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub value: f64,
    pub recall: BTreeMap<usize, f64>,
    pub final_epoch_loss: f64,
}

/// One training + evaluation run per value, seeded identically. When a value
/// makes the derived config infeasible (e.g. a vocabulary smaller than the
/// base Top-K), the dependent parameter is clamped to keep the run valid.
pub fn ablate(
    axis: AblationAxis,
    values: &[f64],
    base_config: &TrainConfig,
    spec: &SyntheticSpec,
    ks: &[usize],
) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(LafgError::invalid("ablation needs at least one value"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut config = base_config.clone();
        match axis {
            AblationAxis::N => config.n_descriptions = as_count(value, "n")?,
            AblationAxis::VocabSize => config.vocab_size = as_count(value, "vocab_size")?,
            AblationAxis::TopK => config.top_k = as_count(value, "top_k")?,
            AblationAxis::ProjDim => config.proj_dim = as_count(value, "proj_dim")?,
            AblationAxis::EmaAlpha => config.ema_alpha = value,
            AblationAxis::Beta => config.beta = value,
        }
        // Keep dependent parameters consistent across the sweep.
        if config.top_k > config.vocab_size {
            config.top_k = config.vocab_size;
        }
        let max_vocab = spec.num_train_classes * config.n_descriptions;
        if config.vocab_size > max_vocab {
            return Err(LafgError::invalid(format!(
                "vocab_size {} exceeds bank rows {max_vocab}; enlarge the synthetic spec",
                config.vocab_size
            )));
        }
        let (report, _, _) = run_synthetic_experiment(spec, &config, ks)?;
        rows.push(AblationRow {
            axis,
            value,
            recall: report.recall,
            final_epoch_loss: report.final_epoch_loss,
        });
    }
    Ok(rows)
}

fn as_count(value: f64, name: &str) -> Result<usize> {
    if value < 1.0 || value.fract() != 0.0 {
        return Err(LafgError::invalid(format!(
            "{name} sweep values must be positive integers, got {value}"
        )));
    }
    Ok(value as usize)
}
