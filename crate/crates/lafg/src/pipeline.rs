//! Stage orchestration with content-hash provenance: each stage records the
//! sha256 of its inputs and outputs in `run_records.jsonl`, reruns are skipped
//! when nothing changed, and tampered artifacts are rejected instead of
//! silently reused.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bank::{ClassEmbeddingTable, SemanticBank};
use crate::error::{LafgError, Result};
use crate::eval::{embed_dataset, RetrievalIndex};
use crate::manifest::ClassManifest;
use crate::synth::{generate_synthetic, SyntheticDataset, SyntheticSpec};
use crate::text_encode::{encode_bank, encode_class_descriptors, MockTextEncoder};
use crate::text_gen::{
    generate_descriptions, read_description_sets, write_description_sets, GenerateOptions, MockLlm,
};
use crate::trainer::{read_checkpoint, run_training, TrainConfig};
use crate::vocab::{build_prototypes, build_vocabulary, AttributeVocabulary, PrototypeSet};

/// Everything a full pipeline run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub spec: SyntheticSpec,
    pub train: TrainConfig,
    /// K values for the final Recall@K report.
    pub ks: Vec<usize>,
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LafgError::io(path, e))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| LafgError::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            spec: SyntheticSpec::default(),
            train: TrainConfig::default(),
            ks: vec![1, 2, 4, 8],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineRunRecord {
    pub stage: String,
    /// Relative path -> sha256 hex.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOutcome {
    pub stage: String,
    pub skipped: bool,
    pub wall_ms: u64,
}

pub const STAGE_ORDER: [&str; 8] = [
    "synth",
    "gen-desc",
    "encode",
    "encode-classes",
    "build-vocab",
    "build-protos",
    "train",
    "eval",
];

const DATA_FILES: [&str; 8] = [
    "data/train_classes.jsonl",
    "data/test_classes.jsonl",
    "data/train_samples.jsonl",
    "data/test_samples.jsonl",
    "data/train_features.bin",
    "data/test_features.bin",
    "data/synth_spec.json",
    "data/attributes.json",
];

fn stage_inputs(stage: &str) -> Vec<String> {
    let data: Vec<String> = DATA_FILES.iter().map(|s| s.to_string()).collect();
    match stage {
        "synth" => vec![],
        "gen-desc" | "encode-classes" => vec!["data/train_classes.jsonl".into()],
        "encode" => vec!["descs.jsonl".into()],
        "build-vocab" => vec!["bank.bin".into()],
        "build-protos" => vec!["classes.bin".into(), "vocab.bin".into()],
        "train" => {
            let mut v = vec!["protos.bin".into()];
            v.extend(data);
            v
        }
        "eval" => {
            let mut v = vec!["train/checkpoint.json".into()];
            v.extend(data);
            v
        }
        other => panic!("unknown stage {other}"),
    }
}

fn stage_outputs(stage: &str) -> Vec<String> {
    match stage {
        "synth" => DATA_FILES.iter().map(|s| s.to_string()).collect(),
        "gen-desc" => vec!["descs.jsonl".into()],
        "encode" => vec!["bank.bin".into()],
        "encode-classes" => vec!["classes.bin".into()],
        "build-vocab" => vec!["vocab.bin".into()],
        "build-protos" => vec!["protos.bin".into()],
        "train" => vec!["train/checkpoint.json".into(), "train/metrics.jsonl".into()],
        "eval" => vec!["results.jsonl".into()],
        other => panic!("unknown stage {other}"),
    }
}

/// Which stage produces a given artifact, for actionable dependency errors.
fn producer_of(rel: &str) -> Option<&'static str> {
    STAGE_ORDER
        .iter()
        .find(|s| stage_outputs(s).iter().any(|o| o == rel))
        .copied()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let f = fs::File::open(path).map_err(|e| LafgError::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = r.read(&mut buf).map_err(|e| LafgError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn records_path(out_dir: &Path) -> PathBuf {
    out_dir.join("run_records.jsonl")
}

pub fn read_run_records(out_dir: &Path) -> Result<Vec<PipelineRunRecord>> {
    let path = records_path(out_dir);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = fs::File::open(&path).map_err(|e| LafgError::io(&path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| LafgError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PipelineRunRecord = serde_json::from_str(&line)
            .map_err(|e| LafgError::corrupt(&path, format!("bad run record: {e}")))?;
        out.push(rec);
    }
    Ok(out)
}

fn append_run_record(out_dir: &Path, rec: &PipelineRunRecord) -> Result<()> {
    let path = records_path(out_dir);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| LafgError::io(&path, e))?;
    let line = serde_json::to_string(rec).map_err(|e| LafgError::Serde(e.to_string()))?;
    writeln!(f, "{line}").map_err(|e| LafgError::io(&path, e))
}

fn hash_rel_files(out_dir: &Path, rels: &[String]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for rel in rels {
        let path = out_dir.join(rel);
        if !path.exists() {
            let hint = match producer_of(rel) {
                Some(stage) => format!("{rel} (run the '{stage}' stage first)"),
                None => rel.clone(),
            };
            return Err(LafgError::MissingArtifact(hint));
        }
        map.insert(rel.clone(), sha256_file(&path)?);
    }
    Ok(map)
}

fn execute_stage(stage: &str, cfg: &PipelineConfig, out_dir: &Path) -> Result<()> {
    match stage {
        "synth" => {
            let ds = generate_synthetic(&cfg.spec)?;
            ds.write_dir(&out_dir.join("data"), &cfg.spec)
        }
        "gen-desc" => {
            let manifest = ClassManifest::read(&out_dir.join("data/train_classes.jsonl"))?;
            let sets = generate_descriptions(
                &manifest,
                cfg.train.n_descriptions,
                &MockLlm,
                None,
                &GenerateOptions::default(),
            )?
            .into_result()?;
            write_description_sets(&out_dir.join("descs.jsonl"), &sets)
        }
        "encode" => {
            let sets = read_description_sets(&out_dir.join("descs.jsonl"))?;
            let encoder = MockTextEncoder::new(cfg.train.embed_dim)?;
            encode_bank(&sets, &encoder)?.write(&out_dir.join("bank.bin"))
        }
        "encode-classes" => {
            let manifest = ClassManifest::read(&out_dir.join("data/train_classes.jsonl"))?;
            let encoder = MockTextEncoder::new(cfg.train.embed_dim)?;
            encode_class_descriptors(&manifest, &encoder)?.write(&out_dir.join("classes.bin"))
        }
        "build-vocab" => {
            let bank = SemanticBank::read(&out_dir.join("bank.bin"))?;
            let (vocab, _) = build_vocabulary(&bank, cfg.train.vocab_size, cfg.train.seed)?;
            vocab.write(&out_dir.join("vocab.bin"))
        }
        "build-protos" => {
            let table = ClassEmbeddingTable::read(&out_dir.join("classes.bin"))?;
            let vocab = AttributeVocabulary::read(&out_dir.join("vocab.bin"))?;
            build_prototypes(&table, &vocab, cfg.train.top_k, 0)?
                .write(&out_dir.join("protos.bin"))
        }
        "train" => {
            let ds = SyntheticDataset::read_dir(&out_dir.join("data"))?;
            let protos = PrototypeSet::read(&out_dir.join("protos.bin"))?;
            run_training(&cfg.train, &ds.train, &protos, Some(&out_dir.join("train")), None)?;
            Ok(())
        }
        "eval" => {
            let ds = SyntheticDataset::read_dir(&out_dir.join("data"))?;
            let ck = read_checkpoint(&out_dir.join("train/checkpoint.json"))?;
            let (embeddings, labels) = embed_dataset(&ck.model, &ds.test);
            let index = RetrievalIndex::build(embeddings, labels)?;
            let recall = index.recall_at_k(&cfg.ks)?;
            let path = out_dir.join("results.jsonl");
            let mut f = fs::File::create(&path).map_err(|e| LafgError::io(&path, e))?;
            for (k, r) in &recall {
                let line = serde_json::to_string(&serde_json::json!({"k": k, "recall": r}))
                    .map_err(|e| LafgError::Serde(e.to_string()))?;
                writeln!(f, "{line}").map_err(|e| LafgError::io(&path, e))?;
            }
            Ok(())
        }
        other => Err(LafgError::invalid(format!("unknown stage: {other}"))),
    }
}

/// Runs the requested stages (all of them when `stages` is None) in canonical
/// order. A stage is skipped when a prior record matches its config and input
/// hashes and every recorded output is still intact; `force` recomputes
/// unconditionally.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    out_dir: &Path,
    stages: Option<&[String]>,
    force: bool,
) -> Result<Vec<StageOutcome>> {
    if let Some(requested) = stages {
        for s in requested {
            if !STAGE_ORDER.contains(&s.as_str()) {
                return Err(LafgError::invalid(format!("unknown stage: {s}")));
            }
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| LafgError::io(out_dir, e))?;
    let config_snapshot =
        serde_json::to_value(cfg).map_err(|e| LafgError::Serde(e.to_string()))?;
    let mut latest: BTreeMap<String, PipelineRunRecord> = BTreeMap::new();
    for rec in read_run_records(out_dir)? {
        latest.insert(rec.stage.clone(), rec);
    }
    let mut outcomes = Vec::new();
    for &stage in STAGE_ORDER.iter() {
        if let Some(requested) = stages {
            if !requested.iter().any(|s| s == stage) {
                continue;
            }
        }
        let started = Instant::now();
        let inputs = hash_rel_files(out_dir, &stage_inputs(stage))?;
        if !force {
            if let Some(prev) = latest.get(stage) {
                if prev.config == config_snapshot && prev.inputs == inputs {
                    let all_present = prev
                        .outputs
                        .keys()
                        .all(|rel| out_dir.join(rel).exists());
                    if all_present {
                        for (rel, recorded) in &prev.outputs {
                            let current = sha256_file(&out_dir.join(rel))?;
                            if &current != recorded {
                                return Err(LafgError::corrupt(
                                    out_dir.join(rel),
                                    format!(
                                        "hash mismatch with the '{stage}' run record; \
                                         the artifact was modified outside the pipeline \
                                         (use --force to recompute)"
                                    ),
                                ));
                            }
                        }
                        outcomes.push(StageOutcome {
                            stage: stage.to_string(),
                            skipped: true,
                            wall_ms: started.elapsed().as_millis() as u64,
                        });
                        continue;
                    }
                }
            }
        }
        execute_stage(stage, cfg, out_dir)?;
        let outputs = hash_rel_files(out_dir, &stage_outputs(stage))?;
        let wall_ms = started.elapsed().as_millis() as u64;
        let rec = PipelineRunRecord {
            stage: stage.to_string(),
            inputs,
            outputs,
            config: config_snapshot.clone(),
            wall_ms,
        };
        append_run_record(out_dir, &rec)?;
        latest.insert(stage.to_string(), rec);
        outcomes.push(StageOutcome {
            stage: stage.to_string(),
            skipped: false,
            wall_ms,
        });
    }
    Ok(outcomes)
}
