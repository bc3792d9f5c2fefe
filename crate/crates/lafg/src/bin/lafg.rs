//! CLI entry point. Every subcommand is a thin shell over a library function;
//! config precedence is CLI flag > config file > built-in defaults.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lafg::bank::{ClassEmbeddingTable, SemanticBank};
use lafg::error::{LafgError, Result};
use lafg::eval::{embed_dataset, ablate, AblationAxis, RetrievalIndex};
use lafg::manifest::ClassManifest;
use lafg::pipeline::{run_pipeline, PipelineConfig};
use lafg::synth::{generate_synthetic, SyntheticDataset, SyntheticSpec};
use lafg::text_encode::{encode_bank, encode_class_descriptors, MockTextEncoder, TextEncoder};
use lafg::text_gen::{
    generate_descriptions, read_description_sets, write_description_sets, GenerateOptions,
    LlmClient, MockLlm, API_KEY_ENV,
};
use lafg::trainer::{read_checkpoint, run_training, TrainConfig};
use lafg::vocab::{build_prototypes, build_vocabulary, AttributeVocabulary, PrototypeSet};

#[derive(Parser)]
#[command(
    name = "lafg",
    about = "Language-driven fine-grained retrieval pipeline",
    long_about = "Turns category names into attribute-level linguistic prototypes \
(description generation, text encoding, vocabulary clustering, prototype fusion), \
trains a retrieval embedder under contrastive + distribution-alignment losses, and \
evaluates Recall@K on unseen classes.\n\n\
Config file keys (TOML) and their defaults:\n  \
n_descriptions = 20       descriptions generated per class\n  \
vocab_size = 128          attribute vocabulary size |N|\n  \
top_k = 40                attributes fused per category prototype\n  \
proj_dim = 256            projector output dimension\n  \
ema_alpha = 0.2           EMA momentum for the mean projectors\n  \
projector_grad = \"live\"   \"live\" or \"frozen\" projector updates\n  \
beta = 10.0               alignment loss weight\n  \
tau = 0.1                 contrastive temperature\n  \
lr = 1e-5                 base learning rate (x0.9 every 5 epochs)\n  \
momentum = 0.9, weight_decay = 1e-4\n  \
batch_classes = 5         classes per batch (2 samples each)\n  \
epochs = 200, seed = 7, embed_dim = 32, hidden_dim = 0\n  \
image_resize = 256, image_crop = 224\n\n\
Live LLM providers read credentials from the environment variable LAFG_API_KEY; \
its value is never logged."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic attribute-combination dataset
    GenSynth(GenSynthArgs),
    /// Generate per-class attribute descriptions via an LLM client
    GenDesc(GenDescArgs),
    /// Encode descriptions into a semantic bank
    Encode(EncodeArgs),
    /// Encode class-name descriptors into a class embedding table
    EncodeClasses(EncodeClassesArgs),
    /// Cluster the semantic bank into an attribute vocabulary
    BuildVocab(BuildVocabArgs),
    /// Fuse Top-K vocabulary attributes into category prototypes
    BuildProtos(BuildProtosArgs),
    /// Train the retrieval embedder
    Train(TrainArgs),
    /// Evaluate Recall@K from a checkpoint
    Eval(EvalArgs),
    /// Sweep one hyperparameter axis on the synthetic task
    Ablate(AblateArgs),
    /// Run the whole pipeline with hash-based stage caching
    Run(RunArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Synthetic spec (JSON); omit for the built-in default
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDescArgs {
    /// Class manifest (JSONL)
    #[arg(long)]
    manifest: PathBuf,
    /// Descriptions per class
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// LLM provider; only "mock" ships with the tool
    #[arg(long, default_value = "mock")]
    provider: String,
    /// Fingerprint-keyed description cache (JSONL, append-only)
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Output description sets (JSONL)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    /// Description sets (JSONL)
    #[arg(long)]
    desc: PathBuf,
    /// Text encoder; only "mock" ships with the tool
    #[arg(long, default_value = "mock")]
    encoder: String,
    /// Embedding dimension
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Output semantic bank
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeClassesArgs {
    /// Class manifest (JSONL)
    #[arg(long)]
    manifest: PathBuf,
    /// Text encoder; only "mock" ships with the tool
    #[arg(long, default_value = "mock")]
    encoder: String,
    /// Embedding dimension
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Output class embedding table
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Semantic bank
    #[arg(long)]
    bank: PathBuf,
    /// Vocabulary size |N|
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Clustering seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output vocabulary
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildProtosArgs {
    /// Class embedding table
    #[arg(long)]
    classes: PathBuf,
    /// Attribute vocabulary
    #[arg(long)]
    vocab: PathBuf,
    /// Attributes fused per prototype
    #[arg(long, default_value_t = 40)]
    topk: usize,
    /// Output prototype set
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config (TOML); omitted keys fall back to built-in defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (gen-synth layout)
    #[arg(long)]
    data: PathBuf,
    /// Category prototype set
    #[arg(long)]
    protos: PathBuf,
    /// Output directory for metrics.jsonl and checkpoint.json
    #[arg(long)]
    out: PathBuf,
    /// Resume from a checkpoint written with the same config
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

/// Frequently swept keys, overridable without editing the config file.
#[derive(Args)]
struct ConfigOverrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_classes: Option<usize>,
}

impl ConfigOverrides {
    fn apply(&self, config: &mut TrainConfig) {
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.beta {
            config.beta = v;
        }
        if let Some(v) = self.lr {
            config.lr = v;
        }
        if let Some(v) = self.batch_classes {
            config.batch_classes = v;
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// checkpoint.json from train
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory (gen-synth layout)
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated K values
    #[arg(long, default_value = "1,2,4,8", value_delimiter = ',')]
    ks: Vec<usize>,
    /// Which split to evaluate
    #[arg(long, default_value = "test")]
    split: String,
    /// Output report (JSON lines, one record per K)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Axis: n, vocab_size, top_k, proj_dim, ema_alpha, or beta
    #[arg(long)]
    axis: AblationAxisArg,
    /// Comma-separated sweep values; omit for the published grid
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Base training config (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic spec (JSON); omit for the built-in ablation default
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Comma-separated K values for the per-run report
    #[arg(long, default_value = "1,2,4", value_delimiter = ',')]
    ks: Vec<usize>,
    /// Output table (JSON lines, one record per sweep value)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone)]
struct AblationAxisArg(AblationAxis);

impl std::str::FromStr for AblationAxisArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.parse::<AblationAxis>()
            .map(AblationAxisArg)
            .map_err(|e| e.to_string())
    }
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (TOML with [spec], [train], ks); omit for defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Working directory for all artifacts and run records
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of stages; omit for all
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<String>>,
    /// Recompute every stage, ignoring cached run records
    #[arg(long)]
    force: bool,
}

fn make_client(provider: &str) -> Result<Box<dyn LlmClient>> {
    match provider {
        "mock" => Ok(Box::new(MockLlm)),
        other => Err(LafgError::Config(format!(
            "no built-in client for provider '{other}'; live providers read \
             credentials from the {API_KEY_ENV} environment variable"
        ))),
    }
}

fn make_encoder(name: &str, dim: usize) -> Result<Box<dyn TextEncoder>> {
    match name {
        "mock" => Ok(Box::new(MockTextEncoder::new(dim)?)),
        other => Err(LafgError::Config(format!(
            "no built-in text encoder named '{other}'"
        ))),
    }
}

fn load_train_config(path: Option<&PathBuf>, overrides: &ConfigOverrides) -> Result<TrainConfig> {
    let mut config = match path {
        Some(p) => TrainConfig::from_toml_file(p)?,
        None => TrainConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn load_synth_spec(path: Option<&PathBuf>) -> Result<SyntheticSpec> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| LafgError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| LafgError::Config(e.to_string()))
        }
        None => Ok(SyntheticSpec::default()),
    }
}

fn write_jsonl<T: serde::Serialize>(path: &PathBuf, records: &[T]) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path).map_err(|e| LafgError::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| LafgError::Serde(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| LafgError::io(path, e))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth(a) => {
            let spec = load_synth_spec(a.spec.as_ref())?;
            let ds = generate_synthetic(&spec)?;
            ds.write_dir(&a.out, &spec)?;
            println!(
                "wrote {} train / {} test classes to {}",
                ds.train.classes.len(),
                ds.test.classes.len(),
                a.out.display()
            );
        }
        Command::GenDesc(a) => {
            let manifest = ClassManifest::read(&a.manifest)?;
            let client = make_client(&a.provider)?;
            let outcome = generate_descriptions(
                &manifest,
                a.n,
                client.as_ref(),
                a.cache.as_deref(),
                &GenerateOptions::default(),
            )?;
            println!(
                "{} sets ({} cache hits, {} client calls)",
                outcome.sets.len(),
                outcome.cache_hits,
                outcome.client_calls
            );
            let sets = outcome.into_result()?;
            write_description_sets(&a.out, &sets)?;
        }
        Command::Encode(a) => {
            let sets = read_description_sets(&a.desc)?;
            let encoder = make_encoder(&a.encoder, a.dim)?;
            let bank = encode_bank(&sets, encoder.as_ref())?;
            bank.write(&a.out)?;
            println!(
                "bank: {} classes x {} descriptions x {} dims",
                bank.num_classes, bank.descs_per_class, bank.dim
            );
        }
        Command::EncodeClasses(a) => {
            let manifest = ClassManifest::read(&a.manifest)?;
            let encoder = make_encoder(&a.encoder, a.dim)?;
            let table = encode_class_descriptors(&manifest, encoder.as_ref())?;
            table.write(&a.out)?;
            println!("class table: {} classes x {} dims", table.num_classes, table.dim);
        }
        Command::BuildVocab(a) => {
            let bank = SemanticBank::read(&a.bank)?;
            let (vocab, trace) = build_vocabulary(&bank, a.size, a.seed)?;
            vocab.write(&a.out)?;
            println!(
                "vocabulary: {} centroids, {} k-means iterations, final inertia {:.6}",
                vocab.size,
                trace.iterations,
                trace.inertia.last().copied().unwrap_or(0.0)
            );
        }
        Command::BuildProtos(a) => {
            let table = ClassEmbeddingTable::read(&a.classes)?;
            let vocab = AttributeVocabulary::read(&a.vocab)?;
            let protos = build_prototypes(&table, &vocab, a.topk, 0)?;
            protos.write(&a.out)?;
            println!(
                "prototypes: {} classes, top-{} of {} attributes",
                protos.prototypes.len(),
                protos.top_k,
                vocab.size
            );
        }
        Command::Train(a) => {
            let config = load_train_config(a.config.as_ref(), &a.overrides)?;
            let ds = SyntheticDataset::read_dir(&a.data)?;
            let protos = PrototypeSet::read(&a.protos)?;
            let (trainer, result) = run_training(
                &config,
                &ds.train,
                &protos,
                Some(&a.out),
                a.resume.as_deref(),
            )?;
            let last = result.per_epoch.last().expect("at least one epoch");
            println!(
                "trained {} epochs ({} steps); final losses aux {:.4} ali {:.4} total {:.4}",
                trainer.epoch, trainer.global_step, last.l_aux, last.l_ali, last.l_total
            );
        }
        Command::Eval(a) => {
            let ck = read_checkpoint(&a.checkpoint)?;
            let ds = SyntheticDataset::read_dir(&a.data)?;
            let split = match a.split.as_str() {
                "test" => &ds.test,
                "train" => &ds.train,
                other => {
                    return Err(LafgError::invalid(format!(
                        "split must be train or test, got {other}"
                    )))
                }
            };
            let (embeddings, labels) = embed_dataset(&ck.model, split);
            let index = RetrievalIndex::build(embeddings, labels)?;
            let recall = index.recall_at_k(&a.ks)?;
            let records: Vec<serde_json::Value> = recall
                .iter()
                .map(|(k, r)| serde_json::json!({"k": k, "recall": r}))
                .collect();
            write_jsonl(&a.out, &records)?;
            for (k, r) in &recall {
                println!("recall@{k}: {:.4}", r);
            }
        }
        Command::Ablate(a) => {
            let config = load_train_config(
                a.config.as_ref(),
                &ConfigOverrides {
                    seed: None,
                    epochs: None,
                    beta: None,
                    lr: None,
                    batch_classes: None,
                },
            )?;
            let spec = match a.spec.as_ref() {
                Some(p) => load_synth_spec(Some(p))?,
                // Default sweep spec: enough classes that even the largest
                // published vocabulary grid (512) fits in the bank.
                None => SyntheticSpec {
                    num_train_classes: 30,
                    num_test_classes: 10,
                    ..SyntheticSpec::default()
                },
            };
            let axis = a.axis.0;
            let values = a.values.unwrap_or_else(|| axis.published_grid());
            let rows = ablate(axis, &values, &config, &spec, &a.ks)?;
            write_jsonl(&a.out, &rows)?;
            for row in &rows {
                let r1 = row.recall.get(&1).copied().unwrap_or(f64::NAN);
                println!("{:?} = {}: recall@1 {:.4}", row.axis, row.value, r1);
            }
        }
        Command::Run(a) => {
            let cfg = match a.config.as_ref() {
                Some(p) => PipelineConfig::from_toml_file(p)?,
                None => PipelineConfig::default(),
            };
            let outcomes = run_pipeline(&cfg, &a.out, a.stages.as_deref(), a.force)?;
            for o in &outcomes {
                let status = if o.skipped { "skipped" } else { "ran" };
                println!("{:<15} {status} ({} ms)", o.stage, o.wall_ms);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
