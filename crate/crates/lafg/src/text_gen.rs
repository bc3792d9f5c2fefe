//! Attribute-oriented description generation: one prompt template, a pluggable
//! LLM client with a deterministic offline mock, and a fingerprint-keyed
//! append-only cache.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LafgError, Result};
use crate::manifest::ClassManifest;

const PROMPT_TEMPLATE: &str = "Generate {n} distinct and descriptive statements that capture \
the key visual attributes of {class}. Include holistic semantic characteristics and \
fine-grained textural details that would help distinguish {class} from other visually \
similar subcategories. Texts should be of the form: an appearance description of {class}. \
It + descriptive contexts";

/// Environment variable consulted for live-client credentials. Its value is
/// never logged.
pub const API_KEY_ENV: &str = "LAFG_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionSet {
    pub class_id: u32,
    pub class_name: String,
    pub prompt_fingerprint: String,
    pub descriptions: Vec<String>,
}

pub fn build_prompt(class_name: &str, n: usize) -> Result<String> {
    if class_name.trim().is_empty() {
        return Err(LafgError::invalid("class_name must be non-empty"));
    }
    if n == 0 {
        return Err(LafgError::invalid("n must be >= 1"));
    }
    Ok(PROMPT_TEMPLATE
        .replace("{n}", &n.to_string())
        .replace("{class}", class_name))
}

/// Content hash identifying the exact request: template, class name, and n.
pub fn prompt_fingerprint(class_name: &str, n: usize) -> Result<String> {
    let prompt = build_prompt(class_name, n)?;
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update([0x1f]);
    h.update(n.to_le_bytes());
    Ok(hex_digest(&h.finalize()))
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub trait LlmClient {
    fn provider(&self) -> &str;
    /// Returns candidate description statements for one class. May return more
    /// or fewer than `n`; the caller enforces the exactly-n contract.
    fn generate(&self, prompt: &str, class_name: &str, n: usize) -> Result<Vec<String>>;
}

/// Attribute tokens encoded in a class name (`a03`-style codes), or
/// hash-derived pseudo-tokens when the name carries none.
pub fn attribute_tokens(class_name: &str) -> Vec<String> {
    let coded: Vec<String> = class_name
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| {
            t.len() >= 2
                && t.starts_with('a')
                && t[1..].chars().all(|c| c.is_ascii_digit())
        })
        .map(|t| t.to_string())
        .collect();
    if !coded.is_empty() {
        return coded;
    }
    let digest = Sha256::digest(class_name.as_bytes());
    (0..3)
        .map(|i| format!("attr{:02x}{:02x}", digest[2 * i], digest[2 * i + 1]))
        .collect()
}

const FILLERS: [&str; 16] = [
    "glossy", "matte", "speckled", "striped", "mottled", "banded", "ridged", "smooth",
    "crested", "tapered", "rounded", "angular", "frosted", "dappled", "veined", "barred",
];

#[derive(Debug, Clone, Default)]
pub struct MockLlm;

impl MockLlm {
    /// Deterministic pseudo-description for (class_name, index). The statement
    /// names one of the class's attribute tokens plus hash-chosen filler words,
    /// so descriptions of classes sharing a token share vocabulary.
    pub fn describe(class_name: &str, index: usize) -> String {
        let tokens = attribute_tokens(class_name);
        let token = &tokens[index % tokens.len()];
        let mut h = Sha256::new();
        h.update(class_name.as_bytes());
        h.update([0x1f]);
        h.update((index as u64).to_le_bytes());
        let digest = h.finalize();
        let f1 = FILLERS[digest[0] as usize % FILLERS.len()];
        let f2 = FILLERS[digest[1] as usize % FILLERS.len()];
        format!(
            "an appearance description. It features {token} patterning with {f1} and {f2} texture."
        )
    }
}

impl LlmClient for MockLlm {
    fn provider(&self) -> &str {
        "mock"
    }

    fn generate(&self, _prompt: &str, class_name: &str, n: usize) -> Result<Vec<String>> {
        if n == 0 {
            return Err(LafgError::invalid("n must be >= 1"));
        }
        Ok((0..n).map(|i| MockLlm::describe(class_name, i)).collect())
    }
}

/// Per-class failure surfaced by `generate_descriptions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassFailure {
    pub class_id: u32,
    pub class_name: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub sets: Vec<DescriptionSet>,
    pub failures: Vec<ClassFailure>,
    pub cache_hits: usize,
    pub client_calls: usize,
}

impl GenerationOutcome {
    pub fn into_result(self) -> Result<Vec<DescriptionSet>> {
        if self.failures.is_empty() {
            Ok(self.sets)
        } else {
            let detail = self
                .failures
                .iter()
                .map(|f| format!("{} ({})", f.class_name, f.reason))
                .collect::<Vec<_>>()
                .join("; ");
            Err(LafgError::Generation {
                failed: self.failures.len(),
                total: self.failures.len() + self.sets.len(),
                detail,
            })
        }
    }
}

pub struct GenerateOptions {
    pub retries: usize,
    pub backoff_base: Duration,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            retries: 3,
            backoff_base: Duration::from_millis(250),
        }
    }
}

/// Generates (or loads from cache) one DescriptionSet per manifest class, in
/// manifest order. Cache hits bypass the client entirely.
pub fn generate_descriptions(
    manifest: &ClassManifest,
    n: usize,
    client: &dyn LlmClient,
    cache_path: Option<&Path>,
    opts: &GenerateOptions,
) -> Result<GenerationOutcome> {
    if n == 0 {
        return Err(LafgError::invalid("n must be >= 1"));
    }
    manifest.validate()?;
    let mut cache = match cache_path {
        Some(p) if p.exists() => read_description_sets(p)?
            .into_iter()
            .map(|s| (s.prompt_fingerprint.clone(), s))
            .collect::<HashMap<_, _>>(),
        _ => HashMap::new(),
    };
    let mut out = GenerationOutcome {
        sets: Vec::new(),
        failures: Vec::new(),
        cache_hits: 0,
        client_calls: 0,
    };
    let mut new_records = Vec::new();
    for entry in &manifest.entries {
        let fp = prompt_fingerprint(&entry.class_name, n)?;
        if let Some(hit) = cache.get(&fp) {
            out.cache_hits += 1;
            let mut set = hit.clone();
            set.class_id = entry.class_id;
            out.sets.push(set);
            continue;
        }
        let prompt = build_prompt(&entry.class_name, n)?;
        match fetch_one(client, &prompt, &entry.class_name, n, opts, &mut out.client_calls) {
            Ok(descriptions) => {
                let set = DescriptionSet {
                    class_id: entry.class_id,
                    class_name: entry.class_name.clone(),
                    prompt_fingerprint: fp.clone(),
                    descriptions,
                };
                cache.insert(fp, set.clone());
                new_records.push(set.clone());
                out.sets.push(set);
            }
            Err(e) => out.failures.push(ClassFailure {
                class_id: entry.class_id,
                class_name: entry.class_name.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if let (Some(p), false) = (cache_path, new_records.is_empty()) {
        append_description_sets(p, &new_records)?;
    }
    Ok(out)
}

fn fetch_one(
    client: &dyn LlmClient,
    prompt: &str,
    class_name: &str,
    n: usize,
    opts: &GenerateOptions,
    calls: &mut usize,
) -> Result<Vec<String>> {
    // One re-prompt is allowed when the client under-delivers.
    for reprompt in 0..2 {
        let mut last_err = None;
        for attempt in 0..opts.retries.max(1) {
            if attempt > 0 {
                std::thread::sleep(opts.backoff_base * (1 << (attempt - 1)) as u32);
            }
            *calls += 1;
            match client.generate(prompt, class_name, n) {
                Ok(raw) => {
                    let mut descs: Vec<String> = raw
                        .into_iter()
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect();
                    if descs.len() >= n {
                        descs.truncate(n);
                        return Ok(descs);
                    }
                    last_err = Some(LafgError::Generation {
                        failed: 1,
                        total: 1,
                        detail: format!("client returned {} of {} statements", descs.len(), n),
                    });
                    break; // under-delivery is not a transport error; re-prompt instead
                }
                Err(e) => last_err = Some(e),
            }
        }
        if reprompt == 1 {
            return Err(last_err.unwrap_or_else(|| LafgError::invalid("client produced nothing")));
        }
    }
    unreachable!()
}

pub fn write_description_sets(path: &Path, sets: &[DescriptionSet]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| LafgError::io(path, e))?;
    write_records(&mut f, sets, path)
}

pub fn append_description_sets(path: &Path, sets: &[DescriptionSet]) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| LafgError::io(path, e))?;
    write_records(&mut f, sets, path)
}

fn write_records(f: &mut fs::File, sets: &[DescriptionSet], path: &Path) -> Result<()> {
    for s in sets {
        let line = serde_json::to_string(s).map_err(|e| LafgError::Serde(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| LafgError::io(path, e))?;
    }
    Ok(())
}

pub fn read_description_sets(path: &Path) -> Result<Vec<DescriptionSet>> {
    let f = fs::File::open(path).map_err(|e| LafgError::io(path, e))?;
    let mut sets = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| LafgError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: DescriptionSet = serde_json::from_str(&line)
            .map_err(|e| LafgError::corrupt(path, format!("bad description record: {e}")))?;
        sets.push(s);
    }
    Ok(sets)
}
