//! Frozen text-encoder interface, a deterministic mock, and bank assembly.
//!
//! The mock uses a token-bag construction: each lowercase alphanumeric token
//! hashes to a fixed pseudo-random unit vector, the token vectors are summed
//! and the sum is L2-normalized. Texts sharing tokens therefore share a cosine
//! floor that grows with overlap, which is what the synthetic pipeline relies
//! on for attribute clustering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::bank::{ClassEmbeddingTable, SemanticBank};
use crate::error::{LafgError, Result};
use crate::manifest::ClassManifest;
use crate::text_gen::DescriptionSet;
use crate::vecmath::normalize_f32;

pub trait TextEncoder {
    fn dim(&self) -> usize;
    /// Encodes a batch of texts to `dim()`-dimensional unit vectors. Output
    /// must be independent of how the caller batches the texts.
    fn encode(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>>;
}

/// Hand-crafted per-class descriptor fed to the encoder alongside the bank.
pub fn class_descriptor(class_name: &str) -> String {
    format!("a photo of {class_name}")
}

#[derive(Debug, Clone)]
pub struct MockTextEncoder {
    dim: usize,
}

impl MockTextEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(LafgError::invalid("encoder dimension must be >= 2"));
        }
        Ok(MockTextEncoder { dim })
    }

    pub(crate) fn token_vector(&self, token: &str) -> Vec<f32> {
        let digest = Sha256::digest(token.as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f32> = (0..self.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        normalize_f32(&mut v);
        v
    }

    pub fn encode_one(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0.0f32; self.dim];
        let mut any = false;
        for token in text
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let tv = self.token_vector(&token.to_ascii_lowercase());
            for (a, t) in acc.iter_mut().zip(&tv) {
                *a += t;
            }
            any = true;
        }
        if !any || !normalize_f32(&mut acc) {
            // Token-free or perfectly cancelling input falls back to a hash of
            // the raw text so the unit-norm contract always holds.
            acc = self.token_vector(text);
        }
        acc
    }
}

impl TextEncoder for MockTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.encode_one(t)).collect())
    }
}

/// Encodes every description of every class into the C x n x d semantic bank.
pub fn encode_bank(descs: &[DescriptionSet], encoder: &dyn TextEncoder) -> Result<SemanticBank> {
    if descs.is_empty() {
        return Err(LafgError::invalid("no description sets to encode"));
    }
    let n = descs[0].descriptions.len();
    if n == 0 {
        return Err(LafgError::invalid("description sets are empty"));
    }
    for d in descs {
        if d.descriptions.len() != n {
            return Err(LafgError::Config(format!(
                "class {} has {} descriptions, expected {}",
                d.class_name,
                d.descriptions.len(),
                n
            )));
        }
    }
    let dim = encoder.dim();
    let mut data = Vec::with_capacity(descs.len() * n * dim);
    for set in descs {
        let texts: Vec<&str> = set.descriptions.iter().map(|s| s.as_str()).collect();
        let rows = encoder.encode(&texts)?;
        for mut row in rows {
            if row.len() != dim {
                return Err(LafgError::Config(format!(
                    "encoder returned dimension {}, expected {dim}",
                    row.len()
                )));
            }
            if !normalize_f32(&mut row) {
                return Err(LafgError::Config("encoder returned a zero vector".into()));
            }
            data.extend_from_slice(&row);
        }
    }
    SemanticBank::new(descs.len(), n, dim, data)
}

/// Encodes the `a photo of [CLASS]` descriptor for every manifest class.
pub fn encode_class_descriptors(
    manifest: &ClassManifest,
    encoder: &dyn TextEncoder,
) -> Result<ClassEmbeddingTable> {
    manifest.validate()?;
    let dim = encoder.dim();
    let descriptors: Vec<String> = manifest
        .entries
        .iter()
        .map(|e| class_descriptor(&e.class_name))
        .collect();
    let texts: Vec<&str> = descriptors.iter().map(|s| s.as_str()).collect();
    let rows = encoder.encode(&texts)?;
    let mut data = Vec::with_capacity(manifest.len() * dim);
    for mut row in rows {
        if row.len() != dim {
            return Err(LafgError::Config(format!(
                "encoder returned dimension {}, expected {dim}",
                row.len()
            )));
        }
        if !normalize_f32(&mut row) {
            return Err(LafgError::Config("encoder returned a zero vector".into()));
        }
        data.extend_from_slice(&row);
    }
    ClassEmbeddingTable::new(manifest.len(), dim, data)
}
