//! Dataset-wide attribute vocabulary and category prototypes.
//!
//! The vocabulary is built by seeded Lloyd's K-means (k-means++ init) over all
//! bank rows. Per class, the Top-K most similar attributes are hunted by dot
//! product against the hand-crafted class descriptor embedding and fused into
//! a prototype by softmax-weighted summation. Centroids are intentionally not
//! re-normalized: fusion adds raw centroids.
//!
//! Vocab files: `LAFGVOCB`, version, |N|, d (u32 LE), seed (u64 LE), then
//! |N|*d f32 centroids and |N| u32 populations.
//! Prototype files: `LAFGPROT`, version, C, d, K (u32 LE), then per class:
//! class_id (u32), K indices (u32), K scores (f32), d prototype values (f32).

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bank::{read_f32_exact, read_u32, read_u64, ClassEmbeddingTable, SemanticBank};
use crate::error::{LafgError, Result};
use crate::vecmath::dot_f32;

pub const VOCAB_MAGIC: &[u8; 8] = b"LAFGVOCB";
pub const VOCAB_VERSION: u32 = 1;
pub const PROTO_MAGIC: &[u8; 8] = b"LAFGPROT";
pub const PROTO_VERSION: u32 = 1;

const KMEANS_MAX_ITERS: usize = 300;
const KMEANS_SHIFT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeVocabulary {
    pub size: usize,
    pub dim: usize,
    pub rng_seed: u64,
    /// Row-major |N| x d centroid matrix.
    pub centroids: Vec<f32>,
    pub cluster_populations: Vec<u32>,
}

impl AttributeVocabulary {
    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| LafgError::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io_err = |e| LafgError::io(path, e);
        w.write_all(VOCAB_MAGIC).map_err(io_err)?;
        w.write_all(&VOCAB_VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.size as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&self.rng_seed.to_le_bytes()).map_err(io_err)?;
        for v in &self.centroids {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
        for p in &self.cluster_populations {
            w.write_all(&p.to_le_bytes()).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| LafgError::io(path, e))?;
        let mut r = BufReader::new(f);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| LafgError::corrupt(path, "file shorter than header"))?;
        if &magic != VOCAB_MAGIC {
            return Err(LafgError::corrupt(path, "bad magic, not a vocabulary file"));
        }
        let version = read_u32(&mut r, path)?;
        if version != VOCAB_VERSION {
            return Err(LafgError::corrupt(
                path,
                format!("unsupported vocabulary version {version}"),
            ));
        }
        let size = read_u32(&mut r, path)? as usize;
        let dim = read_u32(&mut r, path)? as usize;
        let rng_seed = read_u64(&mut r, path)?;
        let centroids = read_f32_exact(&mut r, size * dim, path)?;
        let mut populations = Vec::with_capacity(size);
        for _ in 0..size {
            populations.push(read_u32(&mut r, path)?);
        }
        let mut tail = [0u8; 1];
        if r.read(&mut tail).map_err(|e| LafgError::io(path, e))? != 0 {
            return Err(LafgError::corrupt(path, "trailing bytes after payload"));
        }
        if populations.iter().any(|&p| p == 0) {
            return Err(LafgError::corrupt(path, "vocabulary contains an empty cluster"));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(LafgError::corrupt(path, "non-finite centroid value"));
        }
        Ok(AttributeVocabulary {
            size,
            dim,
            rng_seed,
            centroids,
            cluster_populations: populations,
        })
    }
}

/// Per-iteration inertia history, exposed so callers can check the Lloyd
/// monotonicity invariant.
#[derive(Debug, Clone)]
pub struct KmeansTrace {
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

/// Seeded K-means over all bank rows. Empty clusters
/// are re-seeded to the point farthest from its assigned centroid.
pub fn build_vocabulary(
    bank: &SemanticBank,
    size: usize,
    seed: u64,
) -> Result<(AttributeVocabulary, KmeansTrace)> {
    let points = bank.num_rows();
    let dim = bank.dim;
    if size < 2 {
        return Err(LafgError::invalid("vocabulary size must be >= 2"));
    }
    if size > points {
        return Err(LafgError::invalid(format!(
            "vocabulary size {size} exceeds bank rows {points}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = bank.data.iter().map(|&v| v as f64).collect();
    let point = |i: usize| &data[i * dim..(i + 1) * dim];

    // k-means++ initialization.
    let mut centroids: Vec<f64> = Vec::with_capacity(size * dim);
    let first = rng.gen_range(0..points);
    centroids.extend_from_slice(point(first));
    let mut min_dist2 = vec![f64::INFINITY; points];
    for k in 1..size {
        let last = &centroids[(k - 1) * dim..k * dim];
        for i in 0..points {
            let d2 = sq_dist(point(i), last);
            if d2 < min_dist2[i] {
                min_dist2[i] = d2;
            }
        }
        let total: f64 = min_dist2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..points)
        } else {
            WeightedIndex::new(min_dist2.iter().map(|&d| d.max(0.0)))
                .map(|w| w.sample(&mut rng))
                .unwrap_or_else(|_| rng.gen_range(0..points))
        };
        let row = point(next).to_vec();
        centroids.extend_from_slice(&row);
    }

    let mut assignment = vec![0usize; points];
    let mut trace = KmeansTrace {
        inertia: Vec::new(),
        iterations: 0,
    };
    for iter in 0..KMEANS_MAX_ITERS {
        // Assignment step; ties go to the lower cluster index.
        let mut inertia = 0.0f64;
        for i in 0..points {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for k in 0..size {
                let d = sq_dist(point(i), &centroids[k * dim..(k + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            assignment[i] = best;
            inertia += best_d;
        }
        trace.inertia.push(inertia);
        trace.iterations = iter + 1;

        let mut counts = vec![0u32; size];
        for &a in &assignment {
            counts[a] += 1;
        }
        // Repair empty clusters before the mean update.
        for k in 0..size {
            if counts[k] == 0 {
                let (far_idx, _) = assignment
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| counts[a] > 1)
                    .map(|(i, &a)| (i, sq_dist(point(i), &centroids[a * dim..(a + 1) * dim])))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .ok_or_else(|| LafgError::invalid("cannot repair empty cluster"))?;
                counts[assignment[far_idx]] -= 1;
                assignment[far_idx] = k;
                counts[k] = 1;
            }
        }

        // Mean update.
        let mut new_centroids = vec![0.0f64; size * dim];
        for i in 0..points {
            let k = assignment[i];
            for (c, v) in new_centroids[k * dim..(k + 1) * dim]
                .iter_mut()
                .zip(point(i))
            {
                *c += v;
            }
        }
        for k in 0..size {
            let inv = 1.0 / counts[k] as f64;
            for c in new_centroids[k * dim..(k + 1) * dim].iter_mut() {
                *c *= inv;
            }
        }

        let shift = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        centroids = new_centroids;
        if shift < KMEANS_SHIFT_TOL {
            break;
        }
    }

    let mut populations = vec![0u32; size];
    for &a in &assignment {
        populations[a] += 1;
    }
    debug_assert_eq!(populations.iter().sum::<u32>() as usize, points);
    Ok((
        AttributeVocabulary {
            size,
            dim,
            rng_seed: seed,
            centroids: centroids.iter().map(|&v| v as f32).collect(),
            cluster_populations: populations,
        },
        trace,
    ))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Indices and raw dot-product scores of the K vocabulary attributes most
/// similar to the class embedding, in descending score order. Ties break
/// toward the lower vocabulary index.
pub fn select_topk(
    class_embedding: &[f32],
    vocab: &AttributeVocabulary,
    k: usize,
) -> Result<(Vec<u32>, Vec<f32>)> {
    if k == 0 {
        return Err(LafgError::invalid("K must be >= 1"));
    }
    if k > vocab.size {
        return Err(LafgError::invalid(format!(
            "K = {k} exceeds vocabulary size {}",
            vocab.size
        )));
    }
    if class_embedding.len() != vocab.dim {
        return Err(LafgError::invalid("class embedding dimension mismatch"));
    }
    let mut scored: Vec<(u32, f32)> = (0..vocab.size)
        .map(|i| (i as u32, dot_f32(class_embedding, vocab.centroid(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored.iter().map(|s| s.0).collect::<Vec<_>>()
        .into_iter()
        .zip(scored.iter().map(|s| s.1))
        .unzip())
}

/// Softmax weights over the selected raw scores (no temperature).
pub fn fusion_weights(scores: &[f32]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(LafgError::invalid("K must be >= 1"));
    }
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s as f64));
    let exps: Vec<f64> = scores.iter().map(|&s| ((s as f64) - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// T_c = t_c + sum_k softmax(scores)_k * a_k over the selected attributes.
pub fn fuse_prototype(
    class_embedding: &[f32],
    vocab: &AttributeVocabulary,
    indices: &[u32],
    scores: &[f32],
) -> Result<Vec<f32>> {
    if indices.is_empty() || indices.len() != scores.len() {
        return Err(LafgError::invalid(
            "selected indices and scores must be non-empty and equal length",
        ));
    }
    let weights = fusion_weights(scores)?;
    let mut proto: Vec<f64> = class_embedding.iter().map(|&v| v as f64).collect();
    for (&idx, &w) in indices.iter().zip(&weights) {
        let a = vocab.centroid(idx as usize);
        for (p, &v) in proto.iter_mut().zip(a) {
            *p += w * v as f64;
        }
    }
    Ok(proto.into_iter().map(|v| v as f32).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryPrototype {
    pub class_id: u32,
    pub selected_indices: Vec<u32>,
    pub selection_scores: Vec<f32>,
    pub prototype: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub dim: usize,
    pub top_k: usize,
    pub prototypes: Vec<CategoryPrototype>,
}

impl PrototypeSet {
    pub fn by_class(&self, class_id: u32) -> Option<&CategoryPrototype> {
        self.prototypes.iter().find(|p| p.class_id == class_id)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| LafgError::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io_err = |e| LafgError::io(path, e);
        w.write_all(PROTO_MAGIC).map_err(io_err)?;
        w.write_all(&PROTO_VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.prototypes.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.top_k as u32).to_le_bytes()).map_err(io_err)?;
        for p in &self.prototypes {
            w.write_all(&p.class_id.to_le_bytes()).map_err(io_err)?;
            for i in &p.selected_indices {
                w.write_all(&i.to_le_bytes()).map_err(io_err)?;
            }
            for s in &p.selection_scores {
                w.write_all(&s.to_le_bytes()).map_err(io_err)?;
            }
            for v in &p.prototype {
                w.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| LafgError::io(path, e))?;
        let mut r = BufReader::new(f);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| LafgError::corrupt(path, "file shorter than header"))?;
        if &magic != PROTO_MAGIC {
            return Err(LafgError::corrupt(path, "bad magic, not a prototype file"));
        }
        let version = read_u32(&mut r, path)?;
        if version != PROTO_VERSION {
            return Err(LafgError::corrupt(
                path,
                format!("unsupported prototype version {version}"),
            ));
        }
        let count = read_u32(&mut r, path)? as usize;
        let dim = read_u32(&mut r, path)? as usize;
        let top_k = read_u32(&mut r, path)? as usize;
        let mut prototypes = Vec::with_capacity(count);
        for _ in 0..count {
            let class_id = read_u32(&mut r, path)?;
            let mut selected_indices = Vec::with_capacity(top_k);
            for _ in 0..top_k {
                selected_indices.push(read_u32(&mut r, path)?);
            }
            let selection_scores = read_f32_exact(&mut r, top_k, path)?;
            let prototype = read_f32_exact(&mut r, dim, path)?;
            prototypes.push(CategoryPrototype {
                class_id,
                selected_indices,
                selection_scores,
                prototype,
            });
        }
        let mut tail = [0u8; 1];
        if r.read(&mut tail).map_err(|e| LafgError::io(path, e))? != 0 {
            return Err(LafgError::corrupt(path, "trailing bytes after payload"));
        }
        Ok(PrototypeSet {
            dim,
            top_k,
            prototypes,
        })
    }
}

/// Hunts Top-K attributes and fuses a prototype for every class in the table.
/// Class ids follow the table row order offset by `class_id_base` (0 for a
/// train split).
pub fn build_prototypes(
    class_table: &ClassEmbeddingTable,
    vocab: &AttributeVocabulary,
    top_k: usize,
    class_id_base: u32,
) -> Result<PrototypeSet> {
    if class_table.dim != vocab.dim {
        return Err(LafgError::invalid(
            "class table and vocabulary dimension mismatch",
        ));
    }
    let mut prototypes = Vec::with_capacity(class_table.num_classes);
    for c in 0..class_table.num_classes {
        let t_c = class_table.row(c);
        let (selected_indices, selection_scores) = select_topk(t_c, vocab, top_k)?;
        let prototype = fuse_prototype(t_c, vocab, &selected_indices, &selection_scores)?;
        prototypes.push(CategoryPrototype {
            class_id: class_id_base + c as u32,
            selected_indices,
            selection_scores,
            prototype,
        });
    }
    Ok(PrototypeSet {
        dim: class_table.dim,
        top_k,
        prototypes,
    })
}
