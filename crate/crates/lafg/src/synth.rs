//! Synthetic fine-grained dataset for desk-scale end-to-end runs.
//!
//! Classes are sparse combinations of shared latent attributes; test classes
//! recombine attributes seen in training, so cross-category generalization is
//! actually exercised. Class names encode the attribute codes (`morph-a03-a07`)
//! and the mock LLM names those codes in its descriptions, closing the loop
//! between linguistic supervision and the visual latents.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::SemanticBank;
use crate::error::{LafgError, Result};
use crate::manifest::{
    assert_disjoint, read_samples, write_samples, ClassEntry, ClassManifest, SampleRecord,
    SplitTag,
};
use crate::vecmath::normalize_f32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_train_classes: usize,
    pub num_test_classes: usize,
    pub samples_per_class: usize,
    /// Number of shared latent attributes classes are built from.
    pub num_attributes: usize,
    /// Attributes per class.
    pub attrs_per_class: usize,
    pub feature_dim: usize,
    /// Std-dev of per-dimension Gaussian noise added to the class mean.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_train_classes: 10,
            num_test_classes: 10,
            samples_per_class: 20,
            num_attributes: 12,
            attrs_per_class: 3,
            feature_dim: 32,
            noise: 0.25,
            seed: 7,
        }
    }
}

/// One split's feature vectors plus its manifests.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub classes: ClassManifest,
    pub samples: Vec<SampleRecord>,
    pub dim: usize,
    /// Row-major samples.len() x dim, rows unit-norm.
    pub features: Vec<f32>,
}

impl FeatureDataset {
    pub fn feature(&self, row: usize) -> &[f32] {
        &self.features[row * self.dim..(row + 1) * self.dim]
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    /// Ground truth: class_id -> latent attribute indices.
    pub attribute_table: Vec<(u32, Vec<u32>)>,
}

fn class_name(attrs: &[u32]) -> String {
    let codes: Vec<String> = attrs.iter().map(|a| format!("a{a:02}")).collect();
    format!("morph-{}", codes.join("-"))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn attribute_direction(spec: &SyntheticSpec, attr: u32) -> Vec<f32> {
    // Latent visual directions reuse the mock encoder's token geometry for the
    // same attribute codes. Language supervision and the visual latents then
    // genuinely describe the same directions, which is the premise the
    // alignment objective depends on (real pipelines get this from a jointly
    // pretrained text/image encoder).
    let enc = crate::text_encode::MockTextEncoder::new(spec.feature_dim)
        .expect("feature_dim validated >= 2");
    enc.token_vector(&format!("a{attr:02}"))
}

/// Clean (noise-free) latent mean for an attribute combination.
pub fn class_mean(spec: &SyntheticSpec, attrs: &[u32]) -> Vec<f32> {
    let mut mean = vec![0.0f32; spec.feature_dim];
    for &a in attrs {
        let dir = attribute_direction(spec, a);
        for (m, d) in mean.iter_mut().zip(&dir) {
            *m += d;
        }
    }
    normalize_f32(&mut mean);
    mean
}

fn k_subsets(n: usize, k: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current: Vec<u32> = (0..k as u32).collect();
    loop {
        out.push(current.clone());
        // Next lexicographic combination.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] < (n - k + i) as u32 {
                current[i] += 1;
                for j in i + 1..k {
                    current[j] = current[j - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.attrs_per_class == 0 || spec.attrs_per_class > spec.num_attributes {
        return Err(LafgError::invalid("attrs_per_class out of range"));
    }
    if spec.samples_per_class == 0 || spec.feature_dim < 2 {
        return Err(LafgError::invalid("samples_per_class and feature_dim must be positive"));
    }
    let total_classes = spec.num_train_classes + spec.num_test_classes;
    let mut combos = k_subsets(spec.num_attributes, spec.attrs_per_class);
    if combos.len() < total_classes {
        return Err(LafgError::invalid(format!(
            "only {} attribute combinations available for {} classes",
            combos.len(),
            total_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Fisher-Yates, seeded.
    for i in (1..combos.len()).rev() {
        let j = rng.gen_range(0..=i);
        combos.swap(i, j);
    }
    combos.truncate(total_classes);

    let mut attribute_table = Vec::with_capacity(total_classes);
    let build_split = |range: std::ops::Range<usize>,
                           split: SplitTag,
                           rng: &mut ChaCha8Rng,
                           table: &mut Vec<(u32, Vec<u32>)>|
     -> Result<FeatureDataset> {
        let mut entries = Vec::new();
        let mut samples = Vec::new();
        let mut features = Vec::new();
        for (row_class, global) in range.clone().enumerate() {
            let class_id = global as u32;
            let attrs = &combos[global];
            entries.push(ClassEntry {
                class_id,
                class_name: class_name(attrs),
            });
            table.push((class_id, attrs.clone()));
            let mean = class_mean(spec, attrs);
            for s in 0..spec.samples_per_class {
                let mut f: Vec<f32> = mean
                    .iter()
                    .map(|&m| m + (spec.noise * gaussian(rng)) as f32)
                    .collect();
                if !normalize_f32(&mut f) {
                    return Err(LafgError::invalid("degenerate zero sample"));
                }
                let row = row_class * spec.samples_per_class + s;
                samples.push(SampleRecord {
                    sample_ref: format!("vec:{row}"),
                    class_id,
                    class_name: class_name(attrs),
                });
                features.extend_from_slice(&f);
            }
        }
        Ok(FeatureDataset {
            classes: ClassManifest::new(entries, split)?,
            samples,
            dim: spec.feature_dim,
            features,
        })
    };

    let train = build_split(
        0..spec.num_train_classes,
        SplitTag::Train,
        &mut rng,
        &mut attribute_table,
    )?;
    let test = build_split(
        spec.num_train_classes..total_classes,
        SplitTag::Test,
        &mut rng,
        &mut attribute_table,
    )?;
    assert_disjoint(&train.classes, &test.classes)?;
    Ok(SyntheticDataset {
        train,
        test,
        attribute_table,
    })
}

impl SyntheticDataset {
    /// Writes the dataset as a directory: class/sample manifests, feature
    /// banks, the synthetic spec, and the ground-truth attribute table.
    pub fn write_dir(&self, dir: &Path, spec: &SyntheticSpec) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| LafgError::io(dir, e))?;
        self.train.classes.write(&dir.join("train_classes.jsonl"))?;
        self.test.classes.write(&dir.join("test_classes.jsonl"))?;
        write_samples(&dir.join("train_samples.jsonl"), &self.train.samples)?;
        write_samples(&dir.join("test_samples.jsonl"), &self.test.samples)?;
        write_features(&dir.join("train_features.bin"), &self.train)?;
        write_features(&dir.join("test_features.bin"), &self.test)?;
        let spec_json =
            serde_json::to_string_pretty(spec).map_err(|e| LafgError::Serde(e.to_string()))?;
        fs::write(dir.join("synth_spec.json"), spec_json)
            .map_err(|e| LafgError::io(dir.join("synth_spec.json"), e))?;
        let table_json = serde_json::to_string_pretty(&self.attribute_table)
            .map_err(|e| LafgError::Serde(e.to_string()))?;
        fs::write(dir.join("attributes.json"), table_json)
            .map_err(|e| LafgError::io(dir.join("attributes.json"), e))?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let train = read_split(dir, "train", SplitTag::Train)?;
        let test = read_split(dir, "test", SplitTag::Test)?;
        assert_disjoint(&train.classes, &test.classes)?;
        let table_path = dir.join("attributes.json");
        let table: Vec<(u32, Vec<u32>)> = serde_json::from_str(
            &fs::read_to_string(&table_path).map_err(|e| LafgError::io(&table_path, e))?,
        )
        .map_err(|e| LafgError::corrupt(&table_path, e.to_string()))?;
        Ok(SyntheticDataset {
            train,
            test,
            attribute_table: table,
        })
    }
}

fn write_features(path: &Path, ds: &FeatureDataset) -> Result<()> {
    SemanticBank::new(ds.num_samples(), 1, ds.dim, ds.features.clone())?.write(path)
}

fn read_split(dir: &Path, prefix: &str, split: SplitTag) -> Result<FeatureDataset> {
    let classes = ClassManifest::read(&dir.join(format!("{prefix}_classes.jsonl")))?;
    if classes.split != split {
        return Err(LafgError::corrupt(
            dir.join(format!("{prefix}_classes.jsonl")),
            "split tag mismatch",
        ));
    }
    let samples = read_samples(&dir.join(format!("{prefix}_samples.jsonl")))?;
    let bank = SemanticBank::read(&dir.join(format!("{prefix}_features.bin")))?;
    if bank.num_classes != samples.len() || bank.descs_per_class != 1 {
        return Err(LafgError::corrupt(
            dir.join(format!("{prefix}_features.bin")),
            "feature rows do not match sample manifest",
        ));
    }
    Ok(FeatureDataset {
        classes,
        samples,
        dim: bank.dim,
        features: bank.data,
    })
}
