//! Class manifests, dataset sample manifests, and the class-disjoint split
//! conventions of the standard retrieval benchmarks.
//!
//! Both manifest flavors are line-delimited JSON. A class manifest starts with
//! a header line `{"lafg_class_manifest":1,"split":"train"}` followed by one
//! `{"class_id":0,"class_name":"..."}` record per class. A sample manifest has
//! one `{"ref":"vec:0","class_id":0,"class_name":"..."}` record per sample,
//! where `ref` is either `vec:<row>` into a feature file or an image path.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LafgError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitTag::Train => write!(f, "train"),
            SplitTag::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: u32,
    pub class_name: String,
}

/// Ordered list of classes for one split. Class ids form a contiguous range
/// (a train split starts at 0; a test split continues past the train range so
/// the two id sets never overlap).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassManifest {
    pub entries: Vec<ClassEntry>,
    pub split: SplitTag,
}

impl ClassManifest {
    pub fn new(entries: Vec<ClassEntry>, split: SplitTag) -> Result<Self> {
        let m = ClassManifest { entries, split };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(LafgError::invalid("class manifest is empty"));
        }
        let ids: BTreeSet<u32> = self.entries.iter().map(|e| e.class_id).collect();
        if ids.len() != self.entries.len() {
            return Err(LafgError::invalid("duplicate class_id in manifest"));
        }
        let min = *ids.first().unwrap();
        let max = *ids.last().unwrap();
        if (max - min + 1) as usize != ids.len() {
            return Err(LafgError::invalid("class_ids are not contiguous"));
        }
        if self.split == SplitTag::Train && min != 0 {
            return Err(LafgError::invalid("train class_ids must start at 0"));
        }
        for e in &self.entries {
            if e.class_name.trim().is_empty() {
                return Err(LafgError::invalid(format!(
                    "empty class_name for class_id {}",
                    e.class_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| LafgError::io(path, e))?;
        let header = serde_json::json!({"lafg_class_manifest": 1, "split": self.split});
        writeln!(f, "{header}").map_err(|e| LafgError::io(path, e))?;
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(|e| LafgError::Serde(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| LafgError::io(path, e))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| LafgError::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header = lines
            .next()
            .ok_or_else(|| LafgError::corrupt(path, "empty manifest file"))?
            .map_err(|e| LafgError::io(path, e))?;
        #[derive(Deserialize)]
        struct Header {
            lafg_class_manifest: u32,
            split: SplitTag,
        }
        let header: Header = serde_json::from_str(&header)
            .map_err(|e| LafgError::corrupt(path, format!("bad header: {e}")))?;
        if header.lafg_class_manifest != 1 {
            return Err(LafgError::corrupt(path, "unsupported manifest version"));
        }
        let mut entries = Vec::new();
        for line in lines {
            let line = line.map_err(|e| LafgError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ClassEntry = serde_json::from_str(&line)
                .map_err(|e| LafgError::corrupt(path, format!("bad record: {e}")))?;
            entries.push(e);
        }
        ClassManifest::new(entries, header.split)
    }
}

/// Checks the zero-category-overlap convention between two splits.
pub fn assert_disjoint(train: &ClassManifest, test: &ClassManifest) -> Result<()> {
    let train_ids: BTreeSet<u32> = train.entries.iter().map(|e| e.class_id).collect();
    for e in &test.entries {
        if train_ids.contains(&e.class_id) {
            return Err(LafgError::invalid(format!(
                "class_id {} appears in both train and test splits",
                e.class_id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// `vec:<row>` into the companion feature file, or an image path.
    #[serde(rename = "ref")]
    pub sample_ref: String,
    pub class_id: u32,
    pub class_name: String,
}

pub fn write_samples(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| LafgError::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| LafgError::Serde(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| LafgError::io(path, e))?;
    }
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    let f = fs::File::open(path).map_err(|e| LafgError::io(path, e))?;
    let mut records = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| LafgError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| LafgError::corrupt(path, format!("bad sample record: {e}")))?;
        records.push(r);
    }
    Ok(records)
}

/// Class-range split convention for a named benchmark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dataset: String,
    /// Inclusive 1-based class range used for training.
    pub train_classes: (u32, u32),
    /// Inclusive 1-based class range used for testing.
    pub test_classes: (u32, u32),
}

/// Split conventions for the standard benchmarks: the first half of the class
/// list trains, the remainder tests, with zero category overlap.
pub fn make_split(dataset_name: &str) -> Result<SplitSpec> {
    let spec = match dataset_name.to_ascii_lowercase().as_str() {
        "cub" | "cub-200-2011" => SplitSpec {
            dataset: "cub".into(),
            train_classes: (1, 100),
            test_classes: (101, 200),
        },
        "cars" | "cars-196" => SplitSpec {
            dataset: "cars".into(),
            train_classes: (1, 98),
            test_classes: (99, 196),
        },
        "sop" | "stanford-online-products" => SplitSpec {
            dataset: "sop".into(),
            train_classes: (1, 11318),
            test_classes: (11319, 22634),
        },
        other => {
            return Err(LafgError::invalid(format!(
                "unknown dataset name: {other}"
            )))
        }
    };
    debug_assert!(spec.train_classes.1 < spec.test_classes.0);
    Ok(spec)
}
