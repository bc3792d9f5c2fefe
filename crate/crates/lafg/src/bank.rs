//! The semantic bank and its on-disk format.
//!
//! Bank files are `LAFGBANK` + version + (C, n, d) as little-endian u32,
//! followed by C*n*d little-endian f32 values in row-major order. Class
//! descriptor tables reuse the same layout with n = 1.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{LafgError, Result};
use crate::vecmath::norm_f32;

pub const BANK_MAGIC: &[u8; 8] = b"LAFGBANK";
pub const BANK_VERSION: u32 = 1;

/// Tolerance for the unit-norm invariant, re-asserted when loading from disk.
pub const NORM_TOL: f32 = 1e-4;

/// C x n x d tensor of unit-norm description embeddings, one n x d block per
/// class, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticBank {
    pub num_classes: usize,
    pub descs_per_class: usize,
    pub dim: usize,
    /// Row-major, length num_classes * descs_per_class * dim.
    pub data: Vec<f32>,
}

impl SemanticBank {
    pub fn new(num_classes: usize, descs_per_class: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != num_classes * descs_per_class * dim {
            return Err(LafgError::invalid(format!(
                "bank data length {} does not match {}x{}x{}",
                data.len(),
                num_classes,
                descs_per_class,
                dim
            )));
        }
        Ok(SemanticBank {
            num_classes,
            descs_per_class,
            dim,
            data,
        })
    }

    pub fn row(&self, class: usize, desc: usize) -> &[f32] {
        let start = (class * self.descs_per_class + desc) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn num_rows(&self) -> usize {
        self.num_classes * self.descs_per_class
    }

    /// All rows flattened to (num_rows, dim), ignoring class boundaries.
    pub fn flat_row(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn check_norms(&self, tol: f32) -> Result<()> {
        for i in 0..self.num_rows() {
            let n = norm_f32(self.flat_row(i));
            if (n - 1.0).abs() > tol {
                return Err(LafgError::invalid(format!(
                    "bank row {i} has norm {n}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| LafgError::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io_err = |e| LafgError::io(path, e);
        w.write_all(BANK_MAGIC).map_err(io_err)?;
        w.write_all(&BANK_VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.num_classes as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.descs_per_class as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io_err)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| LafgError::io(path, e))?;
        let mut r = BufReader::new(f);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| LafgError::corrupt(path, "file shorter than header"))?;
        if &magic != BANK_MAGIC {
            return Err(LafgError::corrupt(path, "bad magic, not a bank file"));
        }
        let version = read_u32(&mut r, path)?;
        if version != BANK_VERSION {
            return Err(LafgError::corrupt(
                path,
                format!("unsupported bank version {version}"),
            ));
        }
        let num_classes = read_u32(&mut r, path)? as usize;
        let descs_per_class = read_u32(&mut r, path)? as usize;
        let dim = read_u32(&mut r, path)? as usize;
        let count = num_classes
            .checked_mul(descs_per_class)
            .and_then(|x| x.checked_mul(dim))
            .ok_or_else(|| LafgError::corrupt(path, "header dimensions overflow"))?;
        let data = read_f32_exact(&mut r, count, path)?;
        let mut tail = [0u8; 1];
        if r.read(&mut tail).map_err(|e| LafgError::io(path, e))? != 0 {
            return Err(LafgError::corrupt(path, "trailing bytes after payload"));
        }
        let bank = SemanticBank::new(num_classes, descs_per_class, dim, data)?;
        bank.check_norms(NORM_TOL)
            .map_err(|e| LafgError::corrupt(path, e.to_string()))?;
        Ok(bank)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| LafgError::corrupt(path, "truncated header"))?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| LafgError::corrupt(path, "truncated header"))?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f32_exact<R: Read>(r: &mut R, count: usize, path: &Path) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| LafgError::corrupt(path, "truncated payload"))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// C x d table of unit-norm hand-crafted class descriptor embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingTable {
    pub num_classes: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl ClassEmbeddingTable {
    pub fn new(num_classes: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != num_classes * dim {
            return Err(LafgError::invalid("class table data length mismatch"));
        }
        Ok(ClassEmbeddingTable {
            num_classes,
            dim,
            data,
        })
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.data[class * self.dim..(class + 1) * self.dim]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        SemanticBank::new(self.num_classes, 1, self.dim, self.data.clone())?.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bank = SemanticBank::read(path)?;
        if bank.descs_per_class != 1 {
            return Err(LafgError::corrupt(
                path,
                "expected a class table (n = 1), found a multi-description bank",
            ));
        }
        ClassEmbeddingTable::new(bank.num_classes, bank.dim, bank.data)
    }
}
