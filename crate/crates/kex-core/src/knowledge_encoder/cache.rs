//! On-disk embedding cache.
//!
//! One binary matrix file plus a JSON sidecar per key. Writes go through a
//! temp file and an atomic rename, so concurrent readers never observe torn
//! entries; the checksum catches on-disk corruption, and a corrupt entry is
//! evicted and reported as a miss.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

use super::EmbeddingSet;

const MAGIC: &[u8; 8] = b"KEXEMB1\0";

/// Cache key. `transform_seed` pins the realization of stochastic transforms
/// so a warm cache can never serve embeddings generated under a different
/// seed (identity entries use seed 0; they are seed-independent).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub dataset: String,
    pub class: String,
    pub transform: String,
    pub severity: u8,
    pub encoder: String,
    pub transform_seed: u64,
}

impl CacheKey {
    fn canonical(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}",
            self.dataset, self.class, self.transform, self.severity, self.encoder, self.transform_seed
        )
    }

    fn file_stem(&self) -> String {
        let digest = seeding::checksum(self.canonical().as_bytes());
        let safe: String = format!("{}-{}-{}", self.class, self.transform, self.severity)
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        format!("{safe}-{digest:016x}")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarMeta {
    key: CacheKey,
    rows: usize,
    cols: usize,
    normalized: bool,
    checksum: u64,
}

#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(EmbeddingCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn paths(&self, key: &CacheKey) -> (PathBuf, PathBuf) {
        let stem = key.file_stem();
        (self.dir.join(format!("{stem}.bin")), self.dir.join(format!("{stem}.json")))
    }

    /// Looks up a key. Returns `Ok(None)` on a miss; a corrupt entry is
    /// evicted and also reported as a miss.
    pub fn get(&self, key: &CacheKey) -> Result<Option<EmbeddingSet>> {
        match self.read_entry(key) {
            Ok(found) => Ok(found),
            Err(Error::CacheChecksum { key: k }) => {
                log::warn!("evicting corrupt cache entry {k}");
                self.evict(key)?;
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    fn read_entry(&self, key: &CacheKey) -> Result<Option<EmbeddingSet>> {
        let (bin_path, json_path) = self.paths(key);
        if !bin_path.is_file() || !json_path.is_file() {
            return Ok(None);
        }
        let meta: SidecarMeta = serde_json::from_slice(&fs::read(&json_path)?)?;
        if meta.key != *key {
            // hash collision or stale rename; treat as miss
            return Ok(None);
        }
        let bytes = fs::read(&bin_path)?;
        if seeding::checksum(&bytes) != meta.checksum {
            return Err(Error::CacheChecksum {
                key: key.canonical(),
            });
        }
        let matrix = decode_matrix(&bytes, meta.rows, meta.cols)
            .ok_or_else(|| Error::CacheChecksum { key: key.canonical() })?;
        Ok(Some(EmbeddingSet {
            encoder_id: key.encoder.clone(),
            dataset_id: key.dataset.clone(),
            class_id: key.class.clone(),
            transform_id: key.transform.clone(),
            severity: key.severity,
            matrix,
            normalized: meta.normalized,
        }))
    }

    /// Stores an entry. Write-once in normal operation; a second write for
    /// the same key atomically replaces the first (last write wins).
    pub fn put(&self, key: &CacheKey, set: &EmbeddingSet) -> Result<()> {
        let (bin_path, json_path) = self.paths(key);
        let bytes = encode_matrix(&set.matrix);
        let meta = SidecarMeta {
            key: key.clone(),
            rows: set.matrix.nrows(),
            cols: set.matrix.ncols(),
            normalized: set.normalized,
            checksum: seeding::checksum(&bytes),
        };
        write_atomic(&bin_path, &bytes)?;
        write_atomic(&json_path, &serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn evict(&self, key: &CacheKey) -> Result<()> {
        let (bin_path, json_path) = self.paths(key);
        let _ = fs::remove_file(bin_path);
        let _ = fs::remove_file(json_path);
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn encode_matrix(matrix: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = matrix.dim();
    let mut out = Vec::with_capacity(16 + rows * cols * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in matrix.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_matrix(bytes: &[u8], rows: usize, cols: usize) -> Option<Array2<f64>> {
    if bytes.len() != 16 + rows * cols * 8 || &bytes[..8] != MAGIC {
        return None;
    }
    let r = u32::from_le_bytes(bytes[8..12].try_into().ok()?) as usize;
    let c = u32::from_le_bytes(bytes[12..16].try_into().ok()?) as usize;
    if r != rows || c != cols {
        return None;
    }
    let mut data = Vec::with_capacity(rows * cols);
    for chunk in bytes[16..].chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().ok()?));
    }
    Array2::from_shape_vec((rows, cols), data).ok()
}
