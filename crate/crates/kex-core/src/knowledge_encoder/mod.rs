//! Embedding of original and transformed image sets with a pluggable
//! pretrained-style encoder, plus the on-disk cache in front of it.

pub mod backends;
pub mod cache;

use std::collections::BTreeMap;

use ndarray::{Array2, Array4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageops;
use crate::transform_bank::{self, Bank, ImageBatch, IDENTITY_ID};

pub use backends::{create as create_backend, Backend, BackendSpec};
pub use cache::{CacheKey, EmbeddingCache};

/// Embeddings of one (class, transform) image set, with provenance.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub encoder_id: String,
    pub dataset_id: String,
    pub class_id: String,
    /// A bank transform id, or [`IDENTITY_ID`] for the untransformed set.
    pub transform_id: String,
    pub severity: u8,
    /// N x D, row i corresponds to the i-th sample of the source batch.
    pub matrix: Array2<f64>,
    pub normalized: bool,
}

impl EmbeddingSet {
    pub fn validate(&self) -> Result<()> {
        if self.matrix.nrows() == 0 {
            return Err(Error::validation("embedding set is empty"));
        }
        for v in self.matrix.iter() {
            if !v.is_finite() {
                return Err(Error::numerical("embedding set contains non-finite values"));
            }
        }
        if self.normalized {
            for (i, row) in self.matrix.rows().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if (norm - 1.0).abs() > 1e-5 {
                    return Err(Error::validation(format!(
                        "row {i} norm {norm} violates unit-norm invariant"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Identity of the image set being embedded; becomes `EmbeddingSet` provenance.
#[derive(Debug, Clone)]
pub struct SetIdentity {
    pub dataset_id: String,
    pub class_id: String,
    pub transform_id: String,
    pub severity: u8,
}

/// Embeds image batches with one backend, optionally through the cache.
pub struct Embedder<'a> {
    backend: &'a dyn Backend,
    cache: Option<&'a EmbeddingCache>,
    normalize: bool,
    batch_size: usize,
}

impl<'a> Embedder<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        Embedder {
            backend,
            cache: None,
            normalize: true,
            batch_size: 256,
        }
    }

    pub fn with_cache(mut self, cache: &'a EmbeddingCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_normalize(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend
    }

    /// Embeds a batch. Row i corresponds to `batch.sample_ids()[i]`.
    pub fn embed(&self, batch: &ImageBatch, identity: &SetIdentity) -> Result<EmbeddingSet> {
        let spec = self.backend.spec();
        let mut rows: Vec<Array2<f64>> = Vec::new();
        let n = batch.len();
        let mut start = 0;
        while start < n {
            let end = (start + self.batch_size).min(n);
            let pre = preprocess(batch, start..end, spec);
            rows.push(self.backend.embed_preprocessed(&pre)?);
            start = end;
        }
        let mut matrix = Array2::zeros((n, spec.embed_dim));
        let mut offset = 0;
        for chunk in rows {
            let rows_in_chunk = chunk.nrows();
            matrix
                .slice_mut(ndarray::s![offset..offset + rows_in_chunk, ..])
                .assign(&chunk);
            offset += rows_in_chunk;
        }

        let bad: Vec<&str> = matrix
            .rows()
            .into_iter()
            .zip(batch.sample_ids())
            .filter(|(row, _)| row.iter().any(|v| !v.is_finite()))
            .map(|(_, id)| id.as_str())
            .collect();
        if !bad.is_empty() {
            return Err(Error::numerical(format!(
                "backend produced non-finite embeddings for samples: {}",
                bad.join(", ")
            )));
        }

        if self.normalize {
            for mut row in matrix.rows_mut() {
                let norm = row.dot(&row).sqrt();
                if norm > 1e-12 {
                    row.mapv_inplace(|v| v / norm);
                }
            }
        }
        let set = EmbeddingSet {
            encoder_id: spec.backend_id.clone(),
            dataset_id: identity.dataset_id.clone(),
            class_id: identity.class_id.clone(),
            transform_id: identity.transform_id.clone(),
            severity: identity.severity,
            matrix,
            normalized: self.normalize,
        };
        set.validate()?;
        Ok(set)
    }

    /// Embeds the identity set plus every bank transform of `class_images`.
    ///
    /// Returns 11 sets keyed by transform id (including [`IDENTITY_ID`]), all
    /// with identical N and D. Cache hits skip both the transform and the
    /// backend call.
    pub fn embed_all_transforms(
        &self,
        class_images: &ImageBatch,
        bank: &Bank,
        seed: u64,
        dataset_id: &str,
        class_id: &str,
    ) -> Result<BTreeMap<String, EmbeddingSet>> {
        if class_images.is_empty() {
            return Err(Error::validation("class image set is empty"));
        }
        let mut out = BTreeMap::new();
        let identity_set = self.embed_cached(class_images, None, bank.severity(), seed, dataset_id, class_id)?;
        out.insert(IDENTITY_ID.to_string(), identity_set);
        for spec in bank.specs() {
            let set = self.embed_cached(class_images, Some(spec), bank.severity(), seed, dataset_id, class_id)?;
            out.insert(spec.id.clone(), set);
        }
        Ok(out)
    }

    fn embed_cached(
        &self,
        class_images: &ImageBatch,
        transform: Option<&transform_bank::TransformSpec>,
        severity: u8,
        seed: u64,
        dataset_id: &str,
        class_id: &str,
    ) -> Result<EmbeddingSet> {
        let transform_id = transform.map(|t| t.id.as_str()).unwrap_or(IDENTITY_ID);
        let key = CacheKey {
            dataset: dataset_id.to_string(),
            class: class_id.to_string(),
            transform: transform_id.to_string(),
            severity,
            encoder: self.backend.spec().backend_id.clone(),
            transform_seed: if transform.is_some() { seed } else { 0 },
        };
        if let Some(cache) = self.cache {
            if let Some(hit) = cache.get(&key)? {
                if hit.matrix.nrows() == class_images.len() && hit.normalized == self.normalize {
                    return Ok(hit);
                }
            }
        }
        let identity = SetIdentity {
            dataset_id: dataset_id.to_string(),
            class_id: class_id.to_string(),
            transform_id: transform_id.to_string(),
            severity,
        };
        let set = match transform {
            None => self.embed(class_images, &identity)?,
            Some(spec) => {
                let transformed = transform_bank::apply(spec, class_images, seed)?;
                self.embed(&transformed, &identity)?
            }
        };
        if let Some(cache) = self.cache {
            cache.put(&key, &set)?;
        }
        Ok(set)
    }
}

/// Resizes a sub-range of the batch to the backend resolution and applies
/// channel normalization.
fn preprocess(batch: &ImageBatch, range: std::ops::Range<usize>, spec: &BackendSpec) -> Array4<f64> {
    let res = spec.input_resolution;
    let (_, _, c) = batch.image_dim();
    let count = range.len();
    let indices: Vec<usize> = range.collect();
    let resized: Vec<_> = indices
        .par_iter()
        .map(|&i| imageops::resize_bilinear(&batch.to_image(i), res, res))
        .collect();
    let mut out = Array4::zeros((count, res, res, c));
    for (slot, img) in resized.iter().enumerate() {
        for y in 0..res {
            for x in 0..res {
                for ch in 0..c {
                    let std = if ch < 3 { spec.channel_std[ch] } else { 1.0 };
                    let mean = if ch < 3 { spec.channel_mean[ch] } else { 0.0 };
                    out[[slot, y, x, ch]] = (img[[y, x, ch]] - mean) / std;
                }
            }
        }
    }
    out
}
