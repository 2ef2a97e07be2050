//! Wasserstein distances between the identity embedding set and each
//! transformed set, per-class transform ranking, and positive/negative pair
//! selection.

mod entropic;
mod exact;
mod sliced;

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample as index_sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge_encoder::EmbeddingSet;
use crate::seeding;
use crate::transform_bank::{Bank, IDENTITY_ID};

pub use entropic::{sinkhorn_cost, SinkhornOptions};
pub use exact::solve_assignment;
pub use sliced::{sliced_w1, sliced_w1_with_se, w1_1d_sorted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMethod {
    Exact,
    Sliced,
    Entropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportCost {
    Euclidean,
    Cosine,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    pub method: TransportMethod,
    pub cost: TransportCost,
    /// Projections for the sliced estimator.
    pub n_projections: usize,
    /// Regularization for the entropic estimator.
    pub epsilon: f64,
    /// Iteration cap for the entropic estimator.
    pub max_iter: usize,
    /// Per-set subsample cap before any distance computation.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            method: TransportMethod::Sliced,
            cost: TransportCost::Euclidean,
            n_projections: 512,
            epsilon: 0.05,
            max_iter: 5000,
            max_samples: 2000,
            seed: 0,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::validation("transport epsilon must be positive"));
        }
        if self.n_projections == 0 {
            return Err(Error::validation("n_projections must be >= 1"));
        }
        if self.max_samples == 0 {
            return Err(Error::validation("max_samples must be >= 1"));
        }
        Ok(())
    }

    pub fn method_name(&self) -> &'static str {
        match self.method {
            TransportMethod::Exact => "exact",
            TransportMethod::Sliced => "sliced",
            TransportMethod::Entropic => "entropic",
        }
    }
}

/// Per-class transform ranking, ascending by distance (ties broken by id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRanking {
    pub class_id: String,
    pub entries: Vec<RankEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub transform: String,
    pub distance: f64,
}

impl TransformRanking {
    pub fn position(&self, transform_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.transform == transform_id)
    }
}

/// K positive / K negative transforms selected from a ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPolicy {
    pub class_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    /// Smallest-distance transforms, ascending.
    pub positives: Vec<String>,
    /// Largest-distance transforms, descending (argmax first).
    pub negatives: Vec<String>,
}

/// 1-Wasserstein distance between the empirical distributions of two
/// embedding sets. Sets larger than `max_samples` are subsampled with a
/// seed derived from the config seed and the set's provenance, so the draw
/// does not depend on argument order.
pub fn wasserstein(a: &EmbeddingSet, b: &EmbeddingSet, cfg: &TransportConfig) -> Result<f64> {
    cfg.validate()?;
    if a.matrix.ncols() != b.matrix.ncols() {
        return Err(Error::validation(format!(
            "embedding dimension mismatch: {} vs {}",
            a.matrix.ncols(),
            b.matrix.ncols()
        )));
    }
    let sub_a = subsample(&a.matrix, cfg, &a.class_id, &a.transform_id);
    let sub_b = subsample(&b.matrix, cfg, &b.class_id, &b.transform_id);
    wasserstein_matrices(sub_a.view(), sub_b.view(), cfg)
}

/// Distance between two raw embedding matrices (rows = points, uniform
/// weights). No subsampling is applied here.
pub fn wasserstein_matrices(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    cfg: &TransportConfig,
) -> Result<f64> {
    cfg.validate()?;
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::validation("point sets must be non-empty"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    match cfg.method {
        TransportMethod::Exact => {
            if a.nrows() != b.nrows() {
                return Err(Error::validation(format!(
                    "exact method requires equal-size sets after subsampling, got {} vs {}",
                    a.nrows(),
                    b.nrows()
                )));
            }
            let cost = cost_matrix(a, b, cfg.cost);
            let (total, _) = exact::solve_assignment(&cost);
            Ok(total / a.nrows() as f64)
        }
        TransportMethod::Sliced => {
            if cfg.cost != TransportCost::Euclidean {
                return Err(Error::validation(
                    "sliced estimator supports only the euclidean cost",
                ));
            }
            Ok(sliced::sliced_w1(a, b, cfg.n_projections, cfg.seed))
        }
        TransportMethod::Entropic => {
            let cost = cost_matrix(a, b, cfg.cost);
            entropic::sinkhorn_cost(
                &cost,
                SinkhornOptions {
                    epsilon: cfg.epsilon,
                    max_iter: cfg.max_iter,
                    tolerance: 1e-9,
                },
            )
        }
    }
}

fn subsample(matrix: &Array2<f64>, cfg: &TransportConfig, class_id: &str, transform_id: &str) -> Array2<f64> {
    let n = matrix.nrows();
    if n <= cfg.max_samples {
        return matrix.clone();
    }
    let mut rng = seeding::rng(cfg.seed, &["subsample", class_id, transform_id]);
    let mut indices: Vec<usize> = index_sample(&mut rng, n, cfg.max_samples).into_vec();
    indices.sort_unstable();
    let mut out = Array2::zeros((cfg.max_samples, matrix.ncols()));
    for (row, &i) in indices.iter().enumerate() {
        out.row_mut(row).assign(&matrix.row(i));
    }
    out
}

fn point_cost(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, cost: TransportCost) -> f64 {
    match cost {
        TransportCost::Euclidean => {
            let mut sum = 0.0;
            for (a, b) in x.iter().zip(y.iter()) {
                sum += (a - b) * (a - b);
            }
            sum.sqrt()
        }
        TransportCost::Cosine => {
            let dot = x.dot(&y);
            let nx = x.dot(&x).sqrt();
            let ny = y.dot(&y).sqrt();
            if nx <= 1e-12 || ny <= 1e-12 {
                1.0
            } else {
                1.0 - dot / (nx * ny)
            }
        }
    }
}

fn cost_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, cost: TransportCost) -> Array2<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..m).map(|j| point_cost(a.row(i), b.row(j), cost)).collect())
        .collect();
    let mut out = Array2::zeros((n, m));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

/// Ranks each bank transform by its distance to the identity set, ascending,
/// ties broken lexicographically by transform id.
pub fn rank_transforms(
    identity: &EmbeddingSet,
    transformed: &BTreeMap<String, EmbeddingSet>,
    bank: &Bank,
    cfg: &TransportConfig,
) -> Result<TransformRanking> {
    cfg.validate()?;
    let mut missing = Vec::new();
    for id in bank.ids() {
        if !transformed.contains_key(id) {
            missing.push(id.to_string());
        }
    }
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "transformed sets missing bank transforms: {}",
            missing.join(", ")
        )));
    }

    let items: Vec<(&String, &EmbeddingSet)> = transformed
        .iter()
        .filter(|(id, _)| id.as_str() != IDENTITY_ID)
        .collect();
    let distances: Vec<Result<(String, f64)>> = items
        .par_iter()
        .map(|(id, set)| {
            let d = wasserstein(identity, set, cfg)?;
            Ok(((*id).clone(), d))
        })
        .collect();

    let mut entries = Vec::with_capacity(distances.len());
    for item in distances {
        let (transform, distance) = item?;
        if !distance.is_finite() || distance < 0.0 {
            return Err(Error::numerical(format!(
                "distance for {transform} is not a finite non-negative value: {distance}"
            )));
        }
        entries.push(RankEntry { transform, distance });
    }
    entries.sort_by(|x, y| {
        x.distance
            .total_cmp(&y.distance)
            .then_with(|| x.transform.cmp(&y.transform))
    });
    Ok(TransformRanking {
        class_id: identity.class_id.clone(),
        entries,
    })
}

/// Selects the K smallest-distance transforms as positives and the K largest
/// as negatives.
pub fn select_pairs(ranking: &TransformRanking, k: usize) -> Result<PairPolicy> {
    let n = ranking.entries.len();
    if k < 1 || k > 5 || 2 * k > n {
        return Err(Error::validation(format!(
            "K={k} out of range: need 1 <= K <= 5 and 2K <= {n}"
        )));
    }
    let positives = ranking.entries[..k].iter().map(|e| e.transform.clone()).collect();
    let negatives = ranking.entries[n - k..]
        .iter()
        .rev()
        .map(|e| e.transform.clone())
        .collect();
    Ok(PairPolicy {
        class_id: ranking.class_id.clone(),
        k,
        positives,
        negatives,
    })
}

/// The ranking JSON document emitted by the `rank` subcommand and consumed by
/// training and protocol construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingDocument {
    pub class_id: String,
    pub encoder_id: String,
    pub severity: u8,
    pub entries: Vec<RankEntry>,
    pub policy: PolicyDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    #[serde(rename = "K")]
    pub k: usize,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

impl RankingDocument {
    pub fn new(ranking: &TransformRanking, policy: &PairPolicy, encoder_id: &str, severity: u8) -> Self {
        RankingDocument {
            class_id: ranking.class_id.clone(),
            encoder_id: encoder_id.to_string(),
            severity,
            entries: ranking.entries.clone(),
            policy: PolicyDocument {
                k: policy.k,
                positives: policy.positives.clone(),
                negatives: policy.negatives.clone(),
            },
        }
    }

    pub fn ranking(&self) -> TransformRanking {
        TransformRanking {
            class_id: self.class_id.clone(),
            entries: self.entries.clone(),
        }
    }

    pub fn policy(&self) -> PairPolicy {
        PairPolicy {
            class_id: self.class_id.clone(),
            k: self.policy.k,
            positives: self.policy.positives.clone(),
            negatives: self.policy.negatives.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}
