//! AUROC computation, per-class report tables, and feature-distance
//! histograms with static plot output.

pub mod svg;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::contrastive_trainer::FeatureModel;
use crate::error::{Error, Result};
use crate::knowledge_encoder::{Backend, Embedder, SetIdentity};
use crate::protocols::{GroundTruth, Setup};
use crate::transform_bank::{self, Bank, ImageBatch, IDENTITY_ID};

/// AUROC with the Mann-Whitney tie rule: `P(anomaly > normal) + 0.5 P(tie)`.
///
/// Scores must be oriented so higher means more anomalous. The numerator is
/// counted in integer half-units over sorted score arrays, so the result is
/// exactly the pairwise statistic.
pub fn auroc(scores: &[f64], labels: &[GroundTruth]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::validation("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numerical("AUROC scores contain NaN"));
    }
    let mut normals: Vec<f64> = Vec::new();
    let mut anomalies: Vec<f64> = Vec::new();
    for (s, l) in scores.iter().zip(labels) {
        match l {
            GroundTruth::Normal => normals.push(*s),
            GroundTruth::Anomaly => anomalies.push(*s),
        }
    }
    if normals.is_empty() || anomalies.is_empty() {
        return Err(Error::validation(
            "AUROC needs at least one normal and one anomaly",
        ));
    }
    normals.sort_unstable_by(f64::total_cmp);
    anomalies.sort_unstable_by(f64::total_cmp);

    // for each anomaly score: 2*(#normals below) + (#normals tied)
    let mut numerator_halves: u128 = 0;
    let mut below = 0usize; // normals strictly below the current anomaly
    let mut tied_end = 0usize; // normals <= current anomaly
    for &a in &anomalies {
        while below < normals.len() && normals[below] < a {
            below += 1;
        }
        if tied_end < below {
            tied_end = below;
        }
        while tied_end < normals.len() && normals[tied_end] == a {
            tied_end += 1;
        }
        // anomalies are sorted, so `below`/`tied_end` only move forward;
        // ties for this exact value span [below, tied_end)
        let tied = normals[below..].iter().take_while(|&&v| v == a).count();
        numerator_halves += 2 * below as u128 + tied as u128;
    }
    let denom = 2.0 * normals.len() as f64 * anomalies.len() as f64;
    Ok(numerator_halves as f64 / denom)
}

/// Per-class row of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class_id: String,
    pub auroc: f64,
    pub n_normal: usize,
    pub n_anomaly: usize,
}

/// Everything that determines the numbers in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub seed: u64,
    pub k: usize,
    pub severity: u8,
    pub encoder: String,
    pub estimator: String,
    /// `trained_model`, or `raw_backend` for the no-training baseline.
    pub feature_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setup: Setup,
    pub dataset_id: String,
    /// Rows in dataset class order.
    pub per_class: Vec<ClassRow>,
    /// Unweighted mean of the per-class AUROC values.
    pub mean_auroc: f64,
    /// Published mean for known dataset/setup combinations; an annotation,
    /// never a recomputed value.
    pub reference_mean_auroc: Option<f64>,
    pub fingerprint: Fingerprint,
}

/// Published mean AUROC (percent / 100) for reference annotation.
fn reference_mean(dataset_id: &str, setup: Setup) -> Option<f64> {
    let table: &[(&str, [f64; 3])] = &[
        ("cifar10", [0.9116, 0.8816, 0.5475]),
        ("cifar100-coarse", [0.8835, 0.8821, 0.4411]),
        ("svhn", [0.9082, 0.8647, 0.5094]),
    ];
    let idx = match setup {
        Setup::Sad => 0,
        Setup::Spa => 1,
        Setup::Ssa => 2,
    };
    table
        .iter()
        .find(|(id, _)| *id == dataset_id)
        .map(|(_, v)| v[idx])
}

impl EvalReport {
    pub fn class(&self, class_id: &str) -> Option<&ClassRow> {
        self.per_class.iter().find(|r| r.class_id == class_id)
    }
}

/// Assembles the per-class table and mean row for one setup.
///
/// `rows` must cover every class in `class_order`; rows come out in that
/// order with the unweighted mean appended to the report.
pub fn per_class_table(
    setup: Setup,
    dataset_id: &str,
    class_order: &[String],
    rows: &BTreeMap<String, ClassRow>,
    fingerprint: Fingerprint,
) -> Result<EvalReport> {
    let mut per_class = Vec::with_capacity(class_order.len());
    for class in class_order {
        let row = rows
            .get(class)
            .ok_or_else(|| Error::validation(format!("missing class in report: {class}")))?;
        if !(0.0..=1.0).contains(&row.auroc) {
            return Err(Error::validation(format!(
                "class {class} AUROC {} outside [0, 1]",
                row.auroc
            )));
        }
        per_class.push(row.clone());
    }
    if per_class.is_empty() {
        return Err(Error::validation("report has no classes"));
    }
    let mean_auroc = per_class.iter().map(|r| r.auroc).sum::<f64>() / per_class.len() as f64;
    Ok(EvalReport {
        setup,
        dataset_id: dataset_id.to_string(),
        per_class,
        mean_auroc,
        reference_mean_auroc: reference_mean(dataset_id, setup),
        fingerprint,
    })
}

/// Renders a report as CSV. Metadata rides in `#` comment lines so
/// [`parse_csv`] can reconstruct the full report.
pub fn render_csv(report: &EvalReport) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!("# setup={}\n", report.setup.as_str()));
    out.push_str(&format!("# dataset={}\n", report.dataset_id));
    out.push_str(&format!(
        "# fingerprint={}\n",
        serde_json::to_string(&report.fingerprint)?
    ));
    match report.reference_mean_auroc {
        Some(v) => out.push_str(&format!("# reference_mean_auroc={v}\n")),
        None => out.push_str("# reference_mean_auroc=\n"),
    }
    out.push_str("class_id,auroc,n_normal,n_anomaly\n");
    for row in &report.per_class {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.class_id, row.auroc, row.n_normal, row.n_anomaly
        ));
    }
    out.push_str(&format!("mean,{},,\n", report.mean_auroc));
    Ok(out)
}

pub fn parse_csv(text: &str) -> Result<EvalReport> {
    let mut setup = None;
    let mut dataset_id = None;
    let mut fingerprint = None;
    let mut reference: Option<f64> = None;
    let mut per_class = Vec::new();
    let mut mean_auroc = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("setup=") {
                setup = Some(Setup::parse(v)?);
            } else if let Some(v) = comment.strip_prefix("dataset=") {
                dataset_id = Some(v.to_string());
            } else if let Some(v) = comment.strip_prefix("fingerprint=") {
                fingerprint = Some(serde_json::from_str(v)?);
            } else if let Some(v) = comment.strip_prefix("reference_mean_auroc=") {
                if !v.is_empty() {
                    reference = Some(v.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        msg: format!("bad reference mean: {v}"),
                    })?);
                }
            }
            continue;
        }
        if line.starts_with("class_id,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 columns, got {}", fields.len()),
            });
        }
        let parse_f64 = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad number: {s}"),
            })
        };
        if fields[0] == "mean" {
            mean_auroc = Some(parse_f64(fields[1])?);
        } else {
            per_class.push(ClassRow {
                class_id: fields[0].to_string(),
                auroc: parse_f64(fields[1])?,
                n_normal: fields[2].parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad count: {}", fields[2]),
                })?,
                n_anomaly: fields[3].parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad count: {}", fields[3]),
                })?,
            });
        }
    }
    Ok(EvalReport {
        setup: setup.ok_or_else(|| Error::validation("csv missing setup comment"))?,
        dataset_id: dataset_id.ok_or_else(|| Error::validation("csv missing dataset comment"))?,
        per_class,
        mean_auroc: mean_auroc.ok_or_else(|| Error::validation("csv missing mean row"))?,
        reference_mean_auroc: reference,
        fingerprint: fingerprint.ok_or_else(|| Error::validation("csv missing fingerprint"))?,
    })
}

/// Where features for histograms come from: the trained model or a raw
/// encoder backend.
pub enum HistogramFeatures<'a> {
    Model(&'a FeatureModel),
    Backend(&'a dyn Backend),
}

impl HistogramFeatures<'_> {
    fn extract(&self, batch: &ImageBatch) -> Result<Array2<f64>> {
        match self {
            HistogramFeatures::Model(model) => model.extract_features(batch),
            HistogramFeatures::Backend(backend) => {
                let embedder = Embedder::new(*backend);
                let set = embedder.embed(
                    batch,
                    &SetIdentity {
                        dataset_id: "histogram".into(),
                        class_id: "histogram".into(),
                        transform_id: IDENTITY_ID.into(),
                        severity: 1,
                    },
                )?;
                Ok(set.matrix)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformHistogram {
    pub transform_id: String,
    pub mean_distance: f64,
    /// `counts.len() + 1` edges; shared across all transforms of one call.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub const HISTOGRAM_MIN_IMAGES: usize = 50;
pub const HISTOGRAM_BINS: usize = 30;

/// Per-sample feature distance to the normal-feature centroid, for each
/// requested transform (`identity` is allowed and measures the normals
/// against their own centroid).
pub fn distance_histograms(
    features: &HistogramFeatures<'_>,
    class_images: &ImageBatch,
    transform_ids: &[String],
    bank: &Bank,
    seed: u64,
) -> Result<Vec<TransformHistogram>> {
    if class_images.len() < HISTOGRAM_MIN_IMAGES {
        return Err(Error::validation(format!(
            "need at least {HISTOGRAM_MIN_IMAGES} images for distance histograms, got {}",
            class_images.len()
        )));
    }
    let normal = features.extract(class_images)?;
    let centroid: Array1<f64> = normal.mean_axis(ndarray::Axis(0)).unwrap();

    let mut all_distances: Vec<(String, Vec<f64>)> = Vec::new();
    for id in transform_ids {
        let feats = if id == IDENTITY_ID {
            normal.clone()
        } else {
            let spec = bank.get(id)?;
            let transformed = transform_bank::apply(spec, class_images, seed)?;
            features.extract(&transformed)?
        };
        let distances: Vec<f64> = feats
            .rows()
            .into_iter()
            .map(|row| {
                let d = &row - &centroid;
                d.dot(&d).sqrt()
            })
            .collect();
        all_distances.push((id.clone(), distances));
    }

    let max = all_distances
        .iter()
        .flat_map(|(_, d)| d.iter())
        .fold(0.0f64, |acc, &v| acc.max(v))
        .max(1e-12);
    let hi = max * 1.0001;
    let edges: Vec<f64> = (0..=HISTOGRAM_BINS)
        .map(|i| hi * i as f64 / HISTOGRAM_BINS as f64)
        .collect();

    Ok(all_distances
        .into_iter()
        .map(|(transform_id, distances)| {
            let mut counts = vec![0usize; HISTOGRAM_BINS];
            for &d in &distances {
                let bin = ((d / hi) * HISTOGRAM_BINS as f64) as usize;
                counts[bin.min(HISTOGRAM_BINS - 1)] += 1;
            }
            let mean_distance = distances.iter().sum::<f64>() / distances.len() as f64;
            TransformHistogram {
                transform_id,
                mean_distance,
                bin_edges: edges.clone(),
                counts,
            }
        })
        .collect())
}
