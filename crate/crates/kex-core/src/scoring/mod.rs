//! Anomaly scoring: a one-class SVM fit on normal-class features, producing
//! continuous decision values (for AUROC) and binary labels, plus the
//! raw-pretrained-feature baseline that skips contrastive training.

pub mod ocsvm;

use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge_encoder::{Backend, Embedder, SetIdentity};
use crate::protocols::GroundTruth;
use crate::transform_bank::{ImageBatch, IDENTITY_ID};

pub use ocsvm::{Kernel, OneClassSvm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Sigmoid,
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    TrainedModel,
    RawBackend,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub kernel: KernelKind,
    pub nu: f64,
    /// Kernel scale; `None` resolves to `1 / feature_dim`.
    pub gamma: Option<f64>,
    pub coef0: f64,
    pub feature_source: FeatureSource,
    /// L2-normalize features before fitting and scoring.
    pub normalize: bool,
    /// Also fit on policy-positive augmentations of the training data.
    pub include_positive_augmentations: bool,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            kernel: KernelKind::Sigmoid,
            nu: 0.1,
            gamma: None,
            coef0: 0.0,
            feature_source: FeatureSource::TrainedModel,
            normalize: true,
            include_positive_augmentations: false,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::validation(format!("nu must be in (0, 1], got {}", self.nu)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::validation(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }

    fn kernel_for(&self, feature_dim: usize) -> Kernel {
        let gamma = self.gamma.unwrap_or(1.0 / feature_dim as f64);
        match self.kernel {
            KernelKind::Sigmoid => Kernel::Sigmoid { gamma, coef0: self.coef0 },
            KernelKind::Rbf => Kernel::Rbf { gamma },
            KernelKind::Linear => Kernel::Linear,
        }
    }
}

/// Continuous and binary anomaly verdicts for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub sample_id: String,
    /// Positive = inside the normal region.
    pub decision_value: f64,
    /// +1 normal, -1 anomaly.
    pub binary_label: i8,
    /// Higher = more anomalous (`-decision_value`).
    pub anomaly_score: f64,
}

/// A fitted scorer bound to a feature dimension.
pub struct ScoreModel {
    svm: OneClassSvm,
    pub feature_dim: usize,
    pub nu: f64,
    normalize: bool,
}

impl ScoreModel {
    pub fn support_indices(&self) -> &[usize] {
        self.svm.support_indices.as_slice()
    }
}

fn check_finite(features: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("{what} features contain non-finite values")));
    }
    Ok(())
}

/// Centers each row on its own mean, then L2-normalizes — the same
/// representation map the contrastive trainer applies, so the boundary is
/// fit in the geometry the features were optimized for.
fn normalized_rows(features: ArrayView2<'_, f64>) -> ndarray::Array2<f64> {
    let mut out = features.to_owned();
    let d = out.ncols() as f64;
    for mut row in out.rows_mut() {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let norm = row.dot(&row).sqrt();
        if norm > 1e-12 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// Fits the one-class SVM on normal-class training features.
pub fn fit_scorer(train_features: ArrayView2<'_, f64>, cfg: &ScorerConfig) -> Result<ScoreModel> {
    cfg.validate()?;
    let n = train_features.nrows();
    if n < 10 {
        return Err(Error::validation(format!(
            "need at least 10 training rows to fit the scorer, got {n}"
        )));
    }
    check_finite(train_features, "training")?;

    // zero-variance features cannot be normalized meaningfully
    let mean = train_features.mean_axis(ndarray::Axis(0)).unwrap();
    let variance: f64 = train_features
        .rows()
        .into_iter()
        .map(|row| {
            let d = &row - &mean;
            d.dot(&d)
        })
        .sum::<f64>()
        / n as f64;
    let normalize = if variance < 1e-18 {
        log::warn!("training features are degenerate (zero variance); fitting on raw values");
        false
    } else {
        cfg.normalize
    };

    let prepared = if normalize {
        normalized_rows(train_features)
    } else {
        train_features.to_owned()
    };
    let kernel = cfg.kernel_for(train_features.ncols());
    let svm = OneClassSvm::fit(prepared.view(), cfg.nu, kernel)?;
    Ok(ScoreModel {
        svm,
        feature_dim: train_features.ncols(),
        nu: cfg.nu,
        normalize,
    })
}

/// Scores test features. Continuous decision values are retained so AUROC
/// sees more than the binary labels.
pub fn score(
    model: &ScoreModel,
    test_features: ArrayView2<'_, f64>,
    sample_ids: &[String],
) -> Result<Vec<AnomalyScore>> {
    if test_features.ncols() != model.feature_dim {
        return Err(Error::validation(format!(
            "feature dimension {} does not match model dimension {}",
            test_features.ncols(),
            model.feature_dim
        )));
    }
    if sample_ids.len() != test_features.nrows() {
        return Err(Error::validation("sample id count does not match feature rows"));
    }
    check_finite(test_features, "test")?;
    let prepared = if model.normalize {
        normalized_rows(test_features)
    } else {
        test_features.to_owned()
    };
    Ok(prepared
        .rows()
        .into_iter()
        .zip(sample_ids)
        .map(|(row, id)| {
            let decision_value = model.svm.decision(row);
            AnomalyScore {
                sample_id: id.clone(),
                decision_value,
                binary_label: if decision_value < 0.0 { -1 } else { 1 },
                anomaly_score: -decision_value,
            }
        })
        .collect())
}

/// Baseline mode: score raw encoder features directly, with no contrastive
/// training in between.
pub fn raw_feature_baseline(
    backend: &dyn Backend,
    train_images: &ImageBatch,
    test_images: &ImageBatch,
    cfg: &ScorerConfig,
) -> Result<Vec<AnomalyScore>> {
    let embedder = Embedder::new(backend);
    let meta = |role: &str| SetIdentity {
        dataset_id: "baseline".to_string(),
        class_id: role.to_string(),
        transform_id: IDENTITY_ID.to_string(),
        severity: 1,
    };
    let train = embedder.embed(train_images, &meta("train"))?;
    let test = embedder.embed(test_images, &meta("test"))?;
    let model = fit_scorer(train.matrix.view(), cfg)?;
    score(&model, test.matrix.view(), &test_images.sample_ids().to_vec())
}

/// One row of the `score` stage output; the scores.csv contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub sample_id: String,
    /// Empty string in CSV when the record is untransformed.
    pub transform_id: Option<String>,
    pub true_label: GroundTruth,
    pub decision_value: f64,
    pub anomaly_score: f64,
    pub binary_label: i8,
}

pub fn write_scores_csv(path: &Path, records: &[ScoredRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::config(e.to_string()))?;
    w.write_record([
        "sample_id",
        "transform_id",
        "true_label",
        "decision_value",
        "anomaly_score",
        "binary_label",
    ])
    .map_err(|e| Error::config(e.to_string()))?;
    for r in records {
        w.write_record([
            r.sample_id.as_str(),
            r.transform_id.as_deref().unwrap_or(""),
            match r.true_label {
                GroundTruth::Normal => "normal",
                GroundTruth::Anomaly => "anomaly",
            },
            &format!("{}", r.decision_value),
            &format!("{}", r.anomaly_score),
            &format!("{}", r.binary_label),
        ])
        .map_err(|e| Error::config(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoredRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::config(e.to_string()))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if record.len() != 6 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 6 columns, got {}", record.len()),
            });
        }
        let parse_f64 = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse { line, msg: format!("bad {what}: {s}") })
        };
        out.push(ScoredRecord {
            sample_id: record[0].to_string(),
            transform_id: if record[1].is_empty() {
                None
            } else {
                Some(record[1].to_string())
            },
            true_label: match &record[2] {
                "normal" => GroundTruth::Normal,
                "anomaly" => GroundTruth::Anomaly,
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("bad label {other}"),
                    })
                }
            },
            decision_value: parse_f64(&record[3], "decision_value")?,
            anomaly_score: parse_f64(&record[4], "anomaly_score")?,
            binary_label: record[5]
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("bad binary_label: {}", &record[5]) })?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Tight off-origin cluster; L2 normalization keeps its geometry.
    fn cluster(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.02).unwrap();
        Array2::from_shape_fn((n, 8), |(_, j)| {
            let base = if j == 0 { 3.0 } else { 0.5 + 0.1 * j as f64 };
            base + noise.sample(&mut rng)
        })
    }

    #[test]
    fn nu_property_holds_on_a_tight_cluster() {
        let data = cluster(100, 1);
        let cfg = ScorerConfig::default();
        let model = fit_scorer(data.view(), &cfg).unwrap();
        let ids: Vec<String> = (0..100).map(|i| format!("s{i}")).collect();
        let scores = score(&model, data.view(), &ids).unwrap();
        let inside = scores.iter().filter(|s| s.decision_value > 0.0).count() as f64;
        assert!(
            inside / 100.0 >= 1.0 - cfg.nu - 0.05,
            "inside fraction {} too small",
            inside / 100.0
        );
    }

    #[test]
    fn centroid_inside_far_point_outside() {
        let data = cluster(80, 2);
        let model = fit_scorer(data.view(), &ScorerConfig::default()).unwrap();
        let centroid = data.mean_axis(ndarray::Axis(0)).unwrap();
        let mut far = centroid.clone();
        far[0] = -200.0;
        far[1] = 120.0;
        let mut probe = Array2::zeros((2, 8));
        probe.row_mut(0).assign(&centroid);
        probe.row_mut(1).assign(&far);
        let scores = score(&model, probe.view(), &vec!["center".into(), "far".into()]).unwrap();
        assert_eq!(scores[0].binary_label, 1, "centroid: {:?}", scores[0]);
        assert_eq!(scores[1].binary_label, -1, "far point: {:?}", scores[1]);
    }

    #[test]
    fn anomaly_score_reverses_decision_order() {
        let data = cluster(40, 3);
        let model = fit_scorer(data.view(), &ScorerConfig::default()).unwrap();
        let ids: Vec<String> = (0..40).map(|i| format!("s{i}")).collect();
        let scores = score(&model, data.view(), &ids).unwrap();
        let mut by_decision: Vec<usize> = (0..scores.len()).collect();
        by_decision.sort_by(|&a, &b| scores[a].decision_value.total_cmp(&scores[b].decision_value));
        let mut by_anomaly: Vec<usize> = (0..scores.len()).collect();
        by_anomaly.sort_by(|&a, &b| scores[b].anomaly_score.total_cmp(&scores[a].anomaly_score));
        assert_eq!(by_decision, by_anomaly);
        for s in &scores {
            assert_eq!(s.anomaly_score, -s.decision_value);
            if s.decision_value != 0.0 {
                assert_eq!(s.binary_label as f64, s.decision_value.signum());
            }
        }
    }

    #[test]
    fn determinism_and_validation_errors() {
        let data = cluster(50, 4);
        let cfg = ScorerConfig::default();
        let a = fit_scorer(data.view(), &cfg).unwrap();
        let b = fit_scorer(data.view(), &cfg).unwrap();
        assert_eq!(a.support_indices(), b.support_indices());

        let small = cluster(5, 5);
        assert!(fit_scorer(small.view(), &cfg).is_err(), "N too small");

        let wrong_dim = Array2::<f64>::zeros((3, 4));
        let ids = vec!["a".into(), "b".into(), "c".into()];
        assert!(score(&a, wrong_dim.view(), &ids).is_err(), "dimension mismatch");

        let mut bad_nu = cfg.clone();
        bad_nu.nu = 0.0;
        assert!(fit_scorer(data.view(), &bad_nu).is_err());
    }

    #[test]
    fn degenerate_features_fit_on_raw_values() {
        let data = Array2::from_elem((20, 4), 0.7);
        let model = fit_scorer(data.view(), &ScorerConfig::default()).unwrap();
        let ids: Vec<String> = (0..20).map(|i| format!("s{i}")).collect();
        let scores = score(&model, data.view(), &ids).unwrap();
        assert_eq!(scores.len(), 20);
    }

    #[test]
    fn baseline_separates_well_separated_classes() {
        use crate::dataset::{self, Split};
        let ds = dataset::load("synthetic:classes=car+fruit,train=40,test=30,seed=8,side=16").unwrap();
        let backend = crate::knowledge_encoder::create_backend("grad-hist-16").unwrap();
        let train = ds.class_batch(Split::Train, "fruit").unwrap();
        let test = {
            let mut images = Vec::new();
            let mut ids = Vec::new();
            for s in ds.samples(Split::Test) {
                images.push(s.image.clone());
                ids.push(s.id.clone());
            }
            ImageBatch::from_images(images, ids).unwrap()
        };
        let scores =
            raw_feature_baseline(backend.as_ref(), &train, &test, &ScorerConfig::default()).unwrap();
        let labels: Vec<GroundTruth> = ds
            .samples(Split::Test)
            .iter()
            .map(|s| {
                if s.class == "fruit" {
                    GroundTruth::Normal
                } else {
                    GroundTruth::Anomaly
                }
            })
            .collect();
        let anomaly_scores: Vec<f64> = scores.iter().map(|s| s.anomaly_score).collect();
        let auroc = crate::eval_report::auroc(&anomaly_scores, &labels).unwrap();
        assert!(auroc > 0.9, "baseline AUROC {auroc} too low");
    }

    #[test]
    fn baseline_equals_manual_composition() {
        use crate::dataset::{self, Split};
        use crate::knowledge_encoder::{Embedder, SetIdentity};
        let ds = dataset::load("synthetic:classes=fruit+car,train=20,test=12,seed=6,side=16").unwrap();
        let backend = crate::knowledge_encoder::create_backend("pixel-8").unwrap();
        let train = ds.class_batch(Split::Train, "fruit").unwrap();
        let test = ds.class_batch(Split::Test, "car").unwrap();
        let cfg = ScorerConfig::default();

        let composed = raw_feature_baseline(backend.as_ref(), &train, &test, &cfg).unwrap();

        let embedder = Embedder::new(backend.as_ref());
        let meta = |role: &str| SetIdentity {
            dataset_id: "baseline".into(),
            class_id: role.into(),
            transform_id: IDENTITY_ID.into(),
            severity: 1,
        };
        let train_set = embedder.embed(&train, &meta("train")).unwrap();
        let test_set = embedder.embed(&test, &meta("test")).unwrap();
        let model = fit_scorer(train_set.matrix.view(), &cfg).unwrap();
        let manual = score(&model, test_set.matrix.view(), &test.sample_ids().to_vec()).unwrap();
        assert_eq!(composed, manual);
    }

    #[test]
    fn auroc_orientation_consistency() {
        use crate::eval_report::auroc;
        let data = cluster(60, 7);
        let model = fit_scorer(data.view(), &ScorerConfig::default()).unwrap();
        let ids: Vec<String> = (0..60).map(|i| format!("s{i}")).collect();
        let scores = score(&model, data.view(), &ids).unwrap();
        let labels: Vec<GroundTruth> = (0..60)
            .map(|i| if i % 3 == 0 { GroundTruth::Anomaly } else { GroundTruth::Normal })
            .collect();
        let flipped: Vec<GroundTruth> = labels
            .iter()
            .map(|l| match l {
                GroundTruth::Normal => GroundTruth::Anomaly,
                GroundTruth::Anomaly => GroundTruth::Normal,
            })
            .collect();
        let anomaly: Vec<f64> = scores.iter().map(|s| s.anomaly_score).collect();
        let decision: Vec<f64> = scores.iter().map(|s| s.decision_value).collect();
        // negating scores and flipping labels each mirror the statistic, so
        // the anomaly-score AUROC equals the decision-value AUROC under
        // flipped labels
        let a = auroc(&anomaly, &labels).unwrap();
        assert_eq!(a, auroc(&decision, &flipped).unwrap());
        assert_eq!(a, 1.0 - auroc(&decision, &labels).unwrap());
    }

    #[test]
    fn scores_csv_round_trips() {
        let records = vec![
            ScoredRecord {
                sample_id: "a".into(),
                transform_id: Some("flip".into()),
                true_label: GroundTruth::Normal,
                decision_value: 0.125,
                anomaly_score: -0.125,
                binary_label: 1,
            },
            ScoredRecord {
                sample_id: "b".into(),
                transform_id: None,
                true_label: GroundTruth::Anomaly,
                decision_value: -0.5,
                anomaly_score: 0.5,
                binary_label: -1,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        write_scores_csv(&path, &records).unwrap();
        let back = read_scores_csv(&path).unwrap();
        assert_eq!(back, records);
    }
}
