//! End-to-end pipeline: embed -> rank -> build protocols -> train -> score ->
//! eval -> report, driven by one declarative config whose top-level seed
//! derives every stage seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrastive_trainer::{self, FeatureModel, TrainConfig};
use crate::dataset::{self, Dataset, Split};
use crate::error::{Error, Result};
use crate::eval_report::{
    self, ClassRow, EvalReport,Fingerprint, HistogramFeatures, TransformHistogram,
};
use crate::knowledge_encoder::{create_backend, Backend, Embedder, EmbeddingCache, SetIdentity};
use crate::protocols::{self, ProtocolManifest, SemanticMap, Setup};
use crate::scoring::{self, FeatureSource, ScoredRecord, ScorerConfig};
use crate::seeding;
use crate::transform_bank::{self, Bank, ImageBatch, IDENTITY_ID};
use crate::transport_ranker::{self, PairPolicy, RankingDocument, TransportConfig};

pub const ENV_CACHE_DIR: &str = "KEX_CACHE_DIR";
pub const ENV_DATA_DIR: &str = "KEX_DATA_DIR";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// `synthetic:...` spec or a directory path (relative to `KEX_DATA_DIR`
    /// when that is set and the path is relative).
    pub locator: String,
    /// Normal classes to evaluate one-vs-rest; empty = all dataset classes.
    pub classes: Vec<String>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            locator: "synthetic:train=200,test=100,seed=0,side=32".into(),
            classes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub backend: String,
    pub normalize: bool,
    pub batch_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            backend: "grad-hist-64".into(),
            normalize: true,
            batch_size: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub setups: Vec<Setup>,
    /// Severity for training-time augmentation, ranking, and SPA test
    /// transforms.
    pub train_severity: u8,
    /// Severity for SSA test transforms.
    pub ssa_severity: u8,
    /// Optional human-override file (`class transform verdict` lines).
    pub overrides_file: Option<PathBuf>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            setups: vec![Setup::Sad, Setup::Spa, Setup::Ssa],
            train_severity: 1,
            ssa_severity: 6,
            overrides_file: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    /// Transforms to render distance histograms for (plus `identity`).
    pub histogram_transforms: Vec<String>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            histogram_transforms: vec!["flip".into(), "rot90".into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Single top-level seed; every stage seed is derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Embedding cache directory; `KEX_CACHE_DIR` overrides, and by default
    /// the cache lives inside the run directory.
    pub cache_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub encoder: EncoderConfig,
    pub transport: TransportConfig,
    pub train: TrainConfig,
    pub scorer: ScorerConfig,
    pub protocol: ProtocolConfig,
    pub report: ReportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/out"),
            cache_dir: None,
            dataset: DatasetConfig::default(),
            encoder: EncoderConfig::default(),
            transport: TransportConfig::default(),
            train: TrainConfig::default(),
            scorer: ScorerConfig::default(),
            protocol: ProtocolConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?)
    }

    /// Resolves the dataset locator against `KEX_DATA_DIR` for relative
    /// directory paths.
    pub fn resolved_locator(&self) -> String {
        let loc = &self.dataset.locator;
        if loc.starts_with("synthetic") {
            return loc.clone();
        }
        if Path::new(loc).is_absolute() {
            return loc.clone();
        }
        match std::env::var(ENV_DATA_DIR) {
            Ok(root) if !root.is_empty() => Path::new(&root).join(loc).display().to_string(),
            _ => loc.clone(),
        }
    }

    pub fn resolved_cache_dir(&self) -> PathBuf {
        if let Ok(dir) = std::env::var(ENV_CACHE_DIR) {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("cache"))
    }
}

/// One validation finding with a remedy hint.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
    pub hint: String,
}

/// Checks every field of the config; returns one diagnostic per problem
/// (empty = valid). Referenced files must exist at validation time.
pub fn validate_config(config: &PipelineConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |field: &str, message: String, hint: &str| {
        out.push(Diagnostic {
            field: field.to_string(),
            message,
            hint: hint.to_string(),
        });
    };

    let locator = config.resolved_locator();
    if !locator.starts_with("synthetic") {
        let dir = Path::new(&locator);
        if !dir.join("labels.csv").is_file() {
            push(
                "dataset.locator",
                format!("{locator} has no labels.csv"),
                "point at a dataset directory or use a synthetic: locator",
            );
        }
    } else if let Err(e) = dataset::load_spec_check(&locator) {
        push("dataset.locator", e.to_string(), "fix the synthetic: spec");
    }

    if let Err(e) = create_backend(&config.encoder.backend) {
        push(
            "encoder.backend",
            e.to_string(),
            "use grad-hist-<res> or pixel-<res>",
        );
    }
    if config.encoder.batch_size == 0 {
        push("encoder.batch_size", "batch size must be >= 1".into(), "use a positive batch size");
    }

    if let Err(e) = config.transport.validate() {
        push("transport", e.to_string(), "fix the transport section");
    }

    if 2 * config.train.k > transform_bank::BANK_SIZE {
        push(
            "train.k",
            format!("2K exceeds transform bank size ({} > {})", 2 * config.train.k, transform_bank::BANK_SIZE),
            "choose K <= 5",
        );
    } else if let Err(e) = config.train.validate() {
        push("train", e.to_string(), "fix the train section");
    }

    if let Err(e) = config.scorer.validate() {
        push("scorer", e.to_string(), "fix the scorer section");
    }

    for (name, sev) in [
        ("protocol.train_severity", config.protocol.train_severity),
        ("protocol.ssa_severity", config.protocol.ssa_severity),
    ] {
        if !(1..=6).contains(&sev) {
            push(name, format!("severity {sev} out of range"), "use 1..=6");
        }
    }
    if config.protocol.setups.is_empty() {
        push("protocol.setups", "no setups selected".into(), "list at least one of SAD, SPA, SSA");
    }
    if let Some(path) = &config.protocol.overrides_file {
        if !path.is_file() {
            push(
                "protocol.overrides_file",
                format!("{} does not exist", path.display()),
                "create the overrides file or remove the setting",
            );
        }
    }

    for t in &config.report.histogram_transforms {
        if t != IDENTITY_ID && transform_bank::spec(t, 1).is_err() {
            push(
                "report.histogram_transforms",
                format!("unknown transform {t}"),
                "use bank transform ids or `identity`",
            );
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
struct StageStatus {
    stage: String,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct RunStatus {
    config_snapshot: String,
    stages: Vec<StageStatus>,
    outcome: String,
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub report_path: PathBuf,
    pub reports: Vec<EvalReport>,
}

/// Derived per-stage seeds, all pure functions of the top-level seed.
pub fn stage_seed(config_seed: u64, stage: &str, class: &str) -> u64 {
    seeding::derive(config_seed, &[stage, class])
}

/// Ranks transforms for one class and selects the pair policy.
pub fn rank_class(
    dataset: &Dataset,
    class: &str,
    config: &PipelineConfig,
    cache: Option<&EmbeddingCache>,
) -> Result<RankingDocument> {
    let backend = create_backend(&config.encoder.backend)?;
    let bank = Bank::at(config.protocol.train_severity)?;
    let images = dataset.class_batch(Split::Train, class)?;
    let mut embedder = Embedder::new(backend.as_ref())
        .with_normalize(config.encoder.normalize)
        .with_batch_size(config.encoder.batch_size);
    if let Some(cache) = cache {
        embedder = embedder.with_cache(cache);
    }
    let embed_seed = stage_seed(config.seed, "embed", class);
    let sets = embedder.embed_all_transforms(&images, &bank, embed_seed, dataset.id(), class)?;
    let identity = sets
        .get(IDENTITY_ID)
        .ok_or_else(|| Error::validation("identity set missing"))?;
    let mut transport = config.transport.clone();
    transport.seed = stage_seed(config.seed, "transport", class);
    let ranking = transport_ranker::rank_transforms(identity, &sets, &bank, &transport)?;
    let policy = transport_ranker::select_pairs(&ranking, config.train.k)?;
    Ok(RankingDocument::new(
        &ranking,
        &policy,
        &config.encoder.backend,
        config.protocol.train_severity,
    ))
}

/// Builds the manifest for one setup and class.
pub fn build_manifest(
    dataset: &Dataset,
    class: &str,
    setup: Setup,
    semantic_map: Option<&SemanticMap>,
    config: &PipelineConfig,
) -> Result<ProtocolManifest> {
    let seed = stage_seed(config.seed, "protocol", &format!("{}-{class}", setup.as_str()));
    match setup {
        Setup::Sad => protocols::build_sad(dataset, class, seed),
        Setup::Spa => {
            let bank = Bank::at(config.protocol.train_severity)?;
            protocols::build_spa(dataset, class, &bank, seed)
        }
        Setup::Ssa => {
            let map = semantic_map
                .ok_or_else(|| Error::validation("SSA manifest needs a semantic map"))?;
            let bank = Bank::at(config.protocol.ssa_severity)?;
            protocols::build_ssa(dataset, class, map, &bank, seed)
        }
    }
}

/// Trains the feature model for one class under its policy.
pub fn train_class(
    dataset: &Dataset,
    class: &str,
    policy: &PairPolicy,
    config: &PipelineConfig,
) -> Result<FeatureModel> {
    let bank = Bank::at(config.protocol.train_severity)?;
    let images = dataset.class_batch(Split::Train, class)?;
    let mut cfg = config.train.clone();
    cfg.seed = stage_seed(config.seed, "train", class);
    contrastive_trainer::train(&images, class, policy, &bank, &cfg)
}

enum Features<'a> {
    Model(&'a FeatureModel),
    Backend(Box<dyn Backend>, bool),
}

impl Features<'_> {
    fn extract(&self, batch: &ImageBatch) -> Result<ndarray::Array2<f64>> {
        match self {
            Features::Model(m) => m.extract_features(batch),
            Features::Backend(b, normalize) => {
                let embedder = Embedder::new(b.as_ref()).with_normalize(*normalize);
                Ok(embedder
                    .embed(
                        batch,
                        &SetIdentity {
                            dataset_id: "score".into(),
                            class_id: "score".into(),
                            transform_id: IDENTITY_ID.into(),
                            severity: 1,
                        },
                    )?
                    .matrix)
            }
        }
    }
}

/// Fits the scorer on the class's training originals and scores a manifest.
pub fn score_manifest(
    dataset: &Dataset,
    manifest: &ProtocolManifest,
    model: Option<&FeatureModel>,
    config: &PipelineConfig,
) -> Result<Vec<ScoredRecord>> {
    let features = match (config.scorer.feature_source, model) {
        (FeatureSource::TrainedModel, Some(m)) => Features::Model(m),
        (FeatureSource::TrainedModel, None) => {
            return Err(Error::config(
                "scorer.feature_source = trained_model but no model was provided",
            ))
        }
        (FeatureSource::RawBackend, _) => Features::Backend(
            create_backend(&config.encoder.backend)?,
            config.encoder.normalize,
        ),
    };

    let mut train_images = dataset.class_batch(Split::Train, &manifest.normal_class)?;
    if config.scorer.include_positive_augmentations {
        // widen the normal-feature support with policy positives of the
        // training data; used only when explicitly enabled
        log::info!("scorer: including positive augmentations in training features");
        train_images = augment_with_positives(dataset, manifest, config, &train_images)?;
    }
    let train_features = features.extract(&train_images)?;
    let scorer = scoring::fit_scorer(train_features.view(), &config.scorer)?;

    let test_images = protocols::materialize(manifest, dataset)?;
    let test_features = features.extract(&test_images)?;
    let scores = scoring::score(
        &scorer,
        test_features.view(),
        &test_images.sample_ids().to_vec(),
    )?;

    Ok(manifest
        .records
        .iter()
        .zip(scores)
        .map(|(record, score)| ScoredRecord {
            sample_id: record.sample_ref.clone(),
            transform_id: record.transform_id.clone(),
            true_label: record.ground_truth,
            decision_value: score.decision_value,
            anomaly_score: score.anomaly_score,
            binary_label: score.binary_label,
        })
        .collect())
}

fn augment_with_positives(
    dataset: &Dataset,
    manifest: &ProtocolManifest,
    config: &PipelineConfig,
    train_images: &ImageBatch,
) -> Result<ImageBatch> {
    let ranking_doc = rank_class(dataset, &manifest.normal_class, config, None)?;
    let policy = ranking_doc.policy();
    let bank = Bank::at(config.protocol.train_severity)?;
    let mut images: Vec<ndarray::Array3<f64>> =
        (0..train_images.len()).map(|i| train_images.to_image(i)).collect();
    let mut ids: Vec<String> = train_images.sample_ids().to_vec();
    let seed = stage_seed(config.seed, "scorer-positives", &manifest.normal_class);
    for t in &policy.positives {
        let spec = bank.get(t)?;
        let transformed = transform_bank::apply(spec, train_images, seed)?;
        for i in 0..transformed.len() {
            images.push(transformed.to_image(i));
            ids.push(format!("{}+{t}", transformed.sample_ids()[i]));
        }
    }
    ImageBatch::from_images(images, ids)
}

/// AUROC over the scored records of one (setup, class) pair.
pub fn eval_scores(records: &[ScoredRecord]) -> Result<ClassRow> {
    let scores: Vec<f64> = records.iter().map(|r| r.anomaly_score).collect();
    let labels: Vec<protocols::GroundTruth> = records.iter().map(|r| r.true_label).collect();
    let auroc = eval_report::auroc(&scores, &labels)?;
    Ok(ClassRow {
        class_id: String::new(), // caller fills in
        auroc,
        n_normal: labels
            .iter()
            .filter(|l| **l == protocols::GroundTruth::Normal)
            .count(),
        n_anomaly: labels
            .iter()
            .filter(|l| **l == protocols::GroundTruth::Anomaly)
            .count(),
    })
}

fn fingerprint(config: &PipelineConfig, severity: u8) -> Fingerprint {
    Fingerprint {
        seed: config.seed,
        k: config.train.k,
        severity,
        encoder: config.encoder.backend.clone(),
        estimator: config.transport.method_name().to_string(),
        feature_source: match config.scorer.feature_source {
            FeatureSource::TrainedModel => "trained_model".to_string(),
            FeatureSource::RawBackend => "raw_backend".to_string(),
        },
    }
}

/// Runs the full pipeline. The run directory receives ranking documents,
/// semantic maps, manifests, checkpoints, score tables, the report pair,
/// plots, a resolved-config snapshot, and a status file. Rerunning with the
/// same snapshot reproduces `report.json` byte for byte.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    let diagnostics = validate_config(config);
    if !diagnostics.is_empty() {
        let mut msg = String::from("invalid config:");
        for d in &diagnostics {
            msg.push_str(&format!("\n  {}: {} ({})", d.field, d.message, d.hint));
        }
        return Err(Error::config(msg));
    }

    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir)?;
    let snapshot = config.to_toml()?;
    fs::write(out_dir.join("config.resolved.toml"), &snapshot)?;

    let mut status = RunStatus {
        config_snapshot: "config.resolved.toml".into(),
        stages: Vec::new(),
        outcome: "running".into(),
    };
    let write_status = |status: &RunStatus| -> Result<()> {
        fs::write(
            out_dir.join("status.json"),
            serde_json::to_string_pretty(status)?,
        )?;
        Ok(())
    };
    write_status(&status)?;

    macro_rules! stage {
        ($status:ident, $name:expr, $body:expr) => {{
            match $body {
                Ok(value) => {
                    $status.stages.push(StageStatus {
                        stage: $name.to_string(),
                        status: "ok".into(),
                        error: None,
                    });
                    write_status(&$status)?;
                    value
                }
                Err(e) => {
                    $status.stages.push(StageStatus {
                        stage: $name.to_string(),
                        status: "failed".into(),
                        error: Some(e.to_string()),
                    });
                    $status.outcome = format!("failed at stage {}", $name);
                    write_status(&$status)?;
                    return Err(e);
                }
            }
        }};
    }

    let ds = stage!(status, "load-dataset", dataset::load(&config.resolved_locator()));
    let classes: Vec<String> = if config.dataset.classes.is_empty() {
        ds.classes().to_vec()
    } else {
        config.dataset.classes.clone()
    };
    for class in &classes {
        if !ds.has_class(class) {
            return Err(Error::config(format!("dataset has no class {class}")));
        }
    }

    let cache = EmbeddingCache::open(config.resolved_cache_dir())?;
    let overrides_text = match &config.protocol.overrides_file {
        Some(path) => Some(fs::read_to_string(path)?),
        None => None,
    };

    let mut rankings: BTreeMap<String, RankingDocument> = BTreeMap::new();
    let mut models: BTreeMap<String, FeatureModel> = BTreeMap::new();
    let mut rows: BTreeMap<Setup, BTreeMap<String, ClassRow>> = BTreeMap::new();

    for class in &classes {
        let doc = stage!(
            status,
            format!("rank/{class}"),
            rank_class(&ds, class, config, Some(&cache))
        );
        fs::create_dir_all(out_dir.join("ranking"))?;
        fs::write(
            out_dir.join("ranking").join(format!("{class}.json")),
            doc.to_json()?,
        )?;

        let semantic_map = stage!(
            status,
            format!("semantic-map/{class}"),
            protocols::derive_semantic_map(&doc.ranking(), config.train.k, overrides_text.as_deref())
        );
        fs::create_dir_all(out_dir.join("semantic_map"))?;
        fs::write(
            out_dir.join("semantic_map").join(format!("{class}.json")),
            semantic_map.to_json()?,
        )?;

        let model = if config.scorer.feature_source == FeatureSource::TrainedModel {
            let model = stage!(
                status,
                format!("train/{class}"),
                train_class(&ds, class, &doc.policy(), config)
            );
            fs::create_dir_all(out_dir.join("models"))?;
            model.save(&out_dir.join("models").join(format!("{class}.ckpt")))?;
            Some(model)
        } else {
            None
        };

        for &setup in &config.protocol.setups {
            let manifest = stage!(
                status,
                format!("manifest/{}/{class}", setup.as_str()),
                build_manifest(&ds, class, setup, Some(&semantic_map), config)
            );
            fs::create_dir_all(out_dir.join("manifests"))?;
            manifest.save(
                &out_dir
                    .join("manifests")
                    .join(format!("{}-{class}.json", setup.as_str().to_lowercase())),
            )?;

            let records = stage!(
                status,
                format!("score/{}/{class}", setup.as_str()),
                score_manifest(&ds, &manifest, model.as_ref(), config)
            );
            fs::create_dir_all(out_dir.join("scores"))?;
            scoring::write_scores_csv(
                &out_dir
                    .join("scores")
                    .join(format!("{}-{class}.csv", setup.as_str().to_lowercase())),
                &records,
            )?;

            let mut row = stage!(status, format!("eval/{}/{class}", setup.as_str()), eval_scores(&records));
            row.class_id = class.clone();
            rows.entry(setup).or_default().insert(class.clone(), row);
        }

        if let Some(model) = model {
            models.insert(class.clone(), model);
        }
        rankings.insert(class.clone(), doc);
    }

    // reports
    let mut reports = Vec::new();
    for &setup in &config.protocol.setups {
        let severity = match setup {
            Setup::Ssa => config.protocol.ssa_severity,
            _ => config.protocol.train_severity,
        };
        let report = stage!(
            status,
            format!("report/{}", setup.as_str()),
            eval_report::per_class_table(
                setup,
                ds.id(),
                &classes,
                rows.get(&setup).unwrap_or(&BTreeMap::new()),
                fingerprint(config, severity),
            )
        );
        reports.push(report);
    }
    reports.sort_by_key(|r| r.setup);
    let report_path = out_dir.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&reports)?)?;
    let mut csv_blocks = Vec::new();
    for report in &reports {
        csv_blocks.push(eval_report::render_csv(report)?);
    }
    fs::write(out_dir.join("report.csv"), csv_blocks.join("\n"))?;

    // plots: distance histograms of the trained model's feature space
    if !config.report.histogram_transforms.is_empty() {
        let bank = Bank::at(config.protocol.train_severity)?;
        for class in &classes {
            let result: Result<Vec<TransformHistogram>> = (|| {
                let images = ds.class_batch(Split::Test, class)?;
                let source = match models.get(class) {
                    Some(model) => HistogramFeatures::Model(model),
                    None => return Ok(Vec::new()),
                };
                eval_report::distance_histograms(
                    &source,
                    &images,
                    &config.report.histogram_transforms,
                    &bank,
                    stage_seed(config.seed, "histogram", class),
                )
            })();
            match result {
                Ok(hists) if !hists.is_empty() => {
                    let plot_dir = out_dir.join("plots");
                    fs::create_dir_all(&plot_dir)?;
                    fs::write(
                        plot_dir.join(format!("{class}-histograms.json")),
                        serde_json::to_string_pretty(&hists)?,
                    )?;
                    for h in &hists {
                        fs::write(
                            plot_dir.join(format!("{class}-{}.svg", h.transform_id)),
                            svg_for(&h, class),
                        )?;
                    }
                }
                Ok(_) => {}
                Err(e) => log::warn!("histograms for {class} skipped: {e}"),
            }
        }
    }

    status.outcome = "completed".into();
    write_status(&status)?;
    Ok(RunSummary {
        out_dir: out_dir.clone(),
        report_path,
        reports,
    })
}

fn svg_for(hist: &TransformHistogram, class: &str) -> String {
    eval_report::svg::render_histogram(hist, &format!("{class} / {}", hist.transform_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config(dir: &Path) -> PipelineConfig {
        PipelineConfig {
            seed: 3,
            out_dir: dir.to_path_buf(),
            dataset: DatasetConfig {
                locator: "synthetic:classes=car+fruit,train=30,test=24,seed=5,side=16".into(),
                classes: vec!["fruit".into()],
            },
            encoder: EncoderConfig {
                backend: "grad-hist-16".into(),
                ..Default::default()
            },
            transport: TransportConfig {
                n_projections: 64,
                ..Default::default()
            },
            train: TrainConfig {
                epochs: 1,
                batch_size: 8,
                k: 1,
                feature_dim: 16,
                ..Default::default()
            },
            protocol: ProtocolConfig {
                setups: vec![Setup::Sad, Setup::Spa],
                ..Default::default()
            },
            report: ReportConfig {
                histogram_transforms: Vec::new(),
            },
            ..Default::default()
        }
    }

    #[test]
    fn validate_catches_the_specified_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = smoke_config(dir.path());
        assert!(validate_config(&config).is_empty(), "{:?}", validate_config(&config));

        config.train.k = 7;
        let diags = validate_config(&config);
        assert!(
            diags.iter().any(|d| d.message.contains("2K exceeds transform bank size")),
            "{diags:?}"
        );

        config.train.k = 2;
        config.train.temperature = 0.0;
        let diags = validate_config(&config);
        assert!(diags.iter().any(|d| d.field == "train"), "{diags:?}");

        config.train.temperature = 0.2;
        config.encoder.backend = "missing-weights".into();
        let diags = validate_config(&config);
        assert!(diags.iter().any(|d| d.field == "encoder.backend"), "{diags:?}");
    }

    #[test]
    fn config_toml_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let config = smoke_config(dir.path());
        let toml_text = config.to_toml().unwrap();
        let back = PipelineConfig::from_toml(&toml_text).unwrap();
        assert_eq!(back.to_toml().unwrap(), toml_text);
    }

    #[test]
    fn pipeline_runs_end_to_end_and_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let config = smoke_config(&dir.path().join("run"));
        let summary = run_pipeline(&config).unwrap();
        assert!(summary.report_path.is_file());
        assert!(config.out_dir.join("config.resolved.toml").is_file());
        assert!(config.out_dir.join("ranking/fruit.json").is_file());
        assert!(config.out_dir.join("manifests/sad-fruit.json").is_file());
        assert!(config.out_dir.join("manifests/spa-fruit.json").is_file());
        assert!(config.out_dir.join("scores/sad-fruit.csv").is_file());
        assert!(config.out_dir.join("models/fruit.ckpt").is_file());
        assert!(config.out_dir.join("report.csv").is_file());
        assert_eq!(summary.reports.len(), 2);
        let status: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(config.out_dir.join("status.json")).unwrap())
                .unwrap();
        assert_eq!(status["outcome"], "completed");
    }

    #[test]
    fn missing_encoder_fails_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = smoke_config(&dir.path().join("run"));
        config.encoder.backend = "vit-l-14".into();
        let err = run_pipeline(&config).unwrap_err();
        assert!(err.to_string().contains("encoder.backend"), "{err}");
        assert!(!config.out_dir.join("models").exists(), "no training happened");
    }
}
