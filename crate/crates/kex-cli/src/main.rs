//! `kex` — one-class anomaly detection with transport-ranked augmentations.
//!
//! Subcommand per pipeline stage so any stage can be re-run from the
//! artifacts of its predecessors: transforms, embed, rank, build-protocol,
//! train, score, eval, report, run, validate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kex_core::contrastive_trainer::{self, FeatureModel, TrainConfig};
use kex_core::dataset::{self, Dataset, Split};
use kex_core::eval_report::{self, ClassRow, EvalReport, Fingerprint, HistogramFeatures};
use kex_core::knowledge_encoder::{create_backend, Embedder, EmbeddingCache};
use kex_core::pipeline::{self, PipelineConfig};
use kex_core::protocols::{self, ProtocolManifest, SemanticMap, Setup};
use kex_core::scoring;
use kex_core::transform_bank::{self, Bank};
use kex_core::transport_ranker::{RankingDocument, TransportConfig, TransportMethod};

#[derive(Parser)]
#[command(name = "kex", version, about = "One-class anomaly detection with transport-ranked augmentation selection")]
struct Cli {
    /// Top-level seed (stage seeds derive from it)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Transform severity (1-6)
    #[arg(long, global = true)]
    severity: Option<u8>,
    /// Positive/negative pair count
    #[arg(long, global = true)]
    k: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Inspect the transform bank
    Transforms {
        #[command(subcommand)]
        cmd: TransformsCmd,
    },
    /// Embed a class's images (identity plus all transforms) into a cache directory
    Embed(EmbedArgs),
    /// Rank transforms by Wasserstein distance and select the pair policy
    Rank(RankArgs),
    /// Build a SAD/SPA/SSA evaluation manifest
    BuildProtocol(BuildProtocolArgs),
    /// Train the contrastive feature model for one class
    Train(TrainArgs),
    /// Score a manifest with a trained model or a raw encoder baseline
    Score(ScoreArgs),
    /// Compute per-class AUROC from scored manifests
    Eval(EvalArgs),
    /// Render report tables and distance-histogram plots
    Report(ReportArgs),
    /// Run the full pipeline from a config file
    Run(RunArgs),
    /// Validate a config file and print diagnostics
    Validate(RunArgs),
}

#[derive(Subcommand)]
enum TransformsCmd {
    /// Print the severity parameter table
    List,
}

#[derive(Args)]
struct EmbedArgs {
    /// Dataset locator: `synthetic:...` or a directory with labels.csv
    #[arg(long)]
    dataset: String,
    /// Class whose training images are embedded
    #[arg(long)]
    class: String,
    /// Encoder backend id (e.g. grad-hist-64, pixel-16)
    #[arg(long, default_value = "grad-hist-64")]
    encoder: String,
    /// Output cache directory for the embedding sets
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    class: String,
    #[arg(long, default_value = "grad-hist-64")]
    encoder: String,
    /// Wasserstein estimator: exact, sliced, or entropic
    #[arg(long, default_value = "sliced")]
    method: String,
    /// Reuse/populate this embedding cache directory
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Output ranking document (JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildProtocolArgs {
    /// sad, spa, or ssa
    #[arg(long)]
    setup: String,
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    class: String,
    /// Semantic map JSON (SSA); wins over --ranking
    #[arg(long)]
    semantic_map: Option<PathBuf>,
    /// Ranking document to derive the semantic map from (SSA)
    #[arg(long)]
    ranking: Option<PathBuf>,
    /// Human override file: `class transform verdict` lines
    #[arg(long)]
    overrides: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    class: String,
    /// Ranking document carrying the pair policy
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    dataset: String,
    /// Protocol manifest to score
    #[arg(long)]
    manifest: PathBuf,
    /// Trained model checkpoint
    #[arg(long)]
    model: Option<PathBuf>,
    /// Raw encoder baseline instead of a trained model
    #[arg(long)]
    raw_backend: Option<String>,
    /// One-class SVM nu
    #[arg(long)]
    nu: Option<f64>,
    /// Output scores.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// scores.csv files; paired positionally with --manifest
    #[arg(long, required = true)]
    scores: Vec<PathBuf>,
    /// Manifests matching each scores file
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    /// Encoder id recorded in the report fingerprint
    #[arg(long, default_value = "unknown")]
    encoder: String,
    /// Estimator recorded in the report fingerprint
    #[arg(long, default_value = "unknown")]
    estimator: String,
    /// Output report JSON (array with one report per setup)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json produced by `eval` or `run`
    #[arg(long)]
    report: PathBuf,
    /// Output directory for report.csv, report.txt, and plots
    #[arg(long)]
    out_dir: PathBuf,
    /// Also render feature-distance histograms
    #[arg(long)]
    histograms: bool,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    class: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    backend: Option<String>,
    /// Comma-separated transform ids (plus `identity`)
    #[arg(long, default_value = "identity,flip,rot90")]
    transforms: String,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let severity = cli.severity;
    let k = cli.k.unwrap_or(2);
    match cli.cmd {
        Cmd::Transforms { cmd: TransformsCmd::List } => transforms_list(severity),
        Cmd::Embed(args) => embed(args, seed, severity.unwrap_or(1)),
        Cmd::Rank(args) => rank(args, seed, severity.unwrap_or(1), k),
        Cmd::BuildProtocol(args) => build_protocol(args, seed, severity, k),
        Cmd::Train(args) => train(args, seed, severity.unwrap_or(1), k),
        Cmd::Score(args) => score_cmd(args, seed),
        Cmd::Eval(args) => eval(args, seed),
        Cmd::Report(args) => report(args, seed, severity.unwrap_or(1)),
        Cmd::Run(args) => {
            let config = load_config(&args)?;
            let summary = pipeline::run_pipeline(&config)?;
            println!("run completed: {}", summary.out_dir.display());
            for r in &summary.reports {
                println!(
                    "  {}: mean AUROC {:.4} over {} classes",
                    r.setup.as_str(),
                    r.mean_auroc,
                    r.per_class.len()
                );
            }
            Ok(())
        }
        Cmd::Validate(args) => {
            let config = load_config(&args)?;
            let diagnostics = pipeline::validate_config(&config);
            if diagnostics.is_empty() {
                println!("config ok");
                Ok(())
            } else {
                for d in &diagnostics {
                    println!("{}: {}\n  hint: {}", d.field, d.message, d.hint);
                }
                bail!("{} problem(s) found", diagnostics.len());
            }
        }
    }
}

fn load_config(args: &RunArgs) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(dir) = &args.out_dir {
        config.out_dir = dir.clone();
    }
    Ok(config)
}

fn transforms_list(severity: Option<u8>) -> Result<()> {
    match severity {
        Some(s) => {
            println!("{:<18} {:<12} severity {}", "id", "kind", s);
            for spec in transform_bank::list_transforms(s)? {
                let params: Vec<String> =
                    spec.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!(
                    "{:<18} {:<12} {}",
                    spec.id,
                    format!("{:?}", spec.kind).to_lowercase(),
                    params.join(" ")
                );
            }
        }
        None => print!("{}", transform_bank::PARAMS_TOML),
    }
    Ok(())
}

fn load_dataset(locator: &str) -> Result<Dataset> {
    let resolved = if !locator.starts_with("synthetic") && !Path::new(locator).is_absolute() {
        match std::env::var(pipeline::ENV_DATA_DIR) {
            Ok(root) if !root.is_empty() => Path::new(&root).join(locator).display().to_string(),
            _ => locator.to_string(),
        }
    } else {
        locator.to_string()
    };
    Ok(dataset::load(&resolved)?)
}

fn cache_dir(explicit: Option<PathBuf>) -> Option<PathBuf> {
    explicit.or_else(|| std::env::var(pipeline::ENV_CACHE_DIR).ok().filter(|s| !s.is_empty()).map(PathBuf::from))
}

fn embed(args: EmbedArgs, seed: u64, severity: u8) -> Result<()> {
    let ds = load_dataset(&args.dataset)?;
    let backend = create_backend(&args.encoder)?;
    let bank = Bank::at(severity)?;
    let cache = EmbeddingCache::open(&args.out)?;
    let images = ds.class_batch(Split::Train, &args.class)?;
    let embedder = Embedder::new(backend.as_ref()).with_cache(&cache);
    let sets = embedder.embed_all_transforms(
        &images,
        &bank,
        pipeline::stage_seed(seed, "embed", &args.class),
        ds.id(),
        &args.class,
    )?;
    println!(
        "embedded {} sets of {}x{} into {}",
        sets.len(),
        images.len(),
        backend.spec().embed_dim,
        args.out.display()
    );
    Ok(())
}

fn parse_method(s: &str) -> Result<TransportMethod> {
    match s {
        "exact" => Ok(TransportMethod::Exact),
        "sliced" => Ok(TransportMethod::Sliced),
        "entropic" => Ok(TransportMethod::Entropic),
        other => bail!("unknown transport method {other} (expected exact|sliced|entropic)"),
    }
}

fn rank(args: RankArgs, seed: u64, severity: u8, k: usize) -> Result<()> {
    let ds = load_dataset(&args.dataset)?;
    let config = PipelineConfig {
        seed,
        encoder: kex_core::pipeline::EncoderConfig {
            backend: args.encoder.clone(),
            ..Default::default()
        },
        transport: TransportConfig {
            method: parse_method(&args.method)?,
            ..Default::default()
        },
        train: TrainConfig {
            k,
            ..Default::default()
        },
        protocol: kex_core::pipeline::ProtocolConfig {
            train_severity: severity,
            ..Default::default()
        },
        ..Default::default()
    };
    let cache = match cache_dir(args.cache) {
        Some(dir) => Some(EmbeddingCache::open(dir)?),
        None => None,
    };
    let doc = pipeline::rank_class(&ds, &args.class, &config, cache.as_ref())?;
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&args.out, doc.to_json()?)?;
    println!("ranking for class {}:", args.class);
    for e in &doc.entries {
        println!("  {:<18} {:.6}", e.transform, e.distance);
    }
    println!("policy: +{:?} -{:?}", doc.policy.positives, doc.policy.negatives);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn build_protocol(args: BuildProtocolArgs, seed: u64, severity: Option<u8>, k: usize) -> Result<()> {
    let ds = load_dataset(&args.dataset)?;
    let setup = Setup::parse(&args.setup)?;
    let severity = severity.unwrap_or(match setup {
        Setup::Ssa => 6,
        _ => 1,
    });
    let overrides_text = match &args.overrides {
        Some(path) => Some(std::fs::read_to_string(path)?),
        None => None,
    };
    let manifest = match setup {
        Setup::Sad => protocols::build_sad(&ds, &args.class, seed)?,
        Setup::Spa => protocols::build_spa(&ds, &args.class, &Bank::at(severity)?, seed)?,
        Setup::Ssa => {
            let map = if let Some(path) = &args.semantic_map {
                let mut map = SemanticMap::from_json(&std::fs::read_to_string(path)?)?;
                if let Some(text) = &overrides_text {
                    protocols::apply_overrides(&mut map, text)?;
                }
                map
            } else if let Some(path) = &args.ranking {
                let doc = RankingDocument::from_json(&std::fs::read_to_string(path)?)?;
                protocols::derive_semantic_map(&doc.ranking(), k, overrides_text.as_deref())?
            } else {
                bail!("SSA needs --semantic-map or --ranking");
            };
            protocols::build_ssa(&ds, &args.class, &map, &Bank::at(severity)?, seed)?
        }
    };
    manifest.save(&args.out)?;
    let normals = manifest
        .records
        .iter()
        .filter(|r| r.ground_truth == protocols::GroundTruth::Normal)
        .count();
    println!(
        "{} manifest for {}: {} records ({} normal, {} anomaly) -> {}",
        setup.as_str(),
        args.class,
        manifest.records.len(),
        normals,
        manifest.records.len() - normals,
        args.out.display()
    );
    Ok(())
}

fn train(args: TrainArgs, seed: u64, severity: u8, k: usize) -> Result<()> {
    let ds = load_dataset(&args.dataset)?;
    let doc = RankingDocument::from_json(&std::fs::read_to_string(&args.policy)?)?;
    let mut policy = doc.policy();
    if policy.class_id != args.class {
        bail!("policy file is for class {}, not {}", policy.class_id, args.class);
    }
    if k < policy.k {
        policy.positives.truncate(k);
        policy.negatives.truncate(k);
        policy.k = k;
    } else if k > policy.k {
        bail!("policy provides K={} pairs, requested K={k}", policy.k);
    }
    let mut cfg = TrainConfig {
        k,
        seed: pipeline::stage_seed(seed, "train", &args.class),
        ..Default::default()
    };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.feature_dim {
        cfg.feature_dim = v;
    }
    let images = ds.class_batch(Split::Train, &args.class)?;
    let bank = Bank::at(severity)?;
    let model = contrastive_trainer::train(&images, &args.class, &policy, &bank, &cfg)?;
    println!(
        "trained {} epochs, loss {:.4} -> {:.4}",
        cfg.epochs,
        model.history.first().copied().unwrap_or(f64::NAN),
        model.history.last().copied().unwrap_or(f64::NAN)
    );
    model.save(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn score_cmd(args: ScoreArgs, seed: u64) -> Result<()> {
    let ds = load_dataset(&args.dataset)?;
    let manifest = ProtocolManifest::load(&args.manifest)?;
    let mut config = PipelineConfig {
        seed,
        ..Default::default()
    };
    if let Some(nu) = args.nu {
        config.scorer.nu = nu;
    }
    let model = match (&args.model, &args.raw_backend) {
        (Some(path), None) => Some(FeatureModel::load(path)?),
        (None, Some(backend)) => {
            config.scorer.feature_source = scoring::FeatureSource::RawBackend;
            config.encoder.backend = backend.clone();
            None
        }
        _ => bail!("pass exactly one of --model or --raw-backend"),
    };
    let records = pipeline::score_manifest(&ds, &manifest, model.as_ref(), &config)?;
    scoring::write_scores_csv(&args.out, &records)?;
    println!("scored {} records -> {}", records.len(), args.out.display());
    Ok(())
}

fn eval(args: EvalArgs, seed: u64) -> Result<()> {
    if args.scores.len() != args.manifest.len() {
        bail!(
            "{} --scores files but {} --manifest files",
            args.scores.len(),
            args.manifest.len()
        );
    }
    // (setup, dataset) -> class -> row
    let mut grouped: BTreeMap<(Setup, String), BTreeMap<String, ClassRow>> = BTreeMap::new();
    let mut class_order: Vec<String> = Vec::new();
    let mut severity = 0u8;
    for (scores_path, manifest_path) in args.scores.iter().zip(&args.manifest) {
        let manifest = ProtocolManifest::load(manifest_path)?;
        let records = scoring::read_scores_csv(scores_path)?;
        let mut row = pipeline::eval_scores(&records)?;
        row.class_id = manifest.normal_class.clone();
        if !class_order.contains(&manifest.normal_class) {
            class_order.push(manifest.normal_class.clone());
        }
        severity = severity.max(manifest.severity);
        grouped
            .entry((manifest.setup, manifest.dataset_id.clone()))
            .or_default()
            .insert(manifest.normal_class.clone(), row);
    }
    let mut reports: Vec<EvalReport> = Vec::new();
    for ((setup, dataset_id), rows) in &grouped {
        let classes: Vec<String> = class_order
            .iter()
            .filter(|c| rows.contains_key(*c))
            .cloned()
            .collect();
        reports.push(eval_report::per_class_table(
            *setup,
            dataset_id,
            &classes,
            rows,
            Fingerprint {
                seed,
                k: 0,
                severity,
                encoder: args.encoder.clone(),
                estimator: args.estimator.clone(),
                feature_source: "unknown".to_string(),
            },
        )?);
    }
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&reports)?)?;
    for r in &reports {
        println!("{}: mean AUROC {:.4}", r.setup.as_str(), r.mean_auroc);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn report(args: ReportArgs, seed: u64, severity: u8) -> Result<()> {
    let reports: Vec<EvalReport> =
        serde_json::from_str(&std::fs::read_to_string(&args.report)?)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let mut csv_blocks = Vec::new();
    let mut text = String::new();
    for r in &reports {
        csv_blocks.push(eval_report::render_csv(r)?);
        text.push_str(&format!("== {} on {}\n", r.setup.as_str(), r.dataset_id));
        for row in &r.per_class {
            text.push_str(&format!(
                "  {:<16} {:.4}  ({} normal / {} anomaly)\n",
                row.class_id, row.auroc, row.n_normal, row.n_anomaly
            ));
        }
        text.push_str(&format!("  {:<16} {:.4}", "mean", r.mean_auroc));
        if let Some(reference) = r.reference_mean_auroc {
            text.push_str(&format!("  (published reference {reference:.4})"));
        }
        text.push('\n');
    }
    std::fs::write(args.out_dir.join("report.csv"), csv_blocks.join("\n"))?;
    std::fs::write(args.out_dir.join("report.txt"), &text)?;
    print!("{text}");

    if args.histograms {
        let (Some(locator), Some(class)) = (&args.dataset, &args.class) else {
            bail!("--histograms needs --dataset and --class");
        };
        let ds = load_dataset(locator)?;
        let images = ds.class_batch(Split::Test, class)?;
        let bank = Bank::at(severity)?;
        let transform_ids: Vec<String> =
            args.transforms.split(',').map(|s| s.trim().to_string()).collect();
        let model;
        let backend;
        let source = match (&args.model, &args.backend) {
            (Some(path), None) => {
                model = FeatureModel::load(path)?;
                HistogramFeatures::Model(&model)
            }
            (None, Some(id)) => {
                backend = create_backend(id)?;
                HistogramFeatures::Backend(backend.as_ref())
            }
            _ => bail!("--histograms needs exactly one of --model or --backend"),
        };
        let hists = eval_report::distance_histograms(
            &source,
            &images,
            &transform_ids,
            &bank,
            pipeline::stage_seed(seed, "histogram", class),
        )?;
        let plot_dir = args.out_dir.join("plots");
        std::fs::create_dir_all(&plot_dir)?;
        std::fs::write(
            plot_dir.join(format!("{class}-histograms.json")),
            serde_json::to_string_pretty(&hists)?,
        )?;
        for h in &hists {
            let svg = eval_report::svg::render_histogram(h, &format!("{class} / {}", h.transform_id));
            std::fs::write(plot_dir.join(format!("{class}-{}.svg", h.transform_id)), svg)?;
            println!("  {} mean distance {:.5}", h.transform_id, h.mean_distance);
        }
        println!("plots in {}", plot_dir.display());
    }
    Ok(())
}
