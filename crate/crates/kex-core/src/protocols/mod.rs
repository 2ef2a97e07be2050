//! Reproducible evaluation manifests for the three benchmark setups.
//!
//! * SAD — one class normal, every other class anomalous, no transforms.
//! * SPA — every test sample gets one seeded uniform transform draw (or
//!   none); labels depend only on class, so transforms never flip a label.
//! * SSA — shifting transforms of the normal class are anomalies too, as
//!   decided by a per-class semantic map derived from the transform ranking
//!   and optionally corrected by human overrides.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::seeding;
use crate::transform_bank::{self, Bank, ImageBatch};
use crate::transport_ranker::TransformRanking;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Setup {
    Sad,
    Spa,
    Ssa,
}

impl Setup {
    pub fn as_str(&self) -> &'static str {
        match self {
            Setup::Sad => "SAD",
            Setup::Spa => "SPA",
            Setup::Ssa => "SSA",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SAD" => Ok(Setup::Sad),
            "SPA" => Ok(Setup::Spa),
            "SSA" => Ok(Setup::Ssa),
            other => Err(Error::config(format!("unknown setup {other} (expected SAD|SPA|SSA)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    Normal,
    Anomaly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Preserving,
    Shifting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    KeRanking,
    HumanOverride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub verdict: Verdict,
    pub provenance: Provenance,
}

/// Per-class transform verdicts. Overrides always win over ranking-derived
/// verdicts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticMap {
    pub classes: BTreeMap<String, BTreeMap<String, VerdictEntry>>,
}

impl SemanticMap {
    pub fn verdict(&self, class: &str, transform: &str) -> Option<VerdictEntry> {
        self.classes.get(class).and_then(|m| m.get(transform)).copied()
    }

    /// Every bank transform must have a verdict for `class`.
    pub fn validate_coverage(&self, class: &str, bank: &Bank) -> Result<()> {
        let missing: Vec<&str> = bank
            .ids()
            .filter(|id| self.verdict(class, id).is_none())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "semantic map for class {class} is missing verdicts: {}",
                missing.join(", ")
            )))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Derives a semantic map from a transform ranking: the K closest transforms
/// are preserving, the K farthest are shifting, and the middle defaults to
/// preserving. Override lines replace derived verdicts and are recorded as
/// human decisions.
pub fn derive_semantic_map(
    ranking: &TransformRanking,
    k: usize,
    overrides_text: Option<&str>,
) -> Result<SemanticMap> {
    let n = ranking.entries.len();
    if n != transform_bank::BANK_SIZE {
        return Err(Error::validation(format!(
            "ranking covers {n} transforms, expected {}",
            transform_bank::BANK_SIZE
        )));
    }
    if k < 1 || 2 * k > n {
        return Err(Error::validation(format!("K={k} out of range for {n} transforms")));
    }
    let mut class_map = BTreeMap::new();
    for (pos, entry) in ranking.entries.iter().enumerate() {
        let verdict = if pos >= n - k {
            Verdict::Shifting
        } else {
            Verdict::Preserving
        };
        class_map.insert(
            entry.transform.clone(),
            VerdictEntry {
                verdict,
                provenance: Provenance::KeRanking,
            },
        );
    }
    let mut map = SemanticMap::default();
    map.classes.insert(ranking.class_id.clone(), class_map);

    if let Some(text) = overrides_text {
        apply_overrides(&mut map, text)?;
    }
    Ok(map)
}

/// Parses override lines (`class transform verdict`, `#` comments) and
/// applies them to the map.
pub fn apply_overrides(map: &mut SemanticMap, text: &str) -> Result<()> {
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected `class transform verdict`, got `{line}`"),
            });
        }
        let verdict = match fields[2] {
            "preserving" => Verdict::Preserving,
            "shifting" => Verdict::Shifting,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown verdict `{other}` (expected preserving|shifting)"),
                })
            }
        };
        if transform_bank::spec(fields[1], 1).is_err() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("unknown transform `{}`", fields[1]),
            });
        }
        map.classes
            .entry(fields[0].to_string())
            .or_default()
            .insert(
                fields[1].to_string(),
                VerdictEntry {
                    verdict,
                    provenance: Provenance::HumanOverride,
                },
            );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_ref: String,
    pub transform_id: Option<String>,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolManifest {
    pub schema_version: u32,
    pub setup: Setup,
    pub dataset_id: String,
    pub normal_class: String,
    /// Transform severity used when materializing records; 0 for SAD.
    pub severity: u8,
    pub seed: u64,
    pub generator_version: String,
    pub records: Vec<ManifestRecord>,
}

impl ProtocolManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    /// Atomic write (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn generator_version() -> String {
    format!("kex-{}", env!("CARGO_PKG_VERSION"))
}

fn check_class(dataset: &Dataset, normal_class: &str) -> Result<()> {
    if !dataset.has_class(normal_class) {
        return Err(Error::validation(format!(
            "unknown class {normal_class}; dataset has: {}",
            dataset.classes().join(", ")
        )));
    }
    Ok(())
}

/// Seeded per-sample transform draw: uniform over `none` plus the ten bank
/// transforms, so originals appear in test sets alongside every transform.
fn draw_transform(bank: &Bank, seed: u64, sample_id: &str) -> Option<String> {
    use rand::Rng;
    let mut rng = seeding::rng(seed, &["protocol-transform", sample_id]);
    let pick = rng.random_range(0..=transform_bank::BANK_SIZE);
    if pick == 0 {
        None
    } else {
        Some(bank.specs()[pick - 1].id.clone())
    }
}

/// Standard setup: test split only, labels by class, no transforms.
pub fn build_sad(dataset: &Dataset, normal_class: &str, seed: u64) -> Result<ProtocolManifest> {
    check_class(dataset, normal_class)?;
    let records = dataset
        .samples(Split::Test)
        .iter()
        .map(|s| ManifestRecord {
            sample_ref: s.id.clone(),
            transform_id: None,
            ground_truth: if s.class == normal_class {
                GroundTruth::Normal
            } else {
                GroundTruth::Anomaly
            },
        })
        .collect();
    Ok(ProtocolManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        setup: Setup::Sad,
        dataset_id: dataset.id().to_string(),
        normal_class: normal_class.to_string(),
        severity: 0,
        seed,
        generator_version: generator_version(),
        records,
    })
}

/// Semantic-preserving setup: transforms are applied everywhere but labels
/// depend only on class.
pub fn build_spa(
    dataset: &Dataset,
    normal_class: &str,
    bank: &Bank,
    seed: u64,
) -> Result<ProtocolManifest> {
    check_class(dataset, normal_class)?;
    let records = dataset
        .samples(Split::Test)
        .iter()
        .map(|s| ManifestRecord {
            sample_ref: s.id.clone(),
            transform_id: draw_transform(bank, seed, &s.id),
            ground_truth: if s.class == normal_class {
                GroundTruth::Normal
            } else {
                GroundTruth::Anomaly
            },
        })
        .collect();
    Ok(ProtocolManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        setup: Setup::Spa,
        dataset_id: dataset.id().to_string(),
        normal_class: normal_class.to_string(),
        severity: bank.severity(),
        seed,
        generator_version: generator_version(),
        records,
    })
}

/// Semantic-shift-aware setup: normal-class samples under shifting
/// transforms become anomalies; everything from other classes is anomalous.
pub fn build_ssa(
    dataset: &Dataset,
    normal_class: &str,
    semantic_map: &SemanticMap,
    bank: &Bank,
    seed: u64,
) -> Result<ProtocolManifest> {
    check_class(dataset, normal_class)?;
    semantic_map.validate_coverage(normal_class, bank)?;
    let records = dataset
        .samples(Split::Test)
        .iter()
        .map(|s| {
            let transform_id = draw_transform(bank, seed, &s.id);
            let ground_truth = if s.class != normal_class {
                GroundTruth::Anomaly
            } else {
                match &transform_id {
                    None => GroundTruth::Normal,
                    Some(t) => match semantic_map.verdict(normal_class, t) {
                        Some(entry) if entry.verdict == Verdict::Shifting => GroundTruth::Anomaly,
                        _ => GroundTruth::Normal,
                    },
                }
            };
            ManifestRecord {
                sample_ref: s.id.clone(),
                transform_id,
                ground_truth,
            }
        })
        .collect();
    Ok(ProtocolManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        setup: Setup::Ssa,
        dataset_id: dataset.id().to_string(),
        normal_class: normal_class.to_string(),
        severity: bank.severity(),
        seed,
        generator_version: generator_version(),
        records,
    })
}

/// Materializes manifest records as images: loads each referenced test
/// sample and applies its recorded transform with the manifest seed.
pub fn materialize(manifest: &ProtocolManifest, dataset: &Dataset) -> Result<ImageBatch> {
    let bank = if manifest.severity == 0 {
        Bank::at(1)?
    } else {
        Bank::at(manifest.severity)?
    };
    let mut images = Vec::with_capacity(manifest.records.len());
    let mut ids = Vec::with_capacity(manifest.records.len());
    for record in &manifest.records {
        let sample = dataset.sample(Split::Test, &record.sample_ref).ok_or_else(|| {
            Error::validation(format!(
                "manifest record {} not found in test split",
                record.sample_ref
            ))
        })?;
        let image = match &record.transform_id {
            None => sample.image.clone(),
            Some(t) => {
                let spec = bank.get(t)?;
                let sample_seed =
                    seeding::derive(manifest.seed, &["transform", &record.sample_ref, t]);
                transform_bank::apply_one(spec, &sample.image, sample_seed)?
            }
        };
        images.push(image);
        ids.push(record.sample_ref.clone());
    }
    ImageBatch::from_images(images, ids)
}
