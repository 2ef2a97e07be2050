//! Labeled image datasets: a thin directory loader plus the built-in
//! synthetic generator. A dataset is a train/test split of `(id, class,
//! image)` samples; all images in a dataset share one resolution.

pub mod synthetic;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::transform_bank::ImageBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub class: String,
    pub image: Array3<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    id: String,
    classes: Vec<String>,
    train: Vec<Sample>,
    test: Vec<Sample>,
}

impl Dataset {
    pub fn new(id: String, classes: Vec<String>, train: Vec<Sample>, test: Vec<Sample>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::validation("dataset has no classes"));
        }
        for s in train.iter().chain(test.iter()) {
            if !classes.contains(&s.class) {
                return Err(Error::validation(format!(
                    "sample {} has unknown class {}",
                    s.id, s.class
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for s in train.iter().chain(test.iter()) {
            if !seen.insert(&s.id) {
                return Err(Error::validation(format!("duplicate sample id: {}", s.id)));
            }
        }
        Ok(Dataset { id, classes, train, test })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn has_class(&self, class: &str) -> bool {
        self.classes.iter().any(|c| c == class)
    }

    pub fn samples(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn sample(&self, split: Split, id: &str) -> Option<&Sample> {
        self.samples(split).iter().find(|s| s.id == id)
    }

    /// All samples of one class in one split, as an `ImageBatch` in stored order.
    pub fn class_batch(&self, split: Split, class: &str) -> Result<ImageBatch> {
        if !self.has_class(class) {
            return Err(Error::validation(format!("unknown class: {class}")));
        }
        let samples: Vec<&Sample> = self
            .samples(split)
            .iter()
            .filter(|s| s.class == class)
            .collect();
        if samples.is_empty() {
            return Err(Error::validation(format!(
                "class {class} has no {} samples",
                split.as_str()
            )));
        }
        ImageBatch::from_images(
            samples.iter().map(|s| s.image.clone()).collect(),
            samples.iter().map(|s| s.id.clone()).collect(),
        )
    }
}

/// Dataset locator: either `synthetic:key=value,...` or a directory path.
///
/// Synthetic keys (all optional): `classes=car+fruit+house`, `train=200`,
/// `test=100`, `seed=0`, `side=32`.
pub fn load(locator: &str) -> Result<Dataset> {
    if let Some(spec) = locator.strip_prefix("synthetic:") {
        synthetic_from_spec(spec)
    } else if locator == "synthetic" {
        synthetic_from_spec("")
    } else {
        load_dir(Path::new(locator))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub classes: Vec<String>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    pub side: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: synthetic::CLASSES.iter().map(|s| s.to_string()).collect(),
            train_per_class: 200,
            test_per_class: 100,
            seed: 0,
            side: 32,
        }
    }
}

/// Validates a locator without materializing any images.
pub fn load_spec_check(locator: &str) -> Result<()> {
    if let Some(spec) = locator.strip_prefix("synthetic:") {
        parse_synthetic_spec(spec).map(|_| ())
    } else if locator == "synthetic" {
        Ok(())
    } else if Path::new(locator).join("labels.csv").is_file() {
        Ok(())
    } else {
        Err(Error::config(format!(
            "dataset directory {locator} has no labels.csv"
        )))
    }
}

fn synthetic_from_spec(spec: &str) -> Result<Dataset> {
    generate_synthetic(&parse_synthetic_spec(spec)?)
}

fn parse_synthetic_spec(spec: &str) -> Result<SyntheticConfig> {
    let mut cfg = SyntheticConfig::default();
    for part in spec.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::config(format!("synthetic spec entry `{part}` is not key=value")))?;
        match key {
            "classes" => cfg.classes = value.split('+').map(|s| s.to_string()).collect(),
            "train" => cfg.train_per_class = parse_num(key, value)?,
            "test" => cfg.test_per_class = parse_num(key, value)?,
            "seed" => cfg.seed = parse_num(key, value)? as u64,
            "side" => cfg.side = parse_num(key, value)?,
            other => return Err(Error::config(format!("unknown synthetic spec key: {other}"))),
        }
    }
    for class in &cfg.classes {
        if !synthetic::CLASSES.contains(&class.as_str()) {
            return Err(Error::config(format!(
                "unknown synthetic class {class}; available: {}",
                synthetic::CLASSES.join(", ")
            )));
        }
    }
    Ok(cfg)
}

fn parse_num(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::config(format!("synthetic spec {key}={value} is not a number")))
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in &cfg.classes {
        if !synthetic::CLASSES.contains(&class.as_str()) {
            return Err(Error::config(format!(
                "unknown synthetic class {class}; available: {}",
                synthetic::CLASSES.join(", ")
            )));
        }
        for (split, count, out) in [
            ("train", cfg.train_per_class, &mut train),
            ("test", cfg.test_per_class, &mut test),
        ] {
            for i in 0..count {
                let seed = synthetic::sample_seed(cfg.seed, class, split, i);
                let image = synthetic::render(class, cfg.side, seed)
                    .ok_or_else(|| Error::config(format!("unknown synthetic class {class}")))?;
                out.push(Sample {
                    id: format!("{class}-{split}-{i:05}"),
                    class: class.clone(),
                    image,
                });
            }
        }
    }
    let id = format!(
        "synthetic-{}-tr{}-te{}-s{}-px{}",
        cfg.classes.join("+"),
        cfg.train_per_class,
        cfg.test_per_class,
        cfg.seed,
        cfg.side
    );
    Dataset::new(id, cfg.classes.clone(), train, test)
}

/// Loads a dataset from a directory containing `labels.csv` with columns
/// `sample_id,split,class,path` and the referenced image files.
pub fn load_dir(root: &Path) -> Result<Dataset> {
    let labels = root.join("labels.csv");
    if !labels.is_file() {
        return Err(Error::config(format!(
            "dataset directory {} has no labels.csv",
            root.display()
        )));
    }
    let mut reader = csv::Reader::from_path(&labels)
        .map_err(|e| Error::config(format!("labels.csv: {e}")))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut classes = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: i + 2,
            msg: e.to_string(),
        })?;
        if record.len() != 4 {
            return Err(Error::Parse {
                line: i + 2,
                msg: format!("expected 4 columns, got {}", record.len()),
            });
        }
        let (id, split, class, rel) = (&record[0], &record[1], &record[2], &record[3]);
        let image = load_image(&root.join(rel))?;
        classes.entry(class.to_string()).or_insert(());
        let sample = Sample {
            id: id.to_string(),
            class: class.to_string(),
            image,
        };
        match split {
            "train" => train.push(sample),
            "test" => test.push(sample),
            other => {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: format!("unknown split `{other}` (expected train|test)"),
                })
            }
        }
    }
    let id = root
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "dataset".to_string());
    Dataset::new(id, classes.into_keys().collect(), train, test)
}

fn load_image(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::config(format!("cannot load image {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((h as usize, w as usize, 3));
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x, y);
            for c in 0..3 {
                out[[y as usize, x as usize, c]] = px[c] as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

/// Writes a dataset to a directory in the loader's format (PNG images plus
/// `labels.csv`). Mainly used to materialize synthetic data for inspection.
pub fn save_dir(dataset: &Dataset, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root.join("images"))?;
    let mut writer = csv::Writer::from_path(root.join("labels.csv"))
        .map_err(|e| Error::config(format!("labels.csv: {e}")))?;
    writer
        .write_record(["sample_id", "split", "class", "path"])
        .map_err(|e| Error::config(e.to_string()))?;
    for (split, samples) in [(Split::Train, dataset.samples(Split::Train)), (Split::Test, dataset.samples(Split::Test))] {
        for s in samples {
            let rel = format!("images/{}.png", s.id);
            let (h, w, _) = s.image.dim();
            let mut img = image::RgbImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    let px = image::Rgb([
                        (s.image[[y, x, 0]] * 255.0).round() as u8,
                        (s.image[[y, x, 1]] * 255.0).round() as u8,
                        (s.image[[y, x, 2]] * 255.0).round() as u8,
                    ]);
                    img.put_pixel(x as u32, y as u32, px);
                }
            }
            img.save(root.join(&rel))
                .map_err(|e| Error::config(format!("cannot save {rel}: {e}")))?;
            writer
                .write_record([s.id.as_str(), split.as_str(), s.class.as_str(), rel.as_str()])
                .map_err(|e| Error::config(e.to_string()))?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_generation_is_deterministic() {
        let a = load("synthetic:classes=car+fruit,train=5,test=3,seed=9,side=16").unwrap();
        let b = load("synthetic:classes=car+fruit,train=5,test=3,seed=9,side=16").unwrap();
        assert_eq!(a.id(), b.id());
        assert_eq!(a.samples(Split::Train).len(), 10);
        assert_eq!(a.samples(Split::Test).len(), 6);
        for (x, y) in a.samples(Split::Train).iter().zip(b.samples(Split::Train)) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.image, y.image);
        }
    }

    #[test]
    fn class_batch_filters_and_orders() {
        let ds = load("synthetic:classes=car+fruit,train=4,test=2,seed=1,side=16").unwrap();
        let batch = ds.class_batch(Split::Train, "car").unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.sample_ids().iter().all(|id| id.starts_with("car-train-")));
        assert!(ds.class_batch(Split::Train, "boat").is_err());
    }

    #[test]
    fn dir_round_trip() {
        let ds = load("synthetic:classes=fruit,train=3,test=2,seed=4,side=16").unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dir(&ds, dir.path()).unwrap();
        let loaded = load_dir(dir.path()).unwrap();
        assert_eq!(loaded.samples(Split::Train).len(), 3);
        assert_eq!(loaded.samples(Split::Test).len(), 2);
        // PNG round-trip quantizes to u8
        let a = &ds.samples(Split::Train)[0].image;
        let b = &loaded.samples(Split::Train)[0].image;
        let max_err = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 0.5 / 255.0 + 1e-12);
    }
}
