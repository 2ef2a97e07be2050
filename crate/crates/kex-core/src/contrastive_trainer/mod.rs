//! Contrastive training of the compact residual feature extractor using the
//! transforms selected by a [`PairPolicy`].
//!
//! Each anchor image is paired with K positive-transform and K
//! negative-transform images of itself; representations are L2-normalized and
//! fed to the multi-positive objective in [`infonce`]. Transform parameters
//! are redrawn per epoch via `(seed, epoch, sample_id, transform_id)` while
//! transform identity stays fixed by the policy.

pub mod checkpoint;
pub mod infonce;
pub mod nn;

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::transform_bank::{self, Bank, ImageBatch};
use crate::transport_ranker::PairPolicy;

pub use nn::ArchDescriptor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub batch_size: usize,
    pub k: usize,
    pub seed: u64,
    /// Width of the pooled feature vector; the network scales with it, so
    /// small values keep CPU smoke runs cheap.
    pub feature_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            temperature: 0.2,
            batch_size: 16,
            k: 2,
            seed: 0,
            feature_dim: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::validation("epochs must be >= 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::validation("temperature must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch_size must be >= 1"));
        }
        if self.k < 1 || self.k > 5 {
            return Err(Error::validation("k must be in [1, 5]"));
        }
        ArchDescriptor::for_feature_dim(3, self.feature_dim).map(|_| ())
    }
}

/// One training batch: anchors plus K positive and K negative images of each
/// anchor, with the seed used for every generated cell.
pub struct ContrastiveBatch {
    pub anchor_ids: Vec<String>,
    /// `(H, W, C)` images
    pub anchors: Vec<Array3<f64>>,
    /// `[anchor][k]`
    pub positives: Vec<Vec<Array3<f64>>>,
    pub negatives: Vec<Vec<Array3<f64>>>,
    pub positive_seeds: Vec<Vec<u64>>,
    pub negative_seeds: Vec<Vec<u64>>,
}

/// Builds the contrastive batch for a set of anchors under a policy.
///
/// Positive/negative cells are `policy` transforms applied to the anchor
/// itself, each with seed `hash(cfg.seed, epoch, sample_id, transform_id)`.
pub fn build_batch(
    samples: &ImageBatch,
    policy: &PairPolicy,
    bank: &Bank,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<ContrastiveBatch> {
    cfg.validate()?;
    let k = policy.positives.len();
    if k == 0 || policy.negatives.len() != k {
        return Err(Error::config(format!(
            "policy must list K positives and K negatives, got {} and {}",
            k,
            policy.negatives.len()
        )));
    }
    if 2 * k > transform_bank::BANK_SIZE {
        return Err(Error::config("2K exceeds transform bank size"));
    }
    for id in policy.positives.iter().chain(policy.negatives.iter()) {
        bank.get(id)
            .map_err(|_| Error::config(format!("policy transform {id} not in bank")))?;
    }

    let n = samples.len();
    let mut anchors = Vec::with_capacity(n);
    let mut positives = Vec::with_capacity(n);
    let mut negatives = Vec::with_capacity(n);
    let mut positive_seeds = Vec::with_capacity(n);
    let mut negative_seeds = Vec::with_capacity(n);

    for i in 0..n {
        let sample_id = &samples.sample_ids()[i];
        let anchor = samples.to_image(i);
        let mut pos_row = Vec::with_capacity(k);
        let mut neg_row = Vec::with_capacity(k);
        let mut pos_seed_row = Vec::with_capacity(k);
        let mut neg_seed_row = Vec::with_capacity(k);
        for (ids, out, seeds) in [
            (&policy.positives, &mut pos_row, &mut pos_seed_row),
            (&policy.negatives, &mut neg_row, &mut neg_seed_row),
        ] {
            for id in ids.iter() {
                let spec = bank.get(id)?;
                let cell_seed =
                    seeding::derive_n(cfg.seed, &["aug", sample_id, id], epoch as u64);
                out.push(transform_bank::apply_one(spec, &anchor, cell_seed)?);
                seeds.push(cell_seed);
            }
        }
        anchors.push(anchor);
        positives.push(pos_row);
        negatives.push(neg_row);
        positive_seeds.push(pos_seed_row);
        negative_seeds.push(neg_seed_row);
    }

    Ok(ContrastiveBatch {
        anchor_ids: samples.sample_ids().to_vec(),
        anchors,
        positives,
        negatives,
        positive_seeds,
        negative_seeds,
    })
}

/// A trained feature extractor with its config and loss history.
pub struct FeatureModel {
    pub net: nn::Net,
    pub config: TrainConfig,
    /// Mean contrastive loss per epoch.
    pub history: Vec<f64>,
}

impl FeatureModel {
    pub fn arch(&self) -> &ArchDescriptor {
        &self.net.arch
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<FeatureModel> {
        checkpoint::load(path)
    }

    /// Deterministic inference; row i corresponds to `batch.sample_ids()[i]`.
    pub fn extract_features(&self, batch: &ImageBatch) -> Result<Array2<f64>> {
        let (_, _, c) = batch.image_dim();
        if c != self.net.arch.input_channels {
            return Err(Error::validation(format!(
                "model expects {} channels, batch has {c}",
                self.net.arch.input_channels
            )));
        }
        let rows: Vec<Array1<f64>> = (0..batch.len())
            .into_par_iter()
            .map(|i| self.net.forward_features(&to_chw(&batch.to_image(i))))
            .collect();
        let mut out = Array2::zeros((batch.len(), self.net.feature_dim()));
        for (i, row) in rows.iter().enumerate() {
            out.row_mut(i).assign(row);
        }
        Ok(out)
    }
}

/// Builds an untrained model (seeded init) with the config's architecture.
pub fn init_model(cfg: &TrainConfig, input_channels: usize) -> Result<FeatureModel> {
    cfg.validate()?;
    let arch = ArchDescriptor::for_feature_dim(input_channels, cfg.feature_dim)?;
    Ok(FeatureModel {
        net: nn::Net::new(arch, seeding::derive(cfg.seed, &["model-init"])),
        config: cfg.clone(),
        history: Vec::new(),
    })
}

/// Trains the feature extractor on one class's training images.
pub fn train(
    class_images: &ImageBatch,
    class_id: &str,
    policy: &PairPolicy,
    bank: &Bank,
    cfg: &TrainConfig,
) -> Result<FeatureModel> {
    cfg.validate()?;
    if class_images.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if policy.class_id != class_id {
        return Err(Error::validation(format!(
            "policy is for class {}, training class {class_id}",
            policy.class_id
        )));
    }
    let (_, _, channels) = class_images.image_dim();
    let mut model = init_model(cfg, channels)?;
    let mut sgd = nn::Sgd::new(&model.net, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    let n = class_images.len();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = seeding::rng(cfg.seed, &["train-shuffle", &epoch.to_string()]);
        order.shuffle(&mut rng);

        let mut epoch_loss_sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let sub = ImageBatch::from_images(
                chunk.iter().map(|&i| class_images.to_image(i)).collect(),
                chunk
                    .iter()
                    .map(|&i| class_images.sample_ids()[i].clone())
                    .collect(),
            )?;
            let batch = build_batch(&sub, policy, bank, cfg, epoch)?;
            let (loss, per_anchor_sum, grads) = train_step(&model.net, &batch, cfg)?;
            if !loss.is_finite() {
                return Err(Error::numerical(format!(
                    "training diverged at epoch {epoch}, step {step}: loss = {loss}"
                )));
            }
            epoch_loss_sum += per_anchor_sum;
            sgd.step(&mut model.net, &grads);
        }
        let epoch_loss = epoch_loss_sum / n as f64;
        log::debug!("class {class_id} epoch {epoch}: loss {epoch_loss:.5}");
        model.history.push(epoch_loss);
    }
    Ok(model)
}

/// Forward + loss + backward for one batch. Returns the batch-mean loss, the
/// sum of per-anchor losses, and the parameter gradients.
fn train_step(
    net: &nn::Net,
    batch: &ContrastiveBatch,
    cfg: &TrainConfig,
) -> Result<(f64, f64, nn::NetGrads)> {
    let b = batch.anchors.len();
    let k = batch.positives[0].len();
    let d = net.feature_dim();

    // flat rep list: anchors, then positives row-major, then negatives
    let mut images: Vec<&Array3<f64>> = Vec::with_capacity(b * (1 + 2 * k));
    images.extend(batch.anchors.iter());
    for row in &batch.positives {
        images.extend(row.iter());
    }
    for row in &batch.negatives {
        images.extend(row.iter());
    }

    let passes: Vec<(Array1<f64>, nn::Tape)> = images
        .par_iter()
        .map(|img| net.forward(&to_chw(img)))
        .collect();

    // center then normalize: pooled ReLU features share a large common
    // offset, and cosine on the centered residual is what actually carries
    // the contrastive signal
    let mut units: Vec<Array1<f64>> = Vec::with_capacity(passes.len());
    let mut norms: Vec<f64> = Vec::with_capacity(passes.len());
    for (raw, _) in &passes {
        let mean = raw.sum() / raw.len() as f64;
        let centered = raw.mapv(|v| v - mean);
        let norm = centered.dot(&centered).sqrt();
        if norm > 1e-12 {
            units.push(&centered / norm);
            norms.push(norm);
        } else {
            units.push(centered);
            norms.push(1.0);
        }
    }

    let mut anchors = Array2::zeros((b, d));
    let mut positives = Array3::zeros((b, k, d));
    let mut negatives = Array3::zeros((b, k, d));
    for i in 0..b {
        anchors.row_mut(i).assign(&units[i]);
        for j in 0..k {
            positives
                .index_axis_mut(ndarray::Axis(0), i)
                .row_mut(j)
                .assign(&units[b + i * k + j]);
            negatives
                .index_axis_mut(ndarray::Axis(0), i)
                .row_mut(j)
                .assign(&units[b + b * k + i * k + j]);
        }
    }

    let out = infonce::loss_and_grads(&anchors, &positives, &negatives, cfg.temperature)?;

    // gradient w.r.t. raw features through u = c / |c|, c = f - mean(f)
    let mut d_raw: Vec<Array1<f64>> = Vec::with_capacity(passes.len());
    let unit_grad = |idx: usize, g: &Array1<f64>| -> Array1<f64> {
        let u = &units[idx];
        let proj = u.dot(g);
        let d_centered = (g - &(u * proj)) / norms[idx];
        let mean = d_centered.sum() / d_centered.len() as f64;
        d_centered.mapv(|v| v - mean)
    };
    for i in 0..b {
        d_raw.push(unit_grad(i, &out.d_anchors.row(i).to_owned()));
    }
    for i in 0..b {
        for j in 0..k {
            let g = out
                .d_positives
                .index_axis(ndarray::Axis(0), i)
                .row(j)
                .to_owned();
            d_raw.push(unit_grad(b + i * k + j, &g));
        }
    }
    for i in 0..b {
        for j in 0..k {
            let g = out
                .d_negatives
                .index_axis(ndarray::Axis(0), i)
                .row(j)
                .to_owned();
            d_raw.push(unit_grad(b + b * k + i * k + j, &g));
        }
    }

    // fixed chunking keeps the f64 reduction order independent of scheduling
    let total = passes.len();
    let n_chunks = 8usize.min(total.max(1));
    let chunk_size = total.div_ceil(n_chunks);
    let indices: Vec<usize> = (0..total).collect();
    let partials: Vec<nn::NetGrads> = indices
        .par_chunks(chunk_size)
        .map(|chunk| {
            let mut acc = nn::NetGrads::zeros_like(net);
            for &idx in chunk {
                net.backward(&passes[idx].1, &d_raw[idx], &mut acc);
            }
            acc
        })
        .collect();
    let mut grads = nn::NetGrads::zeros_like(net);
    for partial in &partials {
        grads.add(partial);
    }

    let per_anchor_sum: f64 = out.per_anchor.iter().sum();
    Ok((out.loss, per_anchor_sum, grads))
}

/// `(H, W, C)` image to the `(C, H, W)` layout the network uses.
fn to_chw(img: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = img.dim();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| img[[y, x, ch]])
}
