//! The fixed bank of ten image transformations used throughout the pipeline.
//!
//! Every transform preserves image shape, is deterministic given
//! `(spec, batch, seed)`, and derives per-sample randomness from
//! `hash(seed, sample_id, transform_id)` so an image's output never depends
//! on which other images share its batch. Transform strengths come from the
//! committed severity table in `data/transform_params.toml`.

mod params;

use std::collections::BTreeMap;

use ndarray::{Array3, Array4, ArrayView3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops;
use crate::seeding;

pub use params::{table as param_table, PARAMS_TOML};

/// Identity pseudo-transform id used for untransformed embedding sets.
pub const IDENTITY_ID: &str = "identity";

/// Number of transforms in the bank.
pub const BANK_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Geometric,
    Photometric,
    Corruption,
}

/// A named, severity-parameterized image transformation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformSpec {
    pub id: String,
    pub name: String,
    pub kind: TransformKind,
    pub severity: u8,
    /// Severity-resolved parameters; a pure function of `(id, severity)`.
    pub params: BTreeMap<String, f64>,
}

/// Returns the spec for one transform at the given severity.
pub fn spec(id: &str, severity: u8) -> Result<TransformSpec> {
    let entry = params::table()
        .get(id)
        .ok_or_else(|| Error::config(format!("unknown transform id: {id}")))?;
    let kind = match entry.kind.as_str() {
        "geometric" => TransformKind::Geometric,
        "photometric" => TransformKind::Photometric,
        "corruption" => TransformKind::Corruption,
        other => return Err(Error::config(format!("unknown transform kind: {other}"))),
    };
    Ok(TransformSpec {
        id: id.to_string(),
        name: entry.name.clone(),
        kind,
        severity,
        params: params::resolve(id, severity)?,
    })
}

/// Lists all ten transforms at the given severity, ordered lexicographically
/// by id.
pub fn list_transforms(severity: u8) -> Result<Vec<TransformSpec>> {
    params::table().keys().map(|id| spec(id, severity)).collect()
}

/// The transform bank resolved at one severity level.
#[derive(Debug, Clone)]
pub struct Bank {
    severity: u8,
    specs: Vec<TransformSpec>,
}

impl Bank {
    pub fn at(severity: u8) -> Result<Self> {
        Ok(Bank {
            severity,
            specs: list_transforms(severity)?,
        })
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }

    /// Specs in stable (lexicographic id) order.
    pub fn specs(&self) -> &[TransformSpec] {
        &self.specs
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.id.as_str())
    }

    pub fn get(&self, id: &str) -> Result<&TransformSpec> {
        self.specs
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::config(format!("transform {id} not in bank")))
    }
}

/// A batch of same-shape images with stable per-image identifiers.
///
/// Pixel layout is `(N, H, W, C)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pixels: Array4<f64>,
    sample_ids: Vec<String>,
}

impl ImageBatch {
    pub fn new(pixels: Array4<f64>, sample_ids: Vec<String>) -> Result<Self> {
        let n = pixels.dim().0;
        if n == 0 {
            return Err(Error::validation("image batch is empty"));
        }
        if sample_ids.len() != n {
            return Err(Error::validation(format!(
                "batch has {n} images but {} sample ids",
                sample_ids.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &sample_ids {
            if !seen.insert(id) {
                return Err(Error::validation(format!("duplicate sample id: {id}")));
            }
        }
        validate_range(&pixels)?;
        Ok(ImageBatch { pixels, sample_ids })
    }

    pub fn from_images(images: Vec<Array3<f64>>, sample_ids: Vec<String>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::validation("image batch is empty"));
        }
        let (h, w, c) = images[0].dim();
        let mut pixels = Array4::zeros((images.len(), h, w, c));
        for (i, img) in images.iter().enumerate() {
            if img.dim() != (h, w, c) {
                return Err(Error::validation(format!(
                    "image {i} has shape {:?}, expected {:?}",
                    img.dim(),
                    (h, w, c)
                )));
            }
            pixels.index_axis_mut(ndarray::Axis(0), i).assign(img);
        }
        ImageBatch::new(pixels, sample_ids)
    }

    pub fn len(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(H, W, C)` of every image in the batch.
    pub fn image_dim(&self) -> (usize, usize, usize) {
        let (_, h, w, c) = self.pixels.dim();
        (h, w, c)
    }

    pub fn pixels(&self) -> &Array4<f64> {
        &self.pixels
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn image(&self, i: usize) -> ArrayView3<'_, f64> {
        self.pixels.index_axis(ndarray::Axis(0), i)
    }

    pub fn to_image(&self, i: usize) -> Array3<f64> {
        self.image(i).to_owned()
    }
}

fn validate_range(pixels: &Array4<f64>) -> Result<()> {
    for &v in pixels.iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::validation(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Applies one transform to every image in the batch.
///
/// Output shape equals input shape; `sample_ids` are preserved; identical
/// `(spec, batch, seed)` yields bit-identical output.
pub fn apply(spec: &TransformSpec, batch: &ImageBatch, seed: u64) -> Result<ImageBatch> {
    if !params::table().contains_key(&spec.id) {
        return Err(Error::config(format!("unknown transform id: {}", spec.id)));
    }
    validate_range(batch.pixels())?;
    let (h, w, _) = batch.image_dim();
    if (spec.id == "rot90" || spec.id == "rot270") && h != w {
        return Err(Error::validation(format!(
            "{} requires square images, got {h}x{w}",
            spec.id
        )));
    }

    let mut images = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let sample_id = &batch.sample_ids()[i];
        let sample_seed = seeding::derive(seed, &["transform", sample_id, &spec.id]);
        let img = batch.to_image(i);
        images.push(apply_one(spec, &img, sample_seed)?);
    }
    ImageBatch::from_images(images, batch.sample_ids().to_vec())
}

/// Applies one transform to a single image with an already-derived seed.
pub fn apply_one(spec: &TransformSpec, img: &Array3<f64>, sample_seed: u64) -> Result<Array3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let p = &spec.params;
    let out = match spec.id.as_str() {
        "flip" => flip_horizontal(img),
        "rot90" => rot90(img),
        "rot270" => rot90(&rot90(&rot90(img))),
        "gaussian-noise" => gaussian_noise(img, p["sigma"], &mut rng),
        "glass-blur" => glass_blur(
            img,
            p["sigma"],
            p["max_delta"] as i64,
            p["iterations"] as usize,
            &mut rng,
        ),
        "jpeg-compression" => jpeg_roundtrip(img, p["quality"] as u8)?,
        "random-crop" => random_crop(img, p["crop_fraction"], &mut rng),
        "snow" => snow(img, p["density"], p["streak_len"], p["alpha"], &mut rng),
        "color-jitter" => color_jitter(
            img,
            p["brightness"],
            p["contrast"],
            p["saturation"],
            p["hue"],
            &mut rng,
        ),
        "gaussian-blur" => clamp01(imageops::gaussian_blur(img, p["sigma"])),
        other => return Err(Error::config(format!("unknown transform id: {other}"))),
    };
    Ok(out)
}

fn clamp01(mut img: Array3<f64>) -> Array3<f64> {
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

fn flip_horizontal(img: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = img.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, ch)| img[[y, w - 1 - x, ch]])
}

/// 90-degree counter-clockwise rotation of a square image.
fn rot90(img: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = img.dim();
    debug_assert_eq!(h, w);
    Array3::from_shape_fn((w, h, c), |(y, x, ch)| img[[x, w - 1 - y, ch]])
}

fn gaussian_noise(img: &Array3<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma > 0");
    let mut out = img.clone();
    for v in out.iter_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
    out
}

fn glass_blur(
    img: &Array3<f64>,
    sigma: f64,
    max_delta: i64,
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> Array3<f64> {
    let mut out = imageops::gaussian_blur(img, sigma);
    let (h, w, c) = out.dim();
    for _ in 0..iterations {
        for y in 0..h {
            for x in 0..w {
                let dy = rng.random_range(-max_delta..=max_delta);
                let dx = rng.random_range(-max_delta..=max_delta);
                let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                for ch in 0..c {
                    let tmp = out[[y, x, ch]];
                    out[[y, x, ch]] = out[[sy, sx, ch]];
                    out[[sy, sx, ch]] = tmp;
                }
            }
        }
    }
    clamp01(out)
}

fn jpeg_roundtrip(img: &Array3<f64>, quality: u8) -> Result<Array3<f64>> {
    let (h, w, c) = img.dim();
    if c != 3 && c != 1 {
        return Err(Error::validation(format!(
            "jpeg-compression supports 1 or 3 channels, got {c}"
        )));
    }
    let mut bytes = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                bytes.push((img[[y, x, ch]] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let color = if c == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    let mut encoded = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut encoded, quality)
        .encode(&bytes, w as u32, h as u32, color)
        .map_err(|e| Error::numerical(format!("jpeg encode failed: {e}")))?;
    let decoded = image::load_from_memory_with_format(&encoded, image::ImageFormat::Jpeg)
        .map_err(|e| Error::numerical(format!("jpeg decode failed: {e}")))?;
    let mut out = Array3::zeros((h, w, c));
    if c == 3 {
        let rgb = decoded.to_rgb8();
        for y in 0..h {
            for x in 0..w {
                let px = rgb.get_pixel(x as u32, y as u32);
                for ch in 0..3 {
                    out[[y, x, ch]] = px[ch] as f64 / 255.0;
                }
            }
        }
    } else {
        let luma = decoded.to_luma8();
        for y in 0..h {
            for x in 0..w {
                out[[y, x, 0]] = luma.get_pixel(x as u32, y as u32)[0] as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

fn random_crop(img: &Array3<f64>, fraction: f64, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let (h, w, c) = img.dim();
    let crop_h = ((h as f64 * fraction).round() as usize).clamp(1, h);
    let crop_w = ((w as f64 * fraction).round() as usize).clamp(1, w);
    let oy = rng.random_range(0..=(h - crop_h));
    let ox = rng.random_range(0..=(w - crop_w));
    let mut crop = Array3::zeros((crop_h, crop_w, c));
    for y in 0..crop_h {
        for x in 0..crop_w {
            for ch in 0..c {
                crop[[y, x, ch]] = img[[oy + y, ox + x, ch]];
            }
        }
    }
    clamp01(imageops::resize_bilinear(&crop, h, w))
}

fn snow(
    img: &Array3<f64>,
    density: f64,
    streak_len: f64,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Array3<f64> {
    let (h, w, c) = img.dim();
    let n_flakes = ((density * (h * w) as f64 / 1024.0).round() as usize).max(1);
    let mut out = img.clone();
    for _ in 0..n_flakes {
        let fy = rng.random_range(0.0..h as f64);
        let fx = rng.random_range(0.0..w as f64);
        // streaks fall at roughly -60 degrees with a little per-flake spread
        let angle = -std::f64::consts::FRAC_PI_3 + rng.random_range(-0.18..0.18);
        let steps = (streak_len * 2.0).ceil() as usize;
        for s in 0..=steps {
            let t = s as f64 * 0.5;
            let y = fy + t * angle.sin();
            let x = fx + t * angle.cos();
            let yi = y.round() as i64;
            let xi = x.round() as i64;
            if yi < 0 || yi >= h as i64 || xi < 0 || xi >= w as i64 {
                continue;
            }
            let fade = alpha * (1.0 - t / (streak_len + 1.0)).max(0.0);
            for ch in 0..c {
                let v = out[[yi as usize, xi as usize, ch]];
                out[[yi as usize, xi as usize, ch]] = (v + fade * (1.0 - v)).clamp(0.0, 1.0);
            }
        }
    }
    out
}

fn color_jitter(
    img: &Array3<f64>,
    brightness: f64,
    contrast: f64,
    saturation: f64,
    hue: f64,
    rng: &mut ChaCha8Rng,
) -> Array3<f64> {
    let (h, w, c) = img.dim();
    let db = rng.random_range(-brightness..=brightness);
    let dc = rng.random_range(-contrast..=contrast);
    let ds = rng.random_range(-saturation..=saturation);
    let dh = rng.random_range(-hue..=hue);

    let mut out = img.clone();
    // brightness: multiplicative factor 1 + db
    out.mapv_inplace(|v| v * (1.0 + db));
    // contrast: pull values away from / toward the mean luminance
    let mean = imageops::luminance(&out).mean().unwrap_or(0.5);
    out.mapv_inplace(|v| mean + (v - mean) * (1.0 + dc));
    if c == 3 {
        for y in 0..h {
            for x in 0..w {
                let (r, g, b) = (out[[y, x, 0]], out[[y, x, 1]], out[[y, x, 2]]);
                let (hh, ss, vv) = imageops::rgb_to_hsv(
                    r.clamp(0.0, 1.0),
                    g.clamp(0.0, 1.0),
                    b.clamp(0.0, 1.0),
                );
                let (r2, g2, b2) = imageops::hsv_to_rgb(
                    (hh + dh).rem_euclid(1.0),
                    (ss * (1.0 + ds)).clamp(0.0, 1.0),
                    vv,
                );
                out[[y, x, 0]] = r2;
                out[[y, x, 1]] = g2;
                out[[y, x, 2]] = b2;
            }
        }
    }
    clamp01(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageops::mse;
    use ndarray::Array4;

    fn test_batch(n: usize, side: usize, seed: u64) -> ImageBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pixels = Array4::zeros((n, side, side, 3));
        for img in 0..n {
            // blocky structure plus smooth gradient so jpeg/blur have edges to chew on
            let cx = rng.random_range(0.2..0.8) * side as f64;
            let cy = rng.random_range(0.2..0.8) * side as f64;
            for y in 0..side {
                for x in 0..side {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    let inside = if d < side as f64 * 0.25 { 0.8 } else { 0.2 };
                    pixels[[img, y, x, 0]] = inside;
                    pixels[[img, y, x, 1]] = (y as f64 / side as f64) * 0.9;
                    pixels[[img, y, x, 2]] = (x as f64 / side as f64) * 0.9;
                }
            }
        }
        let ids = (0..n).map(|i| format!("img-{i:03}")).collect();
        ImageBatch::new(pixels, ids).unwrap()
    }

    #[test]
    fn list_is_stable_and_complete() {
        let a = list_transforms(1).unwrap();
        let b = list_transforms(1).unwrap();
        assert_eq!(a.len(), BANK_SIZE);
        let ids_a: Vec<_> = a.iter().map(|s| s.id.clone()).collect();
        let ids_b: Vec<_> = b.iter().map(|s| s.id.clone()).collect();
        assert_eq!(ids_a, ids_b);
        let mut sorted = ids_a.clone();
        sorted.sort();
        assert_eq!(ids_a, sorted, "bank order is lexicographic by id");
        for want in ["flip", "rot90", "rot270", "color-jitter"] {
            assert!(ids_a.iter().any(|id| id == want));
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let batch = test_batch(3, 16, 1);
        let flip = spec("flip", 1).unwrap();
        let once = apply(&flip, &batch, 9).unwrap();
        let twice = apply(&flip, &once, 9).unwrap();
        assert_eq!(twice.pixels(), batch.pixels());
    }

    #[test]
    fn rot90_four_times_is_identity_and_rot270_is_inverse() {
        let batch = test_batch(2, 16, 2);
        let r90 = spec("rot90", 1).unwrap();
        let r270 = spec("rot270", 1).unwrap();
        let mut cur = batch.clone();
        for _ in 0..4 {
            cur = apply(&r90, &cur, 0).unwrap();
        }
        assert_eq!(cur.pixels(), batch.pixels());
        let back = apply(&r270, &apply(&r90, &batch, 0).unwrap(), 0).unwrap();
        assert_eq!(back.pixels(), batch.pixels());
    }

    #[test]
    fn geometric_transforms_preserve_pixel_multiset() {
        let batch = test_batch(1, 12, 3);
        for id in ["flip", "rot90", "rot270"] {
            let out = apply(&spec(id, 1).unwrap(), &batch, 5).unwrap();
            let mut a: Vec<u64> = batch.pixels().iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u64> = out.pixels().iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b, "{id} must be a pixel permutation");
        }
    }

    #[test]
    fn apply_is_deterministic_and_preserves_shape_and_ids() {
        let batch = test_batch(4, 16, 4);
        for ts in list_transforms(3).unwrap() {
            let a = apply(&ts, &batch, 77).unwrap();
            let b = apply(&ts, &batch, 77).unwrap();
            assert_eq!(a.pixels(), b.pixels(), "{} must be deterministic", ts.id);
            assert_eq!(a.image_dim(), batch.image_dim(), "{} must preserve shape", ts.id);
            assert_eq!(a.sample_ids(), batch.sample_ids());
        }
    }

    #[test]
    fn per_sample_randomness_independent_of_batch_composition() {
        let big = test_batch(4, 16, 6);
        let small = ImageBatch::from_images(
            vec![big.to_image(2)],
            vec![big.sample_ids()[2].clone()],
        )
        .unwrap();
        let noise = spec("gaussian-noise", 2).unwrap();
        let out_big = apply(&noise, &big, 123).unwrap();
        let out_small = apply(&noise, &small, 123).unwrap();
        assert_eq!(out_big.to_image(2), out_small.to_image(0));
    }

    #[test]
    fn jpeg_severity_increases_distortion() {
        let batch = test_batch(10, 16, 7);
        let q1 = apply(&spec("jpeg-compression", 1).unwrap(), &batch, 1).unwrap();
        let q6 = apply(&spec("jpeg-compression", 6).unwrap(), &batch, 1).unwrap();
        let mse1: f64 = (0..batch.len())
            .map(|i| mse(&batch.to_image(i), &q1.to_image(i)))
            .sum();
        let mse6: f64 = (0..batch.len())
            .map(|i| mse(&batch.to_image(i), &q6.to_image(i)))
            .sum();
        assert!(
            mse6 > mse1,
            "severity 6 must distort more than severity 1 ({mse6} vs {mse1})"
        );
    }

    #[test]
    fn corruption_mse_nondecreasing_in_severity() {
        let batch = test_batch(6, 16, 8);
        for id in ["gaussian-noise", "glass-blur", "jpeg-compression", "snow", "gaussian-blur"] {
            let mut prev = 0.0;
            for sev in 1..=6 {
                let out = apply(&spec(id, sev).unwrap(), &batch, 11).unwrap();
                let m: f64 = (0..batch.len())
                    .map(|i| mse(&batch.to_image(i), &out.to_image(i)))
                    .sum::<f64>()
                    / batch.len() as f64;
                assert!(
                    m >= prev * 0.98,
                    "{id}: severity {sev} mse {m} dropped below severity {} mse {prev}",
                    sev - 1
                );
                prev = prev.max(m);
            }
        }
    }

    #[test]
    fn out_of_range_pixels_rejected() {
        let pixels = Array4::from_elem((1, 4, 4, 3), 1.5);
        assert!(ImageBatch::new(pixels, vec!["a".into()]).is_err());
    }

    #[test]
    fn unknown_transform_rejected() {
        let batch = test_batch(1, 8, 9);
        let mut bogus = spec("flip", 1).unwrap();
        bogus.id = "warp".into();
        match apply(&bogus, &batch, 0) {
            Err(Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn rotation_requires_square_images() {
        let pixels = Array4::zeros((1, 4, 6, 3));
        let batch = ImageBatch::new(pixels, vec!["a".into()]).unwrap();
        assert!(apply(&spec("rot90", 1).unwrap(), &batch, 0).is_err());
        assert!(apply(&spec("flip", 1).unwrap(), &batch, 0).is_ok());
    }

    #[test]
    fn duplicate_sample_ids_rejected() {
        let pixels = Array4::zeros((2, 4, 4, 3));
        assert!(ImageBatch::new(pixels, vec!["a".into(), "a".into()]).is_err());
    }
}
