//! Pluggable image-encoder backends.
//!
//! A backend maps preprocessed images to fixed-dimension embedding vectors,
//! deterministically. The two built-in backends are handcrafted descriptors
//! that run hermetically with no weight files; external pretrained encoders
//! plug in behind the same trait (and the same cache) by implementing
//! [`Backend`] and registering an id.
//!
//! * `grad-hist-<res>` — per-cell gradient-orientation histograms plus cell
//!   color statistics. Orientation content makes it sensitive to rotations of
//!   structured scenes; color content makes it sensitive to hue shifts on
//!   color-defined classes.
//! * `pixel-<res>` — downsampled raw pixels. A deliberately crude reference
//!   point for backend-interchangeability tests.

use ndarray::{Array2, Array4};

use crate::error::{Error, Result};
use crate::imageops;

/// Static description of a backend: identity, input contract, output width.
#[derive(Debug, Clone)]
pub struct BackendSpec {
    pub backend_id: String,
    pub input_resolution: usize,
    pub embed_dim: usize,
    /// Per-channel normalization applied after resizing.
    pub channel_mean: [f64; 3],
    pub channel_std: [f64; 3],
}

pub trait Backend: Send + Sync {
    fn spec(&self) -> &BackendSpec;

    /// Embeds images already resized to `input_resolution` and
    /// channel-normalized. Rows correspond to batch order.
    fn embed_preprocessed(&self, pixels: &Array4<f64>) -> Result<Array2<f64>>;
}

/// Instantiates a backend by id. Unknown ids are initialization errors, the
/// same failure mode as a missing weight file for an external encoder.
pub fn create(backend_id: &str) -> Result<Box<dyn Backend>> {
    if let Some(res) = backend_id.strip_prefix("grad-hist-") {
        let res: usize = res
            .parse()
            .map_err(|_| Error::init(format!("bad resolution in backend id {backend_id}")))?;
        if res < 8 || res % 4 != 0 {
            return Err(Error::init(format!(
                "grad-hist resolution must be a multiple of 4 and >= 8, got {res}"
            )));
        }
        return Ok(Box::new(GradHistBackend::new(res)));
    }
    if let Some(res) = backend_id.strip_prefix("pixel-") {
        let res: usize = res
            .parse()
            .map_err(|_| Error::init(format!("bad resolution in backend id {backend_id}")))?;
        if res == 0 {
            return Err(Error::init("pixel resolution must be positive"));
        }
        return Ok(Box::new(PixelBackend::new(res)));
    }
    Err(Error::init(format!(
        "unknown encoder backend {backend_id}; available: grad-hist-<res>, pixel-<res>"
    )))
}

const CELLS: usize = 4;
const BINS: usize = 8;

pub struct GradHistBackend {
    spec: BackendSpec,
}

impl GradHistBackend {
    pub fn new(res: usize) -> Self {
        GradHistBackend {
            spec: BackendSpec {
                backend_id: format!("grad-hist-{res}"),
                input_resolution: res,
                embed_dim: CELLS * CELLS * (BINS + 3),
                channel_mean: [0.0; 3],
                channel_std: [1.0; 3],
            },
        }
    }
}

impl Backend for GradHistBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn embed_preprocessed(&self, pixels: &Array4<f64>) -> Result<Array2<f64>> {
        let (n, h, w, c) = pixels.dim();
        let res = self.spec.input_resolution;
        if h != res || w != res {
            return Err(Error::validation(format!(
                "expected {res}x{res} input, got {h}x{w}"
            )));
        }
        let cell = res / CELLS;
        let mut out = Array2::zeros((n, self.spec.embed_dim));
        for i in 0..n {
            let img = pixels.index_axis(ndarray::Axis(0), i).to_owned();
            let gray = imageops::luminance(&img);
            let (gx, gy) = imageops::sobel(&gray);

            let mut hist = vec![0.0; CELLS * CELLS * BINS];
            let mut total_mag = 0.0;
            for y in 0..res {
                for x in 0..res {
                    let mag = (gx[[y, x]] * gx[[y, x]] + gy[[y, x]] * gy[[y, x]]).sqrt();
                    if mag <= 1e-12 {
                        continue;
                    }
                    // unsigned orientation in [0, pi)
                    let theta = gy[[y, x]].atan2(gx[[y, x]]).rem_euclid(std::f64::consts::PI);
                    let bin = ((theta / std::f64::consts::PI * BINS as f64) as usize).min(BINS - 1);
                    let cy = y / cell;
                    let cx = x / cell;
                    hist[(cy * CELLS + cx) * BINS + bin] += mag;
                    total_mag += mag;
                }
            }
            let norm = total_mag + 1e-6;
            for (j, v) in hist.iter().enumerate() {
                out[[i, j]] = v / norm;
            }
            // cell color means, weighted so hue shifts register alongside
            // orientation changes
            let base = CELLS * CELLS * BINS;
            for cy in 0..CELLS {
                for cx in 0..CELLS {
                    let mut mean = [0.0; 3];
                    for y in cy * cell..(cy + 1) * cell {
                        for x in cx * cell..(cx + 1) * cell {
                            for ch in 0..3.min(c) {
                                mean[ch] += img[[y, x, ch]];
                            }
                        }
                    }
                    let count = (cell * cell) as f64;
                    for ch in 0..3 {
                        out[[i, base + (cy * CELLS + cx) * 3 + ch]] = 2.0 * mean[ch] / count;
                    }
                }
            }
        }
        Ok(out)
    }
}

pub struct PixelBackend {
    spec: BackendSpec,
}

impl PixelBackend {
    pub fn new(res: usize) -> Self {
        PixelBackend {
            spec: BackendSpec {
                backend_id: format!("pixel-{res}"),
                input_resolution: res,
                embed_dim: res * res * 3,
                channel_mean: [0.5; 3],
                channel_std: [0.5; 3],
            },
        }
    }
}

impl Backend for PixelBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn embed_preprocessed(&self, pixels: &Array4<f64>) -> Result<Array2<f64>> {
        let (n, h, w, c) = pixels.dim();
        let res = self.spec.input_resolution;
        if h != res || w != res {
            return Err(Error::validation(format!(
                "expected {res}x{res} input, got {h}x{w}"
            )));
        }
        let mut out = Array2::zeros((n, self.spec.embed_dim));
        for i in 0..n {
            for y in 0..res {
                for x in 0..res {
                    for ch in 0..3 {
                        let v = if ch < c { pixels[[i, y, x, ch]] } else { 0.0 };
                        out[[i, (y * res + x) * 3 + ch]] = v;
                    }
                }
            }
        }
        Ok(out)
    }
}
