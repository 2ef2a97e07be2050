//! Low-level image math shared by the transform bank, encoder backends, and
//! the synthetic dataset renderer. Images are `Array3<f64>` in `(H, W, C)`
//! layout with values in `[0, 1]`.

use ndarray::{Array2, Array3};

/// Bilinear resize to `(new_h, new_w)`, preserving channel count.
///
/// Uses half-pixel centers (`src = (dst + 0.5) * scale - 0.5`), the common
/// convention in image libraries.
pub fn resize_bilinear(img: &Array3<f64>, new_h: usize, new_w: usize) -> Array3<f64> {
    let (h, w, c) = img.dim();
    if h == new_h && w == new_w {
        return img.clone();
    }
    let mut out = Array3::zeros((new_h, new_w, c));
    let scale_y = h as f64 / new_h as f64;
    let scale_x = w as f64 / new_w as f64;
    for y in 0..new_h {
        let sy = ((y as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..new_w {
            let sx = ((x as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let v00 = img[[y0, x0, ch]];
                let v01 = img[[y0, x1, ch]];
                let v10 = img[[y1, x0, ch]];
                let v11 = img[[y1, x1, ch]];
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                out[[y, x, ch]] = top + (bot - top) * fy;
            }
        }
    }
    out
}

/// Separable Gaussian blur with clamp-to-edge padding. `sigma <= 0` is a no-op.
pub fn gaussian_blur(img: &Array3<f64>, sigma: f64) -> Array3<f64> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let denom = 2.0 * sigma * sigma;
    for i in -radius..=radius {
        kernel.push((-(i as f64) * (i as f64) / denom).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let (h, w, c) = img.dim();
    let mut tmp = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, &k) in kernel.iter().enumerate() {
                    let sx = (x as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as usize;
                    acc += k * img[[y, sx, ch]];
                }
                tmp[[y, x, ch]] = acc;
            }
        }
    }
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, &k) in kernel.iter().enumerate() {
                    let sy = (y as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as usize;
                    acc += k * tmp[[sy, x, ch]];
                }
                out[[y, x, ch]] = acc;
            }
        }
    }
    out
}

/// Per-pixel luminance (Rec. 601 weights for 3 channels, mean otherwise).
pub fn luminance(img: &Array3<f64>) -> Array2<f64> {
    let (h, w, c) = img.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] = if c == 3 {
                0.299 * img[[y, x, 0]] + 0.587 * img[[y, x, 1]] + 0.114 * img[[y, x, 2]]
            } else {
                (0..c).map(|ch| img[[y, x, ch]]).sum::<f64>() / c as f64
            };
        }
    }
    out
}

/// Sobel gradients of a single-channel image, clamp-to-edge.
/// Returns `(gx, gy)` scaled so magnitudes stay in a comparable range.
pub fn sobel(gray: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = gray.dim();
    let at = |y: i64, x: i64| -> f64 {
        gray[[y.clamp(0, h as i64 - 1) as usize, x.clamp(0, w as i64 - 1) as usize]]
    };
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let sx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let sy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            gx[[y as usize, x as usize]] = sx / 8.0;
            gy[[y as usize, x as usize]] = sy / 8.0;
        }
    }
    (gx, gy)
}

/// RGB -> HSV, all components in `[0, 1]`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

/// HSV -> RGB, all components in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i64 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Mean squared error between two images of identical shape.
pub fn mse(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let n = a.len() as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}
