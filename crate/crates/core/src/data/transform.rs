use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;

/// Perturbation applied by [`photometric_jitter`]. Brightness, contrast and
/// saturation are multiplicative; `hue_shift` is an additive offset as a
/// fraction of the hue circle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_shift: f64,
}

impl JitterFactors {
    pub const IDENTITY: JitterFactors = JitterFactors {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue_shift: 0.0,
    };

    /// Draws factors uniformly from `[1 - s, 1 + s]` (hue from `[-s/2, s/2]`).
    pub fn sample<R: Rng + ?Sized>(strength: f64, rng: &mut R) -> Self {
        let s = strength.clamp(0.0, 1.0);
        if s == 0.0 {
            return Self::IDENTITY;
        }
        JitterFactors {
            brightness: rng.random_range(1.0 - s..=1.0 + s),
            contrast: rng.random_range(1.0 - s..=1.0 + s),
            saturation: rng.random_range(1.0 - s..=1.0 + s),
            hue_shift: rng.random_range(-s / 2.0..=s / 2.0),
        }
    }
}

/// Samples jitter factors and applies them, returning both so the
/// perturbation can be logged and replayed.
pub fn photometric_jitter<R: Rng + ?Sized>(
    image: &Image,
    strength: f64,
    rng: &mut R,
) -> (Image, JitterFactors) {
    let f = JitterFactors::sample(strength, rng);
    (apply_jitter(image, &f), f)
}

/// Applies brightness, contrast, saturation, then hue, clamping to `[0, 1]`
/// after each stage. Identity factors leave the image bit-for-bit unchanged.
pub fn apply_jitter(image: &Image, f: &JitterFactors) -> Image {
    let mut out = image.clone();
    let ch = image.channels();
    let px = out.pixels_mut();
    if f.brightness != 1.0 {
        px.iter_mut()
            .for_each(|v| *v = (*v * f.brightness).clamp(0.0, 1.0));
    }
    if f.contrast != 1.0 {
        let mean = gray_mean(px, ch);
        px.iter_mut()
            .for_each(|v| *v = ((*v - mean) * f.contrast + mean).clamp(0.0, 1.0));
    }
    if ch == 3 {
        if f.saturation != 1.0 {
            for p in px.chunks_mut(3) {
                let g = luma(p);
                p.iter_mut()
                    .for_each(|v| *v = (g + (*v - g) * f.saturation).clamp(0.0, 1.0));
            }
        }
        if f.hue_shift != 0.0 {
            for p in px.chunks_mut(3) {
                let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
                let (r, g, b) = hsv_to_rgb((h + f.hue_shift).rem_euclid(1.0), s, v);
                p[0] = r.clamp(0.0, 1.0);
                p[1] = g.clamp(0.0, 1.0);
                p[2] = b.clamp(0.0, 1.0);
            }
        }
    }
    out
}

fn luma(p: &[f64]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn gray_mean(px: &[f64], ch: usize) -> f64 {
    let n = px.len() / ch;
    let total: f64 = if ch == 3 {
        px.chunks(3).map(luma).sum()
    } else {
        px.chunks(ch).map(|p| p.iter().sum::<f64>() / ch as f64).sum()
    };
    total / n as f64
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 % 6 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Mirrors the image. Horizontal moves `(r, c)` to `(r, W-1-c)`; vertical
/// moves it to `(H-1-r, c)`.
pub fn geometric_flip(image: &Image, horizontal: bool, vertical: bool) -> Image {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let mut pixels = Vec::with_capacity(image.pixels().len());
    for r in 0..h {
        let sr = if vertical { h - 1 - r } else { r };
        for c in 0..w {
            let sc = if horizontal { w - 1 - c } else { c };
            pixels.extend_from_slice(image.pixel(sr, sc));
        }
    }
    Image::new(h, w, ch, pixels).expect("flip preserves shape")
}
