//! Pixel-level corruptions. Every operation is a pure function of its inputs:
//! arithmetic runs in `f64` in a fixed order and the final value is clamped to
//! `[0, 255]` and rounded half-to-even.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Opacity of a single rain streak pass.
pub const RAIN_ALPHA: f64 = 0.5;

pub fn quantize(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round_ties_even() as u8
}

fn non_negative(field: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be a finite non-negative number, got {v}")))
    }
}

/// Adds independent `N(0, sigma^2)` noise to every channel of every pixel,
/// drawing samples in row-major, channel-minor order.
pub fn gaussian_noise(img: &RgbImage, sigma: f64, seed: u64) -> Result<RgbImage> {
    non_negative("sigma", sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = quantize(f64::from(*v) + sigma * z);
    }
    Ok(out)
}

/// Homogeneous atmospheric scattering `I t + A (1 - t)` with transmission
/// `t = exp(-attenuation * d)`, where depth `d` grows linearly from 0 at the
/// top row to 1 at the bottom row.
pub fn fog(img: &RgbImage, attenuation: f64, airlight: f64) -> Result<RgbImage> {
    non_negative("attenuation", attenuation)?;
    if !(0.0..=255.0).contains(&airlight) {
        return Err(Error::config("airlight", format!("must lie in [0, 255], got {airlight}")));
    }
    let h = img.height();
    let mut out = img.clone();
    for (_, y, px) in out.enumerate_pixels_mut() {
        let t = (-attenuation * fog_depth(y, h)).exp();
        for c in px.0.iter_mut() {
            *c = quantize(f64::from(*c) * t + airlight * (1.0 - t));
        }
    }
    Ok(out)
}

pub fn fog_depth(y: u32, height: u32) -> f64 {
    if height <= 1 {
        1.0
    } else {
        f64::from(y) / f64::from(height - 1)
    }
}

/// Pixel hit counts of a rain streak set, row-major, `width * height` entries.
pub fn rain_hits(width: u32, height: u32, density: f64, angle_deg: f64, seed: u64) -> Result<Vec<u32>> {
    non_negative("density", density)?;
    if !angle_deg.is_finite() {
        return Err(Error::config("angle", "must be finite"));
    }
    let (w, h) = (f64::from(width), f64::from(height));
    let count = (density * w * h / 1000.0).round_ties_even() as u64;
    let lo = (0.02 * h).max(1.0);
    let hi = (0.08 * h).max(lo + 1.0);
    let (dx, dy) = {
        let th = angle_deg.to_radians();
        (th.sin(), th.cos())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0u32; width as usize * height as usize];
    let mut touched: Vec<usize> = Vec::new();
    for _ in 0..count {
        let x0 = rng.gen::<f64>() * w;
        let y0 = rng.gen::<f64>() * h;
        let len = lo + rng.gen::<f64>() * (hi - lo);
        touched.clear();
        let steps = (2.0 * len).ceil() as u64;
        for k in 0..=steps {
            let s = (k as f64 * 0.5).min(len);
            let (x, y) = ((x0 + s * dx).floor(), (y0 + s * dy).floor());
            if x < 0.0 || y < 0.0 || x >= w || y >= h {
                continue;
            }
            touched.push(y as usize * width as usize + x as usize);
        }
        touched.sort_unstable();
        touched.dedup();
        for &i in &touched {
            hits[i] += 1;
        }
    }
    Ok(hits)
}

/// Bright translucent streaks. A pixel covered by `k` streaks becomes
/// `p + (255 - p) (1 - (1 - alpha)^k)`.
pub fn rain(img: &RgbImage, density: f64, angle_deg: f64, seed: u64) -> Result<RgbImage> {
    let hits = rain_hits(img.width(), img.height(), density, angle_deg, seed)?;
    let mut out = img.clone();
    for (px, &k) in out.pixels_mut().zip(&hits) {
        if k == 0 {
            continue;
        }
        let cover = 1.0 - (1.0 - RAIN_ALPHA).powi(k as i32);
        for c in px.0.iter_mut() {
            let p = f64::from(*c);
            *c = quantize(p + (255.0 - p) * cover);
        }
    }
    Ok(out)
}

/// Normalized Gaussian taps with `sigma = radius / 2`, truncated at three sigma.
pub fn blur_kernel(radius: f64) -> Result<Vec<f64>> {
    non_negative("radius", radius)?;
    if radius == 0.0 {
        return Ok(vec![1.0]);
    }
    let sigma = radius / 2.0;
    let half = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Separable Gaussian blur of one channel plane (row-major), clamp-to-edge,
/// horizontal pass first. Returns unrounded values.
pub fn blur_plane(plane: &[f64], width: usize, height: usize, radius: f64) -> Result<Vec<f64>> {
    if plane.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "plane has {} values, expected {width}x{height}",
            plane.len()
        )));
    }
    let kernel = blur_kernel(radius)?;
    let half = (kernel.len() / 2) as i64;
    let clampi = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let xs = clampi(x as i64 + j as i64 - half, width);
                acc += k * plane[y * width + xs];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let ys = clampi(y as i64 + j as i64 - half, height);
                acc += k * tmp[ys * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    Ok(out)
}

pub fn blur(img: &RgbImage, radius: f64) -> Result<RgbImage> {
    non_negative("radius", radius)?;
    if radius == 0.0 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = img.clone();
    for c in 0..3 {
        let plane: Vec<f64> = img.pixels().map(|p| f64::from(p.0[c])).collect();
        let blurred = blur_plane(&plane, w, h, radius)?;
        for (px, v) in out.pixels_mut().zip(blurred) {
            px.0[c] = quantize(v);
        }
    }
    Ok(out)
}
