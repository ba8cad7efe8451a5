use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{rgb_to_planes, Plane, RgbImage};

const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn same_size(a: &Plane, b: &Plane, op: &str) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::contract(format!(
            "{op}: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(a: &Plane, b: &Plane) -> Result<f64> {
    same_size(a, b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.data().len() as f64)
}

/// `10 log10(255^2 / mse)`; identical inputs give `f64::INFINITY`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn psnr(a: &Plane, b: &Plane) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

/// PSNR over all three channels jointly.
pub fn psnr_rgb(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let (pa, pb) = (rgb_to_planes(a), rgb_to_planes(b));
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        total += mse(x, y)?;
    }
    Ok(psnr_from_mse(total / 3.0))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter over the valid region only.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW)
                .map(|i| k[i] * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03 and L = 255, averaged over window positions fully inside the
/// image.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    same_size(a, b, "ssim")?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::contract(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let k = gaussian_window();
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect()
    };
    let mu_x = filter_valid(x, w, h, &k);
    let mu_y = filter_valid(y, w, h, &k);
    let xx = filter_valid(&prod(&|p, _| p * p), w, h, &k);
    let yy = filter_valid(&prod(&|_, q| q * q), w, h, &k);
    let xy = filter_valid(&prod(&|p, q| p * q), w, h, &k);
    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = xx[i] - mx * mx;
        let vy = yy[i] - my * my;
        let cov = xy[i] - mx * my;
        total +=
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

/// Mean of the per-channel SSIM values.
pub fn ssim_rgb(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let (pa, pb) = (rgb_to_planes(a), rgb_to_planes(b));
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        total += ssim(x, y)?;
    }
    Ok(total / 3.0)
}

/// Quality and rate of one image coded with ground-truth JRDs and with
/// predicted JRDs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodedPair {
    pub psnr_gt: f64,
    pub psnr_pred: f64,
    pub ssim_gt: f64,
    pub ssim_pred: f64,
    pub bpp_gt: f64,
    pub bpp_pred: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaMetrics {
    pub abs_delta_psnr: f64,
    pub abs_delta_ssim: f64,
    pub abs_delta_bpp: f64,
    /// Squared Pearson correlation of the two PSNR sequences.
    pub r2_psnr: f64,
}

/// Squared Pearson correlation. Needs two or more points and non-zero
/// variance in both sequences.
pub fn r_squared(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::contract(format!(
            "R^2 needs two equal-length sequences of at least 2 points ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::contract(
            "R^2 undefined: a sequence has zero variance",
        ));
    }
    Ok(sab * sab / (saa * sbb))
}

pub fn delta_metrics(pairs: &[CodedPair]) -> Result<DeltaMetrics> {
    if pairs.len() < 2 {
        return Err(Error::contract("delta metrics need at least 2 coded pairs"));
    }
    let n = pairs.len() as f64;
    let mean_abs = |f: fn(&CodedPair) -> f64| pairs.iter().map(|p| f(p).abs()).sum::<f64>() / n;
    let gt: Vec<f64> = pairs.iter().map(|p| p.psnr_gt).collect();
    let pred: Vec<f64> = pairs.iter().map(|p| p.psnr_pred).collect();
    Ok(DeltaMetrics {
        abs_delta_psnr: mean_abs(|p| p.psnr_pred - p.psnr_gt),
        abs_delta_ssim: mean_abs(|p| p.ssim_pred - p.ssim_gt),
        abs_delta_bpp: mean_abs(|p| p.bpp_pred - p.bpp_gt),
        r2_psnr: r_squared(&gt, &pred)?,
    })
}
