//! Image and range error metrics.

use salf_core::math::Vec3;

use crate::emit::Image;
use crate::error::{IoError, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.pixels.len() != b.pixels.len() {
        return Err(IoError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    if a.pixels.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.pixels.iter().zip(&b.pixels).map(|(p, q)| (p - q).norm_squared()).sum();
    Ok(sum / (3 * a.pixels.len()) as f64)
}

pub fn mean_l1(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    if a.pixels.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.pixels.iter().zip(&b.pixels).map(|(p, q)| (p - q).abs().sum()).sum();
    Ok(sum / (3 * a.pixels.len()) as f64)
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter over the positions where the whole window fits.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|i| k[i] * x[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM over channels and valid window positions (Gaussian window
/// 11 x 11, sigma 1.5, dynamic range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(IoError::ShapeMismatch(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let k = gaussian_kernel();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let x: Vec<f64> = a.pixels.iter().map(|p| p[ch]).collect();
        let y: Vec<f64> = b.pixels.iter().map(|p| p[ch]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let sxx = filter_valid(&xx, w, h, &k);
        let syy = filter_valid(&yy, w, h, &k);
        let sxy = filter_valid(&xy, w, h, &k);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

/// Median of `|pred - gt|` over rays where both have a return; `None` when
/// there is no such ray.
pub fn median_range_error(pred: &[Option<f64>], gt: &[Option<f64>]) -> Result<Option<f64>> {
    if pred.len() != gt.len() {
        return Err(IoError::ShapeMismatch(format!("{} vs {} ranges", pred.len(), gt.len())));
    }
    let mut errs: Vec<f64> = pred
        .iter()
        .zip(gt)
        .filter_map(|(p, g)| Some((p.as_ref()? - g.as_ref()?).abs()))
        .collect();
    if errs.is_empty() {
        return Ok(None);
    }
    errs.sort_by(f64::total_cmp);
    let n = errs.len();
    Ok(Some(if n % 2 == 1 {
        errs[n / 2]
    } else {
        0.5 * (errs[n / 2 - 1] + errs[n / 2])
    }))
}

/// Mean of per-pixel values, used for quick summaries.
pub fn mean_color(img: &Image) -> Vec3 {
    if img.pixels.is_empty() {
        return Vec3::zeros();
    }
    img.pixels.iter().sum::<Vec3>() / img.pixels.len() as f64
}
