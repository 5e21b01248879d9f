//! Image quality metrics.
//!
//! PSNR is computed jointly over all channels and pixels. SSIM converts RGB
//! to BT.601 luma (`0.299 R + 0.587 G + 0.114 B`), uses an 11×11 Gaussian
//! window with σ = 1.5, `C₁ = (0.01 L)²`, `C₂ = (0.03 L)²` with `L = 1`,
//! and averages over every window that fits entirely inside the image.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::shape(op, "empty input"));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b, "mse")?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10·log10(max_val² / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (max_val * max_val / m).log10()).min(PSNR_CAP))
}

/// BT.601 luma of a `[3, H, W]` image as an `[H, W]` plane; `[H, W]` and
/// `[1, H, W]` inputs pass through.
pub fn luma(img: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let x = img.data();
    match *img.shape() {
        [h, w] | [1, h, w] => Ok((h, w, x.to_vec())),
        [3, h, w] => {
            let n = h * w;
            Ok((h, w, (0..n).map(|i| 0.299 * x[i] + 0.587 * x[n + i] + 0.114 * x[2 * n + i]).collect()))
        }
        _ => Err(Error::shape("luma", format!("expected [3, H, W], [1, H, W] or [H, W], got {:?}", img.shape()))),
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `[H, W]` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = g.iter().zip(&x[y * w + xo..y * w + xo + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for xo in 0..ow {
            out[y * ow + xo] = g.iter().enumerate().map(|(i, a)| a * rows[(y + i) * ow + xo]).sum();
        }
    }
    out
}

/// Mean structural similarity over valid windows.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let (h, w, ya) = luma(a)?;
    let (_, _, yb) = luma(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Usage(format!(
            "ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(&ya, h, w, &g);
    let mu_b = filter_valid(&yb, h, w, &g);
    let e_aa = filter_valid(&prod(&ya, &ya), h, w, &g);
    let e_bb = filter_valid(&prod(&yb, &yb), h, w, &g);
    let e_ab = filter_valid(&prod(&ya, &yb), h, w, &g);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum();
    Ok(total / n as f64)
}
