//! Image-quality metrics on 8-bit planar `[C, H, W]` data.

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Peak signal-to-noise ratio with peak 255; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("psnr", format!("{} vs {} values", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("psnr of empty images"));
    }
    let sse: u64 = a.iter().zip(b).map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64).sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / a.len() as f64;
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Normalised 1-D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Valid-window separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = taps.iter().enumerate().map(|(t, &k)| k * plane[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = taps.iter().enumerate().map(|(t, &k)| k * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5), valid positions only,
/// averaged over positions and then over channels.
pub fn ssim(a: &[u8], b: &[u8], channels: usize, h: usize, w: usize) -> Result<f64> {
    if a.len() != b.len() || a.len() != channels * h * w {
        return Err(Error::shape("ssim", format!("{} and {} values for {channels}x{h}x{w}", a.len(), b.len())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW || channels == 0 {
        return Err(Error::invalid(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}")));
    }
    let taps = ssim_taps();
    let plane = h * w;
    let mut total = 0.0;
    for c in 0..channels {
        let x: Vec<f64> = a[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &taps));
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / channels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let a = vec![10u8; 300];
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b: Vec<u8> = a.iter().map(|v| v + 1).collect();
        assert!((psnr(&a, &b).unwrap() - 48.130_803_608_679_1).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &b[..299]).is_err());
    }

    #[test]
    fn ssim_closed_forms() {
        let a = vec![0u8; 3 * 16 * 16];
        let b = vec![255u8; 3 * 16 * 16];
        assert_eq!(ssim(&a, &a, 3, 16, 16).unwrap(), 1.0);
        let expected = SSIM_C1 / (255.0 * 255.0 + SSIM_C1);
        assert!((ssim(&a, &b, 3, 16, 16).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.0e-4).abs() < 1e-6);
        assert!(ssim(&a[..300], &b[..300], 3, 10, 10).is_err());
    }

    #[test]
    fn taps_are_normalised_and_symmetric() {
        let t = ssim_taps();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(t[i], t[SSIM_WINDOW - 1 - i]);
        }
    }
}
