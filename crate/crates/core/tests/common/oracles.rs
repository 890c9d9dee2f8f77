//! Definition-literal metric implementations used as oracles for the optimised ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn psnr_literal(a: &[u8], b: &[u8]) -> f64 {
    let mut mse = 0.0;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        mse += d * d;
    }
    mse /= a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64.powi(2) / mse).log10()
    }
}

/// Windowed statistics computed directly from the 2-D Gaussian weights at every valid position.
pub fn ssim_literal(a: &[u8], b: &[u8], channels: usize, h: usize, w: usize) -> f64 {
    let (n, sigma) = (11usize, 1.5f64);
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (y, x) = (i as f64 - 5.0, j as f64 - 5.0);
            weights[i * n + j] = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    let mut per_channel = 0.0;
    for c in 0..channels {
        let px = |img: &[u8], y: usize, x: usize| img[(c * h + y) * w + x] as f64;
        let mut sum = 0.0;
        let mut count = 0usize;
        for top in 0..=h - n {
            for left in 0..=w - n {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        mx += weights[i * n + j] * px(a, top + i, left + j);
                        my += weights[i * n + j] * px(b, top + i, left + j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let dx = px(a, top + i, left + j) - mx;
                        let dy = px(b, top + i, left + j) - my;
                        vx += weights[i * n + j] * dx * dx;
                        vy += weights[i * n + j] * dy * dy;
                        cov += weights[i * n + j] * dx * dy;
                    }
                }
                sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        per_channel += sum / count as f64;
    }
    per_channel / channels as f64
}

/// Pairs of related 8-bit images: a random base and a noisy, partly shifted copy.
pub fn random_pairs(count: usize, seed: u64) -> Vec<(Vec<u8>, Vec<u8>, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let (h, w) = (rng.gen_range(11..24), rng.gen_range(11..24));
            let a: Vec<u8> = (0..3 * h * w).map(|_| rng.gen()).collect();
            let spread = [2i32, 10, 60, 255][k % 4];
            let b = a
                .iter()
                .map(|&v| (v as i32 + rng.gen_range(-spread..=spread)).clamp(0, 255) as u8)
                .collect();
            (a, b, h, w)
        })
        .collect()
}
