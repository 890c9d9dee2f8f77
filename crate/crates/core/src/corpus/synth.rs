//! Procedural stand-ins for camera images ("real") and upsampled generator output ("fake").

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Label;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the additive sensor noise, in `[0, 1]` units.
pub const SENSOR_NOISE_SIGMA: f64 = 2.0 / 255.0;

/// Blur widths (output pixels) and amplitudes of the noise octaves in the content model.
const OCTAVES: [(f64, f64); 3] = [(6.0, 0.10), (3.0, 0.06), (1.5, 0.02)];

/// Mild smoothing applied after nearest-neighbour upsampling (normalised, symmetric).
const SMOOTHING: [f64; 9] = [1.0, 2.0, 1.0, 2.0, 20.0, 2.0, 1.0, 2.0, 1.0];

/// How a sample's pixels came to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Rendered at full resolution.
    Native,
    /// Rendered at half resolution and upsampled 2x.
    Upsampled,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Native => "native",
            Source::Upsampled => "upsampled",
        }
    }
}

/// One synthetic image in `[0, 1]`, laid out `[3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample<T> {
    pub pixels: Tensor<T>,
    pub label: Label,
    pub source: Source,
    pub seed: u64,
}

/// Smooth random scene: base colour, linear gradients and band-limited noise octaves.
/// `pitch` is the size of one grid cell in output pixels, so a half-resolution grid uses 2.
fn render_content(rng: &mut ChaCha8Rng, h: usize, w: usize, pitch: f64) -> Vec<f64> {
    let mut img = vec![0.0; 3 * h * w];
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.3..0.7));
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let slope = rng.gen_range(0.0..0.25);
    let (gx, gy) = (angle.cos() * slope, angle.sin() * slope);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.8..1.2));
    let scale = (h.max(w) as f64).max(1.0);
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                let u = (j as f64 + 0.5) / scale - 0.5;
                let v = (i as f64 + 0.5) / scale - 0.5;
                img[(c * h + i) * w + j] = base[c] + tint[c] * (gx * u + gy * v);
            }
        }
    }
    for &(sigma, amp) in &OCTAVES {
        let luma = filtered_noise(rng, h, w, sigma / pitch);
        for c in 0..3 {
            let chroma = filtered_noise(rng, h, w, sigma / pitch);
            let plane = &mut img[c * h * w..(c + 1) * h * w];
            for ((p, &l), &k) in plane.iter_mut().zip(&luma).zip(&chroma) {
                *p += amp * (tint[c] * l + 0.3 * k);
            }
        }
    }
    img
}

/// Unit-variance white noise blurred by a Gaussian of width `sigma` and renormalised.
fn filtered_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let mut field: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(rng)).collect();
    gaussian_blur(&mut field, h, w, sigma);
    let var = field.iter().map(|v| v * v).sum::<f64>() / field.len().max(1) as f64;
    let norm = if var > 0.0 { var.sqrt().recip() } else { 0.0 };
    field.iter_mut().for_each(|v| *v *= norm);
    field
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with mirrored borders.
fn gaussian_blur(plane: &mut [f64], h: usize, w: usize, sigma: f64) {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            tmp[i * w + j] = k
                .iter()
                .enumerate()
                .map(|(t, &kv)| kv * plane[i * w + mirror(j as isize + t as isize - r, w)])
                .sum();
        }
    }
    for i in 0..h {
        for j in 0..w {
            plane[i * w + j] = k
                .iter()
                .enumerate()
                .map(|(t, &kv)| kv * tmp[mirror(i as isize + t as isize - r, h) * w + j])
                .sum();
        }
    }
}

fn add_sensor_noise_and_clamp(rng: &mut ChaCha8Rng, img: &mut [f64]) {
    let noise = Normal::new(0.0, SENSOR_NOISE_SIGMA).expect("valid sigma");
    for p in img.iter_mut() {
        *p = (*p + noise.sample(rng)).clamp(0.0, 1.0);
    }
}

fn to_sample<T: Scalar>(img: Vec<f64>, h: usize, w: usize, label: Label, source: Source, seed: u64) -> ImageSample<T> {
    let pixels = Tensor::new([3, h, w], img.into_iter().map(T::from_f64_lossy).collect())
        .expect("3*h*w values");
    ImageSample { pixels, label, source, seed }
}

/// Natively rendered scene with sensor noise.
pub fn synth_real<T: Scalar>(seed: u64, h: usize, w: usize) -> ImageSample<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = render_content(&mut rng, h, w, 1.0);
    add_sensor_noise_and_clamp(&mut rng, &mut img);
    to_sample(img, h, w, Label::Real, Source::Native, seed)
}

/// Nearest-neighbour 2x upsampling of a `[3, h, w]` buffer.
pub fn upsample_nearest(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; 3 * h2 * w2];
    for c in 0..3 {
        for i in 0..h2 {
            for j in 0..w2 {
                out[(c * h2 + i) * w2 + j] = img[(c * h + i / 2) * w + j / 2];
            }
        }
    }
    out
}

/// Fixed 3x3 smoothing with mirrored borders.
fn smooth(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let norm: f64 = SMOOTHING.iter().sum();
    let mut out = vec![0.0; img.len()];
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    for c in 0..3 {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let mut s = 0.0;
                for di in 0..3 {
                    for dj in 0..3 {
                        let (ii, jj) = (clampi(i as isize + di as isize - 1, h), clampi(j as isize + dj as isize - 1, w));
                        s += SMOOTHING[di * 3 + dj] * plane[ii * w + jj];
                    }
                }
                out[(c * h + i) * w + j] = s / norm;
            }
        }
    }
    out
}

/// Half-resolution scene, 2x nearest-neighbour upsampled and lightly smoothed, with sensor noise.
pub fn synth_fake<T: Scalar>(seed: u64, h: usize, w: usize) -> Result<ImageSample<T>> {
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::invalid(format!("fake images need even positive extents, got {h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = render_content(&mut rng, h / 2, w / 2, 2.0);
    let mut img = smooth(&upsample_nearest(&small, h / 2, w / 2), h, w);
    add_sensor_noise_and_clamp(&mut rng, &mut img);
    Ok(to_sample(img, h, w, Label::Fake, Source::Upsampled, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_pixels() {
        let a = synth_real::<f64>(42, 16, 16);
        let b = synth_real::<f64>(42, 16, 16);
        assert_eq!(a, b);
        let c = synth_fake::<f64>(42, 16, 16).unwrap();
        let d = synth_fake::<f64>(42, 16, 16).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn pixels_are_clamped() {
        for seed in 0..20 {
            for s in [synth_real::<f64>(seed, 32, 32), synth_fake::<f64>(seed, 32, 32).unwrap()] {
                assert!(s.pixels.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn odd_extents_rejected_for_fakes() {
        assert!(synth_fake::<f32>(1, 15, 16).is_err());
        assert!(synth_fake::<f32>(1, 16, 9).is_err());
    }

    #[test]
    fn nearest_upsampling_makes_constant_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let small = render_content(&mut rng, 8, 8, 2.0);
        let up = upsample_nearest(&small, 8, 8);
        for c in 0..3 {
            for i in (0..16).step_by(2) {
                for j in (0..16).step_by(2) {
                    let v = up[(c * 16 + i) * 16 + j];
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        assert_eq!(up[(c * 16 + i + di) * 16 + j + dj], v);
                    }
                }
            }
        }
    }

    #[test]
    fn different_seeds_differ_visibly() {
        let mut worst = f64::INFINITY;
        for s in 0..100u64 {
            let a = synth_real::<f64>(2 * s, 64, 64);
            let b = synth_real::<f64>(2 * s + 1, 64, 64);
            let mad = a.pixels.data().iter().zip(b.pixels.data()).map(|(x, y)| (x - y).abs()).sum::<f64>()
                / a.pixels.len() as f64;
            worst = worst.min(mad);
        }
        assert!(worst > 0.01, "closest pair differs by only {worst}");
    }
}
