//! Fast invariant checks runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::evaluation::{psnr, ssim};
use crate::graph::{Graph, Var};
use crate::kernels::PoolKind;
use crate::models::{DetectorKind, DetectorNet, GeneratorNet, Model};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> Check {
    match outcome {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: e.to_string() },
    }
}

/// Runs every check and returns one entry per check.
pub fn run() -> Vec<Check> {
    vec![
        check("conv-pool-dense gradient", gradient_check()),
        check("generator parameter count", generator_count()),
        check("zeroed generator is identity", generator_identity()),
        check("detectors are deterministic", detector_determinism()),
        check("psnr of unit difference", psnr_unit()),
        check("ssim of identical images", ssim_identical()),
    ]
}

/// conv -> avg pool -> dense -> softmax cross-entropy; returns the loss and the conv weight node.
fn small_net(g: &mut Graph<f64>, x: &Tensor<f64>, w: &Tensor<f64>, fc: &Tensor<f64>) -> Result<(Var, Var)> {
    let xv = g.input(x.clone());
    let wv = g.input(w.clone());
    let b = g.constant(Tensor::zeros([2]));
    let h = g.conv2d(xv, wv, b, 1, 1)?;
    let h = g.pool2d(h, PoolKind::Avg, 2, 2)?;
    let h = g.flatten(h)?;
    let fv = g.input(fc.clone());
    let fb = g.constant(Tensor::zeros([2]));
    let z = g.dense(h, fv, fb)?;
    let loss = g.softmax_cross_entropy(z, Tensor::new([1, 2], vec![0.0, 1.0])?)?;
    Ok((loss, wv))
}

fn loss_at(x: &Tensor<f64>, w: &Tensor<f64>, fc: &Tensor<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let (loss, _) = small_net(&mut g, x, w, fc)?;
    g.value(loss).item()
}

fn gradient_check() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::from_fn([1, 3, 4, 4], |_| rng.gen_range(-1.0..1.0));
    let mut w = Tensor::from_fn([2, 3, 3, 3], |_| rng.gen_range(-0.5..0.5));
    let fc = Tensor::from_fn([8, 2], |_| rng.gen_range(-0.5..0.5));
    let mut g = Graph::new();
    let (loss, wv) = small_net(&mut g, &x, &w, &fc)?;
    g.backward(loss)?;
    let analytic = g.grad(wv).cloned().unwrap_or_else(|| Tensor::zeros([2, 3, 3, 3]));
    let step = 1e-5;
    let mut worst = 0.0f64;
    for idx in (0..w.len()).step_by(5) {
        let base = w.data()[idx];
        w.data_mut()[idx] = base + step;
        let up = loss_at(&x, &w, &fc)?;
        w.data_mut()[idx] = base - step;
        let down = loss_at(&x, &w, &fc)?;
        w.data_mut()[idx] = base;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.data()[idx];
        let scale = a.abs().max(numeric.abs());
        if scale > 1e-7 {
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    Ok((worst <= 1e-4, format!("worst relative error {worst:.2e}")))
}

fn generator_count() -> Result<(bool, String)> {
    let n = GeneratorNet::<f32>::build(0)?.param_count();
    Ok((n == 448_131, format!("{n} parameters")))
}

fn generator_identity() -> Result<(bool, String)> {
    let g = GeneratorNet::<f64>::build(1)?.zeroed();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn([1, 3, 17, 23], |_| rng.gen::<f64>());
    let same = g.apply(&x)? == x;
    Ok((same, if same { "bit-exact".into() } else { "output differs from input".into() }))
}

fn detector_determinism() -> Result<(bool, String)> {
    let mut ok = true;
    for k in DetectorKind::ALL {
        ok &= DetectorNet::<f32>::build(k, 5)? == DetectorNet::<f32>::build(k, 5)?;
    }
    Ok((ok, "same seed gives the same weights".into()))
}

fn psnr_unit() -> Result<(bool, String)> {
    let a: Vec<u8> = (0..3 * 16 * 16).map(|i| (i % 200) as u8).collect();
    let b: Vec<u8> = a.iter().map(|v| v + 1).collect();
    let p = psnr(&a, &b)?;
    Ok(((p - 48.1308).abs() <= 1e-3, format!("{p:.4} dB")))
}

fn ssim_identical() -> Result<(bool, String)> {
    let a: Vec<u8> = (0..3 * 16 * 16).map(|i| (i * 37 % 256) as u8).collect();
    let s = ssim(&a, &a, 3, 16, 16)?;
    Ok((s == 1.0, format!("{s}")))
}
