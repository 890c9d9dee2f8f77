//! Loss functions, detector pretraining and generator attack training.

mod config;
mod log;

pub use config::{Stage, TrainConfig, GENERATOR_ARCH, GENERATOR_LINEAR_OUT_ARCH};
pub use log::{EpochRecord, TrainLog, LOG_COLUMNS};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{derive_seed, ImageSet};
use crate::error::{Error, Result};
use crate::evaluation::{attack_set, attack_success_rate, image_quality};
use crate::graph::{Graph, Var};
use crate::models::{DetectorKind, DetectorNet, GeneratorNet, Label, Model, DETECTOR_INPUT};
use crate::param::{bind, sgd_step};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Candidate weights of the perceptual term: 1, then 20 to 200 in steps of 20.
pub const DEFAULT_ALPHA_GRID: [f64; 11] = [1.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0, 200.0];

/// Epoch budget per grid-search candidate.
pub const GRID_SEARCH_EPOCHS: usize = 8;

/// Mean absolute difference between the input and the attacked image.
pub fn perceptual_loss<T: Scalar>(g: &mut Graph<T>, original: Var, attacked: Var) -> Result<Var> {
    g.mean_abs_diff(original, attacked)
}

/// Cross-entropy of the frozen victim's output against the `Real` class.
pub fn classification_loss_whitebox<T: Scalar>(g: &mut Graph<T>, victim: &DetectorNet<T>, attacked: Var) -> Result<Var> {
    let vars = bind(g, victim.params(), false);
    let logits = victim.forward(g, &vars, attacked)?;
    let n = g.value(logits).shape()[0];
    g.softmax_cross_entropy(logits, Label::Real.one_hot(n))
}

/// `Σ β_s · L_c^(s)` over the ensemble.
pub fn classification_loss_ensemble<T: Scalar>(
    g: &mut Graph<T>,
    ensemble: &[&DetectorNet<T>],
    beta: &[f64],
    attacked: Var,
) -> Result<Var> {
    if ensemble.is_empty() {
        return Err(Error::invalid("empty ensemble"));
    }
    if beta.len() != ensemble.len() {
        return Err(Error::invalid(format!("{} weights for {} detectors", beta.len(), ensemble.len())));
    }
    let mut terms = Vec::with_capacity(ensemble.len());
    for (d, &b) in ensemble.iter().zip(beta) {
        terms.push((classification_loss_whitebox(g, d, attacked)?, T::from_f64_lossy(b)));
    }
    g.weighted_sum(&terms)
}

/// `α · L_p + L_c`.
pub fn generator_loss<T: Scalar>(g: &mut Graph<T>, alpha: f64, perceptual: Var, classification: Var) -> Result<Var> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be non-negative, got {alpha}")));
    }
    g.weighted_sum(&[(perceptual, T::from_f64_lossy(alpha)), (classification, T::one())])
}

fn one_hot_rows<T: Scalar>(labels: &[Label]) -> Tensor<T> {
    Tensor::from_fn([labels.len(), 2], |i| if i % 2 == labels[i / 2].index() { T::one() } else { T::zero() })
}

fn epoch_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// A trained network and its per-epoch log.
#[derive(Clone, Debug)]
pub struct Trained<M> {
    pub model: M,
    pub log: TrainLog,
}

/// Trains one detector from scratch on the D-set with plain SGD and a step-halving schedule.
pub fn train_detector<T: Scalar>(
    cfg: &TrainConfig,
    d_set: &ImageSet,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<Trained<DetectorNet<T>>> {
    cfg.validate()?;
    if cfg.stage != Stage::Detector {
        return Err(Error::Config("train_detector needs a detector-stage config".into()));
    }
    let labels = d_set.labels();
    if !labels.contains(&Label::Real) || !labels.contains(&Label::Fake) {
        return Err(Error::invalid("detector training set must contain both real and fake images"));
    }
    let kind = cfg.detector_kind()?;
    let mut det = DetectorNet::<T>::build(kind, derive_seed(cfg.seed, &format!("detector-init:{kind}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("detector-order:{kind}")));
    let start = Instant::now();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = epoch_order(d_set.len(), &mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let x = d_set.cropped_batch::<T, _>(chunk, DETECTOR_INPUT, &mut rng)?;
            let batch_labels: Vec<Label> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let vars = bind(&mut g, det.params(), true);
            let xv = g.constant(x);
            let logits = det.forward(&mut g, &vars, xv)?;
            correct += g
                .value(logits)
                .data()
                .chunks(2)
                .zip(&batch_labels)
                .filter(|(z, &l)| (if z[1] > z[0] { Label::Real } else { Label::Fake }) == l)
                .count();
            let loss = g.softmax_cross_entropy(logits, one_hot_rows(&batch_labels))?;
            loss_sum += g.value(loss).item()?.to_f64_lossy() * chunk.len() as f64;
            g.backward(loss)?;
            g.accumulate_into(&vars, det.params_mut())?;
            sgd_step(det.params_mut(), lr)?;
        }
        let mean = loss_sum / d_set.len() as f64;
        let rec = EpochRecord {
            epoch: epoch + 1,
            loss_total: mean,
            loss_perceptual: 0.0,
            loss_classification: mean,
            lr,
            elapsed_s: start.elapsed().as_secs_f64(),
            train_accuracy: Some(correct as f64 / d_set.len() as f64),
        };
        progress(&rec);
        log.records.push(rec);
    }
    Ok(Trained { model: det, log })
}

/// Trains a fresh generator against frozen detectors on fake-only images.
///
/// `targets` must follow the order of `cfg.targets()`.
pub fn train_attack<T: Scalar>(
    cfg: &TrainConfig,
    targets: &[&DetectorNet<T>],
    a_set: &ImageSet,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<Trained<GeneratorNet<T>>> {
    cfg.validate()?;
    if cfg.stage != Stage::Attack {
        return Err(Error::Config("train_attack needs an attack-stage config".into()));
    }
    if a_set.is_empty() {
        return Err(Error::invalid("attack training set is empty"));
    }
    let kinds: Vec<DetectorKind> = targets.iter().map(|d| d.kind()).collect();
    if kinds != cfg.targets()? {
        return Err(Error::Config(format!("config targets {:?} but {:?} were supplied", cfg.targets()?, kinds)));
    }
    let beta = cfg.weights()?;
    let mut gen = GeneratorNet::<T>::build_with(derive_seed(cfg.seed, "generator-init"), cfg.generator_final_relu()?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "attack-order"));
    let start = Instant::now();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = epoch_order(a_set.len(), &mut rng);
        let (mut tot, mut lp_sum, mut lc_sum) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch) {
            let x = a_set.cropped_batch::<T, _>(chunk, DETECTOR_INPUT, &mut rng)?;
            let mut g = Graph::new();
            let vars = bind(&mut g, gen.params(), true);
            let xv = g.constant(x);
            let y = gen.forward(&mut g, &vars, xv)?;
            let lp = perceptual_loss(&mut g, xv, y)?;
            let lc = classification_loss_ensemble(&mut g, targets, &beta, y)?;
            let loss = generator_loss(&mut g, cfg.alpha, lp, lc)?;
            let w = chunk.len() as f64;
            tot += g.value(loss).item()?.to_f64_lossy() * w;
            lp_sum += g.value(lp).item()?.to_f64_lossy() * w;
            lc_sum += g.value(lc).item()?.to_f64_lossy() * w;
            g.backward(loss)?;
            g.accumulate_into(&vars, gen.params_mut())?;
            sgd_step(gen.params_mut(), lr)?;
        }
        let n = a_set.len() as f64;
        let rec = EpochRecord {
            epoch: epoch + 1,
            loss_total: tot / n,
            loss_perceptual: lp_sum / n,
            loss_classification: lc_sum / n,
            lr,
            elapsed_s: start.elapsed().as_secs_f64(),
            train_accuracy: None,
        };
        progress(&rec);
        log.records.push(rec);
    }
    Ok(Trained { model: gen, log })
}

/// One grid-search candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaRow {
    pub alpha: f64,
    pub asr: f64,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaSearch {
    pub rows: Vec<AlphaRow>,
    /// Largest alpha whose ASR reaches the floor, if any.
    pub selected: Option<f64>,
    pub epochs: usize,
}

/// Picks the largest alpha meeting `floor`.
pub fn select_alpha(rows: &[AlphaRow], floor: f64) -> Option<f64> {
    rows.iter().filter(|r| r.asr >= floor).map(|r| r.alpha).fold(None, |best, a| Some(best.map_or(a, |b: f64| b.max(a))))
}

/// Trains one generator per alpha with `base` (epochs replaced by `epochs`) and measures
/// ASR and quality on `eval_fakes`.
pub fn alpha_grid_search<T: Scalar>(
    alphas: &[f64],
    floor: f64,
    base: &TrainConfig,
    epochs: usize,
    victim: &DetectorNet<T>,
    a_set: &ImageSet,
    eval_fakes: &ImageSet,
    mut progress: impl FnMut(f64, &EpochRecord),
) -> Result<AlphaSearch> {
    if alphas.is_empty() {
        return Err(Error::invalid("alpha grid is empty"));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cfg = TrainConfig { alpha, epochs, victim: Some(victim.kind()), ensemble: Vec::new(), beta: Vec::new(), ..base.clone() };
        let run = train_attack(&cfg, &[victim], a_set, |r| progress(alpha, r))?;
        let attacked = attack_set(&run.model, eval_fakes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "alpha-grid-asr"));
        let asr = attack_success_rate(victim, &attacked, &mut rng)?;
        let q = image_quality(eval_fakes, &attacked)?;
        rows.push(AlphaRow { alpha, asr, mean_psnr_db: q.mean_psnr_db, mean_ssim: q.mean_ssim });
    }
    Ok(AlphaSearch { selected: select_alpha(&rows, floor), rows, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_graph(values: &[f64]) -> (Graph<f64>, Vec<Var>) {
        let mut g = Graph::new();
        let vars = values.iter().map(|&v| g.input(Tensor::scalar(v))).collect();
        (g, vars)
    }

    #[test]
    fn perceptual_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::from_fn([1, 3, 4, 4], |i| i as f64 / 48.0));
        let b = g.input(g.value(a).map(|v| v + 0.1));
        let same = perceptual_loss(&mut g, a, a).unwrap();
        assert_eq!(g.value(same).item().unwrap(), 0.0);
        let off = perceptual_loss(&mut g, a, b).unwrap();
        assert!((g.value(off).item().unwrap() - 0.1).abs() < 1e-12);
        g.backward(off).unwrap();
        assert!(g.grad(b).unwrap().data().iter().all(|&d| (d - 1.0 / 48.0).abs() < 1e-15));
    }

    #[test]
    fn generator_loss_arithmetic() {
        let (mut g, v) = scalar_graph(&[0.01, 0.3]);
        let l = generator_loss(&mut g, 20.0, v[0], v[1]).unwrap();
        assert!((g.value(l).item().unwrap() - 0.5).abs() < 1e-12);
        let l0 = generator_loss(&mut g, 0.0, v[0], v[1]).unwrap();
        assert_eq!(g.value(l0).item().unwrap(), 0.3);
        assert!(generator_loss(&mut g, -1.0, v[0], v[1]).is_err());
    }

    #[test]
    fn whitebox_loss_is_ln2_for_zero_logits() {
        let mut d = DetectorNet::<f64>::build(DetectorKind::StrideNet, 0).unwrap();
        for p in d.params_mut() {
            p.value_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::full([2, 3, 64, 64], 0.5));
        let l = classification_loss_whitebox(&mut g, &d, x).unwrap();
        assert!((g.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let mut g = Graph::new();
        let x = g.input(Tensor::full([1, 3, 32, 32], 0.5));
        assert!(classification_loss_whitebox(&mut g, &d, x).is_err());
    }

    #[test]
    fn ensemble_of_one_is_bit_equal_to_whitebox() {
        let d = DetectorNet::<f64>::build(DetectorKind::PlainNet, 3).unwrap();
        let img = Tensor::from_fn([2, 3, 64, 64], |i| ((i * 31) % 97) as f64 / 97.0);
        let mut g = Graph::new();
        let x = g.input(img);
        let wb = classification_loss_whitebox(&mut g, &d, x).unwrap();
        let en = classification_loss_ensemble(&mut g, &[&d], &[1.0], x).unwrap();
        assert_eq!(g.value(wb).item().unwrap().to_bits(), g.value(en).item().unwrap().to_bits());
        let twin = classification_loss_ensemble(&mut g, &[&d, &d], &[0.5, 0.5], x).unwrap();
        assert!((g.value(twin).item().unwrap() - g.value(wb).item().unwrap()).abs() < 1e-15);
        assert!(classification_loss_ensemble(&mut g, &[&d, &d], &[1.0], x).is_err());
    }

    #[test]
    fn ensemble_weighted_sum_arithmetic() {
        let (mut g, v) = scalar_graph(&[0.2, 0.6]);
        let s = g.weighted_sum(&[(v[0], 0.5), (v[1], 0.5)]).unwrap();
        assert!((g.value(s).item().unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn alpha_selection() {
        let rows: Vec<AlphaRow> = [(1.0, 0.99), (20.0, 0.95), (40.0, 0.7), (60.0, 0.92)]
            .iter()
            .map(|&(alpha, asr)| AlphaRow { alpha, asr, mean_psnr_db: 40.0, mean_ssim: 0.9 })
            .collect();
        assert_eq!(select_alpha(&rows, 0.0), Some(60.0));
        assert_eq!(select_alpha(&rows, 0.93), Some(20.0));
        assert_eq!(select_alpha(&rows, 1.0), None);
        assert_eq!(DEFAULT_ALPHA_GRID.len(), 11);
    }
}
