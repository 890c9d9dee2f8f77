//! Attack success rate, detector accuracy, image quality, transfer grids and the block-alignment probe.

mod metrics;
mod report;

pub use metrics::{psnr, ssim, ssim_taps, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{render_markdown, summary_tables, MetricsReport, MetricsRow, Scenario, SummaryTable, PROBE_SOURCE_PREFIX, REPORT_COLUMNS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{crop_window, derive_seed, quantize_tensor, random_crop, ImageSet};
use crate::error::{Error, Result};
use crate::models::{DetectorKind, DetectorNet, GeneratorNet, Label, DETECTOR_INPUT};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Images pushed through networks at once during evaluation.
pub const EVAL_BATCH: usize = 16;

/// Runs the generator over every image and quantises the result to 8 bits, exactly as a
/// PNG save/load would.
pub fn attack_set<T: Scalar>(generator: &GeneratorNet<T>, set: &ImageSet) -> Result<ImageSet> {
    let mut out = ImageSet::new(set.height, set.width);
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let y = generator.apply(&set.batch::<T>(chunk))?;
        let bytes = quantize_tensor(&y);
        for (k, &i) in chunk.iter().enumerate() {
            out.push(set.rows[i].clone(), &bytes[k * set.image_len()..(k + 1) * set.image_len()])?;
        }
    }
    Ok(out)
}

/// Victim decisions, one per image. Images larger than the victim input are classified
/// through one uniformly random crop each.
pub fn classify<T: Scalar>(victim: &DetectorNet<T>, set: &ImageSet, rng: &mut ChaCha8Rng) -> Result<Vec<Label>> {
    if set.is_empty() {
        return Err(Error::invalid("cannot classify an empty image set"));
    }
    if set.height < DETECTOR_INPUT || set.width < DETECTOR_INPUT {
        return Err(Error::invalid(format!(
            "{}x{} images are smaller than the {DETECTOR_INPUT}x{DETECTOR_INPUT} detector input",
            set.height, set.width
        )));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut labels = Vec::with_capacity(set.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let x = set.cropped_batch::<T, _>(chunk, DETECTOR_INPUT, rng)?;
        labels.extend(victim.predict(&x)?);
    }
    Ok(labels)
}

/// Fraction of labels equal to `Real`.
pub fn real_fraction(labels: &[Label]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::invalid("rate over an empty set"));
    }
    Ok(labels.iter().filter(|&&l| l == Label::Real).count() as f64 / labels.len() as f64)
}

/// Fraction of (already attacked and quantised) images the victim calls real.
pub fn attack_success_rate<T: Scalar>(
    victim: &DetectorNet<T>,
    attacked: &ImageSet,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    real_fraction(&classify(victim, attacked, rng)?)
}

/// Fraction of correctly classified images; both classes must be present.
pub fn accuracy<T: Scalar>(victim: &DetectorNet<T>, set: &ImageSet, rng: &mut ChaCha8Rng) -> Result<f64> {
    let truth = set.labels();
    if !truth.contains(&Label::Real) || !truth.contains(&Label::Fake) {
        return Err(Error::invalid("accuracy needs both real and fake images"));
    }
    let pred = classify(victim, set, rng)?;
    Ok(pred.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64)
}

/// Mean visual quality between originals and their attacked versions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    /// Mean over finite values; `inf` when every image came back unchanged.
    pub mean_psnr_db: f64,
    pub inf_psnr_count: usize,
    pub mean_ssim: f64,
    pub n_images: usize,
}

pub fn image_quality(originals: &ImageSet, attacked: &ImageSet) -> Result<Quality> {
    if originals.len() != attacked.len() || originals.height != attacked.height || originals.width != attacked.width {
        return Err(Error::shape("image_quality", "original and attacked sets differ in size".to_string()));
    }
    if originals.is_empty() {
        return Err(Error::invalid("image quality over an empty set"));
    }
    let (mut psnr_sum, mut finite, mut inf, mut ssim_sum) = (0.0, 0usize, 0usize, 0.0);
    for i in 0..originals.len() {
        let (a, b) = (originals.bytes(i), attacked.bytes(i));
        let p = psnr(a, b)?;
        if p.is_finite() {
            psnr_sum += p;
            finite += 1;
        } else {
            inf += 1;
        }
        ssim_sum += ssim(a, b, 3, originals.height, originals.width)?;
    }
    Ok(Quality {
        mean_psnr_db: if finite == 0 { f64::INFINITY } else { psnr_sum / finite as f64 },
        inf_psnr_count: inf,
        mean_ssim: ssim_sum / originals.len() as f64,
        n_images: originals.len(),
    })
}

/// A trained generator together with the detectors it was trained against.
pub struct AttackEntry<'a, T> {
    pub id: String,
    pub generator: &'a GeneratorNet<T>,
    pub trained_against: Vec<DetectorKind>,
}

fn cell_rng(seed: u64, attack: &str, victim: DetectorKind) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("asr:{attack}:{victim}")))
}

/// ASR of unattacked fakes for each victim (attack id `none`).
pub fn baseline_rows<T: Scalar>(victims: &[&DetectorNet<T>], fakes: &ImageSet, source: &str, seed: u64) -> Result<Vec<MetricsRow>> {
    victims
        .iter()
        .map(|v| {
            let asr = attack_success_rate(v, fakes, &mut cell_rng(seed, "none", v.kind()))?;
            Ok(MetricsRow {
                victim: v.kind().to_string(),
                attack: "none".into(),
                scenario: Scenario::Baseline,
                source: source.into(),
                asr,
                mean_psnr_db: f64::INFINITY,
                inf_psnr_count: fakes.len(),
                mean_ssim: 1.0,
                n_images: fakes.len(),
            })
        })
        .collect()
}

/// Every attack against every victim on the same fakes. A cell is white-box when the
/// victim was among the attack's training targets.
pub fn transfer_matrix<T: Scalar>(
    attacks: &[AttackEntry<'_, T>],
    victims: &[&DetectorNet<T>],
    fakes: &ImageSet,
    source: &str,
    seed: u64,
) -> Result<MetricsReport> {
    if attacks.is_empty() || victims.is_empty() {
        return Err(Error::invalid("transfer matrix needs at least one attack and one victim"));
    }
    let mut rows = Vec::with_capacity(attacks.len() * victims.len());
    for a in attacks {
        let attacked = attack_set(a.generator, fakes)?;
        let q = image_quality(fakes, &attacked)?;
        for v in victims {
            let asr = attack_success_rate(v, &attacked, &mut cell_rng(seed, &a.id, v.kind()))?;
            let scenario = if a.trained_against.contains(&v.kind()) { Scenario::WhiteBox } else { Scenario::ZeroKnowledge };
            rows.push(MetricsRow {
                victim: v.kind().to_string(),
                attack: a.id.clone(),
                scenario,
                source: source.into(),
                asr,
                mean_psnr_db: q.mean_psnr_db,
                inf_psnr_count: q.inf_psnr_count,
                mean_ssim: q.mean_ssim,
                n_images: q.n_images,
            });
        }
    }
    Ok(MetricsReport { rows })
}

/// Outcome of attacking large images whole and classifying random crops.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    /// ASR per crop draw (attack full image, then crop).
    pub draws: Vec<f64>,
    pub mean_asr: f64,
    /// max - min over the draws.
    pub spread: f64,
    /// ASR when the first draw's windows are cropped first and attacked at detector size.
    pub aligned_asr: f64,
    /// Quality of the full-size attacked images.
    pub quality: Quality,
}

pub fn block_alignment_probe<T: Scalar>(
    victim: &DetectorNet<T>,
    generator: &GeneratorNet<T>,
    probe: &ImageSet,
    draws: usize,
    seed: u64,
) -> Result<ProbeResult> {
    if probe.is_empty() || draws == 0 {
        return Err(Error::invalid("probe needs images and at least one draw"));
    }
    if probe.height <= DETECTOR_INPUT || probe.width <= DETECTOR_INPUT {
        return Err(Error::invalid(format!(
            "probe images ({}x{}) must be larger than the {DETECTOR_INPUT}x{DETECTOR_INPUT} detector input",
            probe.height, probe.width
        )));
    }
    let attacked = attack_set(generator, probe)?;
    let quality = image_quality(probe, &attacked)?;
    let mut asrs = Vec::with_capacity(draws);
    let mut first_windows = Vec::new();
    for d in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("probe-draw:{d}")));
        let mut crops = ImageSet::new(DETECTOR_INPUT, DETECTOR_INPUT);
        for i in 0..attacked.len() {
            let c = random_crop::<T, _>(&attacked.image(i), DETECTOR_INPUT, &mut rng)?;
            if d == 0 {
                first_windows.push((c.top, c.left));
            }
            crops.push(attacked.rows[i].clone(), &quantize_tensor(&c.pixels))?;
        }
        asrs.push(real_fraction(&victim.predict_set(&crops)?)?);
    }
    let mut windows = ImageSet::new(DETECTOR_INPUT, DETECTOR_INPUT);
    for (i, &(top, left)) in first_windows.iter().enumerate() {
        let w = crop_window(&probe.image::<T>(i), top, left, DETECTOR_INPUT)?;
        windows.push(probe.rows[i].clone(), &quantize_tensor(&w))?;
    }
    let aligned = attack_set(generator, &windows)?;
    let aligned_asr = real_fraction(&victim.predict_set(&aligned)?)?;
    let mean_asr = asrs.iter().sum::<f64>() / draws as f64;
    let spread = asrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - asrs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ProbeResult { draws: asrs, mean_asr, spread, aligned_asr, quality })
}

impl ProbeResult {
    /// Report rows for the mean random-crop ASR and the aligned-crop ASR.
    pub fn rows(&self, victim: DetectorKind, attack: &str) -> Vec<MetricsRow> {
        [("probe-random", self.mean_asr), ("probe-aligned", self.aligned_asr)]
            .into_iter()
            .map(|(source, asr)| MetricsRow {
                victim: victim.to_string(),
                attack: attack.into(),
                scenario: Scenario::WhiteBox,
                source: source.into(),
                asr,
                mean_psnr_db: self.quality.mean_psnr_db,
                inf_psnr_count: self.quality.inf_psnr_count,
                mean_ssim: self.quality.mean_ssim,
                n_images: self.quality.n_images,
            })
            .collect()
    }
}

impl<T: Scalar> DetectorNet<T> {
    /// Decisions for a set already at the detector's input size.
    pub fn predict_set(&self, set: &ImageSet) -> Result<Vec<Label>> {
        let idx: Vec<usize> = (0..set.len()).collect();
        let mut out = Vec::with_capacity(set.len());
        for chunk in idx.chunks(EVAL_BATCH) {
            out.extend(self.predict(&set.batch::<T>(chunk))?);
        }
        Ok(out)
    }
}

/// Stacks `[3, H, W]` images into a set of quantised bytes.
pub fn image_set_from<T: Scalar>(images: &[Tensor<T>]) -> Result<ImageSet> {
    let first = images.first().ok_or_else(|| Error::invalid("no images"))?;
    let &[3, h, w] = first.shape() else {
        return Err(Error::shape("image_set_from", format!("expected [3, H, W], got {:?}", first.shape())));
    };
    let mut set = ImageSet::new(h, w);
    for (i, img) in images.iter().enumerate() {
        let row = crate::corpus::ManifestRow {
            index: i as u64,
            label: Label::Fake,
            source: crate::corpus::Source::Upsampled,
            seed: 0,
            path: String::new(),
        };
        set.push(row, &quantize_tensor(img))?;
    }
    Ok(set)
}
