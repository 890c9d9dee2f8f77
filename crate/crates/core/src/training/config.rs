use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::DetectorKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Detector,
    Attack,
}

/// Generator variants selectable through `arch` in attack configs.
pub const GENERATOR_ARCH: &str = "generator";
pub const GENERATOR_LINEAR_OUT_ARCH: &str = "generator-linear-out";

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Detector kind for `detector` runs, generator variant for `attack` runs.
    pub arch: String,
    pub seed: u64,
    pub lr: f64,
    pub epochs: usize,
    /// Halve the learning rate every this many epochs; 0 keeps it constant.
    #[serde(default)]
    pub lr_half_every: usize,
    pub batch: usize,
    #[serde(default)]
    pub alpha: f64,
    /// Ensemble weights; empty means uniform.
    #[serde(default)]
    pub beta: Vec<f64>,
    /// Attack targets for the zero-knowledge scenario (never contains `victim`).
    #[serde(default)]
    pub ensemble: Vec<DetectorKind>,
    /// White-box target, or the held-out detector when `ensemble` is set.
    #[serde(default)]
    pub victim: Option<DetectorKind>,
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// 20 epochs, lr 5e-4 halved every 4 epochs, batch 2.
    pub fn detector(kind: DetectorKind, seed: u64) -> Self {
        Self {
            stage: Stage::Detector,
            arch: kind.as_str().to_string(),
            seed,
            lr: 5e-4,
            epochs: 20,
            lr_half_every: 4,
            batch: 2,
            alpha: 0.0,
            beta: Vec::new(),
            ensemble: Vec::new(),
            victim: None,
            corpus_dir: None,
            out_dir: None,
        }
    }

    /// 32 epochs at a constant lr of 1e-4, batch 1, alpha 20, white-box against `victim`.
    pub fn attack(victim: DetectorKind, seed: u64) -> Self {
        Self {
            stage: Stage::Attack,
            arch: GENERATOR_ARCH.to_string(),
            seed,
            lr: 1e-4,
            epochs: 32,
            lr_half_every: 0,
            batch: 1,
            alpha: 20.0,
            beta: Vec::new(),
            ensemble: Vec::new(),
            victim: Some(victim),
            corpus_dir: None,
            out_dir: None,
        }
    }

    /// Zero-knowledge attack against every zoo detector except `held_out`.
    pub fn zero_knowledge(held_out: DetectorKind, seed: u64) -> Self {
        Self {
            ensemble: DetectorKind::ALL.into_iter().filter(|&k| k != held_out).collect(),
            ..Self::attack(held_out, seed)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_half_every {
            0 => self.lr,
            n => self.lr * 0.5f64.powi((epoch / n) as i32),
        }
    }

    pub fn detector_kind(&self) -> Result<DetectorKind> {
        self.arch.parse()
    }

    /// Whether the generator keeps the ReLU on its last convolution.
    pub fn generator_final_relu(&self) -> Result<bool> {
        match self.arch.as_str() {
            GENERATOR_ARCH => Ok(true),
            GENERATOR_LINEAR_OUT_ARCH => Ok(false),
            other => Err(Error::Config(format!("unknown generator arch `{other}`"))),
        }
    }

    /// Detectors the attack trains against, in order.
    pub fn targets(&self) -> Result<Vec<DetectorKind>> {
        if self.ensemble.is_empty() {
            self.victim
                .map(|v| vec![v])
                .ok_or_else(|| Error::Config("attack needs a victim or an ensemble".into()))
        } else {
            Ok(self.ensemble.clone())
        }
    }

    /// Ensemble weights, uniform when none are given.
    pub fn weights(&self) -> Result<Vec<f64>> {
        let s = self.targets()?.len();
        if self.beta.is_empty() {
            return Ok(vec![1.0 / s as f64; s]);
        }
        Ok(self.beta.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        match self.stage {
            Stage::Detector => {
                self.detector_kind()?;
            }
            Stage::Attack => {
                self.generator_final_relu()?;
                let targets = self.targets()?;
                if let Some(v) = self.victim {
                    if !self.ensemble.is_empty() && self.ensemble.contains(&v) {
                        return bad(format!("victim {v} must not be part of the ensemble"));
                    }
                }
                let mut uniq = targets.clone();
                uniq.sort();
                uniq.dedup();
                if uniq.len() != targets.len() {
                    return bad("ensemble lists a detector twice".into());
                }
                if !self.beta.is_empty() {
                    if self.beta.len() != targets.len() {
                        return bad(format!("beta has {} weights for {} detectors", self.beta.len(), targets.len()));
                    }
                    if self.beta.iter().any(|&b| !(b.is_finite() && b >= 0.0)) {
                        return bad("beta weights must be non-negative".into());
                    }
                    let sum: f64 = self.beta.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return bad(format!("beta must sum to 1, got {sum}"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_schedule_halves_every_four_epochs() {
        let c = TrainConfig::detector(DetectorKind::PlainNet, 0);
        let lrs: Vec<f64> = (0..9).map(|e| c.lr_at(e)).collect();
        assert_eq!(lrs, [5e-4, 5e-4, 5e-4, 5e-4, 2.5e-4, 2.5e-4, 2.5e-4, 2.5e-4, 1.25e-4]);
        assert_eq!(TrainConfig::attack(DetectorKind::PlainNet, 0).lr_at(31), 1e-4);
    }

    #[test]
    fn zero_knowledge_excludes_victim() {
        for v in DetectorKind::ALL {
            let c = TrainConfig::zero_knowledge(v, 1);
            c.validate().unwrap();
            assert_eq!(c.targets().unwrap().len(), 3);
            assert!(!c.targets().unwrap().contains(&v));
            assert_eq!(c.weights().unwrap(), vec![1.0 / 3.0; 3]);
        }
        let mut c = TrainConfig::zero_knowledge(DetectorKind::ResMini, 1);
        c.ensemble.push(DetectorKind::ResMini);
        assert!(c.validate().is_err());
    }

    #[test]
    fn beta_must_match_and_sum_to_one() {
        let mut c = TrainConfig::zero_knowledge(DetectorKind::PlainNet, 1);
        c.beta = vec![0.5, 0.5];
        assert!(c.validate().is_err());
        c.beta = vec![0.5, 0.25, 0.5];
        assert!(c.validate().is_err());
        c.beta = vec![0.5, 0.25, 0.25];
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_uses_documented_keys() {
        let c = TrainConfig::attack(DetectorKind::HiPassNet, 9);
        let json = c.to_json().unwrap();
        for key in ["stage", "arch", "seed", "lr", "epochs", "lr_half_every", "batch", "alpha", "beta", "ensemble", "victim", "corpus_dir", "out_dir"] {
            assert!(json.contains(&format!("\"{key}\"")), "{key}");
        }
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<TrainConfig>(&json.replace("\"alpha\"", "\"alpha_typo\"")).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = TrainConfig::attack(DetectorKind::PlainNet, 0);
        c.alpha = -1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::detector(DetectorKind::PlainNet, 0);
        c.lr = 0.0;
        assert!(c.validate().is_err());
        c.lr = 1e-3;
        c.arch = "vgg".into();
        assert!(c.validate().is_err());
    }
}
