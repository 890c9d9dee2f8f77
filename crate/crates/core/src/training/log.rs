use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_COLUMNS: [&str; 6] = ["epoch", "loss_total", "loss_perceptual", "loss_classification", "lr", "elapsed_s"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_perceptual: f64,
    pub loss_classification: f64,
    pub lr: f64,
    pub elapsed_s: f64,
    /// Running training accuracy (detectors only, not written to the CSV).
    #[serde(skip)]
    pub train_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.records.is_empty() {
            w.write_record(LOG_COLUMNS)?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
        Ok(Self { records })
    }

    /// Equality of everything except wall-clock time.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.loss_total.to_bits() == b.loss_total.to_bits()
                    && a.loss_perceptual.to_bits() == b.loss_perceptual.to_bits()
                    && a.loss_classification.to_bits() == b.loss_classification.to_bits()
                    && a.lr.to_bits() == b.lr.to_bits()
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let log = TrainLog {
            records: vec![EpochRecord {
                epoch: 1,
                loss_total: 0.7,
                loss_perceptual: 0.01,
                loss_classification: 0.5,
                lr: 1e-4,
                elapsed_s: 2.5,
                train_accuracy: None,
            }],
        };
        let text = String::from_utf8(log.to_csv().unwrap()).unwrap();
        assert!(text.starts_with("epoch,loss_total,loss_perceptual,loss_classification,lr,elapsed_s\n"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        log.write_csv(&p).unwrap();
        assert_eq!(TrainLog::read_csv(&p).unwrap(), log);
    }
}
