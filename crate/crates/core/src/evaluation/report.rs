use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "white-box")]
    WhiteBox,
    #[serde(rename = "zero-knowledge")]
    ZeroKnowledge,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::WhiteBox => "white-box",
            Scenario::ZeroKnowledge => "zero-knowledge",
        }
    }
}

/// One (victim, attack, source) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub victim: String,
    pub attack: String,
    pub scenario: Scenario,
    pub source: String,
    pub asr: f64,
    pub mean_psnr_db: f64,
    pub inf_psnr_count: usize,
    pub mean_ssim: f64,
    pub n_images: usize,
}

pub const REPORT_COLUMNS: [&str; 9] =
    ["victim", "attack", "scenario", "source", "asr", "mean_psnr_db", "inf_psnr_count", "mean_ssim", "n_images"];

/// Prefix of the sources produced by the block-alignment probe.
pub const PROBE_SOURCE_PREFIX: &str = "probe";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            let unit = |v: f64| (0.0..=1.0).contains(&v);
            if !unit(r.asr) || !(-1.0..=1.0).contains(&r.mean_ssim) || r.n_images == 0 {
                return Err(Error::invalid(format!("row {}/{} holds out-of-range metrics", r.victim, r.attack)));
            }
            if !(r.mean_psnr_db >= 0.0) {
                return Err(Error::invalid(format!("row {}/{} has negative PSNR", r.victim, r.attack)));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(REPORT_COLUMNS)?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let headers = r.headers()?.clone();
        for col in REPORT_COLUMNS {
            if !headers.iter().any(|h| h == col) {
                return Err(Error::invalid(format!("report is missing column `{col}`")));
            }
        }
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&bytes).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn extend(&mut self, other: MetricsReport) {
        self.rows.extend(other.rows);
    }
}

/// Numeric summary table with an averages row.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryTable {
    pub title: String,
    pub key_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub rows: Vec<(Vec<String>, Vec<f64>)>,
    pub averages: Vec<f64>,
}

impl SummaryTable {
    fn new(title: &str, key_columns: &[&str], value_columns: Vec<String>, rows: Vec<(Vec<String>, Vec<f64>)>) -> Self {
        let n = rows.len().max(1) as f64;
        let averages = (0..value_columns.len())
            .map(|c| rows.iter().map(|(_, v)| v[c]).sum::<f64>() / n)
            .collect();
        Self {
            title: title.into(),
            key_columns: key_columns.iter().map(|s| s.to_string()).collect(),
            value_columns,
            rows,
            averages,
        }
    }

    fn render(&self, out: &mut String) {
        let _ = writeln!(out, "## {}\n", self.title);
        let header: Vec<&str> =
            self.key_columns.iter().chain(&self.value_columns).map(String::as_str).collect();
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
        let fmt_row = |keys: &[String], vals: &[f64]| {
            let cells: Vec<String> = keys
                .iter()
                .cloned()
                .chain(vals.iter().zip(&self.value_columns).map(|(v, c)| fmt_value(c, *v)))
                .collect();
            format!("| {} |", cells.join(" | "))
        };
        for (k, v) in &self.rows {
            let _ = writeln!(out, "{}", fmt_row(k, v));
        }
        let mut avg_keys = vec!["Avg.".to_string()];
        avg_keys.resize(self.key_columns.len(), String::new());
        let _ = writeln!(out, "{}\n", fmt_row(&avg_keys, &self.averages));
    }
}

fn fmt_value(column: &str, v: f64) -> String {
    if column.contains("PSNR") {
        if v.is_finite() { format!("{v:.2}") } else { "inf".into() }
    } else {
        format!("{v:.4}")
    }
}

/// Attack-success tables in the layout victim x source with quality columns.
fn scenario_table(report: &MetricsReport, scenario: Scenario, title: &str) -> Option<SummaryTable> {
    let rows: Vec<&MetricsRow> = report
        .rows
        .iter()
        .filter(|r| r.scenario == scenario && !r.source.starts_with(PROBE_SOURCE_PREFIX))
        .collect();
    if rows.is_empty() {
        return None;
    }
    let sources: Vec<String> = rows.iter().map(|r| r.source.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let keys: Vec<(String, String)> = {
        let mut seen = Vec::new();
        for r in &rows {
            let k = (r.victim.clone(), r.attack.clone());
            if !seen.contains(&k) {
                seen.push(k);
            }
        }
        seen
    };
    let mut value_columns: Vec<String> = sources.iter().map(|s| format!("ASR {s}")).collect();
    value_columns.extend(["ASR Avg.".to_string(), "M_PSNR".to_string(), "M_SSIM".to_string()]);
    let table_rows = keys
        .into_iter()
        .map(|(victim, attack)| {
            let cells: Vec<&MetricsRow> =
                rows.iter().copied().filter(|r| r.victim == victim && r.attack == attack).collect();
            let mut vals: Vec<f64> = sources
                .iter()
                .map(|s| cells.iter().find(|r| &r.source == s).map_or(f64::NAN, |r| r.asr))
                .collect();
            let n = cells.len() as f64;
            vals.push(cells.iter().map(|r| r.asr).sum::<f64>() / n);
            vals.push(cells.iter().map(|r| r.mean_psnr_db).sum::<f64>() / n);
            vals.push(cells.iter().map(|r| r.mean_ssim).sum::<f64>() / n);
            (vec![victim, attack], vals)
        })
        .collect();
    Some(SummaryTable::new(title, &["Victim", "Attack"], value_columns, table_rows))
}

fn probe_table(report: &MetricsReport) -> Option<SummaryTable> {
    let rows: Vec<&MetricsRow> = report.rows.iter().filter(|r| r.source.starts_with(PROBE_SOURCE_PREFIX)).collect();
    if rows.is_empty() {
        return None;
    }
    let sources: Vec<String> = rows.iter().map(|r| r.source.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in &rows {
        let k = (r.victim.clone(), r.attack.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let table_rows = keys
        .into_iter()
        .map(|(victim, attack)| {
            let vals = sources
                .iter()
                .map(|s| {
                    rows.iter()
                        .find(|r| r.victim == victim && r.attack == attack && &r.source == s)
                        .map_or(f64::NAN, |r| r.asr)
                })
                .collect();
            (vec![victim, attack], vals)
        })
        .collect();
    let cols = sources.iter().map(|s| format!("ASR {s}")).collect();
    Some(SummaryTable::new("Block alignment", &["Victim", "Attack"], cols, table_rows))
}

/// Baseline, white-box, zero-knowledge and block-alignment tables, skipping empty ones.
pub fn summary_tables(report: &MetricsReport) -> Vec<SummaryTable> {
    [
        scenario_table(report, Scenario::Baseline, "Unattacked fakes"),
        scenario_table(report, Scenario::WhiteBox, "White-box attack"),
        scenario_table(report, Scenario::ZeroKnowledge, "Zero-knowledge attack"),
        probe_table(report),
    ]
    .into_iter()
    .flatten()
    .collect()
}

pub fn render_markdown(report: &MetricsReport) -> String {
    let mut out = String::from("# Attack success rates and image quality\n\n");
    for t in summary_tables(report) {
        t.render(&mut out);
    }
    out
}
