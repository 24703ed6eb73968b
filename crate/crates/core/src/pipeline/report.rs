use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::campaign::{CampaignConfig, InputResult};
use super::metrics::{summarize, MetricsSummary, Scored};
use crate::error::{Error, Result};
use crate::memory::AuditReport;
use crate::smoothing::Prediction;

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub idx: usize,
    pub label: usize,
    pub prediction: String,
    pub correct: bool,
    pub radius: f64,
    pub sigma_star: f64,
    pub p_lower: f64,
    pub adjusted_by_memory: bool,
}

impl From<&InputResult> for ReportRow {
    fn from(r: &InputResult) -> Self {
        Self {
            idx: r.idx,
            label: r.label,
            prediction: r.outcome.prediction.to_string(),
            correct: r.correct(),
            radius: r.outcome.radius,
            sigma_star: r.sigma_star,
            p_lower: r.outcome.p_lower,
            adjusted_by_memory: r.adjusted_by_memory,
        }
    }
}

impl ReportRow {
    pub fn parsed_prediction(&self) -> Result<Prediction> {
        if self.prediction == "ABSTAIN" {
            return Ok(Prediction::Abstain);
        }
        self.prediction
            .parse()
            .map(Prediction::Class)
            .map_err(|_| Error::InvalidConfig(format!("bad prediction field {:?}", self.prediction)))
    }
}

/// Companion document written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub metrics: MetricsSummary,
    pub memory: AuditReport,
    pub config: CampaignConfig,
}

/// `results.csv` becomes `results.json`.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_results_csv(results: &[InputResult], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    if results.is_empty() {
        writer.write_record([
            "idx",
            "label",
            "prediction",
            "correct",
            "radius",
            "sigma_star",
            "p_lower",
            "adjusted_by_memory",
        ])?;
    }
    for r in results {
        writer.serialize(ReportRow::from(r))?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the results CSV and its JSON summary; returns the summary path.
pub fn emit_report(results: &[InputResult], summary: &ReportSummary, path: &Path) -> Result<PathBuf> {
    write_results_csv(results, path)?;
    let json_path = summary_path(path);
    let out = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(out, summary)?;
    Ok(json_path)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
    Ok(rows)
}

/// Recomputes metrics from an emitted results CSV.
pub fn metrics_from_rows(rows: &[ReportRow], radii: &[f64]) -> Result<MetricsSummary> {
    let scored = rows
        .iter()
        .map(|r| {
            Ok(Scored {
                prediction: r.parsed_prediction()?,
                radius: r.radius,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = rows.iter().map(|r| r.label).collect();
    let overlap = rows.iter().filter(|r| r.adjusted_by_memory).count() as u64;
    summarize(&scored, &labels, radii, overlap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::campaign::{default_radii, CampaignMode};
    use crate::smoothing::{CertificationOutcome, Norm};

    fn result(idx: usize, prediction: Prediction, radius: f64) -> InputResult {
        InputResult {
            idx,
            label: 1,
            outcome: CertificationOutcome {
                prediction,
                radius,
                p_lower: 0.75,
                sigma_used: 0.25,
                norm: Norm::L2,
                samples_used: 100,
            },
            sigma_star: 0.25,
            adjusted_by_memory: false,
            class_flips: 0,
        }
    }

    #[test]
    fn single_row_report() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_results_csv(&[result(0, Prediction::Abstain, 0.0)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "idx,label,prediction,correct,radius,sigma_star,p_lower,adjusted_by_memory");
        assert_eq!(lines[1], "0,1,ABSTAIN,false,0.0,0.25,0.75,false");
    }

    #[test]
    fn recomputed_metrics_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let results = vec![
            result(0, Prediction::Class(1), 0.123_456_789_012_345_6),
            result(1, Prediction::Class(0), 0.9),
            result(2, Prediction::Abstain, 0.0),
            result(3, Prediction::Class(1), 1.0 / 3.0),
        ];
        let scored: Vec<Scored> = results.iter().map(InputResult::scored).collect();
        let radii = default_radii();
        let metrics = summarize(&scored, &[1, 1, 1, 1], &radii, 0).unwrap();
        let summary = ReportSummary {
            metrics: metrics.clone(),
            memory: crate::memory::MemoryStore::new().audit(100),
            config: CampaignConfig {
                mode: CampaignMode::FixedSigma,
                cert: Default::default(),
                opt: Default::default(),
                radii: radii.clone(),
                scan: Default::default(),
            },
        };
        let json = emit_report(&results, &summary, &path).unwrap();
        let back: ReportSummary = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
        let rows = read_results_csv(&path).unwrap();
        let recomputed = metrics_from_rows(&rows, &radii).unwrap();
        assert!((recomputed.acr - back.metrics.acr).abs() < 1e-9);
        assert_eq!(recomputed.certified_accuracy, metrics.certified_accuracy);
    }
}
