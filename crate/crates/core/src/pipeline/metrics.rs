use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::smoothing::Prediction;

/// Prediction and certified radius for one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub prediction: Prediction,
    pub radius: f64,
}

impl Scored {
    fn certified_correct(&self, label: usize) -> bool {
        self.prediction == Prediction::Class(label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub radii: Vec<f64>,
    pub certified_accuracy: Vec<f64>,
    pub acr: f64,
    pub abstain_rate: f64,
    pub overlap_events: u64,
    pub count: usize,
}

fn check_aligned(results: &[Scored], labels: &[usize]) -> Result<()> {
    if results.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: results.len(),
            got: labels.len(),
        });
    }
    Ok(())
}

/// Radii must start at 0 and increase strictly.
pub fn validate_radii(radii: &[f64]) -> Result<()> {
    if radii.first() != Some(&0.0) || radii.windows(2).any(|w| !(w[1] > w[0])) || radii.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidConfig(
            "radii grid must start at 0 and be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Fraction of inputs predicted correctly with radius at least `r`, for each
/// `r` in `radii`. Abstentions never count.
pub fn certified_accuracy_curve(results: &[Scored], labels: &[usize], radii: &[f64]) -> Result<Vec<f64>> {
    check_aligned(results, labels)?;
    if results.is_empty() {
        return Ok(vec![0.0; radii.len()]);
    }
    let n = results.len() as f64;
    Ok(radii
        .iter()
        .map(|&r| {
            let hits = results
                .iter()
                .zip(labels)
                .filter(|(s, &y)| s.certified_correct(y) && s.radius >= r)
                .count();
            hits as f64 / n
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageRadius {
    pub value: f64,
    /// Set when there were no inputs and the value defaulted to 0.
    pub empty: bool,
}

/// Mean of `radius * 1{correct}` over all inputs.
pub fn average_certified_radius(results: &[Scored], labels: &[usize]) -> Result<AverageRadius> {
    check_aligned(results, labels)?;
    if results.is_empty() {
        warn!("average certified radius of an empty set reported as 0");
        return Ok(AverageRadius { value: 0.0, empty: true });
    }
    let total: f64 = results
        .iter()
        .zip(labels)
        .filter(|(s, &y)| s.certified_correct(y))
        .map(|(s, _)| s.radius)
        .sum();
    Ok(AverageRadius {
        value: total / results.len() as f64,
        empty: false,
    })
}

pub fn summarize(results: &[Scored], labels: &[usize], radii: &[f64], overlap_events: u64) -> Result<MetricsSummary> {
    validate_radii(radii)?;
    let certified_accuracy = certified_accuracy_curve(results, labels, radii)?;
    let acr = average_certified_radius(results, labels)?.value;
    let abstain_rate = if results.is_empty() {
        0.0
    } else {
        results.iter().filter(|s| s.prediction == Prediction::Abstain).count() as f64 / results.len() as f64
    };
    Ok(MetricsSummary {
        radii: radii.to_vec(),
        certified_accuracy,
        acr,
        abstain_rate,
        overlap_events,
        count: results.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(class: Option<usize>, radius: f64) -> Scored {
        Scored {
            prediction: class.map_or(Prediction::Abstain, Prediction::Class),
            radius,
        }
    }

    #[test]
    fn curve_counts_correct_and_large_enough() {
        let results = [s(Some(0), 0.3), s(Some(1), 0.6), s(Some(0), 0.9)];
        let labels = [0, 1, 1];
        let curve = certified_accuracy_curve(&results, &labels, &[0.0, 0.5]).unwrap();
        assert!((curve[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((curve[0] - 2.0 / 3.0).abs() < 1e-15);
        let abstained = [s(None, 0.0), s(None, 0.0)];
        assert_eq!(certified_accuracy_curve(&abstained, &[0, 1], &[0.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(certified_accuracy_curve(&abstained, &[0], &[0.0]).is_err());
    }

    #[test]
    fn acr_examples() {
        let results = [s(Some(0), 1.0), s(Some(0), 0.5), s(Some(1), 0.0)];
        let acr = average_certified_radius(&results, &[0, 1, 1]).unwrap();
        assert!((acr.value - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(average_certified_radius(&[s(Some(1), 2.0)], &[0]).unwrap().value, 0.0);
        assert_eq!(average_certified_radius(&[s(Some(0), 0.7)], &[0]).unwrap().value, 0.7);
        let empty = average_certified_radius(&[], &[]).unwrap();
        assert!(empty.empty && empty.value == 0.0);
    }

    #[test]
    fn radii_grid_validation() {
        assert!(validate_radii(&[0.0, 0.5, 1.0]).is_ok());
        assert!(validate_radii(&[0.1, 0.5]).is_err());
        assert!(validate_radii(&[0.0, 0.5, 0.5]).is_err());
        assert!(validate_radii(&[]).is_err());
    }

    #[test]
    fn summary_abstain_rate() {
        let results = [s(None, 0.0), s(Some(0), 0.2)];
        let m = summarize(&results, &[0, 0], &[0.0, 0.1], 3).unwrap();
        assert_eq!(m.abstain_rate, 0.5);
        assert_eq!(m.overlap_events, 3);
        assert_eq!(m.certified_accuracy, vec![0.5, 0.5]);
    }
}
