//! Reliability binning, expected calibration error, and confidence-spread
//! statistics.

use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Granularity a reliability report was computed at.
///
/// Character-level treats each sequence position as one prediction with its
/// max softmax probability as the confidence. Word-level treats the whole
/// sequence as one prediction whose confidence is the product of the
/// per-position max probabilities; that product rule is this crate's
/// convention, stated here because there is no single standard one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Word,
    Character,
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::Word => "word",
            Level::Character => "character",
        })
    }
}

/// One equal-width confidence bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Binned confidence-versus-accuracy data with its count-weighted expected
/// calibration error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub level: Level,
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
    pub total: usize,
}

/// Bins predictions into `n_bins` equal-width, right-closed intervals over
/// `(0, 1]` and computes the expected calibration error
/// `sum_b (count_b / total) * |accuracy_b - confidence_b|`.
///
/// A confidence of exactly 0 lands in the first bin.
pub fn reliability(
    confidences: &[f64],
    correct: &[bool],
    n_bins: usize,
    level: Level,
) -> Result<ReliabilityReport> {
    if confidences.len() != correct.len() {
        return Err(CoreError::ShapeMismatch {
            op: "reliability",
            left: format!("{} confidences", confidences.len()),
            right: format!("{} outcomes", correct.len()),
        });
    }
    if n_bins == 0 {
        return Err(CoreError::NonPositive {
            op: "reliability",
            name: "n_bins",
            value: 0.0,
        });
    }
    for &c in confidences {
        if !(0.0..=1.0).contains(&c) {
            return Err(CoreError::OutOfRange {
                op: "reliability",
                name: "confidence",
                value: c,
                lo: 0.0,
                hi: 1.0,
            });
        }
    }

    let mut conf_sum = vec![0.0f64; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        // Right-closed bins ((k)/n, (k+1)/n]: ceil(c*n) - 1, with 0 mapped
        // into the first bin.
        let idx = ((c * n_bins as f64).ceil() as usize).saturating_sub(1).min(n_bins - 1);
        conf_sum[idx] += c;
        hits[idx] += usize::from(ok);
        counts[idx] += 1;
    }

    let total = confidences.len();
    let width = 1.0 / n_bins as f64;
    let mut bins = Vec::with_capacity(n_bins);
    let mut ece = 0.0;
    for b in 0..n_bins {
        let count = counts[b];
        let (mean_confidence, accuracy) = if count > 0 {
            (conf_sum[b] / count as f64, hits[b] as f64 / count as f64)
        } else {
            (0.0, 0.0)
        };
        if count > 0 {
            ece += (count as f64 / total as f64) * (accuracy - mean_confidence).abs();
        }
        bins.push(ReliabilityBin {
            lo: b as f64 * width,
            hi: (b + 1) as f64 * width,
            mean_confidence,
            accuracy,
            count,
        });
    }

    Ok(ReliabilityReport {
        level,
        bins,
        ece,
        total,
    })
}

/// Population standard deviation of each row's maximum probability.
pub fn confidence_std(prob_rows: &[Vec<f64>]) -> Result<f64> {
    if prob_rows.is_empty() {
        return Err(CoreError::EmptyInput {
            op: "confidence_std",
        });
    }
    let mut maxes = Vec::with_capacity(prob_rows.len());
    for row in prob_rows {
        if row.is_empty() {
            return Err(CoreError::EmptyInput {
                op: "confidence_std",
            });
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
            return Err(CoreError::Config {
                message: format!("confidence_std: row is not a probability vector (sum {sum})"),
            });
        }
        maxes.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(population_std(&maxes))
}

/// Population standard deviation (divides by `N`).
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}
