//! Result containers emitted by the experiment harness. Aggregates are
//! always recomputable from the rows, and the CSV/JSON writers in the CLI
//! crate serialize these types losslessly.

use serde::{Deserialize, Serialize};

use crate::losses::LossKind;
use crate::metrics::{population_std, ReliabilityReport};

/// Provenance stamped onto every report by the harness.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub version: String,
}

/// Scalar metrics of one trained student on its test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    pub accuracy: f64,
    pub wer: f64,
    pub cer: f64,
    pub ece_word: f64,
    pub ece_char: f64,
    pub confidence_std: f64,
    pub mean_confidence: f64,
}

impl RowMetrics {
    pub const FIELDS: [&'static str; 7] = [
        "accuracy",
        "wer",
        "cer",
        "ece_word",
        "ece_char",
        "confidence_std",
        "mean_confidence",
    ];

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.accuracy,
            self.wer,
            self.cer,
            self.ece_word,
            self.ece_char,
            self.confidence_std,
            self.mean_confidence,
        ]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        Self {
            accuracy: v[0],
            wer: v[1],
            cer: v[2],
            ece_word: v[3],
            ece_char: v[4],
            confidence_std: v[5],
            mean_confidence: v[6],
        }
    }
}

/// One (loss, seed) replicate. `metrics` is absent when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub loss: LossKind,
    pub seed: u64,
    /// Empty on success, otherwise the failure reason.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RowMetrics>,
}

impl ComparisonRow {
    pub fn ok(&self) -> bool {
        self.failure.is_none() && self.metrics.is_some()
    }
}

/// Cross-seed mean and population standard deviation per loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossAggregate {
    pub loss: LossKind,
    pub runs_ok: usize,
    pub runs_failed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<RowMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<RowMetrics>,
}

/// Word- and character-level reliability data pooled across seeds for one
/// loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReliability {
    pub loss: LossKind,
    pub word: ReliabilityReport,
    pub character: ReliabilityReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Histogram of per-character max probabilities pooled across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistogram {
    pub loss: LossKind,
    pub bins: Vec<HistBin>,
}

/// Full output of the loss-family comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    #[serde(default)]
    pub meta: ReportMeta,
    pub rows: Vec<ComparisonRow>,
    pub aggregates: Vec<LossAggregate>,
    pub reliability: Vec<LossReliability>,
    pub confidence_hist: Vec<LossHistogram>,
}

impl ComparisonReport {
    /// Recomputes the per-loss aggregates from rows, preserving first-seen
    /// loss order.
    pub fn aggregates_from_rows(rows: &[ComparisonRow]) -> Vec<LossAggregate> {
        let mut order: Vec<LossKind> = Vec::new();
        for row in rows {
            if !order.contains(&row.loss) {
                order.push(row.loss);
            }
        }
        order
            .into_iter()
            .map(|loss| {
                let ok: Vec<&RowMetrics> = rows
                    .iter()
                    .filter(|r| r.loss == loss && r.ok())
                    .filter_map(|r| r.metrics.as_ref())
                    .collect();
                let failed = rows.iter().filter(|r| r.loss == loss && !r.ok()).count();
                let (mean, std) = if ok.is_empty() {
                    (None, None)
                } else {
                    let mut mean = [0.0f64; 7];
                    let mut std = [0.0f64; 7];
                    for field in 0..7 {
                        let values: Vec<f64> = ok.iter().map(|m| m.as_array()[field]).collect();
                        mean[field] = values.iter().sum::<f64>() / values.len() as f64;
                        std[field] = population_std(&values);
                    }
                    (
                        Some(RowMetrics::from_array(mean)),
                        Some(RowMetrics::from_array(std)),
                    )
                };
                LossAggregate {
                    loss,
                    runs_ok: ok.len(),
                    runs_failed: failed,
                    mean,
                    std,
                }
            })
            .collect()
    }

    pub fn aggregate_for(&self, loss: LossKind) -> Option<&LossAggregate> {
        self.aggregates.iter().find(|a| a.loss == loss)
    }

    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| !r.ok())
    }
}

/// Which prior path a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorType {
    /// Explicit categorical path: softmax probabilities projected.
    Tp,
    /// Adapter on the penultimate representation.
    Ncap,
}

impl PriorType {
    pub fn name(self) -> &'static str {
        match self {
            PriorType::Tp => "tp",
            PriorType::Ncap => "ncap",
        }
    }
}

impl std::fmt::Display for PriorType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One (prior type, seed) replicate of the error-propagation analysis.
///
/// Pearson coefficients are over per-sample (prior error, output error)
/// pairs; they are absent, with a reason, when either side is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRow {
    pub prior: PriorType,
    pub seed: u64,
    pub prior_wer: f64,
    pub prior_cer: f64,
    pub output_wer: f64,
    pub output_cer: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson_wer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson_cer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson_note: Option<String>,
}

/// Cross-seed means per prior type. Pearson means cover only the seeds
/// where the coefficient was defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorAggregate {
    pub prior: PriorType,
    pub seeds: usize,
    pub mean_prior_wer: f64,
    pub mean_prior_cer: f64,
    pub mean_output_wer: f64,
    pub mean_output_cer: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_pearson_wer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_pearson_cer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pearson_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorAnalysisReport {
    #[serde(default)]
    pub meta: ReportMeta,
    pub corruption_fraction: f64,
    pub tp_tau: f64,
    pub rows: Vec<PriorRow>,
    pub aggregates: Vec<PriorAggregate>,
}

impl PriorAnalysisReport {
    pub fn aggregates_from_rows(rows: &[PriorRow]) -> Vec<PriorAggregate> {
        [PriorType::Tp, PriorType::Ncap]
            .into_iter()
            .filter_map(|prior| {
                let mine: Vec<&PriorRow> = rows.iter().filter(|r| r.prior == prior).collect();
                if mine.is_empty() {
                    return None;
                }
                let n = mine.len() as f64;
                let mean = |f: fn(&PriorRow) -> f64| mine.iter().map(|r| f(r)).sum::<f64>() / n;
                let pearson_mean = |f: fn(&PriorRow) -> Option<f64>| {
                    let defined: Vec<f64> = mine.iter().filter_map(|r| f(r)).collect();
                    if defined.is_empty() {
                        None
                    } else {
                        Some(defined.iter().sum::<f64>() / defined.len() as f64)
                    }
                };
                let mean_pearson_wer = pearson_mean(|r| r.pearson_wer);
                let mean_pearson_cer = pearson_mean(|r| r.pearson_cer);
                let note = if mean_pearson_wer.is_none() || mean_pearson_cer.is_none() {
                    mine.iter().find_map(|r| r.pearson_note.clone())
                } else {
                    None
                };
                Some(PriorAggregate {
                    prior,
                    seeds: mine.len(),
                    mean_prior_wer: mean(|r| r.prior_wer),
                    mean_prior_cer: mean(|r| r.prior_cer),
                    mean_output_wer: mean(|r| r.output_wer),
                    mean_output_cer: mean(|r| r.output_cer),
                    mean_pearson_wer,
                    mean_pearson_cer,
                    pearson_note: note,
                })
            })
            .collect()
    }

    pub fn aggregate_for(&self, prior: PriorType) -> Option<&PriorAggregate> {
        self.aggregates.iter().find(|a| a.prior == prior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(loss: LossKind, seed: u64, accuracy: f64) -> ComparisonRow {
        ComparisonRow {
            loss,
            seed,
            failure: None,
            metrics: Some(RowMetrics {
                accuracy,
                wer: 1.0 - accuracy,
                cer: 0.1,
                ece_word: 0.2,
                ece_char: 0.15,
                confidence_std: 0.05,
                mean_confidence: 0.9,
            }),
        }
    }

    #[test]
    fn aggregates_average_ok_rows_only() {
        let rows = vec![
            row(LossKind::Ce, 0, 0.8),
            row(LossKind::Ce, 1, 0.6),
            ComparisonRow {
                loss: LossKind::Ce,
                seed: 2,
                failure: Some("diverged".to_string()),
                metrics: None,
            },
        ];
        let aggs = ComparisonReport::aggregates_from_rows(&rows);
        assert_eq!(aggs.len(), 1);
        let agg = &aggs[0];
        assert_eq!(agg.runs_ok, 2);
        assert_eq!(agg.runs_failed, 1);
        let mean = agg.mean.unwrap();
        assert!((mean.accuracy - 0.7).abs() < 1e-15);
        let std = agg.std.unwrap();
        assert!((std.accuracy - 0.1).abs() < 1e-15);
    }

    #[test]
    fn all_failed_rows_produce_empty_aggregate() {
        let rows = vec![ComparisonRow {
            loss: LossKind::Ce,
            seed: 0,
            failure: Some("nope".to_string()),
            metrics: None,
        }];
        let aggs = ComparisonReport::aggregates_from_rows(&rows);
        assert_eq!(aggs[0].runs_ok, 0);
        assert!(aggs[0].mean.is_none());
    }

    #[test]
    fn prior_aggregates_skip_undefined_pearsons() {
        let rows = vec![
            PriorRow {
                prior: PriorType::Tp,
                seed: 0,
                prior_wer: 0.5,
                prior_cer: 0.3,
                output_wer: 0.4,
                output_cer: 0.2,
                pearson_wer: Some(0.8),
                pearson_cer: None,
                pearson_note: Some("constant input".to_string()),
            },
            PriorRow {
                prior: PriorType::Tp,
                seed: 1,
                prior_wer: 0.7,
                prior_cer: 0.5,
                output_wer: 0.6,
                output_cer: 0.4,
                pearson_wer: Some(0.6),
                pearson_cer: Some(0.5),
                pearson_note: None,
            },
        ];
        let aggs = PriorAnalysisReport::aggregates_from_rows(&rows);
        let tp = &aggs[0];
        assert_eq!(tp.seeds, 2);
        assert!((tp.mean_pearson_wer.unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(tp.mean_pearson_cer, Some(0.5));
        assert!((tp.mean_prior_wer - 0.6).abs() < 1e-15);
    }
}
