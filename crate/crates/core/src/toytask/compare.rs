//! The loss-family comparison: one teacher per seed, one student per loss
//! variant, metrics merged deterministically across seeds.

use super::train::{evaluate_recognizer, train_recognizer, RELIABILITY_BINS};
use super::{gen_dataset, Domain, Split, TaskConfig};
use crate::losses::{LossKind, LossSpec};
use crate::metrics::{reliability, Level};
use crate::numcore::mix_seed;
use crate::report::{
    ComparisonReport, ComparisonRow, HistBin, LossHistogram, LossReliability, ReportMeta,
    RowMetrics,
};
use crate::{CoreError, Result};

/// Bin count of the emitted confidence histograms.
pub const HISTOGRAM_BINS: usize = 20;

/// Per-loss prediction pools carried out of one seed so reliability data
/// can be aggregated across seeds.
#[derive(Debug, Clone)]
struct LossPool {
    char_confidences: Vec<f64>,
    char_correct: Vec<bool>,
    word_confidences: Vec<f64>,
    word_correct: Vec<bool>,
}

impl LossPool {
    fn empty() -> Self {
        Self {
            char_confidences: Vec::new(),
            char_correct: Vec::new(),
            word_confidences: Vec::new(),
            word_correct: Vec::new(),
        }
    }
}

/// Everything produced by one replicate seed.
#[derive(Debug, Clone)]
pub struct SeedUnit {
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
    pools: Vec<LossPool>,
}

fn distinct_losses(losses: &[LossSpec]) -> Result<()> {
    for (i, a) in losses.iter().enumerate() {
        for b in &losses[i + 1..] {
            if a.kind == b.kind {
                return Err(CoreError::Config {
                    message: format!("duplicate loss variant '{}' in comparison", a.kind),
                });
            }
        }
    }
    if losses.is_empty() {
        return Err(CoreError::EmptyInput {
            op: "run_comparison",
        });
    }
    Ok(())
}

/// Runs one replicate: trains the hr teacher once, then one lr student per
/// loss variant. A diverging run marks its row failed and the remaining
/// variants still execute; `seed` here is the replicate entry, mixed with
/// the task seed for the effective stream.
pub fn run_comparison_seed(
    task: &TaskConfig,
    losses: &[LossSpec],
    seed: u64,
) -> Result<SeedUnit> {
    distinct_losses(losses)?;
    task.validate()?;
    let cfg = task.with_seed(mix_seed(task.seed, seed));

    let teacher = match train_recognizer(&cfg, Domain::Hr, &LossSpec::new(LossKind::Ce), None) {
        Ok((params, _)) => Ok(params),
        Err(CoreError::Diverged { epoch, loss }) => Err(format!(
            "teacher diverged at epoch {epoch} (loss {loss})"
        )),
        Err(other) => return Err(other),
    };

    let test = gen_dataset(&cfg, Split::Test, Domain::Lr)?;
    let mut rows = Vec::with_capacity(losses.len());
    let mut pools = Vec::with_capacity(losses.len());

    for spec in losses {
        let outcome = match &teacher {
            Err(reason) if spec.kind.requires_teacher() => Err(reason.clone()),
            _ => {
                let teacher_ref = teacher.as_ref().ok().filter(|_| spec.kind.requires_teacher());
                match train_recognizer(&cfg, Domain::Lr, spec, teacher_ref) {
                    Ok((params, _)) => Ok(evaluate_recognizer(&params, &test)?),
                    Err(CoreError::Diverged { epoch, loss }) => {
                        Err(format!("diverged at epoch {epoch} (loss {loss})"))
                    }
                    Err(other) => return Err(other),
                }
            }
        };
        match outcome {
            Ok(eval) => {
                rows.push(ComparisonRow {
                    loss: spec.kind,
                    seed,
                    failure: None,
                    metrics: Some(RowMetrics {
                        accuracy: eval.word_accuracy,
                        wer: eval.wer,
                        cer: eval.cer,
                        ece_word: eval.ece_word,
                        ece_char: eval.ece_char,
                        confidence_std: eval.confidence_std,
                        mean_confidence: eval.mean_max_confidence,
                    }),
                });
                pools.push(LossPool {
                    char_confidences: eval.char_confidences,
                    char_correct: eval.char_correct,
                    word_confidences: eval.word_confidences,
                    word_correct: eval.word_correct,
                });
            }
            Err(reason) => {
                rows.push(ComparisonRow {
                    loss: spec.kind,
                    seed,
                    failure: Some(reason),
                    metrics: None,
                });
                pools.push(LossPool::empty());
            }
        }
    }

    Ok(SeedUnit { seed, rows, pools })
}

/// Merges per-seed units (in the given order) into the final report.
pub fn assemble_comparison(losses: &[LossSpec], units: &[SeedUnit]) -> Result<ComparisonReport> {
    let mut rows = Vec::new();
    let mut merged: Vec<LossPool> = losses.iter().map(|_| LossPool::empty()).collect();
    for unit in units {
        rows.extend(unit.rows.iter().cloned());
        for (target, pool) in merged.iter_mut().zip(&unit.pools) {
            target.char_confidences.extend_from_slice(&pool.char_confidences);
            target.char_correct.extend_from_slice(&pool.char_correct);
            target.word_confidences.extend_from_slice(&pool.word_confidences);
            target.word_correct.extend_from_slice(&pool.word_correct);
        }
    }

    let mut reliability_out = Vec::new();
    let mut hist_out = Vec::new();
    for (spec, pool) in losses.iter().zip(&merged) {
        if pool.char_confidences.is_empty() {
            continue;
        }
        let character = reliability(
            &pool.char_confidences,
            &pool.char_correct,
            RELIABILITY_BINS,
            Level::Character,
        )?;
        let word = reliability(
            &pool.word_confidences,
            &pool.word_correct,
            RELIABILITY_BINS,
            Level::Word,
        )?;
        reliability_out.push(LossReliability {
            loss: spec.kind,
            word,
            character,
        });
        hist_out.push(LossHistogram {
            loss: spec.kind,
            bins: histogram(&pool.char_confidences, HISTOGRAM_BINS),
        });
    }

    let aggregates = ComparisonReport::aggregates_from_rows(&rows);
    Ok(ComparisonReport {
        meta: ReportMeta::default(),
        rows,
        aggregates,
        reliability: reliability_out,
        confidence_hist: hist_out,
    })
}

/// Full sequential comparison over replicate seeds.
pub fn run_comparison(
    task: &TaskConfig,
    losses: &[LossSpec],
    seeds: &[u64],
) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(CoreError::EmptyInput {
            op: "run_comparison",
        });
    }
    let units: Vec<SeedUnit> = seeds
        .iter()
        .map(|&s| run_comparison_seed(task, losses, s))
        .collect::<Result<_>>()?;
    assemble_comparison(losses, &units)
}

fn histogram(values: &[f64], n_bins: usize) -> Vec<HistBin> {
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        let idx = ((v * n_bins as f64).ceil() as usize).saturating_sub(1).min(n_bins - 1);
        counts[idx] += 1;
    }
    let width = 1.0 / n_bins as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toytask::RecognizerParams;

    fn fast_task() -> TaskConfig {
        TaskConfig {
            alphabet_size: 5,
            sequence_length: 3,
            feature_dim: 6,
            hidden_dim: 8,
            embed_dim: 6,
            prior_dim: 4,
            train_size: 60,
            test_size: 40,
            epochs: 4,
            batch_size: 16,
            noise_sigma_hr: 0.0,
            noise_sigma_lr: 0.4,
            seed: 17,
            ..TaskConfig::default()
        }
    }

    #[test]
    fn comparison_is_deterministic() {
        let task = fast_task();
        let losses = [LossSpec::new(LossKind::Ce), LossSpec::new(LossKind::CeSoftenedKl)];
        let a = run_comparison(&task, &losses, &[0, 1]).unwrap();
        let b = run_comparison(&task, &losses, &[0, 1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trivial_config_equalizes_all_variants() {
        // sigma_lr = sigma_hr = 0: no domain gap, everything separable,
        // every trained variant decodes the test set perfectly.
        let task = TaskConfig {
            noise_sigma_hr: 0.0,
            noise_sigma_lr: 0.0,
            epochs: 60,
            ..fast_task()
        };
        let losses: Vec<LossSpec> = [
            LossKind::KlMae,
            LossKind::Ce,
            LossKind::CeKl,
            LossKind::CeSoftenedKl,
        ]
        .into_iter()
        .map(LossSpec::new)
        .collect();
        let report = run_comparison(&task, &losses, &[0]).unwrap();
        for agg in &report.aggregates {
            let mean = agg.mean.expect("run succeeded");
            assert_eq!(
                mean.accuracy, 1.0,
                "{} accuracy {}",
                agg.loss, mean.accuracy
            );
        }
    }

    #[test]
    fn none_matches_untrained_baseline() {
        let task = fast_task();
        let report = run_comparison(&task, &[LossSpec::new(LossKind::None)], &[3]).unwrap();
        let cfg = task.with_seed(mix_seed(task.seed, 3));
        let params = RecognizerParams::init_for(&cfg);
        let test = gen_dataset(&cfg, Split::Test, Domain::Lr).unwrap();
        let eval = evaluate_recognizer(&params, &test).unwrap();
        let row = report.rows[0].metrics.unwrap();
        assert_eq!(row.accuracy, eval.word_accuracy);
        assert_eq!(row.cer, eval.cer);
    }

    #[test]
    fn duplicate_losses_are_rejected() {
        let task = fast_task();
        let dup = [LossSpec::new(LossKind::Ce), LossSpec::new(LossKind::Ce)];
        assert!(run_comparison(&task, &dup, &[0]).is_err());
    }

    #[test]
    fn histogram_counts_sum_to_input_len() {
        let values = [0.0, 0.05, 0.5, 0.951, 1.0];
        let bins = histogram(&values, 20);
        assert_eq!(bins.len(), 20);
        let total: usize = bins.iter().map(|b| b.count).sum();
        assert_eq!(total, values.len());
        assert_eq!(bins[0].count, 2); // 0.0 and 0.05
        assert_eq!(bins[19].count, 2); // 0.951 and 1.0
    }
}
