//! Error-propagation analysis of categorical versus non-categorical priors.
//!
//! Protocol per seed: train a teacher on hr, then corrupt the output-layer
//! columns of a fraction of its classes so its categorical predictions go
//! systematically wrong while the penultimate representation stays intact.
//! Both prior paths read the same corrupted teacher on lr inputs; a linear
//! fusion per prior type is fit by least squares on the training split and
//! the decoded test error is correlated, per sample, against the prior's
//! own error.

use super::data::{gen_dataset, prototype_matrix, Domain, Split};
use super::reconstruct::{fit_fusion, fusion_inputs, guided_reconstruct};
use super::recognizer::{corrupt_teacher, recognizer_forward, RecognizerParams};
use super::train::train_recognizer;
use super::{salts, TaskConfig};
use crate::losses::{LossKind, LossSpec};
use crate::metrics::{edit_distance, error_rates, pearson};
use crate::numcore::{mix_seed, Matrix, Rng};
use crate::prior::{ncap_forward, tp_forward, AdapterParams, PenultimateRep, TextPriorParams};
use crate::report::{PriorAnalysisReport, PriorRow, PriorType, ReportMeta};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorAnalysisOptions {
    /// Fraction of teacher classes whose output columns are randomized.
    pub corruption_fraction: f64,
    /// Softmax temperature of the explicit text-prior path.
    pub tp_tau: f64,
}

impl Default for PriorAnalysisOptions {
    fn default() -> Self {
        Self {
            corruption_fraction: 0.3,
            tp_tau: 1.0,
        }
    }
}

impl PriorAnalysisOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.corruption_fraction) {
            return Err(CoreError::OutOfRange {
                op: "PriorAnalysisOptions::validate",
                name: "corruption_fraction",
                value: self.corruption_fraction,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if !(self.tp_tau > 0.0) || !self.tp_tau.is_finite() {
            return Err(CoreError::NonPositive {
                op: "PriorAnalysisOptions::validate",
                name: "tp_tau",
                value: self.tp_tau,
            });
        }
        Ok(())
    }
}

struct SamplePriors {
    tp_inputs: Matrix,
    ncap_inputs: Matrix,
    /// Argmax of the corrupted teacher's prior logits per position.
    prior_pred: Vec<usize>,
}

fn priors_for(
    samples: &[super::Sample],
    teacher: &RecognizerParams,
    tp: &TextPriorParams,
    adapter: &AdapterParams,
    tau: f64,
) -> Result<Vec<SamplePriors>> {
    samples
        .iter()
        .map(|sample| {
            let (h, _) = recognizer_forward(&sample.features, teacher)?;
            let rep = PenultimateRep::new(h.h.clone())?;
            let (prior_logits, f_tp) = tp_forward(&rep, tp, tau)?;
            let f_ncap = ncap_forward(&rep, adapter)?;
            Ok(SamplePriors {
                tp_inputs: fusion_inputs(sample, &f_tp)?,
                ncap_inputs: fusion_inputs(sample, &f_ncap)?,
                prior_pred: prior_logits.argmax(),
            })
        })
        .collect()
}

fn stack(rows: &[&Matrix]) -> Matrix {
    let cols = rows[0].cols();
    let total: usize = rows.iter().map(|m| m.rows()).sum();
    let mut out = Matrix::zeros(total, cols);
    let mut at = 0;
    for m in rows {
        for r in 0..m.rows() {
            out.row_mut(at).copy_from_slice(m.row(r));
            at += 1;
        }
    }
    out
}

/// Runs one replicate of the analysis and returns the TP and NCAP rows.
pub fn run_prior_analysis_seed(
    task: &TaskConfig,
    opts: &PriorAnalysisOptions,
    seed: u64,
) -> Result<Vec<PriorRow>> {
    task.validate()?;
    opts.validate()?;
    let cfg = task.with_seed(mix_seed(task.seed, seed));

    let (teacher, _) = train_recognizer(&cfg, Domain::Hr, &LossSpec::new(LossKind::Ce), None)?;
    let corrupted = corrupt_teacher(
        &teacher,
        opts.corruption_fraction,
        &mut Rng::new(mix_seed(cfg.seed, salts::CORRUPT)),
    )?;

    let tp = TextPriorParams {
        w_pred: corrupted.w_out.clone(),
        w_proj: Matrix::random_normal(
            cfg.alphabet_size,
            cfg.prior_dim,
            &mut Rng::new(mix_seed(cfg.seed, salts::PROJECTION)),
        ),
    };
    let adapter = AdapterParams::init(
        cfg.embed_dim,
        cfg.prior_dim,
        false,
        &mut Rng::new(mix_seed(cfg.seed, salts::ADAPTER)),
    )?;

    let train = gen_dataset(&cfg, Split::Train, Domain::Lr)?;
    let test = gen_dataset(&cfg, Split::Test, Domain::Lr)?;
    let protos = prototype_matrix(&cfg);

    let train_priors = priors_for(&train, &corrupted, &tp, &adapter, opts.tp_tau)?;
    let test_priors = priors_for(&test, &corrupted, &tp, &adapter, opts.tp_tau)?;

    let clean_rows: Vec<&Matrix> = train.iter().map(|s| &s.clean).collect();
    let targets = stack(&clean_rows);

    let mut rows = Vec::with_capacity(2);
    for prior_type in [PriorType::Tp, PriorType::Ncap] {
        let pick = |p: &SamplePriors| match prior_type {
            PriorType::Tp => p.tp_inputs.clone(),
            PriorType::Ncap => p.ncap_inputs.clone(),
        };
        let train_inputs: Vec<Matrix> = train_priors.iter().map(pick).collect();
        let input_refs: Vec<&Matrix> = train_inputs.iter().collect();
        let fusion = fit_fusion(&stack(&input_refs), &targets)?;

        let l = cfg.sequence_length;
        let mut prior_cer_per_sample = Vec::with_capacity(test.len());
        let mut output_cer_per_sample = Vec::with_capacity(test.len());
        let mut prior_wer_per_sample = Vec::with_capacity(test.len());
        let mut output_wer_per_sample = Vec::with_capacity(test.len());
        let mut refs: Vec<&[usize]> = Vec::with_capacity(test.len());
        let mut prior_hyps: Vec<&[usize]> = Vec::with_capacity(test.len());
        let mut decoded_all: Vec<Vec<usize>> = Vec::with_capacity(test.len());

        for (sample, priors) in test.iter().zip(&test_priors) {
            let inputs = pick(priors);
            let d = cfg.feature_dim;
            // Re-split the concatenated inputs: guided_reconstruct wants the
            // prior feature on its own.
            let prior_feature = crate::prior::PriorFeature {
                f: Matrix::from_vec(
                    l,
                    cfg.prior_dim,
                    (0..l)
                        .flat_map(|r| inputs.row(r)[d..].to_vec())
                        .collect(),
                )?,
            };
            let (_, decoded) = guided_reconstruct(sample, &prior_feature, &fusion, &protos)?;

            let truth = sample.labels.as_slice();
            let prior_edit = edit_distance(&priors.prior_pred, truth);
            let output_edit = edit_distance(decoded.as_slice(), truth);
            prior_cer_per_sample.push(prior_edit as f64 / l as f64);
            output_cer_per_sample.push(output_edit as f64 / l as f64);
            prior_wer_per_sample.push(f64::from(priors.prior_pred != truth));
            output_wer_per_sample.push(f64::from(decoded.as_slice() != truth));
            refs.push(truth);
            prior_hyps.push(&priors.prior_pred);
            decoded_all.push(decoded.as_slice().to_vec());
        }

        let decoded_refs: Vec<&[usize]> = decoded_all.iter().map(Vec::as_slice).collect();
        let prior_rates = error_rates(&refs, &prior_hyps)?;
        let output_rates = error_rates(&refs, &decoded_refs)?;

        let mut note = None;
        let mut correlate = |x: &[f64], y: &[f64]| match pearson(x, y) {
            Ok(v) => Some(v),
            Err(CoreError::UndefinedCorrelation { reason }) => {
                note.get_or_insert(reason);
                None
            }
            Err(_) => None,
        };
        let pearson_cer = correlate(&prior_cer_per_sample, &output_cer_per_sample);
        let pearson_wer = correlate(&prior_wer_per_sample, &output_wer_per_sample);

        rows.push(PriorRow {
            prior: prior_type,
            seed,
            prior_wer: prior_rates.wer,
            prior_cer: prior_rates.cer,
            output_wer: output_rates.wer,
            output_cer: output_rates.cer,
            pearson_wer,
            pearson_cer,
            pearson_note: note,
        });
    }
    Ok(rows)
}

/// Full sequential analysis over replicate seeds.
pub fn run_prior_analysis(
    task: &TaskConfig,
    opts: &PriorAnalysisOptions,
    seeds: &[u64],
) -> Result<PriorAnalysisReport> {
    if seeds.is_empty() {
        return Err(CoreError::EmptyInput {
            op: "run_prior_analysis",
        });
    }
    let mut rows = Vec::with_capacity(seeds.len() * 2);
    for &seed in seeds {
        rows.extend(run_prior_analysis_seed(task, opts, seed)?);
    }
    let aggregates = PriorAnalysisReport::aggregates_from_rows(&rows);
    Ok(PriorAnalysisReport {
        meta: ReportMeta::default(),
        corruption_fraction: opts.corruption_fraction,
        tp_tau: opts.tp_tau,
        rows,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_task() -> TaskConfig {
        TaskConfig {
            alphabet_size: 6,
            sequence_length: 4,
            feature_dim: 8,
            hidden_dim: 10,
            embed_dim: 8,
            prior_dim: 4,
            train_size: 120,
            test_size: 80,
            epochs: 8,
            batch_size: 16,
            noise_sigma_hr: 0.05,
            noise_sigma_lr: 0.7,
            seed: 31,
            ..TaskConfig::default()
        }
    }

    #[test]
    fn analysis_is_deterministic_and_produces_both_rows() {
        let task = fast_task();
        let opts = PriorAnalysisOptions::default();
        let a = run_prior_analysis(&task, &opts, &[0, 1]).unwrap();
        let b = run_prior_analysis(&task, &opts, &[0, 1]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
        assert_eq!(a.aggregates.len(), 2);
    }

    #[test]
    fn degenerate_clean_config_reports_undefined_pearson() {
        // No corruption and no noise: every error rate is zero and the
        // correlation is undefined, reported as absent with a reason.
        let task = TaskConfig {
            noise_sigma_hr: 0.0,
            noise_sigma_lr: 0.0,
            epochs: 20,
            ..fast_task()
        };
        let opts = PriorAnalysisOptions {
            corruption_fraction: 0.0,
            tp_tau: 1.0,
        };
        let report = run_prior_analysis(&task, &opts, &[0]).unwrap();
        for row in &report.rows {
            assert_eq!(row.prior_cer, 0.0);
            assert_eq!(row.output_cer, 0.0);
            assert!(row.pearson_cer.is_none());
            assert!(row.pearson_note.is_some());
        }
    }

    #[test]
    fn corruption_raises_tp_prior_error() {
        let task = fast_task();
        let clean = run_prior_analysis(
            &task,
            &PriorAnalysisOptions {
                corruption_fraction: 0.0,
                tp_tau: 1.0,
            },
            &[0],
        )
        .unwrap();
        let corrupted = run_prior_analysis(
            &task,
            &PriorAnalysisOptions {
                corruption_fraction: 1.0,
                tp_tau: 1.0,
            },
            &[0],
        )
        .unwrap();
        let cer = |r: &PriorAnalysisReport| r.aggregate_for(PriorType::Tp).unwrap().mean_prior_cer;
        assert!(cer(&corrupted) > cer(&clean) + 0.2);
    }
}
