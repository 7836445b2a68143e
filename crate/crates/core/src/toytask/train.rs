//! Minibatch SGD for the recognizer and the test-set evaluation shared by
//! the comparison harness.

use super::recognizer::{batch_gradients, recognizer_forward, RecognizerParams};
use super::{gen_dataset, salts, Domain, Sample, Split, TaskConfig};
use crate::losses::{HardLabels, LogitsMatrix, LossSpec};
use crate::metrics::{error_rates, reliability, population_std, Level};
use crate::numcore::{mix_seed, softmax_temp, Matrix, Rng};
use crate::{CoreError, Result};

/// Bin count used for every reliability/ECE computation in the experiment.
pub const RELIABILITY_BINS: usize = 10;

/// Per-epoch training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Mean batch loss per epoch.
    pub loss: Vec<f64>,
    /// Whole-sequence test accuracy per epoch.
    pub test_accuracy: Vec<f64>,
    /// Mean per-position max softmax probability on the test set.
    pub mean_max_confidence: Vec<f64>,
    /// Character-level ECE on the test set.
    pub ece: Vec<f64>,
}

/// Everything the comparison report needs from one trained model on one
/// test set, plus the raw per-prediction pools for cross-seed reliability
/// diagrams.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub word_accuracy: f64,
    pub wer: f64,
    pub cer: f64,
    pub ece_word: f64,
    pub ece_char: f64,
    pub confidence_std: f64,
    pub mean_max_confidence: f64,
    pub char_confidences: Vec<f64>,
    pub char_correct: Vec<bool>,
    pub word_confidences: Vec<f64>,
    pub word_correct: Vec<bool>,
}

/// Stacks `L`-row sample matrices for a set of sample indices into one
/// `(n*L) x D` matrix plus concatenated labels.
fn stack_samples(data: &[Sample], indices: &[usize]) -> (Matrix, HardLabels) {
    let l = data[0].features.rows();
    let d = data[0].features.cols();
    let mut x = Matrix::zeros(indices.len() * l, d);
    let mut labels = Vec::with_capacity(indices.len() * l);
    for (slot, &i) in indices.iter().enumerate() {
        let sample = &data[i];
        for r in 0..l {
            x.row_mut(slot * l + r).copy_from_slice(sample.features.row(r));
        }
        labels.extend_from_slice(sample.labels.as_slice());
    }
    (x, HardLabels::new(labels))
}

/// Precomputed teacher logits for whole-dataset row `i*L + r`.
fn teacher_logits_for(
    teacher: &RecognizerParams,
    paired: &[Sample],
) -> Result<Matrix> {
    let indices: Vec<usize> = (0..paired.len()).collect();
    let (x, _) = stack_samples(paired, &indices);
    let (_, logits) = recognizer_forward(&x, teacher)?;
    Ok(logits.values().clone())
}

fn slice_rows(src: &Matrix, indices: &[usize], rows_per_index: usize) -> Matrix {
    let mut out = Matrix::zeros(indices.len() * rows_per_index, src.cols());
    for (slot, &i) in indices.iter().enumerate() {
        for r in 0..rows_per_index {
            out.row_mut(slot * rows_per_index + r)
                .copy_from_slice(src.row(i * rows_per_index + r));
        }
    }
    out
}

/// Trains a fresh recognizer on the given domain with minibatch SGD.
///
/// Distillation variants read the teacher's logits on the same inputs the
/// student sees, as in standard knowledge distillation. A teacher trained on
/// the clean domain and read on noisy inputs is exactly the domain-gap
/// setting the soft labels are meant to bridge: its softened distributions
/// carry per-sample difficulty instead of collapsing to one-hot.
pub fn train_recognizer(
    config: &TaskConfig,
    domain: Domain,
    spec: &LossSpec,
    teacher: Option<&RecognizerParams>,
) -> Result<(RecognizerParams, TrainLog)> {
    config.validate()?;
    spec.validate()?;
    if spec.kind.requires_teacher() && teacher.is_none() {
        return Err(CoreError::Config {
            message: format!("loss '{}' needs a teacher recognizer", spec.kind),
        });
    }

    let train = gen_dataset(config, Split::Train, domain)?;
    let test = gen_dataset(config, Split::Test, domain)?;
    let l = config.sequence_length;

    let teacher_logits = match teacher {
        Some(t) if spec.kind.requires_teacher() => Some(teacher_logits_for(t, &train)?),
        _ => None,
    };

    let mut params = RecognizerParams::init_for(config);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = Rng::new(mix_seed(config.seed, salts::BATCH_ORDER));

    let mut log = TrainLog {
        loss: Vec::with_capacity(config.epochs),
        test_accuracy: Vec::with_capacity(config.epochs),
        mean_max_confidence: Vec::with_capacity(config.epochs),
        ece: Vec::with_capacity(config.epochs),
    };

    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (x, labels) = stack_samples(&train, chunk);
            let batch_teacher = match &teacher_logits {
                Some(full) => Some(LogitsMatrix::new(slice_rows(full, chunk, l))?),
                None => None,
            };
            let labels_arg = spec.kind.requires_labels().then_some(&labels);
            let (value, grads) =
                batch_gradients(&params, &x, labels_arg, batch_teacher.as_ref(), spec)?;
            if !value.is_finite() {
                return Err(CoreError::Diverged { epoch, loss: value });
            }
            params.apply_scaled(&grads, -config.learning_rate)?;
            if !params.all_finite() {
                return Err(CoreError::Diverged { epoch, loss: value });
            }
            epoch_loss += value;
            batches += 1;
        }

        let eval = evaluate_recognizer(&params, &test)?;
        log.loss.push(epoch_loss / batches as f64);
        log.test_accuracy.push(eval.word_accuracy);
        log.mean_max_confidence.push(eval.mean_max_confidence);
        log.ece.push(eval.ece_char);
    }

    Ok((params, log))
}

/// Evaluates a recognizer on a dataset: error rates, calibration at both
/// granularities, and confidence statistics.
pub fn evaluate_recognizer(params: &RecognizerParams, data: &[Sample]) -> Result<EvalSummary> {
    if data.is_empty() {
        return Err(CoreError::EmptyInput {
            op: "evaluate_recognizer",
        });
    }
    let l = data[0].features.rows();
    let indices: Vec<usize> = (0..data.len()).collect();
    let (x, _) = stack_samples(data, &indices);
    let (_, logits) = recognizer_forward(&x, params)?;

    let mut char_confidences = Vec::with_capacity(data.len() * l);
    let mut char_correct = Vec::with_capacity(data.len() * l);
    let mut word_confidences = Vec::with_capacity(data.len());
    let mut word_correct = Vec::with_capacity(data.len());
    let mut refs: Vec<&[usize]> = Vec::with_capacity(data.len());
    let mut hyps: Vec<Vec<usize>> = Vec::with_capacity(data.len());

    for (i, sample) in data.iter().enumerate() {
        let mut word_conf = 1.0;
        let mut all_right = true;
        let mut hyp = Vec::with_capacity(l);
        for r in 0..l {
            let row = logits.row(i * l + r);
            let p = softmax_temp(row, 1.0)?;
            let (mut best, mut best_p) = (0usize, p[0]);
            for (c, &pc) in p.iter().enumerate() {
                if pc > best_p {
                    best = c;
                    best_p = pc;
                }
            }
            let right = best == sample.labels.get(r);
            char_confidences.push(best_p);
            char_correct.push(right);
            word_conf *= best_p;
            all_right &= right;
            hyp.push(best);
        }
        word_confidences.push(word_conf);
        word_correct.push(all_right);
        refs.push(sample.labels.as_slice());
        hyps.push(hyp);
    }

    let hyp_slices: Vec<&[usize]> = hyps.iter().map(Vec::as_slice).collect();
    let rates = error_rates(&refs, &hyp_slices)?;
    let char_rel = reliability(&char_confidences, &char_correct, RELIABILITY_BINS, Level::Character)?;
    let word_rel = reliability(&word_confidences, &word_correct, RELIABILITY_BINS, Level::Word)?;
    let hits = word_correct.iter().filter(|&&b| b).count();

    Ok(EvalSummary {
        word_accuracy: hits as f64 / data.len() as f64,
        wer: rates.wer,
        cer: rates.cer,
        ece_word: word_rel.ece,
        ece_char: char_rel.ece,
        confidence_std: population_std(&char_confidences),
        mean_max_confidence: char_confidences.iter().sum::<f64>()
            / char_confidences.len() as f64,
        char_confidences,
        char_correct,
        word_confidences,
        word_correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;

    fn fast_config() -> TaskConfig {
        TaskConfig {
            alphabet_size: 5,
            sequence_length: 3,
            feature_dim: 6,
            hidden_dim: 8,
            embed_dim: 6,
            prior_dim: 4,
            train_size: 60,
            test_size: 40,
            epochs: 5,
            batch_size: 16,
            noise_sigma_hr: 0.0,
            noise_sigma_lr: 0.3,
            seed: 3,
            ..TaskConfig::default()
        }
    }

    #[test]
    fn none_loss_leaves_parameters_at_init() {
        let cfg = fast_config();
        let (params, log) =
            train_recognizer(&cfg, Domain::Lr, &LossSpec::new(LossKind::None), None).unwrap();
        assert_eq!(params, RecognizerParams::init_for(&cfg));
        assert!(log.loss.iter().all(|&v| v == 0.0));
        assert_eq!(log.loss.len(), cfg.epochs);
        assert_eq!(log.test_accuracy.len(), cfg.epochs);
        assert_eq!(log.mean_max_confidence.len(), cfg.epochs);
        assert_eq!(log.ece.len(), cfg.epochs);
    }

    #[test]
    fn ce_on_separable_data_reaches_full_train_accuracy() {
        let cfg = TaskConfig {
            epochs: 40,
            ..fast_config()
        };
        // sigma_hr = 0: the hr domain is perfectly separable.
        let (params, _) =
            train_recognizer(&cfg, Domain::Hr, &LossSpec::new(LossKind::Ce), None).unwrap();
        let train = gen_dataset(&cfg, Split::Train, Domain::Hr).unwrap();
        let eval = evaluate_recognizer(&params, &train).unwrap();
        assert_eq!(eval.word_accuracy, 1.0, "cer {}", eval.cer);
    }

    #[test]
    fn distillation_requires_teacher() {
        let cfg = fast_config();
        let err = train_recognizer(&cfg, Domain::Lr, &LossSpec::new(LossKind::CeSoftenedKl), None);
        assert!(matches!(err, Err(CoreError::Config { .. })));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = fast_config();
        let teacher = train_recognizer(&cfg, Domain::Hr, &LossSpec::new(LossKind::Ce), None)
            .unwrap()
            .0;
        let spec = LossSpec::new(LossKind::CeSoftenedKl);
        let a = train_recognizer(&cfg, Domain::Lr, &spec, Some(&teacher)).unwrap();
        let b = train_recognizer(&cfg, Domain::Lr, &spec, Some(&teacher)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn student_initialized_at_teacher_has_zero_first_step() {
        // Pure softened-KL loss, student == teacher on identical inputs: the
        // softened distributions coincide bitwise, so the first batch
        // gradient is exactly zero.
        let cfg = fast_config();
        let (teacher, _) =
            train_recognizer(&cfg, Domain::Hr, &LossSpec::new(LossKind::Ce), None).unwrap();
        let data = gen_dataset(&cfg, Split::Train, Domain::Hr).unwrap();
        let indices: Vec<usize> = (0..16).collect();
        let (x, labels) = stack_samples(&data, &indices);
        let (_, logits) = recognizer_forward(&x, &teacher).unwrap();
        let spec = LossSpec::new(LossKind::CeSoftenedKl).with_alpha(1.0);
        let (value, grads) =
            batch_gradients(&teacher, &x, Some(&labels), Some(&logits), &spec).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn accuracy_degrades_monotonically_with_noise() {
        // 10-seed mean word accuracy of a ce student is non-increasing in
        // sigma_lr. Reduced sizes; the ordering is what matters.
        let base = TaskConfig {
            noise_sigma_hr: 0.0,
            train_size: 200,
            test_size: 100,
            epochs: 30,
            ..fast_config()
        };
        let sigmas = [0.0, 0.2, 0.4, 0.8];
        let mut means = Vec::new();
        for &sigma in &sigmas {
            let mut acc = 0.0;
            for seed in 0..10u64 {
                let cfg = TaskConfig {
                    noise_sigma_lr: sigma,
                    seed: mix_seed(base.seed, seed),
                    ..base.clone()
                };
                let (params, _) =
                    train_recognizer(&cfg, Domain::Lr, &LossSpec::new(LossKind::Ce), None).unwrap();
                let test = gen_dataset(&cfg, Split::Test, Domain::Lr).unwrap();
                acc += evaluate_recognizer(&params, &test).unwrap().word_accuracy;
            }
            means.push(acc / 10.0);
        }
        for w in means.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "accuracy increased with noise: {means:?}"
            );
        }
    }
}
