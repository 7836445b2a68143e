//! The per-position recognizer: a two-hidden-layer MLP applied
//! independently at each sequence position, with hand-derived backprop.

use super::{salts, Sample, TaskConfig};
use crate::losses::{combined_loss, HardLabels, LogitsMatrix, LossSpec};
use crate::numcore::{linear_forward, mix_seed, prelu_grad, Matrix, Rng};
use crate::prior::{ncap_backward, ncap_forward, AdapterParams, PenultimateRep};
use crate::{CoreError, Result};

/// Fixed negative slope of the recognizer's activations. The recognizer
/// keeps its slopes constant; learnable slopes live in the adapter.
pub const RECOGNIZER_PRELU_SLOPE: f64 = 0.25;

/// Recognizer weights: `D -> hidden -> embed -> A`, biases on every layer.
/// The embed-dim activation before the output layer is the penultimate
/// representation handed to prior modules.
#[derive(Debug, Clone, PartialEq)]
pub struct RecognizerParams {
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub w_mid: Matrix,
    pub b_mid: Vec<f64>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl RecognizerParams {
    /// Seeded init: weights uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`,
    /// biases zero.
    pub fn init(config: &TaskConfig, rng: &mut Rng) -> Self {
        let (d, hidden, embed, a) = (
            config.feature_dim,
            config.hidden_dim,
            config.embed_dim,
            config.alphabet_size,
        );
        let bound = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        Self {
            w_in: Matrix::random_uniform(d, hidden, -bound(d), bound(d), rng),
            b_in: vec![0.0; hidden],
            w_mid: Matrix::random_uniform(hidden, embed, -bound(hidden), bound(hidden), rng),
            b_mid: vec![0.0; embed],
            w_out: Matrix::random_uniform(embed, a, -bound(embed), bound(embed), rng),
            b_out: vec![0.0; a],
        }
    }

    /// Init with the experiment-wide convention for the stream seed.
    pub fn init_for(config: &TaskConfig) -> Self {
        Self::init(config, &mut Rng::new(mix_seed(config.seed, salts::INIT)))
    }

    pub fn feature_dim(&self) -> usize {
        self.w_in.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w_out.rows()
    }

    pub fn alphabet_size(&self) -> usize {
        self.w_out.cols()
    }

    pub fn param_count(&self) -> usize {
        self.w_in.len()
            + self.b_in.len()
            + self.w_mid.len()
            + self.b_mid.len()
            + self.w_out.len()
            + self.b_out.len()
    }

    pub fn all_finite(&self) -> bool {
        self.w_in.all_finite()
            && self.w_mid.all_finite()
            && self.w_out.all_finite()
            && self.b_in.iter().all(|v| v.is_finite())
            && self.b_mid.iter().all(|v| v.is_finite())
            && self.b_out.iter().all(|v| v.is_finite())
    }

    /// SGD step: `self += scale * grads`.
    pub fn apply_scaled(&mut self, grads: &RecognizerGrads, scale: f64) -> Result<()> {
        self.w_in.add_scaled(&grads.w_in, scale)?;
        self.w_mid.add_scaled(&grads.w_mid, scale)?;
        self.w_out.add_scaled(&grads.w_out, scale)?;
        for (b, g) in self.b_in.iter_mut().zip(&grads.b_in) {
            *b += scale * g;
        }
        for (b, g) in self.b_mid.iter_mut().zip(&grads.b_mid) {
            *b += scale * g;
        }
        for (b, g) in self.b_out.iter_mut().zip(&grads.b_out) {
            *b += scale * g;
        }
        Ok(())
    }
}

/// Gradients mirroring [`RecognizerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecognizerGrads {
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub w_mid: Matrix,
    pub b_mid: Vec<f64>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl RecognizerGrads {
    pub fn max_abs(&self) -> f64 {
        let m = |m: &Matrix| m.data().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let v = |v: &[f64]| v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        m(&self.w_in)
            .max(v(&self.b_in))
            .max(m(&self.w_mid))
            .max(v(&self.b_mid))
            .max(m(&self.w_out))
            .max(v(&self.b_out))
    }
}

struct ForwardTrace {
    pre1: Matrix,
    act1: Matrix,
    pre2: Matrix,
    h: Matrix,
    logits: Matrix,
}

fn prelu_matrix(m: &Matrix, slope: f64) -> Matrix {
    m.map(|v| if v >= 0.0 { v } else { slope * v })
}

fn forward_traced(x: &Matrix, params: &RecognizerParams) -> Result<ForwardTrace> {
    if x.cols() != params.w_in.rows() {
        return Err(CoreError::ShapeMismatch {
            op: "recognizer_forward",
            left: format!("input {}x{}", x.rows(), x.cols()),
            right: format!("w_in {}x{}", params.w_in.rows(), params.w_in.cols()),
        });
    }
    let pre1 = linear_forward(x, &params.w_in, Some(&params.b_in))?;
    let act1 = prelu_matrix(&pre1, RECOGNIZER_PRELU_SLOPE);
    let pre2 = linear_forward(&act1, &params.w_mid, Some(&params.b_mid))?;
    let h = prelu_matrix(&pre2, RECOGNIZER_PRELU_SLOPE);
    let logits = linear_forward(&h, &params.w_out, Some(&params.b_out))?;
    Ok(ForwardTrace {
        pre1,
        act1,
        pre2,
        h,
        logits,
    })
}

/// Forward pass over one stacked input (`rows x D`, one row per position).
/// Returns the penultimate representation and the logits.
pub fn recognizer_forward(
    x: &Matrix,
    params: &RecognizerParams,
) -> Result<(PenultimateRep, LogitsMatrix)> {
    let trace = forward_traced(x, params)?;
    Ok((
        PenultimateRep::new(trace.h)?,
        LogitsMatrix::new(trace.logits)?,
    ))
}

fn backward_from_logit_grad(
    x: &Matrix,
    params: &RecognizerParams,
    trace: &ForwardTrace,
    d_logits: &Matrix,
) -> Result<RecognizerGrads> {
    let d_w_out = trace.h.transpose().matmul(d_logits)?;
    let d_b_out = d_logits.column_sums();
    let d_h = d_logits.matmul(&params.w_out.transpose())?;

    let mut d_pre2 = Matrix::zeros(trace.pre2.rows(), trace.pre2.cols());
    for i in 0..trace.pre2.len() {
        d_pre2.data_mut()[i] =
            d_h.data()[i] * prelu_grad(trace.pre2.data()[i], RECOGNIZER_PRELU_SLOPE);
    }
    let d_w_mid = trace.act1.transpose().matmul(&d_pre2)?;
    let d_b_mid = d_pre2.column_sums();
    let d_act1 = d_pre2.matmul(&params.w_mid.transpose())?;

    let mut d_pre1 = Matrix::zeros(trace.pre1.rows(), trace.pre1.cols());
    for i in 0..trace.pre1.len() {
        d_pre1.data_mut()[i] =
            d_act1.data()[i] * prelu_grad(trace.pre1.data()[i], RECOGNIZER_PRELU_SLOPE);
    }
    let d_w_in = x.transpose().matmul(&d_pre1)?;
    let d_b_in = d_pre1.column_sums();

    Ok(RecognizerGrads {
        w_in: d_w_in,
        b_in: d_b_in,
        w_mid: d_w_mid,
        b_mid: d_b_mid,
        w_out: d_w_out,
        b_out: d_b_out,
    })
}

/// Loss value and parameter gradients for one stacked batch.
///
/// `x` holds one row per position (a whole minibatch stacked); `labels` and
/// `teacher_logits` line up row-for-row when the loss needs them.
pub fn batch_gradients(
    params: &RecognizerParams,
    x: &Matrix,
    labels: Option<&HardLabels>,
    teacher_logits: Option<&LogitsMatrix>,
    spec: &LossSpec,
) -> Result<(f64, RecognizerGrads)> {
    let trace = forward_traced(x, params)?;
    let student = LogitsMatrix::new(trace.logits.clone())?;
    let loss = combined_loss(spec, &student, teacher_logits, labels)?;
    let grads = backward_from_logit_grad(x, params, &trace, &loss.grad)?;
    Ok((loss.value, grads))
}

fn loss_value(
    params: &RecognizerParams,
    x: &Matrix,
    labels: Option<&HardLabels>,
    teacher_logits: Option<&LogitsMatrix>,
    spec: &LossSpec,
) -> Result<f64> {
    let trace = forward_traced(x, params)?;
    let student = LogitsMatrix::new(trace.logits)?;
    Ok(combined_loss(spec, &student, teacher_logits, labels)?.value)
}

fn fd_rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (analytic.abs() + fd.abs()).max(1e-3)
}

/// Central-finite-difference check of the full analytic backprop through
/// every recognizer parameter on one sample. Returns the worst relative
/// error. Steps in `[1e-8, 1e-4]` are recommended; anything positive is
/// accepted.
pub fn gradcheck_recognizer(
    params: &RecognizerParams,
    sample: &Sample,
    spec: &LossSpec,
    teacher_logits: Option<&LogitsMatrix>,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(CoreError::NonPositive {
            op: "gradcheck_recognizer",
            name: "step",
            value: step,
        });
    }
    let x = &sample.features;
    let labels = Some(&sample.labels);
    let (_, analytic) = batch_gradients(params, x, labels.filter(|_| spec.kind.requires_labels()), teacher_logits, spec)?;

    let labels_arg = if spec.kind.requires_labels() { labels } else { None };
    let mut worst = 0.0f64;
    let mut check = |plus: &RecognizerParams, minus: &RecognizerParams, grad: f64| -> Result<()> {
        let up = loss_value(plus, x, labels_arg, teacher_logits, spec)?;
        let down = loss_value(minus, x, labels_arg, teacher_logits, spec)?;
        let fd = (up - down) / (2.0 * step);
        worst = worst.max(fd_rel_err(grad, fd));
        Ok(())
    };

    macro_rules! sweep_matrix {
        ($field:ident) => {
            for idx in 0..params.$field.len() {
                let mut plus = params.clone();
                plus.$field.data_mut()[idx] += step;
                let mut minus = params.clone();
                minus.$field.data_mut()[idx] -= step;
                check(&plus, &minus, analytic.$field.data()[idx])?;
            }
        };
    }
    macro_rules! sweep_bias {
        ($field:ident) => {
            for idx in 0..params.$field.len() {
                let mut plus = params.clone();
                plus.$field[idx] += step;
                let mut minus = params.clone();
                minus.$field[idx] -= step;
                check(&plus, &minus, analytic.$field[idx])?;
            }
        };
    }

    sweep_matrix!(w_in);
    sweep_bias!(b_in);
    sweep_matrix!(w_mid);
    sweep_bias!(b_mid);
    sweep_matrix!(w_out);
    sweep_bias!(b_out);
    Ok(worst)
}

/// Finite-difference check of the adapter backward pass on one random
/// instance; the scalar objective is the feature contracted with a fixed
/// upstream matrix. Returns the worst relative error over every adapter
/// parameter and the input.
pub fn gradcheck_adapter(
    h: &PenultimateRep,
    params: &AdapterParams,
    upstream: &Matrix,
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(CoreError::NonPositive {
            op: "gradcheck_adapter",
            name: "step",
            value: step,
        });
    }
    let objective = |h: &PenultimateRep, p: &AdapterParams| -> Result<f64> {
        let f = ncap_forward(h, p)?;
        Ok(f
            .f
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(&a, &b)| a * b)
            .sum())
    };
    let grads = ncap_backward(h, params, upstream)?;
    let mut worst = 0.0f64;

    for idx in 0..params.w1.len() {
        let mut plus = params.clone();
        plus.w1.data_mut()[idx] += step;
        let mut minus = params.clone();
        minus.w1.data_mut()[idx] -= step;
        let fd = (objective(h, &plus)? - objective(h, &minus)?) / (2.0 * step);
        worst = worst.max(fd_rel_err(grads.w1.data()[idx], fd));
    }
    for idx in 0..params.w2.len() {
        let mut plus = params.clone();
        plus.w2.data_mut()[idx] += step;
        let mut minus = params.clone();
        minus.w2.data_mut()[idx] -= step;
        let fd = (objective(h, &plus)? - objective(h, &minus)?) / (2.0 * step);
        worst = worst.max(fd_rel_err(grads.w2.data()[idx], fd));
    }
    for slope_idx in 0..2 {
        let mut plus = params.clone();
        let mut minus = params.clone();
        let grad = if slope_idx == 0 {
            plus.slope1 += step;
            minus.slope1 -= step;
            grads.slope1
        } else {
            plus.slope2 += step;
            minus.slope2 -= step;
            grads.slope2
        };
        let fd = (objective(h, &plus)? - objective(h, &minus)?) / (2.0 * step);
        worst = worst.max(fd_rel_err(grad, fd));
    }
    for idx in 0..h.h.len() {
        let mut plus = h.clone();
        plus.h.data_mut()[idx] += step;
        let mut minus = h.clone();
        minus.h.data_mut()[idx] -= step;
        let fd = (objective(&plus, params)? - objective(&minus, params)?) / (2.0 * step);
        worst = worst.max(fd_rel_err(grads.h.data()[idx], fd));
    }
    Ok(worst)
}

/// Replaces the output-layer weights of a fraction of classes with fresh
/// random columns at the original scale, forcing systematically wrong
/// categorical predictions for those classes while leaving the penultimate
/// representation untouched.
pub fn corrupt_teacher(
    params: &RecognizerParams,
    fraction: f64,
    rng: &mut Rng,
) -> Result<RecognizerParams> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CoreError::OutOfRange {
            op: "corrupt_teacher",
            name: "fraction",
            value: fraction,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let a = params.alphabet_size();
    let n_corrupt = (fraction * a as f64).round() as usize;
    let mut out = params.clone();
    if n_corrupt == 0 {
        return Ok(out);
    }

    let mut classes: Vec<usize> = (0..a).collect();
    rng.shuffle(&mut classes);
    classes.truncate(n_corrupt);

    // Scale replacements like the trained weights so corrupted logits stay
    // in the same numeric range.
    let scale = {
        let data = params.w_out.data();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / data.len() as f64;
        var.sqrt().max(1e-6)
    };
    for &c in &classes {
        for r in 0..out.w_out.rows() {
            out.w_out.set(r, c, scale * rng.standard_normal());
        }
        out.b_out[c] = 0.0;
    }
    Ok(out)
}
