//! Prior features handed to a downstream reconstruction network: the
//! non-categorical adapter path and the explicit text-prior baseline it
//! replaces.
//!
//! The adapter projects penultimate-layer representations `h` through two
//! linear maps with PReLU activations and never normalizes over the
//! alphabet axis, so nothing in its path collapses `h` into a categorical
//! distribution. The text-prior path does the opposite: it maps `h` to
//! logits, takes a row-wise softmax, and projects the probabilities.

use crate::losses::LogitsMatrix;
use crate::numcore::{linear_forward, prelu, prelu_grad, softmax_temp, Matrix, Rng};
use crate::{CoreError, Result};

/// Slope used for freshly initialized adapter PReLUs, following the original
/// PReLU convention.
pub const DEFAULT_PRELU_SLOPE: f64 = 0.25;

/// Weights of the two-layer adapter: `embed -> embed/2 -> C`, one learnable
/// scalar slope per activation, biases optional and disabled by default.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub w1: Matrix,
    pub w2: Matrix,
    pub slope1: f64,
    pub slope2: f64,
    pub b1: Option<Vec<f64>>,
    pub b2: Option<Vec<f64>>,
}

impl AdapterParams {
    /// Seeded initialization: weights uniform in
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, slopes at
    /// [`DEFAULT_PRELU_SLOPE`], biases (when enabled) at zero.
    pub fn init(embed: usize, prior_dim: usize, with_bias: bool, rng: &mut Rng) -> Result<Self> {
        if embed == 0 || embed % 2 != 0 {
            return Err(CoreError::Config {
                message: format!("adapter embed dim must be even and non-zero, got {embed}"),
            });
        }
        if prior_dim == 0 {
            return Err(CoreError::Config {
                message: "adapter prior dim must be non-zero".to_string(),
            });
        }
        let hidden = embed / 2;
        let bound1 = 1.0 / (embed as f64).sqrt();
        let bound2 = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w1: Matrix::random_uniform(embed, hidden, -bound1, bound1, rng),
            w2: Matrix::random_uniform(hidden, prior_dim, -bound2, bound2, rng),
            slope1: DEFAULT_PRELU_SLOPE,
            slope2: DEFAULT_PRELU_SLOPE,
            b1: with_bias.then(|| vec![0.0; hidden]),
            b2: with_bias.then(|| vec![0.0; prior_dim]),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn prior_dim(&self) -> usize {
        self.w2.cols()
    }

    /// Trainable parameter count: both weight matrices, optional biases, and
    /// the two slopes.
    pub fn param_count(&self) -> usize {
        self.w1.len()
            + self.w2.len()
            + self.b1.as_ref().map_or(0, Vec::len)
            + self.b2.as_ref().map_or(0, Vec::len)
            + 2
    }

    fn validate(&self) -> Result<()> {
        if self.w1.cols() != self.w2.rows() {
            return Err(CoreError::ShapeMismatch {
                op: "AdapterParams",
                left: format!("w1 {}x{}", self.w1.rows(), self.w1.cols()),
                right: format!("w2 {}x{}", self.w2.rows(), self.w2.cols()),
            });
        }
        if let Some(b1) = &self.b1 {
            if b1.len() != self.w1.cols() {
                return Err(CoreError::ShapeMismatch {
                    op: "AdapterParams",
                    left: format!("b1 len {}", b1.len()),
                    right: format!("{} hidden", self.w1.cols()),
                });
            }
        }
        if let Some(b2) = &self.b2 {
            if b2.len() != self.w2.cols() {
                return Err(CoreError::ShapeMismatch {
                    op: "AdapterParams",
                    left: format!("b2 len {}", b2.len()),
                    right: format!("{} outputs", self.w2.cols()),
                });
            }
        }
        if !self.slope1.is_finite() || !self.slope2.is_finite() {
            return Err(CoreError::NonFinite {
                op: "AdapterParams",
                name: "slope",
            });
        }
        Ok(())
    }
}

/// Penultimate-layer representations, one `embed`-dim row per sequence
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct PenultimateRep {
    pub h: Matrix,
}

impl PenultimateRep {
    pub fn new(h: Matrix) -> Result<Self> {
        if !h.all_finite() {
            return Err(CoreError::NonFinite {
                op: "PenultimateRep::new",
                name: "h",
            });
        }
        Ok(Self { h })
    }

    pub fn seq_len(&self) -> usize {
        self.h.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.h.cols()
    }
}

/// Explicit text-prior weights: a prediction layer mapping `h` to logits and
/// a projection layer mapping class probabilities to the prior feature.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPriorParams {
    pub w_pred: Matrix,
    pub w_proj: Matrix,
}

impl TextPriorParams {
    pub fn alphabet_size(&self) -> usize {
        self.w_pred.cols()
    }

    pub fn prior_dim(&self) -> usize {
        self.w_proj.cols()
    }
}

/// An `L x C` prior feature handed to the downstream fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorFeature {
    pub f: Matrix,
}

/// Gradients of everything trainable in the adapter plus the input `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub w1: Matrix,
    pub w2: Matrix,
    pub slope1: f64,
    pub slope2: f64,
    pub b1: Option<Vec<f64>>,
    pub b2: Option<Vec<f64>>,
    pub h: Matrix,
}

struct AdapterTrace {
    pre1: Matrix,
    act1: Matrix,
    pre2: Matrix,
}

fn adapter_forward_traced(
    h: &PenultimateRep,
    params: &AdapterParams,
) -> Result<(Matrix, AdapterTrace)> {
    params.validate()?;
    if h.embed_dim() != params.w1.rows() {
        return Err(CoreError::ShapeMismatch {
            op: "ncap_forward",
            left: format!("h {}x{}", h.seq_len(), h.embed_dim()),
            right: format!("w1 {}x{}", params.w1.rows(), params.w1.cols()),
        });
    }
    let pre1 = linear_forward(&h.h, &params.w1, params.b1.as_deref())?;
    let mut act1 = Matrix::zeros(pre1.rows(), pre1.cols());
    for r in 0..pre1.rows() {
        let a = prelu(pre1.row(r), params.slope1)?;
        act1.row_mut(r).copy_from_slice(&a);
    }
    let pre2 = linear_forward(&act1, &params.w2, params.b2.as_deref())?;
    let mut out = Matrix::zeros(pre2.rows(), pre2.cols());
    for r in 0..pre2.rows() {
        let a = prelu(pre2.row(r), params.slope2)?;
        out.row_mut(r).copy_from_slice(&a);
    }
    Ok((out, AdapterTrace { pre1, act1, pre2 }))
}

/// Adapter forward pass: `PReLU(PReLU(h w1) w2)`, intermediate shape
/// `L x embed/2`, output `L x C`.
pub fn ncap_forward(h: &PenultimateRep, params: &AdapterParams) -> Result<PriorFeature> {
    let (f, _) = adapter_forward_traced(h, params)?;
    Ok(PriorFeature { f })
}

/// Analytic gradients of the adapter given the upstream gradient on its
/// output feature.
pub fn ncap_backward(
    h: &PenultimateRep,
    params: &AdapterParams,
    upstream: &Matrix,
) -> Result<AdapterGrads> {
    let (_, trace) = adapter_forward_traced(h, params)?;
    if upstream.rows() != h.seq_len() || upstream.cols() != params.w2.cols() {
        return Err(CoreError::ShapeMismatch {
            op: "ncap_backward",
            left: format!("upstream {}x{}", upstream.rows(), upstream.cols()),
            right: format!("{}x{}", h.seq_len(), params.w2.cols()),
        });
    }

    // Through the outer PReLU: d_pre2 = upstream . prelu'(pre2); the slope
    // gradient collects upstream mass on the negative branch.
    let mut d_pre2 = Matrix::zeros(trace.pre2.rows(), trace.pre2.cols());
    let mut d_slope2 = 0.0;
    for r in 0..trace.pre2.rows() {
        for c in 0..trace.pre2.cols() {
            let x = trace.pre2.get(r, c);
            let up = upstream.get(r, c);
            d_pre2.set(r, c, up * prelu_grad(x, params.slope2));
            if x < 0.0 {
                d_slope2 += up * x;
            }
        }
    }

    let d_w2 = trace.act1.transpose().matmul(&d_pre2)?;
    let d_b2 = params.b2.as_ref().map(|_| d_pre2.column_sums());
    let d_act1 = d_pre2.matmul(&params.w2.transpose())?;

    let mut d_pre1 = Matrix::zeros(trace.pre1.rows(), trace.pre1.cols());
    let mut d_slope1 = 0.0;
    for r in 0..trace.pre1.rows() {
        for c in 0..trace.pre1.cols() {
            let x = trace.pre1.get(r, c);
            let up = d_act1.get(r, c);
            d_pre1.set(r, c, up * prelu_grad(x, params.slope1));
            if x < 0.0 {
                d_slope1 += up * x;
            }
        }
    }

    let d_w1 = h.h.transpose().matmul(&d_pre1)?;
    let d_b1 = params.b1.as_ref().map(|_| d_pre1.column_sums());
    let d_h = d_pre1.matmul(&params.w1.transpose())?;

    Ok(AdapterGrads {
        w1: d_w1,
        w2: d_w2,
        slope1: d_slope1,
        slope2: d_slope2,
        b1: d_b1,
        b2: d_b2,
        h: d_h,
    })
}

/// Projects class probabilities into a prior feature: the second half of the
/// explicit text-prior path, split out so it can be driven from any logits.
pub fn tp_feature_from_logits(
    logits: &LogitsMatrix,
    params: &TextPriorParams,
    tau: f64,
) -> Result<PriorFeature> {
    if logits.alphabet_size() != params.w_proj.rows() {
        return Err(CoreError::ShapeMismatch {
            op: "tp_feature_from_logits",
            left: format!("{} classes", logits.alphabet_size()),
            right: format!("w_proj {}x{}", params.w_proj.rows(), params.w_proj.cols()),
        });
    }
    let mut probs = Matrix::zeros(logits.seq_len(), logits.alphabet_size());
    for r in 0..logits.seq_len() {
        let p = softmax_temp(logits.row(r), tau)?;
        probs.row_mut(r).copy_from_slice(&p);
    }
    Ok(PriorFeature {
        f: probs.matmul(&params.w_proj)?,
    })
}

/// Explicit text-prior forward pass: `h` is mapped to logits by the
/// prediction layer, softened row-wise at temperature `tau`, and the
/// probabilities are projected into the prior feature.
pub fn tp_forward(
    h: &PenultimateRep,
    params: &TextPriorParams,
    tau: f64,
) -> Result<(LogitsMatrix, PriorFeature)> {
    if h.embed_dim() != params.w_pred.rows() {
        return Err(CoreError::ShapeMismatch {
            op: "tp_forward",
            left: format!("h {}x{}", h.seq_len(), h.embed_dim()),
            right: format!("w_pred {}x{}", params.w_pred.rows(), params.w_pred.cols()),
        });
    }
    let logits = LogitsMatrix::new(linear_forward(&h.h, &params.w_pred, None)?)?;
    let feature = tp_feature_from_logits(&logits, params, tau)?;
    Ok((logits, feature))
}

/// Ratio of adapter trainable parameters to a base network's parameter
/// count.
pub fn param_overhead(adapter: &AdapterParams, base_param_count: usize) -> Result<f64> {
    if base_param_count == 0 {
        return Err(CoreError::NonPositive {
            op: "param_overhead",
            name: "base_param_count",
            value: 0.0,
        });
    }
    Ok(adapter.param_count() as f64 / base_param_count as f64)
}
