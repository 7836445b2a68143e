//! Deterministic numeric primitives: dense matrices, stable softmax,
//! activations, and seeded randomness.
//!
//! Everything here is pure; identical inputs produce bitwise-identical
//! outputs, and the RNG is an explicit owned value so experiments replay
//! from a single seed.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::{mix_seed, Rng};

use crate::{CoreError, Result};

/// Temperature-scaled softmax of a logit vector: `softmax(logits / tau)`.
///
/// Computed with max-subtraction so large logits cannot overflow. The output
/// is strictly positive and sums to 1 within 1e-12.
pub fn softmax_temp(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(CoreError::EmptyInput { op: "softmax_temp" });
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(CoreError::NonPositive {
            op: "softmax_temp",
            name: "tau",
            value: tau,
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite {
            op: "softmax_temp",
            name: "logits",
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Parametric ReLU: `x_i` where `x_i >= 0`, otherwise `slope * x_i`.
pub fn prelu(x: &[f64], slope: f64) -> Result<Vec<f64>> {
    if !slope.is_finite() {
        return Err(CoreError::NonFinite {
            op: "prelu",
            name: "slope",
        });
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(CoreError::NonFinite { op: "prelu", name: "x" });
    }
    Ok(x.iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect())
}

/// Derivative of [`prelu`] with respect to its input, elementwise.
///
/// The kink at 0 takes the positive branch (derivative 1).
pub fn prelu_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// Affine map `x * w + b` with `x: L x m`, `w: m x n`, optional bias of
/// length `n` broadcast over rows.
pub fn linear_forward(x: &Matrix, w: &Matrix, b: Option<&[f64]>) -> Result<Matrix> {
    if x.cols() != w.rows() {
        return Err(CoreError::ShapeMismatch {
            op: "linear_forward",
            left: format!("{}x{}", x.rows(), x.cols()),
            right: format!("{}x{}", w.rows(), w.cols()),
        });
    }
    if let Some(bias) = b {
        if bias.len() != w.cols() {
            return Err(CoreError::ShapeMismatch {
                op: "linear_forward",
                left: format!("bias len {}", bias.len()),
                right: format!("{} output cols", w.cols()),
            });
        }
    }
    let mut out = x.matmul(w)?;
    if let Some(bias) = b {
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (v, &bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
    }
    Ok(out)
}

/// Solves `a * x = y` for square `a` by Gaussian elimination with partial
/// pivoting. `y` may have multiple right-hand-side columns.
pub fn solve(a: &Matrix, y: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(CoreError::ShapeMismatch {
            op: "solve",
            left: format!("{}x{}", a.rows(), a.cols()),
            right: "square".to_string(),
        });
    }
    if y.rows() != n {
        return Err(CoreError::ShapeMismatch {
            op: "solve",
            left: format!("{} rows", y.rows()),
            right: format!("{} rows", n),
        });
    }
    let m = y.cols();
    let mut lhs = a.clone();
    let mut rhs = y.clone();
    for col in 0..n {
        let mut pivot = col;
        let mut best = lhs.get(col, col).abs();
        for r in (col + 1)..n {
            let cand = lhs.get(r, col).abs();
            if cand > best {
                best = cand;
                pivot = r;
            }
        }
        if best < 1e-12 {
            return Err(CoreError::SingularSystem {
                reason: format!("pivot {best:.3e} at column {col}"),
            });
        }
        if pivot != col {
            lhs.swap_rows(pivot, col);
            rhs.swap_rows(pivot, col);
        }
        let diag = lhs.get(col, col);
        for r in (col + 1)..n {
            let factor = lhs.get(r, col) / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                let v = lhs.get(r, c) - factor * lhs.get(col, c);
                lhs.set(r, c, v);
            }
            for c in 0..m {
                let v = rhs.get(r, c) - factor * rhs.get(col, c);
                rhs.set(r, c, v);
            }
        }
    }
    let mut x = Matrix::zeros(n, m);
    for c in 0..m {
        for r in (0..n).rev() {
            let mut acc = rhs.get(r, c);
            for k in (r + 1)..n {
                acc -= lhs.get(r, k) * x.get(k, c);
            }
            x.set(r, c, acc / lhs.get(r, r));
        }
    }
    Ok(x)
}
