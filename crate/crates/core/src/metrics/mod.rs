//! Evaluation statistics: sequence error rates, Pearson correlation,
//! reliability/calibration, confidence spread, and image quality.

mod image;
mod reliability;

pub use image::{psnr, psnr_from_mse, ssim, ImagePair};
pub use reliability::{
    confidence_std, population_std, reliability, Level, ReliabilityBin, ReliabilityReport,
};

use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Corpus-level word and character error rates. Both can exceed 1 when
/// hypotheses are longer than references.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub wer: f64,
    pub cer: f64,
}

/// Minimal number of insert/delete/substitute operations turning `a` into
/// `b` (Levenshtein distance), via the standard two-row DP.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Character-level edit distance between two strings.
pub fn edit_distance_str(a: &str, b: &str) -> usize {
    let av: Vec<char> = a.chars().collect();
    let bv: Vec<char> = b.chars().collect();
    edit_distance(&av, &bv)
}

/// Corpus error rates over paired reference/hypothesis token sequences.
///
/// WER counts whole-sequence exact-match failures (the usual convention in
/// recognition accuracy tables), not token-level alignment. CER is the
/// summed edit distance normalized by the total reference length.
pub fn error_rates<T: PartialEq>(refs: &[&[T]], hyps: &[&[T]]) -> Result<ErrorRates> {
    if refs.len() != hyps.len() {
        return Err(CoreError::ShapeMismatch {
            op: "error_rates",
            left: format!("{} refs", refs.len()),
            right: format!("{} hyps", hyps.len()),
        });
    }
    if refs.is_empty() {
        return Err(CoreError::EmptyInput { op: "error_rates" });
    }
    let mut mismatches = 0usize;
    let mut edits = 0usize;
    let mut ref_len = 0usize;
    for (r, h) in refs.iter().zip(hyps) {
        if r != h {
            mismatches += 1;
        }
        edits += edit_distance(r, h);
        ref_len += r.len();
    }
    let cer = if ref_len == 0 {
        if edits == 0 {
            0.0
        } else {
            return Err(CoreError::EmptyInput { op: "error_rates: empty references with non-empty hypotheses" });
        }
    } else {
        edits as f64 / ref_len as f64
    };
    Ok(ErrorRates {
        wer: mismatches as f64 / refs.len() as f64,
        cer,
    })
}

/// [`error_rates`] over strings, with characters as the symbols.
pub fn error_rates_str(refs: &[&str], hyps: &[&str]) -> Result<ErrorRates> {
    let rv: Vec<Vec<char>> = refs.iter().map(|s| s.chars().collect()).collect();
    let hv: Vec<Vec<char>> = hyps.iter().map(|s| s.chars().collect()).collect();
    let rr: Vec<&[char]> = rv.iter().map(Vec::as_slice).collect();
    let hh: Vec<&[char]> = hv.iter().map(Vec::as_slice).collect();
    error_rates(&rr, &hh)
}

/// Sample Pearson correlation, two-pass: means first, then centered
/// moments.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(CoreError::ShapeMismatch {
            op: "pearson",
            left: format!("{} x", x.len()),
            right: format!("{} y", y.len()),
        });
    }
    if x.len() < 2 {
        return Err(CoreError::UndefinedCorrelation {
            reason: format!("need at least 2 samples, got {}", x.len()),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CoreError::UndefinedCorrelation {
            reason: "constant input".to_string(),
        });
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
