//! PSNR and SSIM over small `[0, 1]`-valued images.

use crate::{CoreError, Result};

const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Two same-shaped images with values in `[0, 1]`, grayscale (`channels =
/// 1`) or RGB (`channels = 3`), stored row-major with channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    height: usize,
    width: usize,
    channels: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl ImagePair {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        a: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(CoreError::Config {
                message: format!("ImagePair: channels must be 1 or 3, got {channels}"),
            });
        }
        let expected = height * width * channels;
        if a.len() != expected || b.len() != expected {
            return Err(CoreError::ShapeMismatch {
                op: "ImagePair::new",
                left: format!("{} / {} values", a.len(), b.len()),
                right: format!("{height}x{width}x{channels}"),
            });
        }
        for v in a.iter().chain(&b) {
            if !v.is_finite() || !(0.0..=1.0).contains(v) {
                return Err(CoreError::OutOfRange {
                    op: "ImagePair::new",
                    name: "pixel",
                    value: *v,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            a,
            b,
        })
    }

    pub fn grayscale(height: usize, width: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        Self::new(height, width, 1, a, b)
    }

    /// Mean squared error over every value.
    pub fn mse(&self) -> f64 {
        let n = self.a.len() as f64;
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / n
    }

    fn channel(&self, which: usize, img: &[f64]) -> Vec<f64> {
        (0..self.height * self.width)
            .map(|px| img[px * self.channels + which])
            .collect()
    }
}

/// PSNR in dB for a peak value of 1: `10 * log10(1 / MSE)`.
///
/// Identical images have zero MSE; that case returns `f64::INFINITY` rather
/// than an arbitrary cap so ordering comparisons stay meaningful.
pub fn psnr(pair: &ImagePair) -> f64 {
    psnr_from_mse(pair.mse())
}

/// PSNR from a precomputed mean squared error.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Mean SSIM over all 8x8 sliding windows (stride 1, uniform window
/// statistics, `k1 = 0.01`, `k2 = 0.03`, peak 1). Multi-channel images
/// average the per-channel scores.
///
/// Uses summed-area tables for the window moments; both images must be at
/// least 8x8.
pub fn ssim(pair: &ImagePair) -> Result<f64> {
    if pair.height < SSIM_WINDOW || pair.width < SSIM_WINDOW {
        return Err(CoreError::Config {
            message: format!(
                "ssim: image {}x{} smaller than the {}x{} window",
                pair.height, pair.width, SSIM_WINDOW, SSIM_WINDOW
            ),
        });
    }
    let mut acc = 0.0;
    for ch in 0..pair.channels {
        let a = pair.channel(ch, &pair.a);
        let b = pair.channel(ch, &pair.b);
        acc += ssim_plane(&a, &b, pair.height, pair.width);
    }
    Ok(acc / pair.channels as f64)
}

/// Summed-area table with a zero top row and left column.
fn integral(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let stride = w + 1;
    let mut table = vec![0.0; (h + 1) * stride];
    for r in 0..h {
        let mut row_sum = 0.0;
        for c in 0..w {
            row_sum += f(r * w + c);
            table[(r + 1) * stride + (c + 1)] = table[r * stride + (c + 1)] + row_sum;
        }
    }
    table
}

fn window_sum(table: &[f64], stride: usize, r: usize, c: usize, k: usize) -> f64 {
    table[(r + k) * stride + (c + k)] - table[r * stride + (c + k)] - table[(r + k) * stride + c]
        + table[r * stride + c]
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let k = SSIM_WINDOW;
    let area = (k * k) as f64;
    let stride = w + 1;

    let sa = integral(h, w, |i| a[i]);
    let sb = integral(h, w, |i| b[i]);
    let saa = integral(h, w, |i| a[i] * a[i]);
    let sbb = integral(h, w, |i| b[i] * b[i]);
    let sab = integral(h, w, |i| a[i] * b[i]);

    let mut total = 0.0;
    let mut windows = 0usize;
    for r in 0..=(h - k) {
        for c in 0..=(w - k) {
            let mu_a = window_sum(&sa, stride, r, c, k) / area;
            let mu_b = window_sum(&sb, stride, r, c, k) / area;
            let var_a = window_sum(&saa, stride, r, c, k) / area - mu_a * mu_a;
            let var_b = window_sum(&sbb, stride, r, c, k) / area - mu_b * mu_b;
            let cov = window_sum(&sab, stride, r, c, k) / area - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            windows += 1;
        }
    }
    total / windows as f64
}
