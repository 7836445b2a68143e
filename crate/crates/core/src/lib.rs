//! Recognizer-guided priors and distillation losses, built for exact
//! gradient accounting.
//!
//! The crate has three layers:
//!
//! - [`numcore`]: dense row-major matrices, stable temperature softmax,
//!   PReLU, and a seeded RNG. Everything downstream is deterministic given
//!   a seed.
//! - [`losses`] and [`prior`]: the loss family (cross-entropy, logit MAE,
//!   temperature-softened KL, and their combinations) with hand-derived
//!   gradients, plus the non-categorical prior adapter and the explicit
//!   text-prior baseline it replaces.
//! - [`toytask`], [`metrics`], [`report`]: a synthetic teacher/student
//!   sequence-recognition experiment that exercises every loss variant and
//!   both prior styles, and the evaluation statistics (WER/CER, Pearson,
//!   reliability/ECE, confidence spread, PSNR/SSIM) used to compare them.

pub mod losses;
pub mod metrics;
pub mod numcore;
pub mod prior;
pub mod report;
pub mod toytask;

mod error;

pub use error::{CoreError, Result};
