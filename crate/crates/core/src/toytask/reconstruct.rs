//! Prior-guided reconstruction: a linear fusion of noisy features and a
//! prior feature, fit by least squares against the clean rows, decoded by
//! nearest prototype.

use super::data::nearest_prototype;
use super::Sample;
use crate::losses::HardLabels;
use crate::numcore::{solve, Matrix};
use crate::prior::PriorFeature;
use crate::{CoreError, Result};

/// Fits the fusion map `F` (`(D+C) x D`) minimizing `||X F - Y||^2` via the
/// normal equations, with a tiny scale-aware ridge so near-collinear prior
/// channels cannot blow up the solve.
pub fn fit_fusion(inputs: &Matrix, targets: &Matrix) -> Result<Matrix> {
    if inputs.rows() != targets.rows() {
        return Err(CoreError::ShapeMismatch {
            op: "fit_fusion",
            left: format!("{} input rows", inputs.rows()),
            right: format!("{} target rows", targets.rows()),
        });
    }
    if inputs.rows() < inputs.cols() {
        return Err(CoreError::Config {
            message: format!(
                "fit_fusion: {} rows cannot determine {} columns",
                inputs.rows(),
                inputs.cols()
            ),
        });
    }
    let xt = inputs.transpose();
    let mut gram = xt.matmul(inputs)?;
    let trace: f64 = (0..gram.rows()).map(|i| gram.get(i, i)).sum();
    let ridge = 1e-8 * (trace / gram.rows() as f64).max(1.0);
    for i in 0..gram.rows() {
        gram.set(i, i, gram.get(i, i) + ridge);
    }
    let rhs = xt.matmul(targets)?;
    solve(&gram, &rhs)
}

/// Builds the stacked fusion input for one sample: each row is the noisy
/// feature row concatenated with the matching prior row.
pub fn fusion_inputs(sample: &Sample, prior: &PriorFeature) -> Result<Matrix> {
    let l = sample.features.rows();
    if prior.f.rows() != l {
        return Err(CoreError::ShapeMismatch {
            op: "fusion_inputs",
            left: format!("{} feature rows", l),
            right: format!("{} prior rows", prior.f.rows()),
        });
    }
    let d = sample.features.cols();
    let c = prior.f.cols();
    let mut out = Matrix::zeros(l, d + c);
    for r in 0..l {
        out.row_mut(r)[..d].copy_from_slice(sample.features.row(r));
        out.row_mut(r)[d..].copy_from_slice(prior.f.row(r));
    }
    Ok(out)
}

/// Reconstructs each position as `concat(features_row, prior_row) * fusion`
/// and decodes by nearest prototype.
pub fn guided_reconstruct(
    sample: &Sample,
    prior: &PriorFeature,
    fusion: &Matrix,
    prototypes: &Matrix,
) -> Result<(Matrix, HardLabels)> {
    let d = sample.features.cols();
    let c = prior.f.cols();
    if fusion.rows() != d + c || fusion.cols() != d {
        return Err(CoreError::ShapeMismatch {
            op: "guided_reconstruct",
            left: format!("fusion {}x{}", fusion.rows(), fusion.cols()),
            right: format!("{}x{}", d + c, d),
        });
    }
    let inputs = fusion_inputs(sample, prior)?;
    let reconstructed = inputs.matmul(fusion)?;
    let decoded: Vec<usize> = (0..reconstructed.rows())
        .map(|r| nearest_prototype(reconstructed.row(r), prototypes))
        .collect();
    Ok((reconstructed, HardLabels::new(decoded)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toytask::{gen_dataset, prototype_matrix, Domain, Split, TaskConfig};

    fn cfg() -> TaskConfig {
        TaskConfig {
            alphabet_size: 5,
            sequence_length: 4,
            feature_dim: 6,
            prior_dim: 3,
            train_size: 30,
            test_size: 20,
            noise_sigma_hr: 0.0,
            noise_sigma_lr: 0.5,
            seed: 44,
            ..TaskConfig::default()
        }
    }

    /// `[I | 0]` stacked: passes the noisy features through untouched.
    fn passthrough_fusion(d: usize, c: usize) -> Matrix {
        let mut f = Matrix::zeros(d + c, d);
        for i in 0..d {
            f.set(i, i, 1.0);
        }
        f
    }

    #[test]
    fn zero_prior_identity_fusion_is_passthrough() {
        let cfg = cfg();
        let data = gen_dataset(&cfg, Split::Test, Domain::Lr).unwrap();
        let protos = prototype_matrix(&cfg);
        let prior = PriorFeature {
            f: Matrix::zeros(cfg.sequence_length, cfg.prior_dim),
        };
        let fusion = passthrough_fusion(cfg.feature_dim, cfg.prior_dim);
        let (rec, _) = guided_reconstruct(&data[0], &prior, &fusion, &protos).unwrap();
        assert_eq!(rec, data[0].features);
    }

    #[test]
    fn clean_input_decodes_exactly() {
        let cfg = cfg();
        let data = gen_dataset(&cfg, Split::Test, Domain::Hr).unwrap();
        let protos = prototype_matrix(&cfg);
        let prior = PriorFeature {
            f: Matrix::zeros(cfg.sequence_length, cfg.prior_dim),
        };
        let fusion = passthrough_fusion(cfg.feature_dim, cfg.prior_dim);
        for s in &data {
            let (_, decoded) = guided_reconstruct(s, &prior, &fusion, &protos).unwrap();
            assert_eq!(&decoded, &s.labels);
        }
    }

    #[test]
    fn least_squares_fusion_recovers_a_linear_map() {
        // Targets generated by a known linear map of the inputs; the fitted
        // fusion must reproduce it.
        let mut rng = crate::numcore::Rng::new(5);
        let x = Matrix::random_normal(200, 9, &mut rng);
        let truth = Matrix::random_normal(9, 6, &mut rng);
        let y = x.matmul(&truth).unwrap();
        let fit = fit_fusion(&x, &y).unwrap();
        for (a, b) in fit.data().iter().zip(truth.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let cfg = cfg();
        let data = gen_dataset(&cfg, Split::Test, Domain::Lr).unwrap();
        let protos = prototype_matrix(&cfg);
        let prior = PriorFeature {
            f: Matrix::zeros(cfg.sequence_length, cfg.prior_dim),
        };
        let bad_fusion = Matrix::zeros(3, 3);
        assert!(guided_reconstruct(&data[0], &prior, &bad_fusion, &protos).is_err());
        let bad_prior = PriorFeature {
            f: Matrix::zeros(cfg.sequence_length + 1, cfg.prior_dim),
        };
        let fusion = passthrough_fusion(cfg.feature_dim, cfg.prior_dim);
        assert!(guided_reconstruct(&data[0], &bad_prior, &fusion, &protos).is_err());
    }
}
