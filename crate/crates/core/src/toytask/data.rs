//! Synthetic paired-domain dataset: noisy observations of per-class
//! prototype vectors.

use serde::{Deserialize, Serialize};

use super::{salts, TaskConfig};
use crate::losses::HardLabels;
use crate::numcore::{mix_seed, Matrix, Rng};
use crate::Result;

/// Clean ("hr") or noisy ("lr") observation domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Hr,
    Lr,
}

impl Domain {
    pub fn sigma(self, config: &TaskConfig) -> f64 {
        match self {
            Domain::Hr => config.noise_sigma_hr,
            Domain::Lr => config.noise_sigma_lr,
        }
    }

    fn tag(self) -> u64 {
        match self {
            Domain::Hr => 0,
            Domain::Lr => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    fn size(self, config: &TaskConfig) -> usize {
        match self {
            Split::Train => config.train_size,
            Split::Test => config.test_size,
        }
    }
}

/// One sequence: noisy observed features, the underlying prototype rows,
/// and the label indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Matrix,
    pub clean: Matrix,
    pub labels: HardLabels,
}

/// The per-class prototype matrix (`A x D`), drawn once per config seed;
/// every split and domain shares it.
pub fn prototype_matrix(config: &TaskConfig) -> Matrix {
    let mut rng = Rng::new(mix_seed(config.seed, salts::PROTOTYPES));
    Matrix::random_normal(config.alphabet_size, config.feature_dim, &mut rng)
}

/// Generates one split of one domain.
///
/// Label sequences depend only on the seed and split, so the hr and lr
/// datasets for a split pair up position-by-position; the noise stream is
/// salted by domain as well.
pub fn gen_dataset(config: &TaskConfig, split: Split, domain: Domain) -> Result<Vec<Sample>> {
    config.validate()?;
    let protos = prototype_matrix(config);
    let (l, d) = (config.sequence_length, config.feature_dim);
    let size = split.size(config);
    let sigma = domain.sigma(config);

    let labels_salt = if split == Split::Train {
        salts::LABELS_TRAIN
    } else {
        salts::LABELS_TEST
    };
    let mut labels_rng = Rng::new(mix_seed(config.seed, labels_salt));
    let mut noise_rng = Rng::new(mix_seed(
        config.seed,
        salts::NOISE_BASE + split.tag() * 2 + domain.tag(),
    ));

    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        let labels: Vec<usize> = (0..l).map(|_| labels_rng.index(config.alphabet_size)).collect();
        let mut clean = Matrix::zeros(l, d);
        for (r, &c) in labels.iter().enumerate() {
            clean.row_mut(r).copy_from_slice(protos.row(c));
        }
        let mut features = clean.clone();
        if sigma > 0.0 {
            for v in features.data_mut().iter_mut() {
                *v += sigma * noise_rng.standard_normal();
            }
        }
        out.push(Sample {
            features,
            clean,
            labels: HardLabels::new(labels),
        });
    }
    Ok(out)
}

/// Index of the prototype row closest (in squared distance) to `row`.
pub fn nearest_prototype(row: &[f64], prototypes: &Matrix) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for c in 0..prototypes.rows() {
        let dist: f64 = prototypes
            .row(c)
            .iter()
            .zip(row)
            .map(|(&p, &x)| (p - x) * (p - x))
            .sum();
        if dist < best_dist {
            best_dist = dist;
            best = c;
        }
    }
    best
}
