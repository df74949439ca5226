//! Coarse-labelled training data, the fine-labelled warm-up set, and the
//! synthetic generator.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::hierarchy::LabelHierarchy;
use crate::model::select_rows;

/// Instances with coarse labels. Ground-truth fine labels, when present, are
/// only reachable through [`Dataset::ground_truth`] and are meant for the
/// simulated oracle and for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    coarse: Array2<u8>,
    fine: Option<Array2<u8>>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        coarse: Array2<u8>,
        fine: Option<Array2<u8>>,
        hierarchy: &LabelHierarchy,
    ) -> Result<Self> {
        if coarse.nrows() != features.nrows() {
            return Err(Error::shape("coarse label rows", features.nrows(), coarse.nrows()));
        }
        if coarse.ncols() != hierarchy.coarse_count() {
            return Err(Error::shape("coarse label columns", hierarchy.coarse_count(), coarse.ncols()));
        }
        if coarse.iter().chain(fine.iter().flatten()).any(|&v| v > 1) {
            return Err(Error::Input("label matrices must be 0/1".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("features contain non-finite values".into()));
        }
        if let Some(fine) = &fine {
            if fine.nrows() != features.nrows() {
                return Err(Error::shape("fine label rows", features.nrows(), fine.nrows()));
            }
            if let Some((row, c, stated, implied)) =
                hierarchy.first_violation(coarse.view(), fine.view())?
            {
                return Err(Error::HierarchyViolation {
                    path: "<memory>".into(),
                    row,
                    coarse: hierarchy.coarse_names()[c].clone(),
                    coarse_value: stated,
                    children_or: implied,
                });
            }
        }
        Ok(Dataset {
            features,
            coarse,
            fine,
        })
    }

    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn coarse(&self) -> &Array2<u8> {
        &self.coarse
    }

    pub fn has_ground_truth(&self) -> bool {
        self.fine.is_some()
    }

    /// Ground-truth fine labels; errors when the dataset was loaded without them.
    pub fn ground_truth(&self) -> Result<&Array2<u8>> {
        self.fine
            .as_ref()
            .ok_or_else(|| Error::Input("dataset has no ground-truth fine labels".into()))
    }

    /// Copies the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: select_rows(&self.features, rows),
            coarse: self.coarse.select(Axis(0), rows),
            fine: self.fine.as_ref().map(|f| f.select(Axis(0), rows)),
        }
    }
}

/// Fully fine-annotated examples; also the validation set of the pseudo-label learner.
#[derive(Clone, Debug, PartialEq)]
pub struct WarmupSet {
    features: Array2<f64>,
    fine: Array2<u8>,
}

impl WarmupSet {
    pub fn new(features: Array2<f64>, fine: Array2<u8>) -> Result<Self> {
        if features.nrows() != fine.nrows() {
            return Err(Error::shape("warm-up label rows", features.nrows(), fine.nrows()));
        }
        if features.nrows() == 0 {
            return Err(Error::Input("warm-up set is empty".into()));
        }
        if fine.iter().any(|&v| v > 1) {
            return Err(Error::Input("warm-up labels must be 0/1".into()));
        }
        Ok(WarmupSet { features, fine })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.fine
    }

    pub fn targets(&self) -> Array2<f64> {
        self.fine.mapv(f64::from)
    }
}

/// Number of warm-up rows for `log2(M / total) = log2_ratio`, at least one.
pub fn warmup_size(total: usize, log2_ratio: i32) -> usize {
    let m = (2f64.powi(log2_ratio) * total as f64).round() as usize;
    m.max(1)
}

/// Splits a fully labelled dataset into a coarse-only training set and a
/// warm-up set of `max(1, round(2^log2_ratio * total))` random rows.
/// Both parts keep the original row order.
pub fn split_warmup(full: &Dataset, log2_ratio: i32, seed: u64) -> Result<(Dataset, WarmupSet)> {
    if full.rows() == 0 {
        return Err(Error::Input("cannot split an empty dataset".into()));
    }
    if log2_ratio > 0 {
        return Err(Error::Config(format!("log2 ratio must be <= 0, got {log2_ratio}")));
    }
    let fine = full.ground_truth()?;
    let m = warmup_size(full.rows(), log2_ratio);
    if m >= full.rows() {
        return Err(Error::Input(format!(
            "warm-up size {m} leaves no training rows out of {}",
            full.rows()
        )));
    }
    let mut order: Vec<usize> = (0..full.rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut warm: Vec<usize> = order[..m].to_vec();
    let mut train: Vec<usize> = order[m..].to_vec();
    warm.sort_unstable();
    train.sort_unstable();
    let warmup = WarmupSet::new(select_rows(full.features(), &warm), fine.select(Axis(0), &warm))?;
    Ok((full.select(&train), warmup))
}

/// Parameters of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub coarse: usize,
    pub children_per_coarse: usize,
    pub dim: usize,
    pub rows: usize,
    pub label_density: f64,
    pub noise: f64,
    /// Fraction of each fine scorer's variance shared with its siblings, in `[0, 1)`.
    #[serde(default)]
    pub parent_share: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            coarse: 5,
            children_per_coarse: 4,
            dim: 32,
            rows: 2000,
            label_density: 0.25,
            noise: 0.1,
            parent_share: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coarse == 0 || self.children_per_coarse == 0 || self.dim == 0 || self.rows == 0 {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        if !(self.label_density > 0.0 && self.label_density < 1.0) {
            return Err(Error::Config(format!(
                "label density must lie in (0, 1), got {}",
                self.label_density
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be >= 0, got {}", self.noise)));
        }
        if !(0.0..1.0).contains(&self.parent_share) {
            return Err(Error::Config(format!(
                "parent share must lie in [0, 1), got {}",
                self.parent_share
            )));
        }
        Ok(())
    }
}

/// Draws a linear ground-truth scorer and labels standard-normal features with it.
///
/// Fine label `f` is relevant iff `w_f . x + noise * eta > t_f`, where `t_f` is
/// the `1 - density` quantile of the score's marginal distribution. Coarse
/// labels are the OR of their children.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Dataset, LabelHierarchy)> {
    cfg.validate()?;
    let hierarchy = LabelHierarchy::uniform(cfg.coarse, cfg.children_per_coarse)?;
    let (d, k) = (cfg.dim, hierarchy.fine_count());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let scale = 1.0 / (d as f64).sqrt();
    let shared: Array2<f64> = Array2::from_shape_simple_fn((cfg.coarse, d), || normal() * scale);
    let own: Array2<f64> = Array2::from_shape_simple_fn((k, d), || normal() * scale);
    let (a, b) = (cfg.parent_share.sqrt(), (1.0 - cfg.parent_share).sqrt());
    let scorer = Array2::from_shape_fn((k, d), |(f, i)| {
        a * shared[[hierarchy.parent_of(f), i]] + b * own[[f, i]]
    });

    let z = Normal::new(0.0, 1.0)
        .expect("standard normal parameters are valid")
        .inverse_cdf(1.0 - cfg.label_density);
    let thresholds: Array1<f64> = scorer
        .rows()
        .into_iter()
        .map(|w| (w.dot(&w) + cfg.noise * cfg.noise).sqrt() * z)
        .collect();

    let features: Array2<f64> = Array2::from_shape_simple_fn((cfg.rows, d), &mut normal);
    let scores = features.dot(&scorer.t());
    let mut fine = Array2::<u8>::zeros((cfg.rows, k));
    for n in 0..cfg.rows {
        for f in 0..k {
            let s = scores[[n, f]] + cfg.noise * normal();
            fine[[n, f]] = u8::from(s > thresholds[f]);
        }
    }
    let coarse = hierarchy.coarse_from_fine(fine.view())?;
    let data = Dataset::new(features, coarse, Some(fine), &hierarchy)?;
    Ok((data, hierarchy))
}
