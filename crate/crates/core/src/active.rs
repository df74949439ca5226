//! Query strategies over unknown label entries and the budgeted active loop.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, WarmupSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, ProgressionCurve};
use crate::hierarchy::PartialLabelMatrix;
use crate::learners::{
    label_from_derivative, lookahead_params, pseudo_label_derivatives, Learner, PseudoLabelMatrix,
    TrainConfig, TrainInputs, TrainingRun,
};
use crate::model::{clamp_probability, Architecture, ModelParameters};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Uncertainty,
    Pseudo,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Uncertainty => "uncertainty",
            Strategy::Pseudo => "pseudo",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredEntry {
    pub row: usize,
    pub label: usize,
    pub score: f64,
    /// Current prediction, when the strategy uses one.
    pub current: Option<f64>,
    /// Look-ahead prediction of the pseudo strategy.
    pub lookahead: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryScores {
    pub entries: Vec<ScoredEntry>,
}

impl QueryScores {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }
}

/// `-p ln p - (1 - p) ln(1 - p)` on a clamped probability.
pub fn binary_entropy(p: f64) -> f64 {
    cross_entropy(p, p)
}

/// `-(p ln q + (1 - p) ln(1 - q))` with both probabilities clamped.
pub fn cross_entropy(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp_probability(p), clamp_probability(q));
    -(p * q.ln() + (1.0 - p) * (1.0 - q).ln())
}

fn check_entries(entries: &[(usize, usize)], shape: (usize, usize)) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::Input("no unknown entries to score".into()));
    }
    if let Some(&(i, j)) = entries.iter().find(|&&(i, j)| i >= shape.0 || j >= shape.1) {
        return Err(Error::Input(format!("entry ({i}, {j}) out of range for {shape:?}")));
    }
    Ok(())
}

/// i.i.d. uniform scores.
pub fn score_random(entries: &[(usize, usize)], seed: u64) -> Result<QueryScores> {
    if entries.is_empty() {
        return Err(Error::Input("no unknown entries to score".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(QueryScores {
        entries: entries
            .iter()
            .map(|&(row, label)| ScoredEntry {
                row,
                label,
                score: rng.gen::<f64>(),
                current: None,
                lookahead: None,
            })
            .collect(),
    })
}

fn predictions(theta: &ModelParameters, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    theta.predict_batch(features)
}

/// Binary entropy of the current prediction.
pub fn score_uncertainty(theta: &ModelParameters, data: &Dataset, entries: &[(usize, usize)]) -> Result<QueryScores> {
    check_entries(entries, (data.rows(), theta.output_dim()))?;
    let probs = predictions(theta, data.features().view())?;
    Ok(QueryScores {
        entries: entries
            .iter()
            .map(|&(row, label)| {
                let p = probs[[row, label]];
                ScoredEntry {
                    row,
                    label,
                    score: binary_entropy(p),
                    current: Some(p),
                    lookahead: None,
                }
            })
            .collect(),
    })
}

/// Cross-entropy between predictions under `theta` and under `theta_hat`.
pub fn cross_entropy_scores(
    theta: &ModelParameters,
    theta_hat: &ModelParameters,
    data: &Dataset,
    entries: &[(usize, usize)],
) -> Result<QueryScores> {
    check_entries(entries, (data.rows(), theta.output_dim()))?;
    let now = predictions(theta, data.features().view())?;
    let ahead = predictions(theta_hat, data.features().view())?;
    Ok(QueryScores {
        entries: entries
            .iter()
            .map(|&(row, label)| {
                let (p, q) = (now[[row, label]], ahead[[row, label]]);
                ScoredEntry {
                    row,
                    label,
                    score: cross_entropy(p, q),
                    current: Some(p),
                    lookahead: Some(q),
                }
            })
            .collect(),
    })
}

/// Parameters after the pseudo strategy's look-ahead: assign pseudo-labels to
/// every unknown entry of the training set with the sign rule, then take one
/// gradient step on the whole training set using them as targets.
pub fn pseudo_lookahead(
    theta: &ModelParameters,
    data: &Dataset,
    partial: &PartialLabelMatrix,
    pseudo: &PseudoLabelMatrix,
    valset: &WarmupSet,
    cfg: &TrainConfig,
) -> Result<ModelParameters> {
    if valset.is_empty() {
        return Err(Error::Input("validation set is empty".into()));
    }
    if pseudo.dim() != partial.dim() || partial.rows() != data.rows() {
        return Err(Error::shape("pseudo-label rows", data.rows(), pseudo.dim().0));
    }
    let scale = cfg.scaling.factor(data.rows());
    let derivatives = pseudo_label_derivatives(
        theta,
        data.features(),
        pseudo.values(),
        valset.features(),
        &valset.targets(),
        cfg.alpha,
        scale,
    )?;
    let mut targets = partial.values().clone();
    for ((i, j), t) in targets.indexed_iter_mut() {
        if !partial.is_observed(i, j) {
            *t = label_from_derivative(derivatives[[i, j]]);
        }
    }
    lookahead_params(theta, data.features(), &targets, cfg.alpha, scale)
}

/// Expected-model-change score: cross-entropy between the current prediction
/// and the prediction after a pseudo-labelled look-ahead step.
pub fn score_pseudo_change(
    theta: &ModelParameters,
    data: &Dataset,
    partial: &PartialLabelMatrix,
    pseudo: &PseudoLabelMatrix,
    valset: &WarmupSet,
    cfg: &TrainConfig,
    entries: &[(usize, usize)],
) -> Result<QueryScores> {
    check_entries(entries, partial.dim())?;
    let theta_hat = pseudo_lookahead(theta, data, partial, pseudo, valset, cfg)?;
    cross_entropy_scores(theta, &theta_hat, data, entries)
}

/// Top `count` entries by score, ties broken by `(row, label)`.
pub fn select_queries(scores: &QueryScores, count: usize) -> Result<Vec<(usize, usize)>> {
    if count > scores.len() {
        return Err(Error::Input(format!(
            "cannot select {count} queries from {} scored entries",
            scores.len()
        )));
    }
    let mut keys: Vec<(usize, usize)> = scores.entries.iter().map(|e| (e.row, e.label)).collect();
    keys.sort_unstable();
    if keys.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Input("scored entries contain duplicates".into()));
    }
    let mut order: Vec<&ScoredEntry> = scores.entries.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((a.row, a.label).cmp(&(b.row, b.label)))
    });
    Ok(order.iter().take(count).map(|e| (e.row, e.label)).collect())
}

/// Simulated annotator holding the ground truth of the training rows.
#[derive(Clone, Debug)]
pub struct Oracle {
    truth: Array2<u8>,
    calls: usize,
}

impl Oracle {
    pub fn new(data: &Dataset) -> Result<Self> {
        Ok(Oracle {
            truth: data.ground_truth()?.clone(),
            calls: 0,
        })
    }

    pub fn query(&mut self, row: usize, label: usize) -> Result<u8> {
        let v = *self
            .truth
            .get((row, label))
            .ok_or_else(|| Error::Input(format!("oracle query ({row}, {label}) out of range")))?;
        self.calls += 1;
        Ok(v)
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

/// How the classifier is refreshed after each batch of answers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One epoch of further training per round, full retraining from a fresh
    /// initialization every `reinit_period` rounds.
    #[default]
    Incremental,
    /// Fresh initialization and a full training run every round.
    Retrain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveConfig {
    pub strategy: Strategy,
    pub budget: usize,
    pub batch_size: usize,
    pub reinit_period: usize,
    pub protocol: Protocol,
    /// Learner retrained on the growing label set.
    pub base_learner: Learner,
    pub train: TrainConfig,
    pub ks: Vec<usize>,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            strategy: Strategy::Pseudo,
            budget: 500,
            batch_size: 50,
            reinit_period: 10,
            protocol: Protocol::Incremental,
            base_learner: Learner::Pseudo,
            train: TrainConfig::default(),
            ks: vec![1, 3, 5],
        }
    }
}

impl ActiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("query batch size must be positive".into()));
        }
        if self.budget > 0 && self.budget < self.batch_size {
            return Err(Error::Config(format!(
                "budget {} is smaller than the query batch size {}",
                self.budget, self.batch_size
            )));
        }
        if self.reinit_period == 0 {
            return Err(Error::Config("reinit period must be positive".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("k list must be nonempty and positive".into()));
        }
        Ok(())
    }
}

/// Held-out labelled data for the progression curves.
#[derive(Clone, Copy, Debug)]
pub struct TestSet<'a> {
    pub features: ArrayView2<'a, f64>,
    pub truth: ArrayView2<'a, u8>,
}

#[derive(Clone, Debug)]
pub struct ActiveOutcome {
    /// `(k, curve)` in the order of the configured k list.
    pub curves: Vec<(usize, ProgressionCurve)>,
    pub params: ModelParameters,
    pub queried: Vec<(usize, usize)>,
}

fn score(
    strategy: Strategy,
    run: &TrainingRun,
    data: &Dataset,
    partial: &PartialLabelMatrix,
    warmup: &WarmupSet,
    cfg: &ActiveConfig,
    round: usize,
) -> Result<QueryScores> {
    let unknown = partial.unknown_entries();
    match strategy {
        Strategy::Random => score_random(&unknown, cfg.train.seed.wrapping_add(round as u64)),
        Strategy::Uncertainty => score_uncertainty(run.params(), data, &unknown),
        Strategy::Pseudo => {
            let fresh;
            let pseudo = match run.pseudo() {
                Some(p) => p,
                None => {
                    fresh = PseudoLabelMatrix::new(partial);
                    &fresh
                }
            };
            score_pseudo_change(run.params(), data, partial, pseudo, warmup, &cfg.train, &unknown)
        }
    }
}

fn record(
    curves: &mut [(usize, ProgressionCurve)],
    params: &ModelParameters,
    test: &TestSet,
    queried: usize,
) -> Result<()> {
    let ks: Vec<usize> = curves.iter().map(|(k, _)| *k).collect();
    let values = evaluate_model(params, test.features, test.truth, &ks)?;
    for ((_, curve), v) in curves.iter_mut().zip(values) {
        curve.push(queried, v)?;
    }
    Ok(())
}

fn base_inputs<'a>(
    learner: Learner,
    data: &'a Dataset,
    partial: &'a PartialLabelMatrix,
    warmup: &'a WarmupSet,
) -> TrainInputs<'a> {
    if learner == Learner::Fs {
        TrainInputs::warmup_only(warmup)
    } else {
        TrainInputs::new(data, partial, warmup)
    }
}

/// Budgeted active refinement: train, then repeatedly score unknown entries,
/// query a batch from the oracle, extend the observed set and refresh the
/// classifier, recording test P@k after every round.
pub fn run_active_loop(
    data: &Dataset,
    partial: &mut PartialLabelMatrix,
    warmup: &WarmupSet,
    oracle: &mut Oracle,
    arch: &Architecture,
    cfg: &ActiveConfig,
    test: TestSet,
) -> Result<ActiveOutcome> {
    cfg.validate()?;
    if cfg.budget > partial.unknown_count() {
        return Err(Error::Config(format!(
            "budget {} exceeds the {} unknown entries",
            cfg.budget,
            partial.unknown_count()
        )));
    }
    let mut run = {
        let inputs = base_inputs(cfg.base_learner, data, partial, warmup);
        let mut run = TrainingRun::new(cfg.base_learner, arch, &cfg.train, &inputs)?;
        run.run(&inputs)?;
        run
    };
    let mut curves: Vec<(usize, ProgressionCurve)> =
        cfg.ks.iter().map(|&k| (k, ProgressionCurve::new())).collect();
    record(&mut curves, run.params(), &test, 0)?;

    let mut queried = Vec::with_capacity(cfg.budget);
    let mut round = 0;
    while queried.len() < cfg.budget {
        round += 1;
        let count = cfg.batch_size.min(cfg.budget - queried.len());
        let scores = score(cfg.strategy, &run, data, partial, warmup, cfg, round)?;
        let picks = select_queries(&scores, count)?;
        for &(i, j) in &picks {
            let answer = oracle.query(i, j)?;
            partial.observe(i, j, answer)?;
        }
        queried.extend_from_slice(&picks);

        let inputs = base_inputs(cfg.base_learner, data, partial, warmup);
        let reinit = match cfg.protocol {
            Protocol::Retrain => true,
            Protocol::Incremental => round % cfg.reinit_period == 0,
        };
        if reinit {
            let round_cfg = TrainConfig {
                seed: cfg.train.seed.wrapping_add(round as u64),
                ..cfg.train.clone()
            };
            run = TrainingRun::new(cfg.base_learner, arch, &round_cfg, &inputs)?;
            run.run(&inputs)?;
        } else {
            run.sync_observed(partial)?;
            let steps = run.steps_per_epoch(&inputs)?;
            run.run_steps(&inputs, steps)?;
        }
        record(&mut curves, run.params(), &test, queried.len())?;
    }

    Ok(ActiveOutcome {
        curves,
        params: run.into_parts().0,
        queried,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(row: usize, label: usize, score: f64) -> ScoredEntry {
        ScoredEntry {
            row,
            label,
            score,
            current: None,
            lookahead: None,
        }
    }

    #[test]
    fn entropy_values() {
        assert!((binary_entropy(0.5) - std::f64::consts::LN_2).abs() < 1e-15);
        let expected = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        assert!((binary_entropy(0.9) - expected).abs() < 1e-15);
        assert!((binary_entropy(0.9) - 0.3250829733914482).abs() < 1e-12);
        assert!((binary_entropy(0.3) - binary_entropy(0.7)).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_values() {
        assert!((cross_entropy(0.5, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
        let a = cross_entropy(0.99, 0.99);
        let b = cross_entropy(0.99, 0.01);
        assert!((a - 0.056001534354847386).abs() < 1e-12, "{a}");
        assert!((b - 4.559218987486745).abs() < 1e-12, "{b}");
        assert!(b > a);
    }

    #[test]
    fn selection_tie_break() {
        let scores = QueryScores {
            entries: vec![entry(0, 0, 0.9), entry(0, 1, 0.1), entry(1, 0, 0.9)],
        };
        assert_eq!(select_queries(&scores, 2).unwrap(), vec![(0, 0), (1, 0)]);
        assert_eq!(select_queries(&scores, 1).unwrap(), vec![(0, 0)]);
        assert_eq!(select_queries(&scores, 3).unwrap().len(), 3);
        assert!(select_queries(&scores, 4).is_err());
    }

    #[test]
    fn selection_rejects_duplicates() {
        let scores = QueryScores {
            entries: vec![entry(0, 0, 0.9), entry(0, 0, 0.9)],
        };
        assert!(select_queries(&scores, 2).is_err());
    }

    #[test]
    fn random_scores_are_seeded() {
        let entries = [(0, 0), (0, 1), (3, 2)];
        assert_eq!(score_random(&entries, 4).unwrap(), score_random(&entries, 4).unwrap());
        assert_eq!(select_queries(&score_random(&[(2, 1)], 9).unwrap(), 1).unwrap(), vec![(2, 1)]);
        assert!(score_random(&[], 1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ActiveConfig::default().validate().is_ok());
        let bad = ActiveConfig {
            budget: 10,
            batch_size: 20,
            ..ActiveConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = ActiveConfig {
            reinit_period: 0,
            ..ActiveConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
