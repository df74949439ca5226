//! Training procedures: fully supervised, observed-entry ERM (LEML-style),
//! one-class weighted, and the pseudo-label learner.
//!
//! All four share one mini-batch engine. Each step draws a batch of training
//! rows and, independently, a batch of warm-up rows from two separately seeded
//! streams, and descends on
//!
//! ```text
//! s(|B|) * sum_{(i,j) in B x K} w_ij BCE(p_ij, y_ij) + s(|W|) * sum_{(m,k) in W x K} w_warm BCE(p_mk, y_mk)
//! ```
//!
//! where `s` is 1 (sum scaling) or the reciprocal batch size (mean scaling).
//! The learners differ only in the targets and weights on training rows.
//! Because the streams are independent, a learner whose training-row weights
//! are all zero follows exactly the trajectory of warm-up-only training.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, WarmupSet};
use crate::error::{Error, Result};
use crate::hierarchy::PartialLabelMatrix;
use crate::model::{
    batch_loss, loss_and_grad, select_rows, Architecture, Batch, FlatGradient, ModelParameters,
};

const TRAIN_STREAM: u64 = 1;
const WARMUP_STREAM: u64 = 2;
const VALIDATION_STREAM: u64 = 3;

/// Initial value of unknown pseudo-labels.
pub const PSEUDO_INIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    /// Warm-up set only.
    Fs,
    /// Observed entries of the training set plus the warm-up set.
    Leml,
    /// Unobserved entries imputed as relevant with a reduced weight.
    Occ,
    /// Learned pseudo-labels on unobserved entries.
    Pseudo,
}

impl Learner {
    pub const ALL: [Learner; 4] = [Learner::Fs, Learner::Leml, Learner::Occ, Learner::Pseudo];

    pub fn name(self) -> &'static str {
        match self {
            Learner::Fs => "fs",
            Learner::Leml => "leml",
            Learner::Occ => "occ",
            Learner::Pseudo => "pseudo",
        }
    }
}

impl std::fmt::Display for Learner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossScaling {
    Sum,
    #[default]
    Mean,
}

impl LossScaling {
    pub fn factor(self, rows: usize) -> f64 {
        match self {
            LossScaling::Sum => 1.0,
            LossScaling::Mean => 1.0 / rows as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Passes over the driving pool (training rows, or warm-up rows for `fs`).
    Epochs(usize),
    Steps(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// `theta <- theta - alpha * g`
    #[default]
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccWeights {
    pub observed: f64,
    pub unobserved: f64,
    /// Weight of the warm-up term; defaults to `observed`.
    #[serde(default)]
    pub warmup: Option<f64>,
    /// Permits `unobserved >= observed`.
    #[serde(default)]
    pub allow_inverted: bool,
}

impl Default for OccWeights {
    fn default() -> Self {
        OccWeights {
            observed: 1.0,
            unobserved: 0.05,
            warmup: None,
            allow_inverted: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub scaling: LossScaling,
    pub occ: OccWeights,
    /// Warm-up rows per validation gradient; `None` uses all of them.
    pub validation_batch: Option<usize>,
    pub optimizer: Optimizer,
    /// Whether the pseudo learner's real update also descends on the warm-up
    /// (validation) set.
    pub pseudo_trains_on_warmup: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.05,
            batch_size: 32,
            schedule: Schedule::Epochs(20),
            seed: 0,
            scaling: LossScaling::Mean,
            occ: OccWeights::default(),
            validation_batch: None,
            optimizer: Optimizer::Sgd,
            pseudo_trains_on_warmup: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.validation_batch == Some(0) {
            return Err(Error::Config("validation batch size must be positive".into()));
        }
        let occ = &self.occ;
        let weights = [Some(occ.observed), Some(occ.unobserved), occ.warmup];
        if weights.iter().flatten().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("occ weights must be finite and nonnegative".into()));
        }
        if !occ.allow_inverted && occ.observed <= occ.unobserved {
            return Err(Error::Config(format!(
                "occ observed weight {} must exceed unobserved weight {}",
                occ.observed, occ.unobserved
            )));
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(Error::Config("invalid adam hyperparameters".into()));
            }
        }
        Ok(())
    }
}

/// `Y^pseudo`: observed entries frozen to their labels, unknown entries carry
/// the current assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelMatrix {
    values: Array2<f64>,
    observed: Array2<bool>,
}

impl PseudoLabelMatrix {
    pub fn new(partial: &PartialLabelMatrix) -> Self {
        let mut values = partial.values().clone();
        ndarray::Zip::from(&mut values)
            .and(partial.mask())
            .for_each(|v, &o| {
                if !o {
                    *v = PSEUDO_INIT;
                }
            });
        PseudoLabelMatrix {
            values,
            observed: partial.mask().clone(),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.observed
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Freezes entries that became observed in `partial` since the last sync.
    pub fn sync_observed(&mut self, partial: &PartialLabelMatrix) -> Result<()> {
        if partial.dim() != self.dim() {
            return Err(Error::shape("pseudo-label rows", self.dim().0, partial.rows()));
        }
        for ((i, j), &o) in partial.mask().indexed_iter() {
            if o && !self.observed[[i, j]] {
                self.observed[[i, j]] = true;
                self.values[[i, j]] = partial.values()[[i, j]];
            } else if !o && self.observed[[i, j]] {
                return Err(Error::Input(format!("entry ({i}, {j}) was unobserved after being observed")));
            }
        }
        Ok(())
    }

    /// Unknown-entry mask (`true` where the value is a pseudo-label).
    pub fn unknown_mask(&self) -> Array2<bool> {
        self.observed.mapv(|o| !o)
    }
}

/// Inputs shared by all learners. `fs` ignores the training rows.
#[derive(Clone, Copy, Debug)]
pub struct TrainInputs<'a> {
    pub data: Option<&'a Dataset>,
    pub partial: Option<&'a PartialLabelMatrix>,
    pub warmup: Option<&'a WarmupSet>,
}

impl<'a> TrainInputs<'a> {
    pub fn new(data: &'a Dataset, partial: &'a PartialLabelMatrix, warmup: &'a WarmupSet) -> Self {
        TrainInputs {
            data: Some(data),
            partial: Some(partial),
            warmup: Some(warmup),
        }
    }

    pub fn warmup_only(warmup: &'a WarmupSet) -> Self {
        TrainInputs {
            data: None,
            partial: None,
            warmup: Some(warmup),
        }
    }

    fn training(&self) -> Result<Option<(&'a Dataset, &'a PartialLabelMatrix)>> {
        match (self.data, self.partial) {
            (Some(d), Some(p)) => {
                if p.rows() != d.rows() {
                    return Err(Error::shape("partial label rows", d.rows(), p.rows()));
                }
                Ok(Some((d, p)))
            }
            (None, None) => Ok(None),
            _ => Err(Error::Input("training rows and their partial labels must be given together".into())),
        }
    }
}

/// Cycles through shuffled permutations of `0..n`.
#[derive(Clone, Debug)]
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    fn new(n: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        BatchStream {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn resize(&mut self, n: usize) {
        if self.order.len() != n {
            self.order = (0..n).collect();
            self.pos = n;
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

#[derive(Clone, Debug)]
enum OptimizerState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl OptimizerState {
    fn new(opt: Optimizer, n: usize) -> Self {
        match opt {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam { beta1, beta2, epsilon } => OptimizerState::Adam {
                beta1,
                beta2,
                epsilon,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn apply(&mut self, params: &ModelParameters, grad: &FlatGradient, alpha: f64) -> Result<ModelParameters> {
        match self {
            OptimizerState::Sgd => params.sgd_step(grad, alpha),
            OptimizerState::Adam { beta1, beta2, epsilon, m, v, t } => {
                *t += 1;
                let (c1, c2) = (1.0 - beta1.powi(*t), 1.0 - beta2.powi(*t));
                let step: Vec<f64> = grad
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| {
                        m[i] = *beta1 * m[i] + (1.0 - *beta1) * g;
                        v[i] = *beta2 * v[i] + (1.0 - *beta2) * g * g;
                        (m[i] / c1) / ((v[i] / c2).sqrt() + *epsilon)
                    })
                    .collect();
                params.sgd_step(&FlatGradient::from_vec(step), alpha)
            }
        }
    }
}

/// Targets and weights of the training-row term for one learner.
fn training_targets(
    learner: Learner,
    cfg: &TrainConfig,
    partial: &PartialLabelMatrix,
    pseudo: Option<&PseudoLabelMatrix>,
    rows: &[usize],
) -> (Array2<f64>, Array2<f64>) {
    let k = partial.labels();
    let mut targets = Array2::zeros((rows.len(), k));
    let mut weights = Array2::zeros((rows.len(), k));
    for (b, &i) in rows.iter().enumerate() {
        for j in 0..k {
            let observed = partial.is_observed(i, j);
            let (y, w) = match learner {
                Learner::Fs => (0.0, 0.0),
                Learner::Leml => {
                    if observed {
                        (partial.values()[[i, j]], 1.0)
                    } else {
                        (0.0, 0.0)
                    }
                }
                Learner::Occ => {
                    if observed {
                        (partial.values()[[i, j]], cfg.occ.observed)
                    } else {
                        (1.0, cfg.occ.unobserved)
                    }
                }
                Learner::Pseudo => {
                    let pseudo = pseudo.expect("pseudo learner always carries its label matrix");
                    (pseudo.values[[i, j]], 1.0)
                }
            };
            targets[[b, j]] = y;
            weights[[b, j]] = w;
        }
    }
    (targets, weights)
}

fn warmup_weight(learner: Learner, cfg: &TrainConfig) -> f64 {
    match learner {
        Learner::Occ => cfg.occ.warmup.unwrap_or(cfg.occ.observed),
        _ => 1.0,
    }
}

/// Full (unbatched, sum-scaled) training objective of a learner at `params`.
pub fn objective_value(
    learner: Learner,
    params: &ModelParameters,
    inputs: &TrainInputs,
    pseudo: Option<&PseudoLabelMatrix>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    if learner != Learner::Fs {
        if let Some((data, partial)) = inputs.training()? {
            if learner == Learner::Pseudo && pseudo.is_none() {
                return Err(Error::Input("pseudo objective needs a pseudo-label matrix".into()));
            }
            let rows: Vec<usize> = (0..data.rows()).collect();
            let (targets, weights) = training_targets(learner, cfg, partial, pseudo, &rows);
            total += batch_loss(params, &Batch::new(data.features().clone(), targets, Some(weights))?)?;
        }
    }
    if let Some(warm) = inputs.warmup {
        let w = warmup_weight(learner, cfg);
        let weights = Array2::from_elem(warm.labels().raw_dim(), w);
        total += batch_loss(params, &Batch::new(warm.features().clone(), warm.targets(), Some(weights))?)?;
    }
    Ok(total)
}

/// Derivatives of the validation loss after one look-ahead step with respect
/// to every pseudo-label of a batch, `[B x K]`.
///
/// The look-ahead is `theta' = theta - alpha * scale * grad_theta L_batch(theta; P)`
/// with unit entry weights. Since `dL_batch/dtheta` is affine in each `p_ij`
/// with slope `-dz_ij/dtheta`, `dtheta'/dp_ij = alpha * scale * dz_ij/dtheta`
/// and the chain rule gives `alpha * scale * <grad L_val(theta'), dz_ij/dtheta>`,
/// which a single forward-mode pass evaluates for all labels of all rows.
pub fn pseudo_label_derivatives(
    theta: &ModelParameters,
    batch_features: &Array2<f64>,
    batch_targets: &Array2<f64>,
    val_features: &Array2<f64>,
    val_targets: &Array2<f64>,
    alpha: f64,
    scale: f64,
) -> Result<Array2<f64>> {
    let lookahead = lookahead_params(theta, batch_features, batch_targets, alpha, scale)?;
    let val = Batch::new(val_features.clone(), val_targets.clone(), None)?;
    let (_, g_val) = loss_and_grad(&lookahead, &val)?;
    let tangents = theta.logit_tangents(batch_features.view(), &g_val)?;
    Ok(tangents * (alpha * scale))
}

/// One plain gradient step on the unit-weighted batch loss.
pub fn lookahead_params(
    theta: &ModelParameters,
    features: &Array2<f64>,
    targets: &Array2<f64>,
    alpha: f64,
    scale: f64,
) -> Result<ModelParameters> {
    let batch = Batch::new(features.clone(), targets.clone(), None)?;
    let (_, g) = loss_and_grad(theta, &batch)?;
    theta.sgd_step(&g, alpha * scale)
}

/// Eq.-8 style sign rule: relevant iff the derivative is `<= 0`.
#[inline]
pub fn label_from_derivative(derivative: f64) -> f64 {
    if derivative <= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Refreshes the pseudo-labels of the unknown entries in `rows` and returns
/// the derivative matrix (`[rows x K]`) that decided them.
pub fn assign_pseudo_labels(
    theta: &ModelParameters,
    data: &Dataset,
    rows: &[usize],
    pseudo: &mut PseudoLabelMatrix,
    valset: &WarmupSet,
    val_rows: Option<&[usize]>,
    cfg: &TrainConfig,
) -> Result<Array2<f64>> {
    if valset.is_empty() {
        return Err(Error::Input("validation set is empty".into()));
    }
    if rows.is_empty() {
        return Err(Error::Input("pseudo-label batch is empty".into()));
    }
    if pseudo.dim().0 != data.rows() {
        return Err(Error::shape("pseudo-label rows", data.rows(), pseudo.dim().0));
    }
    let features = select_rows(data.features(), rows);
    let targets = pseudo.values.select(Axis(0), rows);
    let (val_x, val_y) = match val_rows {
        Some(v) => (select_rows(valset.features(), v), valset.targets().select(Axis(0), v)),
        None => (valset.features().clone(), valset.targets()),
    };
    let scale = cfg.scaling.factor(rows.len());
    let derivatives =
        pseudo_label_derivatives(theta, &features, &targets, &val_x, &val_y, cfg.alpha, scale)?;
    for (b, &i) in rows.iter().enumerate() {
        for j in 0..pseudo.dim().1 {
            if !pseudo.observed[[i, j]] {
                pseudo.values[[i, j]] = label_from_derivative(derivatives[[b, j]]);
            }
        }
    }
    Ok(derivatives)
}

/// Resumable training state for any learner.
#[derive(Clone, Debug)]
pub struct TrainingRun {
    learner: Learner,
    cfg: TrainConfig,
    params: ModelParameters,
    optimizer: OptimizerState,
    train_stream: BatchStream,
    warmup_stream: BatchStream,
    validation_stream: BatchStream,
    pseudo: Option<PseudoLabelMatrix>,
    steps_taken: usize,
}

impl TrainingRun {
    pub fn new(learner: Learner, arch: &Architecture, cfg: &TrainConfig, inputs: &TrainInputs) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParameters::init(arch, cfg.seed)?;
        let training = inputs.training()?;
        if learner != Learner::Fs && training.is_none() {
            return Err(Error::Input(format!("learner {learner} needs coarse-labelled training rows")));
        }
        if matches!(learner, Learner::Fs | Learner::Pseudo) && inputs.warmup.is_none() {
            return Err(Error::Input(format!("learner {learner} needs a nonempty warm-up set")));
        }
        if let Some((data, partial)) = training {
            if partial.labels() != arch.output_dim {
                return Err(Error::shape("partial label columns", arch.output_dim, partial.labels()));
            }
            if data.dim() != arch.input_dim {
                return Err(Error::shape("training features", arch.input_dim, data.dim()));
            }
        }
        if let Some(w) = inputs.warmup {
            if w.labels().ncols() != arch.output_dim {
                return Err(Error::shape("warm-up label columns", arch.output_dim, w.labels().ncols()));
            }
        }
        let pseudo = match (learner, training) {
            (Learner::Pseudo, Some((_, partial))) => Some(PseudoLabelMatrix::new(partial)),
            _ => None,
        };
        let n_train = training.map_or(0, |(d, _)| d.rows());
        let n_warm = inputs.warmup.map_or(0, |w| w.len());
        Ok(TrainingRun {
            learner,
            cfg: cfg.clone(),
            optimizer: OptimizerState::new(cfg.optimizer, params.param_count()),
            params,
            train_stream: BatchStream::new(n_train, cfg.seed, TRAIN_STREAM),
            warmup_stream: BatchStream::new(n_warm, cfg.seed, WARMUP_STREAM),
            validation_stream: BatchStream::new(n_warm, cfg.seed, VALIDATION_STREAM),
            pseudo,
            steps_taken: 0,
        })
    }

    pub fn learner(&self) -> Learner {
        self.learner
    }

    pub fn params(&self) -> &ModelParameters {
        &self.params
    }

    pub fn pseudo(&self) -> Option<&PseudoLabelMatrix> {
        self.pseudo.as_ref()
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn into_parts(self) -> (ModelParameters, Option<PseudoLabelMatrix>) {
        (self.params, self.pseudo)
    }

    /// Updates per pass over the driving pool.
    pub fn steps_per_epoch(&self, inputs: &TrainInputs) -> Result<usize> {
        let pool = match (self.learner, inputs.training()?) {
            (Learner::Fs, _) | (_, None) => inputs.warmup.map_or(0, |w| w.len()),
            (_, Some((data, _))) => data.rows(),
        };
        Ok(pool.div_ceil(self.cfg.batch_size))
    }

    pub fn scheduled_steps(&self, inputs: &TrainInputs) -> Result<usize> {
        match self.cfg.schedule {
            Schedule::Steps(n) => Ok(n),
            Schedule::Epochs(e) => Ok(e * self.steps_per_epoch(inputs)?),
        }
    }

    /// Runs the configured schedule.
    pub fn run(&mut self, inputs: &TrainInputs) -> Result<()> {
        let steps = self.scheduled_steps(inputs)?;
        self.run_steps(inputs, steps)
    }

    pub fn run_steps(&mut self, inputs: &TrainInputs, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(inputs)?;
        }
        Ok(())
    }

    /// Starts over from fresh parameters and pseudo-labels, keeping the batch streams.
    pub fn reinitialize(&mut self, inputs: &TrainInputs, seed: u64) -> Result<()> {
        self.params = ModelParameters::init(self.params.arch(), seed)?;
        self.optimizer = OptimizerState::new(self.cfg.optimizer, self.params.param_count());
        if let (Some(_), Some((_, partial))) = (&self.pseudo, inputs.training()?) {
            self.pseudo = Some(PseudoLabelMatrix::new(partial));
        }
        Ok(())
    }

    /// Pulls newly observed entries into the pseudo-label matrix.
    pub fn sync_observed(&mut self, partial: &PartialLabelMatrix) -> Result<()> {
        match &mut self.pseudo {
            Some(p) => p.sync_observed(partial),
            None => Ok(()),
        }
    }

    /// One update: sample batches, refresh pseudo-labels if applicable, descend.
    pub fn step(&mut self, inputs: &TrainInputs) -> Result<()> {
        let training = if self.learner == Learner::Fs {
            None
        } else {
            inputs.training()?
        };
        let mut grad: Option<FlatGradient> = None;

        if let Some((data, partial)) = training {
            self.train_stream.resize(data.rows());
            let rows = self.train_stream.next_batch(self.cfg.batch_size);
            if let Some(pseudo) = self.pseudo.as_mut() {
                let warm = inputs
                    .warmup
                    .ok_or_else(|| Error::Input("pseudo learner needs a validation set".into()))?;
                self.validation_stream.resize(warm.len());
                let val_rows = self
                    .cfg
                    .validation_batch
                    .map(|b| self.validation_stream.next_batch(b.min(warm.len())));
                assign_pseudo_labels(&self.params, data, &rows, pseudo, warm, val_rows.as_deref(), &self.cfg)?;
            }
            let (targets, weights) =
                training_targets(self.learner, &self.cfg, partial, self.pseudo.as_ref(), &rows);
            let batch = Batch::new(select_rows(data.features(), &rows), targets, Some(weights))?;
            let (_, g) = loss_and_grad(&self.params, &batch)?;
            grad = Some(g.scaled(self.cfg.scaling.factor(rows.len())));
        }

        let skip_warmup = self.learner == Learner::Pseudo && !self.cfg.pseudo_trains_on_warmup;
        if let Some(warm) = inputs.warmup.filter(|_| !skip_warmup) {
            self.warmup_stream.resize(warm.len());
            let rows = self.warmup_stream.next_batch(self.cfg.batch_size);
            let w = warmup_weight(self.learner, &self.cfg);
            let targets = warm.targets().select(Axis(0), &rows);
            let weights = Array2::from_elem(targets.raw_dim(), w);
            let batch = Batch::new(select_rows(warm.features(), &rows), targets, Some(weights))?;
            let (_, g) = loss_and_grad(&self.params, &batch)?;
            let g = g.scaled(self.cfg.scaling.factor(rows.len()));
            grad = Some(match grad {
                Some(mut acc) => {
                    acc.accumulate(&g);
                    acc
                }
                None => g,
            });
        }

        let grad = grad.ok_or_else(|| Error::Input("nothing to train on".into()))?;
        self.params = self.optimizer.apply(&self.params, &grad, self.cfg.alpha)?;
        self.steps_taken += 1;
        Ok(())
    }
}

pub fn train_fully_supervised(warmup: &WarmupSet, arch: &Architecture, cfg: &TrainConfig) -> Result<ModelParameters> {
    let inputs = TrainInputs::warmup_only(warmup);
    let mut run = TrainingRun::new(Learner::Fs, arch, cfg, &inputs)?;
    run.run(&inputs)?;
    Ok(run.into_parts().0)
}

/// Observed-entry ERM. `warmup` may be omitted.
pub fn train_leml(
    data: &Dataset,
    partial: &PartialLabelMatrix,
    warmup: Option<&WarmupSet>,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<ModelParameters> {
    let inputs = TrainInputs {
        data: Some(data),
        partial: Some(partial),
        warmup,
    };
    let mut run = TrainingRun::new(Learner::Leml, arch, cfg, &inputs)?;
    run.run(&inputs)?;
    Ok(run.into_parts().0)
}

pub fn train_occ(
    data: &Dataset,
    partial: &PartialLabelMatrix,
    warmup: Option<&WarmupSet>,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<ModelParameters> {
    let inputs = TrainInputs {
        data: Some(data),
        partial: Some(partial),
        warmup,
    };
    let mut run = TrainingRun::new(Learner::Occ, arch, cfg, &inputs)?;
    run.run(&inputs)?;
    Ok(run.into_parts().0)
}

pub fn train_pseudo(
    data: &Dataset,
    partial: &PartialLabelMatrix,
    warmup: &WarmupSet,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(ModelParameters, PseudoLabelMatrix)> {
    let inputs = TrainInputs::new(data, partial, warmup);
    let mut run = TrainingRun::new(Learner::Pseudo, arch, cfg, &inputs)?;
    run.run(&inputs)?;
    let (params, pseudo) = run.into_parts();
    Ok((params, pseudo.expect("pseudo learner always carries its label matrix")))
}

/// Trains any learner with the configured schedule.
pub fn train(
    learner: Learner,
    data: &Dataset,
    partial: &PartialLabelMatrix,
    warmup: &WarmupSet,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(ModelParameters, Option<PseudoLabelMatrix>)> {
    let inputs = match learner {
        Learner::Fs => TrainInputs::warmup_only(warmup),
        _ => TrainInputs::new(data, partial, warmup),
    };
    let mut run = TrainingRun::new(learner, arch, cfg, &inputs)?;
    run.run(&inputs)?;
    Ok(run.into_parts())
}
