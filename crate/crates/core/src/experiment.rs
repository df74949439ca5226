//! Experiment configuration and the benchmark / active-learning runners used
//! by the `refine` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{run_active_loop, ActiveConfig, Oracle, Protocol, Strategy, TestSet};
use crate::dataset::{generate_synthetic, split_warmup, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::eval::{all_ones_f1_loss, coin_flip_f1_loss, curve_auc, evaluate_model, recover_f1_loss};
use crate::hierarchy::{LabelHierarchy, PartialLabelMatrix};
use crate::io::{load_dataset, save_dataset, DatasetPaths};
use crate::learners::{train, Learner, TrainConfig};
use crate::model::{Activation, Architecture, ModelParameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    Files {
        train: DatasetPaths,
        test: DatasetPaths,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveSettings {
    pub budget: usize,
    pub batch_size: usize,
    pub reinit_period: usize,
    pub protocol: Protocol,
    pub base_learner: Learner,
    /// Warm-up ratio (log2) used for active runs.
    pub ratio: i32,
}

impl Default for ActiveSettings {
    fn default() -> Self {
        ActiveSettings {
            budget: 500,
            batch_size: 50,
            reinit_period: 10,
            protocol: Protocol::Incremental,
            base_learner: Learner::Pseudo,
            ratio: -6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Size of the generated test set relative to the synthetic row count.
    pub test_fraction: f64,
    pub ratios: Vec<i32>,
    pub learners: Vec<Learner>,
    pub strategies: Vec<Strategy>,
    pub active: ActiveSettings,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub ks: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic(SyntheticConfig::default()),
            test_fraction: 0.25,
            ratios: vec![-10, -9, -8, -7, -6],
            learners: Learner::ALL.to_vec(),
            strategies: vec![Strategy::Random, Strategy::Uncertainty, Strategy::Pseudo],
            active: ActiveSettings::default(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            ks: vec![1, 3, 5],
            repetitions: 10,
            seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        if let Some(r) = self.ratios.iter().find(|&&r| r > 0) {
            return Err(Error::Config(format!("warm-up ratios must be <= 0, got {r}")));
        }
        if self.active.ratio > 0 {
            return Err(Error::Config("active warm-up ratio must be <= 0".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("k list must be nonempty and positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction.is_finite()) {
            return Err(Error::Config("test fraction must be positive".into()));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        self.train.validate()?;
        self.active_config(Strategy::Random, 0).validate()
    }

    pub fn repetition_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }

    pub fn architecture(&self, input_dim: usize, output_dim: usize) -> Architecture {
        Architecture::new(input_dim, self.model.hidden.clone(), output_dim)
            .with_activation(self.model.activation)
    }

    pub fn active_config(&self, strategy: Strategy, rep: usize) -> ActiveConfig {
        ActiveConfig {
            strategy,
            budget: self.active.budget,
            batch_size: self.active.batch_size,
            reinit_period: self.active.reinit_period,
            protocol: self.active.protocol,
            base_learner: self.active.base_learner,
            train: TrainConfig {
                seed: self.repetition_seed(rep),
                ..self.train.clone()
            },
            ks: self.ks.clone(),
        }
    }

    fn check_ks(&self, labels: usize) -> Result<()> {
        match self.ks.iter().find(|&&k| k > labels) {
            Some(k) => Err(Error::Config(format!("k = {k} exceeds the {labels} fine labels"))),
            None => Ok(()),
        }
    }
}

/// Training pool (with ground truth), hierarchy and labelled test set for one repetition.
pub struct Prepared {
    pub pool: Dataset,
    pub hierarchy: LabelHierarchy,
    pub test_features: Array2<f64>,
    pub test_truth: Array2<u8>,
}

/// Synthetic sources draw a fresh dataset per repetition; file sources are fixed.
pub fn prepare(cfg: &ExperimentConfig, rep: usize) -> Result<Prepared> {
    match &cfg.dataset {
        DatasetSource::Synthetic(s) => {
            let test_rows = ((s.rows as f64) * cfg.test_fraction).round().max(1.0) as usize;
            let all = SyntheticConfig {
                rows: s.rows + test_rows,
                seed: s.seed.wrapping_add(cfg.repetition_seed(rep)),
                ..s.clone()
            };
            let (data, hierarchy) = generate_synthetic(&all)?;
            let pool_rows: Vec<usize> = (0..s.rows).collect();
            let test_idx: Vec<usize> = (s.rows..all.rows).collect();
            let test = data.select(&test_idx);
            Ok(Prepared {
                pool: data.select(&pool_rows),
                test_features: test.features().clone(),
                test_truth: test.ground_truth()?.clone(),
                hierarchy,
            })
        }
        DatasetSource::Files { train, test } => {
            let (pool, hierarchy) = load_dataset(train)?;
            pool.ground_truth()?;
            let (test, test_h) = load_dataset(test)?;
            if test_h != hierarchy {
                return Err(Error::Input("train and test hierarchies differ".into()));
            }
            if test.dim() != pool.dim() {
                return Err(Error::shape("test features", pool.dim(), test.dim()));
            }
            Ok(Prepared {
                pool,
                test_features: test.features().clone(),
                test_truth: test.ground_truth()?.clone(),
                hierarchy,
            })
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the synthetic training pool as four files in the output directory and
/// the held-out test split under `test/`.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let DatasetSource::Synthetic(_) = &cfg.dataset else {
        return Err(Error::Config("synth needs a synthetic dataset source".into()));
    };
    let prepared = prepare(cfg, 0)?;
    create_dir(&cfg.output_dir)?;
    let train_paths = DatasetPaths::in_dir(&cfg.output_dir, "");
    save_dataset(&train_paths, &prepared.pool, &prepared.hierarchy)?;
    let test_coarse = prepared.hierarchy.coarse_from_fine(prepared.test_truth.view())?;
    let test = Dataset::new(
        prepared.test_features.clone(),
        test_coarse,
        Some(prepared.test_truth.clone()),
        &prepared.hierarchy,
    )?;
    let test_dir = cfg.output_dir.join("test");
    create_dir(&test_dir)?;
    let test_paths = DatasetPaths::in_dir(&test_dir, "");
    save_dataset(&test_paths, &test, &prepared.hierarchy)?;
    let mut written = vec![
        train_paths.features,
        train_paths.coarse,
        train_paths.fine.expect("in_dir always names a fine file"),
        train_paths.hierarchy,
    ];
    written.extend([
        test_paths.features,
        test_paths.coarse,
        test_paths.fine.expect("in_dir always names a fine file"),
        test_paths.hierarchy,
    ]);
    Ok(written)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkCell {
    pub ratio: i32,
    pub learner: Learner,
    pub repetition: usize,
    /// P@k in the order of the configured k list.
    pub precision: Vec<f64>,
    pub recover: Option<RecoverRecord>,
    pub params: ModelParameters,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoverRecord {
    pub positive_rate: f64,
    pub pseudo: f64,
    pub all_ones: f64,
    pub random_sampled: f64,
    pub random_expected: f64,
}

/// `(mean, sample standard deviation)`; the deviation is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_cell(cfg: &ExperimentConfig, ratio: i32, learner: Learner, rep: usize, prepared: &Prepared) -> Result<BenchmarkCell> {
    let seed = cfg.repetition_seed(rep);
    let (train_set, warmup) = split_warmup(&prepared.pool, ratio, seed)?;
    let partial = PartialLabelMatrix::deduce(train_set.coarse().view(), &prepared.hierarchy)?;
    let arch = cfg.architecture(train_set.dim(), prepared.hierarchy.fine_count());
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (params, pseudo) = train(learner, &train_set, &partial, &warmup, &arch, &train_cfg)?;
    let precision = evaluate_model(&params, prepared.test_features.view(), prepared.test_truth.view(), &cfg.ks)?;
    let recover = match pseudo {
        Some(pseudo) => Some(recover_record(&pseudo, &train_set, seed)?),
        None => None,
    };
    Ok(BenchmarkCell {
        ratio,
        learner,
        repetition: rep,
        precision,
        recover,
        params,
    })
}

/// Recover F1-loss of learned pseudo-labels and of the two naive assignments.
pub fn recover_record(
    pseudo: &crate::learners::PseudoLabelMatrix,
    train_set: &Dataset,
    seed: u64,
) -> Result<RecoverRecord> {
    let truth = train_set.ground_truth()?;
    let unknown = pseudo.unknown_mask();
    let (mut positives, mut total) = (0usize, 0usize);
    for (&u, &t) in unknown.iter().zip(truth.iter()) {
        if u {
            total += 1;
            positives += usize::from(t != 0);
        }
    }
    let positive_rate = if total == 0 { 0.0 } else { positives as f64 / total as f64 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coin: Array2<f64> = Array2::from_shape_simple_fn(truth.raw_dim(), || f64::from(u8::from(rng.gen::<bool>())));
    Ok(RecoverRecord {
        positive_rate,
        pseudo: recover_f1_loss(pseudo.values().view(), truth.view(), unknown.view())?,
        all_ones: all_ones_f1_loss(positive_rate),
        random_sampled: recover_f1_loss(coin.view(), truth.view(), unknown.view())?,
        random_expected: coin_flip_f1_loss(positive_rate),
    })
}

pub struct BenchmarkReport {
    pub cells: Vec<BenchmarkCell>,
    /// `(ratio, learner, k) -> (mean, std)`
    pub summary: BTreeMap<(i32, Learner, usize), (f64, f64)>,
}

fn install_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
            .map(|pool| pool.install(f)),
    }
}

/// Trains and evaluates every `(ratio, learner, repetition)` cell.
pub fn benchmark(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let prepared: Vec<Prepared> = (0..cfg.repetitions).map(|r| prepare(cfg, r)).collect::<Result<_>>()?;
    cfg.check_ks(prepared[0].hierarchy.fine_count())?;
    let jobs: Vec<(i32, Learner, usize)> = cfg
        .ratios
        .iter()
        .flat_map(|&ratio| {
            cfg.learners
                .iter()
                .flat_map(move |&l| (0..cfg.repetitions).map(move |r| (ratio, l, r)))
        })
        .collect();
    let cells: Vec<BenchmarkCell> = install_pool(threads, || {
        jobs.par_iter()
            .map(|&(ratio, learner, rep)| run_cell(cfg, ratio, learner, rep, &prepared[rep]))
            .collect::<Result<Vec<_>>>()
    })??;
    let mut summary = BTreeMap::new();
    for &ratio in &cfg.ratios {
        for &learner in &cfg.learners {
            for (ki, &k) in cfg.ks.iter().enumerate() {
                let values: Vec<f64> = cells
                    .iter()
                    .filter(|c| c.ratio == ratio && c.learner == learner)
                    .map(|c| c.precision[ki])
                    .collect();
                summary.insert((ratio, learner, k), mean_std(&values));
            }
        }
    }
    Ok(BenchmarkReport { cells, summary })
}

/// Writes `benchmark.csv`, `benchmark_detail.csv`, `recover.csv` and the
/// first repetition's model per `(ratio, learner)` under `models/`.
pub fn write_benchmark(cfg: &ExperimentConfig, report: &BenchmarkReport, out: &Path) -> Result<()> {
    create_dir(out)?;
    let mut summary = String::from("ratio,learner,k,mean,std\n");
    for &ratio in &cfg.ratios {
        for &learner in &cfg.learners {
            for &k in &cfg.ks {
                let (m, s) = report.summary[&(ratio, learner, k)];
                writeln!(summary, "{ratio},{learner},{k},{m},{s}").unwrap();
            }
        }
    }
    write_file(&out.join("benchmark.csv"), &summary)?;

    let mut detail = String::from("ratio,learner,repetition,k,precision\n");
    let mut recover = String::from(
        "ratio,repetition,positive_rate,pseudo_f1_loss,all_ones_f1_loss,random_f1_loss,random_expected_f1_loss\n",
    );
    let models = out.join("models");
    create_dir(&models)?;
    for cell in &report.cells {
        for (k, p) in cfg.ks.iter().zip(&cell.precision) {
            writeln!(detail, "{},{},{},{k},{p}", cell.ratio, cell.learner, cell.repetition).unwrap();
        }
        if let Some(r) = &cell.recover {
            writeln!(
                recover,
                "{},{},{},{},{},{},{}",
                cell.ratio, cell.repetition, r.positive_rate, r.pseudo, r.all_ones, r.random_sampled, r.random_expected
            )
            .unwrap();
        }
        if cell.repetition == 0 {
            let path = models.join(format!("ratio{}_{}.rflp", cell.ratio, cell.learner));
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            cell.params
                .write_to(std::io::BufWriter::new(file))
                .map_err(|e| Error::io(&path, e))?;
        }
    }
    write_file(&out.join("benchmark_detail.csv"), &detail)?;
    write_file(&out.join("recover.csv"), &recover)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ActiveRun {
    pub strategy: Strategy,
    pub repetition: usize,
    pub curves: Vec<(usize, crate::eval::ProgressionCurve)>,
}

pub struct ActiveReport {
    pub runs: Vec<ActiveRun>,
    /// `(strategy, k) -> per-repetition AUC`
    pub auc: BTreeMap<(Strategy, usize), Vec<f64>>,
}

fn active_cell(cfg: &ExperimentConfig, strategy: Strategy, rep: usize, prepared: &Prepared) -> Result<ActiveRun> {
    let seed = cfg.repetition_seed(rep);
    let (train_set, warmup) = split_warmup(&prepared.pool, cfg.active.ratio, seed)?;
    let mut partial = PartialLabelMatrix::deduce(train_set.coarse().view(), &prepared.hierarchy)?;
    let mut oracle = Oracle::new(&train_set)?;
    let arch = cfg.architecture(train_set.dim(), prepared.hierarchy.fine_count());
    let outcome = run_active_loop(
        &train_set,
        &mut partial,
        &warmup,
        &mut oracle,
        &arch,
        &cfg.active_config(strategy, rep),
        TestSet {
            features: prepared.test_features.view(),
            truth: prepared.test_truth.view(),
        },
    )?;
    Ok(ActiveRun {
        strategy,
        repetition: rep,
        curves: outcome.curves,
    })
}

/// Runs the active loop for every `(strategy, repetition)`.
pub fn active(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ActiveReport> {
    cfg.validate()?;
    let prepared: Vec<Prepared> = (0..cfg.repetitions).map(|r| prepare(cfg, r)).collect::<Result<_>>()?;
    cfg.check_ks(prepared[0].hierarchy.fine_count())?;
    for (rep, p) in prepared.iter().enumerate() {
        let (train_set, _) = split_warmup(&p.pool, cfg.active.ratio, cfg.repetition_seed(rep))?;
        let unknown = PartialLabelMatrix::deduce(train_set.coarse().view(), &p.hierarchy)?.unknown_count();
        if cfg.active.budget > unknown {
            return Err(Error::Config(format!(
                "budget {} exceeds the {unknown} unknown entries of repetition {rep}",
                cfg.active.budget
            )));
        }
    }
    let jobs: Vec<(Strategy, usize)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| (0..cfg.repetitions).map(move |r| (s, r)))
        .collect();
    let runs: Vec<ActiveRun> = install_pool(threads, || {
        jobs.par_iter()
            .map(|&(s, rep)| active_cell(cfg, s, rep, &prepared[rep]))
            .collect::<Result<Vec<_>>>()
    })??;
    let mut auc: BTreeMap<(Strategy, usize), Vec<f64>> = BTreeMap::new();
    for run in &runs {
        for (k, curve) in &run.curves {
            let v = if curve.len() >= 2 { curve_auc(curve)? } else { curve.points()[0].1 };
            auc.entry((run.strategy, *k)).or_default().push(v);
        }
    }
    Ok(ActiveReport { runs, auc })
}

/// Writes `progression_<strategy>.csv` (mean over repetitions),
/// `progression_<strategy>_detail.csv` and `auc.json`.
pub fn write_active(cfg: &ExperimentConfig, report: &ActiveReport, out: &Path) -> Result<()> {
    create_dir(out)?;
    for &strategy in &cfg.strategies {
        let runs: Vec<&ActiveRun> = report.runs.iter().filter(|r| r.strategy == strategy).collect();
        let mut mean = String::from("round,labels_queried,k,precision_at_k\n");
        let mut detail = String::from("repetition,round,labels_queried,k,precision_at_k\n");
        for (ki, &k) in cfg.ks.iter().enumerate() {
            let n_points = runs[0].curves[ki].1.len();
            for round in 0..n_points {
                let queried = runs[0].curves[ki].1.points()[round].0;
                let values: Vec<f64> = runs.iter().map(|r| r.curves[ki].1.points()[round].1).collect();
                writeln!(mean, "{round},{queried},{k},{}", mean_std(&values).0).unwrap();
            }
        }
        for run in &runs {
            for (k, curve) in &run.curves {
                for (round, (queried, v)) in curve.points().iter().enumerate() {
                    writeln!(detail, "{},{round},{queried},{k},{v}", run.repetition).unwrap();
                }
            }
        }
        write_file(&out.join(format!("progression_{strategy}.csv")), &mean)?;
        write_file(&out.join(format!("progression_{strategy}_detail.csv")), &detail)?;
    }
    let mut json = serde_json::Map::new();
    for &strategy in &cfg.strategies {
        let mut per_k = serde_json::Map::new();
        for &k in &cfg.ks {
            let values = &report.auc[&(strategy, k)];
            let (m, s) = mean_std(values);
            per_k.insert(
                k.to_string(),
                serde_json::json!({ "mean": m, "std": s, "repetitions": values }),
            );
        }
        json.insert(strategy.to_string(), serde_json::Value::Object(per_k));
    }
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(json)).expect("numbers serialize");
    write_file(&out.join("auc.json"), &(text + "\n"))
}

/// Mean P@k of a saved model on the configured test set (first repetition's data).
pub fn evaluate_saved_model(cfg: &ExperimentConfig, model_path: &Path) -> Result<Vec<(usize, f64)>> {
    let file = fs::File::open(model_path).map_err(|e| Error::io(model_path, e))?;
    let params = ModelParameters::read_from(std::io::BufReader::new(file))?;
    let prepared = prepare(cfg, 0)?;
    cfg.check_ks(prepared.hierarchy.fine_count())?;
    let values = evaluate_model(&params, prepared.test_features.view(), prepared.test_truth.view(), &cfg.ks)?;
    Ok(cfg.ks.iter().copied().zip(values).collect())
}

pub fn write_eval(results: &[(usize, f64)], out: &Path) -> Result<()> {
    create_dir(out)?;
    let mut map = serde_json::Map::new();
    for (k, v) in results {
        map.insert(format!("p@{k}"), serde_json::json!(v));
    }
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("numbers serialize");
    write_file(&out.join("eval.json"), &(text + "\n"))
}
