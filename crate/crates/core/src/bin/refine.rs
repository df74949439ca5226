use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refinement::experiment::{
    active, benchmark, evaluate_saved_model, run_synth, write_active, write_benchmark, write_eval, ExperimentConfig,
};
use refinement::Error;

#[derive(Parser)]
#[command(name = "refine", version, about = "Coarse-to-fine label refinement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hierarchical dataset.
    Synth(Common),
    /// Train and evaluate every learner at every warm-up ratio.
    Benchmark(Common),
    /// Run the active-learning loop for every query strategy.
    Active(Common),
    /// Evaluate a saved model on the configured test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent cells.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if self.threads == Some(0) {
            return Err(Error::Config("--threads must be positive".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth(c) => {
            let cfg = c.resolve()?;
            for path in run_synth(&cfg)? {
                println!("{}", path.display());
            }
        }
        Command::Benchmark(c) => {
            let cfg = c.resolve()?;
            let report = benchmark(&cfg, c.threads)?;
            write_benchmark(&cfg, &report, &cfg.output_dir)?;
            println!("{}", cfg.output_dir.join("benchmark.csv").display());
        }
        Command::Active(c) => {
            let cfg = c.resolve()?;
            let report = active(&cfg, c.threads)?;
            write_active(&cfg, &report, &cfg.output_dir)?;
            println!("{}", cfg.output_dir.join("auc.json").display());
        }
        Command::Eval { common, model } => {
            let cfg = common.resolve()?;
            let results = evaluate_saved_model(&cfg, &model)?;
            for (k, v) in &results {
                println!("P@{k} = {v}");
            }
            write_eval(&results, &cfg.output_dir)?;
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Io { .. } => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
