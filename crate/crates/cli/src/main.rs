use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdenet::experiment::output::format_summary;
use sdenet::experiment::{self, selfcheck, ExperimentConfig, ExperimentKind, Results};
use sdenet::Error;

#[derive(Parser)]
#[command(name = "sdenet", version, about = "Neural SDE uncertainty experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and save checkpoints.
    Train(RunArgs),
    /// In-distribution vs out-of-distribution detection.
    EvalOod(RunArgs),
    /// Correct vs misclassified test inputs.
    EvalMisclass(RunArgs),
    /// Adversarial-example detection over an epsilon sweep.
    Attack(RunArgs),
    /// Pool-based active learning on gapped regression.
    ActiveLearn(RunArgs),
    /// Uncertainty heatmap over a 2-D grid.
    Visualize(RunArgs),
    /// Compare the metric implementations with brute-force versions.
    Selfcheck {
        #[arg(long, default_value_t = selfcheck::DEFAULT_SETS)]
        sets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON experiment file; defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a value, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, env = "SDENET_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Run seeds one after another.
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn config(&self) -> sdenet::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path, &self.overrides)?,
            None => ExperimentConfig::from_overrides(&self.overrides)?,
        };
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(seeds) = &self.seeds {
            config.seeds = seeds.clone();
        }
        if self.sequential {
            config.parallel = false;
        }
        Ok(config)
    }
}

fn print_results(results: &Results) {
    for m in &results.methods {
        let eps = m.epsilon.map(|e| format!(" eps={e}")).unwrap_or_default();
        println!("{} [{}]{eps}", m.method, m.score);
        for (name, s) in &m.summary {
            println!("  {name:<20} {}", format_summary(name, s));
        }
    }
    for (name, v) in &results.extras {
        println!("{name}: {v:.4}");
    }
}

fn run(cli: Cli) -> sdenet::Result<bool> {
    let (kind, args) = match cli.command {
        Command::Train(a) => (ExperimentKind::Train, a),
        Command::EvalOod(a) => (ExperimentKind::EvalOod, a),
        Command::EvalMisclass(a) => (ExperimentKind::EvalMisclass, a),
        Command::Attack(a) => (ExperimentKind::Attack, a),
        Command::ActiveLearn(a) => (ExperimentKind::ActiveLearn, a),
        Command::Visualize(a) => (ExperimentKind::Visualize, a),
        Command::Selfcheck { sets, seed } => {
            let checks = selfcheck::run(sets, seed)?;
            for c in &checks {
                let status = if c.passed { "pass" } else { "FAIL" };
                println!("{status} {:<20} sets={} max_abs_diff={:.3e}", c.metric, c.sets, c.max_abs_diff);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    };
    let config = args.config()?;
    let results = experiment::run(kind, &config)?;
    print_results(&results);
    println!("wrote {}", config.output_dir.display());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code().clamp(1, 255) as u8
}
