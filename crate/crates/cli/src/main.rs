//! `kfair` command-line tool.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kfair::search::Strategy;

pub const EXIT_OK: u8 = 0;
pub const EXIT_UNFAIR: u8 = 10;
pub const EXIT_UNKNOWN: u8 = 20;
pub const EXIT_DEGENERATE: u8 = 30;
pub const EXIT_ERROR: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "kfair", version, about = "Fairness certification, k-discrimination search and explanation for ReLU networks")]
struct Cli {
    /// Worker threads for solver relaxations and sample evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Network JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Feature schema JSON.
    #[arg(long)]
    pub schema: PathBuf,
    /// Output bucket width.
    #[arg(long, default_value_t = kfair::DEFAULT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, default_value = "sa", value_parser = ["rw", "sa", "sa-knn"])]
    pub strategy: String,
    /// Search budget in seconds.
    #[arg(long, default_value_t = 14_400.0)]
    pub timeout: f64,
    /// Iteration budget; makes runs reproducible independent of machine speed.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Stop once this k is reached.
    #[arg(long)]
    pub stop_at_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Disable solver-seeded restarts.
    #[arg(long)]
    pub no_solver: bool,
    /// Branch-and-bound node budget per solver query.
    #[arg(long, default_value_t = 400)]
    pub solver_node_limit: usize,
    /// Wall-clock budget per solver query, in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub solver_timeout: f64,
}

impl SearchArgs {
    pub fn strategy(&self) -> Strategy {
        self.strategy.parse().expect("validated by clap")
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decide 2-fairness over the whole input space.
    Certify {
        #[command(flatten)]
        inputs: Inputs,
        /// Solver budget in seconds.
        #[arg(long, default_value_t = 100.0)]
        timeout: f64,
        /// Absolute optimality gap.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        node_limit: Option<usize>,
        /// Also write the MILP in LP format.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search for instances with maximal k-discrimination.
    Search {
        #[command(flatten)]
        inputs: Inputs,
        /// CSV of seed rows.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explain high-k regions found by a search.
    Explain {
        #[command(flatten)]
        inputs: Inputs,
        /// Search report JSON with best instances.
        #[arg(long)]
        search_report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5_000)]
        samples: usize,
        #[arg(long, default_value_t = 0.95)]
        percentile: f64,
        /// Minimum inside/outside mean-k difference.
        #[arg(long, default_value_t = 2.0)]
        delta: f64,
        #[arg(long, default_value_t = 6)]
        max_depth: usize,
        #[arg(long, default_value_t = 20)]
        min_leaf: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Guard and retrain, then compare all variants.
    Mitigate {
        #[command(flatten)]
        inputs: Inputs,
        /// Labelled CSV; split into training and held-out rows.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        explanation: PathBuf,
        #[arg(long)]
        search_report: PathBuf,
        /// Guards only: no augmentation or fine-tuning.
        #[arg(long)]
        skip_retrain: bool,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print a summary of any report written by this tool.
    Report {
        input: PathBuf,
    },
    /// Build a network with a planted discrimination region.
    Plant {
        #[arg(long)]
        schema: PathBuf,
        /// Core interval, repeated: `feature=lower:upper`.
        #[arg(long = "region", required = true)]
        region: Vec<String>,
        /// Distinct buckets inside the core.
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = kfair::DEFAULT_EPSILON)]
        epsilon: f64,
        /// L1 distance (encoded units) over which scores return to the base.
        #[arg(long, default_value_t = 1e-3)]
        ramp: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a labelled CSV sampled from the network.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000)]
        rows: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KFAIR_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let argv: Vec<String> = std::env::args().collect();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.workers.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let workers = cli.workers.max(1);
    let result = pool.install(|| run(cli.command, workers, &argv));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let degenerate = e
                .downcast_ref::<kfair::Error>()
                .is_some_and(|k| matches!(k, kfair::Error::Degenerate(_)));
            ExitCode::from(if degenerate { EXIT_DEGENERATE } else { EXIT_ERROR })
        }
    }
}

fn run(command: Command, workers: usize, argv: &[String]) -> anyhow::Result<u8> {
    match command {
        Command::Certify {
            inputs,
            timeout,
            tolerance,
            node_limit,
            dump_lp,
            out,
        } => commands::certify(&inputs, timeout, tolerance, node_limit, workers, dump_lp.as_deref(), &out, argv),
        Command::Search { inputs, data, search, out } => commands::search(&inputs, &data, &search, &out, argv),
        Command::Explain {
            inputs,
            search_report,
            seed,
            samples,
            percentile,
            delta,
            max_depth,
            min_leaf,
            out,
        } => {
            let config = kfair::ExplainConfig {
                n_samples: samples,
                high_k_percentile: percentile,
                delta,
                tree_max_depth: max_depth,
                tree_min_leaf: min_leaf,
                epsilon: inputs.epsilon,
                rng_seed: seed,
                ..Default::default()
            };
            commands::explain(&inputs, &search_report, &config, &out, argv)
        }
        Command::Mitigate {
            inputs,
            data,
            explanation,
            search_report,
            skip_retrain,
            test_fraction,
            epochs,
            learning_rate,
            batch_size,
            search,
            out_dir,
        } => {
            let tune = kfair::mitigate::FineTuneConfig {
                epochs,
                learning_rate,
                batch_size,
                rng_seed: search.seed,
            };
            commands::mitigate(
                &inputs,
                &commands::MitigateInputs {
                    data: &data,
                    explanation: &explanation,
                    search_report: &search_report,
                    skip_retrain,
                    test_fraction,
                },
                &tune,
                &search,
                &out_dir,
                argv,
            )
        }
        Command::Report { input } => commands::report(&input),
        Command::Plant {
            schema,
            region,
            k,
            epsilon,
            ramp,
            seed,
            out,
            data,
            rows,
        } => commands::plant(&schema, &region, k, epsilon, ramp, seed, &out, data.as_deref(), rows, argv),
    }
}
