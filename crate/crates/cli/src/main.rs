use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hglmm_cli::commands;
use hglmm_cli::split::parse_ratios;
use hglmm_cli::{CliError, Result};
use hglmm_core::family::Family;
use hglmm_core::simulate::SimConfig;

/// Fit, score, and benchmark deeply-nested hierarchical generalized linear
/// mixed models with a moment-based two-pass estimator.
#[derive(Parser)]
#[command(name = "hglmm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model from a CSV and a model spec, evaluating on held-out data.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Output model archive path.
        #[arg(long)]
        out: PathBuf,
        /// Train/dev/test ratios.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        split: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the spec's response binarization threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Also print the local-vs-global comparison bucketed by this
        /// grouping column's training counts.
        #[arg(long)]
        baseline_table: Option<String>,
        /// Write fit metrics as JSON.
        #[arg(long)]
        report_json: Option<PathBuf>,
    },
    /// Score a CSV with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a labeled CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the seeded simulation benchmark and print loss-versus-n tables.
    Simulate {
        #[arg(long, default_value = "logistic")]
        family: String,
        /// Comma-separated sample sizes.
        #[arg(long, default_value = "1000,10000,100000")]
        n: String,
        #[arg(long, default_value_t = 20)]
        replicates: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        groups: usize,
        #[arg(long, default_value_t = 500)]
        leaves: usize,
        #[arg(long, default_value_t = 5)]
        q0: usize,
        #[arg(long, default_value_t = 5)]
        q1: usize,
        #[arg(long, default_value_t = 5)]
        q2: usize,
        #[arg(long, default_value = "semi_weighted")]
        scheme: String,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also fit the global and local baselines on every draw.
        #[arg(long)]
        baselines: bool,
        /// Write one CSV row per (n, replicate, method).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dump the first configuration's generated data as CSV.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Exhaustive model-selection search over levels and predictor subsets.
    Search {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Grouping columns in nesting order, outermost first.
        #[arg(long, value_delimiter = ',')]
        levels: Vec<String>,
        /// Candidate random-effect predictors (the intercept is always
        /// included).
        #[arg(long, value_delimiter = ',')]
        candidates: Vec<String>,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        split: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write every cell's outcome as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-node effect table for one level and covariate of a saved model.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        level: usize,
        /// Covariate name (as expanded by the spec) or zero-based index.
        #[arg(long)]
        feature: String,
        #[arg(long, default_value_t = 50)]
        top: usize,
    },
}

fn parse_n_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad sample size '{p}'")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Fit {
            data,
            spec,
            out,
            split,
            seed,
            jobs,
            threshold,
            baseline_table,
            report_json,
        } => commands::cmd_fit(
            &data,
            &spec,
            &out,
            parse_ratios(&split)?,
            seed,
            jobs,
            threshold,
            baseline_table.as_deref(),
            report_json.as_deref(),
        ),
        Command::Predict { model, data, out } => commands::cmd_predict(&model, &data, &out),
        Command::Evaluate { model, data } => commands::cmd_evaluate(&model, &data),
        Command::Simulate {
            family,
            n,
            replicates,
            seed,
            groups,
            leaves,
            q0,
            q1,
            q2,
            scheme,
            jobs,
            baselines,
            out,
            dump,
        } => {
            let family: Family = family.parse().map_err(CliError::Core)?;
            let n_list = parse_n_list(&n)?;
            let mut cfg = SimConfig::benchmark(family, 1000, seed);
            cfg.groups = groups;
            cfg.leaves = leaves;
            cfg.q0 = q0;
            cfg.q1 = q1;
            cfg.q2 = q2;
            commands::cmd_simulate(
                family,
                &n_list,
                replicates,
                seed,
                &cfg,
                &scheme,
                jobs,
                baselines,
                out.as_deref(),
                dump.as_deref(),
            )
        }
        Command::Search {
            data,
            spec,
            levels,
            candidates,
            depth,
            split,
            seed,
            jobs,
            out,
        } => {
            if levels.is_empty() {
                return Err(CliError::Usage("search needs at least one level".into()));
            }
            if !(1..=2).contains(&depth) {
                return Err(CliError::Usage("search depth must be 1 or 2".into()));
            }
            commands::cmd_search(
                &data,
                &spec,
                &levels,
                &candidates,
                depth,
                parse_ratios(&split)?,
                seed,
                jobs,
                out.as_deref(),
            )
        }
        Command::Report {
            model,
            level,
            feature,
            top,
        } => commands::cmd_report(&model, level, &feature, top),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own help/version output exits cleanly
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(4);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(output) => {
            print!("{output}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
