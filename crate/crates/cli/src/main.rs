//! `dler`: train, verify and analyze length-efficient RL runs.
//!
//! Exit codes: 0 success, 2 invalid configuration or flags, 3 runtime
//! failure, 4 a self-verifying check failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dler_core::experiment::{self, BiasOracleArgs, SEED_ENV};
use dler_core::merge::{MergeStrategy, DEFAULT_SCALE, DEFAULT_TOP_FRACTION};
use dler_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "dler", version, about = "Length-efficient policy-gradient training lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured variants and write metrics, checkpoints and reports.
    Train {
        /// JSON experiment config.
        #[arg(long, short)]
        config: PathBuf,
        /// Override a config key, e.g. `--set trainer.eps_high=0.28`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Monte Carlo check of the group-normalized advantage moments and bias.
    BiasOracle {
        /// Group size.
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 2.0])]
        sigmas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0])]
        epsilons: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        /// Defaults to $DLER_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Fixed noise value for the bias-versus-sigma curve.
        #[arg(long, default_value_t = 0.5)]
        curve_epsilon: f64,
        #[arg(long, default_value = "bias_oracle")]
        out: PathBuf,
    },
    /// Merge a fine-tuned checkpoint back onto its base.
    Merge {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        tuned: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Strategy::Select)]
        strategy: Strategy,
        #[arg(long, default_value_t = DEFAULT_TOP_FRACTION)]
        top_fraction: f64,
        #[arg(long, default_value_t = DEFAULT_SCALE)]
        scale: f64,
        /// Interpolation weight on the tuned snapshot for `linear`.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Step and keyword statistics for a JSONL corpus of {id, text, correct}.
    AnalyzeTrace {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "trace_report")]
        out: PathBuf,
        /// Replace the default keyword list.
        #[arg(long, value_delimiter = ',')]
        keywords: Option<Vec<String>>,
    },
    /// Convert a metrics JSONL file into a plot-ready CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Select,
    Linear,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Train { config, overrides } => {
            let cfg = experiment::load_config(&config, &overrides, env_seed().as_deref())?;
            for s in experiment::cmd_train(&cfg)? {
                let fin = s.final_eval.expect("completed runs are evaluated");
                println!(
                    "{} {}: {} steps, accuracy {:.3} -> {:.3}, length {:.2} -> {:.2} ({:.1}% shorter)",
                    s.run_id,
                    s.variant.name(),
                    s.steps_completed,
                    s.initial.accuracy,
                    fin.accuracy,
                    s.initial.mean_length,
                    fin.mean_length,
                    s.length_reduction_percent.unwrap_or(0.0),
                );
            }
            println!("artifacts in {}", cfg.run_dir().display());
            Ok(0)
        }
        Command::BiasOracle {
            n,
            sigmas,
            epsilons,
            samples,
            seed,
            curve_epsilon,
            out,
        } => {
            let seed = match (seed, env_seed()) {
                (Some(s), _) => s,
                (None, Some(raw)) => raw
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}={raw} is not an unsigned integer")))?,
                (None, None) => 0,
            };
            let args = BiasOracleArgs {
                n,
                sigmas,
                epsilons,
                samples,
                seed,
                curve_epsilon,
                ..BiasOracleArgs::default()
            };
            let report = experiment::cmd_bias_oracle(&args, &out)?;
            for r in &report.results {
                for e in &r.estimates {
                    println!(
                        "sigma {:<4} eps {:<4} E[num] {:.5} (analytic {:.5}, se {:.1e})  E[D^2] {:.5} (analytic {:.5}, se {:.1e})",
                        r.sigma,
                        e.epsilon,
                        e.numerator.mean,
                        e.analytic_numerator,
                        e.numerator.se,
                        e.d_squared.mean,
                        e.analytic_d_squared,
                        e.d_squared.se,
                    );
                }
            }
            for p in &report.curve.points {
                println!("bias at eps {}: sigma {:<4} {:+.4} (se {:.1e})", report.curve.epsilon, p.sigma, p.bias.mean, p.bias.se);
            }
            match report.magnitude_strictly_increasing {
                Some(ok) => println!("|bias| strictly increasing in sigma: {ok}"),
                None => println!("ordering checks skipped: insufficient precision"),
            }
            println!("report in {}", out.display());
            if report.analytic_checks_pass {
                println!("analytic moments within 3 SE: ok");
                Ok(0)
            } else {
                println!("analytic moments within 3 SE: FAILED");
                Ok(EXIT_CHECK)
            }
        }
        Command::Merge {
            base,
            tuned,
            out,
            strategy,
            top_fraction,
            scale,
            alpha,
        } => {
            let strategy = match strategy {
                Strategy::Select => MergeStrategy::Select { top_fraction, scale },
                Strategy::Linear => MergeStrategy::Linear { alpha },
            };
            let merged = experiment::cmd_merge(&base, &tuned, &out, strategy)?;
            println!("wrote {} ({} parameters)", out.display(), merged.len());
            Ok(0)
        }
        Command::AnalyzeTrace { input, out, keywords } => {
            let stats = experiment::cmd_analyze_trace(&input, keywords.as_deref(), &out)?;
            for (name, s) in [("overall", &stats.overall), ("correct", &stats.correct), ("incorrect", &stats.incorrect)] {
                println!(
                    "{name:<9} responses {:>5}  steps/response {:.3}  tokens/step {:.3}  keywords/response {:.3}",
                    s.responses, s.step_count, s.mean_tokens_per_step, s.keyword_count
                );
            }
            Ok(0)
        }
        Command::Report { metrics, out } => {
            let rows = experiment::cmd_report(&metrics, &out)?;
            println!("wrote {rows} rows to {}", out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
