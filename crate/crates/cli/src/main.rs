use std::path::PathBuf;
use std::process::ExitCode;

use anova_bart::exec::{self, Execution};
use anova_bart::Error;
use clap::{Args, Parser, Subcommand};

mod commands;

/// Bayesian additive regression on identifiable binary-product trees.
///
/// Exit status: 0 success, 1 usage or configuration error, 2 data error,
/// 3 numeric failure (residual audit, NaN, replay mismatch).
#[derive(Parser, Debug)]
#[command(name = "anova-bart", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Worker threads for chains, folds and batch prediction.
    #[arg(long, global = true, env = "ANOVA_BART_THREADS")]
    threads: Option<usize>,
    /// Run every batch operation on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Suppress progress lines on standard error.
    #[arg(long, short, global = true)]
    quiet: bool,
}

impl Global {
    pub fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a Friedman benchmark dataset and a truth sidecar.
    Generate(commands::GenerateArgs),
    /// Run the sampler and write draw files plus a run manifest.
    Fit(commands::FitArgs),
    /// Posterior-mean predictions for a query table.
    Predict(commands::PredictArgs),
    /// RMSE and CRPS against a labelled table.
    Evaluate(commands::EvaluateArgs),
    /// Component importance scores and the posterior selection rule.
    Select(commands::SelectArgs),
    /// k-fold cross-validated hyperparameter grid search.
    Cv(commands::CvArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(t) = cli.global.threads.filter(|&t| t > 0) {
        exec::init_workers(t);
    }
    let g = &cli.global;
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Fit(a) => commands::fit(&a, g),
        Command::Predict(a) => commands::predict(&a, g),
        Command::Evaluate(a) => commands::evaluate(&a, g),
        Command::Select(a) => commands::select(&a, g),
        Command::Cv(a) => commands::cv(&a, g),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn sidecar_path(csv: &std::path::Path) -> PathBuf {
    csv.with_extension("truth.json")
}
