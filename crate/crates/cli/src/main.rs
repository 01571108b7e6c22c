//! `kdl`: train, evaluate, ablate, gradient-check and benchmark kernelized
//! dense layers.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage/config/data error,
//! 3 numeric overflow.

mod ablation;
mod bench;
mod eval;
mod gradcheck;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "kdl", version, about = "Kernelized dense layers: training and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its run artifacts.
    Train(run::TrainArgs),
    /// Train one model per head variant on shared data and seed.
    Ablation(ablation::AblationArgs),
    /// Finite-difference check of every layer and kernel kind.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Time forward and backward passes of a single head layer.
    Bench(bench::BenchArgs),
    /// Evaluate saved weights on a dataset.
    Eval(eval::EvalArgs),
}

/// How a command failed; maps onto the exit code.
#[derive(Debug)]
pub enum Failure {
    Check(String),
    Usage(String),
    Core(kdl::Error),
}

impl From<kdl::Error> for Failure {
    fn from(e: kdl::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Core(e) if e.is_overflow() => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Check(m) | Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

/// Parses `"a,b,c"` into a list.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| format!("invalid list entry {t:?}")))
        .collect()
}

pub fn out_dir(p: &PathBuf) -> Result<(), Failure> {
    std::fs::create_dir_all(p).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", p.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => run::cmd_train(a),
        Command::Ablation(a) => ablation::cmd_ablation(a),
        Command::Gradcheck(a) => gradcheck::cmd_gradcheck(a),
        Command::Bench(a) => bench::cmd_bench(a),
        Command::Eval(a) => eval::cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
