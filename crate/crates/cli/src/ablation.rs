//! One training run per head variant with shared data and seed.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use kdl::train::TrainHistory;
use kdl::{HeadConfig, KernelSpec};

use crate::run::{read_config, read_params, run_training, write_atomic, DataArgs};
use crate::{out_dir, CmdResult, Failure};

#[derive(Args, Debug)]
pub struct AblationArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Polynomial degrees of the KDL heads.
    #[arg(long, default_value = "1,2,3", value_delimiter = ',')]
    pub degrees: Vec<u32>,
    /// Also run the standard dense head.
    #[arg(long)]
    pub with_fc: bool,
    /// Base model config; only its head kind and kernel are replaced.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_params: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Train accuracy that defines `epochs_to_target`.
    #[arg(long, default_value_t = 0.95)]
    pub target: f64,
}

fn epochs_to(history: &TrainHistory, target: f64) -> Option<usize> {
    history.records.iter().find(|r| r.train_acc >= target).map(|r| r.epoch)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn cmd_ablation(args: AblationArgs) -> CmdResult {
    let base = read_config(args.config.as_deref())?;
    let params = read_params(args.train_params.as_deref(), args.max_epochs)?;
    let seed = args.seed.unwrap_or(base.seed);
    out_dir(&args.out)?;

    let mut heads = Vec::new();
    if args.with_fc {
        heads.push(HeadConfig::fc(base.head.hidden_units, base.head.num_classes));
    }
    for &n in &args.degrees {
        heads.push(HeadConfig::kdl(KernelSpec::polynomial(n), base.head.hidden_units, base.head.num_classes));
    }

    let mut csv = String::from("variant,best_val_acc,epochs_to_stop,wall_time,epochs_to_target,status\n");
    let mut failed = Vec::new();
    for head in heads {
        let mut cfg = base.clone();
        cfg.head = head;
        cfg.seed = seed;
        let label = cfg.head.label();
        log::info!("ablation variant {label}");
        match run_training(&cfg, &params, &args.data, &args.out.join(&label), None) {
            Ok((history, result)) => {
                let _ = writeln!(
                    csv,
                    "{label},{},{},{},{},ok",
                    opt(result.best_val_acc),
                    result.epochs,
                    result.wall_time,
                    opt(epochs_to(&history, args.target)),
                );
            }
            Err(e) => {
                eprintln!("variant {label} failed: {e}");
                let _ = writeln!(csv, "{label},,,,,failed");
                failed.push(label);
            }
        }
    }
    write_atomic(&args.out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("failed variants: {}", failed.join(", "))))
    }
}
