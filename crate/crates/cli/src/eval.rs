//! Inference-mode evaluation of saved weights.

use std::path::PathBuf;

use clap::Args;

use kdl::data::Part;
use kdl::train::evaluate;
use kdl::weights::{load_weights, read_manifest};
use kdl::Model;

use crate::run::{load_data, read_config, DataArgs};
use crate::{CmdResult, Failure};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run directory holding weights.json and weights.bin.
    #[arg(long)]
    pub weights: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Which part of the data to evaluate: train, val or test.
    #[arg(long, default_value = "test")]
    pub part: String,
    /// Expected model config; must match the one the weights were saved with.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for splitting data without a usage column; defaults to the model seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
}

pub fn cmd_eval(args: EvalArgs) -> CmdResult {
    let part: Part = args.part.parse()?;
    let cfg = match &args.config {
        Some(_) => read_config(args.config.as_deref())?,
        None => read_manifest(&args.weights)?.config,
    };
    let mut model: Model<f32> = load_weights(&cfg, &args.weights)?;
    let data = load_data(&args.data, &cfg, args.seed.unwrap_or(cfg.seed))?;
    let set = data.get(part);
    if set.is_empty() {
        return Err(Failure::Usage(format!("the {} part of {} is empty", args.part, args.data.data)));
    }
    let report = evaluate(&mut model, set, args.batch)?;
    println!("{}", serde_json::to_string(&report).expect("serializable"));
    Ok(())
}
