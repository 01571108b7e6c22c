//! Single training runs and the data sources they read.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use kdl::data::{gen_synthetic, load_csv, split, DatasetSplit, Loaded, SyntheticKind};
use kdl::train::{train, StopReason, TrainHistory, TrainParams};
use kdl::weights::save_weights;
use kdl::{Model, ModelConfig, ParamKind};

use crate::{out_dir, parse_list, CmdResult, Failure};

pub const DEFAULT_SYNTHETIC_N: usize = 200;

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// CSV path, or `synthetic:<blobs|spiral|checkerboard-image>[:n_per_class]`.
    #[arg(long)]
    pub data: String,
    /// Train/val/test fractions for data without a usage column.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_fractions)]
    pub split: (f64, f64, f64),
}

fn parse_fractions(s: &str) -> Result<(f64, f64, f64), String> {
    match parse_list::<f64>(s)?.as_slice() {
        &[a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated fractions".into()),
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Model config JSON; defaults to the five-block model with a cubic KDL head.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training hyper-parameters JSON.
    #[arg(long)]
    pub train_params: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Multiplies every initial weight tensor (fault-injection fixture).
    #[arg(long, hide = true)]
    pub init_scale: Option<f64>,
}

/// Loads a data URI, shaped for `cfg`. Data without a usage column is split
/// with `fractions` and `seed`.
pub fn load_data(args: &DataArgs, cfg: &ModelConfig, seed: u64) -> Result<DatasetSplit, Failure> {
    let [c, h, w] = cfg.input_shape;
    let split_data = if let Some(rest) = args.data.strip_prefix("synthetic:") {
        let mut parts = rest.split(':');
        let kind: SyntheticKind = parts.next().unwrap_or_default().parse()?;
        let n = match parts.next() {
            Some(v) => v
                .parse()
                .map_err(|_| Failure::Usage(format!("invalid sample count {v:?} in {}", args.data)))?,
            None => DEFAULT_SYNTHETIC_N,
        };
        let d = gen_synthetic(kind, n, cfg.head.num_classes, seed)?;
        split(&d, args.split, seed)?
    } else {
        let path = Path::new(&args.data);
        let text = fs::read_to_string(path)?;
        let has_usage = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .find(|l| l.split(',').next().is_some_and(|f| f.trim().parse::<i64>().is_ok()))
            .is_some_and(|l| l.split(',').count() == 3);
        match load_csv(path, (h, w), has_usage)? {
            Loaded::Split(s) => s,
            Loaded::Single(d) => split(&d, args.split, seed)?,
        }
    };
    for part in [&split_data.train, &split_data.val, &split_data.test] {
        if !part.is_empty() && part.image_shape() != [c, h, w] {
            return Err(Failure::Usage(format!(
                "data images are {:?} but the model expects {:?}",
                part.image_shape(),
                [c, h, w]
            )));
        }
        if part.num_classes() > cfg.head.num_classes {
            return Err(Failure::Usage(format!(
                "data has labels up to {} but the model has {} classes",
                part.num_classes() - 1,
                cfg.head.num_classes
            )));
        }
    }
    Ok(split_data)
}

pub fn read_config(path: Option<&Path>) -> Result<ModelConfig, Failure> {
    match path {
        Some(p) => Ok(ModelConfig::from_json(&fs::read_to_string(p)?)?),
        None => Ok(ModelConfig::default()),
    }
}

pub fn read_params(path: Option<&Path>, max_epochs: Option<usize>) -> Result<TrainParams, Failure> {
    let mut p = match path {
        Some(p) => TrainParams::from_json(&fs::read_to_string(p)?)?,
        None => TrainParams::default(),
    };
    if let Some(m) = max_epochs {
        p.max_epochs = m;
    }
    Ok(p)
}

/// Writes `text` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(tmp, path)
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    model: &'a ModelConfig,
    train: &'a TrainParams,
    data: &'a str,
    split: (f64, f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub epochs: usize,
    pub stop_reason: StopReason,
    pub best_epoch: Option<usize>,
    /// Validation accuracy of the restored (best) weights.
    pub best_val_acc: Option<f64>,
    pub final_train_acc: Option<f64>,
    pub wall_time: f64,
    pub version: &'static str,
}

/// Trains `cfg` on `data` and writes config.json, history.csv, the weights
/// and finally result.json into `out`.
pub fn run_training(
    cfg: &ModelConfig,
    params: &TrainParams,
    data_args: &DataArgs,
    out: &Path,
    init_scale: Option<f64>,
) -> Result<(TrainHistory, RunResult), Failure> {
    let data = load_data(data_args, cfg, cfg.seed)?;
    let mut model: Model<f32> = Model::build(cfg)?;
    if let Some(s) = init_scale {
        for p in model.params_mut() {
            if matches!(p.kind, ParamKind::Weight | ParamKind::ConvWeight) {
                p.value.data_mut().iter_mut().for_each(|v| *v *= s as f32);
            }
        }
    }
    out_dir(&out.to_path_buf())?;
    let resolved = ResolvedConfig {
        model: cfg,
        train: params,
        data: &data_args.data,
        split: data_args.split,
    };
    fs::write(out.join("config.json"), serde_json::to_string(&resolved).expect("serializable") + "\n")?;
    let history = train(&mut model, &data, params)?;
    fs::write(out.join("history.csv"), history.to_csv())?;
    save_weights(&model, out)?;
    let result = RunResult {
        variant: cfg.head.label(),
        seed: cfg.seed,
        epochs: history.records.len(),
        stop_reason: history.stop_reason,
        best_epoch: history.best_epoch,
        best_val_acc: history.best().map(|r| r.val_acc),
        final_train_acc: history.records.last().map(|r| r.train_acc),
        wall_time: history.wall_time,
        version: env!("CARGO_PKG_VERSION"),
    };
    write_atomic(&out.join("result.json"), &(serde_json::to_string(&result).expect("serializable") + "\n"))?;
    Ok((history, result))
}

pub fn cmd_train(args: TrainArgs) -> CmdResult {
    let mut cfg = read_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let params = read_params(args.train_params.as_deref(), args.max_epochs)?;
    let (_, result) = run_training(&cfg, &params, &args.data, &args.out, args.init_scale)?;
    println!("{}", serde_json::to_string(&result).expect("serializable"));
    Ok(())
}
