//! Forward/backward timing of one kernelized or standard dense layer.

use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::Serialize;

use kdl::layers::{Dense, KernelDense};
use kdl::{KernelSpec, LayerState, Mode, RngStream, Tensor};

use crate::{CmdResult, Failure};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BenchLayer {
    Kdl,
    Dense,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub layer: BenchLayer,
    /// Polynomial degree of the kdl layer.
    #[arg(long, default_value_t = 1)]
    pub degree: u32,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 128)]
    pub units: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct BenchReport {
    layer: &'static str,
    degree: u32,
    forward_ns_per_call: f64,
    backward_ns_per_call: f64,
    checksum: f64,
}

pub fn cmd_bench(args: BenchArgs) -> CmdResult {
    if args.iters == 0 || args.dim == 0 || args.units == 0 || args.batch == 0 {
        return Err(Failure::Usage("--iters, --dim, --units and --batch must be >= 1".into()));
    }
    let mut rng = RngStream::new(args.seed);
    let (mut layer, name): (LayerState<f32>, _) = match args.layer {
        BenchLayer::Kdl => (
            LayerState::Kdl(KernelDense::he_init(
                KernelSpec::polynomial(args.degree),
                args.dim,
                args.units,
                true,
                &mut rng,
            )?),
            "kdl",
        ),
        BenchLayer::Dense => (LayerState::Dense(Dense::he_init(args.dim, args.units, true, &mut rng)?), "dense"),
    };
    // Small inputs keep high degrees finite in f32.
    let x: Tensor<f32> = rng.sample_normal(0.0, 0.1, [args.batch, args.dim])?;
    let g: Tensor<f32> = rng.sample_normal(0.0, 1.0, [args.batch, args.units])?;

    let mut checksum = 0.0;
    let mut fwd = 0u128;
    let mut bwd = 0u128;
    for _ in 0..args.iters {
        let t = Instant::now();
        let y = layer.forward(&x, Mode::Train)?;
        fwd += t.elapsed().as_nanos();
        let t = Instant::now();
        let grads = layer.backward(&g)?;
        bwd += t.elapsed().as_nanos();
        checksum += y.data().iter().map(|&v| v as f64).sum::<f64>();
        checksum += grads.d_input.data().iter().map(|&v| v as f64).sum::<f64>();
    }
    let report = BenchReport {
        layer: name,
        degree: args.degree,
        forward_ns_per_call: fwd as f64 / args.iters as f64,
        backward_ns_per_call: bwd as f64 / args.iters as f64,
        checksum,
    };
    println!("{}", serde_json::to_string(&report).expect("serializable"));
    Ok(())
}
