//! Finite-difference gradient check over every layer kind and kernel kind.

use clap::Args;

use kdl::layers::{
    grad_check_with, BatchNorm, Conv2d, Dense, Dropout, Flatten, KernelDense, MaxPool, Relu, Softmax,
};
use kdl::{KernelSpec, LayerState, RngStream, Tensor};

use crate::{CmdResult, Failure};

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Central-difference step, within [1e-7, 1e-4].
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupts the analytic kernel-layer gradients (self-test of the checker).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

struct Case {
    layer: LayerState<f64>,
    kernel: String,
    config: String,
    input: Tensor<f64>,
}

const KERNELS: [KernelSpec; 7] = [
    KernelSpec::Linear,
    KernelSpec::Polynomial { n: 1 },
    KernelSpec::Polynomial { n: 2 },
    KernelSpec::Polynomial { n: 3 },
    KernelSpec::Gaussian { sigma: 1.5 },
    KernelSpec::Laplacian { alpha: 0.7 },
    KernelSpec::Abel { alpha: 0.7 },
];

fn normal(rng: &mut RngStream, shape: Vec<usize>, std: f64) -> kdl::Result<Tensor<f64>> {
    rng.sample_normal(0.0, std, shape)
}

fn cases(seed: u64) -> kdl::Result<Vec<Case>> {
    let root = RngStream::new(seed);
    let mut out = Vec::new();
    let mut k = 0u64;
    let mut next = || {
        k += 1;
        root.derive(&[k])
    };

    for spec in KERNELS {
        let relu_options: &[bool] = if spec.takes_activation() { &[false, true] } else { &[false] };
        for (shape_i, &(b, d, u)) in [(3usize, 4usize, 3usize), (2, 6, 5)].iter().enumerate() {
            for &relu in relu_options {
                if relu && shape_i == 1 {
                    continue;
                }
                let mut rng = next();
                let w = normal(&mut rng, vec![u, d], (1.0 / d as f64).sqrt())?;
                let bias = if spec.is_dot_product() {
                    Tensor::from_fn([u], |_| rng.uniform_range(0.0, 0.5))
                } else {
                    normal(&mut rng, vec![u], 1.0)?
                };
                let x = normal(&mut rng, vec![b, d], 0.7)?;
                out.push(Case {
                    layer: LayerState::Kdl(KernelDense::new(spec, w, bias, relu)?),
                    kernel: spec.to_string(),
                    config: format!("B={b} D={d} U={u}{}", if relu { " relu" } else { "" }),
                    input: x,
                });
            }
        }
    }

    for relu in [false, true] {
        let mut rng = next();
        let layer = Dense::new(normal(&mut rng, vec![4, 5], 0.5)?, normal(&mut rng, vec![4], 0.5)?, relu)?;
        out.push(Case {
            layer: LayerState::Dense(layer),
            kernel: "-".into(),
            config: format!("B=3 D=5 U=4{}", if relu { " relu" } else { "" }),
            input: normal(&mut rng, vec![3, 5], 1.0)?,
        });
    }

    for (stride, pad) in [(1, 1), (2, 0)] {
        let mut rng = next();
        let conv = Conv2d::new(
            normal(&mut rng, vec![3, 2, 3, 3], 0.3)?,
            normal(&mut rng, vec![3], 0.3)?,
            stride,
            pad,
        )?;
        out.push(Case {
            layer: LayerState::Conv2d(conv),
            kernel: "-".into(),
            config: format!("2x5x6 -> 3 3x3 stride={stride} pad={pad}"),
            input: normal(&mut rng, vec![2, 2, 5, 6], 1.0)?,
        });
    }

    for shape in [vec![5, 3], vec![3, 2, 3, 3]] {
        let mut rng = next();
        let mut bn = BatchNorm::new(shape[1]);
        bn.set_affine(normal(&mut rng, vec![shape[1]], 1.0)?, normal(&mut rng, vec![shape[1]], 1.0)?)?;
        out.push(Case {
            layer: LayerState::BatchNorm(bn),
            kernel: "-".into(),
            config: format!("{shape:?}"),
            input: normal(&mut rng, shape, 2.0)?,
        });
    }

    let mut simple = |layer: LayerState<f64>, shape: Vec<usize>, config: &str| -> kdl::Result<()> {
        let mut rng = next();
        out.push(Case {
            layer,
            kernel: "-".into(),
            config: config.into(),
            input: normal(&mut rng, shape, 1.0)?,
        });
        Ok(())
    };
    simple(LayerState::Relu(Relu::new()), vec![3, 7], "3x7")?;
    simple(LayerState::MaxPool(MaxPool::new(2, 2)?), vec![2, 2, 5, 4], "2x2 stride 2 on 5x4")?;
    simple(LayerState::Dropout(Dropout::new(0.3, root.derive(&[0xd0]))?), vec![4, 6], "p=0.3")?;
    simple(LayerState::Softmax(Softmax::new()), vec![3, 5], "3x5")?;
    simple(LayerState::Flatten(Flatten::default()), vec![2, 3, 2, 2], "2x3x2x2")?;
    Ok(out)
}

pub fn cmd_gradcheck(args: GradcheckArgs) -> CmdResult {
    if !(1e-7..=1e-4).contains(&args.eps) {
        return Err(Failure::Usage(format!("--eps must be in [1e-7, 1e-4], got {}", args.eps)));
    }
    let cases = cases(args.seed)?;
    println!(
        "{:<10} {:<22} {:<32} {:>12} {:>12}  status",
        "layer", "kernel", "config", "max_rel_err", "max_abs_err"
    );
    let mut failures = Vec::new();
    for case in &cases {
        let corrupt = args.inject_fault && matches!(case.layer, LayerState::Kdl(_));
        let report = grad_check_with(&case.layer, &case.input, args.eps, |g| {
            if corrupt {
                g.d_input.data_mut().iter_mut().for_each(|v| *v *= 2.0);
                for (_, t) in &mut g.d_params {
                    t.data_mut().iter_mut().for_each(|v| *v *= 2.0);
                }
            }
        })?;
        let status = if report.passed() { "pass" } else { "FAIL" };
        println!(
            "{:<10} {:<22} {:<32} {:>12.3e} {:>12.3e}  {status}",
            report.layer,
            case.kernel,
            case.config,
            report.max_rel_err(),
            report.max_abs_err()
        );
        if !report.passed() {
            failures.push(format!("{}/{} ({})", report.layer, case.kernel, case.config));
        }
    }
    println!("{} configurations, {} failed", cases.len(), failures.len());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("gradient check failed for: {}", failures.join("; "))))
    }
}
