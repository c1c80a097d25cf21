//! `gelu-lab`: verify GELU math claims, tabulate activation curves, benchmark
//! kernels, and run activation-comparison training experiments.
//!
//! Exit codes: 0 success (verify: all claims pass), 1 claim failure,
//! 2 usage or configuration error, 3 I/O error.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{
    cmd_bench, cmd_compare, cmd_plot_data, cmd_train, cmd_verify, BenchArgs, CompareArgs,
    PlotArgs, Precision, TrainArgs, VerifyArgs,
};
use config::{resolve, ConfigMap};
use gelu_lab::activations::ActivationKind;
use gelu_lab::data::SyntheticSpec;
use gelu_lab::experiments::{DatasetName, TimingMode};
use gelu_lab::{Error, Result};

/// Canonical activation names; `--activations` and `--activation` accept any
/// comma-separated subset of: elu, hardshrink, hardsigmoid, hardtanh,
/// hardswish, leaky_relu, log_sigmoid, prelu, relu, relu6, rrelu, selu, celu,
/// gelu, gelu_exact, sigmoid, softplus, softshrink, softsign, tanh,
/// tanhshrink.
const ACTIVATIONS_HELP: &str = "Comma-separated activation names. Accepted: elu, hardshrink, \
hardsigmoid, hardtanh, hardswish, leaky_relu, log_sigmoid, prelu, relu, relu6, rrelu, selu, \
celu, gelu, gelu_exact, sigmoid, softplus, softshrink, softsign, tanh, tanhshrink";

#[derive(Parser)]
#[command(
    name = "gelu-lab",
    about = "Activation-function laboratory: claims verification, curve data, benchmarks, and residual-CNN experiments",
    version
)]
struct Cli {
    /// Config file (key=value lines or a JSON object); flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for all outputs; nothing is written elsewhere
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Seed for every random choice in the command
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Element precision: analysis (f64) or training (f32)
    #[arg(long, global = true)]
    precision: Option<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the GELU math-claims suite and write claims.csv / claims.txt
    Verify {
        /// Grid step for the derivative-supremum sweep
        #[arg(long)]
        grid_step: Option<f64>,
        /// Random pairs for the Lipschitz inequality check
        #[arg(long)]
        lipschitz_pairs: Option<usize>,
        /// Fault-injection override of the tanh-form cubic constant
        #[arg(long, hide = true)]
        cubic: Option<f64>,
    },
    /// Tabulate activation values and derivatives over a grid as CSV
    PlotData {
        /// Comma-separated activation names to tabulate
        #[arg(long, help = ACTIVATIONS_HELP)]
        functions: Option<String>,
        /// Grid range as lo:hi
        #[arg(long, allow_hyphen_values = true)]
        range: Option<String>,
        /// Grid step
        #[arg(long)]
        step: Option<f64>,
    },
    /// Measure per-activation forward/derivative throughput
    Bench {
        /// Elements in the benchmark tensor
        #[arg(long)]
        elements: Option<usize>,
        /// Repetitions per measurement (median reported, >= 5)
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Train the 14-layer pre-activated residual network once
    Train {
        /// Dataset: cifar10, cifar100, stl10, or synthetic
        #[arg(long)]
        dataset: Option<String>,
        /// Directory holding the dataset binaries
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Activation to train with
        #[arg(long, help = ACTIVATIONS_HELP)]
        activation: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Subset to 5000 train / 1000 test and 3 epochs
        #[arg(long)]
        desk_scale: bool,
        /// Full protocol on the untruncated dataset (hours on CPU)
        #[arg(long)]
        full: bool,
        #[arg(long)]
        subset_train: Option<usize>,
        #[arg(long)]
        subset_test: Option<usize>,
        /// Per-epoch seconds column: wall or none (none for byte-identical reruns)
        #[arg(long)]
        timing: Option<String>,
        /// Use synthetic data (same as --dataset synthetic)
        #[arg(long)]
        synthetic: bool,
    },
    /// Seed-paired comparison sweep over several activations
    Compare {
        #[arg(long, help = ACTIVATIONS_HELP)]
        activations: Option<String>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        desk_scale: bool,
        #[arg(long)]
        full: bool,
        #[arg(long)]
        subset_train: Option<usize>,
        #[arg(long)]
        subset_test: Option<usize>,
        #[arg(long)]
        timing: Option<String>,
        #[arg(long)]
        synthetic: bool,
    },
}

const GLOBAL_KEYS: &[&str] = &["out_dir", "seed", "precision"];
const TRAIN_KEYS: &[&str] = &[
    "dataset",
    "data_root",
    "activation",
    "activations",
    "epochs",
    "batch_size",
    "lr",
    "desk_scale",
    "full",
    "subset_train",
    "subset_test",
    "timing",
];

fn parse_timing(s: &str) -> Result<TimingMode> {
    match s {
        "wall" => Ok(TimingMode::Wall),
        "none" => Ok(TimingMode::None),
        other => Err(Error::Config(format!(
            "unknown timing mode {other:?}; use wall or none"
        ))),
    }
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| {
        Error::Config(format!("range must look like lo:hi, got {s:?}"))
    })?;
    let parse = |v: &str| -> Result<f64> {
        v.trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad range endpoint {v:?}")))
    };
    Ok((parse(lo)?, parse(hi)?))
}

fn split_names(s: &str) -> Vec<String> {
    s.split(',')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

struct Shared {
    out_dir: PathBuf,
    seed: u64,
    precision: Precision,
    file: ConfigMap,
}

fn shared(cli: &Cli, extra_keys: &[&str]) -> Result<Shared> {
    let file = match &cli.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::default(),
    };
    let mut allowed: Vec<&str> = GLOBAL_KEYS.to_vec();
    allowed.extend_from_slice(extra_keys);
    file.check_keys(&allowed)?;
    let out_dir = resolve(
        cli.out_dir.clone(),
        file.get("out_dir").map(PathBuf::from),
        PathBuf::from("."),
    );
    let seed = resolve(cli.seed, file.parse("seed")?, 0);
    let precision_name = resolve(
        cli.precision.clone(),
        file.get("precision").map(String::from),
        "training".into(),
    );
    Ok(Shared {
        out_dir,
        seed,
        precision: Precision::parse(&precision_name)?,
        file,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_train_args(
    s: &Shared,
    dataset: Option<String>,
    data_root: Option<PathBuf>,
    activation: Option<String>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    desk_scale: bool,
    full: bool,
    subset_train: Option<usize>,
    subset_test: Option<usize>,
    timing: Option<String>,
    synthetic: bool,
) -> Result<TrainArgs> {
    let dataset_name = if synthetic {
        "synthetic".to_string()
    } else {
        resolve(dataset, s.file.get("dataset").map(String::from), "synthetic".into())
    };
    let activation_name = resolve(
        activation,
        s.file.get("activation").map(String::from),
        "gelu".into(),
    );
    let timing_name = resolve(timing, s.file.get("timing").map(String::from), "wall".into());
    let desk_scale = desk_scale || s.file.get("desk_scale") == Some("true");
    let full = full || s.file.get("full") == Some("true");
    Ok(TrainArgs {
        out_dir: s.out_dir.clone(),
        precision: s.precision,
        dataset: DatasetName::from_name(&dataset_name)?,
        data_root: data_root.or_else(|| s.file.get("data_root").map(PathBuf::from)),
        activation: ActivationKind::from_name(&activation_name)?,
        epochs: resolve(epochs, s.file.parse("epochs")?, 20),
        batch_size: resolve(batch_size, s.file.parse("batch_size")?, 128),
        lr: resolve(lr, s.file.parse("lr")?, 0.001),
        seed: s.seed,
        desk_scale,
        full,
        subset_train: subset_train.or(s.file.parse("subset_train")?),
        subset_test: subset_test.or(s.file.parse("subset_test")?),
        timing: parse_timing(&timing_name)?,
        synthetic: SyntheticSpec {
            seed: s.seed,
            ..SyntheticSpec::default()
        },
    })
}

fn run(cli: Cli) -> Result<i32> {
    match &cli.cmd {
        Cmd::Verify {
            grid_step,
            lipschitz_pairs,
            cubic,
        } => {
            let s = shared(&cli, &["grid_step", "lipschitz_pairs"])?;
            cmd_verify(&VerifyArgs {
                out_dir: s.out_dir.clone(),
                seed: s.seed,
                grid_step: resolve(*grid_step, s.file.parse("grid_step")?, 1e-4),
                lipschitz_pairs: resolve(*lipschitz_pairs, s.file.parse("lipschitz_pairs")?, 1_000_000),
                cubic: *cubic,
            })
        }
        Cmd::PlotData {
            functions,
            range,
            step,
        } => {
            let s = shared(&cli, &["functions", "range", "step"])?;
            let names = resolve(
                functions.clone(),
                s.file.get("functions").map(String::from),
                "gelu".into(),
            );
            let range_str = resolve(
                range.clone(),
                s.file.get("range").map(String::from),
                "-2.5:2.5".into(),
            );
            let (lo, hi) = parse_range(&range_str)?;
            cmd_plot_data(&PlotArgs {
                out_dir: s.out_dir.clone(),
                functions: split_names(&names),
                lo,
                hi,
                step: resolve(*step, s.file.parse("step")?, 0.025),
            })
        }
        Cmd::Bench { elements, reps } => {
            let s = shared(&cli, &["elements", "reps"])?;
            cmd_bench(&BenchArgs {
                out_dir: s.out_dir.clone(),
                precision: s.precision,
                elements: resolve(*elements, s.file.parse("elements")?, 1 << 20),
                reps: resolve(*reps, s.file.parse("reps")?, 5),
            })
        }
        Cmd::Train {
            dataset,
            data_root,
            activation,
            epochs,
            batch_size,
            lr,
            desk_scale,
            full,
            subset_train,
            subset_test,
            timing,
            synthetic,
        } => {
            let s = shared(&cli, TRAIN_KEYS)?;
            let args = build_train_args(
                &s,
                dataset.clone(),
                data_root.clone(),
                activation.clone(),
                *epochs,
                *batch_size,
                *lr,
                *desk_scale,
                *full,
                *subset_train,
                *subset_test,
                timing.clone(),
                *synthetic,
            )?;
            cmd_train(&args)
        }
        Cmd::Compare {
            activations,
            dataset,
            data_root,
            epochs,
            batch_size,
            lr,
            desk_scale,
            full,
            subset_train,
            subset_test,
            timing,
            synthetic,
        } => {
            let s = shared(&cli, TRAIN_KEYS)?;
            let train = build_train_args(
                &s,
                dataset.clone(),
                data_root.clone(),
                None,
                *epochs,
                *batch_size,
                *lr,
                *desk_scale,
                *full,
                *subset_train,
                *subset_test,
                timing.clone(),
                *synthetic,
            )?;
            let names = resolve(
                activations.clone(),
                s.file.get("activations").map(String::from),
                "gelu".into(),
            );
            cmd_compare(&CompareArgs {
                train,
                activations: split_names(&names),
            })
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParameter { .. } | Error::Contract { .. } => 2,
        Error::Io { .. } | Error::Ingestion { .. } | Error::Format { .. } => 3,
        _ => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
