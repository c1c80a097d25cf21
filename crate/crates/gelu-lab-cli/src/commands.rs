//! Subcommand implementations. Every output lands under the chosen out-dir.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gelu_lab::activations::{
    activation_derivative, apply_activation, ActivationKind, GeluConstants,
};
use gelu_lab::analysis::{self, ClaimOptions};
use gelu_lab::data::SyntheticSpec;
use gelu_lab::experiments::{
    self, compare_activations, comparison_table, train, DatasetName, DatasetSpec,
    ExperimentConfig, RunStatus, TimingMode,
};
use gelu_lab::{seeded_rng, Error, Mode, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Analysis,
    Training,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "analysis" => Ok(Precision::Analysis),
            "training" => Ok(Precision::Training),
            other => Err(Error::Config(format!(
                "unknown precision {other:?}; use analysis or training"
            ))),
        }
    }
}

fn write_out(out_dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let path = out_dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

pub struct VerifyArgs {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub grid_step: f64,
    pub lipschitz_pairs: usize,
    /// Fault-injection hook: overrides the tanh-form cubic constant.
    pub cubic: Option<f64>,
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let mut constants = GeluConstants::default();
    if let Some(c) = args.cubic {
        constants.cubic = c;
    }
    let opts = ClaimOptions {
        grid_step: args.grid_step,
        lipschitz_pairs: args.lipschitz_pairs,
        seed: args.seed,
        constants,
    };
    let results = analysis::run_claims(&opts)?;
    let mut csv = Vec::new();
    analysis::write_claims_csv(&results, &mut csv).map_err(|e| Error::Io {
        path: "claims.csv".into(),
        source: e,
    })?;
    let mut text = Vec::new();
    analysis::write_claims_text(&results, &mut text).map_err(|e| Error::Io {
        path: "claims.txt".into(),
        source: e,
    })?;
    write_out(&args.out_dir, "claims.csv", &csv)?;
    write_out(&args.out_dir, "claims.txt", &text)?;
    print!("{}", String::from_utf8_lossy(&text));
    Ok(if analysis::all_pass(&results) { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// plot-data
// ---------------------------------------------------------------------------

pub struct PlotArgs {
    pub out_dir: PathBuf,
    pub functions: Vec<String>,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

pub fn cmd_plot_data(args: &PlotArgs) -> Result<i32> {
    if args.step <= 0.0 || args.hi <= args.lo {
        return Err(Error::Config(format!(
            "bad range/step: [{}, {}] step {}",
            args.lo, args.hi, args.step
        )));
    }
    let kinds: Vec<ActivationKind> = args
        .functions
        .iter()
        .map(|n| ActivationKind::from_name(n))
        .collect::<Result<_>>()?;
    let n = ((args.hi - args.lo) / args.step + 1e-9).floor() as usize + 1;
    let xs: Vec<f64> = (0..n).map(|i| args.lo + i as f64 * args.step).collect();
    let grid = Tensor::new(vec![n], xs.clone())?;

    let mut header = String::from("x");
    let mut columns: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut rng = seeded_rng(0);
    for kind in &kinds {
        header.push_str(&format!(",{0},{0}_deriv", kind.name()));
        let f = apply_activation(kind, &grid, Mode::Eval, &mut rng)?;
        let d = activation_derivative(kind, &grid, Mode::Eval, &mut rng)?;
        columns.push((f.into_data(), d.into_data()));
    }
    let mut csv = String::new();
    csv.push_str(&header);
    csv.push('\n');
    for (i, x) in xs.iter().enumerate() {
        csv.push_str(&format!("{x}"));
        for (f, d) in &columns {
            csv.push_str(&format!(",{},{}", f[i], d[i]));
        }
        csv.push('\n');
    }
    let path = write_out(&args.out_dir, "plot_data.csv", csv.as_bytes())?;
    println!("{} rows x {} functions -> {}", n, kinds.len(), path.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

pub struct BenchArgs {
    pub out_dir: PathBuf,
    pub precision: Precision,
    pub elements: usize,
    pub reps: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    xs[xs.len() / 2]
}

fn bench_kind<T: Scalar>(kind: &ActivationKind, elements: usize, reps: usize) -> (f64, f64) {
    let x = Tensor::from_fn(vec![elements], |i| {
        T::from_f64(-3.0 + 6.0 * (i % 1000) as f64 / 999.0)
    });
    let mut rng = seeded_rng(0);
    // warmup
    let _ = apply_activation(kind, &x, Mode::Eval, &mut rng).expect("validated kind");
    let mut fwd = Vec::with_capacity(reps);
    let mut bwd = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        let _ = apply_activation(kind, &x, Mode::Eval, &mut rng).expect("validated kind");
        fwd.push(elements as f64 / t.elapsed().as_secs_f64());
        let t = Instant::now();
        let _ = activation_derivative(kind, &x, Mode::Eval, &mut rng).expect("validated kind");
        bwd.push(elements as f64 / t.elapsed().as_secs_f64());
    }
    (median(fwd), median(bwd))
}

pub fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    if args.reps < 5 {
        return Err(Error::Config("bench needs at least 5 repetitions".into()));
    }
    let mut csv = String::from("activation,forward_elems_per_s,derivative_elems_per_s\n");
    println!(
        "{:<14} {:>22} {:>24}",
        "activation", "forward elems/s", "derivative elems/s"
    );
    for kind in ActivationKind::all() {
        let (f, d) = match args.precision {
            Precision::Training => bench_kind::<f32>(&kind, args.elements, args.reps),
            Precision::Analysis => bench_kind::<f64>(&kind, args.elements, args.reps),
        };
        csv.push_str(&format!("{},{},{}\n", kind.name(), f, d));
        println!("{:<14} {:>22.0} {:>24.0}", kind.name(), f, d);
    }
    write_out(&args.out_dir, "bench.csv", csv.as_bytes())?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// train / compare
// ---------------------------------------------------------------------------

pub struct TrainArgs {
    pub out_dir: PathBuf,
    pub precision: Precision,
    pub dataset: DatasetName,
    pub data_root: Option<PathBuf>,
    pub activation: ActivationKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub desk_scale: bool,
    pub full: bool,
    pub subset_train: Option<usize>,
    pub subset_test: Option<usize>,
    pub timing: TimingMode,
    pub synthetic: SyntheticSpec,
}

impl TrainArgs {
    fn experiment_config(&self) -> Result<ExperimentConfig> {
        if self.desk_scale && self.full {
            return Err(Error::Config(
                "--desk-scale and --full are mutually exclusive".into(),
            ));
        }
        let spec = DatasetSpec {
            name: self.dataset,
            root: self.data_root.clone(),
            synthetic: self.synthetic,
        };
        let mut cfg = ExperimentConfig::new(spec, self.activation);
        cfg.epochs = self.epochs;
        cfg.batch_size = self.batch_size;
        cfg.lr = self.lr;
        cfg.seed = self.seed;
        cfg.timing = self.timing;
        if self.desk_scale {
            cfg = cfg.desk_scale();
        }
        if let Some(n) = self.subset_train {
            cfg.subset_train = Some(n);
        }
        if let Some(n) = self.subset_test {
            cfg.subset_test = Some(n);
        }
        // --full forces the untruncated protocol
        if self.full {
            cfg.subset_train = None;
            cfg.subset_test = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_train<T: Scalar>(args: &TrainArgs) -> Result<i32> {
    let cfg = args.experiment_config()?;
    let data = experiments::load_dataset::<T>(&cfg)?;
    let mut report = experiments::run_report_header(&cfg, &data.name, data.num_classes);
    let (records, status) = train(&cfg, &data)?;
    let mut csv = Vec::new();
    experiments::write_metrics_csv(&records, &mut csv).map_err(|e| Error::Io {
        path: "metrics.csv".into(),
        source: e,
    })?;
    write_out(&args.out_dir, "metrics.csv", &csv)?;
    report.push_str(&format!("status: {}\n", status.as_str()));
    if let RunStatus::Failed(why) = &status {
        report.push_str(&format!("failure: {why}\n"));
    }
    for r in &records {
        report.push_str(&format!(
            "epoch {}: train_loss {:.4} test_loss {:.4} test_acc {:.2}%\n",
            r.epoch, r.train_loss, r.test_loss, r.test_acc
        ));
    }
    write_out(&args.out_dir, "run_report.txt", report.as_bytes())?;
    print!("{report}");
    Ok(0)
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    match args.precision {
        Precision::Training => run_train::<f32>(args),
        Precision::Analysis => run_train::<f64>(args),
    }
}

pub struct CompareArgs {
    pub train: TrainArgs,
    pub activations: Vec<String>,
}

fn run_compare<T: Scalar>(args: &CompareArgs) -> Result<i32> {
    let kinds: Vec<ActivationKind> = args
        .activations
        .iter()
        .map(|n| ActivationKind::from_name(n))
        .collect::<Result<_>>()?;
    let base = args.train.experiment_config()?;
    let data = experiments::load_dataset::<T>(&base)?;
    let (rows, all_records) = compare_activations(&base, &kinds, &data)?;
    let mut csv = Vec::new();
    experiments::write_comparison_csv(&rows, &mut csv).map_err(|e| Error::Io {
        path: "comparison.csv".into(),
        source: e,
    })?;
    write_out(&args.train.out_dir, "comparison.csv", &csv)?;
    for (kind, records) in kinds.iter().zip(&all_records) {
        let mut mcsv = Vec::new();
        experiments::write_metrics_csv(records, &mut mcsv).map_err(|e| Error::Io {
            path: "metrics".into(),
            source: e,
        })?;
        write_out(
            &args.train.out_dir,
            &format!("metrics_{}.csv", kind.name()),
            &mcsv,
        )?;
    }
    let mut report = experiments::run_report_header(&base, &data.name, data.num_classes);
    report.push('\n');
    report.push_str(&comparison_table(&rows));
    write_out(&args.train.out_dir, "comparison_report.txt", report.as_bytes())?;
    print!("{report}");
    Ok(0)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    match args.train.precision {
        Precision::Training => run_compare::<f32>(args),
        Precision::Analysis => run_compare::<f64>(args),
    }
}
