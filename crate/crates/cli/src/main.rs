use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use varidepth::harness::{self, DatasetConfig, ExperimentConfig, OmegaGrid};
use varidepth::network::{Checkpoint, Granularity};
use varidepth::pathmetrics;
use varidepth::reparam::{
    noninjectivity_witness, sample_ball, sample_box, ActivationDescriptor, ReparamPair, ResidualBlockParams,
};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "varidepth", version, about = "Partial linearization of trained networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset as CSV plus a provenance file.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the base ReLU network and save its checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run base training, the ω sweep and the report.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Restricts the run to one seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated ω values replacing the configured grid.
        #[arg(long, value_delimiter = ',')]
        omega: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        granularity: Option<GranularityArg>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Path metrics of a saved network.
    Analyze { checkpoint: PathBuf },
    /// Check a residual-to-feedforward construction numerically.
    ReparamVerify {
        #[arg(long, value_enum, default_value_t = KindArg::LocalLinear)]
        kind: KindArg,
        #[arg(long, value_enum, default_value_t = ActivationArg::Tanh)]
        activation: ActivationArg,
        #[arg(long, default_value_t = 4)]
        width: usize,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Merge the records of a result directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Channel,
    Layer,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Channel => Granularity::Channel,
            GranularityArg::Layer => Granularity::Layer,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    LocalLinear,
    Relu,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Tanh,
    Sigmoid,
    Softplus,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::Usage(e.to_string())),
        None => Ok(ExperimentConfig::reference("results/reference")),
    }
}

fn gen_data(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<Value, Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        match &mut cfg.dataset {
            DatasetConfig::Synthetic(spec) => spec.seed = s,
            DatasetConfig::Idx { seed, .. } => *seed = s,
        }
    }
    let data = cfg.dataset.load()?;
    fs::create_dir_all(out)?;
    let mut split = vec!["train"; data.len()];
    for &i in data.test() {
        split[i] = "test";
    }
    let mut csv: String = (0..data.n_features()).map(|f| format!("x{f},")).collect();
    csv.push_str("label,split\n");
    for (i, (label, part)) in data.labels().iter().zip(&split).enumerate() {
        for v in data.row(i) {
            write!(csv, "{v},").expect("string write");
        }
        writeln!(csv, "{label},{part}").expect("string write");
    }
    fs::write(out.join("data.csv"), csv)?;
    let info = json!({
        "samples": data.len(),
        "features": data.n_features(),
        "classes": data.classes(),
        "train": data.train().len(),
        "test": data.test().len(),
        "provenance": data.provenance,
    });
    fs::write(out.join("provenance.json"), serde_json::to_string_pretty(&info)? + "\n")?;
    Ok(info)
}

fn train(config: Option<&Path>, seed: u64, out: &Path) -> Result<Value, Failure> {
    let cfg = load_config(config)?;
    let data = cfg.dataset.load()?;
    let ck = harness::base_train(&cfg.network, &data, &cfg.base_training, seed)?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("base-seed-{seed}.ckpt"));
    ck.save(&path)?;
    Ok(json!({
        "checkpoint": path.display().to_string(),
        "seed": seed,
        "epochs": ck.meta.epoch,
        "train_acc": ck.meta.train_acc,
        "test_acc": ck.meta.test_acc,
    }))
}

fn sweep(
    config: Option<&Path>,
    seed: Option<u64>,
    omega: Option<Vec<f64>>,
    granularity: Option<GranularityArg>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
) -> Result<Value, Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(values) = omega {
        cfg.omega_grid = OmegaGrid::Explicit { values };
    }
    if let Some(g) = granularity {
        cfg.granularities = vec![g.into()];
    }
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let outcome = harness::run_experiment(&cfg)?;
    if outcome.records == 0 && outcome.failures > 0 {
        return Err(Failure::Runtime(format!("all {} sweep units failed", outcome.failures)));
    }
    Ok(json!({
        "dir": outcome.dir.display().to_string(),
        "omegas": outcome.omegas,
        "records": outcome.records,
        "failures": outcome.failures,
    }))
}

fn analyze(path: &Path) -> Result<Value, Failure> {
    let ck = Checkpoint::load(path)?;
    let net = &ck.network;
    let profile = pathmetrics::profile_of(net);
    let dist = pathmetrics::path_length_distribution(&profile);
    Ok(json!({
        "checkpoint": path.display().to_string(),
        "napl": pathmetrics::napl(&profile),
        "histogram": dist.to_histogram(),
        "avg_slope": pathmetrics::average_slope(net).ok(),
        "prop_disabled": pathmetrics::proportion_disabled(net).ok(),
        "mixed_layers": pathmetrics::mixed_layers(net),
        "frozen": net.frozen_count(),
        "slopes": net.slope_count(),
        "meta": {
            "epoch": ck.meta.epoch,
            "omega": ck.meta.omega,
            "seed": ck.meta.seed,
            "granularity": ck.meta.granularity,
            "train_acc": ck.meta.train_acc,
            "test_acc": ck.meta.test_acc,
        },
    }))
}

fn reparam_verify(
    kind: KindArg,
    activation: ActivationArg,
    width: usize,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<Value, Failure> {
    if width == 0 || samples == 0 {
        return Err(Failure::Usage("width and samples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = ResidualBlockParams::random(width, 1.0, &mut rng);
    let (pair, xs, name) = match kind {
        KindArg::LocalLinear => {
            let act = match activation {
                ActivationArg::Tanh => ActivationDescriptor::tanh(),
                ActivationArg::Sigmoid => ActivationDescriptor::sigmoid(),
                ActivationArg::Softplus => ActivationDescriptor::softplus(),
            };
            let pair =
                ReparamPair::local_linear(block.clone(), act, epsilon).map_err(|e| Failure::Usage(e.to_string()))?;
            (pair, sample_ball(width, 1.0, samples, &mut rng), "local-linear")
        }
        KindArg::Relu => (ReparamPair::relu(block.clone(), -1.0), sample_box(width, -1.0, 1.0, samples, &mut rng), "relu"),
    };
    let dev = pair.verify(&xs)?;
    let witness = noninjectivity_witness(&block.weight, &block.bias)?;
    Ok(json!({
        "kind": name,
        "activation": pair.activation.kind,
        "c": pair.activation.c,
        "epsilon": pair.epsilon,
        "width": width,
        "samples": samples,
        "seed": seed,
        "max_deviation": dev.max,
        "worst_sample": dev.sample.iter().copied().collect::<Vec<f64>>(),
        "witness": {
            "case": witness.case,
            "condition_number": witness.condition_number,
            "x1": witness.x1.iter().copied().collect::<Vec<f64>>(),
            "x2": witness.x2.iter().copied().collect::<Vec<f64>>(),
            "separation": (&witness.x1 - &witness.x2).norm(),
        },
    }))
}

fn run(cli: Cli) -> Result<Value, Failure> {
    match cli.command {
        Command::GenData { config, seed, out } => gen_data(config.as_deref(), seed, &out),
        Command::Train { config, seed, out } => train(config.as_deref(), seed, &out),
        Command::Sweep { config, seed, omega, granularity, jobs, out } => {
            sweep(config.as_deref(), seed, omega, granularity, jobs, out)
        }
        Command::Analyze { checkpoint } => analyze(&checkpoint),
        Command::ReparamVerify { kind, activation, width, epsilon, samples, seed } => {
            reparam_verify(kind, activation, width, epsilon, samples, seed)
        }
        Command::Report { out } => {
            let summary = harness::report(&out)?;
            Ok(json!({
                "dir": out.display().to_string(),
                "max_napl": summary.max_napl,
                "curve_points": summary.curves.len(),
                "missing": summary.missing.len(),
            }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
