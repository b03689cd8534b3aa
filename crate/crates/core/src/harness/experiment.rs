use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OmegaGrid};
use super::data::Dataset;
use super::report::{report, FailureRecord, Summary};
use super::HarnessError;
use crate::linearize::{
    accuracy, calibrate_bracket, log_grid, omega_sweep, sweep_meta, train, PostTrainConfig, Schedule, TrainOptions,
};
use crate::network::{Checkpoint, Granularity, Network, NetworkSpec, TrainingMeta};

pub const RECORDS_DIR: &str = "records";
pub const FAILURES_DIR: &str = "failures";
pub const CHECKPOINTS_DIR: &str = "checkpoints";
pub const BASE_DIR: &str = "base";
pub const CONFIG_FILE: &str = "config.toml";
pub const CALIBRATION_FILE: &str = "calibration.json";

/// Trains the plain ReLU network from its seeded initialization.
pub fn base_train(spec: &NetworkSpec, data: &Dataset, schedule: &Schedule, seed: u64) -> Result<Checkpoint, HarnessError> {
    let mut net = Network::build(spec.clone(), seed)?;
    train(
        &mut net,
        data,
        &TrainOptions { schedule, omega: 0.0, freeze_threshold: None, decay_slopes: false, seed },
    )?;
    let meta = TrainingMeta {
        epoch: schedule.epochs,
        omega: None,
        seed,
        granularity: None,
        train_acc: Some(accuracy(&net, data, data.train())?),
        test_acc: Some(accuracy(&net, data, data.test())?),
    };
    Ok(Checkpoint::new(net, meta))
}

/// Per-granularity brackets found while calibrating, and the grid built from
/// their union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub seed: u64,
    pub brackets: Vec<(Granularity, f64, f64)>,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub omegas: Vec<f64>,
    pub records: usize,
    pub failures: usize,
    pub summary: Summary,
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// File stem shared by a unit's record and checkpoint.
pub fn unit_name(granularity: Granularity, omega_index: usize, seed: u64) -> String {
    format!("{granularity}-w{omega_index:02}-s{seed}")
}

/// Resolves the ω grid: explicit values as given, or a log grid over the
/// union of the per-granularity brackets found on the first seed.
pub fn resolve_grid(
    cfg: &ExperimentConfig,
    base: &Checkpoint,
    data: &Dataset,
) -> Result<(Vec<f64>, Option<CalibrationResult>), HarnessError> {
    match &cfg.omega_grid {
        OmegaGrid::Explicit { values } => Ok((values.clone(), None)),
        OmegaGrid::Calibrate(cal) => {
            let seed = cfg.seeds[0];
            let post = PostTrainConfig::new(0.0, seed, cfg.post_training.clone());
            let brackets = cfg
                .granularities
                .par_iter()
                .map(|&g| calibrate_bracket(base, data, &post, g, cal).map(|(lo, hi)| (g, lo, hi)))
                .collect::<Result<Vec<_>, _>>()?;
            let lo = brackets.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
            let hi = brackets.iter().map(|b| b.2).fold(0.0, f64::max);
            let grid = log_grid(lo, hi, cal.points);
            Ok((grid.clone(), Some(CalibrationResult { seed, brackets, grid })))
        }
    }
}

/// Base training per seed, the ω sweep per granularity and seed, then the
/// report. Units run on a pool of `cfg.jobs` threads; every output file is
/// independent of scheduling order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    for sub in [RECORDS_DIR, FAILURES_DIR, CHECKPOINTS_DIR, BASE_DIR] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
    }
    // Records of an earlier run in the same directory would leak into the report.
    for sub in [RECORDS_DIR, FAILURES_DIR] {
        let p = dir.join(sub);
        for entry in fs::read_dir(&p).map_err(|e| io_err(&p, e))?.filter_map(Result::ok) {
            if entry.path().extension().is_some_and(|x| x == "json") {
                fs::remove_file(entry.path()).map_err(|e| io_err(&entry.path(), e))?;
            }
        }
    }
    let data = cfg.dataset.load()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;

    pool.install(|| {
        let bases = cfg
            .seeds
            .par_iter()
            .map(|&seed| base_train(&cfg.network, &data, &cfg.base_training, seed))
            .collect::<Result<Vec<_>, _>>()?;
        for (seed, base) in cfg.seeds.iter().zip(&bases) {
            log::info!(
                "base seed {seed}: train {:.4} test {:.4}",
                base.meta.train_acc.unwrap_or(f64::NAN),
                base.meta.test_acc.unwrap_or(f64::NAN)
            );
            base.save(dir.join(BASE_DIR).join(format!("seed-{seed}.ckpt")))?;
        }

        let (omegas, calibration) = resolve_grid(cfg, &bases[0], &data)?;
        if let Some(c) = &calibration {
            write_json(&dir.join(CALIBRATION_FILE), c)?;
        }
        let resolved = ExperimentConfig { omega_grid: OmegaGrid::Explicit { values: omegas.clone() }, ..cfg.clone() };
        resolved.save(dir.join(CONFIG_FILE))?;

        let units: Vec<(Granularity, usize)> =
            cfg.granularities.iter().flat_map(|&g| (0..cfg.seeds.len()).map(move |s| (g, s))).collect();
        let outcomes: Vec<_> = units
            .par_iter()
            .map(|&(g, s)| {
                let post = PostTrainConfig::new(0.0, cfg.seeds[s], cfg.post_training.clone());
                (g, cfg.seeds[s], omega_sweep(&bases[s], &omegas, &post, g, &data))
            })
            .collect();

        let (mut records, mut failures) = (0, 0);
        for (g, seed, runs) in outcomes {
            for (i, run) in runs.into_iter().enumerate() {
                let name = unit_name(g, i, seed);
                match run {
                    Ok(mut run) => {
                        let rel = format!("{CHECKPOINTS_DIR}/{name}.ckpt");
                        Checkpoint::new(run.network, sweep_meta(&run.record, cfg.post_training.schedule.epochs))
                            .save(dir.join(&rel))?;
                        run.record.checkpoint = Some(rel);
                        write_json(&dir.join(RECORDS_DIR).join(format!("{name}.json")), &run.record)?;
                        records += 1;
                    }
                    Err(f) => {
                        let rec =
                            FailureRecord { granularity: g, omega: f.omega, seed, error: f.error.to_string() };
                        write_json(&dir.join(FAILURES_DIR).join(format!("{name}.json")), &rec)?;
                        failures += 1;
                    }
                }
            }
        }
        let summary = report(&dir)?;
        Ok(ExperimentOutcome { dir: dir.clone(), omegas, records, failures, summary })
    })
}
