use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::{generate_synthetic, Dataset, SyntheticSpec};
use super::idx::load_idx;
use super::HarnessError;
use crate::linearize::{Calibration, PostTrainRecipe, Schedule};
use crate::network::{Granularity, NetworkSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    Idx { images: PathBuf, labels: PathBuf, seed: u64 },
}

impl DatasetConfig {
    pub fn load(&self) -> Result<Dataset, HarnessError> {
        match self {
            DatasetConfig::Synthetic(spec) => generate_synthetic(spec),
            DatasetConfig::Idx { images, labels, seed } => load_idx(images, labels, *seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum OmegaGrid {
    Explicit { values: Vec<f64> },
    Calibrate(Calibration),
}

/// Everything an experiment run depends on. Written back to the result
/// directory with the ω grid resolved, so the copy re-runs to the same output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub granularities: Vec<Granularity>,
    /// Worker threads for independent sweep units.
    pub jobs: usize,
    pub dataset: DatasetConfig,
    pub network: NetworkSpec,
    pub base_training: Schedule,
    pub post_training: PostTrainRecipe,
    pub omega_grid: OmegaGrid,
}

impl ExperimentConfig {
    /// Hierarchical-xor task, width-32 depth-8 MLP, five seeds, both
    /// granularities, calibrated 10-point ω grid.
    pub fn reference(output_dir: impl Into<PathBuf>) -> Self {
        Self {
            output_dir: output_dir.into(),
            seeds: vec![0, 1, 2, 3, 4],
            granularities: vec![Granularity::Channel, Granularity::Layer],
            jobs: 1,
            dataset: DatasetConfig::Synthetic(SyntheticSpec::reference(0)),
            network: NetworkSpec::mlp(8, 32, 8, 4),
            base_training: Schedule::base_default(),
            post_training: PostTrainRecipe::default(),
            omega_grid: OmegaGrid::Calibrate(Calibration::default()),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.granularities.is_empty() {
            return bad("at least one granularity is required");
        }
        if self.jobs == 0 {
            return bad("jobs must be positive");
        }
        match &self.omega_grid {
            OmegaGrid::Explicit { values } => {
                if values.is_empty() || values.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return bad("omega values must be a non-empty list of finite non-negative numbers");
                }
            }
            OmegaGrid::Calibrate(c) => {
                if c.points == 0 || !(c.start > 0.0 && c.start.is_finite()) {
                    return bad("calibration needs points > 0 and a positive start");
                }
            }
        }
        self.network.validate()?;
        self.base_training.validate()?;
        let tau = self.post_training.freeze_threshold;
        if !(tau > 0.0 && tau < 1.0) {
            return bad("freeze_threshold must lie in (0, 1)");
        }
        self.post_training.schedule.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::reference("out");
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        cfg.omega_grid = OmegaGrid::Explicit { values: vec![0.01, 0.1] };
        cfg.dataset = DatasetConfig::Idx { images: "a.idx".into(), labels: "b.idx".into(), seed: 3 };
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn written_config_is_explicit() {
        let text = ExperimentConfig::reference("out").to_toml();
        for key in ["channel_gain", "residual_spans", "freeze_threshold", "decay_slopes", "milestones", "noise"] {
            assert!(text.contains(key), "{key} missing from\n{text}");
        }
    }

    #[test]
    fn rejects_missing_fields_and_bad_values() {
        assert!(matches!(ExperimentConfig::from_toml("seeds = [1]"), Err(HarnessError::Config(_))));
        let mut cfg = ExperimentConfig::reference("out");
        cfg.seeds.clear();
        assert!(ExperimentConfig::from_toml(&cfg.to_toml()).is_err());
        let mut cfg = ExperimentConfig::reference("out");
        cfg.omega_grid = OmegaGrid::Explicit { values: vec![-1.0] };
        assert!(ExperimentConfig::from_toml(&cfg.to_toml()).is_err());
    }
}
