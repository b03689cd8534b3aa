//! Path-length statistics of a network's computation graph.
//!
//! A random input-to-output path picks, at every nonlinear layer, one channel
//! uniformly at random, and at every residual span either the skip or the
//! branch with probability ½ each. The path length is the number of nonlinear
//! units it passes through. A channel counts as linear only when its slope is
//! exactly 1.
//!
//! [`napl`] is the mean of that length and [`path_length_distribution`] its
//! exact distribution, obtained by convolving per-stage mass functions.
//! [`enumerate_paths_oracle`] computes the same distribution by brute force.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Activation, Network};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("profile has {choices} binary choices; enumeration is limited to {limit}")]
    TooManyChoices { choices: usize, limit: usize },
    #[error("nonlinear fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("network has no PReLU units")]
    NoPrelu,
}

/// Largest number of binary choices [`enumerate_paths_oracle`] accepts.
pub const ORACLE_MAX_CHOICES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Nonlinear layer; `nonlinear_fraction` of its channels are nonlinear.
    Plain { nonlinear_fraction: f64 },
    /// Residual span: skipped or traversed with probability ½ each.
    Residual { stages: Vec<Stage> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PathProfile {
    pub stages: Vec<Stage>,
}

impl PathProfile {
    pub fn new(stages: Vec<Stage>) -> Result<Self, PathError> {
        let p = Self { stages };
        p.validate()?;
        Ok(p)
    }

    /// Plain feedforward profile from per-layer nonlinear fractions.
    pub fn plain(fractions: &[f64]) -> Result<Self, PathError> {
        Self::new(
            fractions
                .iter()
                .map(|&p| Stage::Plain { nonlinear_fraction: p })
                .collect(),
        )
    }

    /// `blocks` fully nonlinear residual spans of `block_len` layers each.
    pub fn residual_blocks(blocks: usize, block_len: usize) -> Self {
        let inner = vec![Stage::Plain { nonlinear_fraction: 1.0 }; block_len];
        Self {
            stages: vec![Stage::Residual { stages: inner }; blocks],
        }
    }

    pub fn validate(&self) -> Result<(), PathError> {
        fn walk(stages: &[Stage]) -> Result<(), PathError> {
            for s in stages {
                match s {
                    Stage::Plain { nonlinear_fraction: p } => {
                        if !(0.0..=1.0).contains(p) {
                            return Err(PathError::BadFraction(*p));
                        }
                    }
                    Stage::Residual { stages } => walk(stages)?,
                }
            }
            Ok(())
        }
        walk(&self.stages)
    }

    /// Longest possible path: the number of plain stages.
    pub fn max_length(&self) -> usize {
        fn count(stages: &[Stage]) -> usize {
            stages
                .iter()
                .map(|s| match s {
                    Stage::Plain { .. } => 1,
                    Stage::Residual { stages } => count(stages),
                })
                .sum()
        }
        count(&self.stages)
    }

    /// Binary choices (plain stages plus residual spans) the oracle enumerates.
    pub fn choice_count(&self) -> usize {
        fn count(stages: &[Stage]) -> usize {
            stages
                .iter()
                .map(|s| match s {
                    Stage::Plain { .. } => 1,
                    Stage::Residual { stages } => 1 + count(stages),
                })
                .sum()
        }
        count(&self.stages)
    }
}

/// Probability mass over path lengths `0..=max`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathLengthDistribution {
    mass: Vec<f64>,
}

/// JSON form: `{"lengths": [...], "mass": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lengths: Vec<usize>,
    pub mass: Vec<f64>,
}

impl PathLengthDistribution {
    pub fn point(length: usize) -> Self {
        let mut mass = vec![0.0; length + 1];
        mass[length] = 1.0;
        Self { mass }
    }

    pub fn from_mass(mass: Vec<f64>) -> Self {
        Self { mass }
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn get(&self, length: usize) -> f64 {
        self.mass.get(length).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.mass.iter().enumerate().map(|(k, m)| k as f64 * m).sum()
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Lengths carrying strictly positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.mass.len()).filter(|&k| self.mass[k] > 0.0).collect()
    }

    /// Total variation distance `½ Σ |p − q|`.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let n = self.mass.len().max(other.mass.len());
        0.5 * (0..n).map(|k| (self.get(k) - other.get(k)).abs()).sum::<f64>()
    }

    pub fn to_histogram(&self) -> Histogram {
        Histogram {
            lengths: (0..self.mass.len()).collect(),
            mass: self.mass.clone(),
        }
    }

    pub fn from_histogram(h: &Histogram) -> Self {
        let n = h.lengths.iter().max().map_or(0, |m| m + 1);
        let mut mass = vec![0.0; n];
        for (&k, &m) in h.lengths.iter().zip(&h.mass) {
            mass[k] += m;
        }
        Self { mass }
    }

    fn convolve(&self, other: &Self) -> Self {
        let mut mass = vec![0.0; self.mass.len() + other.mass.len() - 1];
        for (i, a) in self.mass.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.mass.iter().enumerate() {
                mass[i + j] += a * b;
            }
        }
        Self { mass }
    }
}

/// Per-stage nonlinear fractions of a network. Layers inside a residual span
/// become a nested residual stage; identity layers contribute no stage.
pub fn profile_of(net: &Network) -> PathProfile {
    let mut stages = Vec::new();
    let mut open: Option<(usize, Vec<Stage>)> = None;
    for (i, (ls, layer)) in net.spec.layers.iter().zip(&net.layers).enumerate() {
        if let Some(span) = net.spec.span_starting_at(i) {
            open = Some((span.end, Vec::new()));
        }
        if ls.activation.is_nonlinear() {
            let p = match (&ls.activation, &layer.slopes) {
                (Activation::Relu, _) => 1.0,
                (_, Some(s)) if !s.is_empty() => (s.len() - s.linear_count()) as f64 / s.len() as f64,
                _ => 1.0,
            };
            let stage = Stage::Plain { nonlinear_fraction: p };
            match open.as_mut() {
                Some((_, inner)) => inner.push(stage),
                None => stages.push(stage),
            }
        }
        if let Some((end, inner)) = open.take() {
            if end == i {
                stages.push(Stage::Residual { stages: inner });
            } else {
                open = Some((end, inner));
            }
        }
    }
    PathProfile { stages }
}

/// Normalized average path length: expected number of nonlinear units on a
/// random path.
pub fn napl(profile: &PathProfile) -> f64 {
    fn expect(stages: &[Stage]) -> f64 {
        stages
            .iter()
            .map(|s| match s {
                Stage::Plain { nonlinear_fraction } => *nonlinear_fraction,
                Stage::Residual { stages } => 0.5 * expect(stages),
            })
            .sum()
    }
    expect(&profile.stages)
}

/// Exact path-length distribution as a convolution of independent stages.
pub fn path_length_distribution(profile: &PathProfile) -> PathLengthDistribution {
    fn dist(stages: &[Stage]) -> PathLengthDistribution {
        stages.iter().fold(PathLengthDistribution::point(0), |acc, s| {
            let stage = match s {
                Stage::Plain { nonlinear_fraction: p } => PathLengthDistribution::from_mass(vec![1.0 - p, *p]),
                Stage::Residual { stages } => {
                    let mut inner = dist(stages);
                    for m in &mut inner.mass {
                        *m *= 0.5;
                    }
                    inner.mass[0] += 0.5;
                    inner
                }
            };
            acc.convolve(&stage)
        })
    }
    dist(&profile.stages)
}

/// Brute-force distribution over every combination of binary choices:
/// linear/nonlinear channel class per plain stage, skip/branch per residual
/// span. Choices inside a skipped span are still enumerated; they only
/// contribute weight.
pub fn enumerate_paths_oracle(profile: &PathProfile) -> Result<PathLengthDistribution, PathError> {
    let choices = profile.choice_count();
    if choices > ORACLE_MAX_CHOICES {
        return Err(PathError::TooManyChoices {
            choices,
            limit: ORACLE_MAX_CHOICES,
        });
    }

    // Returns (weight, length) for one assignment of choice bits.
    fn walk(stages: &[Stage], bits: u32, next: &mut u32, active: bool, weight: &mut f64, len: &mut usize) {
        for s in stages {
            let bit = (bits >> *next) & 1 == 1;
            *next += 1;
            match s {
                Stage::Plain { nonlinear_fraction: p } => {
                    if bit {
                        *weight *= p;
                        if active {
                            *len += 1;
                        }
                    } else {
                        *weight *= 1.0 - p;
                    }
                }
                Stage::Residual { stages } => {
                    *weight *= 0.5;
                    walk(stages, bits, next, active && bit, weight, len);
                }
            }
        }
    }

    let mut mass = vec![0.0; profile.max_length() + 1];
    for bits in 0..(1u32 << choices) {
        let (mut next, mut weight, mut len) = (0, 1.0, 0);
        walk(&profile.stages, bits, &mut next, true, &mut weight, &mut len);
        mass[len] += weight;
    }
    Ok(PathLengthDistribution { mass })
}

/// Mean of all PReLU slopes, frozen ones included.
pub fn average_slope(net: &Network) -> Result<f64, PathError> {
    let (sum, n) = net.slope_values().fold((0.0, 0usize), |(s, n), a| (s + a, n + 1));
    if n == 0 {
        return Err(PathError::NoPrelu);
    }
    Ok(sum / n as f64)
}

/// Fraction of PReLU units whose slope is exactly 1.
pub fn proportion_disabled(net: &Network) -> Result<f64, PathError> {
    let (linear, n) = net
        .slope_values()
        .fold((0usize, 0usize), |(l, n), a| (l + usize::from(a == 1.0), n + 1));
    if n == 0 {
        return Err(PathError::NoPrelu);
    }
    Ok(linear as f64 / n as f64)
}

/// Number of PReLU layers with both linear and nonlinear channels.
pub fn mixed_layers(net: &Network) -> usize {
    net.layers
        .iter()
        .filter_map(|l| l.slopes.as_ref())
        .filter(|s| {
            let linear = s.linear_count();
            linear > 0 && linear < s.len()
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Granularity, NetworkSpec, Slopes};

    #[test]
    fn single_stage_distribution() {
        let d = path_length_distribution(&PathProfile::plain(&[0.3]).unwrap());
        assert!((d.get(0) - 0.7).abs() < 1e-15 && (d.get(1) - 0.3).abs() < 1e-15);
        let o = enumerate_paths_oracle(&PathProfile::plain(&[0.3]).unwrap()).unwrap();
        assert!(d.total_variation(&o) < 1e-15);
    }

    #[test]
    fn empty_profile_is_point_mass_at_zero() {
        let p = PathProfile::default();
        assert_eq!(enumerate_paths_oracle(&p).unwrap().mass(), &[1.0]);
        assert_eq!(path_length_distribution(&p).mass(), &[1.0]);
        assert_eq!(napl(&p), 0.0);
    }

    #[test]
    fn napl_examples() {
        assert_eq!(napl(&PathProfile::plain(&[1.0; 7]).unwrap()), 7.0);
        assert_eq!(napl(&PathProfile::plain(&[0.5, 0.5]).unwrap()), 1.0);
        for l in 1..6 {
            assert_eq!(napl(&PathProfile::residual_blocks(l, 2)), l as f64);
        }
    }

    #[test]
    fn rejects_bad_fraction_and_large_profiles() {
        assert!(matches!(PathProfile::plain(&[1.5]), Err(PathError::BadFraction(_))));
        let big = PathProfile::plain(&[0.5; 21]).unwrap();
        assert!(matches!(enumerate_paths_oracle(&big), Err(PathError::TooManyChoices { .. })));
    }

    #[test]
    fn profile_of_counts_linear_channels() {
        let base = Network::build(NetworkSpec::mlp(4, 8, 3, 2), 0).unwrap();
        assert_eq!(profile_of(&base), PathProfile::plain(&[1.0, 1.0]).unwrap());

        let mut net = base.relu_to_prelu(Granularity::Channel).unwrap();
        let s = net.layers[0].slopes.as_mut().unwrap();
        for k in 0..5 {
            s.values[k] = 1.0;
            s.frozen[k] = true;
        }
        net.layers[1].slopes = Some(Slopes { values: vec![1.0; 8], frozen: vec![true; 8] });
        assert_eq!(profile_of(&net), PathProfile::plain(&[0.375, 0.0]).unwrap());

        let mut net = base.relu_to_prelu(Granularity::Layer).unwrap();
        net.layers[0].slopes.as_mut().unwrap().values[0] = 0.4;
        assert_eq!(profile_of(&net), PathProfile::plain(&[1.0, 1.0]).unwrap());
    }

    #[test]
    fn profile_of_residual_network() {
        let net = Network::build(NetworkSpec::residual(3, 4, 3, 2, 2), 0).unwrap();
        assert_eq!(profile_of(&net), PathProfile::residual_blocks(3, 2));
    }

    #[test]
    fn slope_measures() {
        let base = Network::build(NetworkSpec::mlp(4, 6, 3, 2), 0).unwrap();
        assert!(matches!(average_slope(&base), Err(PathError::NoPrelu)));
        let mut net = base.relu_to_prelu(Granularity::Channel).unwrap();
        assert_eq!(proportion_disabled(&net).unwrap(), 0.0);
        let s = net.layers[0].slopes.as_mut().unwrap();
        s.values[..3].fill(1.0);
        s.frozen[..3].fill(true);
        assert_eq!(proportion_disabled(&net).unwrap(), 0.25);
        assert_eq!(average_slope(&net).unwrap(), 0.25);
        assert_eq!(mixed_layers(&net), 1);
        net.freeze_near_linear(2.0);
        assert_eq!(proportion_disabled(&net).unwrap(), 1.0);
        assert_eq!(average_slope(&net).unwrap(), 1.0);
    }

    #[test]
    fn histogram_round_trip() {
        let d = path_length_distribution(&PathProfile::residual_blocks(3, 2));
        let h = d.to_histogram();
        let json = serde_json::to_string(&h).unwrap();
        assert!(json.starts_with("{\"lengths\":[0,1,2,3,4,5,6],\"mass\":["));
        assert_eq!(PathLengthDistribution::from_histogram(&h), d);
    }
}
