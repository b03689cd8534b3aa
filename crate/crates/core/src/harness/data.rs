use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    GaussianMixture,
    Spirals,
    HierarchicalXor,
}

impl SyntheticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticKind::GaussianMixture => "gaussian-mixture",
            SyntheticKind::Spirals => "spirals",
            SyntheticKind::HierarchicalXor => "hierarchical-xor",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyntheticKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian-mixture" => Ok(SyntheticKind::GaussianMixture),
            "spirals" => Ok(SyntheticKind::Spirals),
            "hierarchical-xor" => Ok(SyntheticKind::HierarchicalXor),
            other => Err(format!("unknown generator `{other}`")),
        }
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    Generator { kind: SyntheticKind, seed: u64 },
    Files { images: String, labels: String, sha256: String },
}

/// Labelled samples with a fixed train/test split. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
    classes: usize,
    train: Vec<usize>,
    test: Vec<usize>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        classes: usize,
        train: Vec<usize>,
        test: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self, HarnessError> {
        let invalid = |m: String| Err(HarnessError::InvalidDataset(m));
        let n = labels.len();
        if n_features == 0 || features.len() != n * n_features {
            return invalid(format!("{} feature values for {n} samples of width {n_features}", features.len()));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite feature at flat index {i}"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return invalid(format!("label {l} out of range for {classes} classes"));
        }
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&test) {
            if i >= n || seen[i] {
                return invalid(format!("split index {i} repeated or out of range"));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return invalid("train/test split does not cover every sample".into());
        }
        Ok(Self { features, n_features, labels, classes, train, test, provenance })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Features and labels of the given samples, in order.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let mut x = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        let x = Tensor::matrix(idx.len(), self.n_features, x).expect("non-empty batch");
        (x, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Per-class shuffled split; the first `round(0.8·n_c)` of each class train.
pub fn stratified_split(labels: &[usize], classes: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut members in by_class {
        members.shuffle(rng);
        let cut = (members.len() as f64 * 0.8).round() as usize;
        train.extend_from_slice(&members[..cut]);
        test.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Parameters of a synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: SyntheticKind,
    pub samples: usize,
    pub classes: usize,
    pub features: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 8 features, 4 classes, 10 000 samples split 8 000 / 2 000.
    pub fn reference(seed: u64) -> Self {
        Self {
            generator: SyntheticKind::HierarchicalXor,
            samples: 10_000,
            classes: 4,
            features: 8,
            noise: 0.02,
            seed,
        }
    }
}

/// Deterministic synthetic dataset with a stratified 80/20 split.
///
/// * `gaussian-mixture`: one isotropic Gaussian (std `noise`) per class around
///   a mean drawn from `N(0, 3²)` per coordinate.
/// * `spirals`: interleaved arms in the first two coordinates with Gaussian
///   jitter `noise`; remaining coordinates are pure `N(0, 1)` distractors.
/// * `hierarchical-xor`: `x ~ U[-1, 1]^d`. A coarse parity bit
///   `[x₀ > 0] ⊕ [x₁ > 0]` over the quadrants and a fine parity bit
///   `[|x₀| > ½] ⊕ [|x₁| > ½]` inside each quadrant combine into label
///   `(2·coarse + fine) mod classes`; the other
///   coordinates are distractors. Each label is replaced by a uniformly random
///   class with probability `noise`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, HarnessError> {
    let SyntheticSpec { generator, samples, classes, features, noise, seed } = *spec;
    let invalid = |m: String| Err(HarnessError::InvalidDataset(m));
    if classes < 2 || samples < classes {
        return invalid(format!("need samples ≥ classes ≥ 2, got {samples} samples, {classes} classes"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return invalid(format!("noise must be finite and non-negative, got {noise}"));
    }
    let min_features = match generator {
        SyntheticKind::GaussianMixture => 1,
        SyntheticKind::Spirals => 2,
        SyntheticKind::HierarchicalXor => 2,
    };
    if features < min_features {
        return invalid(format!("{generator} needs at least {min_features} features, got {features}"));
    }
    if generator == SyntheticKind::HierarchicalXor && classes > 4 {
        return invalid(format!("hierarchical-xor encodes at most 4 classes, got {classes}"));
    }
    if generator == SyntheticKind::HierarchicalXor && noise > 1.0 {
        return invalid(format!("hierarchical-xor noise is a flip probability, got {noise}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = Vec::with_capacity(samples * features);
    let mut y = Vec::with_capacity(samples);
    match generator {
        SyntheticKind::GaussianMixture => {
            let means: Vec<f64> = (0..classes * features).map(|_| 3.0 * std_normal.sample(&mut rng)).collect();
            for i in 0..samples {
                let c = i % classes;
                for f in 0..features {
                    x.push(means[c * features + f] + noise * std_normal.sample(&mut rng));
                }
                y.push(c);
            }
        }
        SyntheticKind::Spirals => {
            for i in 0..samples {
                let c = i % classes;
                let t: f64 = rng.random();
                let angle = 3.0 * std::f64::consts::PI * t + 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                let r = 0.2 + 2.0 * t;
                x.push(r * angle.cos() + noise * std_normal.sample(&mut rng));
                x.push(r * angle.sin() + noise * std_normal.sample(&mut rng));
                for _ in 2..features {
                    x.push(std_normal.sample(&mut rng));
                }
                y.push(c);
            }
        }
        SyntheticKind::HierarchicalXor => {
            for _ in 0..samples {
                let row: Vec<f64> = (0..features).map(|_| rng.random_range(-1.0..1.0)).collect();
                let coarse = (row[0] > 0.0) ^ (row[1] > 0.0);
                let fine = (row[0].abs() > 0.5) ^ (row[1].abs() > 0.5);
                let mut label = (2 * usize::from(coarse) + usize::from(fine)) % classes;
                if rng.random::<f64>() < noise {
                    label = rng.random_range(0..classes);
                }
                x.extend(row);
                y.push(label);
            }
        }
    }
    let (train, test) = stratified_split(&y, classes, &mut rng);
    Dataset::new(x, features, y, classes, train, test, Provenance::Generator { kind: generator, seed })
}
