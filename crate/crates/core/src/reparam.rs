//! Residual-to-feedforward block constructions and their numerical checks.
//!
//! A residual block computes `R(x) = φ(W̄x + b̄) + x`; a feedforward block of
//! twice the width computes `F(x) = W₂ φ(W₁x + b₁) + b₂`. Two constructions
//! map the former onto the latter:
//!
//! * [`reparam_local_linear`]: for any `φ` differentiable at a point `c` with
//!   `φ′(c) ≠ 0`, the identity path is shrunk by `ε` into the near-linear
//!   region around `c` and expanded again afterwards. The error is `O(ε‖x‖²)`,
//!   and `O(ε²‖x‖³)` when `φ″(c) = 0` (tanh and sigmoid at 0).
//! * [`reparam_relu`]: for ReLU, the identity path is shifted above zero by a
//!   constant and shifted back, which is exact on inputs above a known bound.
//!
//! [`noninjectivity_witness`] produces two distinct inputs that a ReLU
//! feedforward block maps to the same output, showing it cannot equal the
//! identity residual block `W̄ = 0, b̄ = 0`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReparamError {
    #[error("activation derivative at c = {c} is {derivative}; the construction divides by it")]
    ZeroDerivative { c: f64, derivative: f64 },
    #[error("{0} is not differentiable at c = {1}")]
    NotDifferentiable(&'static str, f64),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("weight matrix must be square, got {rows}×{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("bias length {bias} does not match width {width}")]
    BiasLength { width: usize, bias: usize },
    #[error("sample set is empty")]
    NoSamples,
    #[error("sample {index} has dimension {got}, block expects {expected}")]
    SampleDimension { index: usize, expected: usize, got: usize },
    #[error("no exact non-injectivity witness found: {0}")]
    WitnessNotFound(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Softplus => "softplus",
            ActivationKind::Relu => "relu",
        }
    }

    pub fn eval(self, z: f64) -> f64 {
        match self {
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            // ln(1 + e^z) without overflow
            ActivationKind::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            ActivationKind::Relu => z.max(0.0),
        }
    }

    /// Derivative at `z`; `None` where it does not exist (ReLU at 0).
    pub fn derivative(self, z: f64) -> Option<f64> {
        match self {
            ActivationKind::Tanh => Some(1.0 - z.tanh().powi(2)),
            ActivationKind::Sigmoid => {
                let s = self.eval(z);
                Some(s * (1.0 - s))
            }
            ActivationKind::Softplus => Some(ActivationKind::Sigmoid.eval(z)),
            ActivationKind::Relu if z == 0.0 => None,
            ActivationKind::Relu => Some(if z > 0.0 { 1.0 } else { 0.0 }),
        }
    }
}

/// Pointwise activation together with the expansion point `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActivationDescriptor {
    pub kind: ActivationKind,
    pub c: f64,
}

impl ActivationDescriptor {
    pub fn new(kind: ActivationKind, c: f64) -> Self {
        Self { kind, c }
    }

    pub fn tanh() -> Self {
        Self::new(ActivationKind::Tanh, 0.0)
    }

    pub fn sigmoid() -> Self {
        Self::new(ActivationKind::Sigmoid, 0.0)
    }

    pub fn softplus() -> Self {
        Self::new(ActivationKind::Softplus, 0.0)
    }

    pub fn relu() -> Self {
        Self::new(ActivationKind::Relu, 0.0)
    }

    pub fn value_at_c(&self) -> f64 {
        self.kind.eval(self.c)
    }

    pub fn derivative_at_c(&self) -> Result<f64, ReparamError> {
        let d = self
            .kind
            .derivative(self.c)
            .ok_or(ReparamError::NotDifferentiable(self.kind.name(), self.c))?;
        if d == 0.0 {
            return Err(ReparamError::ZeroDerivative { c: self.c, derivative: d });
        }
        Ok(d)
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        v.map(|z| self.kind.eval(z))
    }
}

/// `R(x) = φ(W̄x + b̄) + x` with square `W̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlockParams {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl ResidualBlockParams {
    pub fn new(weight: DMatrix<f64>, bias: DVector<f64>) -> Result<Self, ReparamError> {
        if !weight.is_square() {
            return Err(ReparamError::NotSquare {
                rows: weight.nrows(),
                cols: weight.ncols(),
            });
        }
        if bias.len() != weight.nrows() {
            return Err(ReparamError::BiasLength {
                width: weight.nrows(),
                bias: bias.len(),
            });
        }
        Ok(Self { weight, bias })
    }

    /// Entries drawn from `N(0, scale²)`.
    pub fn random<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Self {
        let mut draw = || scale * Distribution::<f64>::sample(&StandardNormal, rng);
        let weight = DMatrix::from_fn(n, n, |_, _| draw());
        let bias = DVector::from_fn(n, |_, _| draw());
        Self { weight, bias }
    }

    pub fn width(&self) -> usize {
        self.weight.nrows()
    }

    pub fn eval(&self, act: &ActivationDescriptor, x: &DVector<f64>) -> DVector<f64> {
        act.apply(&(&self.weight * x + &self.bias)) + x
    }
}

/// `F(x) = W₂ φ(W₁x + b₁) + b₂`; `W₁` is `2n×n`, `W₂` is `n×2n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardBlockParams {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl FeedforwardBlockParams {
    pub fn hidden_width(&self) -> usize {
        self.w1.nrows()
    }

    pub fn eval(&self, act: &ActivationDescriptor, x: &DVector<f64>) -> DVector<f64> {
        &self.w2 * act.apply(&(&self.w1 * x + &self.b1)) + &self.b2
    }
}

/// Residual block and the feedforward block constructed from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamPair {
    pub residual: ResidualBlockParams,
    pub feedforward: FeedforwardBlockParams,
    pub activation: ActivationDescriptor,
    /// Shrink factor of the local-linear construction; `None` for the ReLU shift.
    pub epsilon: Option<f64>,
}

impl ReparamPair {
    pub fn local_linear(
        residual: ResidualBlockParams,
        activation: ActivationDescriptor,
        epsilon: f64,
    ) -> Result<Self, ReparamError> {
        let feedforward = reparam_local_linear(&residual, &activation, epsilon)?;
        Ok(Self { residual, feedforward, activation, epsilon: Some(epsilon) })
    }

    pub fn relu(residual: ResidualBlockParams, lower_bound: f64) -> Self {
        let feedforward = reparam_relu(&residual, lower_bound);
        Self {
            residual,
            feedforward,
            activation: ActivationDescriptor::relu(),
            epsilon: None,
        }
    }

    pub fn verify(&self, samples: &[DVector<f64>]) -> Result<Deviation, ReparamError> {
        verify_reparam(&self.residual, &self.feedforward, &self.activation, samples)
    }
}

/// Shrink-and-expand construction:
///
/// `W₁ = [ε·I; W̄]`, `b₁ = [c·𝟙; b̄]`,
/// `W₂ = [(1/(ε·φ′(c)))·I, I]`, `b₂ = −φ(c)/(ε·φ′(c))·𝟙`.
pub fn reparam_local_linear(
    block: &ResidualBlockParams,
    act: &ActivationDescriptor,
    epsilon: f64,
) -> Result<FeedforwardBlockParams, ReparamError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(ReparamError::BadEpsilon(epsilon));
    }
    let d = act.derivative_at_c()?;
    let n = block.width();
    let unshrink = 1.0 / (epsilon * d);

    let mut w1 = DMatrix::zeros(2 * n, n);
    w1.view_mut((0, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) * epsilon));
    w1.view_mut((n, 0), (n, n)).copy_from(&block.weight);
    let mut b1 = DVector::zeros(2 * n);
    b1.rows_mut(0, n).fill(act.c);
    b1.rows_mut(n, n).copy_from(&block.bias);

    let mut w2 = DMatrix::zeros(n, 2 * n);
    w2.view_mut((0, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) * unshrink));
    w2.view_mut((0, n), (n, n)).copy_from(&DMatrix::identity(n, n));
    let b2 = DVector::from_element(n, -act.value_at_c() * unshrink);

    Ok(FeedforwardBlockParams { w1, b1, w2, b2 })
}

/// Shift construction for ReLU blocks: `W₁ = [I; W̄]`, `b₁ = [s·𝟙; b̄]`,
/// `W₂ = [I, I]`, `b₂ = −s·𝟙` with `s = max(0, −lower_bound)`. Exact whenever
/// every input coordinate is at least `lower_bound`.
pub fn reparam_relu(block: &ResidualBlockParams, lower_bound: f64) -> FeedforwardBlockParams {
    let n = block.width();
    let shift = (-lower_bound).max(0.0);

    let mut w1 = DMatrix::zeros(2 * n, n);
    w1.view_mut((0, 0), (n, n)).fill_with_identity();
    w1.view_mut((n, 0), (n, n)).copy_from(&block.weight);
    let mut b1 = DVector::zeros(2 * n);
    b1.rows_mut(0, n).fill(shift);
    b1.rows_mut(n, n).copy_from(&block.bias);

    let mut w2 = DMatrix::zeros(n, 2 * n);
    w2.view_mut((0, 0), (n, n)).fill_with_identity();
    w2.view_mut((0, n), (n, n)).fill_with_identity();
    let b2 = DVector::from_element(n, -shift);

    FeedforwardBlockParams { w1, b1, w2, b2 }
}

/// Worst sample of a construction check.
#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    /// `max ‖F(x) − R(x)‖_∞` over the samples.
    pub max: f64,
    pub index: usize,
    pub sample: DVector<f64>,
}

pub fn verify_reparam(
    block: &ResidualBlockParams,
    ff: &FeedforwardBlockParams,
    act: &ActivationDescriptor,
    samples: &[DVector<f64>],
) -> Result<Deviation, ReparamError> {
    if samples.is_empty() {
        return Err(ReparamError::NoSamples);
    }
    let n = block.width();
    let mut worst = (0, f64::NEG_INFINITY);
    for (i, x) in samples.iter().enumerate() {
        if x.len() != n {
            return Err(ReparamError::SampleDimension { index: i, expected: n, got: x.len() });
        }
        let dev = (ff.eval(act, x) - block.eval(act, x)).amax();
        if dev > worst.1 || dev.is_nan() {
            worst = (i, dev);
        }
    }
    Ok(Deviation {
        max: worst.1,
        index: worst.0,
        sample: samples[worst.0].clone(),
    })
}

/// Uniform samples from the Euclidean ball of the given radius.
pub fn sample_ball<R: Rng + ?Sized>(n: usize, radius: f64, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| {
            let dir = DVector::from_fn(n, |_, _| Distribution::<f64>::sample(&StandardNormal, rng)).normalize();
            let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
            dir * r
        })
        .collect()
}

/// Uniform samples from the box `[lo, hi]ⁿ`.
pub fn sample_box<R: Rng + ?Sized>(n: usize, lo: f64, hi: f64, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| DVector::from_fn(n, |_, _| rng.random_range(lo..=hi)))
        .collect()
}

/// Which branch of the argument produced a witness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WitnessCase {
    /// `W` is (numerically) singular; the inputs differ along its null space.
    Singular,
    /// `W` is invertible; both pre-activations lie in the negative orthant.
    Invertible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub x1: DVector<f64>,
    pub x2: DVector<f64>,
    pub case: WitnessCase,
    pub condition_number: f64,
}

/// Condition number above which `W` is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;
const MIN_SEPARATION: f64 = 1e-8;

/// Finds `x₁ ≠ x₂` with `ReLU(Wx₁ + b) = ReLU(Wx₂ + b)` exactly (bitwise equal
/// in floating point). The pair is checked before it is returned.
pub fn noninjectivity_witness(w: &DMatrix<f64>, b: &DVector<f64>) -> Result<Witness, ReparamError> {
    let n = w.nrows();
    if !w.is_square() {
        return Err(ReparamError::NotSquare { rows: n, cols: w.ncols() });
    }
    if b.len() != n {
        return Err(ReparamError::BiasLength { width: n, bias: b.len() });
    }
    let image = |x: &DVector<f64>| (w * x + b).map(|z| z.max(0.0));
    let accept = |x1: DVector<f64>, x2: DVector<f64>| -> Option<(DVector<f64>, DVector<f64>)> {
        ((&x1 - &x2).norm() > MIN_SEPARATION && image(&x1) == image(&x2)).then_some((x1, x2))
    };

    let svd = w.clone().svd(true, true);
    let sigma = &svd.singular_values;
    let (max_s, min_idx) = (sigma.max(), sigma.imin());
    let min_s = sigma[min_idx];
    let condition_number = if min_s == 0.0 { f64::INFINITY } else { max_s / min_s };
    let v_t = svd.v_t.as_ref().expect("requested V");

    if condition_number <= SINGULAR_CONDITION {
        // Pull two points of the negative orthant back through W.
        let scale = 1.0 + b.amax();
        for k in 0..8 {
            let t = scale * 2f64.powi(k);
            let z1 = DVector::from_element(n, -t);
            let z2 = DVector::from_element(n, -2.0 * t);
            let (Some(x1), Some(x2)) = (svd.solve(&(z1 - b), 0.0).ok(), svd.solve(&(z2 - b), 0.0).ok()) else {
                break;
            };
            if let Some((x1, x2)) = accept(x1, x2) {
                return Ok(Witness { x1, x2, case: WitnessCase::Invertible, condition_number });
            }
        }
        return Err(ReparamError::WitnessNotFound(format!(
            "invertible W (condition {condition_number:.3e}) did not reach the negative orthant"
        )));
    }

    // Singular: move along the numerical null direction. Exactness of the
    // nonlinear image needs the moved coordinates to stay non-positive, so look
    // for a base point whose pre-activation lies in the negative orthant first.
    let null: DVector<f64> = v_t.row(min_idx).transpose().normalize();
    let tol = max_s * n as f64 * f64::EPSILON;
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let scale = 1.0 + b.amax();
    candidates.push(DVector::from_element(n, -scale));
    for _ in 0..256 {
        candidates.push(DVector::from_fn(n, |_, _| -scale * (1.0 + 4.0 * rng.random::<f64>())));
    }
    for target in candidates {
        let Ok(x1) = svd.solve(&(target - b), tol) else { continue };
        let z1 = w * &x1 + b;
        let margin = -z1.max();
        if margin <= 0.0 {
            continue;
        }
        let drift = (w * &null).amax();
        let step = if drift == 0.0 { 1.0 } else { (0.5 * margin / drift).min(1.0) };
        let x2 = &x1 + &null * step;
        if let Some((x1, x2)) = accept(x1, x2) {
            return Ok(Witness { x1, x2, case: WitnessCase::Singular, condition_number });
        }
    }
    // The affine image may miss the negative orthant; fall back to null-space
    // steps from the origin. A short step keeps the residual `W·v` below half
    // an ulp of `b`, so the pre-activations round to the same values.
    for step in [1.0, 1e-4, 1e-5, 1e-6, 1e-7] {
        if let Some((x1, x2)) = accept(DVector::zeros(n), &null * step) {
            return Ok(Witness { x1, x2, case: WitnessCase::Singular, condition_number });
        }
    }
    Err(ReparamError::WitnessNotFound(format!(
        "singular W (condition {condition_number:.3e}): null-space step changes the image"
    )))
}
