use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use varidepth::autodiff::Tensor;
use varidepth::harness::{generate_synthetic as generate, SyntheticKind, SyntheticSpec};
use varidepth::network::{Checkpoint, Granularity, Network as CoreNetwork, NetworkError, NetworkSpec, TrainingMeta};
use varidepth::pathmetrics::{self, PathProfile};
use varidepth::reparam::{self, ActivationDescriptor, ReparamPair, ResidualBlockParams};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn network_err(e: NetworkError) -> PyErr {
    match e {
        NetworkError::Io { .. } => PyIOError::new_err(e.to_string()),
        e => value_err(e),
    }
}

fn granularity(name: &str) -> PyResult<Granularity> {
    name.parse().map_err(value_err)
}

/// Feedforward network with optional PReLU slopes.
#[pyclass(name = "Network")]
struct PyNetwork {
    inner: CoreNetwork,
}

#[pymethods]
impl PyNetwork {
    /// Plain ReLU MLP with `depth` layers, the last one affine.
    #[staticmethod]
    #[pyo3(signature = (inputs, width, depth, outputs, seed=0))]
    fn mlp(inputs: usize, width: usize, depth: usize, outputs: usize, seed: u64) -> PyResult<Self> {
        let inner = CoreNetwork::build(NetworkSpec::mlp(inputs, width, depth, outputs), seed).map_err(network_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: Checkpoint::load(path).map_err(network_err)?.network })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        Checkpoint::new(self.inner.clone(), TrainingMeta::default()).save(path).map_err(network_err)
    }

    /// Logits for a batch given as a list of rows.
    fn forward(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(value_err("rows have different lengths"));
        }
        let x = Tensor::matrix(n, d, rows.concat()).map_err(value_err)?;
        let y = self.inner.forward(&x).map_err(network_err)?;
        Ok(y.data().chunks(y.last_dim()).map(<[f64]>::to_vec).collect())
    }

    /// Copy with every ReLU replaced by a PReLU (`"channel"` or `"layer"`).
    fn relu_to_prelu(&self, granularity_name: &str) -> PyResult<Self> {
        let inner = self.inner.relu_to_prelu(granularity(granularity_name)?).map_err(network_err)?;
        Ok(Self { inner })
    }

    /// Slope values per PReLU layer.
    fn slopes(&self) -> Vec<Vec<f64>> {
        self.inner.layers.iter().filter_map(|l| l.slopes.as_ref()).map(|s| s.values.clone()).collect()
    }

    /// Overwrites the slopes of the `index`-th PReLU layer.
    fn set_slopes(&mut self, index: usize, values: Vec<f64>) -> PyResult<()> {
        let s = self
            .inner
            .layers
            .iter_mut()
            .filter_map(|l| l.slopes.as_mut())
            .nth(index)
            .ok_or_else(|| value_err(format!("no PReLU layer {index}")))?;
        if values.len() != s.values.len() {
            return Err(value_err(format!("expected {} slopes, got {}", s.values.len(), values.len())));
        }
        s.values = values;
        Ok(())
    }

    /// Snaps slopes within `tau` of 1 to 1 and freezes them; returns the
    /// number newly frozen.
    #[pyo3(signature = (tau=0.01))]
    fn freeze(&mut self, tau: f64) -> usize {
        self.inner.freeze_near_linear(tau)
    }

    fn napl(&self) -> f64 {
        pathmetrics::napl(&pathmetrics::profile_of(&self.inner))
    }

    /// Path-length distribution as `(lengths, mass)`.
    fn histogram(&self) -> (Vec<usize>, Vec<f64>) {
        let h = pathmetrics::path_length_distribution(&pathmetrics::profile_of(&self.inner)).to_histogram();
        (h.lengths, h.mass)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn slope_count(&self) -> usize {
        self.inner.slope_count()
    }

    #[getter]
    fn frozen_count(&self) -> usize {
        self.inner.frozen_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(layers={}, parameters={}, slopes={})",
            self.inner.layers.len(),
            self.inner.parameter_count(),
            self.inner.slope_count()
        )
    }
}

/// Path-length mass for a plain stack of layers with the given nonlinear
/// fractions.
#[pyfunction]
fn path_length_distribution(fractions: Vec<f64>) -> PyResult<Vec<f64>> {
    let p = PathProfile::plain(&fractions).map_err(value_err)?;
    Ok(pathmetrics::path_length_distribution(&p).mass().to_vec())
}

#[pyfunction]
fn napl(fractions: Vec<f64>) -> PyResult<f64> {
    Ok(pathmetrics::napl(&PathProfile::plain(&fractions).map_err(value_err)?))
}

/// Path-length mass of `blocks` fully nonlinear residual blocks.
#[pyfunction]
#[pyo3(signature = (blocks, block_len=2))]
fn residual_distribution(blocks: usize, block_len: usize) -> Vec<f64> {
    pathmetrics::path_length_distribution(&PathProfile::residual_blocks(blocks, block_len)).mass().to_vec()
}

/// Builds the feedforward replacement of a random residual block and returns
/// the largest deviation over samples from the unit ball (local-linear) or
/// the box `[-1, 1]^n` (relu).
#[pyfunction]
#[pyo3(signature = (width=4, epsilon=1e-3, samples=1000, seed=0, activation="tanh"))]
fn reparam_verify(width: usize, epsilon: f64, samples: usize, seed: u64, activation: &str) -> PyResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = ResidualBlockParams::random(width, 1.0, &mut rng);
    let (pair, xs) = match activation {
        "relu" => (ReparamPair::relu(block, -1.0), reparam::sample_box(width, -1.0, 1.0, samples, &mut rng)),
        name => {
            let act = match name {
                "tanh" => ActivationDescriptor::tanh(),
                "sigmoid" => ActivationDescriptor::sigmoid(),
                "softplus" => ActivationDescriptor::softplus(),
                other => return Err(value_err(format!("unknown activation `{other}`"))),
            };
            let pair = ReparamPair::local_linear(block, act, epsilon).map_err(value_err)?;
            (pair, reparam::sample_ball(width, 1.0, samples, &mut rng))
        }
    };
    Ok(pair.verify(&xs).map_err(value_err)?.max)
}

/// Two distinct inputs with identical `relu(W x + b)`: `(x1, x2, case)`.
#[pyfunction]
fn noninjectivity_witness(weight: Vec<Vec<f64>>, bias: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>, String)> {
    let n = weight.len();
    if weight.iter().any(|r| r.len() != n) {
        return Err(value_err("weight must be square"));
    }
    let w = DMatrix::from_row_iterator(n, n, weight.into_iter().flatten());
    let found = reparam::noninjectivity_witness(&w, &DVector::from_vec(bias)).map_err(value_err)?;
    let case = match found.case {
        reparam::WitnessCase::Singular => "singular",
        reparam::WitnessCase::Invertible => "invertible",
    };
    Ok((found.x1.iter().copied().collect(), found.x2.iter().copied().collect(), case.to_string()))
}

/// Synthetic dataset as `(rows, labels, train_indices, test_indices)`.
#[pyfunction]
#[pyo3(signature = (kind, samples, classes, features, noise, seed))]
#[allow(clippy::type_complexity)]
fn generate_synthetic(
    kind: &str,
    samples: usize,
    classes: usize,
    features: usize,
    noise: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<usize>, Vec<usize>, Vec<usize>)> {
    let generator: SyntheticKind = kind.parse().map_err(value_err)?;
    let d = generate(&SyntheticSpec { generator, samples, classes, features, noise, seed }).map_err(value_err)?;
    let rows = (0..d.len()).map(|i| d.row(i).to_vec()).collect();
    Ok((rows, d.labels().to_vec(), d.train().to_vec(), d.test().to_vec()))
}

#[pymodule]
fn varidepth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(path_length_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(napl, m)?)?;
    m.add_function(wrap_pyfunction!(residual_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(reparam_verify, m)?)?;
    m.add_function(wrap_pyfunction!(noninjectivity_witness, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    Ok(())
}
