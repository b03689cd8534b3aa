//! Fully connected networks with optional identity skips and PReLU units.
//!
//! Weights are stored `[n_in × n_out]` so that a batch `x[b × n_in]` maps to
//! `x · W + b`. Residual spans add the span's input to the output of its last
//! layer, after that layer's activation (and channel gain, if any).

mod checkpoint;
mod spec;

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use spec::{Activation, Granularity, LayerSpec, NetworkSpec, ResidualSpan};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{Graph, NodeId, Tensor, TensorError, UnitMap};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input width {got} does not match network input width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("layer {layer} already uses PReLU units")]
    AlreadyPrelu { layer: usize },
    #[error("network has no {0} units")]
    Missing(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("checkpoint version {found} not supported (expected {supported})")]
    Version { found: u32, supported: u32 },
}

/// PReLU slopes of one layer with their frozen flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Slopes {
    pub values: Vec<f64>,
    pub frozen: Vec<bool>,
}

impl Slopes {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            frozen: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().filter(|&&f| f).count()
    }

    /// Units whose slope is exactly 1.
    pub fn linear_count(&self) -> usize {
        self.values.iter().filter(|&&a| a == 1.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[n_in × n_out]`.
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
    pub slopes: Option<Slopes>,
    pub gain: Option<Vec<f64>>,
}

/// Node handles of one layer's parameters inside a recorded graph.
#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub weight: NodeId,
    pub bias: Option<NodeId>,
    pub slopes: Option<NodeId>,
    pub gain: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl Network {
    /// Instantiates `spec` with He-normal weights (variance `2/n_in`) and zero biases.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self, NetworkError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers
            .iter()
            .map(|ls| {
                let normal = Normal::new(0.0, (2.0 / ls.n_in as f64).sqrt()).expect("positive std");
                let w: Vec<f64> = (0..ls.n_in * ls.n_out).map(|_| normal.sample(&mut rng)).collect();
                Ok(Layer {
                    weight: Tensor::matrix(ls.n_in, ls.n_out, w)?,
                    bias: ls.bias.then(|| vec![0.0; ls.n_out]),
                    slopes: (ls.slope_count() > 0).then(|| Slopes::zeros(ls.slope_count())),
                    gain: ls.channel_gain.then(|| vec![1.0; ls.n_out]),
                })
            })
            .collect::<Result<Vec<_>, NetworkError>>()?;
        Ok(Self { spec, layers, seed })
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width()
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weight.len()
                    + l.bias.as_ref().map_or(0, Vec::len)
                    + l.slopes.as_ref().map_or(0, Slopes::len)
                    + l.gain.as_ref().map_or(0, Vec::len)
            })
            .sum()
    }

    pub fn slope_count(&self) -> usize {
        self.layers.iter().filter_map(|l| l.slopes.as_ref()).map(Slopes::len).sum()
    }

    pub fn has_prelu(&self) -> bool {
        self.spec.layers.iter().any(|l| l.activation.is_prelu())
    }

    /// Iterator over all slope values (frozen included).
    pub fn slope_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .filter_map(|l| l.slopes.as_ref())
            .flat_map(|s| s.values.iter().copied())
    }

    /// Records the forward pass on `g`. Parameters become differentiable
    /// leaves when `trainable` is set, constants otherwise.
    pub fn record(
        &self,
        g: &mut Graph,
        input: NodeId,
        trainable: bool,
    ) -> Result<(NodeId, Vec<LayerNodes>), NetworkError> {
        let got = g.value(input).last_dim();
        if g.value(input).ndim() != 2 || got != self.input_width() {
            return Err(NetworkError::WidthMismatch {
                expected: self.input_width(),
                got,
            });
        }
        let leaf = |g: &mut Graph, t: Tensor| if trainable { g.param(t) } else { g.constant(t) };
        let mut h = input;
        let mut span_input: Option<(usize, NodeId)> = None;
        let mut nodes = Vec::with_capacity(self.layers.len());
        for (i, (layer, ls)) in self.layers.iter().zip(&self.spec.layers).enumerate() {
            if let Some(span) = self.spec.span_starting_at(i) {
                span_input = Some((span.end, h));
            }
            let w = leaf(g, layer.weight.clone());
            let mut out = g.matmul(h, w)?;
            let bias = match &layer.bias {
                Some(b) => {
                    let b = leaf(g, Tensor::vector(b.clone())?);
                    out = g.add_row(out, b)?;
                    Some(b)
                }
                None => None,
            };
            let mut slopes = None;
            out = match ls.activation {
                Activation::Identity => out,
                Activation::Relu => g.relu(out),
                Activation::PreluChannel | Activation::PreluLayer => {
                    let s = layer.slopes.as_ref().ok_or(NetworkError::Missing("slope"))?;
                    let a = leaf(g, Tensor::vector(s.values.clone())?);
                    slopes = Some(a);
                    let map = if ls.activation == Activation::PreluChannel {
                        UnitMap::Channel
                    } else {
                        UnitMap::Layer
                    };
                    g.prelu(out, a, &map)?
                }
            };
            let gain = match &layer.gain {
                Some(gv) => {
                    let gn = leaf(g, Tensor::vector(gv.clone())?);
                    out = g.mul_channel(out, gn)?;
                    Some(gn)
                }
                None => None,
            };
            if let Some((end, skip)) = span_input {
                if end == i {
                    out = g.add(out, skip)?;
                    span_input = None;
                }
            }
            nodes.push(LayerNodes {
                weight: w,
                bias,
                slopes,
                gain,
            });
            h = out;
        }
        Ok((h, nodes))
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, NetworkError> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let (out, _) = self.record(&mut g, x, false)?;
        Ok(g.value(out).clone())
    }

    /// Replaces every ReLU with a PReLU of the given granularity, slopes 0.
    /// The network's function is unchanged.
    pub fn relu_to_prelu(&self, granularity: Granularity) -> Result<Network, NetworkError> {
        if let Some(layer) = self.spec.layers.iter().position(|l| l.activation.is_prelu()) {
            return Err(NetworkError::AlreadyPrelu { layer });
        }
        if !self.spec.layers.iter().any(|l| l.activation == Activation::Relu) {
            return Err(NetworkError::Missing("ReLU"));
        }
        let mut net = self.clone();
        for (ls, layer) in net.spec.layers.iter_mut().zip(&mut net.layers) {
            if ls.activation == Activation::Relu {
                ls.activation = granularity.activation();
                layer.slopes = Some(Slopes::zeros(ls.slope_count()));
            }
        }
        Ok(net)
    }

    /// Expands each layer-wise PReLU that is not fully linear into a
    /// channel-wise PReLU whose slopes all start at the layer's slope. Frozen
    /// layer-wise units are kept as they are.
    pub fn replace_nonlinear_layerwise_with_channelwise(&self) -> Network {
        let mut net = self.clone();
        for (ls, layer) in net.spec.layers.iter_mut().zip(&mut net.layers) {
            if ls.activation != Activation::PreluLayer {
                continue;
            }
            let s = layer.slopes.as_ref().expect("layer-wise PReLU has a slope");
            if s.frozen[0] {
                continue;
            }
            let alpha = s.values[0];
            ls.activation = Activation::PreluChannel;
            layer.slopes = Some(Slopes {
                values: vec![alpha; ls.n_out],
                frozen: vec![false; ls.n_out],
            });
        }
        net
    }

    /// Inserts a learnable per-channel gain (initialised to 1) after every
    /// layer-wise PReLU.
    pub fn append_channel_multiplier(&self) -> Network {
        let mut net = self.clone();
        for (ls, layer) in net.spec.layers.iter_mut().zip(&mut net.layers) {
            if ls.activation == Activation::PreluLayer && !ls.channel_gain {
                ls.channel_gain = true;
                layer.gain = Some(vec![1.0; ls.n_out]);
            }
        }
        net
    }

    /// Sets slopes within `threshold` of 1 to exactly 1 and freezes them.
    /// Returns the number of newly frozen units.
    pub fn freeze_near_linear(&mut self, threshold: f64) -> usize {
        let mut newly = 0;
        for s in self.layers.iter_mut().filter_map(|l| l.slopes.as_mut()) {
            for (a, f) in s.values.iter_mut().zip(&mut s.frozen) {
                if !*f && (*a - 1.0).abs() < threshold {
                    *a = 1.0;
                    *f = true;
                    newly += 1;
                }
            }
        }
        newly
    }

    pub fn frozen_count(&self) -> usize {
        self.layers.iter().filter_map(|l| l.slopes.as_ref()).map(Slopes::frozen_count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn build_shapes_and_determinism() {
        let spec = NetworkSpec::mlp(4, 4, 3, 4);
        let net = Network::build(spec.clone(), 7).unwrap();
        assert_eq!(net.layers.len(), 3);
        assert!(net.layers.iter().all(|l| l.weight.shape() == [4, 4]));
        assert!(net.layers.iter().all(|l| l.bias.as_ref().unwrap().iter().all(|&b| b == 0.0)));
        assert_eq!(net, Network::build(spec.clone(), 7).unwrap());
        assert_ne!(net, Network::build(spec, 8).unwrap());
    }

    #[test]
    fn build_rejects_invalid_spec() {
        let mut spec = NetworkSpec::mlp(4, 8, 2, 4);
        spec.residual_spans.push(ResidualSpan { start: 0, end: 0 });
        assert!(matches!(Network::build(spec, 0), Err(NetworkError::InvalidSpec(_))));
    }

    #[test]
    fn zero_weights_residual_is_identity() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::new(3, 3, Activation::Relu),
                LayerSpec::new(3, 3, Activation::Relu),
            ],
            residual_spans: vec![ResidualSpan { start: 0, end: 1 }],
        };
        let mut net = Network::build(spec, 1).unwrap();
        for l in &mut net.layers {
            l.weight.data_mut().fill(0.0);
        }
        let x = random_batch(5, 3, 2);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn single_linear_layer_matches_direct_product() {
        let spec = NetworkSpec::mlp(3, 0, 1, 2);
        let mut net = Network::build(spec, 3).unwrap();
        net.layers[0].bias = Some(vec![0.5, -1.0]);
        let x = random_batch(4, 3, 9);
        let y = net.forward(&x).unwrap();
        let w = &net.layers[0].weight;
        for r in 0..4 {
            for c in 0..2 {
                let mut expect = net.layers[0].bias.as_ref().unwrap()[c];
                for k in 0..3 {
                    expect += x.get2(r, k) * w.get2(k, c);
                }
                assert!((y.get2(r, c) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn relu_on_negative_preactivations_is_zero() {
        let spec = NetworkSpec {
            layers: vec![LayerSpec::new(2, 2, Activation::Relu)],
            residual_spans: vec![],
        };
        let mut net = Network::build(spec, 0).unwrap();
        net.layers[0].weight = Tensor::identity(2);
        net.layers[0].bias = Some(vec![-10.0, -10.0]);
        let y = net.forward(&random_batch(3, 2, 0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let net = Network::build(NetworkSpec::mlp(4, 4, 2, 2), 0).unwrap();
        assert!(matches!(
            net.forward(&Tensor::zeros(&[2, 5])),
            Err(NetworkError::WidthMismatch { expected: 4, got: 5 })
        ));
    }

    #[test]
    fn surgery_preserves_function() {
        let net = Network::build(NetworkSpec::mlp(5, 8, 4, 3), 11).unwrap();
        let x = random_batch(16, 5, 4);
        let y = net.forward(&x).unwrap();
        for gran in [Granularity::Channel, Granularity::Layer] {
            let p = net.relu_to_prelu(gran).unwrap();
            assert_eq!(p.forward(&x).unwrap(), y);
            assert!(matches!(p.relu_to_prelu(gran), Err(NetworkError::AlreadyPrelu { .. })));
        }
    }

    #[test]
    fn slope_counts() {
        let net = Network::build(NetworkSpec::mlp(4, 8, 3, 2), 0).unwrap();
        assert_eq!(net.relu_to_prelu(Granularity::Channel).unwrap().slope_count(), 16);
        assert_eq!(net.relu_to_prelu(Granularity::Layer).unwrap().slope_count(), 2);
    }

    #[test]
    fn layerwise_expansion() {
        let base = Network::build(NetworkSpec::mlp(4, 5, 3, 2), 5).unwrap();
        let mut net = base.relu_to_prelu(Granularity::Layer).unwrap();
        net.layers[0].slopes = Some(Slopes { values: vec![1.0], frozen: vec![true] });
        net.layers[1].slopes = Some(Slopes { values: vec![0.3], frozen: vec![false] });
        let x = random_batch(8, 4, 1);
        let y = net.forward(&x).unwrap();

        let expanded = net.replace_nonlinear_layerwise_with_channelwise();
        assert_eq!(expanded.spec.layers[0].activation, Activation::PreluLayer);
        assert_eq!(expanded.layers[0].slopes.as_ref().unwrap().values, vec![1.0]);
        assert_eq!(expanded.spec.layers[1].activation, Activation::PreluChannel);
        assert_eq!(expanded.layers[1].slopes.as_ref().unwrap().values, vec![0.3; 5]);
        assert_eq!(expanded.forward(&x).unwrap(), y);
    }

    #[test]
    fn channel_multiplier_is_value_preserving() {
        let base = Network::build(NetworkSpec::mlp(4, 8, 3, 2), 5).unwrap();
        let net = base.relu_to_prelu(Granularity::Layer).unwrap();
        let with_gain = net.append_channel_multiplier();
        assert_eq!(with_gain.parameter_count(), net.parameter_count() + 16);
        let x = random_batch(8, 4, 2);
        assert_eq!(with_gain.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn freeze_near_linear_sets_exact_one() {
        let base = Network::build(NetworkSpec::mlp(4, 4, 2, 2), 0).unwrap();
        let mut net = base.relu_to_prelu(Granularity::Channel).unwrap();
        net.layers[0].slopes.as_mut().unwrap().values = vec![0.995, 0.98, 1.009, 0.2];
        assert_eq!(net.freeze_near_linear(0.01), 2);
        let s = net.layers[0].slopes.as_ref().unwrap();
        assert_eq!(s.values, vec![1.0, 0.98, 1.0, 0.2]);
        assert_eq!(s.frozen, vec![true, false, true, false]);
    }
}
