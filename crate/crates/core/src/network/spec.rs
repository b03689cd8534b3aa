use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::NetworkError;

/// Pointwise nonlinearity applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    PreluChannel,
    PreluLayer,
    Identity,
}

impl Activation {
    pub fn is_nonlinear(self) -> bool {
        !matches!(self, Activation::Identity)
    }

    pub fn is_prelu(self) -> bool {
        matches!(self, Activation::PreluChannel | Activation::PreluLayer)
    }
}

/// Slope-sharing granularity of PReLU units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Channel,
    Layer,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Channel => "channel",
            Granularity::Layer => "layer",
        }
    }

    pub fn activation(self) -> Activation {
        match self {
            Granularity::Channel => Activation::PreluChannel,
            Granularity::Layer => Activation::PreluLayer,
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "channel" => Ok(Granularity::Channel),
            "layer" => Ok(Granularity::Layer),
            other => Err(format!("unknown granularity `{other}` (expected channel or layer)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
    pub bias: bool,
    /// Learnable per-channel gain applied after the activation.
    #[serde(default)]
    pub channel_gain: bool,
}

impl LayerSpec {
    pub fn new(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            n_in,
            n_out,
            activation,
            bias: true,
            channel_gain: false,
        }
    }

    /// Number of slope parameters this layer carries (0 for ReLU/identity).
    pub fn slope_count(&self) -> usize {
        match self.activation {
            Activation::PreluChannel => self.n_out,
            Activation::PreluLayer => 1,
            _ => 0,
        }
    }
}

/// Identity skip from the input of layer `start` to the output of layer `end`
/// (both inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub residual_spans: Vec<ResidualSpan>,
}

impl NetworkSpec {
    /// Plain feedforward stack: `depth` affine layers, ReLU after all but the last.
    pub fn mlp(input: usize, width: usize, depth: usize, outputs: usize) -> Self {
        assert!(depth >= 1, "depth must be at least 1");
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let n_in = if i == 0 { input } else { width };
            let last = i + 1 == depth;
            let n_out = if last { outputs } else { width };
            let act = if last {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(LayerSpec::new(n_in, n_out, act));
        }
        Self {
            layers,
            residual_spans: Vec::new(),
        }
    }

    /// Linear stem, `blocks` residual blocks of `block_len` ReLU layers, linear head.
    pub fn residual(input: usize, width: usize, blocks: usize, block_len: usize, outputs: usize) -> Self {
        let mut layers = vec![LayerSpec::new(input, width, Activation::Identity)];
        let mut residual_spans = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            let start = layers.len();
            for _ in 0..block_len {
                layers.push(LayerSpec::new(width, width, Activation::Relu));
            }
            residual_spans.push(ResidualSpan {
                start,
                end: layers.len() - 1,
            });
        }
        layers.push(LayerSpec::new(width, outputs, Activation::Identity));
        Self {
            layers,
            residual_spans,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.n_in)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn nonlinear_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.activation.is_nonlinear()).count()
    }

    /// Nonlinear layers inside a residual span.
    pub fn block_length(&self, span: &ResidualSpan) -> usize {
        self.layers[span.start..=span.end]
            .iter()
            .filter(|l| l.activation.is_nonlinear())
            .count()
    }

    /// The span starting at `layer`, if any.
    pub fn span_starting_at(&self, layer: usize) -> Option<&ResidualSpan> {
        self.residual_spans.iter().find(|s| s.start == layer)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let invalid = |msg: String| Err(NetworkError::InvalidSpec(msg));
        if self.layers.is_empty() {
            return invalid("network has no layers".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.n_in == 0 || l.n_out == 0 {
                return invalid(format!("layer {i}: widths must be positive ({}→{})", l.n_in, l.n_out));
            }
            if i > 0 && self.layers[i - 1].n_out != l.n_in {
                return invalid(format!(
                    "layer {i}: input width {} does not match previous output width {}",
                    l.n_in,
                    self.layers[i - 1].n_out
                ));
            }
            if l.channel_gain && !l.activation.is_prelu() {
                return invalid(format!("layer {i}: channel gain requires a PReLU activation"));
            }
        }
        let mut spans = self.residual_spans.clone();
        spans.sort_by_key(|s| s.start);
        for (k, s) in spans.iter().enumerate() {
            if s.start > s.end || s.end >= self.layers.len() {
                return invalid(format!(
                    "residual span {}..={} outside layer range 0..{}",
                    s.start,
                    s.end,
                    self.layers.len()
                ));
            }
            let (w_in, w_out) = (self.layers[s.start].n_in, self.layers[s.end].n_out);
            if w_in != w_out {
                return invalid(format!(
                    "residual span {}..={} maps width {w_in} to {w_out}; identity skips need matching widths",
                    s.start, s.end
                ));
            }
            if k > 0 && spans[k - 1].end >= s.start {
                return invalid(format!(
                    "residual spans {}..={} and {}..={} overlap",
                    spans[k - 1].start,
                    spans[k - 1].end,
                    s.start,
                    s.end
                ));
            }
        }
        Ok(())
    }
}
