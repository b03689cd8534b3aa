use serde::{Deserialize, Serialize};

/// Hyperparameters of momentum SGD with a multistep learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs (0-based) at which the learning rate is multiplied by `gamma`.
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl SgdConfig {
    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.gamma.powi(passed as i32)
    }
}

/// One parameter tensor handed to [`Sgd::step`].
pub struct Param<'a> {
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
    /// Whether weight decay applies to this tensor.
    pub decay: bool,
    /// Elements flagged here are left untouched.
    pub frozen: Option<&'a [bool]>,
}

/// Momentum SGD. Buffers are created lazily, zeroed and shape-matched, the
/// first time each parameter position is stepped.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    buffers: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            buffers: Vec::new(),
        }
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }

    /// `v ← μ·v + g + λ·p`, `p ← p − lr(epoch)·v`.
    ///
    /// Parameters are matched to momentum buffers by position, so callers must
    /// pass them in the same order on every step.
    pub fn step(&mut self, params: &mut [Param<'_>], epoch: usize) {
        let lr = self.config.lr_at(epoch);
        let mu = self.config.momentum;
        let wd = self.config.weight_decay;
        if self.buffers.len() < params.len() {
            self.buffers.resize(params.len(), Vec::new());
        }
        for (p, buf) in params.iter_mut().zip(&mut self.buffers) {
            if buf.len() != p.values.len() {
                *buf = vec![0.0; p.values.len()];
            }
            let decay = if p.decay { wd } else { 0.0 };
            for i in 0..p.values.len() {
                if p.frozen.is_some_and(|f| f[i]) {
                    buf[i] = 0.0;
                    continue;
                }
                buf[i] = mu * buf[i] + p.grad[i] + decay * p.values[i];
                p.values[i] -= lr * buf[i];
            }
        }
    }
}
