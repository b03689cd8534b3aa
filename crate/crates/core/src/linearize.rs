//! Regularized post-training that pushes PReLU slopes towards 1, the freeze
//! rule, ω-sweeps, and the control variants.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, NodeId, Param, Sgd, SgdConfig, Tensor, TensorError};
use crate::harness::data::Dataset;
use crate::network::{Checkpoint, Granularity, Network, NetworkError, TrainingMeta};
use crate::pathmetrics::{self, Histogram};

/// Rows per forward chunk when measuring accuracy.
const EVAL_CHUNK: usize = 2048;

#[derive(Debug, Error)]
pub enum LinearizeError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} in epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize, loss: f64 },
    #[error("network has no PReLU units")]
    NoPrelu,
    #[error("network has no layer-wise PReLU units")]
    NotLayerwise,
    #[error("dataset has no training samples")]
    EmptyData,
    #[error("dataset has {data} features and {data_classes} classes, network expects {net_in} inputs and {net_out} outputs")]
    DataMismatch { data: usize, data_classes: usize, net_in: usize, net_out: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

impl From<TensorError> for LinearizeError {
    fn from(e: TensorError) -> Self {
        LinearizeError::Network(e.into())
    }
}

/// Epoch count, batch size and optimizer of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: SgdConfig,
}

impl Schedule {
    /// 60 epochs, lr 0.1 decayed ×0.1 at epochs 30 and 45.
    pub fn base_default() -> Self {
        Self {
            epochs: 60,
            batch_size: 128,
            optimizer: SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 1e-4, milestones: vec![30, 45], gamma: 0.1 },
        }
    }

    /// 30 epochs, lr 0.01 decayed ×0.1 at epochs 20 and 25.
    pub fn post_default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            optimizer: SgdConfig { lr: 0.01, momentum: 0.9, weight_decay: 1e-4, milestones: vec![20, 25], gamma: 0.1 },
        }
    }

    pub fn validate(&self) -> Result<(), LinearizeError> {
        let o = &self.optimizer;
        let bad = |m: String| Err(LinearizeError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", o.lr));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", o.momentum));
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", o.weight_decay));
        }
        if !(o.gamma > 0.0 && o.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", o.gamma));
        }
        Ok(())
    }
}

/// Post-training settings shared by every run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostTrainRecipe {
    pub schedule: Schedule,
    /// Slopes with `|α − 1| < freeze_threshold` are snapped to 1 and frozen.
    pub freeze_threshold: f64,
    /// Apply weight decay to slopes too (off by default: decay would pull
    /// slopes towards 0, against the regularizer).
    pub decay_slopes: bool,
}

impl Default for PostTrainRecipe {
    fn default() -> Self {
        Self { schedule: Schedule::post_default(), freeze_threshold: 0.01, decay_slopes: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostTrainConfig {
    pub omega: f64,
    pub seed: u64,
    pub recipe: PostTrainRecipe,
}

impl PostTrainConfig {
    pub fn new(omega: f64, seed: u64, recipe: PostTrainRecipe) -> Self {
        Self { omega, seed, recipe }
    }

    pub fn validate(&self) -> Result<(), LinearizeError> {
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(LinearizeError::InvalidConfig(format!("omega must be finite and ≥ 0, got {}", self.omega)));
        }
        let tau = self.recipe.freeze_threshold;
        if !(tau > 0.0 && tau < 1.0) {
            return Err(LinearizeError::InvalidConfig(format!("freeze threshold must lie in (0, 1), got {tau}")));
        }
        if self.recipe.schedule.epochs == 0 {
            return Err(LinearizeError::InvalidConfig("post-training needs at least one epoch".into()));
        }
        self.recipe.schedule.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean task loss over the epoch's batches.
    pub loss: f64,
    /// Unweighted L0.5 value at the end of the epoch.
    pub regularizer: f64,
    pub napl: f64,
    pub frozen: usize,
    pub train_acc: f64,
    pub test_acc: f64,
}

pub type TrainTrace = Vec<EpochStats>;

/// Options of the shared training loop.
#[derive(Debug, Clone)]
pub struct TrainOptions<'a> {
    pub schedule: &'a Schedule,
    pub omega: f64,
    pub freeze_threshold: Option<f64>,
    pub decay_slopes: bool,
    pub seed: u64,
}

/// Unweighted L0.5 value `Σ |1 − α|^½` over non-frozen slopes.
pub fn regularizer_value(net: &Network) -> f64 {
    net.layers
        .iter()
        .filter_map(|l| l.slopes.as_ref())
        .flat_map(|s| s.values.iter().zip(&s.frozen))
        .filter(|(_, &f)| !f)
        .map(|(a, _)| (1.0 - a).abs().sqrt())
        .sum()
}

/// Fraction of the given samples whose arg-max logit matches the label.
pub fn accuracy(net: &Network, data: &Dataset, idx: &[usize]) -> Result<f64, LinearizeError> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk);
        let logits = net.forward(&x)?;
        let k = logits.last_dim();
        for (row, &label) in logits.data().chunks(k).zip(&y) {
            let best = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b])).expect("non-empty row");
            correct += usize::from(best == label);
        }
    }
    Ok(correct as f64 / idx.len() as f64)
}

fn check_data(net: &Network, data: &Dataset) -> Result<(), LinearizeError> {
    if data.train().is_empty() {
        return Err(LinearizeError::EmptyData);
    }
    if data.n_features() != net.input_width() || data.classes() > net.output_width() {
        return Err(LinearizeError::DataMismatch {
            data: data.n_features(),
            data_classes: data.classes(),
            net_in: net.input_width(),
            net_out: net.output_width(),
        });
    }
    Ok(())
}

/// Mini-batch momentum SGD on cross-entropy plus `omega`·L0.5 over all
/// parameters. Slopes frozen at entry or by the freeze pass (run after every
/// step when `freeze_threshold` is set) are excluded from updates.
pub fn train(net: &mut Network, data: &Dataset, opts: &TrainOptions<'_>) -> Result<TrainTrace, LinearizeError> {
    check_data(net, data)?;
    opts.schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut sgd = Sgd::new(opts.schedule.optimizer.clone());
    let mut order = data.train().to_vec();
    let mut trace = Vec::with_capacity(opts.schedule.epochs);

    for epoch in 0..opts.schedule.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for (step, batch) in order.chunks(opts.schedule.batch_size).enumerate() {
            let (x, y) = data.batch(batch);
            let mut g = Graph::new();
            let input = g.constant(x);
            let (logits, nodes) = net.record(&mut g, input, true)?;
            let task = g.cross_entropy(logits, &y).map_err(|e| match e {
                TensorError::NonFinite { value, .. } => LinearizeError::NonFinite { epoch, step, loss: value },
                e => e.into(),
            })?;
            let task_value = g.value(task).item().expect("scalar loss");
            if !task_value.is_finite() {
                return Err(LinearizeError::NonFinite { epoch, step, loss: task_value });
            }
            let mut loss = task;
            if opts.omega > 0.0 {
                let mut reg: Option<NodeId> = None;
                for (layer, n) in net.layers.iter().zip(&nodes) {
                    if let (Some(s), Some(id)) = (&layer.slopes, n.slopes) {
                        let p = g.l05_penalty(id, &s.frozen)?;
                        reg = Some(match reg {
                            Some(r) => g.add(r, p)?,
                            None => p,
                        });
                    }
                }
                if let Some(r) = reg {
                    let weighted = g.scale(r, opts.omega);
                    loss = g.add(task, weighted)?;
                }
            }
            g.backward(loss)?;

            let mut params = Vec::with_capacity(4 * net.layers.len());
            for (layer, n) in net.layers.iter_mut().zip(&nodes) {
                params.push(Param {
                    values: layer.weight.data_mut(),
                    grad: grad_of(&g, n.weight),
                    decay: true,
                    frozen: None,
                });
                if let (Some(b), Some(id)) = (layer.bias.as_mut(), n.bias) {
                    params.push(Param { values: b, grad: grad_of(&g, id), decay: true, frozen: None });
                }
                if let (Some(s), Some(id)) = (layer.slopes.as_mut(), n.slopes) {
                    params.push(Param {
                        values: &mut s.values,
                        grad: grad_of(&g, id),
                        decay: opts.decay_slopes,
                        frozen: Some(&s.frozen),
                    });
                }
                if let (Some(gv), Some(id)) = (layer.gain.as_mut(), n.gain) {
                    params.push(Param { values: gv, grad: grad_of(&g, id), decay: true, frozen: None });
                }
            }
            sgd.step(&mut params, epoch);
            drop(params);
            if let Some(tau) = opts.freeze_threshold {
                net.freeze_near_linear(tau);
            }
            loss_sum += task_value;
            batches += 1;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            regularizer: regularizer_value(net),
            napl: pathmetrics::napl(&pathmetrics::profile_of(net)),
            frozen: net.frozen_count(),
            train_acc: accuracy(net, data, data.train())?,
            test_acc: accuracy(net, data, data.test())?,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} reg {:.4} napl {:.3} frozen {} train {:.4} test {:.4}",
            stats.loss,
            stats.regularizer,
            stats.napl,
            stats.frozen,
            stats.train_acc,
            stats.test_acc
        );
        trace.push(stats);
    }
    Ok(trace)
}

fn grad_of(g: &Graph, id: NodeId) -> &[f64] {
    g.grad(id).map(Tensor::data).expect("trainable leaf received a gradient")
}

/// Snaps every non-frozen slope with `|α − 1| < tau` to 1 and freezes it.
pub fn freeze_pass(net: &Network, tau: f64) -> Network {
    let mut out = net.clone();
    out.freeze_near_linear(tau);
    out
}

/// Regularized fine-tuning of a PReLU network.
pub fn post_train(net: &Network, data: &Dataset, cfg: &PostTrainConfig) -> Result<(Network, TrainTrace), LinearizeError> {
    cfg.validate()?;
    if !net.has_prelu() {
        return Err(LinearizeError::NoPrelu);
    }
    let mut out = net.clone();
    let trace = train(
        &mut out,
        data,
        &TrainOptions {
            schedule: &cfg.recipe.schedule,
            omega: cfg.omega,
            freeze_threshold: Some(cfg.recipe.freeze_threshold),
            decay_slopes: cfg.recipe.decay_slopes,
            seed: cfg.seed,
        },
    )?;
    Ok((out, trace))
}

/// Expands non-linear layer-wise units to channel-wise ones and trains again
/// without the regularizer. The `omega` of `cfg` is ignored.
pub fn post_post_train(
    net: &Network,
    data: &Dataset,
    cfg: &PostTrainConfig,
) -> Result<(Network, TrainTrace), LinearizeError> {
    if !net.spec.layers.iter().any(|l| l.activation == crate::network::Activation::PreluLayer) {
        return Err(LinearizeError::NotLayerwise);
    }
    let expanded = net.replace_nonlinear_layerwise_with_channelwise();
    post_train(&expanded, data, &PostTrainConfig { omega: 0.0, ..cfg.clone() })
}

/// Measurements of one post-trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub granularity: Granularity,
    pub omega: f64,
    pub seed: u64,
    pub napl: f64,
    /// NAPL of the same architecture with every unit nonlinear.
    pub max_napl: f64,
    pub avg_slope: f64,
    pub prop_disabled: f64,
    pub mixed_layers: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub histogram: Histogram,
    /// Path of the saved network, relative to the result directory.
    pub checkpoint: Option<String>,
}

impl SweepRecord {
    pub fn measure(
        net: &Network,
        data: &Dataset,
        granularity: Granularity,
        omega: f64,
        seed: u64,
    ) -> Result<Self, LinearizeError> {
        let profile = pathmetrics::profile_of(net);
        let mut all_on = profile.clone();
        fn saturate(stages: &mut [pathmetrics::Stage]) {
            for s in stages {
                match s {
                    pathmetrics::Stage::Plain { nonlinear_fraction } => *nonlinear_fraction = 1.0,
                    pathmetrics::Stage::Residual { stages } => saturate(stages),
                }
            }
        }
        saturate(&mut all_on.stages);
        Ok(Self {
            granularity,
            omega,
            seed,
            napl: pathmetrics::napl(&profile),
            max_napl: pathmetrics::napl(&all_on),
            avg_slope: pathmetrics::average_slope(net).map_err(|_| LinearizeError::NoPrelu)?,
            prop_disabled: pathmetrics::proportion_disabled(net).map_err(|_| LinearizeError::NoPrelu)?,
            mixed_layers: pathmetrics::mixed_layers(net),
            train_acc: accuracy(net, data, data.train())?,
            test_acc: accuracy(net, data, data.test())?,
            histogram: pathmetrics::path_length_distribution(&profile).to_histogram(),
            checkpoint: None,
        })
    }
}

/// Result of one sweep unit: the record and the post-trained network.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub record: SweepRecord,
    pub network: Network,
    pub trace: TrainTrace,
}

/// A sweep unit that failed; the sweep carries on with the others.
#[derive(Debug)]
pub struct SweepFailure {
    pub omega: f64,
    pub error: LinearizeError,
}

/// Surgery plus post-training for every ω, each from a fresh copy of the base
/// network. Units run on the current rayon pool; the output follows the order
/// of `omegas`.
pub fn omega_sweep(
    base: &Checkpoint,
    omegas: &[f64],
    cfg: &PostTrainConfig,
    granularity: Granularity,
    data: &Dataset,
) -> Vec<Result<SweepRun, SweepFailure>> {
    omegas
        .par_iter()
        .map(|&omega| {
            sweep_unit(base, omega, cfg, granularity, data).map_err(|error| {
                log::warn!("{granularity} ω={omega} seed={}: {error}", cfg.seed);
                SweepFailure { omega, error }
            })
        })
        .collect()
}

fn sweep_unit(
    base: &Checkpoint,
    omega: f64,
    cfg: &PostTrainConfig,
    granularity: Granularity,
    data: &Dataset,
) -> Result<SweepRun, LinearizeError> {
    let net = base.network.relu_to_prelu(granularity)?;
    let cfg = PostTrainConfig { omega, ..cfg.clone() };
    let (network, trace) = post_train(&net, data, &cfg)?;
    let record = SweepRecord::measure(&network, data, granularity, omega, cfg.seed)?;
    Ok(SweepRun { record, network, trace })
}

/// Checkpoint metadata for a post-trained network.
pub fn sweep_meta(record: &SweepRecord, epochs: usize) -> TrainingMeta {
    TrainingMeta {
        epoch: epochs,
        omega: Some(record.omega),
        seed: record.seed,
        granularity: Some(record.granularity),
        train_acc: Some(record.train_acc),
        test_acc: Some(record.test_acc),
    }
}

/// Bisection targets for choosing the ω grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub points: usize,
    /// First ω probed; the search expands geometrically from here.
    pub start: f64,
    /// Bottom of the grid: largest ω found with NAPL ≥ `high_fraction`·max.
    pub high_fraction: f64,
    /// Top of the grid: smallest ω found with NAPL ≤ `low_napl`.
    pub low_napl: f64,
    /// Bisection steps per endpoint, on a log scale.
    pub bisection_steps: usize,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { points: 10, start: 1e-3, high_fraction: 0.9, low_napl: 1.0, bisection_steps: 4 }
    }
}

/// `[bottom, top]` ω bracket for one granularity.
pub fn calibrate_bracket(
    base: &Checkpoint,
    data: &Dataset,
    cfg: &PostTrainConfig,
    granularity: Granularity,
    cal: &Calibration,
) -> Result<(f64, f64), LinearizeError> {
    const EXPAND: f64 = 4.0;
    const MAX_EXPANSIONS: usize = 12;
    let max_napl = pathmetrics::napl(&pathmetrics::profile_of(&base.network));
    // NAPL per probed ω; `None` marks a diverged run, which counts as past
    // both targets.
    let mut cache: Vec<(f64, Option<f64>)> = Vec::new();
    let mut probe = |omega: f64| -> Result<Option<f64>, LinearizeError> {
        if let Some(&(_, n)) = cache.iter().find(|(w, _)| *w == omega) {
            return Ok(n);
        }
        let napl = match sweep_unit(base, omega, cfg, granularity, data) {
            Ok(r) => Some(r.record.napl),
            Err(LinearizeError::NonFinite { .. }) => None,
            Err(e) => return Err(e),
        };
        log::info!("calibrate {granularity}: ω={omega:.3e} napl={napl:?}");
        cache.push((omega, napl));
        Ok(napl)
    };
    let high = |n: Option<f64>| n.is_some_and(|n| n >= cal.high_fraction * max_napl);
    let low = |n: Option<f64>| n.is_none_or(|n| n <= cal.low_napl);

    // Bottom endpoint: bracket [a, b] with high(a) and !high(b).
    let (mut a, mut b) = (cal.start, cal.start);
    let mut k = 0;
    if high(probe(a)?) {
        while high(probe(b)?) && k < MAX_EXPANSIONS {
            a = b;
            b *= EXPAND;
            k += 1;
        }
    } else {
        while !high(probe(a)?) && k < MAX_EXPANSIONS {
            b = a;
            a /= EXPAND;
            k += 1;
        }
    }
    for _ in 0..cal.bisection_steps {
        let m = (a * b).sqrt();
        if high(probe(m)?) {
            a = m;
        } else {
            b = m;
        }
    }
    let bottom = a;

    // Top endpoint: bracket [c, d] with !low(c) and low(d).
    let (mut c, mut d) = (bottom, bottom);
    k = 0;
    while !low(probe(d)?) && k < MAX_EXPANSIONS {
        c = d;
        d *= EXPAND;
        k += 1;
    }
    if c < d {
        for _ in 0..cal.bisection_steps {
            let m = (c * d).sqrt();
            if low(probe(m)?) {
                d = m;
            } else {
                c = m;
            }
        }
    }
    Ok((bottom, d.max(bottom)))
}

/// `points` values spaced evenly in log ω over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect()
        }
    }
}
