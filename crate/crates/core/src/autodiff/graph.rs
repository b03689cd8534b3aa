use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::{Tensor, TensorError};

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the slopes of a PReLU are assigned to the channels (last axis) of its input.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitMap {
    /// One slope per channel.
    Channel,
    /// A single slope shared by every channel.
    Layer,
    /// `map[c]` is the slope index for channel `c`.
    Explicit(Vec<usize>),
}

impl UnitMap {
    fn resolve(&self, channels: usize, slopes: usize) -> Result<Vec<usize>, TensorError> {
        match self {
            UnitMap::Channel if slopes == channels => Ok((0..channels).collect()),
            UnitMap::Channel => Err(TensorError::UnitMap(format!(
                "channel granularity needs {channels} slopes, got {slopes}"
            ))),
            UnitMap::Layer if slopes == 1 => Ok(vec![0; channels]),
            UnitMap::Layer => Err(TensorError::UnitMap(format!(
                "layer granularity needs exactly 1 slope, got {slopes}"
            ))),
            UnitMap::Explicit(map) => {
                if map.len() != channels {
                    return Err(TensorError::UnitMap(format!(
                        "map covers {} channels, input has {channels}",
                        map.len()
                    )));
                }
                if let Some((c, &idx)) = map.iter().enumerate().find(|(_, &i)| i >= slopes) {
                    return Err(TensorError::UnitMap(format!(
                        "channel {c} maps to slope {idx}, only {slopes} slopes"
                    )));
                }
                Ok(map.clone())
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    MulChannel(NodeId, NodeId),
    Relu(NodeId),
    Prelu {
        x: NodeId,
        slopes: NodeId,
        map: Vec<usize>,
    },
    Sum(NodeId),
    L05 {
        slopes: NodeId,
        frozen: Vec<bool>,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Lower bound on `|1 − α|` when evaluating the L0.5 gradient.
pub const L05_GUARD: f64 = 1e-4;

/// Tape of primitive operations over dense tensors.
///
/// Nodes are appended in evaluation order, so the tape is always topologically
/// sorted. A graph is meant to be built, differentiated and dropped by a single
/// worker.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient (inputs, fixed data).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a node, if a backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn as_matrix(&self, id: NodeId) -> Result<(usize, usize), TensorError> {
        let s = self.value(id).shape();
        if s.len() != 2 {
            return Err(TensorError::Rank {
                expected: 2,
                shape: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (m, k) = self.as_matrix(a)?;
        let (k2, n) = self.as_matrix(b)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `x[rows × n] + bias[n]`, broadcasting the bias across rows.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let n = self.value(x).last_dim();
        if self.value(bias).len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: self.value(x).shape().to_vec(),
                right: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let mut value = self.value(a).clone();
        for (v, w) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *v += w;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    /// `x[rows × n] * gain[n]`, one multiplicative gain per channel.
    pub fn mul_channel(&mut self, x: NodeId, gain: NodeId) -> Result<NodeId, TensorError> {
        let n = self.value(x).last_dim();
        if self.value(gain).len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "mul_channel",
                left: self.value(x).shape().to_vec(),
                right: self.value(gain).shape().to_vec(),
            });
        }
        let g = self.value(gain).data();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(n) {
            for (v, gv) in row.iter_mut().zip(g) {
                *v *= gv;
            }
        }
        let rg = self.rg(&[x, gain]);
        Ok(self.push(value, Op::MulChannel(x, gain), rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| if v >= 0.0 { v } else { 0.0 });
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// `y = x` for `x ≥ 0`, `y = α·x` otherwise, with `α` chosen per channel by `map`.
    pub fn prelu(&mut self, x: NodeId, slopes: NodeId, map: &UnitMap) -> Result<NodeId, TensorError> {
        let channels = self.value(x).last_dim();
        let map = map.resolve(channels, self.value(slopes).len())?;
        let a = self.value(slopes).data();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(channels) {
            for (v, &idx) in row.iter_mut().zip(&map) {
                if *v < 0.0 {
                    *v *= a[idx];
                }
            }
        }
        let rg = self.rg(&[x, slopes]);
        Ok(self.push(value, Op::Prelu { x, slopes, map }, rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// `Σ |1 − αᵢ|^0.5` over slopes whose `frozen` flag is false.
    pub fn l05_penalty(&mut self, slopes: NodeId, frozen: &[bool]) -> Result<NodeId, TensorError> {
        let a = self.value(slopes).data();
        if a.len() != frozen.len() {
            return Err(TensorError::ShapeMismatch {
                op: "l05_penalty",
                left: vec![a.len()],
                right: vec![frozen.len()],
            });
        }
        let total: f64 = a
            .iter()
            .zip(frozen)
            .filter(|(_, &f)| !f)
            .map(|(&v, _)| (1.0 - v).abs().sqrt())
            .sum();
        let rg = self.rg(&[slopes]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::L05 {
                slopes,
                frozen: frozen.to_vec(),
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy of `logits[batch × classes]` against class indices.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, TensorError> {
        let (batch, classes) = self.as_matrix(logits)?;
        if labels.len() != batch {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: vec![batch, classes],
                right: vec![labels.len()],
            });
        }
        let z = self.value(logits).data();
        if let Some(pos) = z.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                op: "cross_entropy",
                index: pos,
                value: z[pos],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::LabelOutOfRange { label: bad, classes });
        }
        let mut probs = vec![0.0; batch * classes];
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &z[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - max).exp() / denom;
            }
            total += log_denom - (row[label] - max);
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / batch as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar node. Gradients add onto any left by
    /// earlier calls; use [`Graph::zero_grad`] to reset.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(i, &g, &mut adj);
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => {
                    for (a, v) in acc.data_mut().iter_mut().zip(&g) {
                        *a += v;
                    }
                }
                None => {
                    node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |id: NodeId| nodes[id.0].requires_grad;
        let len = |id: NodeId| nodes[id.0].value.len();

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.last_dim());
                let n = nodes[b.0].value.last_dim();
                if wants(*a) {
                    let ga = slot(adj, len(*a), *a);
                    gemm_nt_acc(g, nodes[b.0].value.data(), ga, m, n, k);
                }
                if wants(*b) {
                    let gb = slot(adj, len(*b), *b);
                    gemm_tn_acc(nodes[a.0].value.data(), g, gb, m, k, n);
                }
            }
            Op::AddRow(x, bias) => {
                if wants(*x) {
                    add_into(slot(adj, len(*x), *x), g);
                }
                if wants(*bias) {
                    let gb = slot(adj, len(*bias), *bias);
                    let n = gb.len();
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    add_into(slot(adj, len(*a), *a), g);
                }
                if wants(*b) {
                    add_into(slot(adj, len(*b), *b), g);
                }
            }
            Op::Scale(x, f) => {
                if wants(*x) {
                    for (o, v) in slot(adj, len(*x), *x).iter_mut().zip(g) {
                        *o += f * v;
                    }
                }
            }
            Op::MulChannel(x, gain) => {
                let xv = nodes[x.0].value.data();
                let gv = nodes[gain.0].value.data();
                let n = gv.len();
                if wants(*x) {
                    let gx = slot(adj, len(*x), *x);
                    for (r, row) in g.chunks(n).enumerate() {
                        for c in 0..n {
                            gx[r * n + c] += row[c] * gv[c];
                        }
                    }
                }
                if wants(*gain) {
                    let gg = slot(adj, len(*gain), *gain);
                    for (r, row) in g.chunks(n).enumerate() {
                        for c in 0..n {
                            gg[c] += row[c] * xv[r * n + c];
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let xv = nodes[x.0].value.data();
                    for ((o, v), &xi) in slot(adj, len(*x), *x).iter_mut().zip(g).zip(xv) {
                        if xi >= 0.0 {
                            *o += v;
                        }
                    }
                }
            }
            Op::Prelu { x, slopes, map } => {
                let xv = nodes[x.0].value.data();
                let a = nodes[slopes.0].value.data();
                let n = map.len();
                if wants(*x) {
                    let gx = slot(adj, len(*x), *x);
                    for (j, (&xi, &gi)) in xv.iter().zip(g).enumerate() {
                        gx[j] += if xi >= 0.0 { gi } else { a[map[j % n]] * gi };
                    }
                }
                if wants(*slopes) {
                    let ga = slot(adj, len(*slopes), *slopes);
                    for (j, (&xi, &gi)) in xv.iter().zip(g).enumerate() {
                        if xi < 0.0 {
                            ga[map[j % n]] += xi * gi;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    for o in slot(adj, len(*x), *x).iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::L05 { slopes, frozen } => {
                if wants(*slopes) {
                    let a = nodes[slopes.0].value.data();
                    let ga = slot(adj, len(*slopes), *slopes);
                    for ((o, &ai), &f) in ga.iter_mut().zip(a).zip(frozen) {
                        if !f {
                            *o += g[0] * l05_slope_grad(ai);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if wants(*logits) {
                    let batch = labels.len();
                    let classes = probs.len() / batch;
                    let scale = g[0] / batch as f64;
                    let gz = slot(adj, len(*logits), *logits);
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            gz[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                    }
                }
            }
        }
    }
}

/// Derivative of `|1 − α|^0.5` with respect to `α`, with `|1 − α|` clamped
/// from below by [`L05_GUARD`]. Zero at exactly `α = 1`.
pub fn l05_slope_grad(alpha: f64) -> f64 {
    let d = 1.0 - alpha;
    if d == 0.0 {
        return 0.0;
    }
    -d.signum() * 0.5 / d.abs().max(L05_GUARD).sqrt()
}

fn slot(adj: &mut [Option<Vec<f64>>], len: usize, id: NodeId) -> &mut Vec<f64> {
    adj[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::identity(2));
        let b = g.constant(m(2, 2, &[1., 2., 3., 4.]));
        let y = g.matmul(i, b).unwrap();
        assert_eq!(g.value(y).data(), &[1., 2., 3., 4.]);

        let r = g.constant(m(1, 2, &[1., 2.]));
        let c = g.constant(m(2, 1, &[3., 4.]));
        let d = g.matmul(r, c).unwrap();
        assert_eq!(g.value(d).data(), &[11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::ShapeMismatch { op: "matmul", .. }));
    }

    #[test]
    fn prelu_forward_and_slope_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![-2.0]).unwrap());
        let a = g.param(Tensor::vector(vec![0.5]).unwrap());
        let y = g.prelu(x, a, &UnitMap::Channel).unwrap();
        assert_eq!(g.value(y).data(), &[-1.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[-2.0]);
        assert_eq!(g.grad(x).unwrap().data(), &[0.5]);

        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![3.0]).unwrap());
        for alpha in [-3.0, 0.0, 0.7, 12.0] {
            let a = g.constant(Tensor::vector(vec![alpha]).unwrap());
            let y = g.prelu(x, a, &UnitMap::Layer).unwrap();
            assert_eq!(g.value(y).data(), &[3.0]);
        }
    }

    #[test]
    fn prelu_kink_uses_positive_branch() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let a = g.param(Tensor::vector(vec![0.3]).unwrap());
        let y = g.prelu(x, a, &UnitMap::Layer).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.grad(a).unwrap().data(), &[0.0]);
    }

    #[test]
    fn prelu_rejects_bad_unit_map() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let a = g.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
        assert!(matches!(
            g.prelu(x, a, &UnitMap::Explicit(vec![0, 1, 2])),
            Err(TensorError::UnitMap(_))
        ));
        assert!(g.prelu(x, a, &UnitMap::Channel).is_err());
        assert!(g.prelu(x, a, &UnitMap::Layer).is_err());
        assert!(g.prelu(x, a, &UnitMap::Explicit(vec![0, 1, 1])).is_ok());
    }

    #[test]
    fn l05_values() {
        let cases: [(&[f64], f64); 3] = [(&[1.0, 1.0], 0.0), (&[0.75], 0.5), (&[0.0, 0.75], 1.5)];
        for (slopes, expected) in cases {
            let mut g = Graph::new();
            let a = g.param(Tensor::vector(slopes.to_vec()).unwrap());
            let p = g.l05_penalty(a, &vec![false; slopes.len()]).unwrap();
            assert!((g.value(p).item().unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn l05_frozen_units_contribute_nothing() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let p = g.l05_penalty(a, &[true, false]).unwrap();
        assert_eq!(g.value(p).item(), Some(1.0));
        g.backward(p).unwrap();
        let grad = g.grad(a).unwrap().data();
        assert_eq!(grad[0], 0.0);
        assert_eq!(grad[1], -0.5);
        assert!(g.l05_penalty(a, &[true]).is_err());
    }

    #[test]
    fn l05_gradient_is_clamped_near_one() {
        assert_eq!(l05_slope_grad(1.0), 0.0);
        let near = l05_slope_grad(1.0 - 1e-9);
        assert!((near + 0.5 / L05_GUARD.sqrt()).abs() < 1e-9);
        assert!(l05_slope_grad(1.0 + 1e-9) > 0.0);
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        for classes in 2..=10 {
            let mut g = Graph::new();
            let z = g.constant(Tensor::filled(&[3, classes], 0.7));
            let l = g.cross_entropy(z, &[0, 1, classes - 1]).unwrap();
            let v = g.value(l).item().unwrap();
            assert!((v - (classes as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_decreases_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let mut g = Graph::new();
            let z = g.constant(m(1, 3, &[margin, 0.0, 0.0]));
            let l = g.cross_entropy(z, &[0]).unwrap();
            let v = g.value(l).item().unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn cross_entropy_rejects_non_finite_and_bad_labels() {
        let mut g = Graph::new();
        let z = g.constant(m(1, 2, &[f64::NAN, 0.0]));
        assert!(matches!(g.cross_entropy(z, &[0]), Err(TensorError::NonFinite { .. })));
        let z = g.constant(m(1, 2, &[0.0, 0.0]));
        assert!(matches!(
            g.cross_entropy(z, &[2]),
            Err(TensorError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn backward_sum_gives_ones_and_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2, 3]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0; 6]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn shared_parameter_gradients_sum() {
        // loss = sum(x·w) + sum(3·w) with w used twice.
        let mut g = Graph::new();
        let x = g.constant(m(1, 2, &[2.0, 5.0]));
        let w = g.param(m(2, 1, &[1.0, 1.0]));
        let xw = g.matmul(x, w).unwrap();
        let a = g.sum(xw);
        let w3 = g.scale(w, 3.0);
        let b = g.sum(w3);
        let l = g.add(a, b).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[5.0, 8.0]);
    }

    #[test]
    fn constants_receive_no_propagation() {
        let mut g = Graph::new();
        let x = g.constant(m(1, 2, &[1.0, 2.0]));
        let y = g.scale(x, 2.0);
        let s = g.sum(y);
        g.backward(s).unwrap();
        // Only the seed and nodes that require grad are traversed.
        assert!(g.grad(x).is_none());
    }
}
