use super::{Graph, NodeId, Tensor, TensorError};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the reverse-mode gradient of a scalar function of `param` against
/// central differences with the given `step`.
///
/// `build` records the function on a fresh graph, receiving the parameter's
/// node, and returns the scalar loss node. Any other inputs are captured by the
/// closure. The per-element error is
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(build: F, param: &Tensor, step: f64) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, TensorError>,
{
    let eval = |p: &Tensor| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let id = g.param(p.clone());
        let loss = build(&mut g, id)?;
        g.value(loss).item().ok_or_else(|| TensorError::NonScalarLoss {
            shape: g.value(loss).shape().to_vec(),
        })
    };

    let mut g = Graph::new();
    let id = g.param(param.clone());
    let loss = build(&mut g, id)?;
    g.backward(loss)?;
    let analytic = g
        .grad(id)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; param.len()]);

    let mut numeric = Vec::with_capacity(param.len());
    let mut probe = param.clone();
    for i in 0..param.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((plus - minus) / (2.0 * step));
    }

    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });

    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_graph_is_exact_to_rounding() {
        let w = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0]).unwrap();
        let check = grad_check(
            |g, w| {
                let x = g.constant(x.clone());
                let y = g.matmul(x, w)?;
                let y = g.scale(y, 1.5);
                Ok(g.sum(y))
            },
            &w,
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-9, "{check:?}");
    }

    #[test]
    fn l05_away_from_singularity() {
        let a = Tensor::vector(vec![0.5, 0.2, 1.7]).unwrap();
        let check = grad_check(|g, a| g.l05_penalty(a, &[false, false, false]), &a, 1e-5).unwrap();
        assert!(check.max_rel_error < 1e-4, "{check:?}");
    }
}
