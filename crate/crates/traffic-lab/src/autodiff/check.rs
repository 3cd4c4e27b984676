use super::{AdError, AdResult, Graph, NodeId, Tensor};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compare the analytic gradient of a scalar function against central finite
/// differences. Returns the max over coordinates of
/// `|analytic - central| / max(1, |central|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> AdResult<f64>
where
    F: Fn(&Graph, NodeId) -> AdResult<NodeId>,
{
    grad_check_multi(|g, xs| f(g, xs[0]), &[x.clone()], h)
}

/// Multi-input variant of [`grad_check`]; the maximum error is taken over the
/// coordinates of every input.
pub fn grad_check_multi<F>(f: F, xs: &[Tensor], h: f64) -> AdResult<f64>
where
    F: Fn(&Graph, &[NodeId]) -> AdResult<NodeId>,
{
    let eval = |points: &[Tensor]| -> AdResult<f64> {
        let g = Graph::new();
        let ids: Vec<NodeId> = points.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &ids)?;
        let v = g.item(out);
        if !v.is_finite() {
            return Err(AdError::Domain(format!("non-finite function value {v}")));
        }
        Ok(v)
    };

    // Analytic gradients in one pass.
    let g = Graph::new();
    let ids: Vec<NodeId> = xs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &ids)?;
    if !g.all_finite(out) {
        return Err(AdError::Domain("non-finite function value".into()));
    }
    g.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = xs.to_vec();
    for (i, x) in xs.iter().enumerate() {
        let analytic = g.grad(ids[i]);
        for k in 0..x.len() {
            let orig = x.data()[k];
            probe[i].data_mut()[k] = orig + h;
            let fp = eval(&probe)?;
            probe[i].data_mut()[k] = orig - h;
            let fm = eval(&probe)?;
            probe[i].data_mut()[k] = orig;
            let central = (fp - fm) / (2.0 * h);
            let a = analytic.as_ref().map_or(0.0, |t| t.data()[k]);
            let err = (a - central).abs() / central.abs().max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let x = Tensor::row(vec![1.0, 2.0, 3.0]);
        let err = grad_check(|g, x| Ok(g.sum(g.mul(x, x)?)), &x, DEFAULT_STEP).unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn exp_passes() {
        let x = Tensor::row(vec![0.0]);
        let err = grad_check(|g, x| Ok(g.sum(g.exp(x))), &x, DEFAULT_STEP).unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn constant_function_is_exact() {
        let x = Tensor::row(vec![0.3, -0.4]);
        let err = grad_check(
            |g, x| {
                let c = g.constant(Tensor::scalar(5.0));
                let z = g.mul_c(x, 0.0);
                g.add(c, g.sum(z))
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_function_is_domain_error() {
        let x = Tensor::row(vec![0.0]);
        let r = grad_check(
            |g, x| {
                let inf = g.constant(Tensor::scalar(f64::INFINITY));
                g.add(g.sum(x), inf)
            },
            &x,
            DEFAULT_STEP,
        );
        assert!(matches!(r, Err(AdError::Domain(_))));
    }
}
