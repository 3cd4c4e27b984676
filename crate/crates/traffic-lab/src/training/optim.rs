//! Adam and the step learning-rate schedule.

use crate::policy::ParamSet;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name);
        let m = state.m.get_mut(name);
        for (mv, gv) in m.data_mut().iter_mut().zip(g.data()) {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
        }
        let v = state.v.get_mut(name);
        for (vv, gv) in v.data_mut().iter_mut().zip(g.data()) {
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
        }
        let m = state.m.get(name);
        let v = state.v.get(name);
        for ((pv, mv), vv) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let m_hat = mv / bc1;
            let v_hat = vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// `lr0 * gamma^(epoch / n_step)` with integer division.
pub fn steplr(epoch: usize, lr0: f64, gamma: f64, n_step: usize) -> f64 {
    lr0 * gamma.powi((epoch / n_step.max(1)) as i32)
}

/// Scale gradients down to a global L2 norm of `max_norm` when they exceed it.
pub fn clip_global_norm(grads: &mut ParamSet, max_norm: f64) -> f64 {
    let norm2: f64 = grads
        .iter()
        .map(|(_, t)| t.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = norm2.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, t) in grads.iter_mut() {
            for v in t.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn single_param(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = single_param(1.5);
        let g = single_param(0.0);
        let mut st = AdamState::new(&p);
        // Seed nonzero moments, then step with zero grad: moments decay,
        // parameter only moves by the (here zero) m_hat update.
        st.m.get_mut("x").data_mut()[0] = 0.5;
        let m_before = 0.5;
        adam_step(&mut p, &g, &mut st, 0.1);
        let m_after = st.m.get("x").data()[0];
        assert!((m_after - ADAM_BETA1 * m_before).abs() < 1e-15);
        // v stays zero, so the update is m_hat / eps scaled; with a fresh
        // optimizer and zero grads params must not move at all.
        let mut p2 = single_param(1.5);
        let mut st2 = AdamState::new(&p2);
        adam_step(&mut p2, &g, &mut st2, 0.1);
        assert_eq!(p2.get("x").data()[0], 1.5);
    }

    #[test]
    fn first_step_is_signed_lr() {
        for g0 in [3.0, -0.02] {
            let mut p = single_param(0.0);
            let g = single_param(g0);
            let mut st = AdamState::new(&p);
            adam_step(&mut p, &g, &mut st, 0.01);
            let expect = -0.01 * g0.signum() * (g0.abs() / (g0.abs() + ADAM_EPS));
            assert!((p.get("x").data()[0] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = (x - 3)^2, grad = 2(x - 3).
        let mut p = single_param(-4.0);
        let mut st = AdamState::new(&p);
        for _ in 0..500 {
            let x = p.get("x").data()[0];
            let g = single_param(2.0 * (x - 3.0));
            adam_step(&mut p, &g, &mut st, 0.05);
        }
        let x = p.get("x").data()[0];
        assert!((x - 3.0).abs() < 1e-3, "x = {x}");
    }

    #[test]
    fn steplr_schedule() {
        assert_eq!(steplr(0, 0.001, 0.95, 2), 0.001);
        let lr = steplr(4, 0.001, 0.95, 2);
        assert!((lr - 0.0009025).abs() < 1e-12);
        assert_eq!(steplr(17, 0.02, 1.0, 3), 0.02);
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut g = single_param(3.0);
        let norm = clip_global_norm(&mut g, 10.0);
        assert_eq!(norm, 3.0);
        assert_eq!(g.get("x").data()[0], 3.0);
        let mut g = single_param(30.0);
        clip_global_norm(&mut g, 10.0);
        assert!((g.get("x").data()[0] - 10.0).abs() < 1e-12);
    }
}
