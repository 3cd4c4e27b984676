use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{Graph, NodeId, Tensor};

/// Scalar arithmetic that runs either on plain `f64` or on a [`Graph`].
///
/// Geometry and loss formulas are written once against this trait; the `f64`
/// implementation serves metrics and data preparation, the [`Var`]
/// implementation records the same computation for differentiation.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Forward value (used for branch decisions, which are not differentiated).
    fn val(self) -> f64;
    /// A constant in the same computational context as `self`.
    fn lift(self, c: f64) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    /// Saturating clamp with zero gradient at and beyond the boundaries.
    fn clamp(self, lo: f64, hi: f64) -> Self;
    /// Max with first-argument tie-breaking.
    fn max(self, o: Self) -> Self;
    /// Min with first-argument tie-breaking.
    fn min(self, o: Self) -> Self;
    fn relu(self) -> Self;

    fn hypot(self, o: Self) -> Self {
        (self * self + o * o).sqrt()
    }
}

impl Real for f64 {
    fn val(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        f64::clamp(self, lo, hi)
    }
    fn max(self, o: Self) -> Self {
        if self >= o {
            self
        } else {
            o
        }
    }
    fn min(self, o: Self) -> Self {
        if self <= o {
            self
        } else {
            o
        }
    }
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
}

/// A scalar (1x1) node handle with operator sugar.
///
/// Scalar graph ops cannot fail on shapes, so the operators panic only on
/// domain violations (e.g. sqrt of a negative), which the callers rule out.
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl<'g> Var<'g> {
    pub fn id(self) -> NodeId {
        self.id
    }

    pub fn graph(self) -> &'g Graph {
        self.graph
    }
}

impl Graph {
    /// A scalar constant as a [`Var`].
    pub fn var(&self, v: f64) -> Var<'_> {
        Var { graph: self, id: self.constant(Tensor::scalar(v)) }
    }

    /// A differentiable scalar leaf as a [`Var`].
    pub fn var_leaf(&self, v: f64) -> Var<'_> {
        Var { graph: self, id: self.leaf(Tensor::scalar(v)) }
    }

    /// Wrap an existing 1x1 node.
    pub fn as_var(&self, id: NodeId) -> Var<'_> {
        debug_assert_eq!(self.shape(id)[0] * self.shape(id)[1], 1);
        Var { graph: self, id }
    }
}

impl<'g> Add for Var<'g> {
    type Output = Var<'g>;
    fn add(self, o: Self) -> Self {
        Var { graph: self.graph, id: self.graph.add(self.id, o.id).expect("scalar add") }
    }
}

impl<'g> Sub for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, o: Self) -> Self {
        Var { graph: self.graph, id: self.graph.sub(self.id, o.id).expect("scalar sub") }
    }
}

impl<'g> Mul for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, o: Self) -> Self {
        Var { graph: self.graph, id: self.graph.mul(self.id, o.id).expect("scalar mul") }
    }
}

impl<'g> Div for Var<'g> {
    type Output = Var<'g>;
    fn div(self, o: Self) -> Self {
        Var { graph: self.graph, id: self.graph.div(self.id, o.id).expect("scalar div") }
    }
}

impl<'g> Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Self {
        Var { graph: self.graph, id: self.graph.neg(self.id) }
    }
}

impl<'g> Real for Var<'g> {
    fn val(self) -> f64 {
        self.graph.item(self.id)
    }
    fn lift(self, c: f64) -> Self {
        self.graph.var(c)
    }
    fn sqrt(self) -> Self {
        Var { graph: self.graph, id: self.graph.sqrt(self.id).expect("sqrt of negative") }
    }
    fn sin(self) -> Self {
        Var { graph: self.graph, id: self.graph.sin(self.id) }
    }
    fn cos(self) -> Self {
        Var { graph: self.graph, id: self.graph.cos(self.id) }
    }
    fn atan2(self, x: Self) -> Self {
        Var { graph: self.graph, id: self.graph.atan2(self.id, x.id).expect("scalar atan2") }
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        Var { graph: self.graph, id: self.graph.clamp(self.id, lo, hi) }
    }
    fn max(self, o: Self) -> Self {
        Var { graph: self.graph, id: self.graph.max_pair(self.id, o.id).expect("scalar max") }
    }
    fn min(self, o: Self) -> Self {
        Var { graph: self.graph, id: self.graph.min_pair(self.id, o.id).expect("scalar min") }
    }
    fn relu(self) -> Self {
        Var { graph: self.graph, id: self.graph.relu(self.id) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly<R: Real>(x: R, y: R) -> R {
        let two = x.lift(2.0);
        (x * x + two * y).sqrt().sin() + x.atan2(y).clamp(-0.5, 0.5)
    }

    #[test]
    fn var_matches_f64_forward() {
        let g = Graph::new();
        let (x, y) = (0.8, 1.7);
        let expect = poly(x, y);
        let got = poly(g.var_leaf(x), g.var_leaf(y)).val();
        assert!((expect - got).abs() < 1e-15);
    }

    #[test]
    fn var_gradient_matches_finite_difference() {
        let g = Graph::new();
        let x = g.var_leaf(0.8);
        let y = g.var_leaf(1.7);
        let out = poly(x, y);
        g.backward(out.id()).unwrap();
        let gx = g.grad(x.id()).unwrap().item();
        let h = 1e-6;
        let fd = (poly(0.8 + h, 1.7) - poly(0.8 - h, 1.7)) / (2.0 * h);
        assert!((gx - fd).abs() < 1e-6, "analytic {gx} vs fd {fd}");
    }
}
