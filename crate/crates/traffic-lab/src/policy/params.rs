//! Named parameter collections and their binding onto graphs.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, Tensor};

/// An ordered, name-addressed set of tensors. Order is insertion order and is
/// part of the determinism contract (initialization draws follow it).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.tensors[self.index[name]]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same names and shapes, all zeros (optimizer moment buffers).
    pub fn zeros_like(&self) -> Self {
        let mut out = ParamSet::new();
        for (name, t) in self.iter() {
            out.insert(name, Tensor::zeros(t.rows(), t.cols()));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Insert every tensor as a differentiable leaf on `g`.
    pub fn bind<'g>(&self, g: &'g Graph) -> BoundParams<'g> {
        let mut ids = HashMap::with_capacity(self.names.len());
        for (name, t) in self.iter() {
            ids.insert(name.to_string(), g.leaf(t.clone()));
        }
        BoundParams { graph: g, ids }
    }
}

/// Graph-resident parameter leaves, addressed by name.
pub struct BoundParams<'g> {
    pub graph: &'g Graph,
    ids: HashMap<String, NodeId>,
}

impl BoundParams<'_> {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    /// Collect gradients (after a backward pass) into a [`ParamSet`] aligned
    /// with `shape_of`; missing gradients are zero.
    pub fn gradients(&self, shape_of: &ParamSet) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, t) in shape_of.iter() {
            let g = self
                .graph
                .grad(self.id(name))
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()));
            out.insert(name, g);
        }
        out
    }
}

/// Uniform fan-in initialization: `U(-1/sqrt(fan_in), +1/sqrt(fan_in))`.
pub fn init_linear(params: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    params.insert(&format!("{name}.w"), Tensor::new(fan_in, fan_out, w).expect("shape"));
    params.insert(&format!("{name}.b"), Tensor::zeros(1, fan_out));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn bind_and_gradients_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamSet::new();
        init_linear(&mut p, &mut rng, "lin", 3, 2);
        let g = Graph::new();
        let bound = p.bind(&g);
        let x = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let y = g.matmul(x, bound.id("lin.w")).unwrap();
        let y = g.add(y, bound.id("lin.b")).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        let grads = bound.gradients(&p);
        assert_eq!(grads.get("lin.w").shape(), [3, 2]);
        // d(sum(xW + b))/db = ones.
        assert_eq!(grads.get("lin.b").data(), &[1.0, 1.0]);
    }

    #[test]
    fn deterministic_initialization() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut p = ParamSet::new();
            init_linear(&mut p, &mut rng, "a", 4, 4);
            init_linear(&mut p, &mut rng, "b", 4, 2);
            p
        };
        assert_eq!(build(), build());
    }
}
