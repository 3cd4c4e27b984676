//! The multi-agent policy: rigid-motion-invariant features, a map-aware
//! graph-network encoder, message passing over an agent interaction graph and
//! interchangeable decoder heads.

mod checkpoint;
mod features;
mod net;
mod params;

pub use checkpoint::{config_hash, Checkpoint, CheckpointError, CheckpointMeta};
pub use features::{
    build_graph, edge_features, node_features, polyline_const_features, AgentContext, EdgeRef,
    EDGE_FEATURES, NODE_FEATURES, POINT_FEATURES,
};
pub use net::{lift_context, BoundPolicy, HeadOutput};
pub use params::{init_linear, BoundParams, ParamSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Decoder head kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Deterministic,
    Gaussian,
    Gmm,
    Discriminator,
}

/// Network sizes and graph connectivity. Paper-silent values surfaced as
/// explicit configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Embedding width d.
    pub embed_dim: usize,
    /// Attention heads H.
    pub heads: usize,
    /// Message-passing layers K.
    pub mp_layers: usize,
    /// Mixture components C (GMM head only).
    pub gmm_components: usize,
    /// Agent graph connectivity radius in meters.
    pub radius: f64,
    /// Lower bound added to decoded standard deviations.
    pub sigma_min: f64,
    /// Constant gain on decoded action means, so unit-scale network outputs
    /// cover the meter-scale action range.
    pub action_gain: f64,
    pub head: HeadKind,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            embed_dim: 64,
            heads: 4,
            mp_layers: 2,
            gmm_components: 4,
            radius: 75.0,
            sigma_min: 1e-3,
            action_gain: 10.0,
            head: HeadKind::Deterministic,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(PolicyError::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.head == HeadKind::Gmm && self.gmm_components == 0 {
            return Err(PolicyError::Config("gmm_components must be >= 1".into()));
        }
        if self.radius <= 0.0 {
            return Err(PolicyError::Config("radius must be positive".into()));
        }
        Ok(())
    }

    pub fn head_out_dim(&self) -> usize {
        match self.head {
            HeadKind::Deterministic => 2,
            HeadKind::Gaussian => 4,
            HeadKind::Gmm => self.gmm_components * 5,
            HeadKind::Discriminator => 1,
        }
    }
}

/// A policy (or discriminator) network: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub cfg: PolicyConfig,
    pub params: ParamSet,
}

impl PolicyNet {
    /// Initialize all parameters with uniform fan-in scaling, deterministic in
    /// `seed`.
    pub fn init(cfg: PolicyConfig, seed: u64) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.embed_dim;
        let mut p = ParamSet::new();

        init_linear(&mut p, &mut rng, "node_mlp.0", NODE_FEATURES, d);
        init_linear(&mut p, &mut rng, "node_mlp.1", d, d);
        init_linear(&mut p, &mut rng, "pointnet.0", POINT_FEATURES, d);
        init_linear(&mut p, &mut rng, "pointnet.1", d, d);
        init_linear(&mut p, &mut rng, "pointnet.2", d, d);
        for proj in ["q", "k", "v", "o"] {
            init_linear(&mut p, &mut rng, &format!("map_attn.{proj}"), d, d);
        }
        for layer in 0..cfg.mp_layers {
            let e_in = if layer == 0 { EDGE_FEATURES } else { d };
            init_linear(&mut p, &mut rng, &format!("mp.{layer}.edge.0"), 2 * d + e_in, d);
            init_linear(&mut p, &mut rng, &format!("mp.{layer}.edge.1"), d, d);
            for proj in ["q", "k", "v", "o"] {
                init_linear(&mut p, &mut rng, &format!("mp.{layer}.attn.{proj}"), d, d);
            }
        }
        init_linear(&mut p, &mut rng, "head.0", d, d);
        init_linear(&mut p, &mut rng, "head.1", d, cfg.head_out_dim());

        Ok(PolicyNet { cfg, params: p })
    }

    /// Insert the parameters onto a graph, ready for forward passes.
    pub fn bind<'g>(&self, g: &'g crate::autodiff::Graph) -> BoundPolicy<'g> {
        BoundPolicy::new(self.cfg, self.params.bind(g))
    }
}
