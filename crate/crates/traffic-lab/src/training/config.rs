//! Training methods, their published default hyperparameters, and the TOML
//! configuration surface.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::losses::LossWeights;
use crate::policy::{HeadKind, PolicyConfig};

use super::TrainError;

/// Every trainable method row: open-loop behavioral cloning, closed-loop
/// trajectory matching, the adversarial pair, and their combinations with the
/// collision penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BcGaussLl,
    BcGmmLl,
    BcWmseOrient,
    DsMse,
    DsWmse,
    DsWmseCol,
    MgailBcGauss,
    MgailBcGmm,
    MgailDsGauss,
    MgailDsGmm,
    MgailDsColGauss,
    MgailDsColGmm,
}

pub const ALL_METHODS: [Method; 12] = [
    Method::BcGaussLl,
    Method::BcGmmLl,
    Method::BcWmseOrient,
    Method::DsMse,
    Method::DsWmse,
    Method::DsWmseCol,
    Method::MgailBcGauss,
    Method::MgailBcGmm,
    Method::MgailDsGauss,
    Method::MgailDsGmm,
    Method::MgailDsColGauss,
    Method::MgailDsColGmm,
];

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::BcGaussLl => "bc_gauss_ll",
            Method::BcGmmLl => "bc_gmm_ll",
            Method::BcWmseOrient => "bc_wmse_orient",
            Method::DsMse => "ds_mse",
            Method::DsWmse => "ds_wmse",
            Method::DsWmseCol => "ds_wmse_col",
            Method::MgailBcGauss => "mgail_bc_gauss",
            Method::MgailBcGmm => "mgail_bc_gmm",
            Method::MgailDsGauss => "mgail_ds_gauss",
            Method::MgailDsGmm => "mgail_ds_gmm",
            Method::MgailDsColGauss => "mgail_ds_col_gauss",
            Method::MgailDsColGmm => "mgail_ds_col_gmm",
        }
    }

    pub fn parse(s: &str) -> Result<Self, TrainError> {
        ALL_METHODS
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| TrainError::Config(format!("unknown method {s:?}")))
    }

    pub fn head(self) -> HeadKind {
        match self {
            Method::BcWmseOrient | Method::DsMse | Method::DsWmse | Method::DsWmseCol => {
                HeadKind::Deterministic
            }
            Method::BcGaussLl
            | Method::MgailBcGauss
            | Method::MgailDsGauss
            | Method::MgailDsColGauss => HeadKind::Gaussian,
            Method::BcGmmLl | Method::MgailBcGmm | Method::MgailDsGmm | Method::MgailDsColGmm => {
                HeadKind::Gmm
            }
        }
    }

    pub fn is_bc(self) -> bool {
        matches!(self, Method::BcGaussLl | Method::BcGmmLl | Method::BcWmseOrient)
    }

    pub fn is_mgail(self) -> bool {
        matches!(
            self,
            Method::MgailBcGauss
                | Method::MgailBcGmm
                | Method::MgailDsGauss
                | Method::MgailDsGmm
                | Method::MgailDsColGauss
                | Method::MgailDsColGmm
        )
    }

    pub fn is_ds(self) -> bool {
        matches!(self, Method::DsMse | Method::DsWmse | Method::DsWmseCol)
    }

    pub fn uses_collision(self) -> bool {
        matches!(self, Method::DsWmseCol | Method::MgailDsColGauss | Method::MgailDsColGmm)
    }

    /// MGAIL generators whose imitation term is the closed-loop trajectory
    /// loss rather than open-loop likelihood.
    pub fn mgail_uses_ds(self) -> bool {
        matches!(
            self,
            Method::MgailDsGauss | Method::MgailDsGmm | Method::MgailDsColGauss | Method::MgailDsColGmm
        )
    }

    /// The model whose weights initialize this method's training, if any:
    /// closed-loop deterministic methods start from the weighted-MSE cloner,
    /// adversarial methods from the likelihood cloner with the same head.
    pub fn pretrain_method(self) -> Option<Method> {
        match self {
            Method::DsMse | Method::DsWmse | Method::DsWmseCol => Some(Method::BcWmseOrient),
            Method::MgailBcGauss | Method::MgailDsGauss | Method::MgailDsColGauss => {
                Some(Method::BcGaussLl)
            }
            Method::MgailBcGmm | Method::MgailDsGmm | Method::MgailDsColGmm => {
                Some(Method::BcGmmLl)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    AllAgents,
    SingleAgent,
}

impl ControlMode {
    pub fn name(self) -> &'static str {
        match self {
            ControlMode::AllAgents => "all_agents",
            ControlMode::SingleAgent => "single_agent",
        }
    }
}

/// Learning rate with a step decay schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr: f64,
    pub gamma: f64,
    pub n_step: usize,
}

impl LrSchedule {
    pub fn at(self, epoch: usize) -> f64 {
        super::steplr(epoch, self.lr, self.gamma, self.n_step)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub control: ControlMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub generator: LrSchedule,
    pub discriminator: Option<LrSchedule>,
    pub weights: LossWeights,
    pub policy: PolicyConfig,
    /// Checkpoint to initialize from; when absent and the method requires a
    /// pretrained model, one is trained automatically.
    pub pretrain_checkpoint: Option<PathBuf>,
    /// Epochs for the automatic pretraining run (defaults to `epochs`).
    pub pretrain_epochs: Option<usize>,
    /// Global gradient-norm clip (adversarial methods only).
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if !(self.generator.lr > 0.0) {
            return Err(TrainError::Config("generator lr must be positive".into()));
        }
        if self.method.is_mgail() && self.discriminator.is_none() {
            return Err(TrainError::Config(
                "adversarial methods need a discriminator learning rate".into(),
            ));
        }
        if self.policy.head != self.method.head() {
            return Err(TrainError::Config(format!(
                "method {} requires head {:?}",
                self.method.name(),
                self.method.head()
            )));
        }
        self.policy.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }

    /// Canonical TOML used for hashing into checkpoints.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// The per-method default hyperparameters. Where the source material names a
/// value it is used verbatim; the plain closed-loop learning rates reuse the
/// collision variant's setting.
pub fn default_hyperparameters(method: Method) -> TrainConfig {
    let sched = |lr: f64, gamma: f64, n_step: usize| LrSchedule { lr, gamma, n_step };
    let base_wmse =
        LossWeights { alpha_x: 0.10472, alpha_y: 65.177, ..LossWeights::default() };

    let (generator, discriminator, weights) = match method {
        Method::BcGaussLl => (sched(0.001, 0.95, 2), None, base_wmse),
        Method::BcGmmLl => (sched(0.001, 0.99, 2), None, base_wmse),
        Method::BcWmseOrient => (
            sched(0.0005, 0.99, 1),
            None,
            LossWeights { beta_orient: 6209.8, ..base_wmse },
        ),
        Method::DsMse => (
            sched(2.5e-5, 0.99, 2),
            None,
            LossWeights { alpha_x: 1.0, alpha_y: 1.0, ..LossWeights::default() },
        ),
        Method::DsWmse => (sched(2.5e-5, 0.99, 2), None, base_wmse),
        Method::DsWmseCol => (
            sched(2.5e-5, 0.99, 2),
            None,
            LossWeights { alpha_x: 0.1, alpha_y: 2.8, beta_col: 4.0, ..LossWeights::default() },
        ),
        Method::MgailBcGauss => (
            sched(2e-5, 0.99, 2),
            Some(sched(2e-5, 0.99, 2)),
            LossWeights { alpha_adv: 50.0, beta_imit: 1.0, ..base_wmse },
        ),
        Method::MgailBcGmm => (
            sched(5e-5, 0.5, 20),
            Some(sched(1e-4, 0.5, 20)),
            LossWeights { alpha_adv: 50.0, beta_imit: 1.0, ..base_wmse },
        ),
        Method::MgailDsGauss => (
            sched(5e-5, 0.5, 40),
            Some(sched(1e-4, 0.5, 40)),
            LossWeights { alpha_adv: 1.0, beta_imit: 1.0, ..base_wmse },
        ),
        Method::MgailDsGmm => (
            sched(1e-4, 0.5, 20),
            Some(sched(2e-4, 0.5, 20)),
            LossWeights { alpha_adv: 1.0, beta_imit: 1.0, ..base_wmse },
        ),
        Method::MgailDsColGauss | Method::MgailDsColGmm => (
            sched(5e-5, 0.5, 40),
            Some(sched(1e-3, 0.5, 40)),
            LossWeights {
                alpha_x: 0.1,
                alpha_y: 2.8,
                beta_col: 4.0,
                alpha_adv: 5.0,
                beta_imit: 1.0,
                ..LossWeights::default()
            },
        ),
    };

    TrainConfig {
        method,
        control: ControlMode::AllAgents,
        epochs: 100,
        batch_size: 8,
        seed: 0,
        generator,
        discriminator,
        weights,
        policy: PolicyConfig { head: method.head(), ..Default::default() },
        pretrain_checkpoint: None,
        pretrain_epochs: None,
        grad_clip: if method.is_mgail() { Some(10.0) } else { None },
    }
}

/// Partial TOML overlay applied onto the method defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TomlOverlay {
    method: Option<String>,
    control: Option<ControlMode>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    generator: Option<LrSchedule>,
    discriminator: Option<LrSchedule>,
    weights: Option<LossWeights>,
    policy: Option<PolicyConfig>,
    pretrain_checkpoint: Option<PathBuf>,
    pretrain_epochs: Option<usize>,
    grad_clip: Option<f64>,
}

impl TrainConfig {
    /// Parse a config file: `method` selects the defaults, any other present
    /// key overrides them.
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let overlay: TomlOverlay =
            toml::from_str(text).map_err(|e| TrainError::Config(format!("config: {e}")))?;
        let method_name = overlay
            .method
            .as_deref()
            .ok_or_else(|| TrainError::Config("config must name a method".into()))?;
        let method = Method::parse(method_name)?;
        let mut cfg = default_hyperparameters(method);
        if let Some(v) = overlay.control {
            cfg.control = v;
        }
        if let Some(v) = overlay.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = overlay.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = overlay.seed {
            cfg.seed = v;
        }
        if let Some(v) = overlay.generator {
            cfg.generator = v;
        }
        if let Some(v) = overlay.discriminator {
            cfg.discriminator = Some(v);
        }
        if let Some(v) = overlay.weights {
            cfg.weights = v;
        }
        if let Some(v) = overlay.policy {
            cfg.policy = v;
        }
        if overlay.pretrain_checkpoint.is_some() {
            cfg.pretrain_checkpoint = overlay.pretrain_checkpoint;
        }
        if overlay.pretrain_epochs.is_some() {
            cfg.pretrain_epochs = overlay.pretrain_epochs;
        }
        if overlay.grad_clip.is_some() {
            cfg.grad_clip = overlay.grad_clip;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_defaults() {
        let c = default_hyperparameters(Method::BcGaussLl);
        assert_eq!(c.generator, LrSchedule { lr: 0.001, gamma: 0.95, n_step: 2 });

        let c = default_hyperparameters(Method::MgailDsGauss);
        assert_eq!(c.generator, LrSchedule { lr: 5e-5, gamma: 0.5, n_step: 40 });
        assert_eq!(c.discriminator, Some(LrSchedule { lr: 1e-4, gamma: 0.5, n_step: 40 }));
        assert_eq!(c.weights.alpha_adv, 1.0);
        assert_eq!(c.weights.beta_imit, 1.0);

        let c = default_hyperparameters(Method::DsWmseCol);
        assert_eq!(c.generator, LrSchedule { lr: 2.5e-5, gamma: 0.99, n_step: 2 });
        assert_eq!(c.weights.alpha_x, 0.1);
        assert_eq!(c.weights.alpha_y, 2.8);
        assert_eq!(c.weights.beta_col, 4.0);

        let c = default_hyperparameters(Method::BcWmseOrient);
        assert_eq!(c.weights.alpha_x, 0.10472);
        assert_eq!(c.weights.alpha_y, 65.177);
        assert_eq!(c.weights.beta_orient, 6209.8);
        assert_eq!(c.generator, LrSchedule { lr: 0.0005, gamma: 0.99, n_step: 1 });

        let c = default_hyperparameters(Method::MgailBcGauss);
        assert_eq!(c.weights.alpha_adv, 50.0);
        assert_eq!(c.weights.beta_imit, 1.0);
        assert_eq!(c.grad_clip, Some(10.0));
    }

    #[test]
    fn toml_overlay_round_trip() {
        let cfg = TrainConfig::from_toml(
            r#"
            method = "ds_wmse"
            epochs = 7
            seed = 3

            [policy]
            embed_dim = 16
            heads = 2
            mp_layers = 1
            gmm_components = 2
            radius = 75.0
            sigma_min = 1e-3
            head = "deterministic"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.method, Method::DsWmse);
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.policy.embed_dim, 16);
        // Defaults survive the overlay.
        assert_eq!(cfg.generator.lr, 2.5e-5);
    }

    #[test]
    fn unknown_method_is_config_error() {
        assert!(TrainConfig::from_toml("method = \"nope\"").is_err());
        assert!(Method::parse("nope").is_err());
    }

    #[test]
    fn mismatched_head_rejected() {
        let r = TrainConfig::from_toml(
            r#"
            method = "bc_gauss_ll"

            [policy]
            embed_dim = 16
            heads = 2
            mp_layers = 1
            gmm_components = 2
            radius = 75.0
            sigma_min = 1e-3
            head = "deterministic"
            "#,
        );
        assert!(r.is_err());
    }

    #[test]
    fn pretrain_chain() {
        assert_eq!(Method::DsWmse.pretrain_method(), Some(Method::BcWmseOrient));
        assert_eq!(Method::MgailDsGmm.pretrain_method(), Some(Method::BcGmmLl));
        assert_eq!(Method::BcGaussLl.pretrain_method(), None);
    }
}
