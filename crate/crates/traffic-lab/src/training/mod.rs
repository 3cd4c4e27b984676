//! Training loops for every method family.
//!
//! Open-loop cloning trains on per-step state/action pairs from recorded
//! states and never builds multi-step graphs. Closed-loop methods roll the
//! policy out over all 20 steps and backpropagate through time. Adversarial
//! methods alternate one discriminator step (on detached generator outputs)
//! and one generator step (through the live graph) per batch.

mod config;
mod optim;

pub use config::{
    default_hyperparameters, ControlMode, LrSchedule, Method, TrainConfig, ALL_METHODS,
};
pub use optim::{adam_step, clip_global_norm, steplr, AdamState};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Graph, Real};
use crate::losses::{
    bc_nll, bc_wmse_orientation, collision_loss, combine, disc_scores_rollout, disc_scores_sim,
    ds_loss, mgail_d_loss, mgail_g_loss, LossError, OrientationSample,
};
use crate::policy::{
    config_hash, BoundPolicy, Checkpoint, CheckpointError, CheckpointMeta, ParamSet, PolicyError,
    PolicyNet,
};
use crate::scene::{Dataset, MapModel, Rollout, SceneError, ROLLOUT_STEPS};
use crate::simulator::{
    control_mask_all, control_mask_single, rollout_context_at, simulate, SimError, SimOptions,
    SingleSelector,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}; last good checkpoint retained")]
    Diverged { epoch: usize, checkpoint: Box<Checkpoint> },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr_gen: f64,
    pub lr_disc: Option<f64>,
    /// Mean per-term loss values over the epoch's batches.
    pub terms: Vec<(String, f64)>,
    pub disc_accuracy: Option<f64>,
}

/// One per-term loss record per batch step.
#[derive(Debug, Clone)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub term: String,
    pub value: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochLog>,
    pub rows: Vec<LossRow>,
}

/// `epoch,lr_gen,lr_disc,disc_accuracy,term,value` rows.
pub fn epochs_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,lr_gen,lr_disc,disc_accuracy,term,value\n");
    for e in log {
        for (term, value) in &e.terms {
            out.push_str(&format!(
                "{},{},{},{},{term},{value}\n",
                e.epoch,
                e.lr_gen,
                e.lr_disc.map_or(String::new(), |v| v.to_string()),
                e.disc_accuracy.map_or(String::new(), |v| v.to_string()),
            ));
        }
    }
    out
}

/// `epoch,step,term,value` rows.
pub fn loss_rows_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("epoch,step,term,value\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.step, r.term, r.value));
    }
    out
}

fn thread_cap() -> usize {
    std::env::var("TRAFFIC_LAB_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run `f` over `0..n`, fanning out over up to `TRAFFIC_LAB_THREADS` threads.
/// Results come back in index order, so reductions stay deterministic.
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let cap = thread_cap().min(n).max(1);
    if cap <= 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(cap);
        for k in 0..cap {
            let f = &f;
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                let mut i = k;
                while i < n {
                    out.push((i, f(i)));
                    i += cap;
                }
                out
            }));
        }
        for h in handles {
            for (i, v) in h.join().expect("worker panicked") {
                slots[i] = Some(v);
            }
        }
    });
    slots.into_iter().map(|o| o.expect("filled")).collect()
}

fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Output of one rollout's forward/backward pass.
struct PassOutput {
    gen_grads: Option<ParamSet>,
    disc_grads: Option<ParamSet>,
    terms: Vec<(String, f64)>,
    /// (correct, total) discriminator classifications.
    acc: Option<(usize, usize)>,
}

fn average_grads(shape_of: &ParamSet, grads: Vec<&ParamSet>) -> Option<ParamSet> {
    if grads.is_empty() {
        return None;
    }
    let mut sum = shape_of.zeros_like();
    for g in &grads {
        for (name, t) in sum.iter_mut() {
            for (a, b) in t.data_mut().iter_mut().zip(g.get(name).data()) {
                *a += b;
            }
        }
    }
    let inv = 1.0 / grads.len() as f64;
    for (_, t) in sum.iter_mut() {
        for v in t.data_mut() {
            *v *= inv;
        }
    }
    Some(sum)
}

fn open_loop_nll_samples<'g>(
    bp: &BoundPolicy<'g>,
    rollout: &Rollout,
    map: &MapModel,
) -> Vec<(crate::policy::HeadOutput<'g>, (f64, f64))> {
    let g = bp.graph();
    let mut samples = Vec::new();
    for t in 0..ROLLOUT_STEPS {
        let present: Vec<usize> = (0..rollout.agents.len())
            .filter(|&i| rollout.agents[i].present_at(t))
            .collect();
        let controlled: Vec<bool> = present
            .iter()
            .map(|&i| rollout.agents[i].controlled_at(t))
            .collect();
        if !controlled.iter().any(|&b| b) {
            continue;
        }
        let contexts: Vec<_> = present
            .iter()
            .map(|&i| rollout_context_at(g, rollout, i, t).expect("present"))
            .collect();
        let outs = bp.forward(&contexts, map);
        for (slot, out) in outs.into_iter().enumerate() {
            if controlled[slot] {
                let i = present[slot];
                let action = rollout.agents[i].action_at(t).expect("controlled implies action");
                samples.push((out, action));
            }
        }
    }
    samples
}

fn open_loop_orientation_samples<'g>(
    bp: &BoundPolicy<'g>,
    rollout: &Rollout,
    map: &MapModel,
) -> Vec<OrientationSample<'g>> {
    let g = bp.graph();
    let mut samples = Vec::new();
    for t in 0..ROLLOUT_STEPS {
        let present: Vec<usize> = (0..rollout.agents.len())
            .filter(|&i| rollout.agents[i].present_at(t))
            .collect();
        let controlled: Vec<bool> = present
            .iter()
            .map(|&i| rollout.agents[i].controlled_at(t))
            .collect();
        if !controlled.iter().any(|&b| b) {
            continue;
        }
        let contexts: Vec<_> = present
            .iter()
            .map(|&i| rollout_context_at(g, rollout, i, t).expect("present"))
            .collect();
        let outs = bp.forward(&contexts, map);
        for (slot, out) in outs.into_iter().enumerate() {
            if controlled[slot] {
                let i = present[slot];
                let agent = &rollout.agents[i];
                let next = agent.pose_at(t + 1).expect("controlled implies next state");
                samples.push(OrientationSample {
                    output: out,
                    pose: contexts[slot].frame(),
                    gt_action: agent.action_at(t).expect("controlled implies action"),
                    gt_next_heading: (next.hx, next.hy),
                });
            }
        }
    }
    samples
}

fn bc_pass(
    net: &PolicyNet,
    cfg: &TrainConfig,
    rollout: &Rollout,
    map: &MapModel,
) -> Result<PassOutput, TrainError> {
    let g = Graph::new();
    let bp = net.bind(&g);
    let loss = if cfg.method.head() == crate::policy::HeadKind::Deterministic {
        let samples = open_loop_orientation_samples(&bp, rollout, map);
        if samples.is_empty() {
            return Ok(PassOutput { gen_grads: None, disc_grads: None, terms: vec![], acc: None });
        }
        bc_wmse_orientation(&samples, &cfg.weights)?
    } else {
        let samples = open_loop_nll_samples(&bp, rollout, map);
        if samples.is_empty() {
            return Ok(PassOutput { gen_grads: None, disc_grads: None, terms: vec![], acc: None });
        }
        bc_nll(&samples)?
    };
    // Open-loop by definition: the graph never crossed a simulator step.
    assert_eq!(g.steps_marked(), 0, "cloning must not build multi-step graphs");
    g.backward(loss.id()).map_err(|e| TrainError::Config(e.to_string()))?;
    Ok(PassOutput {
        gen_grads: Some(bp.params().gradients(&net.params)),
        disc_grads: None,
        terms: vec![("bc".into(), loss.val())],
        acc: None,
    })
}

fn ds_pass(
    net: &PolicyNet,
    cfg: &TrainConfig,
    rollout: &Rollout,
    map: &MapModel,
) -> Result<PassOutput, TrainError> {
    let g = Graph::new();
    let bp = net.bind(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let traj = simulate(&bp, rollout, map, &SimOptions::deterministic(), &mut rng)?;
    assert_eq!(g.steps_marked(), ROLLOUT_STEPS, "closed-loop graph must span all steps");
    let ds = ds_loss(&traj, &cfg.weights)?;
    let (total, terms) = if cfg.method.uses_collision() {
        let col = collision_loss(&traj)?;
        let c = combine(&[("ds", ds, 1.0), ("col", col, cfg.weights.beta_col)]);
        (c.total, c.parts)
    } else {
        (ds, vec![("ds".into(), ds.val())])
    };
    if !total.val().is_finite() {
        return Err(TrainError::Config("non-finite loss".into()));
    }
    g.backward(total.id()).map_err(|e| TrainError::Config(e.to_string()))?;
    Ok(PassOutput {
        gen_grads: Some(bp.params().gradients(&net.params)),
        disc_grads: None,
        terms,
        acc: None,
    })
}

fn mgail_disc_pass(
    gen: &PolicyNet,
    disc: &PolicyNet,
    rollout: &Rollout,
    map: &MapModel,
    noise_seed: u64,
) -> Result<PassOutput, TrainError> {
    // Generated states, detached from the generator.
    let gen_values = {
        let g = Graph::new();
        let bp = gen.bind(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let traj = simulate(&bp, rollout, map, &SimOptions::sampled(), &mut rng)?;
        traj.to_rollout()
    };
    let g = Graph::new();
    let bd = disc.bind(&g);
    let s_gt = disc_scores_rollout(&bd, rollout, map);
    let s_gen = disc_scores_rollout(&bd, &gen_values, map);
    if s_gt.is_empty() || s_gen.is_empty() {
        return Ok(PassOutput { gen_grads: None, disc_grads: None, terms: vec![], acc: None });
    }
    let loss = mgail_d_loss(&s_gt, &s_gen)?;
    g.backward(loss.id()).map_err(|e| TrainError::Config(e.to_string()))?;
    let correct = s_gt.iter().filter(|v| v.val() > 0.5).count()
        + s_gen.iter().filter(|v| v.val() < 0.5).count();
    Ok(PassOutput {
        gen_grads: None,
        disc_grads: Some(bd.params().gradients(&disc.params)),
        terms: vec![("disc".into(), loss.val())],
        acc: Some((correct, s_gt.len() + s_gen.len())),
    })
}

fn mgail_gen_pass(
    gen: &PolicyNet,
    disc: &PolicyNet,
    cfg: &TrainConfig,
    rollout: &Rollout,
    map: &MapModel,
    noise_seed: u64,
) -> Result<PassOutput, TrainError> {
    let g = Graph::new();
    let bg = gen.bind(&g);
    let bd = disc.bind(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let traj = simulate(&bg, rollout, map, &SimOptions::sampled(), &mut rng)?;
    assert_eq!(g.steps_marked(), ROLLOUT_STEPS, "closed-loop graph must span all steps");
    let scores = disc_scores_sim(&bd, &traj, map);
    if scores.is_empty() {
        return Ok(PassOutput { gen_grads: None, disc_grads: None, terms: vec![], acc: None });
    }
    let adv = mgail_g_loss(&scores)?;

    let mut terms: Vec<(&str, crate::autodiff::Var, f64)> =
        vec![("adv", adv, cfg.weights.alpha_adv)];
    let imit_ds;
    let imit_col;
    let imit_bc;
    if cfg.method.mgail_uses_ds() {
        imit_ds = ds_loss(&traj, &cfg.weights)?;
        terms.push(("ds", imit_ds, cfg.weights.beta_imit));
        if cfg.method.uses_collision() {
            imit_col = collision_loss(&traj)?;
            terms.push(("col", imit_col, cfg.weights.beta_imit * cfg.weights.beta_col));
        }
    } else {
        let samples = open_loop_nll_samples(&bg, rollout, map);
        if samples.is_empty() {
            return Ok(PassOutput { gen_grads: None, disc_grads: None, terms: vec![], acc: None });
        }
        imit_bc = bc_nll(&samples)?;
        terms.push(("bc", imit_bc, cfg.weights.beta_imit));
    }
    let combined = combine(&terms);
    if !combined.total.val().is_finite() {
        return Err(TrainError::Config("non-finite loss".into()));
    }
    g.backward(combined.total.id()).map_err(|e| TrainError::Config(e.to_string()))?;
    Ok(PassOutput {
        gen_grads: Some(bg.params().gradients(&gen.params)),
        disc_grads: None,
        terms: combined.parts,
        acc: None,
    })
}

fn masked_for_training(cfg: &TrainConfig, rollout: &Rollout, epoch: usize, idx: usize) -> Rollout {
    match cfg.control {
        ControlMode::AllAgents => {
            crate::simulator::with_control_mask(rollout, &control_mask_all(rollout))
        }
        ControlMode::SingleAgent => {
            let seed = mix_seed(&[cfg.seed, 0x51_4e47, epoch as u64, idx as u64]);
            match control_mask_single(rollout, SingleSelector::Proportional { seed }) {
                Ok(masks) => crate::simulator::with_control_mask(rollout, &masks),
                // No eligible agent: leave everything replayed.
                Err(_) => crate::simulator::with_control_mask(
                    rollout,
                    &vec![vec![false; ROLLOUT_STEPS]; rollout.agents.len()],
                ),
            }
        }
    }
}

fn make_checkpoint(
    cfg: &TrainConfig,
    epoch: usize,
    gen: &PolicyNet,
    disc: Option<&PolicyNet>,
    opt_gen: &AdamState,
    opt_disc: Option<&AdamState>,
) -> Checkpoint {
    let meta = CheckpointMeta {
        epoch,
        seed: cfg.seed,
        config_hash: config_hash(&cfg.canonical_toml()),
        method: cfg.method.name().to_string(),
        policy_config: gen.cfg,
        discriminator_config: disc.map(|d| d.cfg),
    };
    let mut ck = Checkpoint::new(meta);
    ck.insert_group("policy", &gen.params);
    ck.insert_group("opt.gen.m", &opt_gen.m);
    ck.insert_group("opt.gen.v", &opt_gen.v);
    ck.tensors.insert(
        "opt.gen.t",
        crate::autodiff::Tensor::scalar(opt_gen.t as f64),
    );
    if let (Some(d), Some(od)) = (disc, opt_disc) {
        ck.insert_group("disc", &d.params);
        ck.insert_group("opt.disc.m", &od.m);
        ck.insert_group("opt.disc.v", &od.v);
        ck.tensors.insert("opt.disc.t", crate::autodiff::Tensor::scalar(od.t as f64));
    }
    ck
}

fn load_params_into(net: &mut PolicyNet, params: &ParamSet) -> Result<(), TrainError> {
    for (name, t) in net.params.iter_mut() {
        if !params.contains(name) {
            return Err(TrainError::Config(format!("checkpoint is missing tensor {name}")));
        }
        let src = params.get(name);
        if src.shape() != t.shape() {
            return Err(TrainError::Config(format!(
                "checkpoint tensor {name} has shape {:?}, expected {:?}",
                src.shape(),
                t.shape()
            )));
        }
        *t = src.clone();
    }
    Ok(())
}

/// Train one method on a dataset. `out_dir`, when given, receives a
/// `last.ckpt` refresh after every epoch.
pub fn train(cfg: &TrainConfig, data: &Dataset, out_dir: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.rollouts.is_empty() {
        return Err(TrainError::Config("dataset has no rollouts".into()));
    }
    for r in &data.rollouts {
        if data.map(&r.map_ref).is_none() {
            return Err(TrainError::Config(format!("dataset is missing map {:?}", r.map_ref)));
        }
    }

    // Resolve initialization.
    let mut gen = PolicyNet::init(cfg.policy, mix_seed(&[cfg.seed, 1]))?;
    if let Some(path) = &cfg.pretrain_checkpoint {
        let ck = Checkpoint::load(path)?;
        load_params_into(&mut gen, &ck.extract_group("policy"))?;
    } else if let Some(pre_method) = cfg.method.pretrain_method() {
        let pre_cfg = TrainConfig {
            method: pre_method,
            policy: crate::policy::PolicyConfig { head: pre_method.head(), ..cfg.policy },
            epochs: cfg.pretrain_epochs.unwrap_or(cfg.epochs),
            discriminator: None,
            grad_clip: None,
            pretrain_checkpoint: None,
            pretrain_epochs: None,
            ..default_hyperparameters(pre_method)
        };
        let pre_cfg = TrainConfig {
            control: cfg.control,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            ..pre_cfg
        };
        let outcome = train(&pre_cfg, data, None)?;
        load_params_into(&mut gen, &outcome.checkpoint.extract_group("policy"))?;
    }

    let mut disc = if cfg.method.is_mgail() {
        Some(PolicyNet::init(
            crate::policy::PolicyConfig {
                head: crate::policy::HeadKind::Discriminator,
                ..cfg.policy
            },
            mix_seed(&[cfg.seed, 2]),
        )?)
    } else {
        None
    };

    let mut opt_gen = AdamState::new(&gen.params);
    let mut opt_disc = disc.as_ref().map(|d| AdamState::new(&d.params));

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut rows = Vec::new();
    let mut last_good = make_checkpoint(cfg, 0, &gen, disc.as_ref(), &opt_gen, opt_disc.as_ref());

    for epoch in 0..cfg.epochs {
        let lr_gen = cfg.generator.at(epoch);
        let lr_disc = cfg.discriminator.map(|d| d.at(epoch));

        let mut order: Vec<usize> = (0..data.rollouts.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x05_48_55_46, epoch as u64]));
        order.shuffle(&mut shuffle_rng);

        let mut term_sums: Vec<(String, f64, usize)> = Vec::new();
        let mut acc_correct = 0usize;
        let mut acc_total = 0usize;
        let mut record = |rows: &mut Vec<LossRow>,
                          term_sums: &mut Vec<(String, f64, usize)>,
                          epoch: usize,
                          step: usize,
                          terms: &[(String, f64)]| {
            for (name, value) in terms {
                rows.push(LossRow { epoch, step, term: name.clone(), value: *value });
                match term_sums.iter_mut().find(|(n, _, _)| n == name) {
                    Some((_, s, c)) => {
                        *s += value;
                        *c += 1;
                    }
                    None => term_sums.push((name.clone(), *value, 1)),
                }
            }
        };

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let masked: Vec<Rollout> = batch
                .iter()
                .map(|&idx| masked_for_training(cfg, &data.rollouts[idx], epoch, idx))
                .collect();
            let maps: Vec<&MapModel> = batch
                .iter()
                .map(|&idx| data.map(&data.rollouts[idx].map_ref).expect("validated"))
                .collect();

            if let (Some(d), Some(od)) = (disc.as_mut(), opt_disc.as_mut()) {
                // Discriminator step on detached generator rollouts.
                let results = parallel_map(masked.len(), |k| {
                    let seed = mix_seed(&[cfg.seed, 0xD15C, epoch as u64, (batch_idx * cfg.batch_size + k) as u64]);
                    mgail_disc_pass(&gen, d, &masked[k], maps[k], seed)
                });
                let mut outs = Vec::new();
                for r in results {
                    outs.push(r?);
                }
                let grads: Vec<&ParamSet> =
                    outs.iter().filter_map(|o| o.disc_grads.as_ref()).collect();
                if let Some(mut mean) = average_grads(&d.params, grads) {
                    if let Some(clip) = cfg.grad_clip {
                        clip_global_norm(&mut mean, clip);
                    }
                    adam_step(&mut d.params, &mean, od, lr_disc.expect("validated"));
                }
                for o in &outs {
                    record(&mut rows, &mut term_sums, epoch, batch_idx, &o.terms);
                    if let Some((c, t)) = o.acc {
                        acc_correct += c;
                        acc_total += t;
                    }
                }
            }

            // Generator / supervised step.
            let results = parallel_map(masked.len(), |k| -> Result<PassOutput, TrainError> {
                if cfg.method.is_bc() {
                    bc_pass(&gen, cfg, &masked[k], maps[k])
                } else if cfg.method.is_ds() {
                    ds_pass(&gen, cfg, &masked[k], maps[k])
                } else {
                    let seed = mix_seed(&[cfg.seed, 0x6E4, epoch as u64, (batch_idx * cfg.batch_size + k) as u64]);
                    mgail_gen_pass(&gen, disc.as_ref().expect("mgail"), cfg, &masked[k], maps[k], seed)
                }
            });
            let mut outs = Vec::new();
            for r in results {
                outs.push(r?);
            }
            let grads: Vec<&ParamSet> = outs.iter().filter_map(|o| o.gen_grads.as_ref()).collect();
            if let Some(mut mean) = average_grads(&gen.params, grads) {
                if let Some(clip) = cfg.grad_clip {
                    clip_global_norm(&mut mean, clip);
                }
                adam_step(&mut gen.params, &mean, &mut opt_gen, lr_gen);
            }
            for o in &outs {
                record(&mut rows, &mut term_sums, epoch, batch_idx, &o.terms);
            }
        }

        if !gen.params.all_finite() || disc.as_ref().is_some_and(|d| !d.params.all_finite()) {
            return Err(TrainError::Diverged { epoch, checkpoint: Box::new(last_good) });
        }

        let terms: Vec<(String, f64)> = term_sums
            .iter()
            .map(|(n, s, c)| (n.clone(), s / (*c).max(1) as f64))
            .collect();
        if terms.iter().any(|(_, v)| !v.is_finite()) {
            return Err(TrainError::Diverged { epoch, checkpoint: Box::new(last_good) });
        }
        epochs.push(EpochLog {
            epoch,
            lr_gen,
            lr_disc,
            terms,
            disc_accuracy: (acc_total > 0).then(|| acc_correct as f64 / acc_total as f64),
        });

        last_good = make_checkpoint(cfg, epoch + 1, &gen, disc.as_ref(), &opt_gen, opt_disc.as_ref());
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            last_good.save(&dir.join("last.ckpt"))?;
        }
    }

    Ok(TrainOutcome { checkpoint: last_good, epochs, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;
    use crate::scene::{generate_synthetic, SyntheticConfig};

    fn tiny_policy(head: crate::policy::HeadKind) -> PolicyConfig {
        PolicyConfig {
            embed_dim: 8,
            heads: 2,
            mp_layers: 1,
            gmm_components: 2,
            head,
            ..Default::default()
        }
    }

    fn tiny_cfg(method: Method, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            seed,
            policy: tiny_policy(method.head()),
            pretrain_epochs: Some(2),
            ..default_hyperparameters(method)
        }
    }

    fn tiny_data() -> Dataset {
        generate_synthetic(&SyntheticConfig {
            n_agents: 2,
            n_recordings: 2,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn bc_training_runs_and_is_deterministic() {
        let data = tiny_data();
        let cfg = tiny_cfg(Method::BcGaussLl, 2, 5);
        let a = train(&cfg, &data, None).unwrap();
        let b = train(&cfg, &data, None).unwrap();
        assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
        assert_eq!(a.epochs.len(), 2);
        assert!(a.rows.iter().any(|r| r.term == "bc"));
    }

    #[test]
    fn ds_training_runs_with_auto_pretrain() {
        let data = tiny_data();
        let cfg = tiny_cfg(Method::DsWmse, 2, 1);
        let out = train(&cfg, &data, None).unwrap();
        assert!(out.epochs.iter().all(|e| e.terms.iter().all(|(_, v)| v.is_finite())));
    }

    #[test]
    fn mgail_training_alternates_and_logs_accuracy() {
        let data = tiny_data();
        let mut cfg = tiny_cfg(Method::MgailDsGauss, 2, 2);
        cfg.batch_size = 2;
        let out = train(&cfg, &data, None).unwrap();
        assert!(out.epochs[0].disc_accuracy.is_some());
        assert!(out.rows.iter().any(|r| r.term == "adv"));
        assert!(out.rows.iter().any(|r| r.term == "disc"));
        assert!(out.rows.iter().any(|r| r.term == "ds"));
    }

    #[test]
    fn checkpoint_restores_identical_params() {
        let data = tiny_data();
        let cfg = tiny_cfg(Method::BcWmseOrient, 2, 7);
        let out = train(&cfg, &data, None).unwrap();
        let bytes = out.checkpoint.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, out.checkpoint);
        let params = back.extract_group("policy");
        let mut net = PolicyNet::init(cfg.policy, 99).unwrap();
        load_params_into(&mut net, &params).unwrap();
        for (name, t) in net.params.iter() {
            let orig = out.checkpoint.extract_group("policy");
            assert_eq!(t.data(), orig.get(name).data());
        }
    }

    #[test]
    fn single_agent_control_mode_trains() {
        let data = tiny_data();
        let mut cfg = tiny_cfg(Method::BcGaussLl, 1, 8);
        cfg.control = ControlMode::SingleAgent;
        train(&cfg, &data, None).unwrap();
    }

    #[test]
    fn log_csvs_have_headers() {
        let data = tiny_data();
        let cfg = tiny_cfg(Method::BcGaussLl, 1, 9);
        let out = train(&cfg, &data, None).unwrap();
        assert!(epochs_csv(&out.epochs).starts_with("epoch,lr_gen"));
        assert!(loss_rows_csv(&out.rows).starts_with("epoch,step,term,value"));
    }
}
