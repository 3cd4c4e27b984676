use std::time::Instant;
use traffic_lab::metrics::{evaluate, EvalCase};
use traffic_lab::policy::PolicyConfig;
use traffic_lab::scene::{generate_synthetic, SyntheticConfig};
use traffic_lab::simulator::{simulate, SimOptions};
use traffic_lab::training::{default_hyperparameters, train, Method, TrainConfig};

fn main() {
    let data = generate_synthetic(&SyntheticConfig {
        n_agents: 2,
        n_recordings: 8,
        duration_s: 10.0,
        seed: 42,
        ..Default::default()
    })
    .unwrap();
    println!("rollouts: {}", data.rollouts.len());

    let policy = PolicyConfig {
        embed_dim: 16,
        heads: 2,
        mp_layers: 1,
        gmm_components: 2,
        head: traffic_lab::policy::HeadKind::Deterministic,
        ..Default::default()
    };
    let mut cfg = TrainConfig {
        epochs: 120,
        batch_size: 2,
        seed: 0,
        policy,
        pretrain_epochs: Some(0),
        ..default_hyperparameters(Method::DsWmse)
    };
    cfg.pretrain_checkpoint = None;
    // skip pretrain by using BcWmseOrient first
    let mut pre = TrainConfig {
        epochs: 150,
        batch_size: 2,
        seed: 0,
        policy,
        ..default_hyperparameters(Method::BcWmseOrient)
    };
    pre.generator.lr = 2e-3;
    pre.generator.gamma = 0.99;
    pre.generator.n_step = 10;

    let t0 = Instant::now();
    let out = train(&pre, &data, None).unwrap();
    println!("BC 150 epochs: {:.2?}", t0.elapsed());
    for e in out.epochs.iter().step_by(30) {
        println!("  bc epoch {}: {:?}", e.epoch, e.terms);
    }

    let t0 = Instant::now();
    cfg.generator.lr = 1e-4;
    cfg.pretrain_epochs = Some(20);
    let out = train(&cfg, &data, None).unwrap();
    let dt = t0.elapsed();
    println!("DS 20 epochs (incl 20 pretrain): {dt:.2?}");
    for e in out.epochs.iter().step_by(30) {
        println!("  ds epoch {}: {:?}", e.epoch, e.terms);
    }

    // evaluate ADE on training set
    let net = traffic_lab::policy::PolicyNet {
        cfg: out.checkpoint.meta.policy_config,
        params: out.checkpoint.extract_group("policy"),
    };
    let t0 = Instant::now();
    let gens: Vec<_> = data
        .rollouts
        .iter()
        .map(|r| {
            let g = traffic_lab::autodiff::Graph::new();
            let bp = net.bind(&g);
            let mut rng = rand::SeedableRng::seed_from_u64(0);
            let traj = simulate(&bp, r, &data.maps[0], &SimOptions::deterministic(), &mut rng).unwrap();
            traj.to_rollout()
        })
        .collect();
    let cases: Vec<EvalCase> = gens
        .iter()
        .zip(&data.rollouts)
        .map(|(g, r)| EvalCase { generated: g, ground_truth: r, map: &data.maps[0] })
        .collect();
    let rep = evaluate(&cases).unwrap();
    println!("eval: {:.2?}, ADE {:.3}, col {:.2}%", t0.elapsed(), rep.ade_m, rep.collision_pct);
}
