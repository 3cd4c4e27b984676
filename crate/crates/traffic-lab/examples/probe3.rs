use std::time::Instant;
use rand::SeedableRng;
use traffic_lab::metrics::{evaluate, EvalCase};
use traffic_lab::policy::{PolicyConfig, PolicyNet};
use traffic_lab::scene::{generate_synthetic, SyntheticConfig};
use traffic_lab::simulator::{simulate, SimOptions};
use traffic_lab::training::{default_hyperparameters, train, LrSchedule, Method, TrainConfig};

fn ade_on(data: &traffic_lab::scene::Dataset, net: &PolicyNet) -> f64 {
    let gens: Vec<_> = data.rollouts.iter().map(|r| {
        let g = traffic_lab::autodiff::Graph::new();
        let bp = net.bind(&g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        simulate(&bp, r, data.map(&r.map_ref).unwrap(), &SimOptions::deterministic(), &mut rng).unwrap().to_rollout()
    }).collect();
    let cases: Vec<EvalCase> = gens.iter().zip(&data.rollouts).map(|(g, r)| EvalCase {
        generated: g, ground_truth: r, map: data.map(&r.map_ref).unwrap(),
    }).collect();
    evaluate(&cases).unwrap().ade_m
}

fn main() {
    let data = generate_synthetic(&SyntheticConfig {
        n_agents: 1, n_recordings: 8, duration_s: 10.0, seed: 42, ..Default::default()
    }).unwrap();
    let policy = PolicyConfig {
        embed_dim: 16, heads: 2, mp_layers: 1, gmm_components: 2,
        head: traffic_lab::policy::HeadKind::Deterministic, ..Default::default()
    };
    let t0 = Instant::now();
    let pre = TrainConfig {
        epochs: 300, batch_size: 1, seed: 0, policy,
        generator: LrSchedule { lr: 2e-3, gamma: 0.7, n_step: 50 },
        ..default_hyperparameters(Method::BcWmseOrient)
    };
    let out = train(&pre, &data, None).unwrap();
    println!("BC 300 epochs: {:.1?} loss {:?}", t0.elapsed(), out.epochs.last().unwrap().terms);
    let pre_net = PolicyNet { cfg: policy, params: out.checkpoint.extract_group("policy") };
    println!("BC closed-loop ADE: {:.3}", ade_on(&data, &pre_net));
    out.checkpoint.save(std::path::Path::new("/tmp/pre.ckpt")).unwrap();

    let t0 = Instant::now();
    let cfg = TrainConfig {
        epochs: 500, batch_size: 1, seed: 0, policy,
        generator: LrSchedule { lr: 1e-3, gamma: 0.7, n_step: 50 },
        pretrain_checkpoint: Some("/tmp/pre.ckpt".into()),
        ..default_hyperparameters(Method::DsWmse)
    };
    let out = train(&cfg, &data, None).unwrap();
    println!("DS 500 epochs: {:.1?}", t0.elapsed());
    for e in out.epochs.iter().step_by(80) {
        println!("  ds epoch {}: {:?}", e.epoch, e.terms);
    }
    let net = PolicyNet { cfg: policy, params: out.checkpoint.extract_group("policy") };
    println!("DS closed-loop train ADE: {:.3}", ade_on(&data, &net));
}
