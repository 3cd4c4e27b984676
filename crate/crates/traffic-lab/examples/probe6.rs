use rand::SeedableRng;
use std::time::Instant;
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
    let steady: bool = std::env::args().nth(1).as_deref() == Some("steady");
    run_case(steady);
}

fn run_case(STEADY: bool) {
    let data = generate_synthetic(&SyntheticConfig {
        n_agents: 1, n_recordings: 8, duration_s: 10.0, seed: 42, steady_speeds: STEADY, ..Default::default()
    }).unwrap();
    let policy = PolicyConfig {
        embed_dim: 16, heads: 2, mp_layers: 1, gmm_components: 2,
        head: traffic_lab::policy::HeadKind::Deterministic, ..Default::default()
    };
    let t0 = Instant::now();
    let mut pre = TrainConfig {
        epochs: 150, batch_size: 1, seed: 0, policy,
        generator: LrSchedule { lr: 1e-2, gamma: 0.7, n_step: 40 },
        ..default_hyperparameters(Method::BcWmseOrient)
    };
    pre.weights.beta_orient = 10.0;
    pre.epochs = 200;
    let out = train(&pre, &data, None).unwrap();
    let pre_net = PolicyNet { cfg: policy, params: out.checkpoint.extract_group("policy") };
    println!("BC {:.0?}: loss {:?} closed-loop ADE {:.3}", t0.elapsed(), out.epochs.last().unwrap().terms, ade_on(&data, &pre_net));
    out.checkpoint.save(std::path::Path::new("/tmp/pre.ckpt")).unwrap();

    for (lr, clip) in [(5e-4, Some(50.0))] {
        let t0 = Instant::now();
        let cfg = TrainConfig {
            epochs: 500, batch_size: 1, seed: 0, policy,
            generator: LrSchedule { lr, gamma: 0.5, n_step: 80 },
            pretrain_checkpoint: Some("/tmp/pre.ckpt".into()),
            grad_clip: clip,
            ..default_hyperparameters(Method::DsWmse)
        };
        match train(&cfg, &data, None) {
            Ok(out) => {
                let net = PolicyNet { cfg: policy, params: out.checkpoint.extract_group("policy") };
                let loss_traj: Vec<f64> = out.epochs.iter().step_by(70).map(|e| e.terms[0].1).collect();
                println!("DS lr={lr} {:.0?}: losses {loss_traj:.1?} ADE {:.3}", t0.elapsed(), ade_on(&data, &net));
            }
            Err(e) => println!("DS lr={lr}: {e}"),
        }
    }
}
