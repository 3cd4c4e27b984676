use rand::SeedableRng;
use traffic_lab::autodiff::{Graph, Real};
use traffic_lab::policy::{PolicyConfig, PolicyNet};
use traffic_lab::scene::{generate_synthetic, SyntheticConfig};
use traffic_lab::simulator::{simulate, SimOptions};
use traffic_lab::training::{default_hyperparameters, train, Method, TrainConfig};

fn main() {
    let data = generate_synthetic(&SyntheticConfig {
        n_agents: 2, n_recordings: 8, duration_s: 10.0, seed: 42, ..Default::default()
    }).unwrap();
    let policy = PolicyConfig {
        embed_dim: 16, heads: 2, mp_layers: 1, gmm_components: 2,
        head: traffic_lab::policy::HeadKind::Deterministic, ..Default::default()
    };
    let mut pre = TrainConfig {
        epochs: 150, batch_size: 2, seed: 0, policy,
        ..default_hyperparameters(Method::BcWmseOrient)
    };
    pre.generator.lr = 2e-3;
    pre.generator.gamma = 0.99;
    pre.generator.n_step = 10;
    let out = train(&pre, &data, None).unwrap();
    let net = PolicyNet { cfg: policy, params: out.checkpoint.extract_group("policy") };

    let r = &data.rollouts[0];
    let g = Graph::new();
    let bp = net.bind(&g);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let traj = simulate(&bp, r, &data.maps[0], &SimOptions::deterministic(), &mut rng).unwrap();
    for t in [3, 5, 8, 11, 14, 17, 20] {
        for (i, a) in r.agents.iter().enumerate() {
            if let (Some(gen), Some(gt)) = (traj.position(i, t), a.pose_at(t)) {
                let act = a.action_at(t.saturating_sub(1));
                println!(
                    "t={t} agent {i}: gen ({:8.2},{:6.2})  gt ({:8.2},{:6.2})  gt_action {:?}",
                    gen.0.val(), gen.1.val(), gt.x, gt.y, act
                );
            }
        }
    }
    // one-step open-loop check: from gt state at t=5, what does the policy say?
    use traffic_lab::simulator::rollout_context_at;
    let g2 = Graph::new();
    let bp2 = net.bind(&g2);
    let ctxs: Vec<_> = (0..r.agents.len()).filter_map(|i| rollout_context_at(&g2, r, i, 5)).collect();
    let outs = bp2.forward(&ctxs, &data.maps[0]);
    for (i, o) in outs.iter().enumerate() {
        let m = o.mean_action().unwrap();
        println!("open-loop t=5 agent {i}: policy action ({:.3},{:.3}) gt {:?}", m.0.val(), m.1.val(), r.agents[i].action_at(5));
    }
}
