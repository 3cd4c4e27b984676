use rand::SeedableRng;
use traffic_lab::autodiff::{Graph, Real};
use traffic_lab::losses::LossWeights;
use traffic_lab::policy::{PolicyConfig, PolicyNet};
use traffic_lab::scene::{generate_synthetic, SyntheticConfig};
use traffic_lab::simulator::rollout_context_at;
use traffic_lab::training::{default_hyperparameters, train, LrSchedule, Method, TrainConfig};

fn main() {
    let data = generate_synthetic(&SyntheticConfig {
        n_agents: 1, n_recordings: 8, duration_s: 10.0, seed: 42, ..Default::default()
    }).unwrap();
    let policy = PolicyConfig {
        embed_dim: 16, heads: 2, mp_layers: 1, gmm_components: 2,
        head: traffic_lab::policy::HeadKind::Deterministic, ..Default::default()
    };
    for (beta, lr, ep) in [(0.0, 5e-3, 300usize), (0.0, 1e-2, 300), (6209.8, 5e-3, 300)] {
        let pre = TrainConfig {
            epochs: ep, batch_size: 1, seed: 0, policy,
            generator: LrSchedule { lr, gamma: 0.7, n_step: 60 },
            weights: LossWeights { beta_orient: beta, ..default_hyperparameters(Method::BcWmseOrient).weights },
            ..default_hyperparameters(Method::BcWmseOrient)
        };
        let out = train(&pre, &data, None).unwrap();
        let net = PolicyNet { cfg: policy, params: out.checkpoint.extract_group("policy") };
        println!("beta={beta} lr={lr}: final loss {:?}", out.epochs.last().unwrap().terms);
        // residuals on a few samples
        let r = &data.rollouts[0];
        let g = Graph::new();
        let bp = net.bind(&g);
        for t in [3usize, 8, 14, 19] {
            let ctx = rollout_context_at(&g, r, 0, t).unwrap();
            let outs = bp.forward(&[ctx], data.map(&r.map_ref).unwrap());
            let m = outs[0].mean_action().unwrap();
            let gt = r.agents[0].action_at(t).unwrap();
            println!("  t={t}: pred ({:7.4},{:7.4}) gt ({:7.4},{:7.4})", m.0.val(), m.1.val(), gt.0, gt.1);
        }
    }
}
