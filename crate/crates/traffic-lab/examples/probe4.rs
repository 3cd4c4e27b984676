use rand::SeedableRng;
use traffic_lab::autodiff::{Graph, Real};
use traffic_lab::losses::{ds_loss, LossWeights};
use traffic_lab::policy::{PolicyConfig, PolicyNet};
use traffic_lab::scene::{generate_synthetic, SyntheticConfig};
use traffic_lab::simulator::{simulate, SimOptions};

fn main() {
    let data = generate_synthetic(&SyntheticConfig {
        n_agents: 2, n_recordings: 1, duration_s: 10.0, seed: 42, ..Default::default()
    }).unwrap();
    let rollout = &data.rollouts[0];
    let map = &data.maps[0];
    let policy = PolicyConfig {
        embed_dim: 16, heads: 2, mp_layers: 1, gmm_components: 2,
        head: traffic_lab::policy::HeadKind::Deterministic, ..Default::default()
    };
    let net = PolicyNet::init(policy, 3).unwrap();
    let w = LossWeights::default();

    let run = |offsets: &[((usize, usize), (f64, f64))]| -> (f64, Option<(f64, f64)>) {
        let g = Graph::new();
        let bp = net.bind(&g);
        let mut opts = SimOptions::deterministic();
        opts.action_probes = true;
        for (k, v) in offsets {
            opts.probe_offsets.insert(*k, *v);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let traj = simulate(&bp, rollout, map, &opts, &mut rng).unwrap();
        let loss = ds_loss(&traj, &w).unwrap();
        g.backward(loss.id()).unwrap();
        let grad = traj.probes.get(&(0, 3)).map(|(px, py)| {
            (
                g.grad(*px).map_or(0.0, |t| t.item()),
                g.grad(*py).map_or(0.0, |t| t.item()),
            )
        });
        (loss.val(), grad)
    };

    let (base, grad) = run(&[]);
    let (gx, gy) = grad.unwrap();
    println!("loss {base:.6}, analytic d/d(action(agent0,step3)) = ({gx:.6}, {gy:.6})");
    let h = 1e-5;
    for (axis, g_analytic) in [(0, gx), (1, gy)] {
        let mut dp = (0.0, 0.0);
        let mut dm = (0.0, 0.0);
        if axis == 0 { dp.0 = h; dm.0 = -h; } else { dp.1 = h; dm.1 = -h; }
        let (lp, _) = run(&[((0, 3), dp)]);
        let (lm, _) = run(&[((0, 3), dm)]);
        let fd = (lp - lm) / (2.0 * h);
        let rel = (g_analytic - fd).abs() / fd.abs().max(1.0);
        println!("axis {axis}: analytic {g_analytic:.6} fd {fd:.6} rel_err {rel:.3e}");
    }
}
