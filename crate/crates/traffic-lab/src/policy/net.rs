//! Forward passes of the policy/discriminator network.
//!
//! Per multi-agent state: node features -> MLP embedding, fused with cropped
//! map polylines via cross-attention (PointNet line embeddings as keys and
//! values), then K message-passing layers over the interaction graph (edge
//! MLP updates, node cross-attention with residual), then a weight-shared
//! decoder head.

use super::features::{
    build_graph, edge_features, node_features, polyline_const_features, AgentContext, EdgeRef,
};
use super::params::BoundParams;
use super::{HeadKind, PolicyConfig, PolicyError};
use crate::autodiff::{Graph, NodeId, Real, Tensor, Var};
use crate::scene::MapModel;

/// Decoded per-agent output of one forward pass.
#[derive(Clone)]
pub enum HeadOutput<'g> {
    Deterministic {
        mean: (Var<'g>, Var<'g>),
    },
    Gaussian {
        mean: (Var<'g>, Var<'g>),
        std: (Var<'g>, Var<'g>),
    },
    Gmm {
        /// Softmax-normalized component weights.
        weights: Vec<Var<'g>>,
        means: Vec<(Var<'g>, Var<'g>)>,
        stds: Vec<(Var<'g>, Var<'g>)>,
    },
    Discriminator {
        /// Score in [0, 1].
        score: Var<'g>,
    },
}

impl<'g> HeadOutput<'g> {
    /// The distribution mean (the action used in deterministic rollouts).
    pub fn mean_action(&self) -> Result<(Var<'g>, Var<'g>), PolicyError> {
        match self {
            HeadOutput::Deterministic { mean } | HeadOutput::Gaussian { mean, .. } => Ok(*mean),
            HeadOutput::Gmm { weights, means, .. } => {
                let mut mx = weights[0] * means[0].0;
                let mut my = weights[0] * means[0].1;
                for c in 1..weights.len() {
                    mx = mx + weights[c] * means[c].0;
                    my = my + weights[c] * means[c].1;
                }
                Ok((mx, my))
            }
            HeadOutput::Discriminator { .. } => {
                Err(PolicyError::Contract("discriminator head has no action".into()))
            }
        }
    }

    /// Reparameterized sample: `mean + std * noise` for the Gaussian head;
    /// for the mixture, a component is chosen by inverse CDF on `u` (no
    /// gradient to the weights) and its mean/std are sampled through.
    pub fn sample(&self, noise: (f64, f64), u: f64) -> Result<(Var<'g>, Var<'g>), PolicyError> {
        match self {
            HeadOutput::Gaussian { mean, std } => Ok((
                mean.0 + std.0 * std.0.lift(noise.0),
                mean.1 + std.1 * std.1.lift(noise.1),
            )),
            HeadOutput::Gmm { weights, means, stds } => {
                let mut cum = 0.0;
                let mut pick = weights.len() - 1;
                for (c, w) in weights.iter().enumerate() {
                    cum += w.val();
                    if u < cum {
                        pick = c;
                        break;
                    }
                }
                let (m, s) = (means[pick], stds[pick]);
                Ok((m.0 + s.0 * s.0.lift(noise.0), m.1 + s.1 * s.1.lift(noise.1)))
            }
            _ => Err(PolicyError::Contract(
                "sampling requires a gaussian or gmm head".into(),
            )),
        }
    }

    pub fn score(&self) -> Result<Var<'g>, PolicyError> {
        match self {
            HeadOutput::Discriminator { score } => Ok(*score),
            _ => Err(PolicyError::Contract("head has no discriminator score".into())),
        }
    }
}

/// A policy bound to one graph.
pub struct BoundPolicy<'g> {
    cfg: PolicyConfig,
    params: BoundParams<'g>,
}

impl<'g> BoundPolicy<'g> {
    pub fn new(cfg: PolicyConfig, params: BoundParams<'g>) -> Self {
        BoundPolicy { cfg, params }
    }

    pub fn graph(&self) -> &'g Graph {
        self.params.graph
    }

    pub fn cfg(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn params(&self) -> &BoundParams<'g> {
        &self.params
    }

    fn linear(&self, x: NodeId, name: &str) -> NodeId {
        let g = self.graph();
        let y = g
            .matmul(x, self.params.id(&format!("{name}.w")))
            .expect("linear shapes");
        g.add(y, self.params.id(&format!("{name}.b"))).expect("bias shapes")
    }

    fn mlp2(&self, x: NodeId, prefix: &str) -> NodeId {
        let h = self.graph().tanh(self.linear(x, &format!("{prefix}.0")));
        self.linear(h, &format!("{prefix}.1"))
    }

    /// Scaled dot-product cross attention from one query row to a key/value
    /// matrix, residual-free (callers add the residual).
    fn mha(&self, q_row: NodeId, kv: NodeId, prefix: &str) -> NodeId {
        let g = self.graph();
        let d = self.cfg.embed_dim;
        let dh = d / self.cfg.heads;
        let qp = self.linear(q_row, &format!("{prefix}.q"));
        let kp = self.linear(kv, &format!("{prefix}.k"));
        let vp = self.linear(kv, &format!("{prefix}.v"));
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qs = g.slice(qp, 1, lo, hi).expect("head slice");
            let ks = g.slice(kp, 1, lo, hi).expect("head slice");
            let vs = g.slice(vp, 1, lo, hi).expect("head slice");
            let scores = g.matmul(qs, g.transpose(ks)).expect("scores");
            let scaled = g.mul_c(scores, 1.0 / (dh as f64).sqrt());
            let attn = g.softmax(scaled, 1).expect("softmax");
            heads.push(g.matmul(attn, vs).expect("attend"));
        }
        let cat = g.concat(&heads, 1).expect("concat heads");
        self.linear(cat, &format!("{prefix}.o"))
    }

    /// PointNet embeddings of the cropped map around one agent: `[J, d]`, or
    /// `None` when nothing falls inside the crop.
    fn embed_map_lines(&self, a: &AgentContext<Var<'g>>, map: &MapModel) -> Option<NodeId> {
        let g = self.graph();
        let frame = a.frame();
        let frame_vals = crate::geometry::Pose2D {
            x: frame.x.val(),
            y: frame.y.val(),
            hx: frame.hx.val(),
            hy: frame.hy.val(),
        };
        let selected = crate::scene::crop_select(map, &frame_vals);
        if selected.is_empty() {
            return None;
        }
        let n_pts = crate::scene::SEGMENT_POINTS;
        let mut flat = Vec::with_capacity(selected.len() * n_pts * 2);
        let mut const_rows: Vec<f64> = Vec::new();
        let mut const_cols = 0;
        for &idx in &selected {
            let seg = &map.segments()[idx];
            for &(x, y) in &seg.points {
                flat.push(x);
                flat.push(y);
            }
            let emb = polyline_const_features(seg.line_type, n_pts);
            const_cols = emb.cols();
            const_rows.extend_from_slice(emb.data());
        }
        let rows = selected.len() * n_pts;
        let pts = g.constant(Tensor::new(rows, 2, flat).expect("points"));

        // local = (P - pos) @ [[hx, -hy], [hy, hx]]
        let pos_row = g.concat(&[frame.x.id(), frame.y.id()], 1).expect("pos row");
        let centered = g.sub(pts, pos_row).expect("center");
        let neg_hy = g.neg(frame.hy.id());
        let r0 = g.concat(&[frame.hx.id(), neg_hy], 1).expect("rot row");
        let r1 = g.concat(&[frame.hy.id(), frame.hx.id()], 1).expect("rot row");
        let rot = g.concat(&[r0, r1], 0).expect("rot");
        let local = g.matmul(centered, rot).expect("rotate");
        let local = g.mul_c(local, 1.0 / super::features::scales::MAP);

        let const_emb = g.constant(Tensor::new(rows, const_cols, const_rows).expect("emb"));
        let mut x = g.concat(&[local, const_emb], 1).expect("point feats");
        for l in 0..3 {
            x = g.tanh(self.linear(x, &format!("pointnet.{l}")));
        }
        let lines: Vec<NodeId> = (0..selected.len())
            .map(|k| {
                let seg = g.slice(x, 0, k * n_pts, (k + 1) * n_pts).expect("segment");
                g.max_axis0(seg)
            })
            .collect();
        Some(g.concat(&lines, 0).expect("line embeddings"))
    }

    /// Per-agent embeddings `[M, d]`: node MLP fused with map attention.
    pub fn encode(&self, agents: &[AgentContext<Var<'g>>], map: &MapModel) -> NodeId {
        let g = self.graph();
        let rows: Vec<NodeId> = agents
            .iter()
            .map(|a| {
                let f = node_features(a);
                let ids: Vec<NodeId> = f.iter().map(|v| v.id()).collect();
                g.concat(&ids, 1).expect("node feature row")
            })
            .collect();
        let feats = g.concat(&rows, 0).expect("node features");
        let h0 = self.mlp2(feats, "node_mlp");

        let fused: Vec<NodeId> = agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let h_row = g.slice(h0, 0, i, i + 1).expect("agent row");
                match self.embed_map_lines(a, map) {
                    None => h_row,
                    Some(lines) => {
                        let att = self.mha(h_row, lines, "map_attn");
                        g.add(h_row, att).expect("map residual")
                    }
                }
            })
            .collect();
        g.concat(&fused, 0).expect("embeddings")
    }

    /// K rounds of edge-MLP updates and node cross-attention over incoming
    /// edges. Isolated nodes pass through unchanged.
    pub fn message_pass(
        &self,
        h_in: NodeId,
        agents: &[AgentContext<Var<'g>>],
        edges: &[EdgeRef],
    ) -> NodeId {
        let g = self.graph();
        let mut h = h_in;
        if edges.is_empty() {
            return h;
        }
        let e_rows: Vec<NodeId> = edges
            .iter()
            .map(|e| {
                let f = edge_features(&agents[e.src], &agents[e.tgt]);
                let ids: Vec<NodeId> = f.iter().map(|v| v.id()).collect();
                g.concat(&ids, 1).expect("edge feature row")
            })
            .collect();
        let mut e = g.concat(&e_rows, 0).expect("edge features");

        let m = agents.len();
        for layer in 0..self.cfg.mp_layers {
            let hs: Vec<NodeId> = edges
                .iter()
                .map(|eg| g.slice(h, 0, eg.src, eg.src + 1).expect("src row"))
                .collect();
            let ht: Vec<NodeId> = edges
                .iter()
                .map(|eg| g.slice(h, 0, eg.tgt, eg.tgt + 1).expect("tgt row"))
                .collect();
            let hs = g.concat(&hs, 0).expect("src rows");
            let ht = g.concat(&ht, 0).expect("tgt rows");
            let cat = g.concat(&[hs, ht, e], 1).expect("edge input");
            let e_new = self.mlp2(cat, &format!("mp.{layer}.edge"));

            let mut new_rows = Vec::with_capacity(m);
            for j in 0..m {
                let h_row = g.slice(h, 0, j, j + 1).expect("node row");
                // Edges are sorted by target, so incoming edges are one
                // contiguous block.
                let start = edges.partition_point(|eg| eg.tgt < j);
                let end = edges.partition_point(|eg| eg.tgt <= j);
                if start == end {
                    new_rows.push(h_row);
                } else {
                    let kv = g.slice(e_new, 0, start, end).expect("incoming edges");
                    let att = self.mha(h_row, kv, &format!("mp.{layer}.attn"));
                    new_rows.push(g.add(h_row, att).expect("node residual"));
                }
            }
            h = g.concat(&new_rows, 0).expect("updated nodes");
            e = e_new;
        }
        h
    }

    /// Decode per-agent head outputs from embeddings `[M, d]`.
    pub fn decode(&self, h: NodeId, n_agents: usize) -> Vec<HeadOutput<'g>> {
        let g = self.graph();
        let out = self.mlp2(h, "head");
        (0..n_agents)
            .map(|i| {
                let row = g.slice(out, 0, i, i + 1).expect("head row");
                self.decode_row(row)
            })
            .collect()
    }

    fn decode_row(&self, row: NodeId) -> HeadOutput<'g> {
        let g = self.graph();
        let var_at = |j: usize| {
            let v = g.slice(row, 1, j, j + 1).expect("component");
            g.as_var(g.mul_c(v, self.cfg.action_gain))
        };
        let std_at = |j: usize| {
            let raw = g.slice(row, 1, j, j + 1).expect("component");
            g.as_var(g.add_c(g.softplus(raw), self.cfg.sigma_min))
        };
        match self.cfg.head {
            HeadKind::Deterministic => HeadOutput::Deterministic { mean: (var_at(0), var_at(1)) },
            HeadKind::Gaussian => HeadOutput::Gaussian {
                mean: (var_at(0), var_at(1)),
                std: (std_at(2), std_at(3)),
            },
            HeadKind::Gmm => {
                let c = self.cfg.gmm_components;
                let logits = g.slice(row, 1, 0, c).expect("logits");
                let w = g.softmax(logits, 1).expect("weights");
                let weights = (0..c)
                    .map(|k| g.as_var(g.slice(w, 1, k, k + 1).expect("weight")))
                    .collect();
                let means = (0..c).map(|k| (var_at(c + 4 * k), var_at(c + 4 * k + 1))).collect();
                let stds = (0..c).map(|k| (std_at(c + 4 * k + 2), std_at(c + 4 * k + 3))).collect();
                HeadOutput::Gmm { weights, means, stds }
            }
            HeadKind::Discriminator => {
                let logit = g.clamp(row, -15.0, 15.0);
                HeadOutput::Discriminator { score: g.as_var(g.sigmoid(logit)) }
            }
        }
    }

    /// Full forward pass for one multi-agent state.
    pub fn forward(
        &self,
        agents: &[AgentContext<Var<'g>>],
        map: &MapModel,
    ) -> Vec<HeadOutput<'g>> {
        let positions: Vec<(f64, f64)> = agents
            .iter()
            .map(|a| (a.pos[2].0.val(), a.pos[2].1.val()))
            .collect();
        let edges = build_graph(&positions, self.cfg.radius);
        let h = self.encode(agents, map);
        let h = self.message_pass(h, agents, &edges);
        self.decode(h, agents.len())
    }
}

/// Lift a plain-value context onto a graph as constants.
pub fn lift_context<'g>(g: &'g Graph, c: &AgentContext<f64>) -> AgentContext<Var<'g>> {
    AgentContext {
        kind: c.kind,
        length: c.length,
        width: c.width,
        pos: [
            (g.var(c.pos[0].0), g.var(c.pos[0].1)),
            (g.var(c.pos[1].0), g.var(c.pos[1].1)),
            (g.var(c.pos[2].0), g.var(c.pos[2].1)),
        ],
        heading: (g.var(c.heading.0), g.var(c.heading.1)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyNet;
    use crate::scene::{AgentKind, LineType, Polyline, DT};

    fn small_cfg(head: HeadKind) -> PolicyConfig {
        PolicyConfig {
            embed_dim: 16,
            heads: 2,
            mp_layers: 2,
            gmm_components: 3,
            radius: 75.0,
            sigma_min: 1e-3,
            action_gain: 10.0,
            head,
        }
    }

    fn ctx(x: f64, y: f64, vx: f64, vy: f64) -> AgentContext<f64> {
        let theta = vy.atan2(vx);
        AgentContext {
            kind: AgentKind::Car,
            length: 4.5,
            width: 1.9,
            pos: [(x - 2.0 * vx * DT, y - 2.0 * vy * DT), (x - vx * DT, y - vy * DT), (x, y)],
            heading: (theta.cos(), theta.sin()),
        }
    }

    fn empty_map() -> MapModel {
        MapModel::new("empty".into(), vec![], vec![]).unwrap()
    }

    fn road_map() -> MapModel {
        let lines = (0..3)
            .map(|j| Polyline {
                line_type: if j == 1 { LineType::Dashed } else { LineType::Solid },
                points: vec![(-100.0, j as f64 * 3.5), (400.0, j as f64 * 3.5)],
            })
            .collect();
        MapModel::new("road".into(), lines, vec![]).unwrap()
    }

    #[test]
    fn empty_map_leaves_embedding_unfused() {
        let net = PolicyNet::init(small_cfg(HeadKind::Deterministic), 0).unwrap();
        let g = Graph::new();
        let bp = net.bind(&g);
        let a = lift_context(&g, &ctx(10.0, 1.75, 20.0, 0.0));
        let h_with = bp.encode(&[a], &empty_map());
        // Reference: node MLP only.
        let f = node_features(&a);
        let ids: Vec<NodeId> = f.iter().map(|v| v.id()).collect();
        let row = g.concat(&ids, 1).unwrap();
        let h_plain = bp.mlp2(row, "node_mlp");
        assert_eq!(g.value(h_with).data(), g.value(h_plain).data());
    }

    #[test]
    fn duplicated_polylines_do_not_change_output() {
        let cfg = small_cfg(HeadKind::Deterministic);
        let net = PolicyNet::init(cfg, 1).unwrap();
        let map = road_map();
        let mut doubled_lines = map.polylines.clone();
        doubled_lines.extend(map.polylines.clone());
        let doubled = MapModel::new("road2".into(), doubled_lines, vec![]).unwrap();

        let run = |m: &MapModel| {
            let g = Graph::new();
            let bp = net.bind(&g);
            let a = lift_context(&g, &ctx(50.0, 1.75, 20.0, 0.0));
            let h = bp.encode(&[a], m);
            g.value(h).into_data()
        };
        let base = run(&map);
        let twice = run(&doubled);
        for (a, b) in base.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn permutation_equivariance() {
        let net = PolicyNet::init(small_cfg(HeadKind::Deterministic), 2).unwrap();
        let map = road_map();
        let scene = [ctx(10.0, 1.75, 20.0, 0.0), ctx(30.0, 5.25, 24.0, 0.0), ctx(55.0, 1.75, 22.0, 0.1)];
        let run = |order: &[usize]| {
            let g = Graph::new();
            let bp = net.bind(&g);
            let agents: Vec<_> = order.iter().map(|&i| lift_context(&g, &scene[i])).collect();
            let outs = bp.forward(&agents, &map);
            outs.iter()
                .map(|o| {
                    let m = o.mean_action().unwrap();
                    (m.0.val(), m.1.val())
                })
                .collect::<Vec<_>>()
        };
        let base = run(&[0, 1, 2]);
        let perm = run(&[2, 0, 1]);
        for (i, &j) in [2usize, 0, 1].iter().enumerate() {
            assert!((base[j].0 - perm[i].0).abs() < 1e-9);
            assert!((base[j].1 - perm[i].1).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_agents_identical_outputs() {
        let net = PolicyNet::init(small_cfg(HeadKind::Deterministic), 3).unwrap();
        let g = Graph::new();
        let bp = net.bind(&g);
        // Two agents far apart (no edge) with identical local situations.
        let a = lift_context(&g, &ctx(10.0, 1.75, 20.0, 0.0));
        let b = lift_context(&g, &ctx(810.0, 1.75, 20.0, 0.0));
        let outs = bp.forward(&[a, b], &empty_map());
        let ma = outs[0].mean_action().unwrap();
        let mb = outs[1].mean_action().unwrap();
        assert!((ma.0.val() - mb.0.val()).abs() < 1e-12);
        assert!((ma.1.val() - mb.1.val()).abs() < 1e-12);
    }

    #[test]
    fn no_edges_leaves_nodes_unchanged() {
        let net = PolicyNet::init(small_cfg(HeadKind::Deterministic), 4).unwrap();
        let g = Graph::new();
        let bp = net.bind(&g);
        let a = lift_context(&g, &ctx(0.0, 0.0, 20.0, 0.0));
        let h = bp.encode(&[a], &empty_map());
        let h2 = bp.message_pass(h, &[a], &[]);
        assert_eq!(g.value(h).data(), g.value(h2).data());
    }

    #[test]
    fn gradient_flows_across_edges() {
        let net = PolicyNet::init(small_cfg(HeadKind::Deterministic), 5).unwrap();
        let g = Graph::new();
        let bp = net.bind(&g);
        // Source agent position as a leaf so we can check its gradient.
        let mut c0 = lift_context(&g, &ctx(10.0, 1.75, 20.0, 0.0));
        let px = g.var_leaf(10.0);
        c0.pos[2] = (px, c0.pos[2].1);
        let c1 = lift_context(&g, &ctx(30.0, 5.25, 24.0, 0.0));
        let outs = bp.forward(&[c0, c1], &empty_map());
        // Output of the *other* agent must depend on this agent's position.
        let m1 = outs[1].mean_action().unwrap();
        g.backward(m1.0.id()).unwrap();
        let grad = g.grad(px.id()).map_or(0.0, |t| t.item());
        assert!(grad.abs() > 1e-12, "no gradient across edge");
    }

    #[test]
    fn zeroed_head_gaussian_defaults() {
        let mut net = PolicyNet::init(small_cfg(HeadKind::Gaussian), 6).unwrap();
        for name in ["head.0.w", "head.0.b", "head.1.w", "head.1.b"] {
            let t = net.params.get(name).clone();
            *net.params.get_mut(name) = Tensor::zeros(t.rows(), t.cols());
        }
        let g = Graph::new();
        let bp = net.bind(&g);
        let a = lift_context(&g, &ctx(0.0, 0.0, 20.0, 0.0));
        let outs = bp.forward(&[a], &empty_map());
        let HeadOutput::Gaussian { mean, std } = &outs[0] else { panic!("head") };
        assert_eq!(mean.0.val(), 0.0);
        assert_eq!(mean.1.val(), 0.0);
        let expect = (2.0f64).ln() + 1e-3;
        assert!((std.0.val() - expect).abs() < 1e-12);
        assert!((std.1.val() - expect).abs() < 1e-12, "{}", std.1.val());
    }

    #[test]
    fn gmm_equal_logits_uniform_weights() {
        let mut net = PolicyNet::init(small_cfg(HeadKind::Gmm), 7).unwrap();
        for name in ["head.1.w", "head.1.b"] {
            let t = net.params.get(name).clone();
            *net.params.get_mut(name) = Tensor::zeros(t.rows(), t.cols());
        }
        let g = Graph::new();
        let bp = net.bind(&g);
        let a = lift_context(&g, &ctx(0.0, 0.0, 20.0, 0.0));
        let outs = bp.forward(&[a], &empty_map());
        let HeadOutput::Gmm { weights, .. } = &outs[0] else { panic!("head") };
        for w in weights {
            assert!((w.val() - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn discriminator_score_in_unit_interval() {
        let net = PolicyNet::init(small_cfg(HeadKind::Discriminator), 8).unwrap();
        for k in 0..100 {
            let g = Graph::new();
            let bp = net.bind(&g);
            let a = lift_context(
                &g,
                &ctx(k as f64 * 13.7 % 200.0, (k as f64 * 0.37).sin() * 7.0, 15.0 + (k % 17) as f64, (k as f64 * 0.11).cos()),
            );
            let outs = bp.forward(&[a], &empty_map());
            let s = outs[0].score().unwrap().val();
            assert!((0.0..=1.0).contains(&s), "score {s}");
        }
    }

    #[test]
    fn gaussian_sample_zero_noise_is_mean() {
        let net = PolicyNet::init(small_cfg(HeadKind::Gaussian), 9).unwrap();
        let g = Graph::new();
        let bp = net.bind(&g);
        let a = lift_context(&g, &ctx(5.0, 0.0, 20.0, 0.0));
        let outs = bp.forward(&[a], &empty_map());
        let m = outs[0].mean_action().unwrap();
        let s = outs[0].sample((0.0, 0.0), 0.5).unwrap();
        assert_eq!(m.0.val(), s.0.val());
        assert_eq!(m.1.val(), s.1.val());
    }

    #[test]
    fn sample_gradient_to_mean_is_identity() {
        let g = Graph::new();
        let mx = g.var_leaf(1.2);
        let my = g.var_leaf(-0.3);
        let out = HeadOutput::Gaussian {
            mean: (mx, my),
            std: (g.var_leaf(0.5), g.var_leaf(0.8)),
        };
        let s = out.sample((0.3, -0.7), 0.5).unwrap();
        g.backward(s.0.id()).unwrap();
        assert_eq!(g.grad(mx.id()).unwrap().item(), 1.0);
        assert!(g.grad(my.id()).is_none() || g.grad(my.id()).unwrap().item() == 0.0);
    }

    #[test]
    fn deterministic_head_rejects_sampling() {
        let net = PolicyNet::init(small_cfg(HeadKind::Deterministic), 11).unwrap();
        let g = Graph::new();
        let bp = net.bind(&g);
        let a = lift_context(&g, &ctx(5.0, 0.0, 20.0, 0.0));
        let outs = bp.forward(&[a], &empty_map());
        assert!(outs[0].sample((0.0, 0.0), 0.5).is_err());
    }

    #[test]
    fn gmm_single_component_matches_gaussian_sampling() {
        let cfg = PolicyConfig { gmm_components: 1, head: HeadKind::Gmm, ..small_cfg(HeadKind::Gmm) };
        let net = PolicyNet::init(cfg, 12).unwrap();
        let g = Graph::new();
        let bp = net.bind(&g);
        let a = lift_context(&g, &ctx(5.0, 0.0, 20.0, 0.0));
        let outs = bp.forward(&[a], &empty_map());
        let HeadOutput::Gmm { weights, means, stds } = &outs[0] else { panic!() };
        assert_eq!(weights.len(), 1);
        assert!((weights[0].val() - 1.0).abs() < 1e-12);
        let s = outs[0].sample((0.4, 0.6), 0.99).unwrap();
        let expect = (
            means[0].0.val() + stds[0].0.val() * 0.4,
            means[0].1.val() + stds[0].1.val() * 0.6,
        );
        assert!((s.0.val() - expect.0).abs() < 1e-12);
        assert!((s.1.val() - expect.1).abs() < 1e-12);
    }
}
