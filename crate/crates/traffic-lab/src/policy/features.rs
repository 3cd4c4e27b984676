//! Node, edge and map features. All of them are differentiable functions of
//! agent positions/headings and are invariant under global rigid motion.

use crate::autodiff::{Real, Tensor};
use crate::geometry::{rotate_to_local, time_to_collision, to_local, Pose2D};
use crate::scene::{AgentKind, LineType, DT};

pub const NODE_FEATURES: usize = 6;
/// distance (1) + velocity difference (2) + position history t-2..t (6) +
/// heading difference cos/sin (2) + time-to-collision (1).
pub const EDGE_FEATURES: usize = 12;
/// local x, y (2) + sinusoidal index embedding (8) + line type one-hot (2).
pub const POINT_FEATURES: usize = 12;
const POS_EMB_FREQS: usize = 4;

/// Everything the feature extractors need to know about one agent at one
/// tick: a 3-frame position history, the current heading and static
/// attributes. Positions/heading are graph scalars during differentiable
/// rollouts and plain `f64` otherwise.
#[derive(Debug, Clone, Copy)]
pub struct AgentContext<R> {
    pub kind: AgentKind,
    pub length: f64,
    pub width: f64,
    /// Global positions at ticks `[t-2, t-1, t]`.
    pub pos: [(R, R); 3],
    /// Heading unit vector at tick `t`.
    pub heading: (R, R),
}

/// Tiny offset under the square root so speeds are differentiable at
/// standstill.
const SPEED_EPS: f64 = 1e-12;

impl<R: Real> AgentContext<R> {
    pub fn frame(&self) -> Pose2D<R> {
        Pose2D { x: self.pos[2].0, y: self.pos[2].1, hx: self.heading.0, hy: self.heading.1 }
    }

    /// Velocity at tick t from the latest displacement.
    pub fn velocity(&self) -> (R, R) {
        let inv_dt = 1.0 / DT;
        let (p1, p2) = (self.pos[1], self.pos[2]);
        ((p2.0 - p1.0) * p2.0.lift(inv_dt), (p2.1 - p1.1) * p2.0.lift(inv_dt))
    }

    fn speed_between(&self, a: usize, b: usize) -> R {
        let dx = self.pos[b].0 - self.pos[a].0;
        let dy = self.pos[b].1 - self.pos[a].1;
        ((dx * dx + dy * dy + dx.lift(SPEED_EPS)).sqrt()) * dx.lift(1.0 / DT)
    }

    pub fn speed(&self) -> R {
        self.speed_between(1, 2)
    }
}

/// Typical magnitudes used to bring features into unit range before the
/// (tanh) encoders. Purely a conditioning device; the values themselves stay
/// rigid-motion invariant.
pub mod scales {
    pub const SPEED: f64 = 30.0;
    pub const ACCEL: f64 = 5.0;
    pub const SIZE: f64 = 10.0;
    pub const RANGE: f64 = 75.0;
    pub const TTC: f64 = 10.0;
    pub const MAP: f64 = 60.0;
}

/// Per-agent features: speed, signed longitudinal acceleration, type one-hot,
/// length, width (unit-scaled).
pub fn node_features<R: Real>(a: &AgentContext<R>) -> [R; NODE_FEATURES] {
    let speed = a.speed();
    let prev_speed = a.speed_between(0, 1);
    let accel = (speed - prev_speed) * speed.lift(1.0 / DT);
    let (car, truck) = match a.kind {
        AgentKind::Car => (1.0, 0.0),
        AgentKind::Truck => (0.0, 1.0),
    };
    [
        speed * speed.lift(1.0 / scales::SPEED),
        accel * speed.lift(1.0 / scales::ACCEL),
        speed.lift(car),
        speed.lift(truck),
        speed.lift(a.length / scales::SIZE),
        speed.lift(a.width / scales::SIZE),
    ]
}

/// Directed pair features for `src -> tgt`, all expressed in the target
/// agent's current frame.
pub fn edge_features<R: Real>(src: &AgentContext<R>, tgt: &AgentContext<R>) -> [R; EDGE_FEATURES] {
    let tgt_frame = tgt.frame();
    let dx = src.pos[2].0 - tgt.pos[2].0;
    let dy = src.pos[2].1 - tgt.pos[2].1;
    let dist = (dx * dx + dy * dy + dx.lift(SPEED_EPS)).sqrt();

    let sv = src.velocity();
    let tv = tgt.velocity();
    let dvel = rotate_to_local((sv.0 - tv.0, sv.1 - tv.1), &tgt_frame);

    let h0 = to_local(src.pos[0], &tgt_frame);
    let h1 = to_local(src.pos[1], &tgt_frame);
    let h2 = to_local(src.pos[2], &tgt_frame);

    // cos/sin of the heading difference (source minus target).
    let cos_d = src.heading.0 * tgt.heading.0 + src.heading.1 * tgt.heading.1;
    let sin_d = src.heading.1 * tgt.heading.0 - src.heading.0 * tgt.heading.1;

    let ttc = time_to_collision(src.pos[2], sv, tgt.pos[2], tv);

    let r = 1.0 / scales::RANGE;
    let v = 1.0 / scales::SPEED;
    [
        dist * dist.lift(r),
        dvel.0 * dist.lift(v),
        dvel.1 * dist.lift(v),
        h0.0 * dist.lift(r),
        h0.1 * dist.lift(r),
        h1.0 * dist.lift(r),
        h1.1 * dist.lift(r),
        h2.0 * dist.lift(r),
        h2.1 * dist.lift(r),
        cos_d,
        sin_d,
        ttc * dist.lift(1.0 / scales::TTC),
    ]
}

/// A directed interaction edge between agent slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRef {
    pub src: usize,
    pub tgt: usize,
}

/// Locally connected interaction graph: an edge `src -> tgt` for every
/// ordered pair closer than `radius`, sorted by (tgt, src).
pub fn build_graph(positions: &[(f64, f64)], radius: f64) -> Vec<EdgeRef> {
    let mut edges = Vec::new();
    for tgt in 0..positions.len() {
        for src in 0..positions.len() {
            if src == tgt {
                continue;
            }
            let dx = positions[src].0 - positions[tgt].0;
            let dy = positions[src].1 - positions[tgt].1;
            if (dx * dx + dy * dy).sqrt() < radius {
                edges.push(EdgeRef { src, tgt });
            }
        }
    }
    edges
}

/// The constant part of a segment's point features: sinusoidal embedding of
/// the point index plus the line-type one-hot. Shape `[10, 10]`.
pub fn polyline_const_features(line_type: LineType, n_points: usize) -> Tensor {
    let emb_dim = 2 * POS_EMB_FREQS + 2;
    let mut data = Vec::with_capacity(n_points * emb_dim);
    for p in 0..n_points {
        for k in 0..POS_EMB_FREQS {
            let omega = 1.0 / 100f64.powf(k as f64 / POS_EMB_FREQS as f64);
            data.push((p as f64 * omega).sin());
            data.push((p as f64 * omega).cos());
        }
        match line_type {
            LineType::Solid => data.extend([1.0, 0.0]),
            LineType::Dashed => data.extend([0.0, 1.0]),
        }
    }
    Tensor::new(n_points, emb_dim, data).expect("embedding shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SEGMENT_POINTS;

    fn ctx(x: f64, y: f64, vx: f64, vy: f64, theta: f64) -> AgentContext<f64> {
        AgentContext {
            kind: AgentKind::Car,
            length: 4.5,
            width: 1.9,
            pos: [
                (x - 2.0 * vx * DT, y - 2.0 * vy * DT),
                (x - vx * DT, y - vy * DT),
                (x, y),
            ],
            heading: (theta.cos(), theta.sin()),
        }
    }

    #[test]
    fn node_features_recover_speed_and_accel() {
        let a = ctx(100.0, 5.0, 20.0, 0.0, 0.0);
        let f = node_features(&a);
        assert!((f[0] - 20.0 / scales::SPEED).abs() < 1e-6);
        assert!(f[1].abs() < 1e-6);
        assert_eq!(&f[2..6], &[1.0, 0.0, 0.45, 0.19]);
    }

    #[test]
    fn features_are_rigid_motion_invariant() {
        let a = ctx(10.0, 5.0, 18.0, 0.5, 0.05);
        let b = ctx(40.0, 8.5, 22.0, -0.3, -0.1);
        let base_n = node_features(&a);
        let base_e = edge_features(&a, &b);

        let (ct, st) = (1.1f64.cos(), 1.1f64.sin());
        let mov = |p: (f64, f64)| (p.0 * ct - p.1 * st + 300.0, p.0 * st + p.1 * ct - 120.0);
        let rot = |v: (f64, f64)| (v.0 * ct - v.1 * st, v.0 * st + v.1 * ct);
        let transform = |c: &AgentContext<f64>| AgentContext {
            pos: [mov(c.pos[0]), mov(c.pos[1]), mov(c.pos[2])],
            heading: rot(c.heading),
            ..*c
        };
        let (a2, b2) = (transform(&a), transform(&b));
        for (x, y) in node_features(&a2).iter().zip(base_n.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in edge_features(&a2, &b2).iter().zip(base_e.iter()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn interaction_graph_radius_rule() {
        let edges = build_graph(&[(0.0, 0.0), (10.0, 0.0)], 75.0);
        assert_eq!(
            edges,
            vec![EdgeRef { src: 1, tgt: 0 }, EdgeRef { src: 0, tgt: 1 }]
        );
        assert!(build_graph(&[(0.0, 0.0), (100.0, 0.0)], 75.0).is_empty());
        assert!(build_graph(&[(0.0, 0.0)], 75.0).is_empty());
    }

    #[test]
    fn edges_sorted_by_target_then_source() {
        let edges = build_graph(&[(0.0, 0.0), (5.0, 0.0), (10.0, 0.0)], 75.0);
        let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.tgt, e.src)).collect();
        let mut sorted = pairs.clone();
        sorted.sort_unstable();
        assert_eq!(pairs, sorted);
    }

    #[test]
    fn polyline_const_shape() {
        let t = polyline_const_features(LineType::Dashed, SEGMENT_POINTS);
        assert_eq!(t.shape(), [SEGMENT_POINTS, POINT_FEATURES - 2]);
    }
}
