//! Rule-based driving: IDM car-following with MOBIL lane-change decisions.
//!
//! Serves two roles: the comparison row in evaluations, and the driver behind
//! the synthetic highway data generator.

use serde::{Deserialize, Serialize};

/// Hard lower bound on commanded acceleration.
pub const IDM_MIN_ACCEL: f64 = -9.0;

/// Car-following parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed (m/s).
    pub v0: f64,
    /// Time headway (s).
    pub t_headway: f64,
    /// Minimum standstill gap (m).
    pub s0: f64,
    /// Maximum acceleration (m/s^2).
    pub a_max: f64,
    /// Comfortable deceleration (m/s^2).
    pub b_comfort: f64,
    /// Free-road exponent.
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            v0: 30.0,
            t_headway: 1.6,
            s0: 2.0,
            a_max: 0.73,
            b_comfort: 1.67,
            delta: 4.0,
        }
    }
}

/// Lane-change decision parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MobilParams {
    /// Politeness factor weighting the followers' gains.
    pub politeness: f64,
    /// Acceleration-gain threshold (m/s^2) a change must exceed.
    pub accel_gain_threshold: f64,
    /// Safe braking limit (m/s^2) imposed on the new follower.
    pub b_safe: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        MobilParams { politeness: 0.3, accel_gain_threshold: 0.1, b_safe: 4.0 }
    }
}

/// IDM acceleration. `gap` is the net (bumper-to-bumper) distance to the
/// leader, `None` on a free road; `closing` is `v_ego - v_leader`.
pub fn idm_accel(v: f64, gap: Option<f64>, closing: f64, p: &IdmParams) -> f64 {
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let a = match gap {
        None => p.a_max * free,
        Some(s) => {
            let s = s.max(1e-6);
            let s_star = p.s0
                + (v * p.t_headway + v * closing / (2.0 * (p.a_max * p.b_comfort).sqrt())).max(0.0);
            p.a_max * (free - (s_star / s).powi(2))
        }
    };
    a.max(IDM_MIN_ACCEL)
}

/// A neighboring vehicle seen along the lane centerline. Gaps are net
/// distances to the ego vehicle's projected position in that lane.
#[derive(Debug, Clone, Copy)]
pub struct Neighbor {
    pub gap: f64,
    pub speed: f64,
}

/// What the ego vehicle sees in one lane.
#[derive(Debug, Clone, Copy, Default)]
pub struct LaneView {
    pub leader: Option<Neighbor>,
    pub follower: Option<Neighbor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneDecision {
    Stay,
    Change,
}

/// MOBIL incentive/safety criterion. Returns `Change` iff the new follower
/// can stay above `-b_safe` and the politeness-weighted acceleration gain
/// exceeds the threshold.
pub fn mobil_decide(
    ego_speed: f64,
    ego_length: f64,
    current: &LaneView,
    target: &LaneView,
    idm: &IdmParams,
    p: &MobilParams,
) -> LaneDecision {
    let accel = |v: f64, leader: Option<Neighbor>| {
        idm_accel(v, leader.map(|n| n.gap), leader.map_or(0.0, |n| v - n.speed), idm)
    };

    let a_ego_old = accel(ego_speed, current.leader);
    let a_ego_new = accel(ego_speed, target.leader);

    // New follower: currently follows the target-lane leader across the slot
    // the ego would occupy; afterwards it follows the ego.
    let (a_nf_old, a_nf_new) = match target.follower {
        None => (0.0, 0.0),
        Some(f) => {
            let old_leader = target.leader.map(|l| Neighbor {
                gap: f.gap + ego_length + l.gap,
                speed: l.speed,
            });
            (
                accel(f.speed, old_leader),
                accel(f.speed, Some(Neighbor { gap: f.gap, speed: ego_speed })),
            )
        }
    };

    // Old follower: currently follows the ego; afterwards the current leader.
    let (a_of_old, a_of_new) = match current.follower {
        None => (0.0, 0.0),
        Some(f) => {
            let new_leader = current.leader.map(|l| Neighbor {
                gap: f.gap + ego_length + l.gap,
                speed: l.speed,
            });
            (
                accel(f.speed, Some(Neighbor { gap: f.gap, speed: ego_speed })),
                accel(f.speed, new_leader),
            )
        }
    };

    if target.follower.is_some() && a_nf_new < -p.b_safe {
        return LaneDecision::Stay;
    }
    let gain =
        a_ego_new - a_ego_old + p.politeness * ((a_nf_new - a_nf_old) + (a_of_new - a_of_old));
    if gain > p.accel_gain_threshold {
        LaneDecision::Change
    } else {
        LaneDecision::Stay
    }
}

/// Equilibrium platoon gap for speed `v`: the net distance at which IDM
/// acceleration is exactly zero.
pub fn idm_equilibrium_gap(v: f64, p: &IdmParams) -> f64 {
    let s_star = p.s0 + v * p.t_headway;
    s_star / (1.0 - (v / p.v0).powf(p.delta)).sqrt()
}

// ---------------------------------------------------------------------------
// Lane-locked highway simulation
// ---------------------------------------------------------------------------

/// Duration of the lateral blend during a lane change.
pub const LANE_CHANGE_DURATION: f64 = 3.0;
/// Minimum time between lane-change decisions of one vehicle.
const LANE_CHANGE_COOLDOWN: f64 = 5.0;
/// How often lane-change decisions are evaluated.
const DECISION_PERIOD: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct SimVehicle {
    pub id: u64,
    pub is_truck: bool,
    pub length: f64,
    pub width: f64,
    /// Current lane index (the target lane once a change starts).
    pub lane: usize,
    /// Longitudinal center position (m).
    pub x: f64,
    /// Longitudinal speed (m/s).
    pub v: f64,
    /// Per-vehicle desired speed.
    pub idm: IdmParams,
    /// In-progress lane change: (from-lane y, to-lane y, elapsed s).
    pub blend: Option<(f64, f64, f64)>,
    /// Current lateral position (m).
    pub y: f64,
    cooldown: f64,
    decision_timer: f64,
}

impl SimVehicle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u64,
        is_truck: bool,
        length: f64,
        width: f64,
        lane: usize,
        x: f64,
        y: f64,
        v: f64,
        idm: IdmParams,
    ) -> Self {
        SimVehicle {
            id,
            is_truck,
            length,
            width,
            lane,
            x,
            v,
            idm,
            blend: None,
            y,
            cooldown: 0.0,
            decision_timer: 0.0,
        }
    }
}

/// Straight multi-lane road, lanes parallel to +x. Lane index 0 may be an
/// on-ramp that ends at `ramp_end_x`.
#[derive(Debug, Clone)]
pub struct RoadSpec {
    pub lane_centers_y: Vec<f64>,
    pub ramp_lane: Option<usize>,
    pub ramp_end_x: f64,
    pub length: f64,
}

impl RoadSpec {
    pub fn lane_exists_at(&self, lane: usize, x: f64) -> bool {
        match self.ramp_lane {
            Some(r) if r == lane => x <= self.ramp_end_x,
            _ => true,
        }
    }
}

/// One recorded frame of one vehicle.
#[derive(Debug, Clone, Copy)]
pub struct SimFrame {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
}

fn blend_fraction(elapsed: f64) -> f64 {
    // Logistic profile rescaled to start at exactly 0 and end at exactly 1.
    let u = (elapsed / LANE_CHANGE_DURATION).clamp(0.0, 1.0);
    let s = |z: f64| 1.0 / (1.0 + (-z).exp());
    let lo = s(-4.0);
    let hi = s(4.0);
    ((s(8.0 * (u - 0.5)) - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Advance the whole scene by `dt`, returning per-vehicle frames after the
/// step. Deterministic: vehicles are processed in id order against the frozen
/// previous state.
pub fn step_highway(
    vehicles: &mut [SimVehicle],
    road: &RoadSpec,
    mobil: &MobilParams,
    dt: f64,
) -> Vec<SimFrame> {
    let snapshot: Vec<(u64, usize, f64, f64, f64, f64, f64)> = vehicles
        .iter()
        .map(|v| (v.id, v.lane, v.x, v.v, v.length, v.y, v.width))
        .collect();

    let view_in_lane = |ego: &SimVehicle, lane: usize| -> LaneView {
        let lane_y = road.lane_centers_y[lane];
        let mut view = LaneView::default();
        for &(id, vlane, x, v, len, y, width) in &snapshot {
            // A vehicle blocks a lane when assigned to it or while its body
            // still laterally overlaps it mid-blend.
            let occupies = vlane == lane || (y - lane_y).abs() < (3.5 + width) / 2.0 - 0.2;
            if id == ego.id || !occupies {
                continue;
            }
            if x >= ego.x {
                let gap = (x - ego.x - (len + ego.length) / 2.0).max(0.0);
                if view.leader.map_or(true, |l| gap < l.gap) {
                    view.leader = Some(Neighbor { gap, speed: v });
                }
            } else {
                let gap = (ego.x - x - (len + ego.length) / 2.0).max(0.0);
                if view.follower.map_or(true, |f| gap < f.gap) {
                    view.follower = Some(Neighbor { gap, speed: v });
                }
            }
        }
        view
    };

    let mut frames = Vec::with_capacity(vehicles.len());
    for i in 0..vehicles.len() {
        let (decision, target_lane) = {
            let ego = &vehicles[i];
            let mut decision = LaneDecision::Stay;
            let mut target_lane = ego.lane;
            let on_ramp = road.ramp_lane == Some(ego.lane);
            if ego.blend.is_none() && ego.cooldown <= 0.0 && ego.decision_timer <= 0.0 {
                let current = view_in_lane(ego, ego.lane);
                let mut candidates: Vec<usize> = Vec::new();
                if on_ramp {
                    candidates.push(ego.lane + 1);
                } else {
                    if ego.lane + 1 < road.lane_centers_y.len() {
                        candidates.push(ego.lane + 1);
                    }
                    if ego.lane > 0 && road.ramp_lane != Some(ego.lane - 1) {
                        candidates.push(ego.lane - 1);
                    }
                }
                for cand in candidates {
                    let target = view_in_lane(ego, cand);
                    let ok = if on_ramp {
                        // Mandatory merge: safety criterion only.
                        target.follower.map_or(true, |f| {
                            idm_accel(f.speed, Some(f.gap), f.speed - ego.v, &ego.idm)
                                >= -mobil.b_safe
                        }) && target.leader.map_or(true, |l| l.gap > ego.idm.s0)
                    } else {
                        mobil_decide(ego.v, ego.length, &current, &target, &ego.idm, mobil)
                            == LaneDecision::Change
                    };
                    if ok {
                        decision = LaneDecision::Change;
                        target_lane = cand;
                        break;
                    }
                }
            }
            (decision, target_lane)
        };

        let ego = &mut vehicles[i];
        ego.decision_timer -= dt;
        if ego.decision_timer <= 0.0 {
            ego.decision_timer += DECISION_PERIOD;
        }
        ego.cooldown = (ego.cooldown - dt).max(0.0);
        if decision == LaneDecision::Change {
            ego.blend = Some((ego.y, road.lane_centers_y[target_lane], 0.0));
            ego.lane = target_lane;
            ego.cooldown = LANE_CHANGE_COOLDOWN + LANE_CHANGE_DURATION;
        }

        // Longitudinal update against the frozen snapshot.
        let view = view_in_lane(ego, ego.lane);
        let mut leader = view.leader;
        if road.ramp_lane == Some(ego.lane) {
            // The ramp end acts as a standing obstacle.
            let end_gap = (road.ramp_end_x - ego.x - ego.length / 2.0).max(0.0);
            if leader.map_or(true, |l| end_gap < l.gap) {
                leader = Some(Neighbor { gap: end_gap, speed: 0.0 });
            }
        }
        let a = idm_accel(ego.v, leader.map(|l| l.gap), leader.map_or(0.0, |l| ego.v - l.speed), &ego.idm);
        let v_new = (ego.v + a * dt).max(0.0);
        ego.x += v_new * dt;
        ego.v = v_new;

        let mut vy = 0.0;
        if let Some((from_y, to_y, elapsed)) = ego.blend {
            let t_next = elapsed + dt;
            let y_prev = from_y + (to_y - from_y) * blend_fraction(elapsed);
            let y_next = from_y + (to_y - from_y) * blend_fraction(t_next);
            ego.y = y_next;
            vy = (y_next - y_prev) / dt;
            ego.blend = if t_next >= LANE_CHANGE_DURATION {
                ego.y = to_y;
                None
            } else {
                Some((from_y, to_y, t_next))
            };
        }

        frames.push(SimFrame { x: ego.x, y: ego.y, vx: ego.v, vy, ax: a });
    }
    frames
}

// ---------------------------------------------------------------------------
// Baseline as a traffic policy over recorded rollouts
// ---------------------------------------------------------------------------

use crate::geometry::Pose2D;
use crate::scene::{MapModel, Rollout, DT, ROLLOUT_STEPS};

/// Recover a straight-lane road description from a map's drivable polygons
/// (lanes parallel to +x; a clearly shorter polygon is treated as an on-ramp).
pub fn road_from_map(map: &MapModel) -> Option<RoadSpec> {
    if map.drivable_polygons.is_empty() {
        return None;
    }
    struct LaneBox {
        y_center: f64,
        x_max: f64,
    }
    let mut lanes: Vec<LaneBox> = map
        .drivable_polygons
        .iter()
        .map(|poly| {
            let ys: Vec<f64> = poly.iter().map(|p| p.1).collect();
            let xs: Vec<f64> = poly.iter().map(|p| p.0).collect();
            LaneBox {
                y_center: (ys.iter().cloned().fold(f64::INFINITY, f64::min)
                    + ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                    / 2.0,
                x_max: xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    lanes.sort_by(|a, b| a.y_center.partial_cmp(&b.y_center).unwrap());
    let longest = lanes.iter().map(|l| l.x_max).fold(f64::NEG_INFINITY, f64::max);
    let ramp_lane = lanes
        .iter()
        .position(|l| l.x_max < 0.8 * longest)
        .filter(|_| lanes.len() > 1);
    Some(RoadSpec {
        lane_centers_y: lanes.iter().map(|l| l.y_center).collect(),
        ramp_end_x: ramp_lane.map_or(f64::INFINITY, |i| lanes[i].x_max),
        ramp_lane,
        length: longest,
    })
}

fn nearest_lane(road: &RoadSpec, y: f64) -> usize {
    road.lane_centers_y
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| (*a - y).abs().partial_cmp(&(*b - y).abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0)
}

const BASELINE_SUBSTEPS: usize = 5;

/// Drive the controlled agents of a rollout with IDM+MOBIL while everything
/// else replays, producing a generated rollout for the shared evaluator.
/// Assumes a straight road along +x (the synthetic map family).
pub fn drive_rollout(
    rollout: &Rollout,
    map: &MapModel,
    idm: &IdmParams,
    mobil: &MobilParams,
) -> Rollout {
    let road = road_from_map(map).unwrap_or(RoadSpec {
        lane_centers_y: vec![0.0],
        ramp_lane: None,
        ramp_end_x: f64::INFINITY,
        length: f64::INFINITY,
    });
    let mut out = rollout.clone();
    out.generated = true;

    // Live vehicle state per agent once it becomes controlled.
    let mut live: Vec<Option<SimVehicle>> = vec![None; rollout.agents.len()];
    let dt = DT / BASELINE_SUBSTEPS as f64;

    for t in 0..ROLLOUT_STEPS {
        // Activate agents that become controlled at this step.
        for (i, a) in rollout.agents.iter().enumerate() {
            if a.controlled_at(t) && live[i].is_none() {
                let p = out.agents[i].pose_at(t).copied().expect("controlled implies present");
                let prev = out.agents[i].pose_at(t.saturating_sub(1)).copied().unwrap_or(p);
                let v = ((p.x - prev.x).powi(2) + (p.y - prev.y).powi(2)).sqrt() / DT;
                let lane = nearest_lane(&road, p.y);
                let mut veh = SimVehicle::new(
                    i as u64,
                    a.kind == crate::scene::AgentKind::Truck,
                    a.length,
                    a.width,
                    lane,
                    p.x,
                    p.y,
                    v,
                    IdmParams { v0: idm.v0.max(v), ..*idm },
                );
                // Snap mid-change starts into a lateral blend.
                if (p.y - road.lane_centers_y[lane]).abs() > 0.3 {
                    veh.blend = Some((p.y, road.lane_centers_y[lane], 0.0));
                }
                live[i] = Some(veh);
            }
        }

        for _ in 0..BASELINE_SUBSTEPS {
            // Snapshot: controlled vehicles at live state, others at tick t.
            let mut vehicles: Vec<SimVehicle> = Vec::new();
            let mut owner: Vec<usize> = Vec::new();
            for (i, a) in rollout.agents.iter().enumerate() {
                if a.controlled_at(t) {
                    let v = live[i].clone().expect("activated");
                    owner.push(i);
                    vehicles.push(v);
                } else if let Some(p) = out.agents[i].pose_at(t) {
                    let vel = out.agents[i].velocity_at(t).unwrap_or((0.0, 0.0));
                    vehicles.push(SimVehicle::new(
                        1_000_000 + i as u64,
                        false,
                        a.length,
                        a.width,
                        nearest_lane(&road, p.y),
                        p.x,
                        p.y,
                        vel.0.hypot(vel.1),
                        *idm,
                    ));
                }
            }
            step_highway(&mut vehicles, &road, mobil, dt);
            for (slot, &i) in owner.iter().enumerate() {
                live[i] = Some(vehicles[slot].clone());
            }
        }

        // Commit tick t+1 for controlled agents.
        for (i, a) in rollout.agents.iter().enumerate() {
            if !a.controlled_at(t) {
                continue;
            }
            let veh = live[i].as_ref().expect("activated");
            let prev = *out.agents[i].pose_at(t).expect("present");
            let (dx, dy) = (veh.x - prev.x, veh.y - prev.y);
            let heading = if dx.hypot(dy) > 1e-6 {
                let n = dx.hypot(dy);
                (dx / n, dy / n)
            } else {
                (prev.hx, prev.hy)
            };
            let k = t + 1 - out.agents[i].first_tick;
            out.agents[i].poses[k] =
                Pose2D { x: veh.x, y: veh.y, hx: heading.0, hy: heading.1 };
            out.agents[i].velocities[k] = (dx / DT, dy / DT);
        }
    }

    // Re-derive actions from the final positions.
    for a in &mut out.agents {
        a.actions = a
            .poses
            .windows(2)
            .map(|w| crate::geometry::to_local((w[1].x, w[1].y), &w[0]))
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idm_equilibrium_speed_zero_accel() {
        let p = IdmParams::default();
        assert!(idm_accel(p.v0, None, 0.0, &p).abs() < 1e-12);
    }

    #[test]
    fn idm_standstill_launch() {
        let p = IdmParams::default();
        assert!((idm_accel(0.0, None, 0.0, &p) - p.a_max).abs() < 1e-12);
    }

    #[test]
    fn idm_hand_example() {
        // Direct evaluation of the car-following formula:
        // s* = 2 + 20*1.6 = 34, a = 0.73 * (1 - (20/30)^4 - (34/30)^2).
        let p = IdmParams { v0: 30.0, t_headway: 1.6, s0: 2.0, a_max: 0.73, b_comfort: 1.67, delta: 4.0 };
        let expect = 0.73 * (1.0 - (20.0f64 / 30.0).powi(4) - (34.0f64 / 30.0).powi(2));
        let got = idm_accel(20.0, Some(30.0), 0.0, &p);
        assert!((got - expect).abs() < 1e-12, "got {got}, expect {expect}");
        assert!((got + 0.3518).abs() < 0.01);
    }

    #[test]
    fn idm_clamps_hard_braking() {
        let p = IdmParams::default();
        let a = idm_accel(35.0, Some(0.5), 30.0, &p);
        assert_eq!(a, IDM_MIN_ACCEL);
    }

    #[test]
    fn platoon_equilibrium_holds_speed() {
        let p = IdmParams::default();
        let v = 25.0;
        let gap = idm_equilibrium_gap(v, &p);
        // Five identical vehicles at exact equilibrium spacing.
        let n = 5;
        let mut speeds = vec![v; n];
        let mut xs: Vec<f64> = (0..n).map(|i| -(i as f64) * (gap + 5.0)).collect();
        let dt = 0.1;
        for _ in 0..100 {
            let prev_x = xs.clone();
            let prev_v = speeds.clone();
            for i in 0..n {
                let a = if i == 0 {
                    // Head vehicle follows a virtual leader at the same spacing.
                    idm_accel(prev_v[i], Some(gap), 0.0, &p)
                } else {
                    let net = prev_x[i - 1] - prev_x[i] - 5.0;
                    idm_accel(prev_v[i], Some(net), prev_v[i] - prev_v[i - 1], &p)
                };
                speeds[i] += a * dt;
                xs[i] += speeds[i] * dt;
            }
        }
        for s in &speeds {
            assert!((s - v).abs() < 1e-6, "speed drifted to {s}");
        }
    }

    #[test]
    fn mobil_changes_past_slow_leader() {
        let idm = IdmParams::default();
        let p = MobilParams::default();
        let current = LaneView {
            leader: Some(Neighbor { gap: 20.0, speed: 15.0 }),
            follower: None,
        };
        let target = LaneView::default();
        assert_eq!(
            mobil_decide(25.0, 5.0, &current, &target, &idm, &p),
            LaneDecision::Change
        );
    }

    #[test]
    fn mobil_safety_veto() {
        let idm = IdmParams::default();
        let p = MobilParams::default();
        let current = LaneView {
            leader: Some(Neighbor { gap: 20.0, speed: 15.0 }),
            follower: None,
        };
        let target = LaneView {
            leader: None,
            follower: Some(Neighbor { gap: 1.0, speed: 35.0 }),
        };
        assert_eq!(
            mobil_decide(25.0, 5.0, &current, &target, &idm, &p),
            LaneDecision::Stay
        );
    }

    #[test]
    fn mobil_identical_lanes_stay() {
        let idm = IdmParams::default();
        let p = MobilParams::default();
        let view = LaneView {
            leader: Some(Neighbor { gap: 40.0, speed: 25.0 }),
            follower: Some(Neighbor { gap: 40.0, speed: 25.0 }),
        };
        assert_eq!(mobil_decide(25.0, 5.0, &view, &view, &idm, &p), LaneDecision::Stay);
    }

    #[test]
    fn drive_rollout_replays_uncontrolled_and_moves_controlled() {
        use crate::scene::{generate_synthetic, SyntheticConfig};
        let data = generate_synthetic(&SyntheticConfig { n_agents: 3, seed: 4, ..Default::default() })
            .unwrap();
        let rollout = &data.rollouts[0];
        let gen = drive_rollout(rollout, &data.maps[0], &IdmParams::default(), &MobilParams::default());
        assert!(gen.generated);
        for (g, r) in gen.agents.iter().zip(&rollout.agents) {
            // Warm-up states are untouched.
            for k in 0..=3.min(g.poses.len() - 1) {
                assert_eq!(g.poses[k].x.to_bits(), r.poses[k].x.to_bits());
            }
            // A controlled agent keeps moving forward.
            if g.control.iter().any(|&c| c) {
                assert!(g.poses.last().unwrap().x > g.poses[3].x);
            }
        }
        gen.verify_action_consistency(1e-6).unwrap();
    }

    #[test]
    fn blend_fraction_endpoints() {
        assert_eq!(blend_fraction(0.0), 0.0);
        assert_eq!(blend_fraction(LANE_CHANGE_DURATION), 1.0);
        assert!(blend_fraction(1.5) > 0.4 && blend_fraction(1.5) < 0.6);
    }
}
