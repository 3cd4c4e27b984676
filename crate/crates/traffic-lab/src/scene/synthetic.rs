//! License-free synthetic highway data: straight multi-lane roads (optionally
//! with one on-ramp merge) populated by rule-based drivers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    snip, AgentFrame, AgentKind, AgentRecord, Dataset, LineType, MapModel, Polyline, Recording,
    SceneError, SceneResult,
};
use crate::baseline::{step_highway, IdmParams, MobilParams, RoadSpec, SimVehicle};
use crate::geometry::Pose2D;

pub const LANE_WIDTH: f64 = 3.5;
const SIM_RATE_HZ: f64 = 10.0;
const RAMP_END_X: f64 = 150.0;
const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Number of main lanes.
    pub lanes: usize,
    /// Add one on-ramp merging into the rightmost main lane.
    pub ramp: bool,
    pub n_agents: usize,
    pub duration_s: f64,
    pub n_recordings: usize,
    pub seed: u64,
    /// Give every driver its current speed as the desired speed, so free
    /// agents hold speed instead of easing toward a higher setpoint.
    pub steady_speeds: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            lanes: 2,
            ramp: false,
            n_agents: 4,
            duration_s: 10.0,
            n_recordings: 1,
            seed: 0,
            steady_speeds: false,
        }
    }
}

impl SyntheticConfig {
    pub fn map_id(&self) -> String {
        format!("synthetic-{}lane{}", self.lanes, if self.ramp { "-ramp" } else { "" })
    }

    fn road_length(&self) -> f64 {
        250.0 + self.duration_s * 35.0
    }
}

/// Build the straight-road map shared by every recording of a config.
pub fn build_highway_map(cfg: &SyntheticConfig) -> SceneResult<MapModel> {
    let x0 = -50.0;
    let x1 = cfg.road_length();
    let mut polylines = Vec::new();
    for j in 0..=cfg.lanes {
        let y = j as f64 * LANE_WIDTH;
        // The rightmost boundary is dashed along the merge zone.
        if j == 0 && cfg.ramp {
            polylines.push(Polyline {
                line_type: LineType::Solid,
                points: vec![(x0, y), (20.0, y)],
            });
            polylines.push(Polyline {
                line_type: LineType::Dashed,
                points: vec![(20.0, y), (RAMP_END_X, y)],
            });
            polylines.push(Polyline {
                line_type: LineType::Solid,
                points: vec![(RAMP_END_X, y), (x1, y)],
            });
        } else {
            polylines.push(Polyline {
                line_type: if j == 0 || j == cfg.lanes { LineType::Solid } else { LineType::Dashed },
                points: vec![(x0, y), (x1, y)],
            });
        }
    }
    let mut drivable = Vec::new();
    for j in 0..cfg.lanes {
        let (lo, hi) = (j as f64 * LANE_WIDTH, (j + 1) as f64 * LANE_WIDTH);
        drivable.push(vec![(x0, lo), (x1, lo), (x1, hi), (x0, hi)]);
    }
    if cfg.ramp {
        polylines.push(Polyline {
            line_type: LineType::Solid,
            points: vec![(0.0, -LANE_WIDTH), (RAMP_END_X, -LANE_WIDTH), (RAMP_END_X, 0.0)],
        });
        drivable.push(vec![
            (0.0, -LANE_WIDTH),
            (RAMP_END_X, -LANE_WIDTH),
            (RAMP_END_X, 0.0),
            (0.0, 0.0),
        ]);
    }
    MapModel::new(cfg.map_id(), polylines, drivable)
}

struct RoadLayout {
    spec: RoadSpec,
    /// Simulation lane index -> is the on-ramp.
    ramp_lane: Option<usize>,
}

fn road_layout(cfg: &SyntheticConfig) -> RoadLayout {
    let mut centers = Vec::new();
    let mut ramp_lane = None;
    if cfg.ramp {
        centers.push(-LANE_WIDTH / 2.0);
        ramp_lane = Some(0);
    }
    for j in 0..cfg.lanes {
        centers.push((j as f64 + 0.5) * LANE_WIDTH);
    }
    RoadLayout {
        spec: RoadSpec {
            lane_centers_y: centers,
            ramp_lane,
            ramp_end_x: RAMP_END_X,
            length: cfg.road_length(),
        },
        ramp_lane,
    }
}

fn place_vehicles(
    cfg: &SyntheticConfig,
    layout: &RoadLayout,
    rng: &mut ChaCha8Rng,
) -> SceneResult<Vec<SimVehicle>> {
    let mut vehicles: Vec<SimVehicle> = Vec::with_capacity(cfg.n_agents);
    let spawn_span = (cfg.road_length() * 0.55).max(45.0 * cfg.n_agents as f64 / cfg.lanes as f64);
    for id in 0..cfg.n_agents as u64 {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let is_truck = rng.gen_bool(0.2);
            let on_ramp = layout.ramp_lane.is_some() && rng.gen_bool(0.25);
            let lane = if on_ramp {
                layout.ramp_lane.unwrap()
            } else {
                let lo = layout.ramp_lane.map_or(0, |r| r + 1);
                rng.gen_range(lo..layout.spec.lane_centers_y.len())
            };
            let (length, width, v): (f64, f64, f64) = if is_truck {
                (12.0, 2.5, rng.gen_range(19.0..23.0))
            } else {
                (rng.gen_range(4.2..4.9), rng.gen_range(1.8..2.05), rng.gen_range(22.0..30.0))
            };
            let v = if on_ramp { v.min(22.0) } else { v };
            let x = if on_ramp {
                rng.gen_range(5.0..70.0)
            } else {
                rng.gen_range(0.0..spawn_span)
            };
            let v0_gap = rng.gen_range(2.0..6.0);
            let idm = IdmParams {
                v0: if cfg.steady_speeds { v } else { v + v0_gap },
                ..IdmParams::default()
            };
            // Feasible gap to everything already placed in this lane: the
            // rear vehicle of each pair must be at a comfortable headway.
            let feasible = vehicles.iter().filter(|o| o.lane == lane).all(|o| {
                let net = (o.x - x).abs() - (o.length + length) / 2.0;
                let v_rear = if o.x >= x { v } else { o.v };
                net >= idm.s0 + v_rear * idm.t_headway
            });
            if feasible {
                vehicles.push(SimVehicle::new(
                    id,
                    is_truck,
                    length,
                    width,
                    lane,
                    x,
                    layout.spec.lane_centers_y[lane],
                    v,
                    idm,
                ));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SceneError::Generation(format!(
                "could not place agent {id} after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )));
        }
    }
    Ok(vehicles)
}

/// Generate a deterministic synthetic dataset: `n_recordings` independent
/// scenarios on a shared map, snipped into 2 Hz rollouts.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> SceneResult<Dataset> {
    if cfg.n_agents == 0 {
        return Err(SceneError::Generation("n_agents must be >= 1".into()));
    }
    if cfg.lanes == 0 {
        return Err(SceneError::Generation("lanes must be >= 1".into()));
    }
    let map = build_highway_map(cfg)?;
    let layout = road_layout(cfg);
    let mobil = MobilParams::default();

    let mut rollouts = Vec::new();
    for rec_idx in 0..cfg.n_recordings as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(rec_idx);
        let mut vehicles = place_vehicles(cfg, &layout, &mut rng)?;

        let n_steps = (cfg.duration_s * SIM_RATE_HZ).round() as usize;
        let mut tracks: Vec<Vec<AgentFrame>> = vehicles
            .iter()
            .map(|v| {
                vec![AgentFrame {
                    pose: Pose2D::from_angle(v.x, v.y, 0.0),
                    velocity: (v.v, 0.0),
                    acceleration: (0.0, 0.0),
                }]
            })
            .collect();
        let dt = 1.0 / SIM_RATE_HZ;
        for _ in 0..n_steps {
            let frames = step_highway(&mut vehicles, &layout.spec, &mobil, dt);
            for (track, f) in tracks.iter_mut().zip(&frames) {
                let heading = if f.vx.hypot(f.vy) > 1e-6 {
                    f.vy.atan2(f.vx)
                } else {
                    0.0
                };
                track.push(AgentFrame {
                    pose: Pose2D::from_angle(f.x, f.y, heading),
                    velocity: (f.vx, f.vy),
                    acceleration: (f.ax, 0.0),
                });
            }
        }

        let agents = vehicles
            .iter()
            .zip(tracks)
            .map(|(v, frames)| AgentRecord {
                agent_id: v.id,
                kind: if v.is_truck { AgentKind::Truck } else { AgentKind::Car },
                length: v.length,
                width: v.width,
                first_frame: 0,
                frames,
            })
            .collect();
        let recording = Recording {
            id: rec_idx,
            frame_rate_hz: SIM_RATE_HZ,
            map_ref: map.id.clone(),
            agents,
        };
        rollouts.extend(snip(&recording)?);
    }
    Ok(Dataset { maps: vec![map], rollouts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{obb_intersect, OrientedBox};
    use crate::scene::ROLLOUT_STATES;

    #[test]
    fn lone_agent_single_rollout() {
        let cfg = SyntheticConfig { n_agents: 1, ..Default::default() };
        let d = generate_synthetic(&cfg).unwrap();
        assert_eq!(d.rollouts.len(), 1);
        assert_eq!(d.rollouts[0].agents.len(), 1);
        assert_eq!(d.rollouts[0].agents[0].poses.len(), ROLLOUT_STATES);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SyntheticConfig { n_agents: 6, n_recordings: 2, seed: 11, ..Default::default() };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.rollouts.len(), b.rollouts.len());
        for (ra, rb) in a.rollouts.iter().zip(&b.rollouts) {
            assert_eq!(ra.to_json().unwrap(), rb.to_json().unwrap());
        }
    }

    #[test]
    fn merge_scenario_is_collision_free() {
        let cfg = SyntheticConfig {
            lanes: 2,
            ramp: true,
            n_agents: 12,
            duration_s: 20.0,
            n_recordings: 1,
            seed: 7,
            ..Default::default()
        };
        let d = generate_synthetic(&cfg).unwrap();
        assert!(!d.rollouts.is_empty());
        for r in &d.rollouts {
            for t in 0..ROLLOUT_STATES {
                let present: Vec<_> = r
                    .agents
                    .iter()
                    .filter_map(|a| a.pose_at(t).map(|p| OrientedBox::new(*p, a.length, a.width)))
                    .collect();
                for i in 0..present.len() {
                    for j in i + 1..present.len() {
                        assert!(
                            !obb_intersect(&present[i], &present[j]),
                            "overlap at tick {t}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn ground_truth_is_on_road() {
        let cfg = SyntheticConfig { n_agents: 8, duration_s: 20.0, seed: 3, ..Default::default() };
        let d = generate_synthetic(&cfg).unwrap();
        let map = &d.maps[0];
        for r in &d.rollouts {
            for a in &r.agents {
                for p in &a.poses {
                    let on = map
                        .drivable_polygons
                        .iter()
                        .any(|poly| crate::geometry::point_in_polygon((p.x, p.y), poly));
                    assert!(on, "agent {} off-road at ({}, {})", a.agent_id, p.x, p.y);
                }
            }
        }
    }

    #[test]
    fn action_consistency_of_synthetic_rollouts() {
        let cfg = SyntheticConfig { n_agents: 5, seed: 2, ..Default::default() };
        let d = generate_synthetic(&cfg).unwrap();
        for r in &d.rollouts {
            r.verify_action_consistency(1e-6).unwrap();
        }
    }
}
