//! Fixed-length 2 Hz rollouts and the windowing that produces them.

use serde::{Deserialize, Serialize};

use super::{
    AgentKind, Recording, SceneError, SceneResult, DT, MIN_CONTROL_PRESENCE, ROLLOUT_STATES,
    ROLLOUT_STEPS, WARMUP_STEPS,
};
use crate::geometry::{apply_action, to_local, Pose2D};

/// One agent inside a rollout. Arrays are aligned to the agent's presence:
/// index `k` holds tick `first_tick + k`. Presence is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutAgent {
    pub agent_id: u64,
    pub kind: AgentKind,
    pub length: f64,
    pub width: f64,
    pub first_tick: usize,
    pub poses: Vec<Pose2D>,
    pub velocities: Vec<(f64, f64)>,
    /// `actions[k]` moves the agent from tick `first_tick + k` to the next
    /// tick, expressed in the local frame of the earlier pose.
    pub actions: Vec<(f64, f64)>,
    /// Control flags indexed by absolute step `0..ROLLOUT_STEPS`.
    pub control: Vec<bool>,
}

impl RolloutAgent {
    pub fn last_tick(&self) -> usize {
        self.first_tick + self.poses.len() - 1
    }

    pub fn present_at(&self, t: usize) -> bool {
        t >= self.first_tick && t <= self.last_tick()
    }

    pub fn pose_at(&self, t: usize) -> Option<&Pose2D> {
        t.checked_sub(self.first_tick).and_then(|k| self.poses.get(k))
    }

    pub fn velocity_at(&self, t: usize) -> Option<(f64, f64)> {
        t.checked_sub(self.first_tick)
            .and_then(|k| self.velocities.get(k))
            .copied()
    }

    pub fn action_at(&self, t: usize) -> Option<(f64, f64)> {
        t.checked_sub(self.first_tick)
            .and_then(|k| self.actions.get(k))
            .copied()
    }

    pub fn controlled_at(&self, t: usize) -> bool {
        self.control.get(t).copied().unwrap_or(false)
    }

    /// First step with the control flag set, if any.
    pub fn first_controlled_step(&self) -> Option<usize> {
        self.control.iter().position(|&c| c)
    }

    /// The default warm-up rule: controlled from the fourth present tick
    /// until the agent leaves the scene.
    pub fn eligible_steps(&self) -> Vec<usize> {
        if self.poses.len() < MIN_CONTROL_PRESENCE {
            return Vec::new();
        }
        (self.first_tick + WARMUP_STEPS..self.last_tick())
            .filter(|&t| t < ROLLOUT_STEPS)
            .collect()
    }
}

/// A 10-second, 2 Hz scene snippet: 21 states, 20 steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub recording_id: u64,
    pub map_ref: String,
    pub generated: bool,
    pub agents: Vec<RolloutAgent>,
}

impl Rollout {
    /// Assemble a rollout from per-agent pose/velocity tracks, deriving
    /// ground-truth actions and the default control mask.
    pub fn assemble(
        recording_id: u64,
        map_ref: String,
        generated: bool,
        agents: Vec<(u64, AgentKind, f64, f64, usize, Vec<Pose2D>, Vec<(f64, f64)>)>,
    ) -> SceneResult<Self> {
        let mut out = Vec::with_capacity(agents.len());
        for (agent_id, kind, length, width, first_tick, poses, velocities) in agents {
            if poses.is_empty() || poses.len() != velocities.len() {
                return Err(SceneError::Contract(format!(
                    "agent {agent_id}: empty or misaligned state arrays"
                )));
            }
            if first_tick + poses.len() > ROLLOUT_STATES {
                return Err(SceneError::Contract(format!(
                    "agent {agent_id}: presence exceeds rollout length"
                )));
            }
            let actions = derive_actions(&poses);
            let mut agent = RolloutAgent {
                agent_id,
                kind,
                length,
                width,
                first_tick,
                poses,
                velocities,
                actions,
                control: vec![false; ROLLOUT_STEPS],
            };
            for t in agent.eligible_steps() {
                agent.control[t] = true;
            }
            out.push(agent);
        }
        Ok(Rollout { recording_id, map_ref, generated, agents: out })
    }

    /// Number of controlled (agent, step) pairs.
    pub fn controlled_pairs(&self) -> usize {
        self.agents
            .iter()
            .map(|a| a.control.iter().filter(|&&c| c).count())
            .sum()
    }

    /// Verify that every ground-truth action reproduces the next pose's
    /// position under the kinematic update, within `tol` meters.
    pub fn verify_action_consistency(&self, tol: f64) -> SceneResult<()> {
        for a in &self.agents {
            for (k, action) in a.actions.iter().enumerate() {
                let p = apply_action(&a.poses[k], *action);
                let q = &a.poses[k + 1];
                let err = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
                if err > tol {
                    return Err(SceneError::Contract(format!(
                        "agent {} action {k} misses next position by {err} m",
                        a.agent_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> SceneResult<String> {
        let agents = self
            .agents
            .iter()
            .map(|a| AgentJson {
                agent_id: a.agent_id,
                kind: a.kind,
                length: a.length,
                width: a.width,
                first_tick: a.first_tick,
                states: a
                    .poses
                    .iter()
                    .zip(&a.velocities)
                    .map(|(p, v)| [p.x, p.y, p.hx, p.hy, v.0, v.1])
                    .collect(),
                actions: a.actions.iter().map(|&(x, y)| [x, y]).collect(),
                control: a.control.clone(),
            })
            .collect();
        Ok(serde_json::to_string(&RolloutJson {
            schema_version: 1,
            generated: self.generated,
            recording_id: self.recording_id,
            map_ref: self.map_ref.clone(),
            dt: DT,
            agents,
        })?)
    }

    pub fn from_json(text: &str) -> SceneResult<Self> {
        let raw: RolloutJson = serde_json::from_str(text)?;
        if raw.schema_version != 1 {
            return Err(SceneError::Format(format!(
                "unsupported rollout schema_version {}",
                raw.schema_version
            )));
        }
        if (raw.dt - DT).abs() > 1e-9 {
            return Err(SceneError::Format(format!("unsupported dt {}", raw.dt)));
        }
        let mut agents = Vec::with_capacity(raw.agents.len());
        for a in raw.agents {
            if a.states.is_empty() {
                return Err(SceneError::Format(format!("agent {}: no states", a.agent_id)));
            }
            if a.first_tick + a.states.len() > ROLLOUT_STATES {
                return Err(SceneError::Format(format!(
                    "agent {}: states exceed rollout length",
                    a.agent_id
                )));
            }
            if a.actions.len() + 1 != a.states.len() || a.control.len() != ROLLOUT_STEPS {
                return Err(SceneError::Format(format!(
                    "agent {}: misaligned actions or control mask",
                    a.agent_id
                )));
            }
            if !(a.length > 0.0 && a.width > 0.0 && a.length.is_finite() && a.width.is_finite()) {
                return Err(SceneError::Format(format!(
                    "agent {}: non-positive dimensions",
                    a.agent_id
                )));
            }
            let mut poses = Vec::with_capacity(a.states.len());
            let mut velocities = Vec::with_capacity(a.states.len());
            for s in &a.states {
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(SceneError::Format(format!(
                        "agent {}: non-finite state",
                        a.agent_id
                    )));
                }
                let norm = (s[2] * s[2] + s[3] * s[3]).sqrt();
                if !(norm > 1e-6) {
                    return Err(SceneError::Format(format!(
                        "agent {}: degenerate heading",
                        a.agent_id
                    )));
                }
                poses.push(Pose2D { x: s[0], y: s[1], hx: s[2] / norm, hy: s[3] / norm });
                velocities.push((s[4], s[5]));
            }
            agents.push(RolloutAgent {
                agent_id: a.agent_id,
                kind: a.kind,
                length: a.length,
                width: a.width,
                first_tick: a.first_tick,
                poses,
                velocities,
                actions: a.actions.iter().map(|v| (v[0], v[1])).collect(),
                control: a.control,
            });
        }
        Ok(Rollout {
            recording_id: raw.recording_id,
            map_ref: raw.map_ref,
            generated: raw.generated,
            agents,
        })
    }
}

/// Minimal per-tick view used by feature extraction and metrics.
#[derive(Debug, Clone, Copy)]
pub struct StateView<'a> {
    pub agent: &'a RolloutAgent,
    pub pose: Pose2D,
}

fn derive_actions(poses: &[Pose2D]) -> Vec<(f64, f64)> {
    poses
        .windows(2)
        .map(|w| to_local((w[1].x, w[1].y), &w[0]))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct RolloutJson {
    schema_version: u32,
    generated: bool,
    recording_id: u64,
    map_ref: String,
    dt: f64,
    agents: Vec<AgentJson>,
}

#[derive(Serialize, Deserialize)]
struct AgentJson {
    agent_id: u64,
    kind: AgentKind,
    length: f64,
    width: f64,
    first_tick: usize,
    states: Vec<[f64; 6]>,
    actions: Vec<[f64; 2]>,
    control: Vec<bool>,
}

/// Cut a recording into consecutive non-overlapping 10 s windows downsampled
/// to 2 Hz by frame striding. Short tail windows are dropped. Agents present
/// for fewer than [`MIN_CONTROL_PRESENCE`] ticks in a window are log-replay
/// only.
pub fn snip(rec: &Recording) -> SceneResult<Vec<Rollout>> {
    let ratio = rec.frame_rate_hz / (1.0 / DT);
    if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
        return Err(SceneError::Contract(format!(
            "frame rate {} Hz is not an integer multiple of 2 Hz",
            rec.frame_rate_hz
        )));
    }
    let stride = ratio.round() as usize;
    let window = ROLLOUT_STEPS * stride + 1;

    let Some(base) = rec.agents.iter().map(|a| a.first_frame).min() else {
        return Ok(Vec::new());
    };
    let span = rec
        .agents
        .iter()
        .map(|a| a.last_frame() + 1 - base)
        .max()
        .unwrap_or(0);
    let n_windows = span / window;

    let mut rollouts = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let start = base + w * window;
        let mut agents = Vec::new();
        for rec_agent in &rec.agents {
            let mut first_tick = None;
            let mut poses = Vec::new();
            let mut velocities = Vec::new();
            for k in 0..ROLLOUT_STATES {
                match rec_agent.frame_at(start + k * stride) {
                    Some(f) => {
                        if first_tick.is_none() {
                            first_tick = Some(k);
                        }
                        poses.push(f.pose);
                        velocities.push(f.velocity);
                    }
                    None if first_tick.is_some() => break,
                    None => {}
                }
            }
            if let Some(ft) = first_tick {
                agents.push((
                    rec_agent.agent_id,
                    rec_agent.kind,
                    rec_agent.length,
                    rec_agent.width,
                    ft,
                    poses,
                    velocities,
                ));
            }
        }
        rollouts.push(Rollout::assemble(rec.id, rec.map_ref.clone(), false, agents)?);
    }
    Ok(rollouts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::AgentFrame;

    /// Straight constant-speed track at `rate` Hz.
    fn make_recording(duration_s: f64, rate: f64, n_agents: usize) -> Recording {
        let n_frames = (duration_s * rate) as usize + 1;
        let agents = (0..n_agents)
            .map(|i| AgentRecordBuilder {
                agent_id: i as u64,
                start: 0,
                n_frames,
                rate,
                speed: 20.0 + i as f64,
                y: 1.75 + 3.5 * i as f64,
            }
            .build())
            .collect();
        Recording { id: 0, frame_rate_hz: rate, map_ref: "m".into(), agents }
    }

    struct AgentRecordBuilder {
        agent_id: u64,
        start: usize,
        n_frames: usize,
        rate: f64,
        speed: f64,
        y: f64,
    }

    impl AgentRecordBuilder {
        fn build(&self) -> super::super::AgentRecord {
            let frames = (0..self.n_frames)
                .map(|k| AgentFrame {
                    pose: Pose2D::from_angle(self.speed * k as f64 / self.rate, self.y, 0.0),
                    velocity: (self.speed, 0.0),
                    acceleration: (0.0, 0.0),
                })
                .collect();
            super::super::AgentRecord {
                agent_id: self.agent_id,
                kind: AgentKind::Car,
                length: 4.5,
                width: 1.8,
                first_frame: self.start,
                frames,
            }
        }
    }

    #[test]
    fn snip_25s_gives_two_windows() {
        let rec = make_recording(25.0, 10.0, 1);
        let rollouts = snip(&rec).unwrap();
        assert_eq!(rollouts.len(), 2);
        for r in &rollouts {
            assert_eq!(r.agents[0].poses.len(), ROLLOUT_STATES);
        }
    }

    #[test]
    fn snip_9s_gives_none() {
        let rec = make_recording(9.0, 10.0, 1);
        assert!(snip(&rec).unwrap().is_empty());
    }

    #[test]
    fn snip_rejects_odd_rate() {
        let rec = make_recording(25.0, 25.0, 1);
        assert!(matches!(snip(&rec), Err(SceneError::Contract(_))));
    }

    #[test]
    fn late_entry_agent_is_never_controlled() {
        // Agent entering at second 8 of a 10 s window has 5 ticks of
        // presence (16..=20); its first eligible step would be 19, but the
        // agent leaves at tick 20, so 19 is the only candidate.
        let mut rec = make_recording(10.0, 10.0, 1);
        let late = AgentRecordBuilder {
            agent_id: 9,
            start: 80,
            n_frames: 21,
            rate: 10.0,
            speed: 25.0,
            y: 5.25,
        }
        .build();
        rec.agents.push(late);
        let rollouts = snip(&rec).unwrap();
        assert_eq!(rollouts.len(), 1);
        let late = rollouts[0].agents.iter().find(|a| a.agent_id == 9).unwrap();
        assert_eq!(late.first_tick, 16);
        // Warm-up consumes ticks 16..18; step 19 into tick 20 is allowed.
        let controlled: Vec<usize> =
            (0..ROLLOUT_STEPS).filter(|&t| late.controlled_at(t)).collect();
        assert_eq!(controlled, vec![19]);

        // An agent entering past second 8 has at most 4 ticks: warm-up
        // consumes three and the last step has no next state, so the control
        // mask is all false.
        let mut rec2 = make_recording(10.0, 10.0, 1);
        let very_late = AgentRecordBuilder {
            agent_id: 10,
            start: 85,
            n_frames: 16,
            rate: 10.0,
            speed: 25.0,
            y: 5.25,
        }
        .build();
        rec2.agents.push(very_late);
        let rollouts2 = snip(&rec2).unwrap();
        let a = rollouts2[0].agents.iter().find(|a| a.agent_id == 10).unwrap();
        assert_eq!(a.poses.len(), MIN_CONTROL_PRESENCE);
        assert!(a.control.iter().all(|&c| !c));
    }

    #[test]
    fn full_presence_control_range() {
        let rec = make_recording(10.0, 10.0, 1);
        let rollouts = snip(&rec).unwrap();
        let a = &rollouts[0].agents[0];
        let controlled: Vec<usize> =
            (0..ROLLOUT_STEPS).filter(|&t| a.controlled_at(t)).collect();
        assert_eq!(controlled, (WARMUP_STEPS..ROLLOUT_STEPS).collect::<Vec<_>>());
        assert_eq!(controlled.len(), 17);
    }

    #[test]
    fn actions_reproduce_positions() {
        let rec = make_recording(25.0, 10.0, 3);
        for r in snip(&rec).unwrap() {
            r.verify_action_consistency(1e-6).unwrap();
        }
    }

    #[test]
    fn rollout_json_round_trip() {
        let rec = make_recording(10.0, 10.0, 2);
        let rollouts = snip(&rec).unwrap();
        let text = rollouts[0].to_json().unwrap();
        let back = Rollout::from_json(&text).unwrap();
        assert_eq!(back, rollouts[0]);
    }

    #[test]
    fn rollout_json_rejects_malformed() {
        assert!(Rollout::from_json("{}").is_err());
        assert!(Rollout::from_json(r#"{"schema_version":2,"generated":false,"recording_id":0,"map_ref":"m","dt":0.5,"agents":[]}"#).is_err());
        // Degenerate heading.
        let bad = r#"{"schema_version":1,"generated":false,"recording_id":0,"map_ref":"m","dt":0.5,
            "agents":[{"agent_id":1,"kind":"car","length":4.0,"width":2.0,"first_tick":0,
            "states":[[0,0,0,0,0,0]],"actions":[],"control":[false,false,false,false,false,false,false,false,false,false,false,false,false,false,false,false,false,false,false,false]}]}"#;
        assert!(Rollout::from_json(bad).is_err());
    }
}
