//! Closed-loop rollout engine.
//!
//! Controlled agents move by policy actions; uncontrolled agents replay their
//! recorded trajectories. Every generated state lives on the autodiff graph,
//! so losses evaluated at late steps backpropagate through earlier actions.
//! Controlled agents' feature histories use the generated past, not the
//! recorded one.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Graph, NodeId, Real, Var};
use crate::geometry::{apply_action, Pose2D};
use crate::policy::{AgentContext, BoundPolicy, HeadOutput, PolicyError};
use crate::scene::{MapModel, Rollout, RolloutAgent, ROLLOUT_STATES, ROLLOUT_STEPS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation error at step {step}: {msg}")]
    Simulation { step: usize, msg: String },
    #[error("selection error: {0}")]
    Selection(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// Controlled agents take the distribution mean.
    Deterministic,
    /// Controlled agents take a reparameterized sample.
    Sampled,
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub mode: Option<RolloutMode>,
    /// Insert a zero leaf added onto every controlled action, so per-step
    /// gradients can be read and finite-difference probes injected.
    pub action_probes: bool,
    /// Initial values for specific probes, keyed by (agent index, step).
    pub probe_offsets: HashMap<(usize, usize), (f64, f64)>,
}

impl SimOptions {
    pub fn deterministic() -> Self {
        SimOptions { mode: Some(RolloutMode::Deterministic), ..Default::default() }
    }

    pub fn sampled() -> Self {
        SimOptions { mode: Some(RolloutMode::Sampled), ..Default::default() }
    }
}

/// One agent's pose on the graph.
#[derive(Clone, Copy)]
pub struct SimPose<'g> {
    pub pose: Pose2D<Var<'g>>,
}

/// The product of a closed-loop rollout: per-tick graph states for every
/// agent, aligned with the source rollout's roster.
pub struct SimTrajectory<'g> {
    pub graph: &'g Graph,
    pub source: Rollout,
    /// `states[t][i]` is present iff agent `i` is present at tick `t`.
    pub states: Vec<Vec<Option<SimPose<'g>>>>,
    /// Applied actions of controlled agents, `(agent index, step) -> (ax, ay)`.
    pub actions: HashMap<(usize, usize), (Var<'g>, Var<'g>)>,
    /// Probe leaves when `action_probes` was set.
    pub probes: HashMap<(usize, usize), (NodeId, NodeId)>,
}

impl<'g> SimTrajectory<'g> {
    /// Generated global position of agent `i` at tick `t`.
    pub fn position(&self, i: usize, t: usize) -> Option<(Var<'g>, Var<'g>)> {
        self.states[t][i].map(|s| (s.pose.x, s.pose.y))
    }

    /// Rebuild the feature context of agent `i` at tick `t` from generated
    /// states (short histories are back-extrapolated).
    pub fn context_at(&self, i: usize, t: usize) -> Option<AgentContext<Var<'g>>> {
        let cur = self.states[t][i]?;
        let agent = &self.source.agents[i];
        Some(build_context(agent, t, |tick| {
            self.states[tick][i].map(|s| (s.pose.x, s.pose.y))
        }, cur.pose))
    }

    /// Extract plain values as a rollout with the `generated` flag set.
    /// Uncontrolled agents are bit-equal to their source states.
    pub fn to_rollout(&self) -> Rollout {
        let agents = self
            .source
            .agents
            .iter()
            .enumerate()
            .map(|(i, src)| {
                let mut poses = Vec::with_capacity(src.poses.len());
                let mut velocities = Vec::with_capacity(src.poses.len());
                for k in 0..src.poses.len() {
                    let t = src.first_tick + k;
                    let s = self.states[t][i].expect("present by roster");
                    let pose = Pose2D {
                        x: s.pose.x.val(),
                        y: s.pose.y.val(),
                        hx: s.pose.hx.val(),
                        hy: s.pose.hy.val(),
                    };
                    if k == 0 {
                        velocities.push(src.velocities[0]);
                    } else {
                        let prev: &Pose2D<f64> = &poses[k - 1];
                        velocities.push((
                            (pose.x - prev.x) / crate::scene::DT,
                            (pose.y - prev.y) / crate::scene::DT,
                        ));
                    }
                    poses.push(pose);
                }
                let actions = poses
                    .windows(2)
                    .map(|w| crate::geometry::to_local((w[1].x, w[1].y), &w[0]))
                    .collect();
                RolloutAgent {
                    agent_id: src.agent_id,
                    kind: src.kind,
                    length: src.length,
                    width: src.width,
                    first_tick: src.first_tick,
                    poses,
                    velocities,
                    actions,
                    control: src.control.clone(),
                }
            })
            .collect();
        Rollout {
            recording_id: self.source.recording_id,
            map_ref: self.source.map_ref.clone(),
            generated: true,
            agents,
        }
    }
}

/// Assemble a 3-frame context, back-extrapolating when the agent has less
/// than three ticks of history (a newly appeared neighbor's velocity is
/// better guessed constant than zero).
fn build_context<'g>(
    agent: &RolloutAgent,
    t: usize,
    pos_at: impl Fn(usize) -> Option<(Var<'g>, Var<'g>)>,
    pose: Pose2D<Var<'g>>,
) -> AgentContext<Var<'g>> {
    let p2 = (pose.x, pose.y);
    let p1 = if t >= 1 { pos_at(t - 1) } else { None };
    let (p1, p0) = match p1 {
        None => (p2, p2),
        Some(p1) => {
            let p0 = if t >= 2 { pos_at(t - 2) } else { None };
            let p0 = p0.unwrap_or_else(|| {
                let two = p1.0.lift(2.0);
                (two * p1.0 - p2.0, two * p1.1 - p2.1)
            });
            (p1, p0)
        }
    };
    AgentContext {
        kind: agent.kind,
        length: agent.length,
        width: agent.width,
        pos: [p0, p1, p2],
        heading: (pose.hx, pose.hy),
    }
}

/// Feature context of agent `i` at tick `t` built from recorded states,
/// inserted as graph constants. Same padding rules as the live simulation.
pub fn rollout_context_at<'g>(
    g: &'g Graph,
    rollout: &Rollout,
    i: usize,
    t: usize,
) -> Option<AgentContext<Var<'g>>> {
    let agent = &rollout.agents[i];
    let pose = agent.pose_at(t)?;
    let pose_v = Pose2D {
        x: g.var(pose.x),
        y: g.var(pose.y),
        hx: g.var(pose.hx),
        hy: g.var(pose.hy),
    };
    Some(build_context(agent, t, |tick| {
        agent.pose_at(tick).map(|p| (g.var(p.x), g.var(p.y)))
    }, pose_v))
}

/// Roll the policy out in closed loop over a rollout's 20 steps.
pub fn simulate<'g>(
    bp: &BoundPolicy<'g>,
    rollout: &Rollout,
    map: &MapModel,
    opts: &SimOptions,
    rng: &mut ChaCha8Rng,
) -> Result<SimTrajectory<'g>, SimError> {
    let g = bp.graph();
    let mode = opts.mode.unwrap_or(RolloutMode::Deterministic);
    let n = rollout.agents.len();

    let mut states: Vec<Vec<Option<SimPose<'g>>>> = vec![vec![None; n]; ROLLOUT_STATES];
    let mut actions = HashMap::new();
    let mut probes = HashMap::new();

    // Initial states are recorded constants.
    for (i, a) in rollout.agents.iter().enumerate() {
        if let Some(p) = a.pose_at(0) {
            states[0][i] = Some(constant_pose(g, p));
        }
    }

    for t in 0..ROLLOUT_STEPS {
        g.mark_step();
        // Contexts of everything present at t, in roster order.
        let present: Vec<usize> =
            (0..n).filter(|&i| states[t][i].is_some()).collect();
        let mut contexts: Vec<AgentContext<Var<'g>>> = Vec::with_capacity(present.len());
        for &i in &present {
            let cur = states[t][i].expect("present");
            let agent = &rollout.agents[i];
            contexts.push(build_context(agent, t, |tick| {
                states[tick][i].map(|s| (s.pose.x, s.pose.y))
            }, cur.pose));
        }

        let controlled: Vec<usize> = present
            .iter()
            .copied()
            .filter(|&i| rollout.agents[i].controlled_at(t))
            .collect();

        let outputs: Vec<Option<HeadOutput<'g>>> = if controlled.is_empty() {
            vec![None; present.len()]
        } else {
            bp.forward(&contexts, map).into_iter().map(Some).collect()
        };

        for (slot, &i) in present.iter().enumerate() {
            let agent = &rollout.agents[i];
            let cur = states[t][i].expect("present");
            if agent.controlled_at(t) {
                let out = outputs[slot].as_ref().expect("forward ran");
                let mut action = match mode {
                    RolloutMode::Deterministic => out.mean_action()?,
                    RolloutMode::Sampled => {
                        let noise: (f64, f64) = (
                            rng.sample(rand_distr::StandardNormal),
                            rng.sample(rand_distr::StandardNormal),
                        );
                        let u: f64 = rng.gen();
                        out.sample(noise, u)?
                    }
                };
                if opts.action_probes {
                    let off = opts.probe_offsets.get(&(i, t)).copied().unwrap_or((0.0, 0.0));
                    let px = g.leaf(crate::autodiff::Tensor::scalar(off.0));
                    let py = g.leaf(crate::autodiff::Tensor::scalar(off.1));
                    probes.insert((i, t), (px, py));
                    action = (action.0 + g.as_var(px), action.1 + g.as_var(py));
                }
                if !action.0.val().is_finite() || !action.1.val().is_finite() {
                    return Err(SimError::Simulation {
                        step: t,
                        msg: format!("non-finite action for agent {}", agent.agent_id),
                    });
                }
                let next = apply_action(&cur.pose, action);
                actions.insert((i, t), action);
                states[t + 1][i] = Some(SimPose { pose: next });
            } else if let Some(p) = agent.pose_at(t + 1) {
                states[t + 1][i] = Some(constant_pose(g, p));
            }
        }
        // Agents appearing at t+1.
        for (i, a) in rollout.agents.iter().enumerate() {
            if states[t + 1][i].is_none() {
                if let Some(p) = (a.first_tick == t + 1).then(|| a.pose_at(t + 1)).flatten() {
                    states[t + 1][i] = Some(constant_pose(g, p));
                }
            }
        }
    }

    Ok(SimTrajectory { graph: g, source: rollout.clone(), states, actions, probes })
}

fn constant_pose<'g>(g: &'g Graph, p: &Pose2D<f64>) -> SimPose<'g> {
    SimPose {
        pose: Pose2D { x: g.var(p.x), y: g.var(p.y), hx: g.var(p.hx), hy: g.var(p.hy) },
    }
}

// ---------------------------------------------------------------------------
// Control masks
// ---------------------------------------------------------------------------

/// Control every agent from its fourth present tick until it leaves.
pub fn control_mask_all(rollout: &Rollout) -> Vec<Vec<bool>> {
    rollout
        .agents
        .iter()
        .map(|a| {
            let mut mask = vec![false; ROLLOUT_STEPS];
            for t in a.eligible_steps() {
                mask[t] = true;
            }
            mask
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub enum SingleSelector {
    /// Seeded draw with probability proportional to presence length.
    Proportional { seed: u64 },
    /// The agent with the most ticks; ties break to the lowest agent id.
    MaxTimesteps,
}

/// Control exactly one agent (all others replay).
pub fn control_mask_single(
    rollout: &Rollout,
    selector: SingleSelector,
) -> Result<Vec<Vec<bool>>, SimError> {
    let eligible: Vec<usize> = (0..rollout.agents.len())
        .filter(|&i| !rollout.agents[i].eligible_steps().is_empty())
        .collect();
    if eligible.is_empty() {
        return Err(SimError::Selection("no controllable agent in rollout".into()));
    }
    let pick = match selector {
        SingleSelector::MaxTimesteps => *eligible
            .iter()
            .max_by(|&&a, &&b| {
                let (pa, pb) = (rollout.agents[a].poses.len(), rollout.agents[b].poses.len());
                pa.cmp(&pb).then(
                    rollout.agents[b]
                        .agent_id
                        .cmp(&rollout.agents[a].agent_id),
                )
            })
            .expect("non-empty"),
        SingleSelector::Proportional { seed } => {
            use rand::SeedableRng;
            let total: usize = eligible.iter().map(|&i| rollout.agents[i].poses.len()).sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: f64 = rng.gen::<f64>() * total as f64;
            let mut cum = 0.0;
            let mut pick = *eligible.last().expect("non-empty");
            for &i in &eligible {
                cum += rollout.agents[i].poses.len() as f64;
                if u < cum {
                    pick = i;
                    break;
                }
            }
            pick
        }
    };
    let mut masks: Vec<Vec<bool>> =
        (0..rollout.agents.len()).map(|_| vec![false; ROLLOUT_STEPS]).collect();
    for t in rollout.agents[pick].eligible_steps() {
        masks[pick][t] = true;
    }
    Ok(masks)
}

/// A copy of the rollout with a different control mask.
pub fn with_control_mask(rollout: &Rollout, masks: &[Vec<bool>]) -> Rollout {
    let mut out = rollout.clone();
    for (a, m) in out.agents.iter_mut().zip(masks) {
        a.control = m.clone();
    }
    out
}
