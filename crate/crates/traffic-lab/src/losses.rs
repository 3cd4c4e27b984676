//! Training objectives: weighted-MSE behavioral cloning (with orientation
//! term), likelihood behavioral cloning, the closed-loop trajectory loss, the
//! circle-relaxed collision penalty and the adversarial pair.

use thiserror::Error;

use crate::autodiff::{Real, Var};
use crate::geometry::{apply_action, circle_offsets, to_local, Pose2D};
use crate::policy::{BoundPolicy, HeadOutput};
use crate::scene::{MapModel, Rollout, ROLLOUT_STEPS};
use crate::simulator::{rollout_context_at, SimTrajectory};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Loss weights. The position weights are the inverse-variance pair used by
/// the weighted-MSE objectives; the remaining fields weight the orientation
/// term, the collision term and the adversarial/imitation combination.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub beta_orient: f64,
    pub beta_col: f64,
    pub alpha_adv: f64,
    pub beta_imit: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_x: 0.10472,
            alpha_y: 65.177,
            beta_orient: 6209.8,
            beta_col: 4.0,
            alpha_adv: 1.0,
            beta_imit: 1.0,
        }
    }
}

/// Axis-weighted squared error between two 2D values.
pub fn wmse<R: Real>(pred: (R, R), target: (R, R), w: &LossWeights) -> R {
    let dx = pred.0 - target.0;
    let dy = pred.1 - target.1;
    dx * dx * dx.lift(w.alpha_x) + dy * dy * dy.lift(w.alpha_y)
}

const LN_2PI: f64 = 1.8378770664093453;

fn gaussian_nll_2d<'g>(
    action: (f64, f64),
    mean: (Var<'g>, Var<'g>),
    std: (Var<'g>, Var<'g>),
) -> Var<'g> {
    let g = mean.0.graph();
    let zx = (g.var(action.0) - mean.0) / std.0;
    let zy = (g.var(action.1) - mean.1) / std.1;
    let half = g.var(0.5);
    let ln_sx = g.as_var(g.log(std.0.id()).expect("std is positive"));
    let ln_sy = g.as_var(g.log(std.1.id()).expect("std is positive"));
    ln_sx + ln_sy + g.var(LN_2PI) + half * (zx * zx + zy * zy)
}

/// Mean negative log likelihood of ground-truth actions under Gaussian or
/// mixture heads.
pub fn bc_nll<'g>(samples: &[(HeadOutput<'g>, (f64, f64))]) -> Result<Var<'g>, LossError> {
    if samples.is_empty() {
        return Err(LossError::Contract("empty likelihood batch".into()));
    }
    let mut terms = Vec::with_capacity(samples.len());
    for (out, action) in samples {
        let nll = match out {
            HeadOutput::Gaussian { mean, std } => gaussian_nll_2d(*action, *mean, *std),
            HeadOutput::Gmm { weights, means, stds } => {
                let g = means[0].0.graph();
                // log-sum-exp over per-component joint log densities.
                let logs: Vec<Var<'g>> = (0..weights.len())
                    .map(|c| {
                        let ln_w =
                            g.as_var(g.log(weights[c].id()).expect("softmax weight is positive"));
                        ln_w - gaussian_nll_2d(*action, means[c], stds[c])
                    })
                    .collect();
                let m = logs.iter().map(|v| v.val()).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = (logs[0] - logs[0].lift(m)).exp_var();
                for l in &logs[1..] {
                    sum = sum + (*l - l.lift(m)).exp_var();
                }
                let lse = g.as_var(g.log(sum.id()).expect("positive sum")) + g.var(m);
                -lse
            }
            _ => {
                return Err(LossError::Contract(
                    "likelihood loss requires a gaussian or gmm head".into(),
                ))
            }
        };
        terms.push(nll);
    }
    Ok(mean_vars(&terms))
}

/// One supervised sample for the deterministic objective.
pub struct OrientationSample<'g> {
    pub output: HeadOutput<'g>,
    /// Pose the action is applied from.
    pub pose: Pose2D<Var<'g>>,
    pub gt_action: (f64, f64),
    /// Ground-truth heading unit vector of the next tick.
    pub gt_next_heading: (f64, f64),
}

/// Weighted-MSE on actions plus the orientation term: the MSE (mean over the
/// two vector components) between the heading the action would produce and
/// the recorded next heading, weighted by `beta_orient`.
pub fn bc_wmse_orientation<'g>(
    samples: &[OrientationSample<'g>],
    w: &LossWeights,
) -> Result<Var<'g>, LossError> {
    if samples.is_empty() {
        return Err(LossError::Contract("empty supervised batch".into()));
    }
    let mut terms = Vec::with_capacity(samples.len());
    for s in samples {
        let mean = s.output.mean_action().map_err(|e| LossError::Contract(e.to_string()))?;
        let g = mean.0.graph();
        let pos = wmse(mean, (g.var(s.gt_action.0), g.var(s.gt_action.1)), w);
        let next = apply_action(&s.pose, mean);
        let dhx = next.hx - g.var(s.gt_next_heading.0);
        let dhy = next.hy - g.var(s.gt_next_heading.1);
        let orient = (dhx * dhx + dhy * dhy) * dhx.lift(0.5);
        terms.push(pos + orient * dhx.lift(w.beta_orient));
    }
    Ok(mean_vars(&terms))
}

/// Closed-loop trajectory loss: for each step, the per-controlled-agent mean
/// of the weighted MSE between generated and recorded positions, both
/// expressed in the frame anchored at the recorded pose of the previous tick;
/// summed over steps.
pub fn ds_loss<'g>(traj: &SimTrajectory<'g>, w: &LossWeights) -> Result<Var<'g>, LossError> {
    let g = traj.graph;
    let gt = &traj.source;
    let mut per_step_means = Vec::new();
    for t in 1..=ROLLOUT_STEPS {
        let mut terms = Vec::new();
        for (i, agent) in gt.agents.iter().enumerate() {
            if !agent.controlled_at(t - 1) {
                continue;
            }
            let (Some(gen), Some(gt_pose), Some(anchor)) =
                (traj.position(i, t), agent.pose_at(t), agent.pose_at(t - 1))
            else {
                continue;
            };
            let frame = Pose2D {
                x: g.var(anchor.x),
                y: g.var(anchor.y),
                hx: g.var(anchor.hx),
                hy: g.var(anchor.hy),
            };
            let gen_local = to_local(gen, &frame);
            let gt_local = to_local((g.var(gt_pose.x), g.var(gt_pose.y)), &frame);
            terms.push(wmse(gen_local, gt_local, w));
        }
        if !terms.is_empty() {
            per_step_means.push(mean_vars(&terms));
        }
    }
    if per_step_means.is_empty() {
        return Ok(g.var(0.0));
    }
    Ok(sum_vars(&per_step_means))
}

/// Circle count of the collision relaxation.
pub const COLLISION_CIRCLES: usize = 5;
/// Pairs beyond this center distance cannot contribute and are skipped.
pub const COLLISION_PRUNE_RADIUS: f64 = 20.0;

/// Differentiable collision penalty: squared hinge on circle-pair overlap,
/// summed over steps, close agent pairs and circle pairs.
pub fn collision_loss<'g>(traj: &SimTrajectory<'g>) -> Result<Var<'g>, LossError> {
    let g = traj.graph;
    let gt = &traj.source;
    let mut total = g.var(0.0);
    for t in 1..=ROLLOUT_STEPS {
        let present: Vec<usize> =
            (0..gt.agents.len()).filter(|&i| traj.states[t][i].is_some()).collect();
        for a in 0..present.len() {
            for b in a + 1..present.len() {
                let (i, j) = (present[a], present[b]);
                let (pi, pj) = (traj.states[t][i].unwrap().pose, traj.states[t][j].unwrap().pose);
                let dist = ((pi.x.val() - pj.x.val()).powi(2)
                    + (pi.y.val() - pj.y.val()).powi(2))
                .sqrt();
                if dist > COLLISION_PRUNE_RADIUS {
                    continue;
                }
                total = total + circle_pair_penalty(&pi, &pj, &gt.agents[i], &gt.agents[j])?;
            }
        }
    }
    Ok(total)
}

fn circle_pair_penalty<'g>(
    pi: &Pose2D<Var<'g>>,
    pj: &Pose2D<Var<'g>>,
    ai: &crate::scene::RolloutAgent,
    aj: &crate::scene::RolloutAgent,
) -> Result<Var<'g>, LossError> {
    let g = pi.x.graph();
    let (off_i, r_i) = circle_offsets(ai.length, ai.width, COLLISION_CIRCLES)
        .map_err(|e| LossError::Contract(e.to_string()))?;
    let (off_j, r_j) = circle_offsets(aj.length, aj.width, COLLISION_CIRCLES)
        .map_err(|e| LossError::Contract(e.to_string()))?;
    let mut total = g.var(0.0);
    let touch = r_i + r_j;
    for oi in &off_i {
        let ci = (pi.x + pi.hx * pi.x.lift(*oi), pi.y + pi.hy * pi.x.lift(*oi));
        for oj in &off_j {
            let cj = (pj.x + pj.hx * pj.x.lift(*oj), pj.y + pj.hy * pj.x.lift(*oj));
            let dx = ci.0 - cj.0;
            let dy = ci.1 - cj.1;
            let d = (dx * dx + dy * dy + dx.lift(1e-12)).sqrt();
            let gap = (d.lift(touch) - d).relu();
            total = total + gap * gap;
        }
    }
    Ok(total)
}

/// Discriminator cross-entropy: `mean(-log D(gt)) + mean(-log(1 - D(gen)))`.
pub fn mgail_d_loss<'g>(
    scores_gt: &[Var<'g>],
    scores_gen: &[Var<'g>],
) -> Result<Var<'g>, LossError> {
    if scores_gt.is_empty() || scores_gen.is_empty() {
        return Err(LossError::Contract("empty discriminator batch".into()));
    }
    let g = scores_gt[0].graph();
    let gt_term = {
        let logs: Vec<Var<'g>> = scores_gt
            .iter()
            .map(|s| g.as_var(g.log(s.id()).expect("score in (0,1)")))
            .collect();
        -mean_vars(&logs)
    };
    let gen_term = {
        let logs: Vec<Var<'g>> = scores_gen
            .iter()
            .map(|s| {
                let one_minus = g.var(1.0) - *s;
                g.as_var(g.log(one_minus.id()).expect("score below 1"))
            })
            .collect();
        -mean_vars(&logs)
    };
    Ok(gt_term + gen_term)
}

/// Generator objective: `mean(log(1 - D(gen)))`, with the generated states on
/// the live graph so gradients reach the policy through every timestep.
pub fn mgail_g_loss<'g>(scores_gen: &[Var<'g>]) -> Result<Var<'g>, LossError> {
    if scores_gen.is_empty() {
        return Err(LossError::Contract("empty generator batch".into()));
    }
    let g = scores_gen[0].graph();
    let logs: Vec<Var<'g>> = scores_gen
        .iter()
        .map(|s| {
            let one_minus = g.var(1.0) - *s;
            g.as_var(g.log(one_minus.id()).expect("score below 1"))
        })
        .collect();
    Ok(mean_vars(&logs))
}

/// Discriminator scores over a rollout's states: for each step's resulting
/// state, the scores of the agents that were controlled into it.
pub fn disc_scores_rollout<'g>(
    disc: &BoundPolicy<'g>,
    rollout: &Rollout,
    map: &MapModel,
) -> Vec<Var<'g>> {
    let g = disc.graph();
    let mut scores = Vec::new();
    for t in 1..=ROLLOUT_STEPS {
        let present: Vec<usize> = (0..rollout.agents.len())
            .filter(|&i| rollout.agents[i].present_at(t))
            .collect();
        let picked: Vec<bool> = present
            .iter()
            .map(|&i| rollout.agents[i].controlled_at(t - 1))
            .collect();
        if !picked.iter().any(|&b| b) {
            continue;
        }
        let contexts: Vec<_> = present
            .iter()
            .map(|&i| rollout_context_at(g, rollout, i, t).expect("present"))
            .collect();
        let outs = disc.forward(&contexts, map);
        for (slot, out) in outs.iter().enumerate() {
            if picked[slot] {
                scores.push(out.score().expect("discriminator head"));
            }
        }
    }
    scores
}

/// Discriminator scores over generated (on-graph) states.
pub fn disc_scores_sim<'g>(
    disc: &BoundPolicy<'g>,
    traj: &SimTrajectory<'g>,
    map: &MapModel,
) -> Vec<Var<'g>> {
    let gt = &traj.source;
    let mut scores = Vec::new();
    for t in 1..=ROLLOUT_STEPS {
        let present: Vec<usize> =
            (0..gt.agents.len()).filter(|&i| traj.states[t][i].is_some()).collect();
        let picked: Vec<bool> =
            present.iter().map(|&i| gt.agents[i].controlled_at(t - 1)).collect();
        if !picked.iter().any(|&b| b) {
            continue;
        }
        let contexts: Vec<_> = present
            .iter()
            .map(|&i| traj.context_at(i, t).expect("present"))
            .collect();
        let outs = disc.forward(&contexts, map);
        for (slot, out) in outs.iter().enumerate() {
            if picked[slot] {
                scores.push(out.score().expect("discriminator head"));
            }
        }
    }
    scores
}

/// A weighted sum with the per-term raw values recorded for logging.
pub struct CombinedLoss<'g> {
    pub total: Var<'g>,
    pub parts: Vec<(String, f64)>,
}

pub fn combine<'g>(terms: &[(&str, Var<'g>, f64)]) -> CombinedLoss<'g> {
    assert!(!terms.is_empty(), "combine of zero terms");
    let mut total = terms[0].1 * terms[0].1.lift(terms[0].2);
    for (_, v, w) in &terms[1..] {
        total = total + *v * v.lift(*w);
    }
    CombinedLoss {
        total,
        parts: terms.iter().map(|(n, v, _)| (n.to_string(), v.val())).collect(),
    }
}

fn mean_vars<'g>(vars: &[Var<'g>]) -> Var<'g> {
    sum_vars(vars) * vars[0].lift(1.0 / vars.len() as f64)
}

fn sum_vars<'g>(vars: &[Var<'g>]) -> Var<'g> {
    let g = vars[0].graph();
    if vars.len() == 1 {
        return vars[0];
    }
    let ids: Vec<_> = vars.iter().map(|v| v.id()).collect();
    let row = g.concat(&ids, 1).expect("scalar row");
    g.as_var(g.sum(row))
}

trait VarExp<'g> {
    fn exp_var(self) -> Var<'g>;
}

impl<'g> VarExp<'g> for Var<'g> {
    fn exp_var(self) -> Var<'g> {
        let g = self.graph();
        g.as_var(g.exp(self.id()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn wmse_examples() {
        let w = LossWeights::default();
        assert_eq!(wmse((1.5, -0.4), (1.5, -0.4), &w), 0.0);
        let got = wmse((1.0, 0.0), (0.0, 0.0), &w);
        assert!((got - 0.10472).abs() < 1e-12);
        let got = wmse((0.0, 1.0), (0.0, 0.0), &w);
        assert!((got - 65.177).abs() < 1e-12);
    }

    fn gaussian_output(g: &Graph, mean: (f64, f64), std: (f64, f64)) -> HeadOutput<'_> {
        HeadOutput::Gaussian {
            mean: (g.var(mean.0), g.var(mean.1)),
            std: (g.var(std.0), g.var(std.1)),
        }
    }

    #[test]
    fn gaussian_nll_at_mean_unit_std() {
        let g = Graph::new();
        let out = gaussian_output(&g, (0.7, -0.2), (1.0, 1.0));
        let nll = bc_nll(&[(out, (0.7, -0.2))]).unwrap();
        assert!((nll.val() - LN_2PI).abs() < 1e-12, "{}", nll.val());
    }

    #[test]
    fn gmm_single_component_matches_gaussian() {
        let g = Graph::new();
        let gauss = gaussian_output(&g, (0.3, 0.1), (0.5, 0.8));
        let gmm = HeadOutput::Gmm {
            weights: vec![g.var(1.0)],
            means: vec![(g.var(0.3), g.var(0.1))],
            stds: vec![(g.var(0.5), g.var(0.8))],
        };
        let a = bc_nll(&[(gauss, (0.45, 0.0))]).unwrap().val();
        let b = bc_nll(&[(gmm, (0.45, 0.0))]).unwrap().val();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn shrinking_std_at_mean_decreases_nll() {
        let g = Graph::new();
        let mut last = f64::INFINITY;
        for s in [1.0, 0.5, 0.25] {
            let out = gaussian_output(&g, (0.2, 0.2), (s, s));
            let nll = bc_nll(&[(out, (0.2, 0.2))]).unwrap().val();
            assert!(nll < last, "std {s}: {nll} !< {last}");
            last = nll;
        }
    }

    #[test]
    fn nll_rejects_deterministic_head() {
        let g = Graph::new();
        let out = HeadOutput::Deterministic { mean: (g.var(0.0), g.var(0.0)) };
        assert!(bc_nll(&[(out, (0.0, 0.0))]).is_err());
    }

    #[test]
    fn orientation_loss_perfect_action_is_zero() {
        let g = Graph::new();
        let pose = Pose2D { x: g.var(0.0), y: g.var(0.0), hx: g.var(1.0), hy: g.var(0.0) };
        let s = OrientationSample {
            output: HeadOutput::Deterministic { mean: (g.var(2.0), g.var(0.0)) },
            pose,
            gt_action: (2.0, 0.0),
            gt_next_heading: (1.0, 0.0),
        };
        let l = bc_wmse_orientation(&[s], &LossWeights::default()).unwrap();
        assert!(l.val().abs() < 1e-12);
    }

    #[test]
    fn orientation_loss_opposite_heading() {
        // Exact position, heading 180 degrees wrong: the unit vectors differ
        // by (2, 0) whose component-mean square is 2.
        let g = Graph::new();
        let w = LossWeights { alpha_x: 0.0, alpha_y: 0.0, ..Default::default() };
        let pose = Pose2D { x: g.var(0.0), y: g.var(0.0), hx: g.var(1.0), hy: g.var(0.0) };
        let s = OrientationSample {
            output: HeadOutput::Deterministic { mean: (g.var(2.0), g.var(0.0)) },
            pose,
            gt_action: (2.0, 0.0),
            gt_next_heading: (-1.0, 0.0),
        };
        let l = bc_wmse_orientation(&[s], &w).unwrap();
        assert!((l.val() - w.beta_orient * 2.0).abs() < 1e-9, "{}", l.val());
    }

    #[test]
    fn d_loss_uninformative_discriminator() {
        let g = Graph::new();
        let gt: Vec<Var> = (0..4).map(|_| g.var(0.5)).collect();
        let gen: Vec<Var> = (0..4).map(|_| g.var(0.5)).collect();
        let l = mgail_d_loss(&gt, &gen).unwrap();
        assert!((l.val() - 2.0 * (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn d_loss_perfect_discriminator_approaches_zero() {
        let g = Graph::new();
        let gt = vec![g.var(0.999_999)];
        let gen = vec![g.var(1e-6)];
        let l = mgail_d_loss(&gt, &gen).unwrap();
        assert!(l.val() > 0.0 && l.val() < 1e-5, "{}", l.val());
    }

    #[test]
    fn g_loss_uninformative_discriminator() {
        let g = Graph::new();
        let gen: Vec<Var> = (0..3).map(|_| g.var(0.5)).collect();
        let l = mgail_g_loss(&gen).unwrap();
        assert!((l.val() + (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn combine_is_identity_for_single_unit_term() {
        let g = Graph::new();
        let v = g.var(3.25);
        let c = combine(&[("term", v, 1.0)]);
        assert_eq!(c.total.val(), 3.25);
        assert_eq!(c.parts[0].1, 3.25);
    }

    #[test]
    fn combine_weights_scale_terms() {
        let g = Graph::new();
        let a = g.var(2.0);
        let b = g.var(3.0);
        let c = combine(&[("a", a, 50.0), ("b", b, 1.0)]);
        assert_eq!(c.total.val(), 103.0);
    }
}
