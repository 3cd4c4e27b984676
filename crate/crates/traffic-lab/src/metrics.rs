//! Evaluation metrics: infraction rates, displacement error and
//! distributional realism (Jensen-Shannon divergence of speed, acceleration
//! and lane-change-count histograms).
//!
//! All metrics look only at agents and frames where the agent is controlled.
//! A "controlled frame" is a state the agent was controlled into, i.e. tick
//! `t` with the control flag set at step `t - 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{obb_intersect, point_in_polygon, OrientedBox};
use crate::scene::{MapModel, Rollout, RolloutAgent, DT, ROLLOUT_STEPS};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric error: {0}")]
    Invalid(String),
}

pub const JSD_BINS: usize = 100;
pub const ADE_HORIZON_STEPS: usize = 10;

/// One evaluation unit: a generated rollout, its source, and the map.
#[derive(Clone, Copy)]
pub struct EvalCase<'a> {
    pub generated: &'a Rollout,
    pub ground_truth: &'a Rollout,
    pub map: &'a MapModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub collision_pct: f64,
    pub offroad_pct: f64,
    pub ade_m: f64,
    pub jsd_speed: f64,
    pub jsd_accel: f64,
    pub jsd_lane_changes: f64,
    pub n_controlled_agents: usize,
    pub n_frames: usize,
    /// Per-rollout-averaged collision percentage (the pooled figure above is
    /// the primary one).
    pub collision_pct_per_rollout: f64,
}

fn controlled_frames(agent: &RolloutAgent) -> impl Iterator<Item = usize> + '_ {
    (1..=ROLLOUT_STEPS).filter(|&t| agent.controlled_at(t - 1) && agent.present_at(t))
}

fn boxes_at(rollout: &Rollout, t: usize) -> Vec<(usize, OrientedBox)> {
    rollout
        .agents
        .iter()
        .enumerate()
        .filter_map(|(i, a)| {
            a.pose_at(t).map(|p| (i, OrientedBox::new(*p, a.length, a.width)))
        })
        .collect()
}

fn rollout_colliding_agents(rollout: &Rollout) -> Vec<bool> {
    let mut hit = vec![false; rollout.agents.len()];
    for t in 1..=ROLLOUT_STEPS {
        let boxes = boxes_at(rollout, t);
        for (i, a) in rollout.agents.iter().enumerate() {
            if !(a.controlled_at(t - 1) && a.present_at(t)) || hit[i] {
                continue;
            }
            let me = OrientedBox::new(*a.pose_at(t).expect("present"), a.length, a.width);
            if boxes.iter().any(|(j, other)| *j != i && obb_intersect(&me, other)) {
                hit[i] = true;
            }
        }
    }
    hit
}

/// Percentage of controlled agents with at least one collision, pooled over
/// all rollouts.
pub fn collision_rate(generated: &[&Rollout]) -> Result<f64, MetricError> {
    let mut controlled = 0usize;
    let mut colliding = 0usize;
    for r in generated {
        let hit = rollout_colliding_agents(r);
        for (i, a) in r.agents.iter().enumerate() {
            if controlled_frames(a).next().is_some() {
                controlled += 1;
                if hit[i] {
                    colliding += 1;
                }
            }
        }
    }
    if controlled == 0 {
        return Err(MetricError::Invalid("no controlled agents".into()));
    }
    Ok(100.0 * colliding as f64 / controlled as f64)
}

/// Same numerator/denominator but averaged per rollout instead of pooled.
pub fn collision_rate_per_rollout(generated: &[&Rollout]) -> Result<f64, MetricError> {
    let mut pcts = Vec::new();
    for r in generated {
        let hit = rollout_colliding_agents(r);
        let mut controlled = 0usize;
        let mut colliding = 0usize;
        for (i, a) in r.agents.iter().enumerate() {
            if controlled_frames(a).next().is_some() {
                controlled += 1;
                if hit[i] {
                    colliding += 1;
                }
            }
        }
        if controlled > 0 {
            pcts.push(100.0 * colliding as f64 / controlled as f64);
        }
    }
    if pcts.is_empty() {
        return Err(MetricError::Invalid("no controlled agents".into()));
    }
    Ok(pcts.iter().sum::<f64>() / pcts.len() as f64)
}

/// Percentage of controlled frame-agent pairs whose box center lies outside
/// every drivable polygon. Points on a polygon boundary count as on-road.
pub fn offroad_rate(cases: &[(&Rollout, &MapModel)]) -> Result<f64, MetricError> {
    let mut frames = 0usize;
    let mut off = 0usize;
    for (r, map) in cases {
        for a in &r.agents {
            for t in controlled_frames(a) {
                let p = a.pose_at(t).expect("present");
                frames += 1;
                let on = map
                    .drivable_polygons
                    .iter()
                    .any(|poly| point_in_polygon((p.x, p.y), poly));
                if !on {
                    off += 1;
                }
            }
        }
    }
    if frames == 0 {
        return Err(MetricError::Invalid("no controlled frames".into()));
    }
    Ok(100.0 * off as f64 / frames as f64)
}

/// Mean L2 position error over a fixed horizon from each agent's first
/// controlled step (truncated at scene exit), averaged over controlled
/// agents.
pub fn ade(generated: &Rollout, ground_truth: &Rollout) -> Result<f64, MetricError> {
    let mut per_agent = Vec::new();
    for (gen, gt) in generated.agents.iter().zip(&ground_truth.agents) {
        let Some(t0) = gen.first_controlled_step() else { continue };
        let mut errs = Vec::new();
        for k in 1..=ADE_HORIZON_STEPS {
            let t = t0 + k;
            let (Some(pg), Some(pt)) = (gen.pose_at(t), gt.pose_at(t)) else { break };
            errs.push(((pg.x - pt.x).powi(2) + (pg.y - pt.y).powi(2)).sqrt());
        }
        if !errs.is_empty() {
            per_agent.push(errs.iter().sum::<f64>() / errs.len() as f64);
        }
    }
    if per_agent.is_empty() {
        return Err(MetricError::Invalid("no controlled agents".into()));
    }
    Ok(per_agent.iter().sum::<f64>() / per_agent.len() as f64)
}

/// Jensen-Shannon divergence (natural log) between two normalized histograms.
pub fn jsd_from_histograms(p: &[f64], q: &[f64]) -> f64 {
    let ps: f64 = p.iter().sum();
    let qs: f64 = q.iter().sum();
    let mut out = 0.0;
    for (a, b) in p.iter().zip(q) {
        let (a, b) = (a / ps, b / qs);
        let m = 0.5 * (a + b);
        if a > 0.0 {
            out += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            out += 0.5 * b * (b / m).ln();
        }
    }
    out
}

/// Histogram two sample sets over the shared min/max range with equal-width
/// bins, then take the JSD. A degenerate range puts all mass in one bin.
pub fn jsd(gen: &[f64], gt: &[f64], bins: usize) -> Result<f64, MetricError> {
    if gen.is_empty() || gt.is_empty() {
        return Err(MetricError::Invalid("jsd needs at least one sample per side".into()));
    }
    let (hg, ht) = histogram_pair(gen, gt, bins);
    Ok(jsd_from_histograms(&hg, &ht))
}

/// Shared-range equisized-bin histograms (raw counts).
pub fn histogram_pair(gen: &[f64], gt: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>) {
    let all = gen.iter().chain(gt.iter());
    let lo = all.clone().cloned().fold(f64::INFINITY, f64::min);
    let hi = gen.iter().chain(gt.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let index = |x: f64| -> usize {
        if width <= 0.0 {
            0
        } else {
            (((x - lo) / width) as usize).min(bins - 1)
        }
    };
    let mut hg = vec![0.0; bins];
    let mut ht = vec![0.0; bins];
    for &x in gen {
        hg[index(x)] += 1.0;
    }
    for &x in gt {
        ht[index(x)] += 1.0;
    }
    (hg, ht)
}

/// Bin edges matching [`histogram_pair`].
pub fn histogram_edges(gen: &[f64], gt: &[f64], bins: usize) -> Vec<(f64, f64)> {
    let lo = gen.iter().chain(gt.iter()).cloned().fold(f64::INFINITY, f64::min);
    let hi = gen.iter().chain(gt.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    (0..bins)
        .map(|b| (lo + b as f64 * width, lo + (b + 1) as f64 * width))
        .collect()
}

/// Lane index per state: the drivable polygon containing the box center,
/// with a nearest-centroid tie-break (also used when no polygon contains it).
fn lane_index(map: &MapModel, p: (f64, f64)) -> usize {
    let containing: Vec<usize> = map
        .drivable_polygons
        .iter()
        .enumerate()
        .filter(|(_, poly)| point_in_polygon(p, poly))
        .map(|(i, _)| i)
        .collect();
    let candidates: Vec<usize> = if containing.is_empty() {
        (0..map.drivable_polygons.len()).collect()
    } else {
        containing
    };
    let centroid = |poly: &[(f64, f64)]| {
        let n = poly.len() as f64;
        let (sx, sy) = poly.iter().fold((0.0, 0.0), |acc, q| (acc.0 + q.0, acc.1 + q.1));
        (sx / n, sy / n)
    };
    candidates
        .into_iter()
        .min_by(|&a, &b| {
            let da = {
                let c = centroid(&map.drivable_polygons[a]);
                (c.0 - p.0).powi(2) + (c.1 - p.1).powi(2)
            };
            let db = {
                let c = centroid(&map.drivable_polygons[b]);
                (c.0 - p.0).powi(2) + (c.1 - p.1).powi(2)
            };
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        })
        .unwrap_or(0)
}

/// Lane-index transitions of one controlled agent, debounced: a change
/// counts only when the new lane persists for at least two consecutive
/// frames (one second at 2 Hz).
pub fn count_lane_changes(agent: &RolloutAgent, map: &MapModel) -> usize {
    let Some(t0) = agent.first_controlled_step() else { return 0 };
    let seq: Vec<usize> = (t0..)
        .map_while(|t| agent.pose_at(t).map(|p| lane_index(map, (p.x, p.y))))
        .collect();
    if seq.len() < 2 {
        return 0;
    }
    let mut committed = seq[0];
    let mut count = 0;
    for i in 1..seq.len() {
        if seq[i] != committed && i + 1 < seq.len() && seq[i + 1] == seq[i] {
            committed = seq[i];
            count += 1;
        }
    }
    count
}

/// Realism feature samples of one rollout set. Speeds and accelerations are
/// finite differences of positions, identically for generated and recorded
/// trajectories.
#[derive(Debug, Clone, Default)]
pub struct FeatureSamples {
    pub speed: Vec<f64>,
    pub accel: Vec<f64>,
    pub lane_changes: Vec<f64>,
}

pub fn feature_samples(cases: &[(&Rollout, &MapModel)]) -> FeatureSamples {
    let mut out = FeatureSamples::default();
    for (r, map) in cases {
        for a in &r.agents {
            let speed_at = |t: usize| -> Option<f64> {
                let p = a.pose_at(t)?;
                let q = a.pose_at(t.checked_sub(1)?)?;
                Some(((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt() / DT)
            };
            let mut any = false;
            for t in controlled_frames(a) {
                any = true;
                if let Some(s) = speed_at(t) {
                    out.speed.push(s);
                    if let Some(prev) = speed_at(t - 1) {
                        out.accel.push((s - prev) / DT);
                    }
                }
            }
            if any {
                out.lane_changes.push(count_lane_changes(a, map) as f64);
            }
        }
    }
    out
}

/// Run the full metric suite over aligned generated/ground-truth rollouts.
pub fn evaluate(cases: &[EvalCase]) -> Result<MetricReport, MetricError> {
    if cases.is_empty() {
        return Err(MetricError::Invalid("no evaluation cases".into()));
    }
    let generated: Vec<&Rollout> = cases.iter().map(|c| c.generated).collect();
    let gen_map: Vec<(&Rollout, &MapModel)> =
        cases.iter().map(|c| (c.generated, c.map)).collect();
    let gt_map: Vec<(&Rollout, &MapModel)> =
        cases.iter().map(|c| (c.ground_truth, c.map)).collect();

    let collision_pct = collision_rate(&generated)?;
    let collision_pct_per_rollout = collision_rate_per_rollout(&generated)?;
    let offroad_pct = offroad_rate(&gen_map)?;

    let mut ades = Vec::new();
    for c in cases {
        if let Ok(a) = ade(c.generated, c.ground_truth) {
            ades.push(a);
        }
    }
    if ades.is_empty() {
        return Err(MetricError::Invalid("no ade cases".into()));
    }
    let ade_m = ades.iter().sum::<f64>() / ades.len() as f64;

    let gen_feats = feature_samples(&gen_map);
    let gt_feats = feature_samples(&gt_map);
    let jsd_speed = jsd(&gen_feats.speed, &gt_feats.speed, JSD_BINS)?;
    let jsd_accel = jsd(&gen_feats.accel, &gt_feats.accel, JSD_BINS)?;
    let jsd_lane_changes = jsd(&gen_feats.lane_changes, &gt_feats.lane_changes, JSD_BINS)?;

    let mut n_controlled_agents = 0usize;
    let mut n_frames = 0usize;
    for r in &generated {
        for a in &r.agents {
            let frames = controlled_frames(a).count();
            if frames > 0 {
                n_controlled_agents += 1;
                n_frames += frames;
            }
        }
    }

    Ok(MetricReport {
        collision_pct,
        offroad_pct,
        ade_m,
        jsd_speed,
        jsd_accel,
        jsd_lane_changes,
        n_controlled_agents,
        n_frames,
        collision_pct_per_rollout,
    })
}

/// Histogram export rows: `feature, bin_left, bin_right, p_gt, p_gen`.
pub fn histogram_csv(feature: &str, gen: &[f64], gt: &[f64], bins: usize) -> String {
    let mut out = String::from("feature,bin_left,bin_right,p_gt,p_gen\n");
    if gen.is_empty() || gt.is_empty() {
        return out;
    }
    let (hg, ht) = histogram_pair(gen, gt, bins);
    let edges = histogram_edges(gen, gt, bins);
    let (sg, st): (f64, f64) = (hg.iter().sum(), ht.iter().sum());
    for ((l, r), (pg, pt)) in edges.iter().zip(hg.iter().zip(&ht)) {
        out.push_str(&format!("{feature},{l},{r},{},{}\n", pt / st, pg / sg));
    }
    out
}
