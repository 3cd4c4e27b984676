//! Lane-boundary polylines, drivable polygons and the agent-frame map crop.

use serde::{Deserialize, Serialize};

use super::{SceneError, SceneResult};
use crate::autodiff::Real;
use crate::geometry::{to_local, Pose2D};

/// Crop window in the agent frame: `[-REAR, FRONT]` along the heading,
/// `[-SIDE, SIDE]` laterally.
pub const CROP_FRONT: f64 = 120.0;
pub const CROP_REAR: f64 = 45.0;
pub const CROP_SIDE: f64 = 10.0;

/// Maximum arc length of one map segment.
pub const SEGMENT_MAX_LEN: f64 = 20.0;
/// Points per resampled segment.
pub const SEGMENT_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineType {
    Solid,
    Dashed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Polyline {
    #[serde(rename = "type")]
    pub line_type: LineType,
    pub points: Vec<(f64, f64)>,
}

/// A boundary piece of at most [`SEGMENT_MAX_LEN`] meters, resampled to
/// exactly [`SEGMENT_POINTS`] points at equal arc-length spacing.
#[derive(Debug, Clone)]
pub struct MapSegment {
    pub points: [(f64, f64); SEGMENT_POINTS],
    pub line_type: LineType,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MapJson {
    schema_version: u32,
    id: String,
    polylines: Vec<Polyline>,
    drivable_polygons: Vec<Vec<(f64, f64)>>,
}

/// Lane boundaries plus drivable areas. Segments are derived eagerly so the
/// per-step crop only selects, never resamples.
#[derive(Debug, Clone)]
pub struct MapModel {
    pub id: String,
    pub polylines: Vec<Polyline>,
    pub drivable_polygons: Vec<Vec<(f64, f64)>>,
    segments: Vec<MapSegment>,
}

impl MapModel {
    pub fn new(
        id: String,
        polylines: Vec<Polyline>,
        drivable_polygons: Vec<Vec<(f64, f64)>>,
    ) -> SceneResult<Self> {
        for (i, p) in polylines.iter().enumerate() {
            if p.points.len() < 2 {
                return Err(SceneError::Format(format!(
                    "polyline {i} has {} points, need at least 2",
                    p.points.len()
                )));
            }
            if p.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(SceneError::Format(format!("polyline {i} has non-finite points")));
            }
        }
        for (i, poly) in drivable_polygons.iter().enumerate() {
            if poly.len() < 3 {
                return Err(SceneError::Format(format!(
                    "drivable polygon {i} has {} points, need at least 3",
                    poly.len()
                )));
            }
            if poly.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(SceneError::Format(format!("drivable polygon {i} has non-finite points")));
            }
        }
        let segments = polylines.iter().flat_map(segment_polyline).collect();
        Ok(MapModel { id, polylines, drivable_polygons, segments })
    }

    pub fn segments(&self) -> &[MapSegment] {
        &self.segments
    }

    pub fn to_json(&self) -> SceneResult<String> {
        Ok(serde_json::to_string_pretty(&MapJson {
            schema_version: 1,
            id: self.id.clone(),
            polylines: self.polylines.clone(),
            drivable_polygons: self.drivable_polygons.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> SceneResult<Self> {
        let raw: MapJson = serde_json::from_str(text)?;
        if raw.schema_version != 1 {
            return Err(SceneError::Format(format!(
                "unsupported map schema_version {}",
                raw.schema_version
            )));
        }
        MapModel::new(raw.id, raw.polylines, raw.drivable_polygons)
    }
}

/// Split one polyline into equal arc-length pieces of at most
/// [`SEGMENT_MAX_LEN`] and resample each piece to [`SEGMENT_POINTS`] points.
fn segment_polyline(line: &Polyline) -> Vec<MapSegment> {
    let pts = &line.points;
    let mut cum = Vec::with_capacity(pts.len());
    let mut total = 0.0;
    cum.push(0.0);
    for w in pts.windows(2) {
        total += ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        cum.push(total);
    }
    if total <= 0.0 {
        return Vec::new();
    }
    let n_seg = (total / SEGMENT_MAX_LEN).ceil().max(1.0) as usize;
    let seg_len = total / n_seg as f64;

    let sample = |s: f64| -> (f64, f64) {
        let s = s.clamp(0.0, total);
        let j = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(j) => j.min(pts.len() - 2),
            Err(j) => j.saturating_sub(1).min(pts.len() - 2),
        };
        let span = (cum[j + 1] - cum[j]).max(1e-12);
        let t = (s - cum[j]) / span;
        (
            pts[j].0 + t * (pts[j + 1].0 - pts[j].0),
            pts[j].1 + t * (pts[j + 1].1 - pts[j].1),
        )
    };

    (0..n_seg)
        .map(|k| {
            let s0 = k as f64 * seg_len;
            let mut points = [(0.0, 0.0); SEGMENT_POINTS];
            for (i, p) in points.iter_mut().enumerate() {
                *p = sample(s0 + seg_len * i as f64 / (SEGMENT_POINTS - 1) as f64);
            }
            MapSegment { points, line_type: line.line_type }
        })
        .collect()
}

/// Indices of the segments with at least one point inside the crop rectangle
/// of `frame`. Selection is a forward-value decision.
pub fn crop_select(map: &MapModel, frame: &Pose2D<f64>) -> Vec<usize> {
    map.segments
        .iter()
        .enumerate()
        .filter(|(_, seg)| {
            seg.points.iter().any(|&p| {
                let (lx, ly) = to_local(p, frame);
                (-CROP_REAR..=CROP_FRONT).contains(&lx) && (-CROP_SIDE..=CROP_SIDE).contains(&ly)
            })
        })
        .map(|(i, _)| i)
        .collect()
}

/// A cropped segment in the agent frame.
#[derive(Debug, Clone)]
pub struct CroppedPolyline<R> {
    pub points: Vec<(R, R)>,
    pub line_type: LineType,
}

/// Crop the map around a frame and transform the selected segments into the
/// frame's coordinates. Differentiable w.r.t. the frame.
pub fn crop_map<R: Real>(map: &MapModel, frame: &Pose2D<R>) -> Vec<CroppedPolyline<R>> {
    let f_val = Pose2D::<f64> {
        x: frame.x.val(),
        y: frame.y.val(),
        hx: frame.hx.val(),
        hy: frame.hy.val(),
    };
    crop_select(map, &f_val)
        .into_iter()
        .map(|i| {
            let seg = &map.segments[i];
            CroppedPolyline {
                points: seg
                    .points
                    .iter()
                    .map(|&(px, py)| to_local((frame.x.lift(px), frame.x.lift(py)), frame))
                    .collect(),
                line_type: seg.line_type,
            }
        })
        .collect()
}
