//! Domain data model: agents, maps, recordings, rollouts and datasets.
//!
//! Recordings hold native-rate tracks; [`snip`] cuts them into fixed-length
//! 2 Hz rollouts. Maps are lane boundary polylines plus drivable polygons,
//! stored in a versioned JSON schema. Datasets are directories of maps and
//! rollouts plus a `splits.json`.

mod exid;
mod map;
mod rollout;
mod split;
mod synthetic;

pub use exid::{ingest_exid, ingest_exid_readers, IngestOutcome};
pub use map::{
    crop_map, crop_select, CroppedPolyline, LineType, MapModel, MapSegment, Polyline, CROP_FRONT,
    CROP_REAR, CROP_SIDE, SEGMENT_MAX_LEN, SEGMENT_POINTS,
};
pub use rollout::{snip, Rollout, RolloutAgent, StateView};
pub use split::split;
pub use synthetic::{build_highway_map, generate_synthetic, SyntheticConfig, LANE_WIDTH};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose2D;

/// Rollout timing: 10 seconds at 2 Hz.
pub const DT: f64 = 0.5;
pub const ROLLOUT_STEPS: usize = 20;
pub const ROLLOUT_STATES: usize = ROLLOUT_STEPS + 1;
/// Initial log-replay steps before an agent may be controlled.
pub const WARMUP_STEPS: usize = 3;
/// Minimum presence (in 2 Hz ticks) for an agent to ever be controlled.
pub const MIN_CONTROL_PRESENCE: usize = 4;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("format error: {0}")]
    Format(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type SceneResult<T> = Result<T, SceneError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Car,
    Truck,
}

/// One native-rate sample of one agent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AgentFrame {
    pub pose: Pose2D,
    pub velocity: (f64, f64),
    pub acceleration: (f64, f64),
}

/// A contiguous native-rate track of one agent.
#[derive(Debug, Clone)]
pub struct AgentRecord {
    pub agent_id: u64,
    pub kind: AgentKind,
    pub length: f64,
    pub width: f64,
    /// Native frame index of `frames[0]`.
    pub first_frame: usize,
    pub frames: Vec<AgentFrame>,
}

impl AgentRecord {
    pub fn last_frame(&self) -> usize {
        self.first_frame + self.frames.len().saturating_sub(1)
    }

    pub fn frame_at(&self, native_frame: usize) -> Option<&AgentFrame> {
        native_frame
            .checked_sub(self.first_frame)
            .and_then(|k| self.frames.get(k))
    }
}

/// A native-rate recording of one scene.
#[derive(Debug, Clone)]
pub struct Recording {
    pub id: u64,
    pub frame_rate_hz: f64,
    pub map_ref: String,
    pub agents: Vec<AgentRecord>,
}

/// Maps plus rollouts; the unit the trainer and evaluator consume.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub maps: Vec<MapModel>,
    pub rollouts: Vec<Rollout>,
}

impl Dataset {
    pub fn map(&self, map_ref: &str) -> Option<&MapModel> {
        self.maps.iter().find(|m| m.id == map_ref)
    }

    pub fn recording_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.rollouts.iter().map(|r| r.recording_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Write `<root>/maps/*.json`, `<root>/rollouts/*.json`.
    pub fn save(&self, root: &Path) -> SceneResult<()> {
        let maps_dir = root.join("maps");
        let rollouts_dir = root.join("rollouts");
        std::fs::create_dir_all(&maps_dir)?;
        std::fs::create_dir_all(&rollouts_dir)?;
        for m in &self.maps {
            let path = maps_dir.join(format!("{}.json", m.id));
            std::fs::write(path, m.to_json()?)?;
        }
        for (i, r) in self.rollouts.iter().enumerate() {
            let path = rollouts_dir.join(format!("rollout_{i:05}.json"));
            std::fs::write(path, r.to_json()?)?;
        }
        Ok(())
    }

    /// Load a dataset directory written by [`Dataset::save`].
    pub fn load(root: &Path) -> SceneResult<Self> {
        let mut maps = Vec::new();
        let maps_dir = root.join("maps");
        if maps_dir.is_dir() {
            let mut entries: Vec<_> = std::fs::read_dir(&maps_dir)?
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            entries.sort();
            for p in entries {
                maps.push(MapModel::from_json(&std::fs::read_to_string(p)?)?);
            }
        }
        let mut rollouts = Vec::new();
        let rollouts_dir = root.join("rollouts");
        if rollouts_dir.is_dir() {
            let mut entries: Vec<_> = std::fs::read_dir(&rollouts_dir)?
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            entries.sort();
            for p in entries {
                rollouts.push(Rollout::from_json(&std::fs::read_to_string(p)?)?);
            }
        }
        Ok(Dataset { maps, rollouts })
    }
}

/// `splits.json`: recording ids per split.
#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq, Eq)]
pub struct SplitManifest {
    pub schema_version: u32,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl SplitManifest {
    pub fn save(&self, root: &Path) -> SceneResult<()> {
        std::fs::create_dir_all(root)?;
        std::fs::write(root.join("splits.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(root: &Path) -> SceneResult<Self> {
        let text = std::fs::read_to_string(root.join("splits.json"))?;
        let m: SplitManifest = serde_json::from_str(&text)?;
        if m.schema_version != 1 {
            return Err(SceneError::Format(format!(
                "unsupported splits schema_version {}",
                m.schema_version
            )));
        }
        Ok(m)
    }

    /// Select the rollouts of one named split.
    pub fn select<'d>(&self, dataset: &'d Dataset, name: &str) -> Vec<&'d Rollout> {
        let ids = match name {
            "train" => &self.train,
            "val" => &self.val,
            _ => &self.test,
        };
        dataset
            .rollouts
            .iter()
            .filter(|r| ids.contains(&r.recording_id))
            .collect()
    }
}

/// Group rollout indices by recording id, ordered by id.
pub(crate) fn rollouts_by_recording(rollouts: &[Rollout]) -> BTreeMap<u64, Vec<usize>> {
    let mut by_rec: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, r) in rollouts.iter().enumerate() {
        by_rec.entry(r.recording_id).or_default().push(i);
    }
    by_rec
}
