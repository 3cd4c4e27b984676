//! CSV ingestion of drone-recorded highway tracks.
//!
//! Expects the track layout used by drone datasets: one row per
//! (track, frame) with centered positions in meters, headings in degrees and
//! velocities/accelerations in SI units, plus a meta file mapping tracks to
//! agent classes.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::{AgentFrame, AgentKind, AgentRecord, MapModel, Recording, SceneError, SceneResult};
use crate::geometry::Pose2D;

const TRACK_COLUMNS: [&str; 11] = [
    "trackId",
    "frame",
    "xCenter",
    "yCenter",
    "heading",
    "width",
    "length",
    "xVelocity",
    "yVelocity",
    "xAcceleration",
    "yAcceleration",
];

/// Result of one ingestion: the recording plus any skipped-agent notes.
#[derive(Debug)]
pub struct IngestOutcome {
    pub recording: Recording,
    pub warnings: Vec<String>,
}

/// Ingest a tracks CSV + meta CSV + map JSON into a native-rate recording.
///
/// `frame_rate_hz` is the native rate of the tracks file (the CSV itself does
/// not carry it). Agent classes other than car and truck are dropped with a
/// warning.
pub fn ingest_exid(
    tracks_csv: &Path,
    tracks_meta_csv: &Path,
    map_file: &Path,
    recording_id: u64,
    frame_rate_hz: f64,
) -> SceneResult<IngestOutcome> {
    let map = MapModel::from_json(&std::fs::read_to_string(map_file)?)?;
    let tracks = std::fs::File::open(tracks_csv)?;
    let meta = std::fs::File::open(tracks_meta_csv)?;
    ingest_exid_readers(tracks, meta, map.id.clone(), recording_id, frame_rate_hz)
}

/// Reader-based variant of [`ingest_exid`] (also the fuzzing entry point).
pub fn ingest_exid_readers<R1: Read, R2: Read>(
    tracks: R1,
    meta: R2,
    map_ref: String,
    recording_id: u64,
    frame_rate_hz: f64,
) -> SceneResult<IngestOutcome> {
    let classes = parse_meta(meta)?;

    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(tracks);
    let headers = reader
        .headers()
        .map_err(|e| SceneError::Format(format!("tracks header: {e}")))?
        .clone();
    let mut col = BTreeMap::new();
    for name in TRACK_COLUMNS {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SceneError::Format(name.to_string()))?;
        col.insert(name, idx);
    }

    #[derive(Debug)]
    struct Row {
        frame: i64,
        x: f64,
        y: f64,
        heading_deg: f64,
        width: f64,
        length: f64,
        vx: f64,
        vy: f64,
        ax: f64,
        ay: f64,
    }

    let mut per_track: BTreeMap<u64, Vec<Row>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| SceneError::Format(format!("tracks row: {e}")))?;
        let get = |name: &str| -> SceneResult<f64> {
            let raw = record
                .get(col[name])
                .ok_or_else(|| SceneError::Format(name.to_string()))?;
            raw.parse::<f64>()
                .map_err(|_| SceneError::Format(format!("{name}: bad value {raw:?}")))
        };
        let track_id = get("trackId")? as u64;
        per_track.entry(track_id).or_default().push(Row {
            frame: get("frame")? as i64,
            x: get("xCenter")?,
            y: get("yCenter")?,
            heading_deg: get("heading")?,
            width: get("width")?,
            length: get("length")?,
            vx: get("xVelocity")?,
            vy: get("yVelocity")?,
            ax: get("xAcceleration")?,
            ay: get("yAcceleration")?,
        });
    }

    let mut warnings = Vec::new();
    let mut agents = Vec::new();
    for (track_id, rows) in per_track {
        let kind = match classes.get(&track_id).map(String::as_str) {
            Some("car") | Some("Car") | Some("CAR") => AgentKind::Car,
            Some("truck") | Some("Truck") | Some("TRUCK") => AgentKind::Truck,
            Some(other) => {
                warnings.push(format!("track {track_id}: dropped class {other:?}"));
                continue;
            }
            None => {
                warnings.push(format!("track {track_id}: missing meta row, dropped"));
                continue;
            }
        };
        for w in rows.windows(2) {
            if w[1].frame != w[0].frame + 1 {
                return Err(SceneError::Format(format!(
                    "track {track_id}: non-monotone or gapped frames {} -> {}",
                    w[0].frame, w[1].frame
                )));
            }
        }
        let first = &rows[0];
        if !(first.length > 0.0 && first.width > 0.0) {
            return Err(SceneError::Format(format!(
                "track {track_id}: non-positive dimensions"
            )));
        }
        if first.frame < 0 {
            return Err(SceneError::Format(format!("track {track_id}: negative frame index")));
        }
        let frames = rows
            .iter()
            .map(|r| {
                if ![r.x, r.y, r.heading_deg, r.vx, r.vy, r.ax, r.ay]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return Err(SceneError::Format(format!(
                        "track {track_id}: non-finite sample"
                    )));
                }
                Ok(AgentFrame {
                    pose: Pose2D::from_angle(r.x, r.y, r.heading_deg.to_radians()),
                    velocity: (r.vx, r.vy),
                    acceleration: (r.ax, r.ay),
                })
            })
            .collect::<SceneResult<Vec<_>>>()?;
        agents.push(AgentRecord {
            agent_id: track_id,
            kind,
            length: first.length,
            width: first.width,
            first_frame: first.frame as usize,
            frames,
        });
    }

    Ok(IngestOutcome {
        recording: Recording { id: recording_id, frame_rate_hz, map_ref, agents },
        warnings,
    })
}

fn parse_meta<R: Read>(meta: R) -> SceneResult<BTreeMap<u64, String>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(meta);
    let headers = reader
        .headers()
        .map_err(|e| SceneError::Format(format!("meta header: {e}")))?
        .clone();
    let id_col = headers
        .iter()
        .position(|h| h == "trackId")
        .ok_or_else(|| SceneError::Format("trackId".to_string()))?;
    let class_col = headers
        .iter()
        .position(|h| h == "class")
        .ok_or_else(|| SceneError::Format("class".to_string()))?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| SceneError::Format(format!("meta row: {e}")))?;
        let id: u64 = record
            .get(id_col)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| SceneError::Format("trackId: bad value".into()))?;
        let class = record
            .get(class_col)
            .ok_or_else(|| SceneError::Format("class".to_string()))?;
        out.insert(id, class.to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "trackId,frame,xCenter,yCenter,heading,width,length,xVelocity,yVelocity,xAcceleration,yAcceleration";

    fn toy_tracks(n_tracks: usize, n_frames: usize) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for t in 0..n_tracks {
            for f in 0..n_frames {
                s.push_str(&format!(
                    "{t},{f},{x},{y},0.0,2.0,4.5,20.0,0.0,0.0,0.0\n",
                    x = 20.0 * f as f64 * 0.04,
                    y = 2.0 + 3.5 * t as f64,
                ));
            }
        }
        s
    }

    fn toy_meta(n_tracks: usize) -> String {
        let mut s = String::from("trackId,class\n");
        for t in 0..n_tracks {
            s.push_str(&format!("{t},car\n"));
        }
        s
    }

    #[test]
    fn two_track_toy_csv() {
        let out = ingest_exid_readers(
            toy_tracks(2, 50).as_bytes(),
            toy_meta(2).as_bytes(),
            "m".into(),
            0,
            10.0,
        )
        .unwrap();
        assert_eq!(out.recording.agents.len(), 2);
        for a in &out.recording.agents {
            assert_eq!(a.frames.len(), 50);
        }
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn empty_tracks_file() {
        let out = ingest_exid_readers(
            format!("{HEADER}\n").as_bytes(),
            "trackId,class\n".as_bytes(),
            "m".into(),
            0,
            10.0,
        )
        .unwrap();
        assert!(out.recording.agents.is_empty());
    }

    #[test]
    fn missing_column_names_the_column() {
        let no_xvel = "trackId,frame,xCenter,yCenter,heading,width,length,yVelocity,xAcceleration,yAcceleration\n";
        let err = ingest_exid_readers(
            no_xvel.as_bytes(),
            toy_meta(1).as_bytes(),
            "m".into(),
            0,
            10.0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("xVelocity"), "{err}");
    }

    #[test]
    fn non_monotone_frames_rejected() {
        let mut s = String::from(HEADER);
        s.push('\n');
        s.push_str("0,0,0,0,0,2,4.5,1,0,0,0\n");
        s.push_str("0,2,1,0,0,2,4.5,1,0,0,0\n");
        let err = ingest_exid_readers(
            s.as_bytes(),
            toy_meta(1).as_bytes(),
            "m".into(),
            0,
            10.0,
        )
        .unwrap_err();
        assert!(matches!(err, SceneError::Format(_)));
    }

    #[test]
    fn unknown_class_dropped_with_warning() {
        let out = ingest_exid_readers(
            toy_tracks(1, 5).as_bytes(),
            "trackId,class\n0,pedestrian\n".as_bytes(),
            "m".into(),
            0,
            10.0,
        )
        .unwrap();
        assert!(out.recording.agents.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn row_order_within_frames_does_not_matter() {
        // Interleave two tracks; grouping is by trackId.
        let mut s = String::from(HEADER);
        s.push('\n');
        for f in 0..10 {
            for t in [1u64, 0u64] {
                s.push_str(&format!("{t},{f},{},0.0,0.0,2.0,4.5,20.0,0.0,0.0,0.0\n", f as f64));
            }
        }
        let out = ingest_exid_readers(
            s.as_bytes(),
            toy_meta(2).as_bytes(),
            "m".into(),
            0,
            10.0,
        )
        .unwrap();
        assert_eq!(out.recording.agents.len(), 2);
        assert!(out.recording.agents.iter().all(|a| a.frames.len() == 10));
    }
}
