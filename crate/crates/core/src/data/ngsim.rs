//! Raw trajectory-table ingestion and sample extraction.
//!
//! Input tables are headered CSV or whitespace-delimited text with at least
//! the columns `Vehicle_ID`, `Frame_ID`, `Lane_ID`, `Local_X`, `Local_Y`
//! (positions in feet, 10 Hz). Extraction cuts fixed-length records around
//! each selected vehicle's lane change.

use super::{
    Sample, SampleMeta, TargetTruth, Track, TrackPoint, FEET_TO_METERS, FUT_DOWNSAMPLE,
    HIST_DOWNSAMPLE, T_FUT, T_HIST,
};
use crate::error::{Error, Result};
use crate::graph::{build_star_edges, select_neighbors, Snapshot, SnapshotEntry};
use rayon::prelude::*;
use std::collections::HashMap;
use std::io::BufRead;

/// Frames a lane id must persist before it counts as established; absorbs
/// the id flicker raw recordings show around lane boundaries.
pub const LANE_HYSTERESIS: usize = 10;

/// Candidate current frames per target: 13 s before the lane change to 13 s
/// after, at 10 Hz.
pub const WINDOW_FRAMES: i64 = 130;

const RAMP_LANES: [u8; 2] = [7, 8];
const MIN_EXTENT_M: f64 = 1000.0 * FEET_TO_METERS;
const CHANGE_RANGE_M: (f64, f64) = (300.0 * FEET_TO_METERS, 1900.0 * FEET_TO_METERS);
const MIN_SWING_M: f64 = 10.0 * FEET_TO_METERS;

/// History frames needed relative to the current frame f: f-30, f-28, ..., f.
fn history_offsets() -> impl Iterator<Item = i64> {
    (0..T_HIST).map(|k| -(((T_HIST - 1 - k) * HIST_DOWNSAMPLE) as i64))
}

/// Future frames needed relative to f: f+5, f+10, ..., f+50.
fn future_offsets() -> impl Iterator<Item = i64> {
    (1..=T_FUT).map(|k| (k * FUT_DOWNSAMPLE) as i64)
}

fn split_line(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parses a raw trajectory table into per-vehicle tracks sorted by frame,
/// converting feet to meters. Vehicles with out-of-order rows are sorted with
/// a warning; duplicate frames keep the first row.
pub fn ingest<R: BufRead>(reader: R) -> Result<Vec<Track>> {
    let mut lines = reader.lines();
    let header = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(Error::Format("empty input table".to_string())),
        }
    };
    let names = split_line(&header);
    let col = |name: &str| -> Result<usize> {
        names
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| Error::Format(format!("missing column {name}")))
    };
    let c_vid = col("Vehicle_ID")?;
    let c_frame = col("Frame_ID")?;
    let c_lane = col("Lane_ID")?;
    let c_x = col("Local_X")?;
    let c_y = col("Local_Y")?;
    let needed = [c_vid, c_frame, c_lane, c_x, c_y]
        .into_iter()
        .max()
        .unwrap();

    let mut by_vehicle: HashMap<u64, Vec<TrackPoint>> = HashMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_line(&line);
        if fields.len() <= needed {
            return Err(Error::Format(format!(
                "line {}: {} fields, need at least {}",
                lineno + 2,
                fields.len(),
                needed + 1
            )));
        }
        let parse_f = |i: usize, what: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("line {}: bad {what} '{}'", lineno + 2, fields[i])))
        };
        let id = parse_f(c_vid, "Vehicle_ID")? as u64;
        let frame = parse_f(c_frame, "Frame_ID")? as u32;
        let lane = parse_f(c_lane, "Lane_ID")? as u8;
        let x = parse_f(c_x, "Local_X")? * FEET_TO_METERS;
        let y = parse_f(c_y, "Local_Y")? * FEET_TO_METERS;
        by_vehicle
            .entry(id)
            .or_default()
            .push(TrackPoint { frame, lane, x, y });
    }

    let mut tracks: Vec<Track> = by_vehicle
        .into_iter()
        .map(|(id, mut points)| {
            if points.windows(2).any(|w| w[1].frame <= w[0].frame) {
                log::warn!("vehicle {id}: frames out of order, sorting");
                points.sort_by_key(|p| p.frame);
                points.dedup_by_key(|p| p.frame);
            }
            Track { id, points }
        })
        .collect();
    tracks.sort_by_key(|t| t.id);
    Ok(tracks)
}

/// Point indices where a debounced lane change commits: a lane counts once it
/// persists for [`LANE_HYSTERESIS`] frames, and a change is a transition
/// between two successive established lanes, located at the first frame of
/// the new one.
pub fn lane_change_indices(track: &Track) -> Vec<usize> {
    let mut runs: Vec<(u8, usize, usize)> = Vec::new(); // (lane, start, len)
    for (i, p) in track.points.iter().enumerate() {
        match runs.last_mut() {
            Some((lane, _, len)) if *lane == p.lane => *len += 1,
            _ => runs.push((p.lane, i, 1)),
        }
    }
    let mut changes = Vec::new();
    let mut established: Option<u8> = None;
    for (lane, start, len) in runs {
        if len < LANE_HYSTERESIS {
            continue;
        }
        if let Some(prev) = established {
            if prev != lane {
                changes.push(start);
            }
        }
        established = Some(lane);
    }
    changes
}

/// Applies the five target-vehicle conditions and returns the qualifying ids:
/// never on a ramp lane, exactly one (debounced) lane change, at least
/// 1,000 ft of recorded longitudinal extent, the change located within
/// 300-1,900 ft of the study area, and a total lateral swing around the
/// change moment above 10 ft.
pub fn select_targets(tracks: &[Track]) -> Vec<u64> {
    tracks
        .iter()
        .filter(|t| target_qualifies(t))
        .map(|t| t.id)
        .collect()
}

fn target_qualifies(track: &Track) -> bool {
    if track.points.iter().any(|p| RAMP_LANES.contains(&p.lane)) {
        return false;
    }
    let changes = lane_change_indices(track);
    if changes.len() != 1 {
        return false;
    }
    let change = changes[0];

    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &track.points {
        y_min = y_min.min(p.y);
        y_max = y_max.max(p.y);
    }
    if y_max - y_min < MIN_EXTENT_M {
        return false;
    }

    let y_change = track.points[change].y;
    if y_change < CHANGE_RANGE_M.0 || y_change > CHANGE_RANGE_M.1 {
        return false;
    }

    // Lateral swing: the maximum displacement from the change-moment lateral
    // position reached before the change plus the maximum reached after.
    let x_change = track.points[change].x;
    let lo = change.saturating_sub(WINDOW_FRAMES as usize);
    let hi = (change + WINDOW_FRAMES as usize).min(track.points.len() - 1);
    let max_dev = |range: std::ops::Range<usize>| {
        track.points[range]
            .iter()
            .map(|p| (p.x - x_change).abs())
            .fold(0.0f64, f64::max)
    };
    let before = max_dev(lo..change);
    let after = max_dev(change + 1..hi + 1);
    before + after > MIN_SWING_M
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub segment: String,
    /// When a selected neighbor lacks the full 3 s history: `false` (default)
    /// skips the whole frame, `true` drops that neighbor and keeps the rest.
    pub drop_incomplete_neighbors: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            segment: String::new(),
            drop_incomplete_neighbors: false,
        }
    }
}

/// Shared per-segment lookup structures: per-vehicle frame indices and
/// per-frame snapshots.
pub struct Extractor<'a> {
    tracks: &'a [Track],
    by_id: HashMap<u64, usize>,
    frame_of: Vec<HashMap<u32, usize>>,
    by_frame: HashMap<u32, Vec<SnapshotEntry>>,
}

impl<'a> Extractor<'a> {
    pub fn new(tracks: &'a [Track]) -> Self {
        let by_id = tracks.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
        let frame_of = tracks
            .iter()
            .map(|t| t.points.iter().enumerate().map(|(i, p)| (p.frame, i)).collect())
            .collect();
        let mut by_frame: HashMap<u32, Vec<SnapshotEntry>> = HashMap::new();
        for t in tracks {
            for p in &t.points {
                by_frame.entry(p.frame).or_default().push(SnapshotEntry {
                    id: t.id,
                    lane: p.lane,
                    y: p.y,
                    x: p.x,
                });
            }
        }
        Self {
            tracks,
            by_id,
            frame_of,
            by_frame,
        }
    }

    fn point_at(&self, vehicle: u64, frame: i64) -> Option<&TrackPoint> {
        if frame < 0 {
            return None;
        }
        let ti = *self.by_id.get(&vehicle)?;
        let pi = *self.frame_of[ti].get(&(frame as u32))?;
        Some(&self.tracks[ti].points[pi])
    }

    fn has_history(&self, vehicle: u64, frame: i64) -> bool {
        history_offsets().all(|off| self.point_at(vehicle, frame + off).is_some())
    }

    fn history_of(&self, vehicle: u64, frame: i64, origin: [f64; 2]) -> [[f64; 2]; T_HIST] {
        let mut out = [[0.0; 2]; T_HIST];
        for (k, off) in history_offsets().enumerate() {
            let p = self.point_at(vehicle, frame + off).expect("checked");
            out[k] = [p.x - origin[0], p.y - origin[1]];
        }
        out
    }

    fn snapshot_at(&self, frame: u32) -> Result<Snapshot> {
        Snapshot::new(self.by_frame.get(&frame).cloned().unwrap_or_default())
    }

    /// Cuts all qualifying records for one target vehicle.
    pub fn samples_for(&self, target_id: u64, opts: &ExtractOptions) -> Result<Vec<Sample>> {
        let ti = *self
            .by_id
            .get(&target_id)
            .ok_or_else(|| Error::Lookup(format!("vehicle {target_id} not in segment")))?;
        let track = &self.tracks[ti];
        let changes = lane_change_indices(track);
        let change = *changes
            .first()
            .ok_or_else(|| Error::contract(format!("vehicle {target_id} has no lane change")))?;
        let t_lc = track.points[change].frame as i64;

        let mut samples = Vec::new();
        for f in (t_lc - WINDOW_FRAMES)..(t_lc + WINDOW_FRAMES) {
            let Some(cur) = self.point_at(target_id, f) else {
                continue;
            };
            if !self.has_history(target_id, f) {
                continue;
            }
            let future_pts: Option<Vec<[f64; 2]>> = future_offsets()
                .map(|off| self.point_at(target_id, f + off).map(|p| [p.x, p.y]))
                .collect();
            let Some(future_pts) = future_pts else {
                continue;
            };

            let snapshot = self.snapshot_at(f as u32)?;
            let neighbors = select_neighbors(&snapshot, target_id)?;
            let complete: Vec<u64> = neighbors
                .iter()
                .copied()
                .filter(|&n| self.has_history(n, f))
                .collect();
            if complete.len() != neighbors.len() && !opts.drop_incomplete_neighbors {
                continue;
            }

            let origin = [cur.x, cur.y];
            let mut histories = vec![self.history_of(target_id, f, origin)];
            histories.extend(complete.iter().map(|&n| self.history_of(n, f, origin)));
            let mut future = [[0.0; 2]; T_FUT];
            for (k, p) in future_pts.iter().enumerate() {
                future[k] = [p[0] - origin[0], p[1] - origin[1]];
            }

            let sample = Sample {
                histories,
                edges: build_star_edges(complete.len())?,
                targets: vec![TargetTruth { node: 0, future }],
                meta: SampleMeta {
                    segment: opts.segment.clone(),
                    target_id,
                    frame: f as u32,
                },
            };
            debug_assert!(sample.validate().is_ok());
            samples.push(sample);
        }
        Ok(samples)
    }

    /// Extracts every target in parallel; output is ordered by
    /// (segment, target id, frame).
    pub fn extract_all(&self, target_ids: &[u64], opts: &ExtractOptions) -> Result<Vec<Sample>> {
        let mut ids = target_ids.to_vec();
        ids.sort_unstable();
        let per_target: Vec<Vec<Sample>> = ids
            .par_iter()
            .map(|&id| self.samples_for(id, opts))
            .collect::<Result<_>>()?;
        Ok(per_target.into_iter().flatten().collect())
    }
}

/// Convenience wrapper over [`Extractor`] for a single target.
pub fn extract_samples(
    tracks: &[Track],
    target_id: u64,
    opts: &ExtractOptions,
) -> Result<Vec<Sample>> {
    Extractor::new(tracks).samples_for(target_id, opts)
}
