//! Offline annotation of driving logs, long-tail resampling and JSONL
//! storage of hierarchy records.

use std::collections::BTreeMap;
use std::fs::File;
use std::hash::Hash;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::{Pose, TickRecord};
use crate::geometry::{to_ego_frame, Vec2};
use crate::hierarchy::{EgoPoint, Instruction, MidLevelCommand, Waypoints, WAYPOINT_COUNT};
use crate::planner::{plan, TelemetryFrame};

/// Log time between consecutive ground-truth waypoints.
pub const WAYPOINT_SPACING_S: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("log has {frames} frames; at least {needed} are needed")]
    ShortLog { frames: usize, needed: usize },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labeled training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyRecord {
    pub frame_id: u64,
    pub instruction: String,
    pub command: String,
    pub waypoints: Waypoints,
    pub telemetry: TelemetryFrame,
}

/// A logged frame: what the vehicle observed and where it was.
#[derive(Debug, Clone, PartialEq)]
pub struct LogFrame {
    pub telemetry: TelemetryFrame,
    pub pose: Pose,
}

fn stride(dt: f64) -> usize {
    ((WAYPOINT_SPACING_S / dt).round() as usize).max(1)
}

/// Minimum log length for a log sampled every `dt` seconds.
pub fn min_frames(dt: f64) -> usize {
    WAYPOINT_COUNT * stride(dt) + 1
}

fn future_waypoints(poses: &[Pose], t: usize, stride: usize) -> Waypoints {
    let here = poses[t];
    let origin = Vec2::new(here.x, here.y);
    let points: [EgoPoint; WAYPOINT_COUNT] = std::array::from_fn(|i| {
        let p = poses[t + (i + 1) * stride];
        to_ego_frame(origin, here.heading, Vec2::new(p.x, p.y))
    });
    Waypoints::from_recorded(points)
}

fn annotate_with<'a>(
    frames: usize,
    dt: f64,
    telemetry: impl Fn(usize) -> &'a TelemetryFrame,
    instruction: impl Fn(usize) -> &'a Instruction,
    frame_id: impl Fn(usize) -> u64,
    poses: &[Pose],
) -> Result<Vec<HierarchyRecord>, DatasetError> {
    let needed = min_frames(dt);
    if frames < needed {
        return Err(DatasetError::ShortLog { frames, needed });
    }
    let stride = stride(dt);
    Ok((0..frames - WAYPOINT_COUNT * stride)
        .map(|t| {
            let instr = instruction(t);
            HierarchyRecord {
                frame_id: frame_id(t),
                instruction: instr.text.clone(),
                command: plan(telemetry(t), instr).render(),
                waypoints: future_waypoints(poses, t, stride),
                telemetry: telemetry(t).clone(),
            }
        })
        .collect())
}

/// Labels every frame that has a full waypoint horizon after it. Frames
/// are `dt` seconds apart; the last `5 · 0.5 s` of the log are dropped.
pub fn annotate_log(
    frames: &[LogFrame],
    instruction: &Instruction,
    dt: f64,
) -> Result<Vec<HierarchyRecord>, DatasetError> {
    let poses: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
    annotate_with(frames.len(), dt, |i| &frames[i].telemetry, |_| instruction, |i| i as u64, &poses)
}

/// Labels an episode log, using the instruction that was active at each tick.
pub fn annotate_episode(records: &[TickRecord], dt: f64) -> Result<Vec<HierarchyRecord>, DatasetError> {
    let poses: Vec<Pose> = records.iter().map(|r| r.pose).collect();
    annotate_with(
        records.len(),
        dt,
        |i| &records[i].telemetry,
        |i| &records[i].instruction,
        |i| records[i].tick,
        &poses,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleConfig {
    /// Upper bound on largest/smallest group size after resampling.
    pub cap_ratio: f64,
    /// Groups at or below this size are never thinned.
    pub floor: usize,
    pub seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self { cap_ratio: 20.0, floor: 50, seed: 0 }
    }
}

impl ResampleConfig {
    /// Per-group size limit for a smallest group of `min_group` items.
    pub fn cap(&self, min_group: usize) -> usize {
        ((self.cap_ratio * min_group as f64).floor() as usize).max(self.floor)
    }
}

/// Indices kept by frequency-capped resampling of `keys`, in input order.
///
/// Every group larger than `cap(min group size)` is reduced to exactly that
/// many items by a seeded uniform subsample. The balance bound
/// `max/min ≤ cap_ratio` holds whenever `cap_ratio · min ≥ floor`.
pub fn resample_indices<K: Ord + Hash>(keys: &[K], cfg: &ResampleConfig) -> Vec<usize> {
    assert!(cfg.cap_ratio >= 1.0, "cap_ratio must be at least 1");
    let mut groups: BTreeMap<&K, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry(k).or_default().push(i);
    }
    let Some(min_group) = groups.values().map(Vec::len).min() else { return Vec::new() };
    let cap = cfg.cap(min_group);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut kept = Vec::with_capacity(keys.len());
    for members in groups.values() {
        if members.len() <= cap {
            kept.extend_from_slice(members);
        } else {
            kept.extend(sample(&mut rng, members.len(), cap).into_iter().map(|j| members[j]));
        }
    }
    kept.sort_unstable();
    kept
}

/// Thins over-represented commands; groups by the full command string.
pub fn resample(records: &[HierarchyRecord], cfg: &ResampleConfig) -> Vec<HierarchyRecord> {
    let keys: Vec<&str> = records.iter().map(|r| r.command.as_str()).collect();
    resample_indices(&keys, cfg).into_iter().map(|i| records[i].clone()).collect()
}

pub fn write_records(path: &Path, records: &[HierarchyRecord]) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<HierarchyRecord>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| DatasetError::Schema { line: i + 1, message };
        let record: HierarchyRecord = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        MidLevelCommand::parse(&record.command).map_err(|e| schema(e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}
