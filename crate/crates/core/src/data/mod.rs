//! Dataset model and pipelines.
//!
//! A [`Sample`] is one training or evaluation record: 16-point (3 s at 5 Hz)
//! position histories for every vehicle in the scene, the interaction edge
//! set, and a 10-point (5 s at 2 Hz) ground-truth future per predicted
//! vehicle. All coordinates are meters in a frame whose origin is node 0's
//! position at the current instant, so node 0's last history point is exactly
//! (0, 0).
//!
//! Single-target records predict node 0 itself; multi-target records put the
//! ego vehicle at node 0 and predict nodes `1..=m`.

pub mod codec;
pub mod ngsim;
pub mod synth;
#[cfg(test)]
mod tests;

use crate::error::{Error, Result};
use crate::graph::EdgeSet;

/// History length: 3 seconds at 5 Hz, current point included.
pub const T_HIST: usize = 16;
/// Future length: 5 seconds at 2 Hz.
pub const T_FUT: usize = 10;
/// Raw recordings are 10 Hz; histories are down-sampled by this factor.
pub const HIST_DOWNSAMPLE: usize = 2;
/// Futures are down-sampled by this factor.
pub const FUT_DOWNSAMPLE: usize = 5;
/// Raw frame rate of the recordings.
pub const FRAME_HZ: f64 = 10.0;

pub const FEET_TO_METERS: f64 = 0.3048;

/// One raw observation of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame: u32,
    pub lane: u8,
    /// lateral position, meters
    pub x: f64,
    /// longitudinal position, meters
    pub y: f64,
}

/// A vehicle's full recorded motion, frames strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn validate(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if w[1].frame <= w[0].frame {
                return Err(Error::contract(format!(
                    "track {}: frames not strictly increasing at {}",
                    self.id, w[1].frame
                )));
            }
        }
        if self
            .points
            .iter()
            .any(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(Error::contract(format!(
                "track {}: non-finite position",
                self.id
            )));
        }
        Ok(())
    }
}

/// Ground truth for one predicted vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTruth {
    /// node index within the sample
    pub node: usize,
    /// future positions in the sample frame
    pub future: [[f64; 2]; T_FUT],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleMeta {
    pub segment: String,
    /// predicted vehicle's id (ego id for multi-target records)
    pub target_id: u64,
    /// current frame the record was cut at
    pub frame: u32,
}

/// One serialized scene; see the module docs for the frame convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// per-node history, node 0 first
    pub histories: Vec<[[f64; 2]; T_HIST]>,
    pub edges: EdgeSet,
    pub targets: Vec<TargetTruth>,
    pub meta: SampleMeta,
}

impl Sample {
    /// True for the single-target layout (node 0 is the predicted vehicle).
    pub fn is_single_target(&self) -> bool {
        self.targets.len() == 1 && self.targets[0].node == 0
    }

    /// The predicted future of a single-target sample.
    pub fn future(&self) -> &[[f64; 2]; T_FUT] {
        &self.targets[0].future
    }

    /// A node's position at the current instant (last history point).
    pub fn current_of(&self, node: usize) -> [f64; 2] {
        self.histories[node][T_HIST - 1]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.histories.len();
        if n == 0 {
            return Err(Error::contract("sample has no vehicles"));
        }
        if self.edges.nodes() != n {
            return Err(Error::contract(format!(
                "edge set covers {} nodes but sample has {n}",
                self.edges.nodes()
            )));
        }
        if self.current_of(0) != [0.0, 0.0] {
            return Err(Error::contract(
                "node 0 must sit at the origin at the current instant",
            ));
        }
        for h in &self.histories {
            if h.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::contract("non-finite history coordinate"));
            }
        }
        if self.targets.is_empty() {
            return Err(Error::contract("sample predicts no vehicle"));
        }
        for t in &self.targets {
            if t.node >= n {
                return Err(Error::contract(format!(
                    "target node {} out of {n} vehicles",
                    t.node
                )));
            }
            if t.future.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::contract("non-finite future coordinate"));
            }
        }
        if self.is_single_target() {
            if n > 1 + crate::graph::MAX_NEIGHBORS {
                return Err(Error::contract(format!(
                    "single-target sample has {n} vehicles, at most 9 allowed"
                )));
            }
        } else {
            // multi-target layout: targets are exactly nodes 1..=m
            for (k, t) in self.targets.iter().enumerate() {
                if t.node != k + 1 {
                    return Err(Error::contract(
                        "multi-target records must predict nodes 1..=m in order",
                    ));
                }
            }
        }
        Ok(())
    }
}
