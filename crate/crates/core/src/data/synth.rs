//! Synthetic highway scenes for desk-scale training and tests.
//!
//! Scenes are kinematically plausible: lane keepers hold their lane at
//! constant speed, the predicted vehicle follows its leader with a simple
//! gap-law controller, and lane changes run along a smooth lateral sigmoid.
//! Whether and where the predicted vehicle changes lane is decided by its
//! surroundings — a slow close leader plus a clear adjacent lane on one side
//! and a blocker alongside on the other — so the future is inferable from the
//! neighbor configuration, not from the vehicle's own history alone.
//!
//! Classes (lane keep / change left / change right) are generated in strict
//! rotation, so the dataset is balanced by construction. The class is
//! recorded in the sample's segment name (`synth_keep`, `synth_left`,
//! `synth_right`).

use super::{Sample, SampleMeta, TargetTruth, T_FUT, T_HIST};
use crate::error::Result;
use crate::graph::{build_mtp_graph, build_star_edges, select_neighbors, Snapshot, SnapshotEntry};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// 12-ft lanes, matching US highway geometry.
pub const LANE_WIDTH_M: f64 = 3.6576;

pub const SEGMENT_KEEP: &str = "synth_keep";
pub const SEGMENT_LEFT: &str = "synth_left";
pub const SEGMENT_RIGHT: &str = "synth_right";

// Simulation grid: t = -3.0 .. 5.0 s at 0.1 s; history samples every other
// step, future samples every fifth step past the current index.
const SIM_STEPS: usize = 81;
const SIM_DT: f64 = 0.1;
const CUR: usize = 30;

/// Uniform observation noise added to every stored coordinate, meters.
const NOISE_M: f64 = 0.05;
const CAR_LENGTH_M: f64 = 5.0;

fn lane_center(lane: u8) -> f64 {
    (lane as f64 - 0.5) * LANE_WIDTH_M
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (index as u64).wrapping_mul(0xA076_1D64_78BD_642F)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Keep,
    Left,
    Right,
}

impl Class {
    fn of_index(i: usize) -> Self {
        match i % 3 {
            0 => Class::Keep,
            1 => Class::Left,
            _ => Class::Right,
        }
    }

    fn segment(self) -> &'static str {
        match self {
            Class::Keep => SEGMENT_KEEP,
            Class::Left => SEGMENT_LEFT,
            Class::Right => SEGMENT_RIGHT,
        }
    }
}

/// A constant-speed lane keeper.
#[derive(Debug, Clone, Copy)]
struct Cruiser {
    id: u64,
    lane: u8,
    /// longitudinal position at t = 0
    y0: f64,
    v: f64,
    x_off: f64,
}

impl Cruiser {
    fn pos(&self, step: usize) -> [f64; 2] {
        let t = (step as f64 - CUR as f64) * SIM_DT;
        [lane_center(self.lane) + self.x_off, self.y0 + self.v * t]
    }
}

fn record_history(traj: &[[f64; 2]], origin: [f64; 2]) -> [[f64; 2]; T_HIST] {
    let mut out = [[0.0; 2]; T_HIST];
    for (k, slot) in out.iter_mut().enumerate() {
        let p = traj[2 * k];
        *slot = [p[0] - origin[0], p[1] - origin[1]];
    }
    out
}

fn record_future(traj: &[[f64; 2]], origin: [f64; 2]) -> [[f64; 2]; T_FUT] {
    let mut out = [[0.0; 2]; T_FUT];
    for (k, slot) in out.iter_mut().enumerate() {
        let p = traj[CUR + 5 * (k + 1)];
        *slot = [p[0] - origin[0], p[1] - origin[1]];
    }
    out
}

fn noisy(traj: &mut [[f64; 2]], rng: &mut ChaCha8Rng) {
    for p in traj {
        p[0] += rng.gen_range(-NOISE_M..=NOISE_M);
        p[1] += rng.gen_range(-NOISE_M..=NOISE_M);
    }
}

/// Gap-law acceleration toward a leader (or free driving when none).
fn acceleration(v: f64, v_des: f64, leader: Option<(f64, f64)>) -> f64 {
    match leader {
        Some((gap_front, v_lead)) => {
            let gap = gap_front - CAR_LENGTH_M;
            let want = 5.0 + 0.9 * v;
            (0.8 * (v_lead - v) + 0.06 * (gap - want)).clamp(-3.5, 1.5)
        }
        None => (0.4 * (v_des - v)).clamp(-1.0, 1.0),
    }
}

struct SceneTarget {
    traj: Vec<[f64; 2]>,
    lane: u8,
}

/// Integrates the predicted vehicle: car-following longitudinally, sigmoid
/// lateral profile for change classes. The leader switches to the destination
/// lane's (possibly absent) front vehicle once the lateral midpoint passes.
#[allow(clippy::too_many_arguments)]
fn simulate_target(
    rng: &mut ChaCha8Rng,
    class: Class,
    lane: u8,
    v0: f64,
    old_leader: Option<&Cruiser>,
    new_leader: Option<&Cruiser>,
    wobble_amp: f64,
) -> SceneTarget {
    let v_des = v0 + rng.gen_range(-0.5..=1.5);
    let (dx, t_mid, width) = match class {
        Class::Keep => (0.0, 0.0, 1.0),
        Class::Left => (
            -LANE_WIDTH_M,
            rng.gen_range(0.8..=3.2),
            rng.gen_range(0.45..=0.85),
        ),
        Class::Right => (
            LANE_WIDTH_M,
            rng.gen_range(0.8..=3.2),
            rng.gen_range(0.45..=0.85),
        ),
    };
    let wobble_period = rng.gen_range(6.0..=12.0);
    let wobble_phase = rng.gen_range(0.0..=std::f64::consts::TAU);

    // Integrate from t = -3 s, starting from the constant-speed rewind of the
    // nominal t=0 origin. Later accelerations drift y(0) off that origin a
    // little; neighbor gaps are read from true positions, so scenes stay
    // coherent.
    let t0 = -(CUR as f64) * SIM_DT;
    let mut traj = Vec::with_capacity(SIM_STEPS);
    let mut y = v0 * t0;
    let mut v = v0;
    let mut t = t0;
    for step in 0..SIM_STEPS {
        let progress = if dx == 0.0 {
            0.0
        } else {
            1.0 / (1.0 + (-(t - t_mid) / width).exp())
        };
        let x = lane_center(lane)
            + dx * progress
            + wobble_amp * (std::f64::consts::TAU * t / wobble_period + wobble_phase).sin();
        traj.push([x, y]);
        if step + 1 == SIM_STEPS {
            break;
        }

        let leader = if progress < 0.5 { old_leader } else { new_leader };
        let gap = leader.map(|l| (l.pos(step)[1] - y, l.v));
        let a = acceleration(v, v_des, gap);
        y += v * SIM_DT;
        v = (v + a * SIM_DT).clamp(0.5, 20.0);
        t += SIM_DT;
    }
    SceneTarget { traj, lane }
}

struct StpScene {
    target: SceneTarget,
    cruisers: Vec<Cruiser>,
}

fn build_stp_scene(rng: &mut ChaCha8Rng, class: Class) -> StpScene {
    let lane: u8 = match class {
        Class::Keep => rng.gen_range(1..=6),
        // Interior lanes so the opposite side always exists for the blocker.
        Class::Left | Class::Right => rng.gen_range(2..=5),
    };
    let v0 = rng.gen_range(8.0..=14.0);
    let mut next_id = 2u64;
    let mut cruisers: Vec<Cruiser> = Vec::new();
    let mut add = |cruisers: &mut Vec<Cruiser>, lane: u8, y0: f64, v: f64, rng: &mut ChaCha8Rng| {
        let id = next_id;
        next_id += 1;
        cruisers.push(Cruiser {
            id,
            lane,
            y0,
            v,
            x_off: rng.gen_range(-0.25..=0.25),
        });
    };

    let mut old_leader: Option<Cruiser> = None;
    let mut new_leader: Option<Cruiser> = None;

    match class {
        Class::Keep => {
            if rng.gen_bool(0.85) {
                // Near-equilibrium leader: barely perturbs the target.
                let v = v0 + rng.gen_range(-0.3..=0.9);
                let gap = 5.0 + 0.9 * v0 + CAR_LENGTH_M + rng.gen_range(-1.0..=8.0);
                add(&mut cruisers, lane, gap, v, rng);
                old_leader = cruisers.last().copied();
            }
            if rng.gen_bool(0.7) {
                add(&mut cruisers, lane, -rng.gen_range(8.0..=30.0), v0 + rng.gen_range(-1.0..=1.0), rng);
            }
            for adj in [lane.checked_sub(1).filter(|&l| l >= 1), (lane < 6).then(|| lane + 1)]
                .into_iter()
                .flatten()
            {
                if rng.gen_bool(0.75) {
                    let y = rng.gen_range(-35.0..=35.0);
                    add(&mut cruisers, adj, y, rng.gen_range(8.0..=14.0), rng);
                    if rng.gen_bool(0.5) {
                        add(&mut cruisers, adj, y + rng.gen_range(12.0..=30.0), rng.gen_range(8.0..=14.0), rng);
                    }
                    if rng.gen_bool(0.5) {
                        add(&mut cruisers, adj, y - rng.gen_range(12.0..=30.0), rng.gen_range(8.0..=14.0), rng);
                    }
                }
            }
        }
        Class::Left | Class::Right => {
            let dest = if class == Class::Left { lane - 1 } else { lane + 1 };
            let blocked = if class == Class::Left { lane + 1 } else { lane - 1 };

            // The motive: a slow vehicle close ahead.
            let v = v0 - rng.gen_range(2.5..=4.5);
            add(&mut cruisers, lane, rng.gen_range(9.0..=16.0) + CAR_LENGTH_M, v.max(2.0), rng);
            old_leader = cruisers.last().copied();
            if rng.gen_bool(0.6) {
                add(&mut cruisers, lane, -rng.gen_range(10.0..=30.0), v0 + rng.gen_range(-1.0..=1.0), rng);
            }

            // Destination lane: clear around the target, traffic only far away.
            if rng.gen_bool(0.5) {
                add(&mut cruisers, dest, rng.gen_range(38.0..=60.0), v0 + rng.gen_range(-1.0..=2.0), rng);
                new_leader = cruisers.last().copied();
            }
            if rng.gen_bool(0.5) {
                add(&mut cruisers, dest, -rng.gen_range(30.0..=50.0), v0 - rng.gen_range(0.0..=2.0), rng);
            }

            // Opposite side: a blocker alongside makes the direction readable.
            add(&mut cruisers, blocked, rng.gen_range(-6.0..=6.0), v0 + rng.gen_range(-0.5..=0.5), rng);
            if rng.gen_bool(0.5) {
                add(&mut cruisers, blocked, rng.gen_range(9.0..=25.0) + CAR_LENGTH_M, v0, rng);
            }
            if rng.gen_bool(0.5) {
                add(&mut cruisers, blocked, -rng.gen_range(9.0..=25.0), v0, rng);
            }
        }
    }

    let wobble = match class {
        Class::Keep => rng.gen_range(0.03..=0.12),
        _ => rng.gen_range(0.02..=0.06),
    };
    let target = simulate_target(
        rng,
        class,
        lane,
        v0,
        old_leader.as_ref(),
        new_leader.as_ref(),
        wobble,
    );
    StpScene { target, cruisers }
}

const TARGET_ID: u64 = 1;

fn stp_sample(index: usize, seed: u64) -> Result<Sample> {
    let mut rng = scene_rng(seed, index);
    let class = Class::of_index(index);
    let scene = build_stp_scene(&mut rng, class);

    let snapshot = Snapshot::new(
        std::iter::once(SnapshotEntry {
            id: TARGET_ID,
            lane: scene.target.lane,
            y: scene.target.traj[CUR][1],
            x: scene.target.traj[CUR][0],
        })
        .chain(scene.cruisers.iter().map(|c| SnapshotEntry {
            id: c.id,
            lane: c.lane,
            y: c.pos(CUR)[1],
            x: c.pos(CUR)[0],
        }))
        .collect(),
    )?;
    let neighbors = select_neighbors(&snapshot, TARGET_ID)?;

    let mut target_traj = scene.target.traj.clone();
    noisy(&mut target_traj, &mut rng);
    let origin = target_traj[CUR];

    let mut histories = vec![record_history(&target_traj, origin)];
    for &nid in &neighbors {
        let c = scene.cruisers.iter().find(|c| c.id == nid).expect("own id");
        let mut traj: Vec<[f64; 2]> = (0..SIM_STEPS).map(|s| c.pos(s)).collect();
        noisy(&mut traj, &mut rng);
        histories.push(record_history(&traj, origin));
    }

    let sample = Sample {
        histories,
        edges: build_star_edges(neighbors.len())?,
        targets: vec![TargetTruth {
            node: 0,
            future: record_future(&target_traj, origin),
        }],
        meta: SampleMeta {
            segment: class.segment().to_string(),
            target_id: index as u64,
            frame: CUR as u32,
        },
    };
    debug_assert!(sample.validate().is_ok());
    Ok(sample)
}

/// Generates `n` single-target samples, balanced across the three maneuver
/// classes. Deterministic in `seed` and embarrassingly parallel.
pub fn synth_dataset(n: usize, seed: u64) -> Result<Vec<Sample>> {
    (0..n).into_par_iter().map(|i| stp_sample(i, seed)).collect()
}

fn mtp_sample(index: usize, seed: u64) -> Result<Sample> {
    let mut rng = scene_rng(seed, !(index as u64) as usize ^ 0x5151);
    let ego_lane: u8 = rng.gen_range(2..=5);
    let ego_v = rng.gen_range(8.0..=14.0);
    let ego = Cruiser {
        id: 1,
        lane: ego_lane,
        y0: 0.0,
        v: ego_v,
        x_off: rng.gen_range(-0.2..=0.2),
    };

    let mut next_id = 2u64;
    let mut cruisers: Vec<Cruiser> = Vec::new();
    // Guaranteed leader so there is always at least one predicted vehicle.
    cruisers.push(Cruiser {
        id: next_id,
        lane: ego_lane,
        y0: rng.gen_range(12.0..=30.0),
        v: rng.gen_range(8.0..=14.0),
        x_off: rng.gen_range(-0.25..=0.25),
    });
    next_id += 1;
    for lane in ego_lane.saturating_sub(2).max(1)..=(ego_lane + 2).min(6) {
        let mut y: f64 = rng.gen_range(-60.0..=-30.0);
        while y < 70.0 {
            if rng.gen_bool(0.55) && !(lane == ego_lane && y.abs() < 10.0) {
                cruisers.push(Cruiser {
                    id: next_id,
                    lane,
                    y0: y,
                    v: rng.gen_range(8.0..=14.0),
                    x_off: rng.gen_range(-0.25..=0.25),
                });
                next_id += 1;
            }
            y += rng.gen_range(14.0..=40.0);
        }
    }

    let all: Vec<Cruiser> = std::iter::once(ego).chain(cruisers.iter().copied()).collect();
    let snapshot = Snapshot::new(
        all.iter()
            .map(|c| SnapshotEntry {
                id: c.id,
                lane: c.lane,
                y: c.pos(CUR)[1],
                x: c.pos(CUR)[0],
            })
            .collect(),
    )?;

    let targets = select_neighbors(&snapshot, ego.id)?;
    let mut others: Vec<u64> = Vec::new();
    for &t in &targets {
        for n in select_neighbors(&snapshot, t)? {
            if n != ego.id && !targets.contains(&n) && !others.contains(&n) {
                others.push(n);
            }
        }
    }
    others.sort_unstable();

    let (edges, order) = build_mtp_graph(&snapshot, ego.id, &targets, &others)?;

    let mut trajs: Vec<Vec<[f64; 2]>> = Vec::with_capacity(order.len());
    for &id in &order {
        let c = all.iter().find(|c| c.id == id).expect("ordered ids exist");
        let mut traj: Vec<[f64; 2]> = (0..SIM_STEPS).map(|s| c.pos(s)).collect();
        noisy(&mut traj, &mut rng);
        trajs.push(traj);
    }
    let origin = trajs[0][CUR];
    let histories: Vec<_> = trajs.iter().map(|t| record_history(t, origin)).collect();
    let target_truths: Vec<TargetTruth> = (0..targets.len())
        .map(|k| TargetTruth {
            node: k + 1,
            future: record_future(&trajs[k + 1], origin),
        })
        .collect();

    let sample = Sample {
        histories,
        edges,
        targets: target_truths,
        meta: SampleMeta {
            segment: "synth_mtp".to_string(),
            target_id: index as u64,
            frame: CUR as u32,
        },
    };
    debug_assert!(sample.validate().is_ok());
    Ok(sample)
}

/// Generates `n` multi-target samples: an ego lane keeper whose neighbors
/// become the predicted vehicles, plus their own surroundings.
pub fn synth_dataset_mtp(n: usize, seed: u64) -> Result<Vec<Sample>> {
    (0..n).into_par_iter().map(|i| mtp_sample(i, seed)).collect()
}
