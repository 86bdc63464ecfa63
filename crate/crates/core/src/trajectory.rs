//! Timestamped voxel paths.

use serde::{Deserialize, Serialize};

use crate::geometry::MotionSegment;
use crate::grid::Voxel;

/// Fleet-unique agent identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UavId(pub u32);

impl std::fmt::Display for UavId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "uav-{}", self.0)
    }
}

/// A voxel occupied at an instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Waypoint {
    pub voxel: Voxel,
    pub t: f64,
}

impl Waypoint {
    pub fn new(voxel: Voxel, t: f64) -> Self {
        Self { voxel, t }
    }
}

/// Roundtrip path of one agent: outbound leg, wait block at the delivery
/// voxel starting at `outbound_index`, and the return leg.
///
/// Between consecutive waypoints the agent moves on a straight line at
/// constant velocity; before the first and after the last waypoint it is
/// not in the airspace.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub uav: UavId,
    pub radius: f64,
    pub tuples: Vec<Waypoint>,
    pub outbound_index: usize,
    pub wait_steps: usize,
}

impl Trajectory {
    pub fn start_time(&self) -> f64 {
        self.tuples.first().map_or(0.0, |w| w.t)
    }

    pub fn end_time(&self) -> f64 {
        self.tuples.last().map_or(0.0, |w| w.t)
    }

    /// Mission duration, last minus first timestamp.
    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Motion segments between consecutive waypoints. A single-waypoint
    /// path yields one instantaneous segment.
    pub fn segments(&self) -> impl Iterator<Item = MotionSegment> + '_ {
        let single = (self.tuples.len() == 1).then(|| {
            let w = self.tuples[0];
            MotionSegment::between(w, w)
        });
        self.tuples
            .windows(2)
            .map(|w| MotionSegment::between(w[0], w[1]))
            .chain(single)
    }
}

/// Legs are plain waypoint lists.
pub type Leg = Vec<Waypoint>;

/// Joins outbound leg, a wait block of `wait` seconds at the delivery voxel
/// quantized into 1 s tuples, and the return leg.
pub fn combine_round_trip(
    uav: UavId,
    radius: f64,
    outbound: &[Waypoint],
    wait: f64,
    ret: &[Waypoint],
) -> Trajectory {
    let mut tuples: Vec<Waypoint> = outbound.to_vec();
    let outbound_index = tuples.len().saturating_sub(1);
    let arrive = *tuples.last().expect("outbound leg is never empty");
    let wait_steps = wait_step_count(wait);
    for k in 1..=wait_steps {
        let t = if k == wait_steps {
            arrive.t + wait
        } else {
            arrive.t + k as f64
        };
        tuples.push(Waypoint::new(arrive.voxel, t));
    }
    // the return leg starts with the wait-end tuple already present
    tuples.extend(ret.iter().skip(1).copied());
    Trajectory {
        uav,
        radius,
        tuples,
        outbound_index,
        wait_steps,
    }
}

/// Number of 1 s tuples used to encode a wait of `wait` seconds.
pub fn wait_step_count(wait: f64) -> usize {
    if wait <= 0.0 {
        0
    } else {
        wait.ceil() as usize
    }
}
