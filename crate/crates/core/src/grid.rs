//! Bounded voxel lattice with 26-connectivity and static obstacles.
//!
//! Voxels are 1 m cubes addressed by integer indices; the center of voxel
//! `(x, y, z)` sits at the metric point `(x, y, z)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("voxel {0} is outside the grid {1:?}")]
    OutOfBounds(Voxel, [u32; 3]),
    #[error("voxels {0} and {1} are not 26-adjacent")]
    NotAdjacent(Voxel, Voxel),
    #[error("grid dimensions must be positive, got {0:?}")]
    EmptyDims([u32; 3]),
}

/// Integer voxel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct Voxel {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl Voxel {
    pub const fn new(x: u32, y: u32, z: u32) -> Self {
        Self { x, y, z }
    }

    /// Metric position of the voxel center.
    pub fn center(self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }

    /// Voxel displaced by `(dx, dy, dz)`, or `None` on underflow.
    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Option<Voxel> {
        Some(Voxel {
            x: self.x.checked_add_signed(dx)?,
            y: self.y.checked_add_signed(dy)?,
            z: self.z.checked_add_signed(dz)?,
        })
    }

    /// Chebyshev distance in voxel units.
    pub fn chebyshev(self, other: Voxel) -> u32 {
        self.x
            .abs_diff(other.x)
            .max(self.y.abs_diff(other.y))
            .max(self.z.abs_diff(other.z))
    }
}

impl From<[u32; 3]> for Voxel {
    fn from(a: [u32; 3]) -> Self {
        Voxel::new(a[0], a[1], a[2])
    }
}

impl From<Voxel> for [u32; 3] {
    fn from(v: Voxel) -> Self {
        [v.x, v.y, v.z]
    }
}

impl std::fmt::Display for Voxel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// The 26 neighbor offsets in lexicographic `(dx, dy, dz)` order.
pub const NEIGHBOR_OFFSETS: [(i32, i32, i32); 26] = {
    let mut out = [(0, 0, 0); 26];
    let mut i = 0;
    let mut dx = -1;
    while dx <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dz = -1;
            while dz <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[i] = (dx, dy, dz);
                    i += 1;
                }
                dz += 1;
            }
            dy += 1;
        }
        dx += 1;
    }
    out
};

/// Voxel world with time-invariant hard obstacles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMap {
    dims: [u32; 3],
    blocked: Vec<bool>,
    obstacle_count: usize,
}

impl GridMap {
    pub fn new(dims: [u32; 3]) -> Result<Self, GridError> {
        if dims.contains(&0) {
            return Err(GridError::EmptyDims(dims));
        }
        let volume = dims.iter().map(|&d| d as usize).product();
        Ok(Self {
            dims,
            blocked: vec![false; volume],
            obstacle_count: 0,
        })
    }

    pub fn with_obstacles<I>(dims: [u32; 3], obstacles: I) -> Result<Self, GridError>
    where
        I: IntoIterator<Item = Voxel>,
    {
        let mut grid = Self::new(dims)?;
        for v in obstacles {
            grid.add_obstacle(v)?;
        }
        Ok(grid)
    }

    pub fn add_obstacle(&mut self, v: Voxel) -> Result<(), GridError> {
        let idx = self.checked_index(v)?;
        if !self.blocked[idx] {
            self.blocked[idx] = true;
            self.obstacle_count += 1;
        }
        Ok(())
    }

    pub fn dims(&self) -> [u32; 3] {
        self.dims
    }

    pub fn volume(&self) -> usize {
        self.blocked.len()
    }

    pub fn obstacle_count(&self) -> usize {
        self.obstacle_count
    }

    pub fn in_bounds(&self, v: Voxel) -> bool {
        v.x < self.dims[0] && v.y < self.dims[1] && v.z < self.dims[2]
    }

    /// Linear index `x + dx * (y + dy * z)`; caller guarantees bounds.
    #[inline]
    pub fn index(&self, v: Voxel) -> usize {
        v.x as usize + self.dims[0] as usize * (v.y as usize + self.dims[1] as usize * v.z as usize)
    }

    pub fn checked_index(&self, v: Voxel) -> Result<usize, GridError> {
        if self.in_bounds(v) {
            Ok(self.index(v))
        } else {
            Err(GridError::OutOfBounds(v, self.dims))
        }
    }

    pub fn voxel_at(&self, index: usize) -> Voxel {
        let dx = self.dims[0] as usize;
        let dy = self.dims[1] as usize;
        Voxel::new(
            (index % dx) as u32,
            ((index / dx) % dy) as u32,
            (index / (dx * dy)) as u32,
        )
    }

    pub fn is_hard_blocked(&self, v: Voxel) -> Result<bool, GridError> {
        Ok(self.blocked[self.checked_index(v)?])
    }

    /// Unchecked variant for hot loops over known in-bounds voxels.
    #[inline]
    pub fn blocked_at(&self, v: Voxel) -> bool {
        self.blocked[self.index(v)]
    }

    /// Hard obstacles in ascending linear-index order.
    pub fn obstacles(&self) -> impl Iterator<Item = Voxel> + '_ {
        self.blocked
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| self.voxel_at(i))
    }

    /// Free in-bounds neighbors of `v`, lexicographic by offset.
    pub fn neighbors26(&self, v: Voxel) -> Result<Vec<Voxel>, GridError> {
        self.checked_index(v)?;
        let mut out = Vec::with_capacity(26);
        self.for_each_neighbor(v, |n| out.push(n));
        Ok(out)
    }

    /// Visits free in-bounds neighbors of an in-bounds voxel.
    #[inline]
    pub fn for_each_neighbor(&self, v: Voxel, mut f: impl FnMut(Voxel)) {
        for &(dx, dy, dz) in NEIGHBOR_OFFSETS.iter() {
            if let Some(n) = v.offset(dx, dy, dz) {
                if self.in_bounds(n) && !self.blocked_at(n) {
                    f(n);
                }
            }
        }
    }
}

/// Euclidean distance between the centers of two adjacent (or equal) voxels.
pub fn move_distance(v: Voxel, v2: Voxel) -> Result<f64, GridError> {
    if v.chebyshev(v2) > 1 {
        return Err(GridError::NotAdjacent(v, v2));
    }
    Ok(step_length(v, v2))
}

#[inline]
pub(crate) fn step_length(v: Voxel, v2: Voxel) -> f64 {
    let axes = (v.x != v2.x) as u8 + (v.y != v2.y) as u8 + (v.z != v2.z) as u8;
    match axes {
        0 => 0.0,
        1 => 1.0,
        2 => std::f64::consts::SQRT_2,
        _ => 3f64.sqrt(),
    }
}

pub fn euclidean(a: Voxel, b: Voxel) -> f64 {
    let dx = a.x as f64 - b.x as f64;
    let dy = a.y as f64 - b.y as f64;
    let dz = a.z as f64 - b.z as f64;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Shortest 26-connected path length between two voxels ignoring obstacles.
pub fn octile3(a: Voxel, b: Voxel) -> f64 {
    let mut d = [a.x.abs_diff(b.x), a.y.abs_diff(b.y), a.z.abs_diff(b.z)];
    d.sort_unstable();
    let [lo, mid, hi] = d.map(f64::from);
    3f64.sqrt() * lo + std::f64::consts::SQRT_2 * (mid - lo) + (hi - mid)
}
