//! Safe flight interval tables.
//!
//! For every voxel the table holds the maximal half-open time windows during
//! which the voxel is neither a hard obstacle nor covered by an active no-fly
//! zone. The bulk of the table depends only on the world, so it is built once
//! as an [`SfiLayer`] and shared; an [`SfiTable`] is a cheap per-agent view
//! that adds the agent's exempt hub and delivery voxels.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridMap, Voxel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SfiError {
    #[error("no-fly zone {index}: {source}")]
    Region { index: usize, source: GridError },
    #[error("no-fly zone {index}: empty region")]
    EmptyRegion { index: usize },
    #[error("no-fly zone {index}: activation window [{t_start}, {t_end}) is empty or negative")]
    BadWindow { index: usize, t_start: f64, t_end: f64 },
    #[error("interval [{start}, {end}) is not in the table of voxel {voxel}")]
    UnknownInterval { voxel: Voxel, start: f64, end: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Spatial extent of a no-fly zone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NfzRegion {
    /// Inclusive axis-aligned box.
    Box { min: Voxel, max: Voxel },
    Voxels(Vec<Voxel>),
}

impl NfzRegion {
    pub fn voxels(&self) -> Vec<Voxel> {
        match self {
            NfzRegion::Voxels(v) => v.clone(),
            NfzRegion::Box { min, max } => {
                let mut out = Vec::new();
                for z in min.z..=max.z {
                    for y in min.y..=max.y {
                        for x in min.x..=max.x {
                            out.push(Voxel::new(x, y, z));
                        }
                    }
                }
                out
            }
        }
    }

    pub fn contains(&self, v: Voxel) -> bool {
        match self {
            NfzRegion::Voxels(list) => list.contains(&v),
            NfzRegion::Box { min, max } => {
                (min.x..=max.x).contains(&v.x)
                    && (min.y..=max.y).contains(&v.y)
                    && (min.z..=max.z).contains(&v.z)
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NfzRegion::Voxels(v) => v.len(),
            NfzRegion::Box { min, max } => {
                if min.x > max.x || min.y > max.y || min.z > max.z {
                    0
                } else {
                    ((max.x - min.x + 1) * (max.y - min.y + 1) * (max.z - min.z + 1)) as usize
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lowest z level touched by the region.
    pub fn min_z(&self) -> Option<u32> {
        match self {
            NfzRegion::Voxels(v) => v.iter().map(|v| v.z).min(),
            NfzRegion::Box { min, .. } => (!self.is_empty()).then_some(min.z),
        }
    }
}

/// A region that is forbidden during `[t_start, t_end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoFlyZone {
    pub region: NfzRegion,
    pub t_start: f64,
    /// `null` in JSON for a zone that never deactivates.
    #[serde(with = "end_time")]
    pub t_end: f64,
}

mod end_time {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if t.is_infinite() && *t > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*t)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl NoFlyZone {
    pub fn is_active(&self, t: f64) -> bool {
        self.t_start <= t && t < self.t_end
    }

    pub fn validate(&self, index: usize, grid: &GridMap) -> Result<(), SfiError> {
        if !(self.t_start >= 0.0 && self.t_start < self.t_end) {
            return Err(SfiError::BadWindow {
                index,
                t_start: self.t_start,
                t_end: self.t_end,
            });
        }
        if self.region.is_empty() {
            return Err(SfiError::EmptyRegion { index });
        }
        let check = |v: Voxel| {
            grid.checked_index(v)
                .map(|_| ())
                .map_err(|source| SfiError::Region { index, source })
        };
        match &self.region {
            NfzRegion::Box { min, max } => {
                check(*min)?;
                check(*max)
            }
            NfzRegion::Voxels(list) => list.iter().try_for_each(|&v| check(v)),
        }
    }
}

/// Half-open time window `[start, end)`; `end` may be `f64::INFINITY`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SafeInterval {
    pub start: f64,
    pub end: f64,
}

impl SafeInterval {
    pub const ALWAYS: SafeInterval = SafeInterval {
        start: 0.0,
        end: f64::INFINITY,
    };

    pub fn new(start: f64, end: f64) -> Self {
        debug_assert!(start < end);
        Self { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }
}

const OPEN_LIST: u32 = 0;
const BLOCKED_LIST: u32 = 1;
static ALWAYS_SLICE: [SafeInterval; 1] = [SafeInterval::ALWAYS];

/// World-level interval table shared by all agents of a scenario.
#[derive(Debug)]
pub struct SfiLayer {
    dims: [u32; 3],
    blocked: Vec<bool>,
    list_of: Vec<u32>,
    lists: Vec<Vec<SafeInterval>>,
}

impl SfiLayer {
    pub fn build(grid: &GridMap, nfzs: &[NoFlyZone]) -> Result<Self, SfiError> {
        let mut active: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for (i, nfz) in nfzs.iter().enumerate() {
            nfz.validate(i, grid)?;
            for v in nfz.region.voxels() {
                active
                    .entry(grid.index(v))
                    .or_default()
                    .push((nfz.t_start, nfz.t_end));
            }
        }

        let mut list_of = vec![OPEN_LIST; grid.volume()];
        let mut blocked = vec![false; grid.volume()];
        let mut lists = vec![vec![SafeInterval::ALWAYS], Vec::new()];
        for (idx, slot) in list_of.iter_mut().enumerate() {
            if grid.blocked_at(grid.voxel_at(idx)) {
                *slot = BLOCKED_LIST;
                blocked[idx] = true;
            }
        }
        for (idx, mut windows) in active {
            if blocked[idx] {
                continue;
            }
            list_of[idx] = lists.len() as u32;
            lists.push(complement(&mut windows));
        }
        Ok(Self {
            dims: grid.dims(),
            blocked,
            list_of,
            lists,
        })
    }

    fn index(&self, v: Voxel) -> usize {
        v.x as usize + self.dims[0] as usize * (v.y as usize + self.dims[1] as usize * v.z as usize)
    }

    /// Intervals ignoring any exemption.
    pub fn intervals(&self, v: Voxel) -> &[SafeInterval] {
        &self.lists[self.list_of[self.index(v)] as usize]
    }
}

/// Complement of the union of `[start, end)` windows over `[0, ∞)`.
fn complement(windows: &mut [(f64, f64)]) -> Vec<SafeInterval> {
    windows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out = Vec::new();
    let mut cursor = 0.0;
    for &(s, e) in windows.iter() {
        if s > cursor {
            out.push(SafeInterval::new(cursor, s));
        }
        if e > cursor {
            cursor = e;
        }
    }
    if cursor.is_finite() {
        out.push(SafeInterval::new(cursor, f64::INFINITY));
    }
    out
}

/// Per-agent view of the interval table.
#[derive(Clone, Debug)]
pub struct SfiTable {
    layer: Arc<SfiLayer>,
    exempt: Vec<usize>,
}

impl SfiTable {
    pub fn new(layer: Arc<SfiLayer>, exempt: &[Voxel]) -> Self {
        let mut exempt: Vec<usize> = exempt.iter().map(|&v| layer.index(v)).collect();
        exempt.sort_unstable();
        exempt.dedup();
        Self { layer, exempt }
    }

    pub fn layer(&self) -> &Arc<SfiLayer> {
        &self.layer
    }

    pub fn dims(&self) -> [u32; 3] {
        self.layer.dims
    }

    pub fn is_exempt(&self, v: Voxel) -> bool {
        self.exempt.contains(&self.layer.index(v))
    }

    /// Sorted safe intervals at `v`.
    #[inline]
    pub fn intervals(&self, v: Voxel) -> &[SafeInterval] {
        let idx = self.layer.index(v);
        if self.layer.blocked[idx] {
            return &[];
        }
        if self.exempt.contains(&idx) {
            return &ALWAYS_SLICE;
        }
        &self.layer.lists[self.layer.list_of[idx] as usize]
    }

    /// Earliest interval whose end lies after `t`, with its index.
    pub fn first_safe_interval(&self, v: Voxel, t: f64) -> Option<(usize, SafeInterval)> {
        self.intervals(v)
            .iter()
            .copied()
            .enumerate()
            .find(|(_, iv)| iv.end > t)
    }

    /// Interval following `current` at `v`.
    pub fn next_wait_interval(
        &self,
        v: Voxel,
        current: SafeInterval,
    ) -> Result<Option<SafeInterval>, SfiError> {
        let list = self.intervals(v);
        let pos = list
            .iter()
            .position(|iv| *iv == current)
            .ok_or(SfiError::UnknownInterval {
                voxel: v,
                start: current.start,
                end: current.end,
            })?;
        Ok(list.get(pos + 1).copied())
    }
}

/// Builds the interval table for one agent with its exempt voxels.
pub fn build_sfi_table(
    grid: &GridMap,
    nfzs: &[NoFlyZone],
    exempt: &[Voxel],
) -> Result<SfiTable, SfiError> {
    for &v in exempt {
        grid.checked_index(v)?;
    }
    let layer = Arc::new(SfiLayer::build(grid, nfzs)?);
    Ok(SfiTable::new(layer, exempt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nfz(voxels: &[Voxel], t_start: f64, t_end: f64) -> NoFlyZone {
        NoFlyZone {
            region: NfzRegion::Voxels(voxels.to_vec()),
            t_start,
            t_end,
        }
    }

    fn iv(s: f64, e: f64) -> SafeInterval {
        SafeInterval::new(s, e)
    }

    const V: Voxel = Voxel::new(1, 1, 1);

    fn grid() -> GridMap {
        GridMap::new([4, 4, 4]).unwrap()
    }

    #[test]
    fn unrestricted_voxel_is_always_safe() {
        let t = build_sfi_table(&grid(), &[], &[]).unwrap();
        assert_eq!(t.intervals(V), &[SafeInterval::ALWAYS]);
    }

    #[test]
    fn single_nfz_splits_the_timeline() {
        let t = build_sfi_table(&grid(), &[nfz(&[V], 100.0, 500.0)], &[]).unwrap();
        assert_eq!(t.intervals(V), &[iv(0.0, 100.0), iv(500.0, f64::INFINITY)]);
    }

    #[test]
    fn overlapping_nfzs_merge() {
        let zones = [nfz(&[V], 100.0, 200.0), nfz(&[V], 150.0, 300.0)];
        let t = build_sfi_table(&grid(), &zones, &[]).unwrap();
        assert_eq!(t.intervals(V), &[iv(0.0, 100.0), iv(300.0, f64::INFINITY)]);
        // 1 s sampling oracle
        for k in 0..400 {
            let time = k as f64;
            let safe = t.intervals(V).iter().any(|i| i.contains(time));
            let covered = zones.iter().any(|z| z.is_active(time));
            assert_eq!(safe, !covered, "t = {time}");
        }
    }

    #[test]
    fn nfz_starting_at_zero_has_no_leading_interval() {
        let t = build_sfi_table(&grid(), &[nfz(&[V], 0.0, 50.0)], &[]).unwrap();
        assert_eq!(t.intervals(V), &[iv(50.0, f64::INFINITY)]);
    }

    #[test]
    fn touching_windows_leave_no_zero_length_gap() {
        let zones = [nfz(&[V], 10.0, 20.0), nfz(&[V], 20.0, 30.0)];
        let t = build_sfi_table(&grid(), &zones, &[]).unwrap();
        assert_eq!(t.intervals(V), &[iv(0.0, 10.0), iv(30.0, f64::INFINITY)]);
    }

    #[test]
    fn obstacles_have_no_intervals_even_if_exempt() {
        let g = GridMap::with_obstacles([4, 4, 4], [V]).unwrap();
        let t = build_sfi_table(&g, &[], &[V]).unwrap();
        assert!(t.intervals(V).is_empty());
        assert_eq!(t.first_safe_interval(V, 0.0), None);
    }

    #[test]
    fn exempt_voxel_ignores_nfz() {
        let t = build_sfi_table(&grid(), &[nfz(&[V], 0.0, 1e9)], &[V]).unwrap();
        assert_eq!(t.intervals(V), &[SafeInterval::ALWAYS]);
    }

    #[test]
    fn first_safe_interval_queries() {
        let t = build_sfi_table(&grid(), &[nfz(&[V], 100.0, 500.0)], &[]).unwrap();
        assert_eq!(t.first_safe_interval(V, 50.0), Some((0, iv(0.0, 100.0))));
        assert_eq!(
            t.first_safe_interval(V, 200.0),
            Some((1, iv(500.0, f64::INFINITY)))
        );
    }

    #[test]
    fn next_wait_interval_queries() {
        let t = build_sfi_table(&grid(), &[nfz(&[V], 100.0, 500.0)], &[]).unwrap();
        assert_eq!(
            t.next_wait_interval(V, iv(0.0, 100.0)).unwrap(),
            Some(iv(500.0, f64::INFINITY))
        );
        assert_eq!(t.next_wait_interval(V, iv(500.0, f64::INFINITY)).unwrap(), None);
        let open = build_sfi_table(&grid(), &[], &[]).unwrap();
        assert_eq!(open.next_wait_interval(V, SafeInterval::ALWAYS).unwrap(), None);
        assert!(open.next_wait_interval(V, iv(3.0, 4.0)).is_err());
    }

    #[test]
    fn out_of_bounds_region_is_rejected() {
        let bad = nfz(&[Voxel::new(9, 0, 0)], 0.0, 1.0);
        assert!(matches!(
            build_sfi_table(&grid(), &[bad], &[]),
            Err(SfiError::Region { index: 0, .. })
        ));
    }

    #[test]
    fn box_region_expands() {
        let r = NfzRegion::Box {
            min: Voxel::new(0, 0, 0),
            max: Voxel::new(1, 2, 0),
        };
        assert_eq!(r.len(), 6);
        assert_eq!(r.voxels().len(), 6);
        assert!(r.contains(Voxel::new(1, 2, 0)));
        assert!(!r.contains(Voxel::new(2, 2, 0)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn zones() -> impl Strategy<Value = Vec<(u8, f64, f64)>> {
            prop::collection::vec((0u8..8, 0.0f64..400.0, 0.5f64..150.0), 0..6)
                .prop_map(|v| v.into_iter().map(|(c, s, d)| (c, s, s + d)).collect())
        }

        proptest! {
            #[test]
            fn sampling_oracle_agrees(spec in zones(), exempt_mask in 0u8..4) {
                let g = GridMap::with_obstacles([2, 2, 2], [Voxel::new(1, 1, 1)]).unwrap();
                let nfzs: Vec<NoFlyZone> = spec
                    .iter()
                    .map(|&(cell, s, e)| {
                        let v = g.voxel_at(cell as usize);
                        nfz(&[v, Voxel::new(0, 0, 0)], s, e)
                    })
                    .collect();
                let exempt: Vec<Voxel> = [Voxel::new(0, 0, 0), Voxel::new(1, 0, 0)]
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| exempt_mask & (1 << i) != 0)
                    .map(|(_, v)| v)
                    .collect();
                let t = build_sfi_table(&g, &nfzs, &exempt).unwrap();
                for idx in 0..g.volume() {
                    let v = g.voxel_at(idx);
                    let list = t.intervals(v);
                    for w in list.windows(2) {
                        prop_assert!(w[0].end < w[1].start);
                    }
                    let mut gaps = 0.0;
                    let mut k = 0;
                    while (k as f64) * 0.5 <= 700.0 {
                        let time = k as f64 * 0.5;
                        let safe = list.iter().any(|i| i.contains(time));
                        let expect = !g.blocked_at(v)
                            && (exempt.contains(&v)
                                || !nfzs.iter().any(|z| z.region.contains(v) && z.is_active(time)));
                        prop_assert_eq!(safe, expect, "voxel {} t {}", v, time);
                        k += 1;
                    }
                    if !g.blocked_at(v) && !exempt.contains(&v) {
                        for w in list.windows(2) {
                            gaps += w[1].start - w[0].end;
                        }
                        if let Some(first) = list.first() {
                            gaps += first.start;
                        }
                        let mut windows: Vec<(f64, f64)> = nfzs
                            .iter()
                            .filter(|z| z.region.contains(v))
                            .map(|z| (z.t_start, z.t_end))
                            .collect();
                        windows.sort_by(|a, b| a.0.total_cmp(&b.0));
                        let mut covered = 0.0;
                        let mut cur: Option<(f64, f64)> = None;
                        for (s, e) in windows {
                            match cur {
                                Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
                                Some((cs, ce)) => { covered += ce - cs; cur = Some((s, e)); }
                                None => cur = Some((s, e)),
                            }
                        }
                        if let Some((cs, ce)) = cur { covered += ce - cs; }
                        prop_assert!((gaps - covered).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
