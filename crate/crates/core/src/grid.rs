//! Hierarchical exploration grids.
//!
//! Each level splits every normalized dimension into `beta` equal cells.
//! Cell `i` on a dimension covers `[i*delta, (i+1)*delta)`; the last cell is
//! closed at the domain edge so the lattice tiles `[0, 100]^d` exactly.
//! Geometry is implicit; only non-empty cells are materialized in
//! [`CellStats`].

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Interval, Region, DOMAIN_MAX};
use crate::error::{Error, Result};

/// Lattice resolution used for the density numerator and denominator.
const LATTICE: usize = DOMAIN_MAX as usize + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationGrid {
    pub level: usize,
    pub beta: usize,
    pub dims: usize,
}

impl ExplorationGrid {
    pub fn delta(&self) -> f64 {
        DOMAIN_MAX / self.beta as f64
    }

    pub fn cell_count(&self) -> u128 {
        (self.beta as u128).pow(self.dims as u32)
    }

    fn edge(&self, i: usize) -> f64 {
        if i >= self.beta {
            DOMAIN_MAX
        } else {
            i as f64 * DOMAIN_MAX / self.beta as f64
        }
    }

    pub fn interval(&self, i: usize) -> Interval {
        let lo = self.edge(i);
        let hi = self.edge(i + 1);
        if i + 1 == self.beta {
            Interval::closed(lo, hi)
        } else {
            Interval::half_open(lo, hi)
        }
    }

    /// Cell index of `v` on one dimension, consistent with [`Self::interval`].
    pub fn locate_1d(&self, v: f64) -> usize {
        let mut i = ((v * self.beta as f64 / DOMAIN_MAX).floor().max(0.0) as usize).min(self.beta - 1);
        while i > 0 && v < self.edge(i) {
            i -= 1;
        }
        while i + 1 < self.beta && v >= self.edge(i + 1) {
            i += 1;
        }
        i
    }

    pub fn locate(&self, point: &[f64]) -> Vec<usize> {
        point.iter().map(|v| self.locate_1d(*v)).collect()
    }

    pub fn linear(&self, index: &[usize]) -> u128 {
        index
            .iter()
            .fold(0u128, |acc, &i| acc * self.beta as u128 + i as u128)
    }

    pub fn unlinear(&self, mut linear: u128) -> Vec<usize> {
        let mut index = vec![0; self.dims];
        for slot in index.iter_mut().rev() {
            *slot = (linear % self.beta as u128) as usize;
            linear /= self.beta as u128;
        }
        index
    }

    pub fn bounds(&self, index: &[usize]) -> Region {
        Region::new(index.iter().map(|&i| self.interval(i)).collect())
            .expect("grid intervals are ordered")
    }

    pub fn center(&self, index: &[usize]) -> Vec<f64> {
        index.iter().map(|&i| self.interval(i).midpoint()).collect()
    }

    /// Integer lattice positions a tuple in this cell can floor to, which
    /// bounds the number of distinct quantized tuples.
    pub fn possible(&self, index: &[usize]) -> u128 {
        index
            .iter()
            .map(|&i| {
                let iv = self.interval(i);
                let lo = iv.lo.floor() as u128;
                let hi = if iv.hi_closed {
                    LATTICE as u128
                } else {
                    iv.hi.ceil() as u128
                };
                hi - lo
            })
            .product()
    }

    /// Per-dimension cell index ranges at `self` covered by `cell` of a
    /// coarser grid.
    fn covered_ranges(&self, coarse: &ExplorationGrid, index: &[usize]) -> Vec<(usize, usize)> {
        index
            .iter()
            .map(|&i| {
                let iv = coarse.interval(i);
                let first = self.locate_1d(iv.lo);
                let mut last = self.locate_1d(iv.hi);
                while last > first && !iv.hi_closed && self.edge(last) >= iv.hi {
                    last -= 1;
                }
                (first, last)
            })
            .collect()
    }
}

/// Default level schedule; the number of cells per level stays within a few
/// iterations' budget at coarse levels.
pub fn default_betas(dims: usize) -> Vec<usize> {
    if dims <= 3 {
        vec![4, 8, 16]
    } else {
        vec![3, 6]
    }
}

pub fn build_levels(dims: usize, betas: &[usize]) -> Result<Vec<ExplorationGrid>> {
    if dims == 0 {
        return Err(Error::InvalidArgument("grids need at least one dimension".into()));
    }
    if betas.is_empty() {
        return Err(Error::config("betas", "needs at least one level"));
    }
    for w in betas.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::config("betas", "must be strictly increasing"));
        }
    }
    if betas[0] < 2 {
        return Err(Error::config("betas", "every beta must be at least 2"));
    }
    if betas.iter().any(|&b| b > LATTICE - 1) {
        return Err(Error::config("betas", "beta above 100 leaves cells narrower than one lattice unit"));
    }
    if betas
        .iter()
        .any(|&b| (b as f64).powi(dims as i32) >= u128::MAX as f64)
    {
        return Err(Error::config("betas", "cell count overflows"));
    }
    Ok(betas
        .iter()
        .enumerate()
        .map(|(level, &beta)| ExplorationGrid { level, beta, dims })
        .collect())
}

fn lattice_code(ds: &Dataset, row: usize) -> Vec<u8> {
    (0..ds.dims())
        .map(|j| ds.value(row, j).floor().clamp(0.0, DOMAIN_MAX) as u8)
        .collect()
}

/// Density `u / p` of one cell computed by a direct scan.
pub fn cell_density(grid: &ExplorationGrid, index: &[usize], ds: &Dataset) -> f64 {
    let bounds = grid.bounds(index);
    let mut codes: Vec<Vec<u8>> = ds.rows_in(&bounds).into_iter().map(|r| lattice_code(ds, r)).collect();
    codes.sort_unstable();
    codes.dedup();
    (codes.len() as f64 / grid.possible(index) as f64).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellInfo {
    pub tuples: usize,
    /// Distinct lattice-quantized tuples (`u`).
    pub distinct: usize,
    /// Possible lattice combinations (`p`).
    pub possible: u128,
    pub density: f64,
}

/// Offline per-level statistics of non-empty cells.
#[derive(Clone, Debug)]
pub struct CellStats {
    grids: Vec<ExplorationGrid>,
    levels: Vec<HashMap<u128, CellInfo>>,
    sparse_thresholds: Vec<f64>,
}

impl CellStats {
    pub fn compute(ds: &Dataset, grids: &[ExplorationGrid]) -> Self {
        let codes: Vec<Vec<u8>> = (0..ds.len()).map(|r| lattice_code(ds, r)).collect();
        let mut levels = Vec::with_capacity(grids.len());
        let mut sparse_thresholds = Vec::with_capacity(grids.len());
        let mut point = vec![0.0; ds.dims()];
        for grid in grids {
            let mut keyed: Vec<(u128, usize)> = (0..ds.len())
                .map(|r| {
                    ds.point_into(r, &mut point);
                    (grid.linear(&grid.locate(&point)), r)
                })
                .collect();
            keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0).then_with(|| codes[a.1].cmp(&codes[b.1])));
            let mut cells: HashMap<u128, CellInfo> = HashMap::new();
            let mut i = 0;
            while i < keyed.len() {
                let cell = keyed[i].0;
                let mut j = i;
                let mut distinct = 0;
                while j < keyed.len() && keyed[j].0 == cell {
                    if j == i || codes[keyed[j].1] != codes[keyed[j - 1].1] {
                        distinct += 1;
                    }
                    j += 1;
                }
                let possible = grid.possible(&grid.unlinear(cell));
                cells.insert(
                    cell,
                    CellInfo {
                        tuples: j - i,
                        distinct,
                        possible,
                        density: (distinct as f64 / possible as f64).min(1.0),
                    },
                );
                i = j;
            }
            sparse_thresholds.push(average_rate_density(ds.len(), ds.dims()));
            levels.push(cells);
        }
        Self {
            grids: grids.to_vec(),
            levels,
            sparse_thresholds,
        }
    }

    pub fn grids(&self) -> &[ExplorationGrid] {
        &self.grids
    }

    pub fn info(&self, level: usize, linear: u128) -> Option<&CellInfo> {
        self.levels.get(level)?.get(&linear)
    }

    pub fn density(&self, level: usize, linear: u128) -> f64 {
        self.info(level, linear).map_or(0.0, |c| c.density)
    }

    pub fn non_empty(&self, level: usize) -> Vec<u128> {
        let mut cells: Vec<u128> = self.levels[level].keys().copied().collect();
        cells.sort_unstable();
        cells
    }

    pub fn sparse_threshold(&self, level: usize) -> f64 {
        self.sparse_thresholds[level]
    }
}

/// Density a cell shows when tuples fall on its lattice points at the
/// dataset-wide average rate: `1 - exp(-n / 101^d)`.
pub fn average_rate_density(tuples: usize, dims: usize) -> f64 {
    let lattice = (DOMAIN_MAX + 1.0).powi(dims as i32);
    1.0 - (-(tuples as f64) / lattice).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellState {
    Unexplored,
    Sampled,
    RelevantFound,
    Zoomed,
    Empty,
}

impl CellState {
    pub fn is_terminal(self) -> bool {
        matches!(self, CellState::RelevantFound | CellState::Zoomed | CellState::Empty)
    }

    fn may_become(self, next: CellState) -> bool {
        use CellState::*;
        matches!(
            (self, next),
            (Unexplored, Sampled) | (Unexplored, Empty) | (Sampled, RelevantFound) | (Sampled, Zoomed) | (Sampled, Empty)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub level: usize,
    pub linear: u128,
}

/// Which cells take part in discovery.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CellFilter {
    All,
    /// Only non-empty cells with density at most the threshold; `None` uses
    /// the calibrated per-level threshold.
    Sparse { threshold: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub level: usize,
    pub index: Vec<usize>,
    pub bounds: Region,
    pub center: Vec<f64>,
    pub u: usize,
    pub p: u128,
    pub s: f64,
    pub state: CellState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscoveryArea {
    pub cell: CellKey,
    pub region: Region,
}

/// Session-local discovery bookkeeping over shared grid geometry.
#[derive(Clone, Debug)]
pub struct GridState {
    stats: Arc<CellStats>,
    filter: CellFilter,
    states: Vec<HashMap<u128, CellState>>,
    frontier: VecDeque<CellKey>,
}

impl GridState {
    /// Seeds the frontier with every eligible cell that has no eligible
    /// ancestor, coarsest level first. Under `All` that is the top level.
    pub fn new(stats: Arc<CellStats>, filter: CellFilter) -> Self {
        let levels = stats.grids().len();
        let mut state = Self {
            stats,
            filter,
            states: vec![HashMap::new(); levels],
            frontier: VecDeque::new(),
        };
        for level in 0..levels {
            for linear in state.stats.non_empty(level) {
                let key = CellKey { level, linear };
                if !state.has_eligible_ancestor(key) {
                    state.enqueue(key);
                }
            }
        }
        state
    }

    fn has_eligible_ancestor(&self, key: CellKey) -> bool {
        let grids = self.stats.grids();
        let center = grids[key.level].center(&grids[key.level].unlinear(key.linear));
        (0..key.level).any(|level| {
            let linear = grids[level].linear(&grids[level].locate(&center));
            self.eligible(CellKey { level, linear })
        })
    }

    fn eligible(&self, key: CellKey) -> bool {
        let Some(info) = self.stats.info(key.level, key.linear) else {
            return false;
        };
        match self.filter {
            CellFilter::All => true,
            CellFilter::Sparse { threshold } => {
                info.density <= threshold.unwrap_or_else(|| self.stats.sparse_threshold(key.level))
            }
        }
    }

    fn enqueue(&mut self, key: CellKey) -> bool {
        if self.states[key.level].contains_key(&key.linear) || !self.eligible(key) {
            return false;
        }
        self.states[key.level].insert(key.linear, CellState::Unexplored);
        self.frontier.push_back(key);
        true
    }

    pub fn stats(&self) -> &Arc<CellStats> {
        &self.stats
    }

    pub fn grid(&self, level: usize) -> &ExplorationGrid {
        &self.stats.grids()[level]
    }

    pub fn levels(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, key: CellKey) -> CellState {
        self.states[key.level]
            .get(&key.linear)
            .copied()
            .unwrap_or(CellState::Unexplored)
    }

    pub fn frontier(&self) -> impl Iterator<Item = &CellKey> {
        self.frontier.iter()
    }

    pub fn frontier_len(&self) -> usize {
        self.frontier.len()
    }

    pub fn is_exhausted(&self) -> bool {
        self.frontier.is_empty()
    }

    fn transition(&mut self, key: CellKey, next: CellState) {
        let slot = self.states[key.level]
            .entry(key.linear)
            .or_insert(CellState::Unexplored);
        debug_assert!(slot.may_become(next), "illegal cell transition {slot:?} -> {next:?}");
        if slot.may_become(next) {
            *slot = next;
        }
    }

    /// Sampling box `center ± gamma` for a cell, clipped to the cell.
    /// Sparse cells use `min(0.45 delta, 2 gamma)`.
    pub fn sampling_region(&self, key: CellKey, gamma: f64, sparse_threshold: Option<f64>) -> Region {
        let grid = self.grid(key.level);
        let index = grid.unlinear(key.linear);
        let bounds = grid.bounds(&index);
        let center = grid.center(&index);
        let t = sparse_threshold.unwrap_or_else(|| self.stats.sparse_threshold(key.level));
        let sparse = self.stats.density(key.level, key.linear) <= t;
        let g = if sparse {
            (0.45 * grid.delta()).min(2.0 * gamma)
        } else {
            gamma
        };
        let half = vec![g; center.len()];
        Region::around(&center, &half).intersect(&bounds)
    }

    /// One sampling region per frontier cell, in frontier order. `gamma`
    /// maps a level to its base step.
    pub fn discovery_areas(&self, gamma: impl Fn(&ExplorationGrid) -> f64, sparse_threshold: Option<f64>) -> Vec<DiscoveryArea> {
        self.frontier
            .iter()
            .map(|&cell| DiscoveryArea {
                cell,
                region: self.sampling_region(cell, gamma(self.grid(cell.level)), sparse_threshold),
            })
            .collect()
    }

    /// Removes the cell from the frontier and marks it sampled.
    pub fn mark_sampled(&mut self, key: CellKey) {
        if let Some(pos) = self.frontier.iter().position(|k| *k == key) {
            self.frontier.remove(pos);
        }
        self.transition(key, CellState::Sampled);
    }

    pub fn mark_relevant(&mut self, key: CellKey) {
        self.transition(key, CellState::RelevantFound);
    }

    /// Replaces a sampled cell that produced nothing relevant by its next-level
    /// sub-cells. Without a lower level the cell is retired as empty.
    pub fn zoom_in(&mut self, key: CellKey) -> Vec<CellKey> {
        if key.level + 1 >= self.levels() {
            self.transition(key, CellState::Empty);
            return Vec::new();
        }
        self.transition(key, CellState::Zoomed);
        let children = self.children(key);
        children.into_iter().filter(|c| self.enqueue(*c)).collect()
    }

    /// Next-level cells covered by `key`, in lattice order.
    pub fn children(&self, key: CellKey) -> Vec<CellKey> {
        let coarse = self.grid(key.level);
        let fine = self.grid(key.level + 1);
        let ranges = fine.covered_ranges(coarse, &coarse.unlinear(key.linear));
        let mut out = Vec::new();
        let mut index: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            out.push(CellKey {
                level: key.level + 1,
                linear: fine.linear(&index),
            });
            let mut d = index.len();
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                if index[d] < ranges[d].1 {
                    index[d] += 1;
                    break;
                }
                index[d] = ranges[d].0;
            }
        }
    }

    pub fn cell(&self, key: CellKey) -> GridCell {
        let grid = self.grid(key.level);
        let index = grid.unlinear(key.linear);
        let info = self.stats.info(key.level, key.linear).copied();
        GridCell {
            level: key.level,
            bounds: grid.bounds(&index),
            center: grid.center(&index),
            u: info.map_or(0, |i| i.distinct),
            p: grid.possible(&index),
            s: info.map_or(0.0, |i| i.density),
            state: self.state(key),
            index,
        }
    }

    /// Every cell the session has touched, ordered by level then lattice.
    pub fn snapshot(&self) -> GridSnapshot {
        let mut keys: Vec<CellKey> = self
            .states
            .iter()
            .enumerate()
            .flat_map(|(level, m)| m.keys().map(move |&linear| CellKey { level, linear }))
            .collect();
        keys.sort_unstable();
        GridSnapshot {
            levels: self.stats.grids().to_vec(),
            cells: keys.into_iter().map(|k| self.cell(k)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSnapshot {
    pub levels: Vec<ExplorationGrid>,
    pub cells: Vec<GridCell>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Schema;

    fn uniform_lattice() -> Dataset {
        let mut rows = Vec::new();
        for x in 0..=100 {
            for y in 0..=100 {
                rows.push(vec![x as f64, y as f64]);
            }
        }
        Dataset::from_raw_rows(Schema::unit(2), &rows).unwrap()
    }

    #[test]
    fn level_geometry() {
        let grids = build_levels(2, &[4]).unwrap();
        assert_eq!(grids[0].cell_count(), 16);
        assert_eq!(grids[0].delta(), 25.0);
        let b = grids[0].bounds(&[1, 0]);
        assert_eq!((b.interval(0).lo, b.interval(0).hi), (25.0, 50.0));
        assert!(!b.interval(0).hi_closed);
        assert_eq!(grids[0].center(&[1, 0]), vec![37.5, 12.5]);
        let g3 = build_levels(3, &[5]).unwrap();
        assert_eq!(g3[0].cell_count(), 125);
        assert_eq!(g3[0].delta(), 20.0);
    }

    #[test]
    fn invalid_schedules() {
        assert!(build_levels(2, &[4, 4]).is_err());
        assert!(build_levels(2, &[1]).is_err());
        assert!(build_levels(2, &[]).is_err());
        assert_eq!(default_betas(2), vec![4, 8, 16]);
        assert_eq!(default_betas(5), vec![3, 6]);
    }

    #[test]
    fn locate_matches_interval() {
        let g = build_levels(1, &[3, 6, 8, 16]).unwrap();
        for grid in &g {
            for k in 0..=1000 {
                let v = k as f64 / 10.0;
                let i = grid.locate_1d(v);
                assert!(grid.interval(i).contains(v), "beta {} v {v}", grid.beta);
            }
        }
    }

    #[test]
    fn density_examples() {
        let ds = uniform_lattice();
        let g = build_levels(2, &[4]).unwrap()[0];
        assert_eq!(g.possible(&[1, 1]), 625);
        assert_eq!(cell_density(&g, &[1, 1], &ds), 1.0);
        // 125 distinct vectors in the interior cell.
        let rows: Vec<Vec<f64>> = (0..125).map(|k| vec![25.0 + (k % 25) as f64, 25.0 + (k / 25) as f64]).collect();
        let small = Dataset::from_raw_rows(Schema::unit(2), &rows).unwrap();
        assert!((cell_density(&g, &[1, 1], &small) - 0.2).abs() < 1e-12);
        assert_eq!(cell_density(&g, &[3, 3], &small), 0.0);
    }

    #[test]
    fn stats_agree_with_direct_density() {
        let ds = uniform_lattice();
        let grids = build_levels(2, &[4, 8]).unwrap();
        let stats = CellStats::compute(&ds, &grids);
        for grid in &grids {
            for linear in 0..grid.cell_count() {
                let index = grid.unlinear(linear);
                let direct = cell_density(grid, &index, &ds);
                assert!((stats.density(grid.level, linear) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zoom_produces_tiling_children() {
        let ds = uniform_lattice();
        let grids = build_levels(2, &[4, 8]).unwrap();
        let stats = Arc::new(CellStats::compute(&ds, &grids));
        let mut state = GridState::new(stats, CellFilter::All);
        assert_eq!(state.frontier_len(), 16);
        let key = *state.frontier().next().unwrap();
        state.mark_sampled(key);
        let children = state.zoom_in(key);
        assert_eq!(children.len(), 4);
        assert_eq!(state.state(key), CellState::Zoomed);
        let parent_volume = state.cell(key).bounds.volume();
        let child_volume: f64 = children.iter().map(|c| state.cell(*c).bounds.volume()).sum();
        assert!((parent_volume - child_volume).abs() < 1e-9);
        // Bottom level retires.
        let child = children[0];
        state.mark_sampled(child);
        assert!(state.zoom_in(child).is_empty());
        assert_eq!(state.state(child), CellState::Empty);
    }

    #[test]
    fn discovery_box_arithmetic() {
        let ds = uniform_lattice();
        let grids = build_levels(2, &[4]).unwrap();
        let stats = Arc::new(CellStats::compute(&ds, &grids));
        let state = GridState::new(stats, CellFilter::All);
        let key = CellKey { level: 0, linear: grids[0].linear(&[1, 0]) };
        let r = state.sampling_region(key, 5.0, Some(-1.0));
        assert_eq!((r.interval(0).lo, r.interval(0).hi), (32.5, 42.5));
        assert_eq!((r.interval(1).lo, r.interval(1).hi), (7.5, 17.5));
    }

    #[test]
    fn exhausted_grid_gives_empty_plan() {
        let ds = Dataset::from_raw_rows(Schema::unit(2), &[vec![10.0, 10.0]]).unwrap();
        let grids = build_levels(2, &[4]).unwrap();
        let stats = Arc::new(CellStats::compute(&ds, &grids));
        let mut state = GridState::new(stats, CellFilter::All);
        let key = *state.frontier().next().unwrap();
        state.mark_sampled(key);
        state.zoom_in(key);
        assert!(state.discovery_areas(|_| 5.0, None).is_empty());
        assert!(state.is_exhausted());
    }
}
