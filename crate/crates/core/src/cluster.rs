//! Seeded k-means (k-means++ initialization, Lloyd refinement) and the
//! cluster-based exploration levels built on it.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{normalized_euclidean, squared_euclidean, Dataset, Region};
use crate::error::{Error, Result};
use crate::grid::CellState;

pub const MAX_ITERATIONS: usize = 100;

/// Default cap on the points used to fit cluster levels.
pub const LEVEL_SUBSAMPLE: usize = 20_000;

const PARALLEL_MIN: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub centroid: Vec<f64>,
    /// Indices into the input points.
    pub members: Vec<usize>,
    /// Largest normalized distance from a member to the centroid.
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub clusters: Vec<Cluster>,
    pub assignment: Vec<usize>,
    /// Within-cluster squared distance after every assignment step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_euclidean(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    if points.len() >= PARALLEL_MIN {
        points.par_iter().map(|p| nearest(p, centroids)).collect()
    } else {
        points.iter().map(|p| nearest(p, centroids)).collect()
    }
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_euclidean(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                if target < *w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|w| *w > 0.0).expect("positive mass"))
        } else {
            // Remaining points duplicate existing centroids.
            let free: Vec<usize> = (0..n).filter(|i| !chosen[*i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = points[pick].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(squared_euclidean(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations until the assignment stops changing or
/// [`MAX_ITERATIONS`] is reached. Empty clusters are re-seeded from the point
/// farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::ClusterCount { k, n });
    }
    let dims = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: p.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let nearest = assign(points, &centroids);
        let mut changed = nearest
            .iter()
            .zip(&assignment)
            .any(|((c, _), a)| c != a);
        let mut dist: Vec<f64> = nearest.iter().map(|(_, d)| *d).collect();
        assignment = nearest.into_iter().map(|(c, _)| c).collect();

        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        // Give every empty cluster the currently worst-served point.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignment[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("k <= n leaves a shared cluster");
                counts[assignment[far]] -= 1;
                counts[c] = 1;
                assignment[far] = c;
                dist[far] = 0.0;
                centroids[c] = points[far].clone();
                changed = true;
            }
        }
        inertia.push(dist.iter().sum());

        let mut sums = vec![vec![0.0; dims]; k];
        for (p, &a) in points.iter().zip(&assignment) {
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, sum) in sums.into_iter().enumerate() {
            centroids[c] = sum.into_iter().map(|s| s / counts[c] as f64).collect();
        }
        if !changed || iterations >= MAX_ITERATIONS {
            break;
        }
    }

    let mut clusters: Vec<Cluster> = centroids
        .into_iter()
        .map(|centroid| Cluster {
            centroid,
            members: Vec::new(),
            radius: 0.0,
        })
        .collect();
    for (i, &a) in assignment.iter().enumerate() {
        let cl = &mut clusters[a];
        cl.radius = cl.radius.max(normalized_euclidean(&points[i], &cl.centroid));
        cl.members.push(i);
    }
    Ok(KMeans {
        clusters,
        assignment,
        inertia,
        iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterLevel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub sizes: Vec<usize>,
    /// Nearest centroid of the previous level; `None` at level 0.
    pub parents: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterLevels {
    levels: Vec<ClusterLevel>,
}

impl ClusterLevels {
    pub fn levels(&self) -> &[ClusterLevel] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &ClusterLevel {
        &self.levels[i]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn children(&self, level: usize, cluster: usize) -> Vec<usize> {
        match self.levels.get(level + 1) {
            None => Vec::new(),
            Some(next) => (0..next.k).filter(|&c| next.parents[c] == Some(cluster)).collect(),
        }
    }
}

/// Independent k-means per level over a seeded subsample of at most
/// `subsample` tuples. Levels whose `k` exceeds the sample size are clamped.
pub fn build_cluster_levels(ds: &Dataset, ks: &[usize], seed: u64, subsample: usize) -> Result<ClusterLevels> {
    for w in ks.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::config("cluster_ks", "must be strictly increasing"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = if ds.len() > subsample {
        let mut r = sample_indices(&mut rng, ds.len(), subsample).into_vec();
        r.sort_unstable();
        r
    } else {
        (0..ds.len()).collect()
    };
    let points: Vec<Vec<f64>> = rows.iter().map(|&r| ds.point(r)).collect();
    let mut levels: Vec<ClusterLevel> = Vec::with_capacity(ks.len());
    for (i, &k) in ks.iter().enumerate() {
        let k = k.min(points.len());
        if levels.last().is_some_and(|l| l.k >= k) {
            break;
        }
        let fit = kmeans(&points, k, seed.wrapping_add(i as u64 + 1))?;
        let parents = fit
            .clusters
            .iter()
            .map(|c| levels.last().map(|prev| nearest(&c.centroid, &prev.centroids).0))
            .collect();
        levels.push(ClusterLevel {
            k,
            radii: fit.clusters.iter().map(|c| c.radius).collect(),
            sizes: fit.clusters.iter().map(|c| c.members.len()).collect(),
            centroids: fit.clusters.into_iter().map(|c| c.centroid).collect(),
            parents,
        });
    }
    Ok(ClusterLevels { levels })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterKey {
    pub level: usize,
    pub cluster: usize,
}

/// Session-local cursor over cluster levels, zooming per cluster the same
/// way grid discovery zooms per cell.
#[derive(Clone, Debug)]
pub struct ClusterState {
    levels: Arc<ClusterLevels>,
    states: HashMap<ClusterKey, CellState>,
    frontier: VecDeque<ClusterKey>,
}

impl ClusterState {
    pub fn new(levels: Arc<ClusterLevels>) -> Self {
        let mut state = Self {
            levels,
            states: HashMap::new(),
            frontier: VecDeque::new(),
        };
        if !state.levels.is_empty() {
            for cluster in 0..state.levels.level(0).k {
                state.enqueue(ClusterKey { level: 0, cluster });
            }
        }
        state
    }

    fn enqueue(&mut self, key: ClusterKey) -> bool {
        if self.states.contains_key(&key) {
            return false;
        }
        self.states.insert(key, CellState::Unexplored);
        self.frontier.push_back(key);
        true
    }

    pub fn levels(&self) -> &ClusterLevels {
        &self.levels
    }

    pub fn frontier(&self) -> impl Iterator<Item = &ClusterKey> {
        self.frontier.iter()
    }

    pub fn is_exhausted(&self) -> bool {
        self.frontier.is_empty()
    }

    pub fn state(&self, key: ClusterKey) -> CellState {
        self.states.get(&key).copied().unwrap_or(CellState::Unexplored)
    }

    /// `centroid ± min(gamma, half the cluster radius)` in normalized units,
    /// never narrower than one lattice unit.
    pub fn sampling_region(&self, key: ClusterKey, gamma: f64) -> Region {
        let level = self.levels.level(key.level);
        let centroid = &level.centroids[key.cluster];
        let d = centroid.len() as f64;
        let radius_units = level.radii[key.cluster] * 100.0 * d.sqrt();
        let g = gamma.min((0.5 * radius_units).max(0.5));
        Region::around(centroid, &vec![g; centroid.len()])
    }

    pub fn mark_sampled(&mut self, key: ClusterKey) {
        if let Some(pos) = self.frontier.iter().position(|k| *k == key) {
            self.frontier.remove(pos);
        }
        self.states.insert(key, CellState::Sampled);
    }

    pub fn mark_relevant(&mut self, key: ClusterKey) {
        self.states.insert(key, CellState::RelevantFound);
    }

    pub fn zoom_in(&mut self, key: ClusterKey) -> Vec<ClusterKey> {
        let children = self.levels.children(key.level, key.cluster);
        if key.level + 1 >= self.levels.len() {
            self.states.insert(key, CellState::Empty);
            return Vec::new();
        }
        self.states.insert(key, CellState::Zoomed);
        children
            .into_iter()
            .map(|cluster| ClusterKey {
                level: key.level + 1,
                cluster,
            })
            .filter(|c| self.enqueue(*c))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Schema;

    #[test]
    fn every_point_its_own_cluster() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 10.0, 3.0]).collect();
        let fit = kmeans(&pts, 6, 1).unwrap();
        assert!(fit.clusters.iter().all(|c| c.members.len() == 1 && c.radius == 0.0));
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![20.0, 30.0]];
        let fit = kmeans(&pts, 1, 9).unwrap();
        let c = &fit.clusters[0].centroid;
        assert!((c[0] - 10.0).abs() < 1e-12 && (c[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        let pts = vec![vec![1.0]];
        assert!(matches!(kmeans(&pts, 2, 0), Err(Error::ClusterCount { k: 2, n: 1 })));
        assert!(kmeans(&pts, 0, 0).is_err());
    }

    #[test]
    fn duplicates_do_not_break_seeding() {
        let pts = vec![vec![5.0, 5.0]; 4];
        let fit = kmeans(&pts, 3, 2).unwrap();
        assert_eq!(fit.clusters.len(), 3);
        assert!(fit.clusters.iter().all(|c| !c.members.is_empty()));
    }

    #[test]
    fn levels_have_requested_sizes_and_parents() {
        let rows: Vec<Vec<f64>> = (0..400).map(|i| vec![(i % 20) as f64 * 5.0, (i / 20) as f64 * 5.0]).collect();
        let ds = Dataset::from_raw_rows(Schema::unit(2), &rows).unwrap();
        let levels = build_cluster_levels(&ds, &[4, 16], 3, LEVEL_SUBSAMPLE).unwrap();
        assert_eq!(levels.level(0).k, 4);
        assert_eq!(levels.level(1).k, 16);
        assert!(levels.level(1).parents.iter().all(|p| p.is_some_and(|p| p < 4)));
        let total: usize = (0..4).map(|c| levels.children(0, c).len()).sum();
        assert_eq!(total, 16);
    }
}
