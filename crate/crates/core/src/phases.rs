//! Sample-selection logic of the exploration phases. Every phase turns a view
//! of the session into a [`SamplingPlan`]; the session executes plans
//! against the dataset.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, ClusterKey};
use crate::dataset::{normalized_euclidean, Interval, Region, TupleId, DOMAIN_MAX};
use crate::error::{Error, Result};
use crate::grid::CellKey;
use crate::tree::{LabeledSample, RegionSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Discovery,
    Misclassified,
    Boundary,
    Similarity,
    /// Uniform sampling of unseen tuples: the random baseline and the
    /// fallback once every discovery level is exhausted.
    Random,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Discovery => "discovery",
            Phase::Misclassified => "misclassified",
            Phase::Boundary => "boundary",
            Phase::Similarity => "similarity",
            Phase::Random => "random",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    UniformRandom,
    /// Uncertainty sampling over every tuple inside the region.
    Probabilistic,
    /// The unseen tuple closest to the region center.
    NearestCenter,
}

/// Bookkeeping handle telling the session what a sampled tuple answers for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Origin {
    Cell(CellKey),
    Cluster(ClusterKey),
    Chain { chain: usize, direction: Vec<i8> },
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanEntry {
    pub region: Region,
    pub count: usize,
    pub mode: SelectionMode,
    pub phase: Phase,
    pub origin: Origin,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SamplingPlan {
    pub entries: Vec<PlanEntry>,
}

impl SamplingPlan {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    /// Discovery half-width in normalized units.
    pub gamma: f64,
    /// Samples per misclassified object.
    pub f: usize,
    /// Expansion of misclassified cluster boxes.
    pub y: f64,
    /// Boundary budget per iteration.
    pub alpha_max: usize,
    /// Boundary band half-width.
    pub x: f64,
    /// Weight of the relevant-evidence term of the posterior.
    pub alpha_weight: f64,
    /// Sparse-cell density threshold; `None` calibrates per grid level.
    pub density_threshold: Option<f64>,
    /// Samples per iteration.
    pub budget: usize,
    /// Starting step of similarity chains.
    pub similarity_gamma: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            gamma: 5.0,
            f: 10,
            y: 2.0,
            alpha_max: 8,
            x: 1.0,
            alpha_weight: 0.5,
            density_threshold: None,
            budget: 20,
            similarity_gamma: 2.0,
        }
    }
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::config("budget", "must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 50.0) {
            return Err(Error::config("gamma", "must lie in (0, 50)"));
        }
        if self.f == 0 {
            return Err(Error::config("f", "must be at least 1"));
        }
        if !(self.y > 0.0 && self.y.is_finite()) {
            return Err(Error::config("y", "must be positive"));
        }
        if !(self.x > 0.0 && self.x.is_finite()) {
            return Err(Error::config("x", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha_weight) {
            return Err(Error::config("alpha_weight", "must lie in [0, 1]"));
        }
        if let Some(t) = self.density_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config("density_threshold", "must lie in [0, 1]"));
            }
        }
        if !(self.similarity_gamma >= 0.5 && self.similarity_gamma.is_finite()) {
            return Err(Error::config("similarity_gamma", "must be at least 0.5"));
        }
        Ok(())
    }

    /// Discovery step at a level of cell width `delta`.
    pub fn level_gamma(&self, delta: f64) -> f64 {
        self.gamma.min(0.4 * delta)
    }
}

/// Bounding box of `points`, widened by `pad` on every side.
fn padded_box(points: &[&[f64]], pad: f64) -> Region {
    let d = points[0].len();
    let bounds: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let lo = points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
            let hi = points.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
            (lo - pad, hi + pad)
        })
        .collect();
    Region::closed(&bounds)
}

/// Sampling areas around false negatives. With `k < |fn|` the false
/// negatives are clustered into `k` groups, each contributing `f * size`
/// samples from its padded bounding box; otherwise every false negative gets
/// `f` samples from a box of half-width `y`.
pub fn misclassified_exploitation(false_negatives: &[LabeledSample], k: usize, config: &PhaseConfig, seed: u64) -> Result<SamplingPlan> {
    let mut plan = SamplingPlan::default();
    if false_negatives.is_empty() {
        return Ok(plan);
    }
    let k = k.max(1);
    if k < false_negatives.len() {
        let points: Vec<Vec<f64>> = false_negatives.iter().map(|s| s.point.clone()).collect();
        let fit = kmeans(&points, k, seed)?;
        for cluster in fit.clusters.iter().filter(|c| !c.members.is_empty()) {
            let members: Vec<&[f64]> = cluster.members.iter().map(|&m| points[m].as_slice()).collect();
            plan.entries.push(PlanEntry {
                region: padded_box(&members, config.y),
                count: config.f * members.len(),
                mode: SelectionMode::UniformRandom,
                phase: Phase::Misclassified,
                origin: Origin::None,
            });
        }
    } else {
        for s in false_negatives {
            plan.entries.push(PlanEntry {
                region: padded_box(&[s.point.as_slice()], config.y),
                count: config.f,
                mode: SelectionMode::UniformRandom,
                phase: Phase::Misclassified,
                origin: Origin::None,
            });
        }
    }
    Ok(plan)
}

/// Two thin bands per dimension and relevant region: the facet's dimension
/// is restricted to `b ± x`, all other dimensions span their full domain.
pub fn boundary_exploitation(regions: &RegionSet, config: &PhaseConfig) -> SamplingPlan {
    let mut plan = SamplingPlan::default();
    let k = regions.relevant.len();
    if k == 0 {
        return plan;
    }
    let d = regions.relevant[0].dims();
    let facets = 2f64.powi(d as i32);
    let per_band = ((config.alpha_max as f64 / (k as f64 * facets)).floor() as usize).max(1);
    for region in &regions.relevant {
        for dim in 0..d {
            let iv = region.interval(dim);
            for b in [iv.lo, iv.hi] {
                plan.entries.push(PlanEntry {
                    region: band(d, dim, b, config.x),
                    count: per_band,
                    mode: SelectionMode::UniformRandom,
                    phase: Phase::Boundary,
                    origin: Origin::None,
                });
            }
        }
    }
    plan
}

/// Band `b - x <= v_dim <= b + x` spanning the full domain elsewhere.
pub fn band(dims: usize, dim: usize, b: f64, x: f64) -> Region {
    let mut intervals = vec![Interval::full(); dims];
    intervals[dim] = Interval::closed((b - x).max(0.0), (b + x).min(DOMAIN_MAX));
    Region::new(intervals).expect("band bounds are ordered")
}

/// Posterior relevance by the sum rule over exponential similarities to the
/// relevant and irrelevant evidence. An empty side drops out and its weight
/// moves to the other side.
pub fn posterior_relevance(x: &[f64], relevant: &[Vec<f64>], irrelevant: &[Vec<f64>], alpha: f64) -> Result<f64> {
    if relevant.is_empty() && irrelevant.is_empty() {
        return Err(Error::NoEvidence);
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let mean = |set: &[Vec<f64>], f: &dyn Fn(f64) -> f64| -> f64 {
        set.iter().map(|s| f(normalized_euclidean(x, s))).sum::<f64>() / set.len() as f64
    };
    let (wr, wn) = match (relevant.is_empty(), irrelevant.is_empty()) {
        (false, false) => (alpha, 1.0 - alpha),
        (false, true) => (1.0, 0.0),
        (true, false) => (0.0, 1.0),
        (true, true) => unreachable!(),
    };
    let mut p = 0.0;
    if wr > 0.0 {
        p += wr * mean(relevant, &|d| (-d).exp());
    }
    if wn > 0.0 {
        p += wn * mean(irrelevant, &|d| 1.0 - (-d).exp());
    }
    Ok(p.clamp(0.0, 1.0))
}

/// The `count` candidates whose posterior is nearest 0.5, ordered by that
/// gap, ties going to the lower tuple id.
pub fn probabilistic_select(candidates: &[(TupleId, f64)], count: usize) -> Vec<TupleId> {
    let mut scored: Vec<(f64, TupleId)> = candidates.iter().map(|(id, p)| ((p - 0.5).abs(), *id)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(count).map(|(_, id)| id).collect()
}

/// Every sign vector in `{+1, -1}^n`, `+1` first.
pub fn sign_vectors(n: usize) -> Vec<Vec<i8>> {
    (0..1usize << n)
        .map(|mask| (0..n).map(|b| if mask >> (n - 1 - b) & 1 == 0 { 1 } else { -1 }).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainStatus {
    Active,
    /// A relevant tuple was reached.
    Found,
    /// The step shrank below the minimum.
    Retired,
}

/// Minimum step before a chain is abandoned.
pub const MIN_CHAIN_GAMMA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Seed {
    point: Vec<f64>,
    /// `None` explores every direction; descendants keep their own.
    direction: Option<Vec<i8>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityArea {
    pub region: Region,
    pub direction: Vec<i8>,
}

/// Directed search around one sample annotated as similar on a set of
/// dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityChain {
    pub origin: TupleId,
    origin_point: Vec<f64>,
    pub dims: Vec<usize>,
    pub gamma: f64,
    pub generation: usize,
    pub status: ChainStatus,
    seeds: Vec<Seed>,
    queue: VecDeque<SimilarityArea>,
    outstanding: usize,
    next_seeds: Vec<Seed>,
    found: bool,
}

impl SimilarityChain {
    pub fn new(origin: TupleId, point: Vec<f64>, dims: Vec<usize>, gamma: f64) -> Self {
        let mut chain = Self {
            origin,
            origin_point: point.clone(),
            dims,
            gamma,
            generation: 0,
            status: ChainStatus::Active,
            seeds: vec![Seed { point, direction: None }],
            queue: VecDeque::new(),
            outstanding: 0,
            next_seeds: Vec::new(),
            found: false,
        };
        chain.fill_queue();
        chain
    }

    pub fn is_active(&self) -> bool {
        self.status == ChainStatus::Active
    }

    pub fn origin_point(&self) -> &[f64] {
        &self.origin_point
    }

    /// Areas of the current generation not yet handed out.
    pub fn pending_areas(&self) -> impl Iterator<Item = &SimilarityArea> {
        self.queue.iter()
    }

    fn area(&self, seed: &[f64], direction: &[i8]) -> Region {
        let half = self.gamma / 2.0;
        let mut center = seed.to_vec();
        for (k, &dim) in self.dims.iter().enumerate() {
            center[dim] += direction[k] as f64 * self.gamma;
        }
        Region::around(&center, &vec![half; center.len()])
    }

    fn fill_queue(&mut self) {
        let all = sign_vectors(self.dims.len());
        let seeds = std::mem::take(&mut self.seeds);
        for seed in &seeds {
            let dirs: Vec<Vec<i8>> = match &seed.direction {
                Some(d) => vec![d.clone()],
                None => all.clone(),
            };
            for direction in dirs {
                let region = self.area(&seed.point, &direction);
                self.queue.push_back(SimilarityArea { region, direction });
            }
        }
        self.generation += 1;
    }

    /// Pops up to `limit` areas for the next batch.
    pub fn take_areas(&mut self, limit: usize) -> Vec<SimilarityArea> {
        if !self.is_active() {
            return Vec::new();
        }
        let n = limit.min(self.queue.len());
        self.outstanding += n;
        self.queue.drain(..n).collect()
    }

    /// Records the label of one handed-out area. `similar` carries the new
    /// sample when it is itself annotated similar.
    pub fn record(&mut self, direction: Vec<i8>, relevant: bool, similar: Option<Vec<f64>>) {
        if !self.is_active() {
            return;
        }
        self.outstanding = self.outstanding.saturating_sub(1);
        if relevant {
            self.found = true;
        } else if let Some(point) = similar {
            self.next_seeds.push(Seed {
                point,
                direction: Some(direction),
            });
        }
        if self.outstanding == 0 && self.queue.is_empty() {
            self.advance();
        }
    }

    /// Counts an area that yielded no tuple as an irrelevant answer.
    pub fn record_empty(&mut self, direction: Vec<i8>) {
        self.record(direction, false, None);
    }

    fn advance(&mut self) {
        if self.found {
            self.status = ChainStatus::Found;
            return;
        }
        if self.next_seeds.is_empty() {
            self.gamma /= 2.0;
            if self.gamma < MIN_CHAIN_GAMMA {
                self.status = ChainStatus::Retired;
                return;
            }
            self.seeds = vec![Seed {
                point: self.origin_point.clone(),
                direction: None,
            }];
        } else {
            self.seeds = std::mem::take(&mut self.next_seeds);
        }
        self.fill_queue();
    }

    pub fn retire(&mut self) {
        self.status = ChainStatus::Retired;
        self.queue.clear();
    }
}

/// One nearest-center sample per pending chain area, chains in creation
/// order, at most `limit` in total.
pub fn similarity_exploitation(chains: &mut [SimilarityChain], limit: usize) -> SamplingPlan {
    let mut plan = SamplingPlan::default();
    for (i, chain) in chains.iter_mut().enumerate() {
        let room = limit - plan.entries.len();
        if room == 0 {
            break;
        }
        for area in chain.take_areas(room) {
            plan.entries.push(PlanEntry {
                region: area.region,
                count: 1,
                mode: SelectionMode::NearestCenter,
                phase: Phase::Similarity,
                origin: Origin::Chain {
                    chain: i,
                    direction: area.direction,
                },
            });
        }
    }
    plan
}

/// Shrinks a plan to at most `cap` samples. Counts scale proportionally
/// (each kept entry retains at least one sample); entries are dropped from
/// the tail if that still overshoots.
pub fn scale_to(plan: &mut SamplingPlan, cap: usize) {
    let total = plan.total();
    if total <= cap {
        return;
    }
    if cap == 0 {
        plan.entries.clear();
        return;
    }
    for e in &mut plan.entries {
        e.count = ((e.count * cap) / total).max(1);
    }
    while plan.total() > cap {
        plan.entries.pop();
    }
}

/// Keeps a seeded random subset of whole entries within `cap` samples.
pub fn truncate_shuffled(plan: &mut SamplingPlan, cap: usize, seed: u64) {
    if plan.total() <= cap {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    plan.entries.shuffle(&mut rng);
    let mut used = 0;
    plan.entries.retain(|e| {
        if used + e.count <= cap {
            used += e.count;
            true
        } else {
            false
        }
    });
}
