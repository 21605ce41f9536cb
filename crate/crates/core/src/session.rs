//! The steering loop: assembles each iteration's samples from the phases,
//! ingests feedback, retrains the user model and reports its prediction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{build_cluster_levels, ClusterLevels, ClusterState, LEVEL_SUBSAMPLE};
use crate::dataset::{normalized_euclidean, Dataset, Interval, Region, TupleId};
use crate::error::{Error, Result};
use crate::grid::{build_levels, default_betas, CellFilter, CellKey, CellStats, ExplorationGrid, GridSnapshot, GridState};
use crate::phases::{
    boundary_exploitation, misclassified_exploitation, posterior_relevance, probabilistic_select, scale_to,
    similarity_exploitation, truncate_shuffled, Origin, Phase, PhaseConfig, PlanEntry, SamplingPlan, SelectionMode,
    SimilarityChain,
};
use crate::tree::{extract_regions, formulate_query, train, Class, DecisionTree, ExtractionQuery, LabeledSample, RegionSet, TreeParams};

/// Membership oracle of the user's true interest.
pub trait Truth {
    fn is_relevant(&self, point: &[f64]) -> bool;
}

impl<F: Fn(&[f64]) -> bool> Truth for F {
    fn is_relevant(&self, point: &[f64]) -> bool {
        self(point)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscoveryMode {
    /// Hierarchical grid cells.
    Grid,
    /// Hierarchical k-means clusters.
    Cluster,
    /// Clusters plus sparse grid cells.
    Hybrid,
    /// Uniform samples of unseen tuples.
    Random,
    /// One sample near the center of every finest-level cell, cycling,
    /// independent of feedback.
    RandomGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub phases: PhaseConfig,
    pub tree: TreeParams,
    pub discovery: DiscoveryMode,
    pub misclassified: bool,
    pub boundary: bool,
    pub probabilistic: bool,
    pub similarity: bool,
    /// Grid divisions per level; defaults by dimensionality.
    pub betas: Option<Vec<usize>>,
    /// Clusters per level; defaults to the grid cell counts.
    pub cluster_ks: Option<Vec<usize>>,
    pub cluster_subsample: usize,
    pub cluster_seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            phases: PhaseConfig::default(),
            tree: TreeParams::default(),
            discovery: DiscoveryMode::Hybrid,
            misclassified: true,
            boundary: true,
            probabilistic: false,
            similarity: false,
            betas: None,
            cluster_ks: None,
            cluster_subsample: LEVEL_SUBSAMPLE,
            cluster_seed: 0,
        }
    }
}

impl SessionConfig {
    /// Field names in errors are paths within this config, such as
    /// `phases.budget`.
    pub fn validate(&self) -> Result<()> {
        self.phases.validate().map_err(|e| match e {
            Error::InvalidConfig { field, message } => Error::InvalidConfig {
                field: format!("phases.{field}"),
                message,
            },
            other => other,
        })?;
        self.tree.validate()?;
        if self.cluster_subsample == 0 {
            return Err(Error::config("cluster_subsample", "must be at least 1"));
        }
        if let Some(ks) = &self.cluster_ks {
            if ks.is_empty() || ks.contains(&0) {
                return Err(Error::config("cluster_ks", "needs at least one positive level"));
            }
        }
        Ok(())
    }

    pub fn betas_for(&self, dims: usize) -> Vec<usize> {
        self.betas.clone().unwrap_or_else(|| default_betas(dims))
    }

    pub fn cluster_ks_for(&self, dims: usize) -> Vec<usize> {
        self.cluster_ks.clone().unwrap_or_else(|| {
            self.betas_for(dims)
                .iter()
                .map(|b| b.saturating_pow(dims as u32))
                .collect()
        })
    }

    fn needs_clusters(&self) -> bool {
        matches!(self.discovery, DiscoveryMode::Cluster | DiscoveryMode::Hybrid)
    }
}

/// Offline structures shared by every session over one dataset.
#[derive(Debug)]
pub struct Resources {
    pub dataset: Arc<Dataset>,
    pub grids: Vec<ExplorationGrid>,
    pub stats: Arc<CellStats>,
    pub clusters: Option<Arc<ClusterLevels>>,
}

impl Resources {
    pub fn prepare(dataset: Arc<Dataset>, config: &SessionConfig) -> Result<Self> {
        config.validate()?;
        let grids = build_levels(dataset.dims(), &config.betas_for(dataset.dims()))?;
        let stats = Arc::new(CellStats::compute(&dataset, &grids));
        let clusters = if config.needs_clusters() {
            let ks = config.cluster_ks_for(dataset.dims());
            Some(Arc::new(build_cluster_levels(
                &dataset,
                &ks,
                config.cluster_seed,
                config.cluster_subsample,
            )?))
        } else {
            None
        };
        Ok(Self {
            dataset,
            grids,
            stats,
            clusters,
        })
    }

    /// Adds cluster levels when a later configuration needs them.
    pub fn ensure_clusters(&mut self, config: &SessionConfig) -> Result<()> {
        if self.clusters.is_none() && config.needs_clusters() {
            let ks = config.cluster_ks_for(self.dataset.dims());
            self.clusters = Some(Arc::new(build_cluster_levels(
                &self.dataset,
                &ks,
                config.cluster_seed,
                config.cluster_subsample,
            )?));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Relevant,
    Irrelevant,
    Similar,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub id: TupleId,
    pub label: Label,
    /// Interesting dimensions of a similar label; empty or absent means all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
}

impl FeedbackItem {
    pub fn new(id: TupleId, label: Label) -> Self {
        Self { id, label, dims: None }
    }

    pub fn similar(id: TupleId, dims: Vec<usize>) -> Self {
        Self {
            id,
            label: Label::Similar,
            dims: Some(dims),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub items: Vec<FeedbackItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: TupleId,
    /// Raw attribute values.
    pub values: Vec<f64>,
    /// Normalized coordinates.
    pub point: Vec<f64>,
    pub phase: Phase,
}

#[derive(Clone, Debug)]
struct Pending {
    id: TupleId,
    row: usize,
    phase: Phase,
    origin: Origin,
}

#[derive(Clone, Debug)]
struct LabelRecord {
    row: usize,
    label: Label,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub relevant: usize,
    pub irrelevant: usize,
    pub similar: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.relevant + self.irrelevant + self.similar
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarEcho {
    pub id: TupleId,
    pub dims: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub labels: LabelCounts,
    pub relevant_regions: usize,
    pub irrelevant_regions: usize,
    pub degenerate: bool,
    pub query: Option<String>,
    pub similar: Vec<SimilarEcho>,
}

/// Current model translated to regions and query text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Relevant boxes in raw attribute units.
    pub relevant: Vec<Vec<Interval>>,
    pub irrelevant: Vec<Vec<Interval>>,
    /// The same boxes in normalized units.
    pub regions: RegionSet,
    pub query: ExtractionQuery,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f_measure(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub confusion: Confusion,
    pub labeled: usize,
    /// Engine time of the last completed iteration, in seconds.
    pub iteration_seconds: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTiming {
    pub sampling_seconds: f64,
    pub training_seconds: f64,
}

impl IterationTiming {
    pub fn total(&self) -> f64 {
        self.sampling_seconds + self.training_seconds
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatus {
    Ready,
    AwaitingFeedback,
    Completed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub iteration: usize,
    pub status: SessionStatus,
    pub labels: LabelCounts,
    pub shown: usize,
    pub regions: Option<RegionSet>,
    pub query: Option<String>,
    pub grid: Option<GridSnapshot>,
}

/// Relevant and irrelevant labeled points.
type Evidence = (Vec<Vec<f64>>, Vec<Vec<f64>>);

const EXPLOIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// One stop of a shuffled sweep.
#[derive(Clone, Copy, Debug)]
enum SweepUnit {
    Cell(u128),
    Cluster(usize),
}

/// Cyclic shuffled walk over the finest grid cells, the finest cluster
/// level, or both interleaved. Stops after a full cycle of empty draws.
#[derive(Clone, Debug)]
struct Sweep {
    order: Vec<SweepUnit>,
    pos: usize,
    misses: usize,
}

impl Sweep {
    fn new(grids: &[ExplorationGrid], clusters: Option<&ClusterLevels>, cells: bool, rng: &mut ChaCha8Rng) -> Self {
        let mut cell_order: Vec<SweepUnit> = if cells {
            (0..grids[grids.len() - 1].cell_count()).map(SweepUnit::Cell).collect()
        } else {
            Vec::new()
        };
        cell_order.shuffle(rng);
        let mut cluster_order: Vec<SweepUnit> = clusters
            .and_then(|c| c.levels().last())
            .map(|level| (0..level.k).map(SweepUnit::Cluster).collect())
            .unwrap_or_default();
        cluster_order.shuffle(rng);
        let mut order = Vec::with_capacity(cell_order.len() + cluster_order.len());
        let (mut a, mut b) = (cluster_order.into_iter(), cell_order.into_iter());
        loop {
            match (a.next(), b.next()) {
                (None, None) => break,
                (x, y) => order.extend(x.into_iter().chain(y)),
            }
        }
        Self { order, pos: 0, misses: 0 }
    }
}

pub struct ExplorationSession {
    resources: Arc<Resources>,
    config: SessionConfig,
    /// Discovery and fallback draws.
    rng: ChaCha8Rng,
    /// Exploitation draws, kept apart so strategies that differ only in
    /// exploitation see the same discovery sequence.
    exploit_rng: ChaCha8Rng,
    iteration: usize,
    seen: Vec<bool>,
    shown: HashMap<TupleId, Phase>,
    shown_count: usize,
    labels: BTreeMap<TupleId, LabelRecord>,
    pending: Option<Vec<Pending>>,
    grid: Option<GridState>,
    clusters: Option<ClusterState>,
    sweep: Option<Sweep>,
    chains: Vec<SimilarityChain>,
    chain_of: HashMap<TupleId, usize>,
    tree: Option<DecisionTree>,
    regions: Option<RegionSet>,
    query: Option<ExtractionQuery>,
    timings: Vec<IterationTiming>,
    current_timing: IterationTiming,
    completed: bool,
}

impl std::fmt::Debug for ExplorationSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExplorationSession")
            .field("iteration", &self.iteration)
            .field("shown", &self.shown_count)
            .field("labels", &self.labels.len())
            .finish_non_exhaustive()
    }
}

impl ExplorationSession {
    /// Prepares grids and cluster levels and opens a session.
    pub fn start(dataset: Arc<Dataset>, config: SessionConfig, seed: u64) -> Result<Self> {
        let resources = Arc::new(Resources::prepare(dataset, &config)?);
        Self::with_resources(resources, config, seed)
    }

    pub fn with_resources(resources: Arc<Resources>, config: SessionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ds = &resources.dataset;
        let expected = config.betas_for(ds.dims());
        if resources.grids.iter().map(|g| g.beta).collect::<Vec<_>>() != expected {
            return Err(Error::config("betas", "differ from the prepared resources"));
        }
        let grid = match config.discovery {
            DiscoveryMode::Grid => Some(GridState::new(resources.stats.clone(), CellFilter::All)),
            DiscoveryMode::Hybrid => Some(GridState::new(
                resources.stats.clone(),
                CellFilter::Sparse {
                    threshold: config.phases.density_threshold,
                },
            )),
            _ => None,
        };
        let clusters = if config.needs_clusters() {
            let levels = resources
                .clusters
                .clone()
                .ok_or_else(|| Error::config("discovery", "needs cluster levels in the prepared resources"))?;
            Some(ClusterState::new(levels))
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sweep = (config.discovery == DiscoveryMode::RandomGrid).then(|| Sweep::new(&resources.grids, None, true, &mut rng));
        let n = ds.len();
        Ok(Self {
            resources,
            config,
            rng,
            exploit_rng: ChaCha8Rng::seed_from_u64(seed ^ EXPLOIT_STREAM),
            iteration: 0,
            seen: vec![false; n],
            shown: HashMap::new(),
            shown_count: 0,
            labels: BTreeMap::new(),
            pending: None,
            grid,
            clusters,
            sweep,
            chains: Vec::new(),
            chain_of: HashMap::new(),
            tree: None,
            regions: None,
            query: None,
            timings: Vec::new(),
            current_timing: IterationTiming::default(),
            completed: false,
        })
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.resources.dataset
    }

    pub fn resources(&self) -> &Arc<Resources> {
        &self.resources
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn status(&self) -> SessionStatus {
        if self.completed {
            SessionStatus::Completed
        } else if self.pending.is_some() {
            SessionStatus::AwaitingFeedback
        } else {
            SessionStatus::Ready
        }
    }

    pub fn shown_count(&self) -> usize {
        self.shown_count
    }

    pub fn was_shown(&self, id: TupleId) -> bool {
        self.shown.contains_key(&id)
    }

    pub fn tree(&self) -> Option<&DecisionTree> {
        self.tree.as_ref()
    }

    pub fn timings(&self) -> &[IterationTiming] {
        &self.timings
    }

    pub fn chains(&self) -> &[SimilarityChain] {
        &self.chains
    }

    pub fn grid_state(&self) -> Option<&GridState> {
        self.grid.as_ref()
    }

    pub fn label_counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for rec in self.labels.values() {
            match rec.label {
                Label::Relevant => c.relevant += 1,
                Label::Irrelevant => c.irrelevant += 1,
                Label::Similar => c.similar += 1,
            }
        }
        c
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.len()
    }

    fn training_set(&self) -> Vec<LabeledSample> {
        let ds = &self.resources.dataset;
        self.labels
            .iter()
            .filter_map(|(id, rec)| {
                let class = match rec.label {
                    Label::Relevant => Class::Relevant,
                    Label::Irrelevant => Class::Irrelevant,
                    Label::Similar => return None,
                };
                Some(LabeledSample::new(*id, ds.point(rec.row), class))
            })
            .collect()
    }

    fn evidence(&self) -> Evidence {
        let ds = &self.resources.dataset;
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for rec in self.labels.values() {
            match rec.label {
                Label::Relevant => plus.push(ds.point(rec.row)),
                Label::Irrelevant => minus.push(ds.point(rec.row)),
                Label::Similar => {}
            }
        }
        (plus, minus)
    }

    /// Labeled-relevant samples the current model classifies irrelevant.
    pub fn false_negatives(&self) -> Vec<LabeledSample> {
        let Some(tree) = &self.tree else {
            return Vec::new();
        };
        self.training_set()
            .into_iter()
            .filter(|s| s.class == Class::Relevant && tree.predict(|j| s.point[j]) == Class::Irrelevant)
            .collect()
    }

    /// Relevant objects found by the exploring phases, which sizes the
    /// false-negative clustering.
    fn discovered_relevant(&self) -> usize {
        self.labels
            .iter()
            .filter(|(id, rec)| {
                rec.label == Label::Relevant
                    && matches!(
                        self.shown.get(id),
                        Some(Phase::Discovery | Phase::Similarity | Phase::Random)
                    )
            })
            .count()
    }

    /// Plans and draws the next batch of at most `budget` unseen tuples.
    pub fn next_samples(&mut self) -> Result<Vec<Sample>> {
        if self.pending.is_some() {
            return Err(Error::BatchPending);
        }
        if self.completed {
            return Err(Error::Exhausted);
        }
        let started = Instant::now();
        let budget = self.config.phases.budget;
        let mut batch: Vec<Pending> = Vec::with_capacity(budget);
        let mut in_batch: HashSet<usize> = HashSet::new();

        if self.config.misclassified {
            if let Some(tree) = &self.tree {
                if !tree.is_degenerate() {
                    let fns = self.false_negatives();
                    let seed = self.exploit_rng.random();
                    let mut plan = misclassified_exploitation(&fns, self.discovered_relevant(), &self.config.phases, seed)?;
                    scale_to(&mut plan, budget);
                    if self.config.probabilistic {
                        for e in &mut plan.entries {
                            e.mode = SelectionMode::Probabilistic;
                        }
                    }
                    self.execute(&plan, &mut batch, &mut in_batch);
                }
            }
        }

        if self.config.boundary {
            if let Some(regions) = &self.regions {
                let substantive = self.tree.as_ref().is_some_and(|t| !t.is_degenerate());
                if substantive && !regions.relevant.is_empty() {
                    let cap = self.config.phases.alpha_max.min(budget - batch.len());
                    let mut plan = boundary_exploitation(regions, &self.config.phases);
                    let seed = self.exploit_rng.random();
                    truncate_shuffled(&mut plan, cap, seed);
                    self.execute(&plan, &mut batch, &mut in_batch);
                }
            }
        }

        if self.config.similarity {
            // A chain whose areas are all empty restarts at once, so allow a
            // few passes within one batch.
            for _ in 0..8 {
                let room = budget - batch.len();
                if room == 0 {
                    break;
                }
                let plan = similarity_exploitation(&mut self.chains, room);
                if plan.is_empty() {
                    break;
                }
                self.execute(&plan, &mut batch, &mut in_batch);
            }
        }

        self.discover(&mut batch, &mut in_batch);

        if batch.is_empty() {
            self.completed = true;
            return Err(Error::Exhausted);
        }
        let ds = self.resources.dataset.clone();
        let samples = batch
            .iter()
            .map(|p| {
                self.seen[p.row] = true;
                self.shown.insert(p.id, p.phase);
                Sample {
                    id: p.id,
                    values: ds.raw_point(p.row),
                    point: ds.point(p.row),
                    phase: p.phase,
                }
            })
            .collect();
        self.shown_count += batch.len();
        self.pending = Some(batch);
        self.current_timing = IterationTiming {
            sampling_seconds: started.elapsed().as_secs_f64(),
            training_seconds: 0.0,
        };
        Ok(samples)
    }

    fn unseen(&self, row: usize, in_batch: &HashSet<usize>) -> bool {
        !self.seen[row] && !in_batch.contains(&row)
    }

    /// Draws tuples for each plan entry. Returns, per entry, how many were
    /// drawn.
    fn execute(&mut self, plan: &SamplingPlan, batch: &mut Vec<Pending>, in_batch: &mut HashSet<usize>) -> Vec<usize> {
        let mut drawn = Vec::with_capacity(plan.len());
        let mut evidence = None;
        for entry in &plan.entries {
            let budget_left = self.config.phases.budget - batch.len();
            let want = entry.count.min(budget_left);
            let rows = if want == 0 {
                Vec::new()
            } else {
                if entry.mode == SelectionMode::Probabilistic && evidence.is_none() {
                    evidence = Some(self.evidence());
                }
                self.select(entry, want, in_batch, evidence.as_ref())
            };
            drawn.push(rows.len());
            for row in rows {
                in_batch.insert(row);
                batch.push(Pending {
                    id: self.resources.dataset.id(row),
                    row,
                    phase: entry.phase,
                    origin: entry.origin.clone(),
                });
            }
            if let Origin::Chain { chain, direction } = &entry.origin {
                if drawn.last() == Some(&0) {
                    self.chains[*chain].record_empty(direction.clone());
                }
            }
        }
        drawn
    }

    fn select(
        &mut self,
        entry: &PlanEntry,
        want: usize,
        in_batch: &HashSet<usize>,
        evidence: Option<&Evidence>,
    ) -> Vec<usize> {
        let ds = self.resources.dataset.clone();
        match entry.mode {
            SelectionMode::UniformRandom => {
                let seen = &self.seen;
                let rng = match entry.phase {
                    Phase::Discovery | Phase::Random => &mut self.rng,
                    Phase::Misclassified | Phase::Boundary | Phase::Similarity => &mut self.exploit_rng,
                };
                ds.sample_rows(&entry.region, want, rng, |r| seen[r] || in_batch.contains(&r))
            }
            SelectionMode::NearestCenter => {
                let center = entry.region.center();
                let mut best: Option<(f64, usize)> = None;
                let mut point = vec![0.0; ds.dims()];
                for row in ds.rows_in(&entry.region) {
                    if !self.unseen(row, in_batch) {
                        continue;
                    }
                    ds.point_into(row, &mut point);
                    let d = normalized_euclidean(&point, &center);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, row));
                    }
                }
                best.map(|(_, r)| r).into_iter().collect()
            }
            SelectionMode::Probabilistic => {
                let (plus, minus) = evidence.expect("evidence prepared for probabilistic entries");
                let alpha = self.config.phases.alpha_weight;
                let candidates: Vec<(TupleId, f64)> = ds
                    .rows_in(&entry.region)
                    .into_iter()
                    .filter(|&r| self.unseen(r, in_batch))
                    .map(|r| {
                        let p = posterior_relevance(&ds.point(r), plus, minus, alpha).unwrap_or(0.5);
                        (ds.id(r), p)
                    })
                    .collect();
                probabilistic_select(&candidates, want)
                    .into_iter()
                    .filter_map(|id| ds.row_of(id))
                    .collect()
            }
        }
    }

    fn discover(&mut self, batch: &mut Vec<Pending>, in_batch: &mut HashSet<usize>) {
        let budget = self.config.phases.budget;
        match self.config.discovery {
            DiscoveryMode::Random => {}
            DiscoveryMode::RandomGrid => self.discover_sweep(batch, in_batch),
            DiscoveryMode::Grid | DiscoveryMode::Cluster | DiscoveryMode::Hybrid => {
                let mut turn_cluster = true;
                while batch.len() < budget {
                    let cluster_next = self.clusters.as_ref().and_then(|c| c.frontier().next().copied());
                    let grid_next = self.grid.as_ref().and_then(|g| g.frontier().next().copied());
                    let use_cluster = match (cluster_next, grid_next) {
                        (None, None) => break,
                        (Some(_), None) => true,
                        (None, Some(_)) => false,
                        (Some(_), Some(_)) => turn_cluster,
                    };
                    turn_cluster = !turn_cluster;
                    if use_cluster {
                        self.discover_cluster(cluster_next.expect("checked"), batch, in_batch);
                    } else {
                        self.discover_cell(grid_next.expect("checked"), batch, in_batch);
                    }
                }
                // Hierarchy exhausted: keep sweeping the finest units of the
                // structures this mode already uses.
                if batch.len() < budget {
                    if self.sweep.is_none() {
                        let clusters = self.clusters.as_ref().map(|_| {
                            self.resources.clusters.as_deref().expect("cluster discovery has levels")
                        });
                        let cells = self.config.discovery != DiscoveryMode::Cluster;
                        self.sweep = Some(Sweep::new(&self.resources.grids, clusters, cells, &mut self.rng));
                    }
                    self.discover_sweep(batch, in_batch);
                }
            }
        }
        // Residual budget once discovery has nothing left to offer.
        if batch.len() < budget {
            let plan = SamplingPlan {
                entries: vec![PlanEntry {
                    region: Region::full(self.resources.dataset.dims()),
                    count: budget - batch.len(),
                    mode: SelectionMode::UniformRandom,
                    phase: Phase::Random,
                    origin: Origin::None,
                }],
            };
            self.draw_unseen_uniform(&plan.entries[0], batch, in_batch);
        }
    }

    /// Uniform unseen tuples over the whole space by rejection, falling back
    /// to a scan when most tuples are already seen.
    fn draw_unseen_uniform(&mut self, entry: &PlanEntry, batch: &mut Vec<Pending>, in_batch: &mut HashSet<usize>) {
        let ds = self.resources.dataset.clone();
        let n = ds.len();
        let want = entry.count;
        let mut rows = Vec::with_capacity(want);
        let mut attempts = 0;
        while rows.len() < want && attempts < 50 * want {
            attempts += 1;
            let r = self.rng.random_range(0..n);
            if self.unseen(r, in_batch) && !rows.contains(&r) {
                rows.push(r);
            }
        }
        if rows.len() < want {
            let seen = &self.seen;
            let extra = ds.sample_rows(&entry.region, want - rows.len(), &mut self.rng, |r| {
                seen[r] || in_batch.contains(&r) || rows.contains(&r)
            });
            rows.extend(extra);
        }
        for row in rows {
            in_batch.insert(row);
            batch.push(Pending {
                id: ds.id(row),
                row,
                phase: entry.phase,
                origin: Origin::None,
            });
        }
    }

    fn discover_cell(&mut self, key: CellKey, batch: &mut Vec<Pending>, in_batch: &mut HashSet<usize>) {
        let grid = self.grid.as_mut().expect("grid discovery");
        let level_gamma = self.config.phases.level_gamma(grid.grid(key.level).delta());
        let region = grid.sampling_region(key, level_gamma, self.config.phases.density_threshold);
        grid.mark_sampled(key);
        let entry = PlanEntry {
            region,
            count: 1,
            mode: SelectionMode::UniformRandom,
            phase: Phase::Discovery,
            origin: Origin::Cell(key),
        };
        let drawn = self.execute(&SamplingPlan { entries: vec![entry] }, batch, in_batch);
        if drawn[0] == 0 {
            self.grid.as_mut().expect("grid discovery").zoom_in(key);
        }
    }

    fn discover_cluster(&mut self, key: crate::cluster::ClusterKey, batch: &mut Vec<Pending>, in_batch: &mut HashSet<usize>) {
        let level_gamma = {
            let grids = &self.resources.grids;
            let delta = grids[key.level.min(grids.len() - 1)].delta();
            self.config.phases.level_gamma(delta)
        };
        let clusters = self.clusters.as_mut().expect("cluster discovery");
        let region = clusters.sampling_region(key, level_gamma);
        clusters.mark_sampled(key);
        let entry = PlanEntry {
            region,
            count: 1,
            mode: SelectionMode::UniformRandom,
            phase: Phase::Discovery,
            origin: Origin::Cluster(key),
        };
        let drawn = self.execute(&SamplingPlan { entries: vec![entry] }, batch, in_batch);
        if drawn[0] == 0 {
            self.clusters.as_mut().expect("cluster discovery").zoom_in(key);
        }
    }

    fn discover_sweep(&mut self, batch: &mut Vec<Pending>, in_batch: &mut HashSet<usize>) {
        let budget = self.config.phases.budget;
        let Some(units) = self.sweep.as_ref().map(|c| c.order.len()) else {
            return;
        };
        let grids = self.resources.grids.clone();
        let grid = grids[grids.len() - 1];
        while batch.len() < budget {
            let sweep = self.sweep.as_mut().expect("sweep cursor");
            if units == 0 || sweep.misses >= units {
                break;
            }
            let unit = sweep.order[sweep.pos];
            sweep.pos = (sweep.pos + 1) % units;
            let region = match unit {
                SweepUnit::Cell(linear) => {
                    let index = grid.unlinear(linear);
                    let half = vec![0.45 * grid.delta(); grid.dims];
                    Region::around(&grid.center(&index), &half).intersect(&grid.bounds(&index))
                }
                SweepUnit::Cluster(cluster) => {
                    let states = self.clusters.as_ref().expect("cluster sweep");
                    let level = states.levels().len() - 1;
                    let delta = grids[level.min(grids.len() - 1)].delta();
                    states.sampling_region(crate::cluster::ClusterKey { level, cluster }, self.config.phases.level_gamma(delta))
                }
            };
            let entry = PlanEntry {
                region,
                count: 1,
                mode: SelectionMode::UniformRandom,
                phase: Phase::Discovery,
                origin: Origin::None,
            };
            let drawn = self.execute(&SamplingPlan { entries: vec![entry] }, batch, in_batch);
            let sweep = self.sweep.as_mut().expect("sweep cursor");
            if drawn[0] == 0 {
                sweep.misses += 1;
            } else {
                sweep.misses = 0;
            }
        }
    }

    /// Applies labels atomically, advances discovery bookkeeping and
    /// retrains the model.
    pub fn submit_feedback(&mut self, feedback: &Feedback) -> Result<IterationSummary> {
        let started = Instant::now();
        let ds = self.resources.dataset.clone();
        let dims = ds.dims();
        let mut ids = HashSet::new();
        for item in &feedback.items {
            if !ids.insert(item.id) {
                return Err(Error::DuplicateFeedback(item.id));
            }
            if !self.shown.contains_key(&item.id) {
                return Err(Error::UnknownTuple(item.id));
            }
            if let Some(ds_dims) = &item.dims {
                if let Some(bad) = ds_dims.iter().find(|&&j| j >= dims) {
                    return Err(Error::InvalidArgument(format!("dimension {bad} out of range")));
                }
            }
        }

        let mut echoes = Vec::new();
        let mut similar_dims: HashMap<TupleId, Vec<usize>> = HashMap::new();
        for item in &feedback.items {
            let row = ds.row_of(item.id).expect("shown ids belong to the dataset");
            if let Some(prev) = self.labels.get(&item.id) {
                if prev.label == Label::Similar && item.label != Label::Similar {
                    if let Some(&c) = self.chain_of.get(&item.id) {
                        self.chains[c].retire();
                    }
                }
            }
            self.labels.insert(item.id, LabelRecord { row, label: item.label });
            if item.label == Label::Similar {
                let mut d = item.dims.clone().unwrap_or_default();
                d.sort_unstable();
                d.dedup();
                if d.is_empty() {
                    d = (0..dims).collect();
                }
                echoes.push(SimilarEcho { id: item.id, dims: d.clone() });
                similar_dims.insert(item.id, d);
            }
        }

        if let Some(pending) = self.pending.take() {
            for p in pending {
                let label = self.labels.get(&p.id).map(|r| r.label);
                let relevant = label == Some(Label::Relevant);
                match &p.origin {
                    Origin::Cell(key) => {
                        let grid = self.grid.as_mut().expect("cell origin implies grid");
                        if relevant {
                            grid.mark_relevant(*key);
                        } else {
                            grid.zoom_in(*key);
                        }
                    }
                    Origin::Cluster(key) => {
                        let clusters = self.clusters.as_mut().expect("cluster origin implies clusters");
                        if relevant {
                            clusters.mark_relevant(*key);
                        } else {
                            clusters.zoom_in(*key);
                        }
                    }
                    Origin::Chain { chain, direction } => {
                        let similar = (label == Some(Label::Similar)).then(|| ds.point(p.row));
                        self.chains[*chain].record(direction.clone(), relevant, similar);
                    }
                    Origin::None => {}
                }
                let spawn = self.config.similarity
                    && label == Some(Label::Similar)
                    && !matches!(p.origin, Origin::Chain { .. })
                    && !self.chain_of.contains_key(&p.id);
                if spawn {
                    let d = similar_dims.get(&p.id).cloned().unwrap_or_else(|| (0..dims).collect());
                    self.chain_of.insert(p.id, self.chains.len());
                    self.chains.push(SimilarityChain::new(
                        p.id,
                        ds.point(p.row),
                        d,
                        self.config.phases.similarity_gamma,
                    ));
                }
            }
        }

        self.retrain()?;
        self.iteration += 1;
        self.current_timing.training_seconds = started.elapsed().as_secs_f64();
        self.timings.push(self.current_timing);
        self.current_timing = IterationTiming::default();

        let regions = self.regions.as_ref();
        Ok(IterationSummary {
            iteration: self.iteration,
            labels: self.label_counts(),
            relevant_regions: regions.map_or(0, |r| r.relevant.len()),
            irrelevant_regions: regions.map_or(0, |r| r.irrelevant.len()),
            degenerate: self.tree.as_ref().is_none_or(|t| t.is_degenerate()),
            query: self.query.as_ref().map(|q| q.text().to_owned()),
            similar: echoes,
        })
    }

    fn retrain(&mut self) -> Result<()> {
        let samples = self.training_set();
        if samples.is_empty() {
            self.tree = None;
            self.regions = None;
            self.query = None;
            return Ok(());
        }
        let tree = train(&samples, &self.config.tree)?;
        let regions = extract_regions(&tree);
        self.query = Some(formulate_query(&regions, self.resources.dataset.schema()));
        self.regions = Some(regions);
        self.tree = Some(tree);
        Ok(())
    }

    pub fn current_prediction(&self) -> Result<Prediction> {
        let (Some(regions), Some(query)) = (&self.regions, &self.query) else {
            return Err(Error::NoModel);
        };
        let schema = self.resources.dataset.schema();
        let raw = |r: &Region| -> Vec<Interval> {
            r.intervals()
                .iter()
                .zip(schema.attributes())
                .map(|(iv, a)| Interval {
                    lo: a.denormalize(iv.lo),
                    hi: a.denormalize(iv.hi),
                    lo_closed: iv.lo_closed,
                    hi_closed: iv.hi_closed,
                })
                .collect()
        };
        Ok(Prediction {
            relevant: regions.relevant.iter().map(raw).collect(),
            irrelevant: regions.irrelevant.iter().map(raw).collect(),
            regions: regions.clone(),
            query: query.clone(),
        })
    }

    /// Model quality over the session's own dataset.
    pub fn evaluate(&self, truth: &dyn Truth) -> Metrics {
        self.evaluate_on(&self.resources.dataset, truth)
    }

    /// Model quality over any dataset sharing the schema, such as the full
    /// space behind a reduced session.
    pub fn evaluate_on(&self, ds: &Dataset, truth: &dyn Truth) -> Metrics {
        let confusion = confusion(ds, self.tree.as_ref(), truth);
        Metrics {
            precision: confusion.precision(),
            recall: confusion.recall(),
            f_measure: confusion.f_measure(),
            confusion,
            labeled: self.labels.len(),
            iteration_seconds: self.timings.last().map_or(0.0, IterationTiming::total),
        }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            iteration: self.iteration,
            status: self.status(),
            labels: self.label_counts(),
            shown: self.shown_count,
            regions: self.regions.clone(),
            query: self.query.as_ref().map(|q| q.text().to_owned()),
            grid: self.grid.as_ref().map(GridState::snapshot),
        }
    }

    /// Ends the session; later batch requests report exhaustion.
    pub fn terminate(&mut self) {
        self.completed = true;
        self.pending = None;
    }
}

/// Predicted-relevant tuples counted against the oracle. A missing model
/// predicts nothing.
pub fn confusion(ds: &Dataset, tree: Option<&DecisionTree>, truth: &dyn Truth) -> Confusion {
    let mut c = Confusion::default();
    let mut point = vec![0.0; ds.dims()];
    for row in 0..ds.len() {
        ds.point_into(row, &mut point);
        let predicted = tree.is_some_and(|t| t.predict(|j| point[j]) == Class::Relevant);
        let actual = truth.is_relevant(&point);
        match (predicted, actual) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Schema;

    fn lattice(step: usize) -> Arc<Dataset> {
        let mut rows = Vec::new();
        for x in (0..=100).step_by(step) {
            for y in (0..=100).step_by(step) {
                rows.push(vec![x as f64, y as f64]);
            }
        }
        Arc::new(Dataset::from_raw_rows(Schema::unit(2), &rows).unwrap())
    }

    fn grid_config() -> SessionConfig {
        SessionConfig {
            discovery: DiscoveryMode::Grid,
            ..SessionConfig::default()
        }
    }

    #[test]
    fn zero_budget_is_rejected() {
        let mut cfg = grid_config();
        cfg.phases.budget = 0;
        assert!(matches!(
            ExplorationSession::start(lattice(5), cfg, 1),
            Err(Error::InvalidConfig { field, .. }) if field == "phases.budget"
        ));
    }

    #[test]
    fn first_batch_is_discovery_and_full() {
        let mut s = ExplorationSession::start(lattice(2), grid_config(), 3).unwrap();
        let batch = s.next_samples().unwrap();
        assert_eq!(batch.len(), 20);
        assert!(batch.iter().all(|b| b.phase == Phase::Discovery || b.phase == Phase::Random));
        assert!(matches!(s.next_samples(), Err(Error::BatchPending)));
    }

    #[test]
    fn no_model_before_feedback() {
        let s = ExplorationSession::start(lattice(5), grid_config(), 3).unwrap();
        assert!(matches!(s.current_prediction(), Err(Error::NoModel)));
    }

    #[test]
    fn all_irrelevant_gives_false_query() {
        let mut s = ExplorationSession::start(lattice(5), grid_config(), 3).unwrap();
        let batch = s.next_samples().unwrap();
        let fb = Feedback {
            items: batch.iter().map(|b| FeedbackItem::new(b.id, Label::Irrelevant)).collect(),
        };
        let summary = s.submit_feedback(&fb).unwrap();
        assert!(summary.degenerate);
        let p = s.current_prediction().unwrap();
        assert!(p.query.selects_nothing());
        assert!(p.relevant.is_empty());
    }

    #[test]
    fn feedback_validation_is_atomic() {
        let mut s = ExplorationSession::start(lattice(5), grid_config(), 3).unwrap();
        let batch = s.next_samples().unwrap();
        let mut items: Vec<_> = batch.iter().map(|b| FeedbackItem::new(b.id, Label::Irrelevant)).collect();
        items.push(FeedbackItem::new(TupleId(999_999), Label::Relevant));
        assert!(matches!(s.submit_feedback(&Feedback { items }), Err(Error::UnknownTuple(_))));
        assert_eq!(s.labeled_count(), 0);
        assert_eq!(s.status(), SessionStatus::AwaitingFeedback);
        let dup = Feedback {
            items: vec![
                FeedbackItem::new(batch[0].id, Label::Relevant),
                FeedbackItem::new(batch[0].id, Label::Irrelevant),
            ],
        };
        assert!(matches!(s.submit_feedback(&dup), Err(Error::DuplicateFeedback(_))));
    }

    #[test]
    fn relabel_replaces_label() {
        let mut s = ExplorationSession::start(lattice(5), grid_config(), 3).unwrap();
        let batch = s.next_samples().unwrap();
        let fb = Feedback {
            items: batch.iter().map(|b| FeedbackItem::new(b.id, Label::Irrelevant)).collect(),
        };
        s.submit_feedback(&fb).unwrap();
        let relabel = Feedback {
            items: vec![FeedbackItem::new(batch[0].id, Label::Relevant)],
        };
        let summary = s.submit_feedback(&relabel).unwrap();
        assert_eq!(summary.labels.relevant, 1);
        assert_eq!(summary.labels.irrelevant, batch.len() - 1);
    }

    #[test]
    fn confusion_hand_case() {
        let c = Confusion { tp: 3, fp: 1, fn_: 1 };
        assert_eq!(c.precision(), 0.75);
        assert_eq!(c.recall(), 0.75);
        assert_eq!(c.f_measure(), 0.75);
        assert_eq!(Confusion::default().f_measure(), 0.0);
    }

    #[test]
    fn exhaustion_is_signalled() {
        let ds = lattice(50);
        let mut s = ExplorationSession::start(ds.clone(), grid_config(), 1).unwrap();
        let mut shown = 0;
        loop {
            match s.next_samples() {
                Ok(batch) => {
                    shown += batch.len();
                    let fb = Feedback {
                        items: batch.iter().map(|b| FeedbackItem::new(b.id, Label::Irrelevant)).collect(),
                    };
                    s.submit_feedback(&fb).unwrap();
                }
                Err(Error::Exhausted) => break,
                Err(e) => panic!("{e}"),
            }
        }
        assert_eq!(shown, ds.len());
        assert_eq!(s.status(), SessionStatus::Completed);
    }
}
