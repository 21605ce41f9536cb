//! Benchmark harness: runs exploration strategies against a simulated user
//! on synthetic spaces and summarizes the labeling effort they need.

pub mod report;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use explore_core::dataset::{sample_reduce, Dataset};
use explore_core::session::{Feedback, FeedbackItem, Label, Resources};
use explore_core::simuser::{
    generate_target_in, synth_dataset, Placement, SimLabel, SimUserConfig, SimulatedUser, SizeClass, SynthKind, TargetQuery,
};
use explore_core::{DiscoveryMode, ExplorationSession, PhaseConfig, SessionConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{report, StrategySummary, Summary, TimingSummary};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse spec: {0}")]
    Parse(String),
    #[error("run {strategy} seed {seed} failed: {source}")]
    Run {
        strategy: Strategy,
        seed: u64,
        #[source]
        source: explore_core::Error,
    },
    #[error(transparent)]
    Core(#[from] explore_core::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Exploration strategies compared by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Skew-aware discovery plus misclassified and boundary exploitation.
    Full,
    /// `full` with uncertainty sampling inside misclassified areas.
    Probabilistic,
    /// `full` driven by a user who also reports near misses as similar.
    Similarity,
    /// Grid discovery plus both exploitation phases.
    GridOnly,
    /// Cluster discovery plus both exploitation phases.
    ClusterOnly,
    /// Grid discovery alone; no exploitation phases.
    DiscoveryOnly,
    Random,
    RandomGrid,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Full,
        Strategy::Probabilistic,
        Strategy::Similarity,
        Strategy::GridOnly,
        Strategy::ClusterOnly,
        Strategy::DiscoveryOnly,
        Strategy::Random,
        Strategy::RandomGrid,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Strategy::Full => "full",
            Strategy::Probabilistic => "probabilistic",
            Strategy::Similarity => "similarity",
            Strategy::GridOnly => "grid-only",
            Strategy::ClusterOnly => "cluster-only",
            Strategy::DiscoveryOnly => "discovery-only",
            Strategy::Random => "random",
            Strategy::RandomGrid => "random-grid",
        }
    }

    pub fn session_config(self, phases: &PhaseConfig) -> SessionConfig {
        let base = SessionConfig {
            phases: phases.clone(),
            ..SessionConfig::default()
        };
        let baseline = SessionConfig {
            misclassified: false,
            boundary: false,
            ..base.clone()
        };
        match self {
            Strategy::Full => base,
            Strategy::Probabilistic => SessionConfig {
                probabilistic: true,
                ..base
            },
            Strategy::Similarity => SessionConfig {
                similarity: true,
                ..base
            },
            Strategy::GridOnly => SessionConfig {
                discovery: DiscoveryMode::Grid,
                ..base
            },
            Strategy::ClusterOnly => SessionConfig {
                discovery: DiscoveryMode::Cluster,
                ..base
            },
            Strategy::DiscoveryOnly => SessionConfig {
                discovery: DiscoveryMode::Grid,
                ..baseline
            },
            Strategy::Random => SessionConfig {
                discovery: DiscoveryMode::Random,
                ..baseline
            },
            Strategy::RandomGrid => SessionConfig {
                discovery: DiscoveryMode::RandomGrid,
                ..baseline
            },
        }
    }

    fn uses_similarity(self) -> bool {
        self == Strategy::Similarity
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: SynthKind,
    pub size: usize,
    pub dims: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub count: usize,
    pub size: SizeClass,
    #[serde(default = "anywhere")]
    pub placement: Placement,
}

fn anywhere() -> Placement {
    Placement::Anywhere
}

/// When a run stops; every rule also ends on exploration exhaustion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StopRule {
    /// Stop once F reaches `f`, giving up after `max_labeled` samples.
    FTarget { f: f64, max_labeled: usize },
    /// Stop after `max_labeled` samples.
    MaxLabeled { max_labeled: usize },
}

impl StopRule {
    pub fn max_labeled(&self) -> usize {
        match *self {
            StopRule::FTarget { max_labeled, .. } | StopRule::MaxLabeled { max_labeled } => max_labeled,
        }
    }

    pub fn f_target(&self) -> Option<f64> {
        match *self {
            StopRule::FTarget { f, .. } => Some(f),
            StopRule::MaxLabeled { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DatasetSpec,
    pub target: TargetSpec,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub stop: StopRule,
    /// Explore a uniform sample of this fraction; quality is still measured
    /// on the full space.
    #[serde(default)]
    pub reduction: Option<f64>,
    #[serde(default)]
    pub phases: PhaseConfig,
    #[serde(default)]
    pub simulated_user: SimUserConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(BenchError::Spec("seeds must not be empty".into()));
        }
        if self.strategies.is_empty() {
            return Err(BenchError::Spec("strategies must not be empty".into()));
        }
        if self.dataset.size == 0 || self.dataset.dims == 0 {
            return Err(BenchError::Spec("dataset needs size >= 1 and dims >= 1".into()));
        }
        if self.stop.max_labeled() == 0 {
            return Err(BenchError::Spec("max_labeled must be at least 1".into()));
        }
        if let Some(f) = self.stop.f_target() {
            if !(f > 0.0 && f <= 1.0) {
                return Err(BenchError::Spec("F target must lie in (0, 1]".into()));
            }
        }
        if let Some(r) = self.reduction {
            if !(r > 0.0 && r <= 1.0) {
                return Err(BenchError::Spec("reduction must lie in (0, 1]".into()));
            }
        }
        self.phases.validate()?;
        Ok(())
    }

    /// Reads a `.json` or `.toml` spec.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| BenchError::Parse(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| BenchError::Parse(e.to_string()))?
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    ReachedTarget,
    BudgetExhausted,
    ExplorationExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub labeled: usize,
    pub f_measure: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One strategy on one seed. Wall-clock time lives in `timing` and is kept
/// out of the serialized record so result documents replay byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub target: TargetQuery,
    pub iterations: Vec<IterationRecord>,
    pub status: RunStatus,
    /// Labeled samples when the F target was first met.
    pub samples_to_target: Option<usize>,
    pub final_f: f64,
    #[serde(skip)]
    pub timing: Vec<f64>,
    /// Wall-clock seconds for the whole run, simulated user included.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn labeled(&self) -> usize {
        self.iterations.last().map_or(0, |i| i.labeled)
    }

    /// Effort to reach the target, with unfinished runs counted at their
    /// final labeled count.
    pub fn effort(&self) -> usize {
        self.samples_to_target.unwrap_or_else(|| self.labeled())
    }

    pub fn mean_iteration_seconds(&self) -> f64 {
        if self.timing.is_empty() {
            0.0
        } else {
            self.timing.iter().sum::<f64>() / self.timing.len() as f64
        }
    }

    /// F after the first iteration whose labeled count reaches `labeled`.
    pub fn f_at(&self, labeled: usize) -> Option<f64> {
        self.iterations.iter().find(|i| i.labeled >= labeled).map(|i| i.f_measure)
    }
}

/// Per-seed space: dataset, the reduced copy explored, and the target.
pub struct SeedWorld {
    pub full: Arc<Dataset>,
    pub explored: Arc<Dataset>,
    pub target: TargetQuery,
    resources: BTreeMap<Vec<usize>, Arc<Resources>>,
}

impl SeedWorld {
    pub fn build(spec: &ExperimentSpec, seed: u64) -> Result<Self> {
        let d = &spec.dataset;
        let data = synth_dataset(d.kind, d.size, d.dims, seed)?;
        let full = Arc::new(data.dataset);
        let target = generate_target_in(&full, spec.target.count, spec.target.size, spec.target.placement, seed ^ 0x7a4f)?;
        let explored = match spec.reduction {
            Some(r) if r < 1.0 => Arc::new(sample_reduce(&full, r, seed ^ 0x51ce)?),
            _ => full.clone(),
        };
        // One resource bundle per grid layout serves every strategy of the seed.
        let mut resources: BTreeMap<Vec<usize>, Resources> = BTreeMap::new();
        for strategy in &spec.strategies {
            let config = strategy.session_config(&spec.phases);
            let key = config.betas_for(explored.dims());
            if !resources.contains_key(&key) {
                resources.insert(key.clone(), Resources::prepare(explored.clone(), &config)?);
            }
            if let Some(r) = resources.get_mut(&key) {
                r.ensure_clusters(&config)?;
            }
        }
        let resources = resources.into_iter().map(|(k, v)| (k, Arc::new(v))).collect();
        Ok(Self {
            full,
            explored,
            target,
            resources,
        })
    }

    pub fn resources_for(&self, config: &SessionConfig) -> Option<Arc<Resources>> {
        self.resources.get(&config.betas_for(self.explored.dims())).cloned()
    }
}

pub fn feedback_for(user: &mut SimulatedUser<'_>, samples: &[explore_core::Sample]) -> Feedback {
    let items = samples
        .iter()
        .map(|s| match user.label(&s.point) {
            SimLabel::Relevant => FeedbackItem::new(s.id, Label::Relevant),
            SimLabel::Irrelevant => FeedbackItem::new(s.id, Label::Irrelevant),
            SimLabel::Similar(dims) => FeedbackItem::similar(s.id, dims),
        })
        .collect();
    Feedback { items }
}

/// Drives one session against the simulated user until the stop rule fires.
pub fn run_one(spec: &ExperimentSpec, world: &SeedWorld, strategy: Strategy, seed: u64) -> Result<RunRecord> {
    let config = strategy.session_config(&spec.phases);
    let resources = world
        .resources_for(&config)
        .ok_or_else(|| BenchError::Spec("no prepared resources for strategy".into()))?;
    let started = std::time::Instant::now();
    let wrap = |source| BenchError::Run { strategy, seed, source };
    let mut session = ExplorationSession::with_resources(resources, config, seed).map_err(wrap)?;
    let user_cfg = SimUserConfig {
        similarity_enabled: strategy.uses_similarity() && spec.simulated_user.similarity_enabled,
        ..spec.simulated_user
    };
    let mut user = SimulatedUser::new(&world.target, user_cfg);
    let mut iterations = Vec::new();
    let mut samples_to_target = None;
    let max = spec.stop.max_labeled();
    let status = loop {
        let batch = match session.next_samples() {
            Ok(b) => b,
            Err(explore_core::Error::Exhausted) => break RunStatus::ExplorationExhausted,
            Err(e) => return Err(wrap(e)),
        };
        let fb = feedback_for(&mut user, &batch);
        session.submit_feedback(&fb).map_err(wrap)?;
        let m = session.evaluate_on(&world.full, &world.target);
        let labeled = session.shown_count();
        iterations.push(IterationRecord {
            iteration: session.iteration(),
            labeled,
            f_measure: m.f_measure,
            precision: m.precision,
            recall: m.recall,
        });
        if let Some(f) = spec.stop.f_target() {
            if m.f_measure >= f {
                samples_to_target = Some(labeled);
                break RunStatus::ReachedTarget;
            }
        }
        if labeled >= max {
            break RunStatus::BudgetExhausted;
        }
    };
    let final_f = iterations.last().map_or(0.0, |i| i.f_measure);
    Ok(RunRecord {
        experiment: spec.name.clone(),
        strategy,
        seed,
        target: world.target.clone(),
        iterations,
        status,
        samples_to_target,
        final_f,
        timing: session.timings().iter().map(|t| t.total()).collect(),
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Every (seed, strategy) pair, `jobs` at a time. Records come back ordered
/// by seed position, then strategy position in the experiment file.
pub fn run(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| BenchError::Spec(e.to_string()))?;
    pool.install(|| {
        spec.seeds
            .par_iter()
            .map(|&seed| {
                let world = SeedWorld::build(spec, seed)?;
                spec.strategies
                    .par_iter()
                    .map(|&strategy| run_one(spec, &world, strategy, seed))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<Vec<RunRecord>>>>()
            .map(|v| v.into_iter().flatten().collect())
    })
}

/// Writes `records.jsonl`, `summary.json`, `timing.jsonl` and
/// `timing_summary.json` into `dir`.
pub fn write_results(dir: &Path, records: &[RunRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut lines = String::new();
    let mut timing = String::new();
    for r in records {
        lines.push_str(&serde_json::to_string(r).map_err(|e| BenchError::Parse(e.to_string()))?);
        lines.push('\n');
        let t = serde_json::json!({
            "experiment": r.experiment,
            "strategy": r.strategy,
            "seed": r.seed,
            "iteration_seconds": r.timing,
        });
        timing.push_str(&t.to_string());
        timing.push('\n');
    }
    std::fs::write(dir.join("records.jsonl"), lines)?;
    std::fs::write(dir.join("timing.jsonl"), timing)?;
    let summary = report(records);
    std::fs::write(dir.join("summary.json"), pretty(&summary.results)?)?;
    std::fs::write(dir.join("timing_summary.json"), pretty(&summary.timing)?)?;
    Ok(())
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| BenchError::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
