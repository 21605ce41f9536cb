//! Ground-truth oracle for benchmarks: hidden target queries, the simulated
//! user that labels samples against them, and synthetic exploration spaces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Region, Schema, TupleId, DOMAIN_MAX};
use crate::error::{Error, Result};
use crate::session::Truth;
use crate::tree::Class;

const PLACEMENT_ATTEMPTS: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    /// Per-dimension width band in normalized units.
    pub fn width_range(self) -> (f64, f64) {
        match self {
            SizeClass::Small => (1.0, 3.0),
            SizeClass::Medium => (4.0, 6.0),
            SizeClass::Large => (7.0, 9.0),
        }
    }
}

/// Where target areas may be placed relative to the data density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Placement {
    Anywhere,
    /// Tuple density inside each area exceeds the dataset average.
    Dense,
    /// Tuple density below the average, with at least `min_tuples` tuples.
    Sparse { min_tuples: usize },
    /// Alternates dense and sparse areas, dense first.
    Mixed { min_tuples: usize },
}

/// Union of closed target areas in normalized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetQuery {
    pub regions: Vec<Region>,
    pub size_class: SizeClass,
}

impl TargetQuery {
    pub fn area_count(&self) -> usize {
        self.regions.len()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.regions.iter().any(|r| r.contains(point))
    }

    /// Area bounds in raw attribute units.
    pub fn raw_regions(&self, schema: &Schema) -> Vec<Vec<(f64, f64)>> {
        self.regions
            .iter()
            .map(|r| {
                r.intervals()
                    .iter()
                    .zip(schema.attributes())
                    .map(|(iv, a)| (a.denormalize(iv.lo), a.denormalize(iv.hi)))
                    .collect()
            })
            .collect()
    }

    pub fn relevant_ids(&self, ds: &Dataset) -> Vec<TupleId> {
        (0..ds.len())
            .filter(|&r| self.regions.iter().any(|reg| ds.row_in(r, reg)))
            .map(|r| ds.id(r))
            .collect()
    }
}

impl Truth for TargetQuery {
    fn is_relevant(&self, point: &[f64]) -> bool {
        self.contains(point)
    }
}

fn random_area(rng: &mut ChaCha8Rng, d: usize, size: SizeClass) -> Region {
    let (wmin, wmax) = size.width_range();
    let bounds: Vec<(f64, f64)> = (0..d)
        .map(|_| {
            let w = rng.random_range(wmin..=wmax);
            let lo = rng.random_range(0.0..=DOMAIN_MAX - w);
            (lo, lo + w)
        })
        .collect();
    Region::closed(&bounds)
}

/// `count` pairwise-disjoint closed areas placed uniformly at random.
pub fn generate_target(d: usize, count: usize, size: SizeClass, seed: u64) -> Result<TargetQuery> {
    place(d, count, size, seed, |_, _| true)
}

/// Like [`generate_target`], accepting only areas that satisfy `placement`
/// over `ds`.
pub fn generate_target_in(ds: &Dataset, count: usize, size: SizeClass, placement: Placement, seed: u64) -> Result<TargetQuery> {
    let avg = ds.len() as f64 / DOMAIN_MAX.powi(ds.dims() as i32);
    let dense = |r: &Region| ds.count_in(r) as f64 / r.volume() > avg;
    let sparse = |r: &Region, min: usize| {
        let n = ds.count_in(r);
        n >= min && (n as f64 / r.volume()) < avg
    };
    place(ds.dims(), count, size, seed, |i, r| match placement {
        Placement::Anywhere => true,
        Placement::Dense => dense(r),
        Placement::Sparse { min_tuples } => sparse(r, min_tuples),
        Placement::Mixed { min_tuples } => {
            if i % 2 == 0 {
                dense(r)
            } else {
                sparse(r, min_tuples)
            }
        }
    })
}

fn place(d: usize, count: usize, size: SizeClass, seed: u64, accept: impl Fn(usize, &Region) -> bool) -> Result<TargetQuery> {
    if d == 0 || count == 0 {
        return Err(Error::InvalidArgument("targets need d >= 1 and count >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut regions: Vec<Region> = Vec::with_capacity(count);
    let mut attempts = 0;
    while regions.len() < count {
        if attempts >= PLACEMENT_ATTEMPTS {
            return Err(Error::Placement { count, attempts });
        }
        attempts += 1;
        let candidate = random_area(&mut rng, d, size);
        if regions.iter().any(|r| r.intersects(&candidate)) {
            continue;
        }
        if accept(regions.len(), &candidate) {
            regions.push(candidate);
        }
    }
    Ok(TargetQuery {
        regions,
        size_class: size,
    })
}

pub fn label(target: &TargetQuery, point: &[f64]) -> Class {
    if target.contains(point) {
        Class::Relevant
    } else {
        Class::Irrelevant
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimUserConfig {
    /// Fraction of the normalized domain under which a near miss counts as
    /// similar.
    pub similarity_threshold: f64,
    pub similarity_enabled: bool,
}

impl Default for SimUserConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.10,
            similarity_enabled: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "label", content = "dims", rename_all = "kebab-case")]
pub enum SimLabel {
    Relevant,
    Similar(Vec<usize>),
    Irrelevant,
}

/// Relevant inside a target; similar when the point lies within range of
/// some area on every dimension except a few, each missed by less than the
/// threshold; irrelevant otherwise. Reports the missed dimensions of the
/// closest qualifying area.
pub fn label_with_similarity(target: &TargetQuery, point: &[f64], cfg: &SimUserConfig) -> SimLabel {
    if target.contains(point) {
        return SimLabel::Relevant;
    }
    if !cfg.similarity_enabled {
        return SimLabel::Irrelevant;
    }
    nearest_near_miss(target, point, cfg, |_| true)
}

fn nearest_near_miss(target: &TargetQuery, point: &[f64], cfg: &SimUserConfig, open: impl Fn(usize) -> bool) -> SimLabel {
    let limit = cfg.similarity_threshold * DOMAIN_MAX;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for (i, region) in target.regions.iter().enumerate() {
        if !open(i) {
            continue;
        }
        let gaps: Vec<f64> = region
            .intervals()
            .iter()
            .zip(point)
            .map(|(iv, &v)| (iv.lo - v).max(v - iv.hi).max(0.0))
            .collect();
        if gaps.iter().any(|g| *g >= limit) {
            continue;
        }
        let dims: Vec<usize> = (0..gaps.len()).filter(|&j| gaps[j] > 0.0).collect();
        let worst = gaps.iter().copied().fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(w, _)| worst < *w) {
            best = Some((worst, dims));
        }
    }
    match best {
        Some((_, dims)) => SimLabel::Similar(dims),
        None => SimLabel::Irrelevant,
    }
}

/// Stateful simulated user: near misses are reported only for areas that
/// have not yet produced a relevant tuple, so refinement around a found
/// area gets binary labels.
#[derive(Clone, Debug)]
pub struct SimulatedUser<'a> {
    target: &'a TargetQuery,
    cfg: SimUserConfig,
    found: Vec<bool>,
}

impl<'a> SimulatedUser<'a> {
    pub fn new(target: &'a TargetQuery, cfg: SimUserConfig) -> Self {
        Self {
            target,
            cfg,
            found: vec![false; target.regions.len()],
        }
    }

    pub fn label(&mut self, point: &[f64]) -> SimLabel {
        let mut hit = false;
        for (i, r) in self.target.regions.iter().enumerate() {
            if r.contains(point) {
                self.found[i] = true;
                hit = true;
            }
        }
        if hit {
            return SimLabel::Relevant;
        }
        if !self.cfg.similarity_enabled {
            return SimLabel::Irrelevant;
        }
        nearest_near_miss(self.target, point, &self.cfg, |i| !self.found[i])
    }

    pub fn found(&self) -> &[bool] {
        &self.found
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Uniform,
    Skewed,
    /// Dimension 0 uniform, the remaining dimensions skewed.
    Hybrid,
}

/// Blob mixture parameters of the skewed generator.
pub const BLOB_COUNT: usize = 5;
pub const BLOB_SIGMA: f64 = 2.5;
pub const BLOB_MASS: f64 = 0.92;
const BLOB_BOX_SIGMAS: f64 = 4.0;

#[derive(Clone, Debug)]
pub struct SynthData {
    pub dataset: Dataset,
    /// Boxes holding the blob mass, `center ± 4 sigma` on skewed dimensions
    /// and the full domain on uniform ones.
    pub blob_boxes: Vec<Region>,
}

pub fn synth_dataset(kind: SynthKind, n: usize, d: usize, seed: u64) -> Result<SynthData> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("synthetic data needs n >= 1 and d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skewed_dim = |j: usize| match kind {
        SynthKind::Uniform => false,
        SynthKind::Skewed => true,
        SynthKind::Hybrid => j > 0,
    };
    let margin = BLOB_BOX_SIGMAS * BLOB_SIGMA;
    let centers: Vec<Vec<f64>> = (0..BLOB_COUNT)
        .map(|_| (0..d).map(|_| rng.random_range(margin..=DOMAIN_MAX - margin)).collect())
        .collect();
    let noise = Normal::new(0.0, BLOB_SIGMA).expect("positive sigma");
    let mut columns = vec![Vec::with_capacity(n); d];
    for _ in 0..n {
        let blob = if kind != SynthKind::Uniform && rng.random_bool(BLOB_MASS) {
            Some(rng.random_range(0..BLOB_COUNT))
        } else {
            None
        };
        for (j, col) in columns.iter_mut().enumerate() {
            let v = match blob {
                Some(b) if skewed_dim(j) => centers[b][j] + noise.sample(&mut rng),
                _ => rng.random_range(0.0..=DOMAIN_MAX),
            };
            col.push(v.clamp(0.0, DOMAIN_MAX));
        }
    }
    let blob_boxes = if kind == SynthKind::Uniform {
        Vec::new()
    } else {
        centers
            .iter()
            .map(|c| {
                let bounds: Vec<(f64, f64)> = (0..d)
                    .map(|j| {
                        if skewed_dim(j) {
                            (c[j] - margin, c[j] + margin)
                        } else {
                            (0.0, DOMAIN_MAX)
                        }
                    })
                    .collect();
                Region::closed(&bounds)
            })
            .collect()
    };
    let ids = (0..n as u64).map(TupleId).collect();
    let dataset = Dataset::from_columns(Schema::unit(d), columns, ids)?;
    Ok(SynthData { dataset, blob_boxes })
}
