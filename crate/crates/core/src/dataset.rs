//! Columnar storage of the exploration space.
//!
//! Every attribute is normalized once at load time onto `[0, 100]`; all other
//! modules work exclusively in that coordinate system and only the query
//! renderer maps values back to raw units.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper end of every normalized domain.
pub const DOMAIN_MAX: f64 = 100.0;

/// Stable opaque identifier of a tuple. Reduced datasets keep the ids of
/// their parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TupleId(pub u64);

impl fmt::Display for TupleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub raw_min: f64,
    pub raw_max: f64,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, raw_min: f64, raw_max: f64) -> Self {
        Self {
            name: name.into(),
            raw_min,
            raw_max,
        }
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        DOMAIN_MAX * (raw - self.raw_min) / (self.raw_max - self.raw_min)
    }

    pub fn denormalize(&self, normalized: f64) -> f64 {
        self.raw_min + normalized * (self.raw_max - self.raw_min) / DOMAIN_MAX
    }
}

/// Ordered list of exploration attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AttributeSpec>", into = "Vec<AttributeSpec>")]
pub struct Schema {
    attributes: Vec<AttributeSpec>,
}

impl Schema {
    pub fn new(attributes: Vec<AttributeSpec>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("at least one attribute is required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for attr in &attributes {
            if !seen.insert(attr.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute `{}`", attr.name)));
            }
            if !(attr.raw_min.is_finite() && attr.raw_max.is_finite()) {
                return Err(Error::Schema(format!("attribute `{}` has non-finite bounds", attr.name)));
            }
            if attr.raw_min == attr.raw_max {
                return Err(Error::ConstantColumn(attr.name.clone()));
            }
            if attr.raw_min > attr.raw_max {
                return Err(Error::Schema(format!(
                    "attribute `{}` has raw_min > raw_max",
                    attr.name
                )));
            }
        }
        Ok(Self { attributes })
    }

    /// Schema whose raw units coincide with normalized units (`a0`, `a1`, ...).
    pub fn unit(dims: usize) -> Self {
        let attributes = (0..dims)
            .map(|j| AttributeSpec::new(format!("a{j}"), 0.0, DOMAIN_MAX))
            .collect();
        Self { attributes }
    }

    pub fn dims(&self) -> usize {
        self.attributes.len()
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn attribute(&self, dim: usize) -> &AttributeSpec {
        &self.attributes[dim]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn normalize_point(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.attributes)
            .map(|(v, a)| a.normalize(*v))
            .collect()
    }

    pub fn denormalize_point(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .zip(&self.attributes)
            .map(|(v, a)| a.denormalize(*v))
            .collect()
    }
}

impl TryFrom<Vec<AttributeSpec>> for Schema {
    type Error = Error;

    fn try_from(value: Vec<AttributeSpec>) -> Result<Self> {
        Schema::new(value)
    }
}

impl From<Schema> for Vec<AttributeSpec> {
    fn from(value: Schema) -> Self {
        value.attributes
    }
}

/// One-dimensional range with explicit endpoint inclusion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_closed: true,
            hi_closed: true,
        }
    }

    /// `[lo, hi)`
    pub fn half_open(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_closed: true,
            hi_closed: false,
        }
    }

    pub fn full() -> Self {
        Self::closed(0.0, DOMAIN_MAX)
    }

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    /// Clips to the normalized domain `[0, 100]`.
    pub fn clipped(self) -> Self {
        let mut out = self;
        if out.lo <= 0.0 {
            out.lo = 0.0;
            out.lo_closed = true;
        }
        if out.hi >= DOMAIN_MAX {
            out.hi = DOMAIN_MAX;
            out.hi_closed = true;
        }
        out
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        let (lo, lo_closed) = match self.lo.total_cmp(&other.lo) {
            std::cmp::Ordering::Less => (other.lo, other.lo_closed),
            std::cmp::Ordering::Greater => (self.lo, self.lo_closed),
            std::cmp::Ordering::Equal => (self.lo, self.lo_closed && other.lo_closed),
        };
        let (hi, hi_closed) = match self.hi.total_cmp(&other.hi) {
            std::cmp::Ordering::Less => (self.hi, self.hi_closed),
            std::cmp::Ordering::Greater => (other.hi, other.hi_closed),
            std::cmp::Ordering::Equal => (self.hi, self.hi_closed && other.hi_closed),
        };
        Interval {
            lo,
            hi,
            lo_closed,
            hi_closed,
        }
    }

    /// True when every value of `self` lies in `other`.
    pub fn is_within(&self, other: &Interval) -> bool {
        let lo_ok = self.lo > other.lo || (self.lo == other.lo && (other.lo_closed || !self.lo_closed));
        let hi_ok = self.hi < other.hi || (self.hi == other.hi && (other.hi_closed || !self.hi_closed));
        lo_ok && hi_ok
    }
}

/// Axis-aligned hyper-rectangle in normalized space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region {
    intervals: Vec<Interval>,
}

impl Region {
    /// Builds a region, clipping every interval to `[0, 100]`.
    pub fn new(intervals: Vec<Interval>) -> Result<Self> {
        let intervals: Vec<Interval> = intervals.into_iter().map(Interval::clipped).collect();
        if let Some(bad) = intervals.iter().find(|iv| iv.lo > iv.hi || iv.lo.is_nan() || iv.hi.is_nan()) {
            return Err(Error::InvalidArgument(format!(
                "interval [{}, {}] has lo > hi",
                bad.lo, bad.hi
            )));
        }
        Ok(Self { intervals })
    }

    pub fn full(dims: usize) -> Self {
        Self {
            intervals: vec![Interval::full(); dims],
        }
    }

    /// Closed box from `(lo, hi)` pairs, clipped to the domain. Bounds that
    /// cross after clipping collapse onto the nearer domain edge.
    pub fn closed(bounds: &[(f64, f64)]) -> Self {
        let intervals = bounds
            .iter()
            .map(|&(lo, hi)| {
                let lo = lo.clamp(0.0, DOMAIN_MAX);
                let hi = hi.clamp(0.0, DOMAIN_MAX);
                Interval::closed(lo.min(hi), hi.max(lo))
            })
            .collect();
        Self { intervals }
    }

    /// Closed box `center ± half_widths[j]`, clipped to the domain.
    pub fn around(center: &[f64], half_widths: &[f64]) -> Self {
        let bounds: Vec<(f64, f64)> = center
            .iter()
            .zip(half_widths)
            .map(|(c, h)| (c - h, c + h))
            .collect();
        Self::closed(&bounds)
    }

    pub fn dims(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn interval(&self, dim: usize) -> &Interval {
        &self.intervals[dim]
    }

    pub(crate) fn interval_mut(&mut self, dim: usize) -> &mut Interval {
        &mut self.intervals[dim]
    }

    #[inline]
    pub fn contains(&self, point: &[f64]) -> bool {
        debug_assert_eq!(point.len(), self.intervals.len());
        self.intervals.iter().zip(point).all(|(iv, v)| iv.contains(*v))
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.iter().any(Interval::is_empty)
    }

    pub fn volume(&self) -> f64 {
        self.intervals.iter().map(|iv| iv.width().max(0.0)).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.intervals.iter().map(Interval::midpoint).collect()
    }

    pub fn intersect(&self, other: &Region) -> Region {
        let intervals = self
            .intervals
            .iter()
            .zip(&other.intervals)
            .map(|(a, b)| a.intersect(b))
            .collect();
        Region { intervals }
    }

    pub fn intersects(&self, other: &Region) -> bool {
        !self.intersect(other).is_empty()
    }

    pub fn is_within(&self, other: &Region) -> bool {
        self.intervals
            .iter()
            .zip(&other.intervals)
            .all(|(a, b)| a.is_within(b))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    /// `sqrt(sum (a_j - b_j)^2) / (100 sqrt(d))`, which lies in `[0, 1]`.
    #[default]
    EuclideanNormalized,
}

pub fn distance(a: &[f64], b: &[f64], metric: DistanceMetric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(match metric {
        DistanceMetric::EuclideanNormalized => normalized_euclidean(a, b),
    })
}

#[inline]
pub(crate) fn normalized_euclidean(a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sq.sqrt() / (DOMAIN_MAX * (a.len() as f64).sqrt())
}

#[inline]
pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Immutable columnar tuple store over normalized coordinates.
#[derive(Clone, Debug)]
pub struct Dataset {
    schema: Schema,
    columns: Vec<Vec<f64>>,
    ids: Vec<TupleId>,
    index: HashMap<TupleId, usize>,
    /// Rows ordered by their first coordinate, for range lookups.
    by_first: Vec<u32>,
}

impl Dataset {
    /// Builds a dataset from already-normalized columns.
    pub fn from_columns(schema: Schema, columns: Vec<Vec<f64>>, ids: Vec<TupleId>) -> Result<Self> {
        if columns.len() != schema.dims() {
            return Err(Error::DimensionMismatch {
                expected: schema.dims(),
                actual: columns.len(),
            });
        }
        if ids.is_empty() {
            return Err(Error::InvalidArgument("a dataset needs at least one tuple".into()));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != ids.len() {
                return Err(Error::InvalidArgument(format!(
                    "column {j} has {} values for {} tuples",
                    col.len(),
                    ids.len()
                )));
            }
            if let Some(v) = col.iter().find(|v| !(0.0..=DOMAIN_MAX).contains(*v)) {
                return Err(Error::InvalidArgument(format!(
                    "normalized value {v} in column {j} is outside [0, 100]"
                )));
            }
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if index.insert(*id, row).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate tuple id {id}")));
            }
        }
        let rows = u32::try_from(ids.len()).map_err(|_| Error::InvalidArgument("more than 2^32 tuples".into()))?;
        let mut by_first: Vec<u32> = (0..rows).collect();
        by_first.sort_by(|&a, &b| columns[0][a as usize].total_cmp(&columns[0][b as usize]));
        Ok(Self {
            schema,
            columns,
            ids,
            index,
            by_first,
        })
    }

    /// Rows whose first coordinate lies in `iv`, unordered.
    fn first_range(&self, iv: &Interval) -> &[u32] {
        let col0 = &self.columns[0];
        let start = self.by_first.partition_point(|&r| {
            let v = col0[r as usize];
            if iv.lo_closed { v < iv.lo } else { v <= iv.lo }
        });
        let end = self.by_first.partition_point(|&r| {
            let v = col0[r as usize];
            if iv.hi_closed { v <= iv.hi } else { v < iv.hi }
        });
        &self.by_first[start..end.max(start)]
    }

    /// Builds a dataset from raw rows, normalizing with the schema bounds.
    /// Ids are the row positions.
    pub fn from_raw_rows(schema: Schema, rows: &[Vec<f64>]) -> Result<Self> {
        let d = schema.dims();
        let mut columns = vec![Vec::with_capacity(rows.len()); d];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                columns[j].push(normalize_checked(schema.attribute(j), *v, r)?);
            }
        }
        let ids = (0..rows.len() as u64).map(TupleId).collect();
        Self::from_columns(schema, columns, ids)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn dims(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TupleId] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> TupleId {
        self.ids[row]
    }

    pub fn row_of(&self, id: TupleId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn column(&self, dim: usize) -> &[f64] {
        &self.columns[dim]
    }

    #[inline]
    pub fn value(&self, row: usize, dim: usize) -> f64 {
        self.columns[dim][row]
    }

    pub fn point(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn point_into(&self, row: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.columns) {
            *o = c[row];
        }
    }

    pub fn raw_point(&self, row: usize) -> Vec<f64> {
        self.schema.denormalize_point(&self.point(row))
    }

    #[inline]
    pub fn row_in(&self, row: usize, region: &Region) -> bool {
        region
            .intervals()
            .iter()
            .zip(&self.columns)
            .all(|(iv, col)| iv.contains(col[row]))
    }

    /// Rows whose coordinates all lie in `region`, in row order.
    pub fn rows_in(&self, region: &Region) -> Vec<usize> {
        assert_eq!(region.dims(), self.dims(), "region dimension mismatch");
        let mut rows: Vec<usize> = self
            .first_range(region.interval(0))
            .iter()
            .map(|&r| r as usize)
            .filter(|&row| self.row_in(row, region))
            .collect();
        rows.sort_unstable();
        rows
    }

    pub fn count_in(&self, region: &Region) -> usize {
        assert_eq!(region.dims(), self.dims(), "region dimension mismatch");
        self.first_range(region.interval(0))
            .iter()
            .filter(|&&r| self.row_in(r as usize, region))
            .count()
    }

    /// Uniform sample without replacement of up to `count` rows inside
    /// `region`, skipping rows for which `skip` returns true.
    pub fn sample_rows<R: Rng + ?Sized>(
        &self,
        region: &Region,
        count: usize,
        rng: &mut R,
        skip: impl Fn(usize) -> bool,
    ) -> Vec<usize> {
        let mut rows: Vec<usize> = self.rows_in(region).into_iter().filter(|r| !skip(*r)).collect();
        if rows.len() > count {
            let (chosen, _) = rows.partial_shuffle(rng, count);
            let mut chosen = chosen.to_vec();
            chosen.sort_unstable();
            chosen
        } else {
            rows.shrink_to_fit();
            rows
        }
    }

    fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&r| c[r]).collect())
            .collect();
        let ids = rows.iter().map(|&r| self.ids[r]).collect();
        Dataset::from_columns(self.schema.clone(), columns, ids)
    }
}

fn normalize_checked(attr: &AttributeSpec, raw: f64, row: usize) -> Result<f64> {
    if !raw.is_finite() || raw < attr.raw_min || raw > attr.raw_max {
        return Err(Error::Parse {
            row,
            column: attr.name.clone(),
            message: format!(
                "value {raw} outside declared bounds [{}, {}]",
                attr.raw_min, attr.raw_max
            ),
        });
    }
    Ok(attr.normalize(raw).clamp(0.0, DOMAIN_MAX))
}

/// Uniformly samples up to `count` tuples inside `region`, without replacement.
/// An empty result signals an empty region.
pub fn random_within(ds: &Dataset, region: &Region, count: usize, seed: u64) -> Vec<TupleId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ds.sample_rows(region, count, &mut rng, |_| false)
        .into_iter()
        .map(|r| ds.id(r))
        .collect()
}

/// Simple random sample: each tuple is kept independently with probability
/// `fraction`. Schema and ids are preserved.
pub fn sample_reduce(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = (0..ds.len()).filter(|_| rng.random_bool(fraction)).collect();
    if rows.is_empty() {
        return Err(Error::EmptyReduction);
    }
    ds.subset(&rows)
}

/// Declarative override of the attributes to load from a tabular file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    /// Field delimiter; defaults to `,`.
    #[serde(default)]
    pub delimiter: Option<char>,
    /// Columns to explore, in order. Empty means every header column.
    #[serde(default)]
    pub attributes: Vec<AttributeOverride>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeOverride {
    pub name: String,
    #[serde(default)]
    pub raw_min: Option<f64>,
    #[serde(default)]
    pub raw_max: Option<f64>,
}

impl SchemaConfig {
    /// Reads a schema override from a `.toml` or `.json` document.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| Error::Schema(e.to_string()))
        }
    }
}

/// Loads a delimited text file with a header row.
pub fn load_dataset(path: &Path, config: &SchemaConfig) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, config)
}

pub fn read_dataset<R: Read>(reader: R, config: &SchemaConfig) -> Result<Dataset> {
    let delimiter = config.delimiter.unwrap_or(',');
    if !delimiter.is_ascii() {
        return Err(Error::Schema(format!("delimiter `{delimiter}` is not ASCII")));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(e, 0))?
        .iter()
        .map(str::to_owned)
        .collect();

    let selected: Vec<AttributeOverride> = if config.attributes.is_empty() {
        header
            .iter()
            .map(|name| AttributeOverride {
                name: name.clone(),
                raw_min: None,
                raw_max: None,
            })
            .collect()
    } else {
        config.attributes.clone()
    };
    let positions: Vec<usize> = selected
        .iter()
        .map(|a| {
            header
                .iter()
                .position(|h| *h == a.name)
                .ok_or_else(|| Error::UnknownAttribute(a.name.clone()))
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| csv_error(e, row_no))?;
        let row = positions
            .iter()
            .zip(&selected)
            .map(|(&p, attr)| {
                let field = record.get(p).ok_or_else(|| Error::Parse {
                    row: row_no,
                    column: attr.name.clone(),
                    message: "missing field".into(),
                })?;
                field.parse::<f64>().map_err(|e| Error::Parse {
                    row: row_no,
                    column: attr.name.clone(),
                    message: format!("`{field}`: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("file holds no data rows".into()));
    }

    let attributes = selected
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let observed = rows.iter().map(|r| r[j]);
            let lo = a.raw_min.unwrap_or_else(|| observed.clone().fold(f64::INFINITY, f64::min));
            let hi = a.raw_max.unwrap_or_else(|| observed.fold(f64::NEG_INFINITY, f64::max));
            AttributeSpec::new(a.name.clone(), lo, hi)
        })
        .collect();
    let schema = Schema::new(attributes)?;
    // Row numbers in errors are 1-based data rows.
    Dataset::from_raw_rows(schema, &rows).map_err(|e| match e {
        Error::Parse { row, column, message } => Error::Parse {
            row: row + 1,
            column,
            message,
        },
        other => other,
    })
}

fn csv_error(e: csv::Error, row: usize) -> Error {
    Error::Parse {
        row,
        column: String::new(),
        message: e.to_string(),
    }
}
