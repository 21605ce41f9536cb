//! CART classifier over labeled samples, its leaf hyper-rectangles, and the
//! extraction query rendered from the relevant leaves.

use std::cmp::Ordering;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Interval, Region, Schema, TupleId, DOMAIN_MAX};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Class {
    Relevant,
    Irrelevant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: TupleId,
    pub point: Vec<f64>,
    pub class: Class,
}

impl LabeledSample {
    pub fn new(id: TupleId, point: Vec<f64>, class: Class) -> Self {
        Self { id, point, class }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub min_samples_leaf: usize,
    pub max_depth: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            min_samples_leaf: 2,
            max_depth: 20,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_leaf == 0 {
            return Err(Error::config("tree.min_samples_leaf", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Node {
    /// `point[dim] <= threshold` descends into `left`.
    Split {
        dim: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: Class,
        relevant: usize,
        irrelevant: usize,
    },
}

/// Binary tree stored as an arena; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    dims: usize,
    nodes: Vec<Node>,
}

// Gini comparisons below this margin count as ties.
const GINI_EPS: f64 = 1e-12;

struct Builder<'a> {
    samples: &'a [LabeledSample],
    params: TreeParams,
    nodes: Vec<Node>,
}

fn gini(relevant: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = relevant as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

fn leaf_class(relevant: usize, irrelevant: usize) -> Class {
    // Ties resolve to irrelevant, so a lone relevant sample stays a false
    // negative until more evidence arrives.
    if relevant > irrelevant {
        Class::Relevant
    } else {
        Class::Irrelevant
    }
}

impl Builder<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let relevant = rows
            .iter()
            .filter(|&&r| self.samples[r].class == Class::Relevant)
            .count();
        let irrelevant = rows.len() - relevant;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            class: leaf_class(relevant, irrelevant),
            relevant,
            irrelevant,
        });
        let pure = relevant == 0 || irrelevant == 0;
        if pure || depth >= self.params.max_depth || rows.len() < 2 * self.params.min_samples_leaf {
            return id;
        }
        let Some((dim, threshold)) = self.best_split(rows) else {
            return id;
        };
        let split_at = partition(rows, |&r| self.samples[r].point[dim] <= threshold);
        let (l, r) = rows.split_at_mut(split_at);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            dim,
            threshold,
            left,
            right,
        };
        id
    }

    /// Lowest weighted Gini over all midpoints; ties keep the earlier
    /// (lower dimension, lower threshold) candidate.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let total_relevant = rows
            .iter()
            .filter(|&&r| self.samples[r].class == Class::Relevant)
            .count();
        let min_leaf = self.params.min_samples_leaf;
        let dims = self.samples[rows[0]].point.len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for dim in 0..dims {
            order.sort_by(|&a, &b| {
                self.samples[a].point[dim].total_cmp(&self.samples[b].point[dim])
            });
            let mut left_relevant = 0usize;
            for i in 0..n - 1 {
                if self.samples[order[i]].class == Class::Relevant {
                    left_relevant += 1;
                }
                let here = self.samples[order[i]].point[dim];
                let next = self.samples[order[i + 1]].point[dim];
                if here == next {
                    continue;
                }
                let nl = i + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let score = (nl as f64 * gini(left_relevant, nl)
                    + nr as f64 * gini(total_relevant - left_relevant, nr))
                    / n as f64;
                let threshold = 0.5 * (here + next);
                let better = match best {
                    None => true,
                    Some((s, _, _)) => score < s - GINI_EPS,
                };
                if better {
                    best = Some((score, dim, threshold));
                }
            }
        }
        best.map(|(_, dim, threshold)| (dim, threshold))
    }
}

/// Stable in-place partition; returns the count of rows satisfying `pred`.
fn partition(rows: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let (yes, no): (Vec<usize>, Vec<usize>) = rows.iter().partition(|r| pred(r));
    let k = yes.len();
    rows[..k].copy_from_slice(&yes);
    rows[k..].copy_from_slice(&no);
    k
}

/// Fits a CART tree. Single-class input yields a one-leaf tree, detectable
/// through [`DecisionTree::is_degenerate`].
pub fn train(samples: &[LabeledSample], params: &TreeParams) -> Result<DecisionTree> {
    params.validate()?;
    let first = samples.first().ok_or(Error::EmptyTrainingSet)?;
    let dims = first.point.len();
    if let Some(bad) = samples.iter().find(|s| s.point.len() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: bad.point.len(),
        });
    }
    let mut builder = Builder {
        samples,
        params: *params,
        nodes: Vec::new(),
    };
    let mut rows: Vec<usize> = (0..samples.len()).collect();
    builder.grow(&mut rows, 0);
    Ok(DecisionTree {
        dims,
        nodes: builder.nodes,
    })
}

impl DecisionTree {
    /// Assembles a tree from an explicit arena, checking that every node is
    /// reachable exactly once from the root.
    pub fn from_nodes(dims: usize, nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("tree needs a root".into()));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= nodes.len() || seen[i] {
                return Err(Error::InvalidArgument(format!("node {i} is missing or shared")));
            }
            seen[i] = true;
            if let Node::Split {
                dim,
                threshold,
                left,
                right,
            } = nodes[i]
            {
                if dim >= dims || !(0.0..=DOMAIN_MAX).contains(&threshold) {
                    return Err(Error::InvalidArgument(format!("node {i} has an invalid split")));
                }
                stack.push(right);
                stack.push(left);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("tree has unreachable nodes".into()));
        }
        Ok(Self { dims, nodes })
    }

    /// Single leaf predicting `class` everywhere.
    pub fn constant(dims: usize, class: Class) -> Self {
        let (relevant, irrelevant) = match class {
            Class::Relevant => (1, 0),
            Class::Irrelevant => (0, 1),
        };
        Self {
            dims,
            nodes: vec![Node::Leaf {
                class,
                relevant,
                irrelevant,
            }],
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn is_degenerate(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn classify(&self, point: &[f64]) -> Result<Class> {
        if point.len() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                actual: point.len(),
            });
        }
        Ok(self.predict(|dim| point[dim]))
    }

    /// Descends using a coordinate accessor; callers guarantee the dimension.
    #[inline]
    pub fn predict(&self, coord: impl Fn(usize) -> f64) -> Class {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { class, .. } => return class,
                Node::Split {
                    dim,
                    threshold,
                    left,
                    right,
                } => i = if coord(dim) <= threshold { left } else { right },
            }
        }
    }

    pub fn classify_row(&self, ds: &Dataset, row: usize) -> Class {
        self.predict(|dim| ds.value(row, dim))
    }
}

/// Leaf hyper-rectangles split by predicted class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub relevant: Vec<Region>,
    pub irrelevant: Vec<Region>,
}

impl RegionSet {
    pub fn lookup(&self, point: &[f64]) -> Option<Class> {
        if self.relevant.iter().any(|r| r.contains(point)) {
            Some(Class::Relevant)
        } else if self.irrelevant.iter().any(|r| r.contains(point)) {
            Some(Class::Irrelevant)
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.relevant.len() + self.irrelevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Intersects split half-spaces along every root-to-leaf path with the
/// closed domain box.
pub fn extract_regions(tree: &DecisionTree) -> RegionSet {
    let mut out = RegionSet::default();
    let mut stack = vec![(0usize, Region::full(tree.dims))];
    while let Some((i, region)) = stack.pop() {
        match tree.nodes[i] {
            Node::Leaf { class, .. } => match class {
                Class::Relevant => out.relevant.push(region),
                Class::Irrelevant => out.irrelevant.push(region),
            },
            Node::Split {
                dim,
                threshold,
                left,
                right,
            } => {
                let mut l = region.clone();
                let below = Interval { lo: 0.0, hi: threshold, lo_closed: true, hi_closed: true };
                *l.interval_mut(dim) = region.interval(dim).intersect(&below);
                let mut r = region;
                let above = Interval { lo: threshold, hi: DOMAIN_MAX, lo_closed: false, hi_closed: true };
                *r.interval_mut(dim) = r.interval(dim).intersect(&above);
                stack.push((right, r));
                stack.push((left, l));
            }
        }
    }
    out
}

/// Canonical disjunctive range predicate in raw attribute units.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExtractionQuery {
    text: String,
}

impl ExtractionQuery {
    pub const NOTHING: &'static str = "FALSE";
    pub const EVERYTHING: &'static str = "TRUE";

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn selects_nothing(&self) -> bool {
        self.text == Self::NOTHING
    }

    pub fn selects_everything(&self) -> bool {
        self.text == Self::EVERYTHING
    }
}

impl fmt::Display for ExtractionQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

fn cmp_regions(a: &Region, b: &Region) -> Ordering {
    let key = |r: &Region| -> Vec<(f64, f64)> {
        r.intervals().iter().map(|iv| (iv.lo, iv.hi)).collect()
    };
    let (ka, kb) = (key(a), key(b));
    for ((alo, _), (blo, _)) in ka.iter().zip(&kb) {
        match alo.total_cmp(blo) {
            Ordering::Equal => {}
            other => return other,
        }
    }
    for ((_, ahi), (_, bhi)) in ka.iter().zip(&kb) {
        match ahi.total_cmp(bhi) {
            Ordering::Equal => {}
            other => return other,
        }
    }
    Ordering::Equal
}

/// Formats a raw bound with at most 12 significant digits so that values
/// such as `20.000000000000004` print as `20`.
pub fn format_number(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{}", if v == 0.0 { 0.0 } else { v });
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    let rounded: f64 = format!("{v:.decimals$}").parse().unwrap_or(v);
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

fn quote_name(name: &str) -> String {
    let mut chars = name.chars();
    let ident = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if ident {
        name.to_owned()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

fn render_conjunction(region: &Region, schema: &Schema) -> Vec<String> {
    let mut terms = Vec::new();
    for (dim, iv) in region.intervals().iter().enumerate() {
        let attr = schema.attribute(dim);
        let name = quote_name(&attr.name);
        if iv.lo > 0.0 || !iv.lo_closed {
            let op = if iv.lo_closed { ">=" } else { ">" };
            terms.push(format!("{name} {op} {}", format_number(attr.denormalize(iv.lo))));
        }
        if iv.hi < DOMAIN_MAX || !iv.hi_closed {
            let op = if iv.hi_closed { "<=" } else { "<" };
            terms.push(format!("{name} {op} {}", format_number(attr.denormalize(iv.hi))));
        }
    }
    terms
}

/// Renders the relevant regions as `(a and b) or (c)`, dimensions in schema
/// order and regions sorted by their lower bounds. Bounds sitting on the
/// domain edge are omitted.
pub fn formulate_query(rs: &RegionSet, schema: &Schema) -> ExtractionQuery {
    let mut regions: Vec<&Region> = rs.relevant.iter().filter(|r| !r.is_empty()).collect();
    if regions.is_empty() {
        return ExtractionQuery {
            text: ExtractionQuery::NOTHING.into(),
        };
    }
    regions.sort_by(|a, b| cmp_regions(a, b));
    let mut text = String::new();
    for (i, region) in regions.iter().enumerate() {
        let terms = render_conjunction(region, schema);
        if terms.is_empty() {
            return ExtractionQuery {
                text: ExtractionQuery::EVERYTHING.into(),
            };
        }
        if i > 0 {
            text.push_str(" or ");
        }
        let _ = write!(text, "({})", terms.join(" and "));
    }
    ExtractionQuery { text }
}
