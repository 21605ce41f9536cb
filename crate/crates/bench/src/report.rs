//! Aggregates run records per strategy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{RunRecord, RunStatus, Strategy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub runs: usize,
    pub reached_target: usize,
    /// Median labeled samples to the F target, unfinished runs counted at
    /// their final count.
    pub median_effort: f64,
    pub mean_effort: f64,
    pub median_final_f: f64,
    pub mean_final_f: f64,
}

/// Per-seed effort difference `other - baseline`; negative favors `other`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub baseline: Strategy,
    pub other: Strategy,
    pub pairs: usize,
    pub median_delta: f64,
    pub other_wins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub strategies: Vec<StrategySummary>,
    pub paired: Vec<PairedDelta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyTiming {
    pub strategy: Strategy,
    pub mean_iteration_seconds: f64,
    pub max_iteration_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub strategies: Vec<StrategyTiming>,
}

pub struct Summary {
    pub results: ResultSummary,
    pub timing: TimingSummary,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Summaries in order of first appearance; paired deltas compare every
/// strategy with the first one.
pub fn report(records: &[RunRecord]) -> Summary {
    let mut order: Vec<Strategy> = Vec::new();
    let mut by: BTreeMap<Strategy, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        if !order.contains(&r.strategy) {
            order.push(r.strategy);
        }
        by.entry(r.strategy).or_default().push(r);
    }
    let mut strategies = Vec::new();
    let mut timing = Vec::new();
    for s in &order {
        let runs = &by[s];
        let effort: Vec<f64> = runs.iter().map(|r| r.effort() as f64).collect();
        let finals: Vec<f64> = runs.iter().map(|r| r.final_f).collect();
        strategies.push(StrategySummary {
            strategy: *s,
            runs: runs.len(),
            reached_target: runs.iter().filter(|r| r.status == RunStatus::ReachedTarget).count(),
            median_effort: median(&effort),
            mean_effort: mean(&effort),
            median_final_f: median(&finals),
            mean_final_f: mean(&finals),
        });
        let times: Vec<f64> = runs.iter().flat_map(|r| r.timing.iter().copied()).collect();
        timing.push(StrategyTiming {
            strategy: *s,
            mean_iteration_seconds: if times.is_empty() { 0.0 } else { mean(&times) },
            max_iteration_seconds: times.iter().copied().fold(0.0, f64::max),
        });
    }
    let mut paired = Vec::new();
    if let Some(&base) = order.first() {
        let base_by_seed: BTreeMap<u64, usize> = by[&base].iter().map(|r| (r.seed, r.effort())).collect();
        for &other in order.iter().skip(1) {
            let deltas: Vec<f64> = by[&other]
                .iter()
                .filter_map(|r| base_by_seed.get(&r.seed).map(|&b| r.effort() as f64 - b as f64))
                .collect();
            paired.push(PairedDelta {
                baseline: base,
                other,
                pairs: deltas.len(),
                median_delta: median(&deltas),
                other_wins: deltas.iter().filter(|&&d| d < 0.0).count(),
            });
        }
    }
    Summary {
        results: ResultSummary { strategies, paired },
        timing: TimingSummary { strategies: timing },
    }
}
