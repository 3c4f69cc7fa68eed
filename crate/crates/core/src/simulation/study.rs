//! Full phantom study: every condition, summaries and pairwise tests.

use serde::Serialize;

use crate::error::Result;
use crate::metrics::{significance, summarize, PlacementError, StudySummary};
use crate::simulation::config::StudyConfig;
use crate::simulation::insertion::{simulate_insertion, Condition, GuidanceMode, InsertionModels};
use crate::simulation::phantom::generate_phantom;
use crate::simulation::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub condition: Condition,
    pub samples: Vec<PlacementError>,
    pub summary: StudySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metric: &'static str,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    pub results: Vec<ConditionResult>,
    pub comparisons: Vec<Comparison>,
}

impl StudyOutcome {
    pub fn get(&self, condition: Condition) -> Option<&ConditionResult> {
        self.results.iter().find(|r| r.condition == condition)
    }

    pub fn summaries(&self) -> Vec<&StudySummary> {
        self.results.iter().map(|r| &r.summary).collect()
    }
}

pub fn run_conditions(cfg: &StudyConfig, conditions: &[Condition], exec: Execution) -> Result<StudyOutcome> {
    cfg.validate()?;
    let phantom = generate_phantom(cfg.phantom_seed);
    let models = InsertionModels::from(cfg);
    let results = conditions
        .iter()
        .map(|&condition| {
            let samples = simulate_insertion(&phantom, condition, &models, cfg.trials, cfg.seed, exec)?;
            let summary = summarize(condition.to_string(), &samples)?;
            Ok(ConditionResult { condition, samples, summary })
        })
        .collect::<Result<Vec<_>>>()?;

    // Cannula against each other mode, per interface, on every metric.
    let mut comparisons = Vec::new();
    for a in &results {
        if a.condition.mode != GuidanceMode::Cannula {
            continue;
        }
        for b in results
            .iter()
            .filter(|b| b.condition.surface_marker == a.condition.surface_marker && b.condition.mode != GuidanceMode::Cannula)
        {
            for (k, metric) in METRICS.into_iter().enumerate() {
                let xs: Vec<f64> = a.samples.iter().map(|e| e.fields()[k]).collect();
                let ys: Vec<f64> = b.samples.iter().map(|e| e.fields()[k]).collect();
                comparisons.push(Comparison {
                    a: a.condition.to_string(),
                    b: b.condition.to_string(),
                    metric,
                    p_value: significance(&xs, &ys)?,
                });
            }
        }
    }
    Ok(StudyOutcome { results, comparisons })
}

/// Names of [`PlacementError::fields`], in order.
pub const METRICS: [&str; 4] = ["entry_mm", "mid_mm", "end_mm", "rotation_deg"];

pub fn run_study(cfg: &StudyConfig, exec: Execution) -> Result<StudyOutcome> {
    run_conditions(cfg, &Condition::all(), exec)
}
