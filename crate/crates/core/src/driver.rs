//! The outer loop: match, re-weight, learn the metric, rebuild costs, re-match.
//!
//! A candidate assignment only replaces the previous one when it is strictly
//! cheaper under the freshly rebuilt cost matrix, so the matching objective
//! never increases from one accepted assignment to the next.

use serde::{Deserialize, Serialize};

use crate::cost::assignment_costs;
use crate::error::{DgmError, Result};
use crate::matcher::{matching_objective, solve_assignment};
use crate::metric::{apg_optimize, camera_bias_c0, total_loss, ApgOptions, TrainingPairs};
use crate::model::{
    validate_bundle, Assignment, CameraGraph, CostMatrix, DgmConfig, Metric, SoftLabelMatrix,
};
use crate::reweight::{reweight_labels, soft_labels};

/// Relative change of the metric loss below which a stable assignment counts as converged.
pub const CONVERGENCE_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Matching objective of the kept assignment under this iteration's costs.
    #[serde(rename = "G")]
    pub g: f64,
    /// Metric loss after this iteration's update.
    #[serde(rename = "F")]
    pub f: f64,
    /// Whether the new assignment replaced the previous one.
    pub accepted: bool,
    pub num_positive: usize,
    pub num_dummy: usize,
    /// False when re-weighting left a class empty and the metric was kept.
    pub metric_updated: bool,
}

#[derive(Debug, Clone)]
pub struct DgmOutcome {
    pub assignment: Assignment,
    /// Labels of the final assignment under the final costs.
    pub labels: SoftLabelMatrix,
    pub metric: Metric,
    pub costs: CostMatrix,
    pub dummy_cost: f64,
    pub history: Vec<IterationRecord>,
    /// The kept assignment after each iteration, starting with iteration 0.
    pub assignments: Vec<Assignment>,
    /// The metric after each iteration, starting with the identity.
    pub metrics: Vec<Metric>,
}

struct Matching {
    costs: CostMatrix,
    dummy_cost: f64,
    assignment: Assignment,
    objective: f64,
}

fn build_and_match(a: &CameraGraph, b: &CameraGraph, metric: &Metric, config: &DgmConfig) -> Result<Matching> {
    let costs = assignment_costs(a, b, metric, config.lambda, config.k)?;
    let dummy_cost = config.dummy_cost_mode.resolve(&costs);
    let (assignment, objective) = solve_assignment(&costs, dummy_cost)?;
    Ok(Matching {
        costs,
        dummy_cost,
        assignment,
        objective,
    })
}

/// Training pairs for the current labels, or `None` when a class is empty.
fn training_pairs(
    a: &CameraGraph,
    b: &CameraGraph,
    costs: &CostMatrix,
    assignment: &Assignment,
    metric: &Metric,
) -> Result<Option<(TrainingPairs, usize)>> {
    match reweight_labels(costs, assignment) {
        Ok(labels) => {
            let c0 = camera_bias_c0(a, b, metric)?;
            let positives = labels.num_positive();
            Ok(Some((TrainingPairs::from_labels(a, b, &labels, c0)?, positives)))
        }
        Err(DgmError::NoPositives | DgmError::NoNegatives) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Rescales `metric` so the mean cross-camera distance equals `reference_c0`.
///
/// The loss can always be lowered by inflating a metric that already orders
/// most pairs correctly; left alone, costs grow without bound across
/// iterations and the exponential soft labels of every positive collapse to zero.
fn anchor_scale(a: &CameraGraph, b: &CameraGraph, metric: Metric, reference_c0: f64) -> Result<Metric> {
    let c0 = camera_bias_c0(a, b, &metric)?;
    if c0 <= crate::metric::MIN_BIAS {
        return Ok(metric);
    }
    Ok(metric.scaled(reference_c0 / c0))
}

/// Matching under the identity metric only, with no learning.
pub fn static_matching(a: &CameraGraph, b: &CameraGraph, config: &DgmConfig) -> Result<Assignment> {
    config.validate()?;
    let dim = validate_bundle(a, b)?;
    Ok(build_and_match(a, b, &Metric::identity(dim), config)?.assignment)
}

/// Runs the full iterative estimation on a validated camera pair.
///
/// Ground-truth person ids on the tracklets are never consulted.
pub fn dgm_run(a: &CameraGraph, b: &CameraGraph, config: &DgmConfig) -> Result<DgmOutcome> {
    config.validate()?;
    let dim = validate_bundle(a, b)?;
    let apg = ApgOptions {
        max_steps: config.apg_max_steps,
        tol: config.apg_tol,
    };

    let mut metric = Metric::identity(dim);
    let reference_c0 = camera_bias_c0(a, b, &metric)?;
    let mut current = build_and_match(a, b, &metric, config)?;
    let initial = training_pairs(a, b, &current.costs, &current.assignment, &metric)?;
    let mut loss = initial
        .as_ref()
        .map_or(0.0, |(pairs, _)| total_loss(&metric, pairs));

    let mut history = vec![IterationRecord {
        iter: 0,
        g: current.objective,
        f: loss,
        accepted: true,
        num_positive: initial.as_ref().map_or(0, |(_, p)| *p),
        num_dummy: current.assignment.num_dummy(),
        metric_updated: false,
    }];
    let mut assignments = vec![current.assignment.clone()];
    let mut metrics = vec![metric.clone()];
    let mut stable_streak = 0usize;

    for iter in 1..=config.max_iter {
        // Labels come from the previous assignment and the costs that produced it.
        let (metric_updated, num_positive) =
            match training_pairs(a, b, &current.costs, &current.assignment, &metric)? {
                Some((pairs, positives)) => {
                    let outcome = apg_optimize(&pairs, &metric, apg)?;
                    metric = anchor_scale(a, b, outcome.metric, reference_c0)?;
                    loss = total_loss(&metric, &pairs);
                    (true, positives)
                }
                None => (false, 0),
            };

        let candidate = build_and_match(a, b, &metric, config)?;
        let previous_objective =
            matching_objective(&candidate.costs, &current.assignment, candidate.dummy_cost)?;
        let accepted = candidate.objective < previous_objective;
        let previous_loss = history.last().map_or(loss, |r| r.f);

        current = if accepted {
            candidate
        } else {
            Matching {
                objective: previous_objective,
                assignment: current.assignment,
                ..candidate
            }
        };

        history.push(IterationRecord {
            iter,
            g: current.objective,
            f: loss,
            accepted,
            num_positive,
            num_dummy: current.assignment.num_dummy(),
            metric_updated,
        });
        let unchanged = assignments.last() == Some(&current.assignment);
        assignments.push(current.assignment.clone());
        metrics.push(metric.clone());

        stable_streak = if unchanged { stable_streak + 1 } else { 0 };
        let rel_loss = (previous_loss - loss).abs() / previous_loss.abs().max(f64::MIN_POSITIVE);
        if stable_streak >= 2 && rel_loss < CONVERGENCE_TOL {
            break;
        }
    }

    let labels = soft_labels(&current.costs, &current.assignment)?;
    Ok(DgmOutcome {
        assignment: current.assignment,
        labels,
        metric,
        costs: current.costs,
        dummy_cost: current.dummy_cost,
        history,
        assignments,
        metrics,
    })
}
