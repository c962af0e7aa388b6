//! Alternative model forms that fail on the full treatment space.

use serde::{Deserialize, Serialize};

use crate::cohort::{split_rows, Cohort};
use crate::error::Result;
use crate::fqi::{fit_fqi, joint_rows, q_values, rows_from_split, FeatureEncoder, FitStatus, FqiConfig, QModel};
use crate::grouping::{dkbg_assignment, GroupAssignment};
use crate::params::SimParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticFit {
    pub name: String,
    pub n_features: usize,
    pub rank: usize,
    pub n_aliased: usize,
    pub status: FitStatus,
    pub iterations: usize,
    pub max_abs_coefficient: f64,
    /// Largest predicted value at the last non-terminal stage over the weeks
    /// values observed there.
    pub max_last_stage_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub n_patients: usize,
    /// Whole-plan model over individual treatments.
    pub joint_action: DiagnosticFit,
    /// Whole-plan model over treatment groups.
    pub joint_group: DiagnosticFit,
    /// Split rows labeled by individual treatment.
    pub split_ungrouped: DiagnosticFit,
}

fn describe(name: &str, model: &QModel, last_stage: usize, weeks: &[usize]) -> DiagnosticFit {
    let max_last_stage_q = weeks
        .iter()
        .flat_map(|&w| q_values(model, last_stage, w as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    DiagnosticFit {
        name: name.into(),
        n_features: model.encoder.n_features(),
        rank: model.diagnostics.rank,
        n_aliased: model.aliased.iter().filter(|&&a| a).count(),
        status: model.status(),
        iterations: model.diagnostics.iterations,
        max_abs_coefficient: model.coefficients.iter().map(|c| c.abs()).fold(0.0, f64::max),
        max_last_stage_q,
    }
}

pub fn run_divergence_diagnostics(
    cohort: &Cohort,
    params: &SimParams,
    fqi: &FqiConfig,
) -> Result<DivergenceReport> {
    let stages = params.n_active_stages();
    let last = stages - 1;
    let mut weeks: Vec<usize> = cohort
        .records()
        .filter(|r| r.stage == last)
        .map(|r| r.weeks_remaining)
        .collect();
    weeks.sort_unstable();
    weeks.dedup();
    if weeks.is_empty() {
        weeks.push(1);
    }

    let joint = fit_fqi(
        &joint_rows(cohort, None)?,
        &FeatureEncoder::joint_action(params.n_treatments(), stages, params.plan_size),
        fqi,
    )?;
    tracing::info!(status = ?joint.status(), "joint-action fit finished");
    let groups = dkbg_assignment(params);
    let grouped = fit_fqi(
        &joint_rows(cohort, Some(&groups))?,
        &FeatureEncoder::joint_group(&groups, stages, params.plan_size),
        fqi,
    )?;
    tracing::info!(status = ?grouped.status(), "joint-group fit finished");
    let identity = GroupAssignment::identity(params.n_treatments());
    let split = fit_fqi(
        &rows_from_split(&split_rows(cohort, &identity)?),
        &FeatureEncoder::split(params.n_treatments(), stages),
        fqi,
    )?;
    tracing::info!(status = ?split.status(), "ungrouped split fit finished");

    Ok(DivergenceReport {
        n_patients: cohort.len(),
        joint_action: describe("joint_action", &joint, last, &weeks),
        joint_group: describe("joint_group", &grouped, last, &weeks),
        split_ungrouped: describe("split_ungrouped", &split, last, &weeks),
    })
}
