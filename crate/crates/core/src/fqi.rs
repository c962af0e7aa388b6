//! Fitted Q Iteration with a dummy-coded linear model over
//! (stage, action label, weeks remaining).
//!
//! Three encodings share one feature layout: intercept, weeks, label dummies
//! (label 1 is the reference), stage dummies (stage 0 is the reference) and
//! label-by-stage interactions. The split encoding sees one label per row; the
//! joint encodings see a whole plan, so label terms become counts and the
//! stage terms are repeated once per planned action.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, SplitRow};
use crate::error::{Error, Result};
use crate::grouping::GroupAssignment;
use crate::lstsq::{Design, PivotedQr};
use crate::par;
use crate::sim::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One row per (week, planned action), labelled by action group.
    GroupedSplit,
    /// One row per week; every individual treatment is a label.
    JointAction,
    /// One row per week; labels are the groups of the planned treatments.
    JointGroup,
}

impl ModelKind {
    pub fn is_joint(self) -> bool {
        !matches!(self, ModelKind::GroupedSplit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub kind: ModelKind,
    /// Number of action labels (groups, or treatments for the joint-action
    /// model).
    pub n_labels: usize,
    /// Number of non-terminal stages; the terminal stage equals this value.
    pub n_stages: usize,
    /// Actions per weekly plan (joint encodings only).
    pub plan_size: usize,
    /// How many times a label may appear in one plan (joint encodings only).
    pub label_capacity: Vec<usize>,
}

impl FeatureEncoder {
    pub fn split(n_labels: usize, n_stages: usize) -> Self {
        Self {
            kind: ModelKind::GroupedSplit,
            n_labels,
            n_stages,
            plan_size: 1,
            label_capacity: vec![1; n_labels],
        }
    }

    pub fn joint_action(n_treatments: usize, n_stages: usize, plan_size: usize) -> Self {
        Self {
            kind: ModelKind::JointAction,
            n_labels: n_treatments,
            n_stages,
            plan_size,
            label_capacity: vec![1; n_treatments],
        }
    }

    pub fn joint_group(groups: &GroupAssignment, n_stages: usize, plan_size: usize) -> Self {
        Self {
            kind: ModelKind::JointGroup,
            n_labels: groups.k(),
            n_stages,
            plan_size,
            label_capacity: groups.group_sizes(),
        }
    }

    /// Joint encoding with explicit capacities, for small hand-built problems.
    pub fn joint_with_capacity(n_stages: usize, plan_size: usize, label_capacity: Vec<usize>) -> Self {
        Self {
            kind: ModelKind::JointAction,
            n_labels: label_capacity.len(),
            n_stages,
            plan_size,
            label_capacity,
        }
    }

    pub fn terminal_stage(&self) -> Stage {
        self.n_stages
    }

    pub fn n_features(&self) -> usize {
        let k = self.n_labels - 1;
        let s = self.n_stages - 1;
        2 + k + s + k * s
    }

    fn label_index(&self, label: usize) -> Option<usize> {
        (label >= 2).then(|| 2 + (label - 2))
    }

    fn stage_index(&self, stage: Stage) -> Option<usize> {
        (stage >= 1).then(|| 2 + (self.n_labels - 1) + (stage - 1))
    }

    fn interaction_index(&self, label: usize, stage: Stage) -> Option<usize> {
        (label >= 2 && stage >= 1).then(|| {
            2 + (self.n_labels - 1)
                + (self.n_stages - 1)
                + (label - 2) * (self.n_stages - 1)
                + (stage - 1)
        })
    }

    fn check(&self, stage: Stage, labels: &[usize]) -> Result<()> {
        if stage >= self.n_stages {
            return Err(Error::Domain(format!(
                "stage {stage} is terminal and has no features"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > self.n_labels) {
            return Err(Error::Domain(format!("action label {bad} out of range")));
        }
        Ok(())
    }

    /// Sparse features as `(column, value)` pairs with repeated columns summed.
    pub fn encode_sparse(&self, stage: Stage, labels: &[usize], weeks: f64) -> Result<Vec<(usize, f64)>> {
        self.check(stage, labels)?;
        let mut out: BTreeMap<usize, f64> = BTreeMap::new();
        out.insert(0, 1.0);
        out.insert(1, weeks);
        for &l in labels {
            if let Some(i) = self.label_index(l) {
                *out.entry(i).or_insert(0.0) += 1.0;
            }
            if let Some(i) = self.stage_index(stage) {
                *out.entry(i).or_insert(0.0) += 1.0;
            }
            if let Some(i) = self.interaction_index(l, stage) {
                *out.entry(i).or_insert(0.0) += 1.0;
            }
        }
        Ok(out.into_iter().collect())
    }

    pub fn encode(&self, stage: Stage, labels: &[usize], weeks: f64) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.n_features()];
        for (i, v) in self.encode_sparse(stage, labels, weeks)? {
            x[i] = v;
        }
        Ok(x)
    }

    /// Per-label contribution `β_label + β_label×stage` at a stage.
    fn label_contribution(&self, beta: &[f64], label: usize, stage: Stage) -> f64 {
        self.label_index(label).map_or(0.0, |i| beta[i])
            + self.interaction_index(label, stage).map_or(0.0, |i| beta[i])
    }

    /// Part of the prediction shared by all labels in a row.
    fn base(&self, beta: &[f64], stage: Stage, weeks: f64, n_actions: usize) -> f64 {
        beta[0] + beta[1] * weeks + self.stage_index(stage).map_or(0.0, |i| beta[i]) * n_actions as f64
    }

    /// Best achievable value at `(stage, weeks)` over the action space.
    fn max_value(&self, beta: &[f64], stage: Stage, weeks: f64) -> f64 {
        if stage >= self.n_stages {
            return 0.0;
        }
        let contributions = (1..=self.n_labels).map(|l| (l, self.label_contribution(beta, l, stage)));
        match self.kind {
            ModelKind::GroupedSplit => {
                self.base(beta, stage, weeks, 1)
                    + contributions.map(|(_, c)| c).fold(f64::NEG_INFINITY, f64::max)
            }
            ModelKind::JointAction | ModelKind::JointGroup => {
                let mut c: Vec<(usize, f64)> = contributions.collect();
                c.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let mut left = self.plan_size;
                let mut total = 0.0;
                for (l, v) in c {
                    if left == 0 {
                        break;
                    }
                    let take = self.label_capacity[l - 1].min(left);
                    total += v * take as f64;
                    left -= take;
                }
                self.base(beta, stage, weeks, self.plan_size) + total
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FqiConfig {
    pub gamma: f64,
    /// Convergence when no coefficient moves by more than this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Diverged once any coefficient exceeds this magnitude.
    pub coefficient_limit: f64,
    /// Diverged once the max delta exceeds this and has grown for
    /// `growth_patience` consecutive iterations.
    pub delta_limit: f64,
    pub growth_patience: usize,
    pub alias_tolerance: f64,
}

impl Default for FqiConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            tolerance: 1e-4,
            max_iterations: 2000,
            coefficient_limit: 1e8,
            delta_limit: 1e4,
            growth_patience: 25,
            alias_tolerance: crate::lstsq::DEFAULT_ALIAS_TOLERANCE,
        }
    }
}

impl FqiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParams("gamma must lie in [0, 1]".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParams("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    Diverged,
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub max_delta: f64,
    pub coefficient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub status: FitStatus,
    pub iterations: usize,
    pub max_final_delta: f64,
    pub rank: usize,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    pub encoder: FeatureEncoder,
    pub coefficients: Vec<f64>,
    pub aliased: Vec<bool>,
    pub diagnostics: FitDiagnostics,
}

impl QModel {
    pub fn zeros(encoder: FeatureEncoder) -> Self {
        let n = encoder.n_features();
        Self {
            encoder,
            coefficients: vec![0.0; n],
            aliased: vec![false; n],
            diagnostics: FitDiagnostics {
                status: FitStatus::Converged,
                iterations: 0,
                max_final_delta: 0.0,
                rank: 0,
                trace: Vec::new(),
            },
        }
    }

    pub fn status(&self) -> FitStatus {
        self.diagnostics.status
    }

    /// Prediction for a row with the given labels (one label for the split
    /// encoding, a whole plan for joint encodings). Zero at the terminal stage.
    pub fn predict(&self, stage: Stage, labels: &[usize], weeks: f64) -> Result<f64> {
        if stage >= self.encoder.terminal_stage() {
            return Ok(0.0);
        }
        Ok(self
            .encoder
            .encode_sparse(stage, labels, weeks)?
            .into_iter()
            .map(|(i, v)| self.coefficients[i] * v)
            .sum())
    }

    /// Value of the best action set at `(stage, weeks)`.
    pub fn max_value(&self, stage: Stage, weeks: f64) -> f64 {
        self.encoder.max_value(&self.coefficients, stage, weeks)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_trace_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for t in &self.diagnostics.trace {
            w.serialize(t)?;
        }
        w.flush().map_err(|e| Error::io("<trace csv>", e))?;
        Ok(())
    }
}

/// Q̂ for every label at `(stage, weeks)`; all zero at the terminal stage.
pub fn q_values(model: &QModel, stage: Stage, weeks: f64) -> Vec<f64> {
    let enc = &model.encoder;
    if stage >= enc.terminal_stage() {
        return vec![0.0; enc.n_labels];
    }
    let base = enc.base(&model.coefficients, stage, weeks, 1);
    (1..=enc.n_labels)
        .map(|l| base + enc.label_contribution(&model.coefficients, l, stage))
        .collect()
}

/// One training tuple. Split rows carry a single label, joint rows a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FqiRow {
    pub stage: Stage,
    pub weeks_remaining: usize,
    pub labels: Vec<usize>,
    pub reward: f64,
    pub next_stage: Stage,
}

impl From<&SplitRow> for FqiRow {
    fn from(r: &SplitRow) -> Self {
        Self {
            stage: r.stage,
            weeks_remaining: r.weeks_remaining,
            labels: vec![r.action_group],
            reward: r.reward,
            next_stage: r.next_stage,
        }
    }
}

pub fn rows_from_split(rows: &[SplitRow]) -> Vec<FqiRow> {
    rows.iter().map(FqiRow::from).collect()
}

/// Whole-plan rows with every treatment (or its group) as a label.
pub fn joint_rows(cohort: &Cohort, groups: Option<&GroupAssignment>) -> Result<Vec<FqiRow>> {
    cohort
        .records()
        .map(|rec| {
            let labels = rec
                .plan
                .treatments()
                .iter()
                .map(|&t| groups.map_or(Ok(t), |g| g.label(t)))
                .collect::<Result<Vec<_>>>()?;
            Ok(FqiRow {
                stage: rec.stage,
                weeks_remaining: rec.weeks_remaining,
                labels,
                reward: rec.reward,
                next_stage: rec.next_stage,
            })
        })
        .collect()
}

/// Rows sharing a feature vector. Least squares on `sqrt(n)`-weighted cell
/// means has the same solution as least squares on the raw rows.
struct Cell {
    stage: Stage,
    weeks: usize,
    labels: Vec<usize>,
    n: usize,
    /// `(reward, next_stage, next_weeks, terminal) -> count`.
    outcomes: Vec<(f64, Stage, usize, bool, usize)>,
}

fn compress(rows: &[FqiRow], terminal: Stage) -> Vec<Cell> {
    let mut index: HashMap<(Stage, usize, Vec<usize>), usize> = HashMap::new();
    let mut cells: Vec<Cell> = Vec::new();
    let mut outcome_index: Vec<HashMap<(u64, Stage, usize), usize>> = Vec::new();
    for r in rows {
        let mut labels = r.labels.clone();
        labels.sort_unstable();
        let key = (r.stage, r.weeks_remaining, labels);
        let ci = *index.entry(key.clone()).or_insert_with(|| {
            cells.push(Cell {
                stage: key.0,
                weeks: key.1,
                labels: key.2.clone(),
                n: 0,
                outcomes: Vec::new(),
            });
            outcome_index.push(HashMap::new());
            cells.len() - 1
        });
        let cell = &mut cells[ci];
        cell.n += 1;
        let next_weeks = r.weeks_remaining.saturating_sub(1);
        let terminal_row = r.next_stage >= terminal || next_weeks == 0;
        let okey = (r.reward.to_bits(), r.next_stage, next_weeks);
        let oi = *outcome_index[ci].entry(okey).or_insert_with(|| {
            cell.outcomes.push((r.reward, r.next_stage, next_weeks, terminal_row, 0));
            cell.outcomes.len() - 1
        });
        cell.outcomes[oi].4 += 1;
    }
    cells
}

/// Fitted Q Iteration. The first pass regresses on immediate rewards; each
/// later pass regresses on `r + γ max_a Q̂(s', a, w - 1)` for non-terminal
/// transitions. A transition is terminal when it reaches the terminal stage or
/// exhausts the weekly budget.
pub fn fit_fqi(rows: &[FqiRow], encoder: &FeatureEncoder, config: &FqiConfig) -> Result<QModel> {
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyDesign);
    }
    let terminal = encoder.terminal_stage();
    for r in rows {
        if r.next_stage != r.stage && r.next_stage != r.stage + 1 {
            return Err(Error::Domain(format!(
                "transition {} -> {} is not a single step",
                r.stage, r.next_stage
            )));
        }
        encoder.check(r.stage, &r.labels)?;
    }
    let cells = compress(rows, terminal);
    let p = encoder.n_features();
    let mut design = Design::zeros(cells.len(), p);
    let weights: Vec<f64> = cells.iter().map(|c| (c.n as f64).sqrt()).collect();
    for (i, c) in cells.iter().enumerate() {
        for (j, v) in encoder.encode_sparse(c.stage, &c.labels, c.weeks as f64)? {
            design.set(i, j, weights[i] * v);
        }
    }
    let qr = PivotedQr::new(&design, config.alias_tolerance)?;
    let aliased = qr.aliased();

    let mut beta = vec![0.0; p];
    let mut trace = Vec::new();
    let mut status = FitStatus::IterationCap;
    let mut last_delta = f64::INFINITY;
    let mut growth_run = 0usize;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        // Bootstrap values for every reachable (stage, weeks) pair.
        let mut values: HashMap<(Stage, usize), f64> = HashMap::new();
        if iterations > 1 {
            for c in &cells {
                for &(_, s, w, term, _) in &c.outcomes {
                    if !term {
                        values
                            .entry((s, w))
                            .or_insert_with(|| encoder.max_value(&beta, s, w as f64));
                    }
                }
            }
        }
        let targets: Vec<f64> = par::map_range(cells.len(), |i| {
            let c = &cells[i];
            let total: f64 = c
                .outcomes
                .iter()
                .map(|&(r, s, w, term, count)| {
                    let boot = if term { 0.0 } else { values.get(&(s, w)).copied().unwrap_or(0.0) };
                    count as f64 * (r + config.gamma * boot)
                })
                .sum();
            weights[i] * total / c.n as f64
        });
        let next = qr.solve(&targets);
        let delta = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        let max_abs = next.iter().map(|v| v.abs()).fold(0.0, f64::max);
        trace.push(TraceEntry {
            iteration: iterations,
            max_delta: delta,
            coefficient_norm: norm,
        });
        beta = next;

        if !max_abs.is_finite() || max_abs > config.coefficient_limit {
            status = FitStatus::Diverged;
            break;
        }
        if delta < config.tolerance {
            status = FitStatus::Converged;
            break;
        }
        growth_run = if delta > last_delta { growth_run + 1 } else { 0 };
        last_delta = delta;
        if delta > config.delta_limit && growth_run >= config.growth_patience {
            status = FitStatus::Diverged;
            break;
        }
    }
    let max_final_delta = trace.last().map_or(0.0, |t| t.max_delta);
    Ok(QModel {
        encoder: encoder.clone(),
        coefficients: beta,
        aliased,
        diagnostics: FitDiagnostics {
            status,
            iterations,
            max_final_delta,
            rank: qr.rank(),
            trace,
        },
    })
}
