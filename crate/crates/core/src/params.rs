use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the logistic transition curve is parameterised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransitionForm {
    /// `cap * logistic(slope * B - intercept)`.
    #[default]
    Calibrated,
    /// `cap * logistic(slope - intercept * B)`, kept for audits only.
    Literal,
}

/// Conditional standard deviation of perceived benefits given actual benefit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConditionalSdForm {
    /// `sd * sqrt(1 - rho^2)`.
    #[default]
    Standard,
    /// `sqrt((1 - rho^2) * sd)`, kept for audits only.
    Literal,
}

/// Simulator constants. Per-rank arrays are indexed by rank - 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Number of stages including the terminal one.
    pub n_stages: usize,
    pub n_groups: usize,
    pub treatments_per_group: usize,
    pub plan_size: usize,
    pub weeks_multiplier: f64,
    pub transition_slope: f64,
    pub transition_intercept: f64,
    pub transition_cap: f64,
    pub transition_form: TransitionForm,
    pub atb_means: [f64; 3],
    pub atb_sds: [f64; 3],
    pub perceived_correlations: [f64; 3],
    pub perceived_means: [f64; 3],
    pub perceived_sds: [f64; 3],
    pub conditional_sd_form: ConditionalSdForm,
    /// Mass over the non-terminal stages.
    pub initial_stage_mass: Vec<f64>,
}

impl Default for SimParams {
    fn default() -> Self {
        let mut mass = vec![1.0 / 14.0; 11];
        mass[0] = 2.0 / 7.0;
        Self {
            n_stages: 12,
            n_groups: 11,
            treatments_per_group: 10,
            plan_size: 8,
            weeks_multiplier: 1.25,
            transition_slope: 0.233_930_4,
            transition_intercept: 13.493_96,
            transition_cap: 2.0 / 3.0,
            transition_form: TransitionForm::Calibrated,
            atb_means: [7.0, 5.5, 4.0],
            atb_sds: [0.75, 1.25, 1.50],
            perceived_correlations: [0.8, 0.7, 0.5],
            perceived_means: [7.0, 5.5, 4.0],
            perceived_sds: [1.00, 1.50, 1.75],
            conditional_sd_form: ConditionalSdForm::Standard,
            initial_stage_mass: mass,
        }
    }
}

impl SimParams {
    pub fn n_treatments(&self) -> usize {
        self.n_groups * self.treatments_per_group
    }

    pub fn terminal_stage(&self) -> usize {
        self.n_stages - 1
    }

    /// Number of non-terminal stages.
    pub fn n_active_stages(&self) -> usize {
        self.n_stages - 1
    }

    /// Group (1-based) a treatment (1-based) truly belongs to.
    pub fn true_group(&self, treatment: usize) -> usize {
        (treatment - 1) / self.treatments_per_group + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.n_stages < 2 {
            return bad("need at least one non-terminal stage");
        }
        if self.n_groups < 3 {
            return bad("group ranking needs at least three groups");
        }
        if self.n_active_stages() > self.n_groups {
            return bad("every non-terminal stage needs its own first-ranked group");
        }
        if self.treatments_per_group == 0 {
            return bad("treatments_per_group must be positive");
        }
        if self.plan_size == 0 || self.plan_size > self.n_treatments() {
            return bad("plan_size must lie in 1..=total treatments");
        }
        if !(self.transition_cap > 0.0 && self.transition_cap <= 1.0) {
            return bad("transition_cap must lie in (0, 1]");
        }
        if !(self.weeks_multiplier > 0.0) {
            return bad("weeks_multiplier must be positive");
        }
        if self.atb_sds.iter().chain(&self.perceived_sds).any(|&s| !(s > 0.0)) {
            return bad("standard deviations must be positive");
        }
        if self
            .perceived_correlations
            .iter()
            .any(|&r| !(r > -1.0 && r < 1.0))
        {
            return bad("correlations must lie in (-1, 1)");
        }
        if self.initial_stage_mass.len() != self.n_active_stages() {
            return bad("initial_stage_mass must cover every non-terminal stage");
        }
        if self.initial_stage_mass.iter().any(|&p| !(p >= 0.0)) {
            return bad("initial_stage_mass entries must be nonnegative");
        }
        let total: f64 = self.initial_stage_mass.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad("initial_stage_mass must sum to 1");
        }
        Ok(())
    }
}
