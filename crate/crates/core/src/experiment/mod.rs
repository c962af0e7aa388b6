//! End-to-end experiments: evaluation of policies on a fixed set of patients,
//! calibration runs, the replicate sweep, the three-action oracle, the
//! divergence diagnostics and report emission.

mod diagnostics;
mod oracle;
mod report;
mod sweep;

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use diagnostics::{run_divergence_diagnostics, DiagnosticFit, DivergenceReport};
pub use oracle::{
    oracle_success_probability, run_oracle, run_oracle_repetitions, OracleReport,
};
pub use report::{emit_reports, Manifest, REPORT_FILES};
pub use sweep::{
    fit_grouped, fit_tebg, run_full_sweep, weeks_invariant, EvalRecord, FitRecord, Headline, SweepReport,
    TebgFit,
};

use crate::error::{Error, Result};
use crate::params::SimParams;
use crate::rng::{self, Streams};
use crate::sim::{
    max_weeks, run_episode, run_episode_with, EpisodeStreams, PerceivedBenefits, Plan, Policy,
    Situation, Stage, World,
};
use crate::par;

/// Which grouping an agent learns from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Dkbg,
    Tebg,
}

impl Agent {
    pub fn label(self) -> &'static str {
        match self {
            Agent::Dkbg => "dkbg",
            Agent::Tebg => "tebg",
        }
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Agent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dkbg" => Ok(Agent::Dkbg),
            "tebg" => Ok(Agent::Tebg),
            other => Err(Error::InvalidParams(format!("unknown agent {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub seed: u64,
    pub replicates: usize,
    pub eval_patients: usize,
    /// Cumulative training-cohort sizes, strictly increasing.
    pub train_sizes: Vec<usize>,
    pub weights: Vec<f64>,
    pub agents: Vec<Agent>,
    /// Weight used for the cross-section and the gap-closure figures.
    pub cross_section_weight: f64,
    pub include_popular: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            seed: 20230601,
            replicates: 100,
            eval_patients: 1000,
            train_sizes: (1..=10).map(|i| i * 100).collect(),
            weights: (1..=20).map(f64::from).collect(),
            agents: vec![Agent::Dkbg, Agent::Tebg],
            cross_section_weight: 11.0,
            include_popular: true,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidParams("at least one replicate is required".into()));
        }
        if self.eval_patients == 0 {
            return Err(Error::InvalidParams("evaluation cohort is empty".into()));
        }
        if self.train_sizes.is_empty() || self.train_sizes[0] == 0 {
            return Err(Error::InvalidParams("training sizes must be positive".into()));
        }
        if self.train_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams("training sizes must be strictly increasing".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParams("weights must be finite and nonnegative".into()));
        }
        if self.agents.is_empty() {
            return Err(Error::InvalidParams("no agents selected".into()));
        }
        if !self.weights.contains(&self.cross_section_weight) {
            return Err(Error::InvalidParams(format!(
                "cross-section weight {} is not in the weight grid",
                self.cross_section_weight
            )));
        }
        Ok(())
    }

    pub fn max_train_size(&self) -> usize {
        *self.train_sizes.last().expect("validated plan")
    }
}

/// A pre-drawn evaluation patient: initial stage plus perceived benefits for
/// every stage the patient might visit.
#[derive(Debug, Clone)]
pub struct EvalPatient {
    pub episode: EpisodeStreams,
    pub initial_stage: Stage,
    pub perceived: Vec<PerceivedBenefits>,
}

/// Evaluation patients shared by every policy, so comparisons are paired.
#[derive(Debug, Clone)]
pub struct EvalCohort {
    pub patients: Vec<EvalPatient>,
}

impl EvalCohort {
    pub fn draw(world: &World, streams: &Streams, n: usize) -> Self {
        let stages = world.params.n_active_stages();
        let patients = par::map_range(n, |i| {
            let episode = EpisodeStreams::new(streams, i as u64);
            EvalPatient {
                episode,
                initial_stage: episode.initial_stage(&world.params),
                perceived: (0..stages).map(|s| world.perceived(&episode, s)).collect(),
            }
        });
        Self { patients }
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub n_patients: usize,
    /// Mean final stage.
    pub mean_return: f64,
    /// Per stage, the mean over patients of the transition probability of the
    /// plan chosen in the first week at that stage.
    pub stage_probabilities: Vec<f64>,
    /// Mean transition probability over all simulated weeks.
    pub mean_weekly_probability: f64,
}

fn first_week_plan(
    policy: &dyn Policy,
    world: &World,
    patient: &EvalPatient,
    stage: Stage,
) -> Result<Plan> {
    let plan = policy.select(
        &Situation {
            episode: patient.episode.id,
            stage,
            weeks_remaining: max_weeks(&world.params, stage)?,
            perceived: &patient.perceived[stage],
            world,
        },
        &mut patient.episode.policy(),
    );
    plan.validate(&world.params)?;
    Ok(plan)
}

/// Simulates a patient whose transition probability depends only on the
/// stage. Consumes the transition stream exactly as the week-by-week
/// simulator does. Returns the final stage, the summed weekly probability and
/// the number of weeks.
fn simulate_fixed(params: &SimParams, patient: &EvalPatient, probs: &[f64]) -> Result<(Stage, f64, usize)> {
    let mut stage = patient.initial_stage;
    let mut weeks = max_weeks(params, stage)?;
    let mut rng = patient.episode.transitions();
    let (mut sum, mut n) = (0.0, 0);
    while stage < params.terminal_stage() && weeks > 0 {
        let p = probs[stage];
        sum += p;
        n += 1;
        if rng.gen::<f64>() < p {
            stage += 1;
        }
        weeks -= 1;
    }
    Ok((stage, sum, n))
}

/// Treats every patient in `cohort` under `policy` and reports the mean
/// return and per-stage transition probabilities.
pub fn evaluate_policy(policy: &dyn Policy, world: &World, cohort: &EvalCohort) -> Result<PolicyEvaluation> {
    if cohort.is_empty() {
        return Err(Error::InvalidParams("evaluation cohort is empty".into()));
    }
    let params = &world.params;
    let stages = params.n_active_stages();

    let shared: Option<Vec<f64>> = if policy.stage_invariant() {
        let first = &cohort.patients[0];
        Some(
            (0..stages)
                .map(|s| Ok(world.plan_probability(s, &first_week_plan(policy, world, first, s)?)))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let per_patient = par::map_slice(&cohort.patients, |patient| -> Result<(Vec<f64>, Stage, f64, usize)> {
        let probs = match &shared {
            Some(p) => p.clone(),
            None => (0..stages)
                .map(|s| Ok(world.plan_probability(s, &first_week_plan(policy, world, patient, s)?)))
                .collect::<Result<Vec<_>>>()?,
        };
        if policy.fixed_within_stage() {
            let (fin, sum, n) = simulate_fixed(params, patient, &probs)?;
            Ok((probs, fin, sum, n))
        } else {
            let traj = run_episode_with(policy, world, &patient.episode, |s| {
                Cow::Borrowed(&patient.perceived[s])
            })?;
            let sum = traj
                .records
                .iter()
                .map(|r| world.plan_probability(r.stage, &r.plan))
                .sum();
            Ok((probs, traj.final_stage(), sum, traj.records.len()))
        }
    });

    let n = cohort.len() as f64;
    let mut stage_probabilities = vec![0.0; stages];
    let (mut ret, mut psum, mut weeks) = (0.0, 0.0, 0usize);
    for r in per_patient {
        let (probs, fin, sum, w) = r?;
        for (acc, p) in stage_probabilities.iter_mut().zip(probs) {
            *acc += p;
        }
        ret += fin as f64;
        psum += sum;
        weeks += w;
    }
    stage_probabilities.iter_mut().for_each(|p| *p /= n);
    Ok(PolicyEvaluation {
        n_patients: cohort.len(),
        mean_return: ret / n,
        stage_probabilities,
        mean_weekly_probability: psum / weeks.max(1) as f64,
    })
}

/// Mean weekly transition probability of a policy across independent
/// benefit realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRate {
    pub mean: f64,
    pub per_world: Vec<f64>,
    /// Largest probability seen in any simulated week.
    pub max_probability: f64,
}

pub fn transition_rate(
    params: &SimParams,
    policy: &dyn Policy,
    n_worlds: usize,
    episodes_per_world: usize,
    streams: &Streams,
) -> Result<TransitionRate> {
    if n_worlds == 0 || episodes_per_world == 0 {
        return Err(Error::InvalidParams("calibration needs worlds and episodes".into()));
    }
    let per_world = par::map_range(n_worlds, |w| -> Result<(f64, f64)> {
        let ws = streams.child("calibration", &[w as u64]);
        let world = World::sample(params.clone(), &ws)?;
        let root = ws.child(rng::EVAL, &[]);
        let (mut sum, mut n, mut max) = (0.0, 0usize, 0.0f64);
        for e in 0..episodes_per_world {
            let traj = run_episode(policy, &world, &EpisodeStreams::new(&root, e as u64))?;
            for r in &traj.records {
                let p = world.plan_probability(r.stage, &r.plan);
                sum += p;
                n += 1;
                max = max.max(p);
            }
        }
        Ok((sum / n.max(1) as f64, max))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(TransitionRate {
        mean: per_world.iter().map(|w| w.0).sum::<f64>() / n_worlds as f64,
        max_probability: per_world.iter().map(|w| w.1).fold(0.0, f64::max),
        per_world: per_world.into_iter().map(|w| w.0).collect(),
    })
}

/// Mean, normal-approximation 95% interval and empirical 5%/95% quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub q05: f64,
    pub q95: f64,
}

const Z_975: f64 = 1.959_963_984_540_054;

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let half = Z_975 * sd / (n as f64).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            n,
            mean,
            sd,
            ci_low: mean - half,
            ci_high: mean + half,
            q05: quantile(&sorted, 0.05),
            q95: quantile(&sorted, 0.95),
        })
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fraction of the gap between the baseline and the optimum that a policy
/// closes.
pub fn gap_closure(policy: f64, baseline: f64, optimum: f64) -> f64 {
    (policy - baseline) / (optimum - baseline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PhysioPolicy, RandomPolicy};

    fn world(seed: u64) -> World {
        World::sample(SimParams::default(), &Streams::new(seed)).unwrap()
    }

    #[test]
    fn fixed_path_matches_weekly_simulation() {
        let w = world(3);
        let streams = Streams::new(9).child(rng::EVAL, &[]);
        let cohort = EvalCohort::draw(&w, &streams, 200);
        let fast = evaluate_policy(&PhysioPolicy, &w, &cohort).unwrap();
        let slow: f64 = cohort
            .patients
            .iter()
            .map(|p| run_episode(&PhysioPolicy, &w, &p.episode).unwrap().final_stage() as f64)
            .sum::<f64>()
            / 200.0;
        assert_eq!(fast.mean_return, slow);
    }

    #[test]
    fn probabilities_stay_below_cap() {
        let w = world(4);
        let cohort = EvalCohort::draw(&w, &Streams::new(1), 50);
        for policy in [&PhysioPolicy as &dyn Policy, &RandomPolicy, &crate::policy::OptimalPolicy] {
            let e = evaluate_policy(policy, &w, &cohort).unwrap();
            assert!(e.stage_probabilities.iter().all(|p| (0.0..2.0 / 3.0).contains(p)));
            assert!((0.0..=11.0).contains(&e.mean_return));
        }
    }

    #[test]
    fn summary_matches_hand_values() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert!((s.sd - 2.5f64.sqrt()).abs() < 1e-12);
        assert!((s.ci_high - 3.0 - Z_975 * 2.5f64.sqrt() / 5f64.sqrt()).abs() < 1e-12);
        assert!((s.q05 - 1.2).abs() < 1e-12);
        assert!((s.q95 - 4.8).abs() < 1e-12);
    }

    #[test]
    fn plan_validation() {
        let mut p = ExperimentPlan::default();
        assert!(p.validate().is_ok());
        p.train_sizes = vec![200, 100];
        assert!(p.validate().is_err());
        p = ExperimentPlan { weights: vec![1.0], ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn gap_closure_is_affine() {
        assert_eq!(gap_closure(6.5, 6.0, 7.0), 0.5);
    }
}
