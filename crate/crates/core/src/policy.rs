//! Treatment-selection policies and the standardized state-action value
//! contribution (SSAVC) that turns group-level values into per-treatment
//! scores.

use std::cmp::Ordering;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::cohort::SelectionStats;
use crate::error::{Error, Result};
use crate::fqi::{q_values, FitStatus, QModel};
use crate::grouping::GroupAssignment;
use crate::rng::StreamRng;
use crate::sim::{max_weeks, PerceivedBenefits, Plan, Policy, Situation, Stage};

/// Indices (as 1-based ids) of the `k` best scores. `tie` orders equal scores
/// and must be a total order on ids.
fn top_k<F>(scores: &[f64], k: usize, tie: F) -> Plan
where
    F: Fn(usize, usize) -> Ordering,
{
    let mut ids: Vec<usize> = (1..=scores.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        scores[b - 1]
            .total_cmp(&scores[a - 1])
            .then_with(|| tie(*a, *b))
    };
    if k < ids.len() {
        ids.select_nth_unstable_by(k, cmp);
        ids.truncate(k);
    }
    Plan::new(ids)
}

fn by_id(a: usize, b: usize) -> Ordering {
    a.cmp(&b)
}

/// `(q - mean) / max(q - mean)`; all zero when every value is equal.
pub fn standardized_group_values(q: &[f64]) -> Vec<f64> {
    if q.is_empty() {
        return Vec::new();
    }
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    let max_dev = q.iter().map(|v| v - mean).fold(f64::NEG_INFINITY, f64::max);
    if !(max_dev > 0.0) {
        return vec![0.0; q.len()];
    }
    q.iter().map(|v| (v - mean) / max_dev).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SsavcForm {
    /// Proportion times the standardized group value; bounded above by one.
    #[default]
    Standardized,
    /// Proportion times the raw group value.
    RawQ,
}

/// Per-treatment SSAVC at one stage.
pub fn ssavc(
    stage: Stage,
    q: &[f64],
    stats: &SelectionStats,
    groups: &GroupAssignment,
    form: SsavcForm,
) -> Result<Vec<f64>> {
    let group_values = match form {
        SsavcForm::Standardized => standardized_group_values(q),
        SsavcForm::RawQ => q.to_vec(),
    };
    (1..=groups.n_treatments())
        .map(|t| {
            let g = groups.label(t)?;
            let prop = stats.proportion(stage, t);
            Ok(if prop == 0.0 { 0.0 } else { prop * group_values[g - 1] })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSsavc {
    pub stage: Stage,
    pub weeks: usize,
    pub group_q: Vec<f64>,
    pub standardized: Vec<f64>,
    pub proportions: Vec<f64>,
    pub values: Vec<f64>,
}

/// SSAVC for every non-terminal stage, evaluated at each stage's first-week
/// budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsavcTable {
    pub form: SsavcForm,
    pub stages: Vec<StageSsavc>,
    /// Selection counts, used to break ties.
    pub counts: Vec<Vec<u64>>,
    pub labels: Vec<usize>,
}

impl SsavcTable {
    pub fn build(
        model: &QModel,
        stats: &SelectionStats,
        groups: &GroupAssignment,
        params: &crate::params::SimParams,
        form: SsavcForm,
    ) -> Result<Self> {
        let stages = (0..params.n_active_stages())
            .map(|s| {
                let weeks = max_weeks(params, s)?;
                let group_q = q_values(model, s, weeks as f64);
                let values = ssavc(s, &group_q, stats, groups, form)?;
                Ok(StageSsavc {
                    stage: s,
                    weeks,
                    standardized: standardized_group_values(&group_q),
                    proportions: (1..=groups.n_treatments())
                        .map(|t| stats.proportion(s, t))
                        .collect(),
                    group_q,
                    values,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let counts = (0..params.n_active_stages())
            .map(|s| stats.stage_counts(s).to_vec())
            .collect();
        Ok(Self {
            form,
            stages,
            counts,
            labels: groups.labels().to_vec(),
        })
    }

    pub fn values(&self, stage: Stage) -> &[f64] {
        &self.stages[stage].values
    }

    pub fn max_value(&self) -> f64 {
        self.stages
            .iter()
            .flat_map(|s| s.values.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "stage",
            "treatment",
            "group_q",
            "standardized",
            "proportion",
            "ssavc",
        ])?;
        for st in &self.stages {
            for (i, v) in st.values.iter().enumerate() {
                let g = self.labels[i] - 1;
                w.write_record(&[
                    st.stage.to_string(),
                    (i + 1).to_string(),
                    st.group_q[g].to_string(),
                    st.standardized[g].to_string(),
                    st.proportions[i].to_string(),
                    v.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<ssavc csv>", e))?;
        Ok(())
    }
}

pub fn select_pt(perceived: &PerceivedBenefits, plan_size: usize) -> Plan {
    top_k(&perceived.values, plan_size, by_id)
}

/// Top treatments by SSAVC; ties go to the more frequently selected treatment,
/// then the lower id.
pub fn select_agent(ssavc: &[f64], counts: &[u64], plan_size: usize) -> Plan {
    top_k(ssavc, plan_size, |a, b| {
        counts[b - 1].cmp(&counts[a - 1]).then(a.cmp(&b))
    })
}

pub fn select_mixed(perceived: &PerceivedBenefits, ssavc: &[f64], weight: f64, plan_size: usize) -> Plan {
    let scores: Vec<f64> = perceived
        .values
        .iter()
        .zip(ssavc)
        .map(|(p, s)| p + weight * s)
        .collect();
    top_k(&scores, plan_size, by_id)
}

pub fn select_optimal(atb_column: &[f64], plan_size: usize) -> Plan {
    top_k(atb_column, plan_size, by_id)
}

pub fn select_popular(stats: &SelectionStats, stage: Stage, plan_size: usize) -> Result<Plan> {
    let counts = stats.stage_counts(stage);
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::NoObservations(stage));
    }
    let scores: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    Ok(top_k(&scores, plan_size, by_id))
}

pub fn select_random(rng: &mut StreamRng, n_treatments: usize, plan_size: usize) -> Plan {
    Plan::new(sample(rng, n_treatments, plan_size).into_iter().map(|i| i + 1).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Pt,
    Agent,
    Mixed,
    Optimal,
    Random,
    Popular,
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pt" => PolicyKind::Pt,
            "agent" => PolicyKind::Agent,
            "mixed" => PolicyKind::Mixed,
            "optimal" => PolicyKind::Optimal,
            "random" => PolicyKind::Random,
            "popular" => PolicyKind::Popular,
            other => return Err(Error::InvalidParams(format!("unknown policy {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    #[serde(default)]
    pub weight: f64,
    #[serde(default)]
    pub ssavc_form: SsavcForm,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            weight: 0.0,
            ssavc_form: SsavcForm::Standardized,
        }
    }

    pub fn mixed(weight: f64) -> Self {
        Self {
            weight,
            ..Self::new(PolicyKind::Mixed)
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            PolicyKind::Mixed => format!("mixed(w={})", self.weight),
            k => format!("{k:?}").to_lowercase(),
        }
    }

    /// Builds a runnable policy. Agent and mixed policies need a converged
    /// model, selection statistics and the grouping the model was fit on.
    pub fn build(
        &self,
        params: &crate::params::SimParams,
        learned: Option<(&QModel, &SelectionStats, &GroupAssignment)>,
        popular_stats: Option<&SelectionStats>,
    ) -> Result<Box<dyn Policy>> {
        Ok(match self.kind {
            PolicyKind::Pt => Box::new(PhysioPolicy),
            PolicyKind::Optimal => Box::new(OptimalPolicy),
            PolicyKind::Random => Box::new(RandomPolicy),
            PolicyKind::Popular => {
                let stats = popular_stats
                    .or(learned.map(|l| l.1))
                    .ok_or_else(|| Error::InvalidParams("popular policy needs selection stats".into()))?;
                Box::new(PopularPolicy::new(stats, params)?)
            }
            PolicyKind::Agent | PolicyKind::Mixed => {
                if !(self.weight >= 0.0) {
                    return Err(Error::InvalidParams("mixed weight must be nonnegative".into()));
                }
                let (model, stats, groups) = learned.ok_or_else(|| {
                    Error::InvalidParams("agent policies need a model and selection stats".into())
                })?;
                if model.status() != FitStatus::Converged {
                    return Err(Error::InvalidParams(format!(
                        "model status is {:?}, not converged",
                        model.status()
                    )));
                }
                let table = SsavcTable::build(model, stats, groups, params, self.ssavc_form)?;
                if self.kind == PolicyKind::Agent {
                    Box::new(AgentPolicy { table })
                } else {
                    Box::new(MixedPolicy {
                        table,
                        weight: self.weight,
                    })
                }
            }
        })
    }
}

pub struct PhysioPolicy;

impl Policy for PhysioPolicy {
    fn fixed_within_stage(&self) -> bool {
        true
    }

    fn select(&self, s: &Situation<'_>, _: &mut StreamRng) -> Plan {
        select_pt(s.perceived, s.world.params.plan_size)
    }
}

pub struct OptimalPolicy;

impl Policy for OptimalPolicy {
    fn fixed_within_stage(&self) -> bool {
        true
    }

    fn select(&self, s: &Situation<'_>, _: &mut StreamRng) -> Plan {
        select_optimal(s.world.benefits.column(s.stage), s.world.params.plan_size)
    }

    fn stage_invariant(&self) -> bool {
        true
    }
}

pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn select(&self, s: &Situation<'_>, rng: &mut StreamRng) -> Plan {
        select_random(rng, s.world.params.n_treatments(), s.world.params.plan_size)
    }
}

pub struct AgentPolicy {
    pub table: SsavcTable,
}

impl AgentPolicy {
    pub fn plan_for(&self, stage: Stage, plan_size: usize) -> Plan {
        select_agent(self.table.values(stage), &self.table.counts[stage], plan_size)
    }
}

impl Policy for AgentPolicy {
    fn fixed_within_stage(&self) -> bool {
        true
    }

    fn select(&self, s: &Situation<'_>, _: &mut StreamRng) -> Plan {
        self.plan_for(s.stage, s.world.params.plan_size)
    }

    fn stage_invariant(&self) -> bool {
        true
    }
}

pub struct MixedPolicy {
    pub table: SsavcTable,
    pub weight: f64,
}

impl Policy for MixedPolicy {
    fn fixed_within_stage(&self) -> bool {
        true
    }

    fn select(&self, s: &Situation<'_>, _: &mut StreamRng) -> Plan {
        select_mixed(
            s.perceived,
            self.table.values(s.stage),
            self.weight,
            s.world.params.plan_size,
        )
    }
}

/// The most frequently selected treatments per stage in a training cohort.
pub struct PopularPolicy {
    plans: Vec<Option<Plan>>,
}

impl PopularPolicy {
    pub fn new(stats: &SelectionStats, params: &crate::params::SimParams) -> Result<Self> {
        let plans = (0..params.n_active_stages())
            .map(|s| select_popular(stats, s, params.plan_size).ok())
            .collect();
        Ok(Self { plans })
    }
}

impl Policy for PopularPolicy {
    fn fixed_within_stage(&self) -> bool {
        true
    }

    fn select(&self, s: &Situation<'_>, _: &mut StreamRng) -> Plan {
        // A stage never seen in training falls back to the perceived ranking.
        self.plans[s.stage]
            .clone()
            .unwrap_or_else(|| select_pt(s.perceived, s.world.params.plan_size))
    }

    fn stage_invariant(&self) -> bool {
        self.plans.iter().all(Option::is_some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Cohort;
    use crate::grouping::dkbg_assignment;
    use crate::params::SimParams;
    use crate::rng::Streams;
    use crate::sim::{transition_probability, Trajectory, WeekRecord};
    use proptest::prelude::*;

    fn perceived(values: Vec<f64>) -> PerceivedBenefits {
        PerceivedBenefits { episode: 0, stage: 0, values }
    }

    #[test]
    fn standardization_examples() {
        assert_eq!(standardized_group_values(&[6.0, 8.0, 7.0]), vec![-1.0, 1.0, 0.0]);
        assert_eq!(standardized_group_values(&[2.5; 11]), vec![0.0; 11]);
    }

    proptest! {
        #[test]
        fn standardization_preserves_group_argmax(q in proptest::collection::vec(-20.0f64..20.0, 11)) {
            let z = standardized_group_values(&q);
            let arg = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).unwrap().0;
            prop_assert!(z.iter().all(|v| *v <= 1.0 + 1e-12));
            if q.iter().any(|v| *v != q[0]) {
                prop_assert_eq!(arg(&q), arg(&z));
                for i in 0..11 { for j in 0..11 {
                    if q[i] > q[j] { prop_assert!(z[i] > z[j]); }
                }}
            }
        }

        #[test]
        fn mixed_with_zero_weight_is_pt(vals in proptest::collection::vec(-5.0f64..15.0, 110),
                                        ss in proptest::collection::vec(-1.0f64..1.0, 110)) {
            let p = perceived(vals);
            prop_assert_eq!(select_mixed(&p, &ss, 0.0, 8), select_pt(&p, 8));
        }

        #[test]
        fn selections_are_valid_plans(vals in proptest::collection::vec(-5.0f64..15.0, 110), seed in 0u64..1000) {
            let params = SimParams::default();
            let p = perceived(vals.clone());
            let counts: Vec<u64> = (0..110).map(|i| (i * 7 % 13) as u64).collect();
            let mut rng = Streams::new(seed).rng("policy", &[]);
            for plan in [
                select_pt(&p, 8),
                select_agent(&vals, &counts, 8),
                select_mixed(&p, &vals, 3.0, 8),
                select_optimal(&vals, 8),
                select_random(&mut rng, 110, 8),
            ] {
                prop_assert!(plan.validate(&params).is_ok());
            }
        }
    }

    #[test]
    fn pt_examples() {
        let vals: Vec<f64> = (0..110).map(|i| 200.0 - i as f64).collect();
        assert_eq!(select_pt(&perceived(vals.clone()), 8).treatments(), &[1, 2, 3, 4, 5, 6, 7, 8]);
        // Permute: treatment 110 - i gets the i-th best value.
        let rev: Vec<f64> = vals.iter().rev().copied().collect();
        assert_eq!(
            select_pt(&perceived(rev), 8).treatments(),
            &[103, 104, 105, 106, 107, 108, 109, 110]
        );
        // Ties resolve to the lower id.
        assert_eq!(select_pt(&perceived(vec![1.0; 110]), 8).treatments(), &[1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn agent_tie_rules() {
        let zeros = vec![0.0; 110];
        let mut counts = vec![0u64; 110];
        counts[49] = 5;
        counts[99] = 5;
        counts[0] = 1;
        let plan = select_agent(&zeros, &counts, 8);
        assert_eq!(plan.treatments(), &[1, 2, 3, 4, 5, 6, 50, 100]);

        let mut ss = vec![0.0; 110];
        for (i, v) in ss[40..50].iter_mut().enumerate() {
            *v = 0.01 * (i as f64 + 1.0);
        }
        let plan = select_agent(&ss, &vec![0; 110], 8);
        assert_eq!(plan.treatments(), &[43, 44, 45, 46, 47, 48, 49, 50]);
    }

    #[test]
    fn mixed_large_weight_follows_agent() {
        let p = perceived((0..110).map(|i| (i % 17) as f64).collect());
        let ss: Vec<f64> = (0..110).map(|i| ((i * 37) % 110) as f64 / 110.0).collect();
        let counts = vec![0u64; 110];
        assert_eq!(select_mixed(&p, &ss, 1e9, 8), select_agent(&ss, &counts, 8));
    }

    #[test]
    fn optimal_matches_subset_enumeration() {
        // Reduced world: 10 treatments, plans of three.
        let params = SimParams::default();
        let mut rng = Streams::new(17).rng("test", &[]);
        for _ in 0..20 {
            let atb: Vec<f64> = (0..10).map(|_| 4.0 + 6.0 * rand::Rng::gen::<f64>(&mut rng)).collect();
            let plan = select_optimal(&atb, 3);
            let mut best = (f64::NEG_INFINITY, vec![]);
            for a in 0..10 {
                for b in a + 1..10 {
                    for c in b + 1..10 {
                        let agg = atb[a] + atb[b] + atb[c];
                        // Scale a three-treatment sum up to the eight-treatment range.
                        let p = transition_probability(&params, agg * 8.0 / 3.0).unwrap();
                        if p > best.0 {
                            best = (p, vec![a + 1, b + 1, c + 1]);
                        }
                    }
                }
            }
            assert_eq!(plan.treatments(), best.1.as_slice());
        }
    }

    fn toy_stats() -> (SelectionStats, GroupAssignment) {
        let params = SimParams::default();
        let groups = dkbg_assignment(&params);
        let rec = |plan: Vec<usize>| WeekRecord {
            stage: 0,
            weeks_remaining: 5,
            plan: Plan::new(plan),
            reward: 0.0,
            next_stage: 0,
        };
        let cohort = Cohort {
            world_id: "toy".into(),
            policy: "toy".into(),
            trajectories: vec![Trajectory {
                episode: 0,
                initial_stage: 0,
                records: vec![
                    rec(vec![1, 2, 3, 4, 5, 6, 7, 8]),
                    rec(vec![1, 2, 3, 4, 5, 6, 7, 9]),
                    rec(vec![1, 2, 3, 11, 12, 13, 14, 15]),
                ],
            }],
        };
        (SelectionStats::from_cohort(&cohort, &groups, 11).unwrap(), groups)
    }

    #[test]
    fn popular_counts_and_ties() {
        let (stats, _) = toy_stats();
        let plan = select_popular(&stats, 0, 8).unwrap();
        // 1,2,3 x3; 4..7 x2; 8,9,11..15 x1 -> slot 8 goes to the lowest id.
        assert_eq!(plan.treatments(), &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert!(matches!(select_popular(&stats, 4, 8), Err(Error::NoObservations(4))));
    }

    #[test]
    fn ssavc_examples_and_bound() {
        let (stats, groups) = toy_stats();
        let mut q = vec![0.0; 11];
        q[0] = 10.0;
        let v = ssavc(0, &q, &stats, &groups, SsavcForm::Standardized).unwrap();
        // Group 1 has standardized value 1; treatment 1 has 3 of 19 selections.
        assert!((v[0] - 3.0 / 19.0).abs() < 1e-12);
        assert_eq!(v[9], 0.0);
        assert!(v.iter().all(|&x| x <= 1.0));
        // Proportion one half in the top group gives one half.
        let z = standardized_group_values(&q);
        assert!((0.5 * z[0] - 0.5).abs() < 1e-15);
    }
}
