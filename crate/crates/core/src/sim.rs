//! The synthetic rehabilitation world: benefit tables, perceived benefits,
//! the logistic transition curve and full patient episodes.

use std::borrow::Cow;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ConditionalSdForm, SimParams, TransitionForm};
use crate::rng::{self, StreamRng, Streams};

pub type Stage = usize;

/// Maximum number of treatment weeks for a patient entering at `stage`.
pub fn max_weeks(params: &SimParams, stage: Stage) -> Result<usize> {
    if stage >= params.terminal_stage() {
        return Err(Error::Domain(format!("stage {stage} is terminal")));
    }
    let remaining = (params.terminal_stage() - stage) as f64;
    Ok(((params.weeks_multiplier * remaining).floor() as usize).max(1))
}

/// Rank (1 best, 3 worst) of every group at a non-terminal stage, indexed by
/// group - 1.
pub fn group_ranking(params: &SimParams, stage: Stage) -> Vec<u8> {
    let n = params.n_groups;
    let best = stage + 1;
    let mut ranks = vec![3u8; n];
    ranks[best - 1] = 1;
    let seconds = if best == 1 {
        [2, 3]
    } else if best == n {
        [n - 2, n - 1]
    } else {
        [best - 1, best + 1]
    };
    for g in seconds {
        ranks[g - 1] = 2;
    }
    ranks
}

/// A sorted set of distinct, 1-based treatment ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Plan(Vec<usize>);

impl Plan {
    pub fn new(mut treatments: Vec<usize>) -> Self {
        treatments.sort_unstable();
        Plan(treatments)
    }

    pub fn treatments(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, params: &SimParams) -> Result<()> {
        if self.0.len() != params.plan_size {
            return Err(Error::InvalidPlan(format!(
                "expected {} treatments, got {}",
                params.plan_size,
                self.0.len()
            )));
        }
        if self.0.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidPlan("duplicate treatment".into()));
        }
        if self.0.iter().any(|&t| t == 0 || t > params.n_treatments()) {
            return Err(Error::InvalidPlan("treatment id out of range".into()));
        }
        Ok(())
    }
}

/// Actual treatment benefits, one column per non-terminal stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitTable {
    n_treatments: usize,
    n_stages: usize,
    values: Vec<f64>,
}

impl BenefitTable {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n_stages = columns.len();
        let n_treatments = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_treatments) {
            return Err(Error::InvalidParams("ragged benefit columns".into()));
        }
        let values: Vec<f64> = columns.into_iter().flatten().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite benefit".into()));
        }
        Ok(Self {
            n_treatments,
            n_stages,
            values,
        })
    }

    pub fn n_treatments(&self) -> usize {
        self.n_treatments
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    /// Benefits of every treatment at `stage`, indexed by treatment - 1.
    pub fn column(&self, stage: Stage) -> &[f64] {
        &self.values[stage * self.n_treatments..(stage + 1) * self.n_treatments]
    }

    pub fn get(&self, treatment: usize, stage: Stage) -> f64 {
        self.column(stage)[treatment - 1]
    }

    pub fn aggregate(&self, stage: Stage, plan: &Plan) -> f64 {
        let col = self.column(stage);
        plan.treatments().iter().map(|&t| col[t - 1]).sum()
    }
}

pub fn sample_actual_benefits(params: &SimParams, rng: &mut StreamRng) -> BenefitTable {
    let n_t = params.n_treatments();
    let columns = (0..params.n_active_stages())
        .map(|stage| {
            let ranks = group_ranking(params, stage);
            (1..=n_t)
                .map(|t| {
                    let r = usize::from(ranks[params.true_group(t) - 1]) - 1;
                    let z: f64 = rng.sample(StandardNormal);
                    params.atb_means[r] + params.atb_sds[r] * z
                })
                .collect()
        })
        .collect();
    BenefitTable::from_columns(columns).expect("sampled benefits are finite")
}

/// One physiotherapist's opinion of every treatment at one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceivedBenefits {
    pub episode: u64,
    pub stage: Stage,
    pub values: Vec<f64>,
}

/// Mean and standard deviation of a perceived benefit given its actual benefit.
pub fn perceived_conditional(params: &SimParams, rank: u8, atb: f64) -> (f64, f64) {
    let r = usize::from(rank) - 1;
    let rho = params.perceived_correlations[r];
    let sd_p = params.perceived_sds[r];
    let mean = params.perceived_means[r]
        + rho * (sd_p / params.atb_sds[r]) * (atb - params.atb_means[r]);
    let sd = match params.conditional_sd_form {
        ConditionalSdForm::Standard => sd_p * (1.0 - rho * rho).sqrt(),
        ConditionalSdForm::Literal => ((1.0 - rho * rho) * sd_p).sqrt(),
    };
    (mean, sd)
}

pub fn sample_perceived_benefits(
    params: &SimParams,
    rng: &mut StreamRng,
    atb_column: &[f64],
    stage: Stage,
    episode: u64,
) -> PerceivedBenefits {
    let ranks = group_ranking(params, stage);
    let values = atb_column
        .iter()
        .enumerate()
        .map(|(i, &atb)| {
            let rank = ranks[params.true_group(i + 1) - 1];
            let (mean, sd) = perceived_conditional(params, rank, atb);
            let z: f64 = rng.sample(StandardNormal);
            mean + sd * z
        })
        .collect();
    PerceivedBenefits {
        episode,
        stage,
        values,
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Probability of improving by one stage given the aggregate benefit of the
/// week's plan.
pub fn transition_probability(params: &SimParams, aggregate_benefit: f64) -> Result<f64> {
    if !aggregate_benefit.is_finite() {
        return Err(Error::Domain(format!(
            "aggregate benefit {aggregate_benefit} is not finite"
        )));
    }
    let x = match params.transition_form {
        TransitionForm::Calibrated => {
            params.transition_slope * aggregate_benefit - params.transition_intercept
        }
        TransitionForm::Literal => {
            params.transition_slope - params.transition_intercept * aggregate_benefit
        }
    };
    Ok(params.transition_cap * logistic(x))
}

pub fn sample_initial_stage(params: &SimParams, rng: &mut StreamRng) -> Stage {
    WeightedIndex::new(&params.initial_stage_mass)
        .expect("validated stage mass")
        .sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientState {
    pub stage: Stage,
    pub weeks_remaining: usize,
}

/// An immutable simulation world: parameters plus one benefit realization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct World {
    pub params: SimParams,
    pub benefits: BenefitTable,
}

impl World {
    pub fn new(params: SimParams, benefits: BenefitTable) -> Result<Self> {
        params.validate()?;
        if benefits.n_treatments() != params.n_treatments()
            || benefits.n_stages() != params.n_active_stages()
        {
            return Err(Error::InvalidParams(
                "benefit table shape does not match parameters".into(),
            ));
        }
        Ok(Self { params, benefits })
    }

    /// Draws a fresh benefit table from the `atb` stream of `streams`.
    pub fn sample(params: SimParams, streams: &Streams) -> Result<Self> {
        params.validate()?;
        let benefits = sample_actual_benefits(&params, &mut streams.rng(rng::ATB, &[]));
        Self::new(params, benefits)
    }

    pub fn plan_probability(&self, stage: Stage, plan: &Plan) -> f64 {
        transition_probability(&self.params, self.benefits.aggregate(stage, plan))
            .expect("finite benefits")
    }

    /// Perceived benefits for `episode` at `stage`; the same draw every time
    /// it is requested from the same episode streams.
    pub fn perceived(&self, episode: &EpisodeStreams, stage: Stage) -> PerceivedBenefits {
        let mut r = episode.streams.rng(rng::PERCEIVED, &[stage as u64]);
        sample_perceived_benefits(
            &self.params,
            &mut r,
            self.benefits.column(stage),
            stage,
            episode.id,
        )
    }
}

/// Advances one week. Returns the next state and whether the patient improved.
pub fn step(
    world: &World,
    state: PatientState,
    plan: &Plan,
    rng: &mut StreamRng,
) -> Result<(PatientState, bool)> {
    if state.stage >= world.params.terminal_stage() {
        return Err(Error::Domain("cannot step from the terminal stage".into()));
    }
    if state.weeks_remaining == 0 {
        return Err(Error::Domain("no weeks remaining".into()));
    }
    let p = world.plan_probability(state.stage, plan);
    let improved = rng.gen::<f64>() < p;
    Ok((
        PatientState {
            stage: state.stage + usize::from(improved),
            weeks_remaining: state.weeks_remaining - 1,
        },
        improved,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekRecord {
    pub stage: Stage,
    pub weeks_remaining: usize,
    pub plan: Plan,
    pub reward: f64,
    pub next_stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: u64,
    pub initial_stage: Stage,
    pub records: Vec<WeekRecord>,
}

impl Trajectory {
    pub fn final_stage(&self) -> Stage {
        self.records
            .last()
            .map_or(self.initial_stage, |r| r.next_stage)
    }

    /// Undiscounted return.
    pub fn episode_return(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }
}

/// What a policy sees when asked for a weekly plan.
pub struct Situation<'a> {
    pub episode: u64,
    pub stage: Stage,
    pub weeks_remaining: usize,
    pub perceived: &'a PerceivedBenefits,
    pub world: &'a World,
}

pub trait Policy: Sync {
    fn select(&self, situation: &Situation<'_>, rng: &mut StreamRng) -> Plan;

    /// True when the plan depends only on the stage and the perceived
    /// benefits, never on the week or the policy's random stream.
    fn fixed_within_stage(&self) -> bool {
        false
    }

    /// True when the plan depends only on the stage, so one evaluation per
    /// stage describes every patient.
    fn stage_invariant(&self) -> bool {
        false
    }
}

/// Random streams owned by one episode.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeStreams {
    pub id: u64,
    streams: Streams,
}

impl EpisodeStreams {
    pub fn new(root: &Streams, id: u64) -> Self {
        Self {
            id,
            streams: root.child("episode", &[id]),
        }
    }

    pub fn initial_stage(&self, params: &SimParams) -> Stage {
        sample_initial_stage(params, &mut self.streams.rng(rng::INIT, &[]))
    }

    pub fn transitions(&self) -> StreamRng {
        self.streams.rng(rng::TRANSITION, &[])
    }

    pub fn policy(&self) -> StreamRng {
        self.streams.rng(rng::POLICY, &[])
    }
}

/// Runs one patient from a sampled initial stage until recovery or until the
/// weekly budget runs out. Perceived benefits are drawn on first entry to a
/// stage and kept while the patient stays there.
pub fn run_episode(
    policy: &dyn Policy,
    world: &World,
    episode: &EpisodeStreams,
) -> Result<Trajectory> {
    run_episode_with(policy, world, episode, |stage| {
        Cow::Owned(world.perceived(episode, stage))
    })
}

/// As [`run_episode`], with perceived benefits supplied by the caller (for
/// instance from a cache of pre-drawn evaluation patients).
pub fn run_episode_with<'a, F>(
    policy: &dyn Policy,
    world: &World,
    episode: &EpisodeStreams,
    perceived_at: F,
) -> Result<Trajectory>
where
    F: Fn(Stage) -> Cow<'a, PerceivedBenefits>,
{
    let params = &world.params;
    let initial_stage = episode.initial_stage(params);
    let mut state = PatientState {
        stage: initial_stage,
        weeks_remaining: max_weeks(params, initial_stage)?,
    };
    let mut transitions = episode.transitions();
    let mut policy_rng = episode.policy();
    let mut perceived = perceived_at(state.stage);
    let mut records = Vec::with_capacity(state.weeks_remaining);

    while state.stage < params.terminal_stage() && state.weeks_remaining > 0 {
        if perceived.stage != state.stage {
            perceived = perceived_at(state.stage);
        }
        let plan = policy.select(
            &Situation {
                episode: episode.id,
                stage: state.stage,
                weeks_remaining: state.weeks_remaining,
                perceived: &perceived,
                world,
            },
            &mut policy_rng,
        );
        plan.validate(params)?;
        let (next, _) = step(world, state, &plan, &mut transitions)?;
        records.push(WeekRecord {
            stage: state.stage,
            weeks_remaining: state.weeks_remaining,
            plan,
            reward: 0.0,
            next_stage: next.stage,
        });
        state = next;
    }
    if let Some(last) = records.last_mut() {
        last.reward = last.next_stage as f64;
    }
    Ok(Trajectory {
        episode: episode.id,
        initial_stage,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn params() -> SimParams {
        SimParams::default()
    }

    #[test]
    fn max_weeks_examples() {
        let p = params();
        assert_eq!(max_weeks(&p, 0).unwrap(), 13);
        assert_eq!(max_weeks(&p, 7).unwrap(), 5);
        assert_eq!(max_weeks(&p, 10).unwrap(), 1);
        assert!(max_weeks(&p, 11).is_err());
    }

    #[test]
    fn ranking_examples() {
        let p = params();
        let r4 = group_ranking(&p, 4);
        assert_eq!(r4, vec![3, 3, 3, 2, 1, 2, 3, 3, 3, 3, 3]);
        let r0 = group_ranking(&p, 0);
        assert_eq!(r0, vec![1, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3]);
        let r10 = group_ranking(&p, 10);
        assert_eq!(r10, vec![3, 3, 3, 3, 3, 3, 3, 3, 2, 2, 1]);
        for s in 0..11 {
            let r = group_ranking(&p, s);
            assert_eq!(r.iter().filter(|&&x| x == 1).count(), 1);
            assert_eq!(r.iter().filter(|&&x| x == 2).count(), 2);
            assert_eq!(r[s], 1);
        }
    }

    #[test]
    fn rank_two_benefit_mean() {
        let p = params();
        let mut rng = StreamRng::seed_from_u64(11);
        let mut total = 0.0;
        let mut n = 0usize;
        while n < 10_000 {
            let table = sample_actual_benefits(&p, &mut rng);
            for s in 0..11 {
                let ranks = group_ranking(&p, s);
                for t in 1..=110 {
                    if ranks[p.true_group(t) - 1] == 2 && n < 10_000 {
                        total += table.get(t, s);
                        n += 1;
                    }
                }
            }
        }
        assert!((total / n as f64 - 5.5).abs() < 0.05);
    }

    #[test]
    fn perceived_conditional_examples() {
        let p = params();
        let (m1, _) = perceived_conditional(&p, 1, 7.0);
        assert!((m1 - 7.0).abs() < 1e-12);
        let (m3, _) = perceived_conditional(&p, 3, 5.5);
        assert!((m3 - 4.875).abs() < 1e-12);
        let (_, sd2) = perceived_conditional(&p, 2, 0.0);
        assert!((sd2 - 1.5 * (1.0f64 - 0.49).sqrt()).abs() < 1e-12);
        assert!((sd2 - 1.0712).abs() < 1e-4);
    }

    #[test]
    fn transition_examples() {
        let p = params();
        let mid = p.transition_intercept / p.transition_slope;
        assert!((mid - 57.684).abs() < 1e-3);
        assert!((transition_probability(&p, mid).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let p0 = transition_probability(&p, 0.0).unwrap();
        assert!((p0 - 9.2e-7).abs() < 0.05e-7, "{p0}");
        let hi = transition_probability(&p, 1e6).unwrap();
        assert!(hi <= 2.0 / 3.0);
        assert!(transition_probability(&p, f64::NAN).is_err());
        assert!(transition_probability(&p, f64::INFINITY).is_err());
    }

    #[test]
    fn literal_transition_collapses() {
        let p = SimParams {
            transition_form: TransitionForm::Literal,
            ..params()
        };
        // With the literal exponent any positive aggregate is hopeless.
        let v = transition_probability(&p, 50.0).unwrap();
        assert!(v < 1e-200);
    }

    #[test]
    fn initial_stage_frequencies() {
        let p = params();
        let mut rng = StreamRng::seed_from_u64(5);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| sample_initial_stage(&p, &mut rng) == 0)
            .count();
        assert!((zeros as f64 / n as f64 - 2.0 / 7.0).abs() < 0.005);
        assert!((p.initial_stage_mass[6] - 1.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn step_rules() {
        let world = World::sample(params(), &Streams::new(3)).unwrap();
        let low = Plan::new((101..=108).collect());
        let mut rng = StreamRng::seed_from_u64(1);
        // Stage 0 benefits of group 11 sit far below the logistic midpoint.
        assert!(world.benefits.aggregate(0, &low) < 40.0);
        let mut ups = 0;
        for _ in 0..1000 {
            let (next, up) = step(
                &world,
                PatientState { stage: 0, weeks_remaining: 1 },
                &low,
                &mut rng,
            )
            .unwrap();
            assert_eq!(next.weeks_remaining, 0);
            assert!(next.stage == 0 || next.stage == 1);
            ups += usize::from(up);
        }
        assert!(ups <= 2);
        assert!(step(
            &world,
            PatientState { stage: 11, weeks_remaining: 3 },
            &low,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn plan_validation() {
        let p = params();
        assert!(Plan::new(vec![1, 2, 3]).validate(&p).is_err());
        assert!(Plan::new(vec![1, 1, 2, 3, 4, 5, 6, 7]).validate(&p).is_err());
        assert!(Plan::new(vec![0, 1, 2, 3, 4, 5, 6, 7]).validate(&p).is_err());
        assert!(Plan::new(vec![8, 1, 2, 3, 4, 5, 6, 7]).validate(&p).is_ok());
    }
}
