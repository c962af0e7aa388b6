use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{evaluate_policy, gap_closure, Agent, EvalCohort, ExperimentPlan, PolicyEvaluation, Summary};
use crate::cohort::{split_rows, Cohort, SelectionStats};
use crate::config::Config;
use crate::error::Result;
use crate::fqi::{fit_fqi, q_values, rows_from_split, FeatureEncoder, FitStatus, QModel};
use crate::grouping::{
    build_cooccurrence, cluster_kmeans, dkbg_assignment, partition_agreement, train_glove,
    Agreement, CooccurrenceMatrix, EmbeddingMatrix, GroupAssignment, KMeansFit,
};
use crate::par;
use crate::policy::{OptimalPolicy, PhysioPolicy, PolicyKind, PolicySpec, PopularPolicy};
use crate::rng::{self, Streams};
use crate::sim::{max_weeks, World};

/// One policy evaluated in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub replicate: usize,
    pub agent: Option<Agent>,
    pub policy: PolicyKind,
    pub weight: Option<f64>,
    pub train_size: usize,
    pub evaluation: PolicyEvaluation,
}

/// One FQI fit in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub replicate: usize,
    pub agent: Agent,
    pub train_size: usize,
    pub status: FitStatus,
    pub iterations: usize,
    pub rank: usize,
    pub n_features: usize,
    /// Group argmax identical for every weeks-remaining value at every stage.
    pub weeks_invariant: bool,
    pub max_ssavc: Option<f64>,
    /// Agreement of the learned grouping with the true groups.
    pub agreement: Agreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub plan: ExperimentPlan,
    pub config: Config,
    /// Policies that do not learn are evaluated once, on the shared patients.
    pub pt: PolicyEvaluation,
    pub optimal: PolicyEvaluation,
    pub records: Vec<EvalRecord>,
    pub fits: Vec<FitRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub pt_mean: f64,
    pub optimal_mean: f64,
    pub train_size: usize,
    pub weight: f64,
    pub agent_means: BTreeMap<Agent, f64>,
    pub mixed_means: BTreeMap<Agent, f64>,
    pub gap_closure: BTreeMap<Agent, f64>,
    pub popular_mean: Option<f64>,
    pub diverged_fits: usize,
    pub weeks_violations: usize,
}

impl SweepReport {
    /// Per-replicate returns for matching records.
    pub fn returns(
        &self,
        agent: Option<Agent>,
        policy: PolicyKind,
        weight: Option<f64>,
        train_size: usize,
    ) -> Vec<f64> {
        self.matching(agent, policy, weight, train_size)
            .map(|r| r.evaluation.mean_return)
            .collect()
    }

    pub fn matching(
        &self,
        agent: Option<Agent>,
        policy: PolicyKind,
        weight: Option<f64>,
        train_size: usize,
    ) -> impl Iterator<Item = &EvalRecord> {
        self.records.iter().filter(move |r| {
            r.agent == agent && r.policy == policy && r.weight == weight && r.train_size == train_size
        })
    }

    pub fn summary(
        &self,
        agent: Option<Agent>,
        policy: PolicyKind,
        weight: Option<f64>,
        train_size: usize,
    ) -> Option<Summary> {
        Summary::of(&self.returns(agent, policy, weight, train_size))
    }

    pub fn headline(&self) -> Headline {
        let size = self.plan.max_train_size();
        let w = self.plan.cross_section_weight;
        let mean = |a, k, wt| self.summary(Some(a), k, wt, size).map(|s| s.mean);
        let mut agent_means = BTreeMap::new();
        let mut mixed_means = BTreeMap::new();
        let mut gaps = BTreeMap::new();
        for &a in &self.plan.agents {
            if let Some(m) = mean(a, PolicyKind::Agent, None) {
                agent_means.insert(a, m);
            }
            if let Some(m) = mean(a, PolicyKind::Mixed, Some(w)) {
                mixed_means.insert(a, m);
                gaps.insert(a, gap_closure(m, self.pt.mean_return, self.optimal.mean_return));
            }
        }
        Headline {
            pt_mean: self.pt.mean_return,
            optimal_mean: self.optimal.mean_return,
            train_size: size,
            weight: w,
            agent_means,
            mixed_means,
            gap_closure: gaps,
            popular_mean: self.summary(None, PolicyKind::Popular, None, size).map(|s| s.mean),
            diverged_fits: self.fits.iter().filter(|f| f.status != FitStatus::Converged).count(),
            weeks_violations: self.fits.iter().filter(|f| !f.weeks_invariant).count(),
        }
    }
}

/// Intermediate products of learning a TEBG grouping.
pub struct TebgFit {
    pub cooccurrence: CooccurrenceMatrix,
    pub embedding: EmbeddingMatrix,
    pub kmeans: KMeansFit,
}

/// Learns a TEBG grouping from a cohort's plan co-occurrences. `path` selects
/// the embedding and clustering substreams.
pub fn fit_tebg(cohort: &Cohort, config: &Config, streams: &Streams, path: &[u64]) -> Result<TebgFit> {
    let cooccurrence = build_cooccurrence(cohort, config.sim.n_treatments());
    let embedding = train_glove(&cooccurrence, &config.glove, &mut streams.rng(rng::EMBED, path))?;
    let kmeans = cluster_kmeans(&embedding.vectors(), &config.kmeans, &streams.child(rng::KMEANS, path))?;
    Ok(TebgFit { cooccurrence, embedding, kmeans })
}

/// Fits the grouped split-row model on a cohort.
pub fn fit_grouped(
    cohort: &Cohort,
    groups: &GroupAssignment,
    config: &Config,
) -> Result<(QModel, SelectionStats)> {
    let rows = rows_from_split(&split_rows(cohort, groups)?);
    let encoder = FeatureEncoder::split(groups.k(), config.sim.n_active_stages());
    let model = fit_fqi(&rows, &encoder, &config.fqi)?;
    let stats = SelectionStats::from_cohort(cohort, groups, config.sim.n_active_stages())?;
    Ok((model, stats))
}

/// Whether the best group at each stage is the same for every weeks value a
/// patient can have there.
pub fn weeks_invariant(model: &QModel, config: &Config) -> Result<bool> {
    let longest = max_weeks(&config.sim, 0)?;
    for s in 0..config.sim.n_active_stages() {
        let argmax = |w: usize| {
            let q = q_values(model, s, w as f64);
            (0..q.len()).fold(0, |b, i| if q[i] > q[b] { i } else { b })
        };
        let first = argmax(1);
        if (2..=longest).any(|w| argmax(w) != first) {
            return Ok(false);
        }
    }
    Ok(true)
}

struct ReplicateOutput {
    records: Vec<EvalRecord>,
    fits: Vec<FitRecord>,
}

fn run_replicate(
    r: usize,
    plan: &ExperimentPlan,
    config: &Config,
    world: &World,
    eval: &EvalCohort,
    streams: &Streams,
) -> Result<ReplicateOutput> {
    let params = &config.sim;
    let truth = GroupAssignment::truth(params);
    let dkbg = dkbg_assignment(params);
    let train = streams.child(rng::TRAIN, &[r as u64]);
    let mut cohort = Cohort::new("shared", "pt");
    let mut out = ReplicateOutput { records: Vec::new(), fits: Vec::new() };

    for &size in &plan.train_sizes {
        cohort.grow(size - cohort.len(), &PhysioPolicy, world, &train)?;
        let record = |agent, policy, weight, evaluation| EvalRecord {
            replicate: r,
            agent,
            policy,
            weight,
            train_size: size,
            evaluation,
        };

        for &agent in &plan.agents {
            let groups = match agent {
                Agent::Dkbg => dkbg.clone(),
                Agent::Tebg => fit_tebg(&cohort, config, streams, &[r as u64, size as u64])?.kmeans.assignment,
            };
            let (model, stats) = fit_grouped(&cohort, &groups, config)?;
            let invariant = weeks_invariant(&model, config)?;
            if !invariant {
                tracing::warn!(replicate = r, %agent, size, "best group changes with weeks remaining");
            }
            let mut fit = FitRecord {
                replicate: r,
                agent,
                train_size: size,
                status: model.status(),
                iterations: model.diagnostics.iterations,
                rank: model.diagnostics.rank,
                n_features: model.encoder.n_features(),
                weeks_invariant: invariant,
                max_ssavc: None,
                agreement: partition_agreement(&groups, &truth)?,
            };
            if model.status() != FitStatus::Converged {
                tracing::warn!(replicate = r, %agent, size, status = ?model.status(), "fit did not converge");
                out.fits.push(fit);
                continue;
            }
            let learned = Some((&model, &stats, &groups));
            let agent_policy = PolicySpec::new(PolicyKind::Agent).build(params, learned, None)?;
            out.records.push(record(
                Some(agent),
                PolicyKind::Agent,
                None,
                evaluate_policy(agent_policy.as_ref(), world, eval)?,
            ));
            let table = crate::policy::SsavcTable::build(&model, &stats, &groups, params, Default::default())?;
            fit.max_ssavc = Some(table.max_value());
            let mixed = par::map_slice(&plan.weights, |&w| -> Result<EvalRecord> {
                let policy = PolicySpec::mixed(w).build(params, learned, None)?;
                Ok(record(Some(agent), PolicyKind::Mixed, Some(w), evaluate_policy(policy.as_ref(), world, eval)?))
            });
            for m in mixed {
                out.records.push(m?);
            }
            out.fits.push(fit);
        }

        if plan.include_popular {
            let stats = SelectionStats::from_cohort(&cohort, &dkbg, params.n_active_stages())?;
            let popular = PopularPolicy::new(&stats, params)?;
            out.records.push(record(None, PolicyKind::Popular, None, evaluate_policy(&popular, world, eval)?));
        }
    }
    Ok(out)
}

/// Runs every replicate of `plan`. One benefit realization and one set of
/// evaluation patients are shared by all replicates; only the training data
/// change. Non-converged fits are recorded and skipped.
pub fn run_full_sweep(plan: &ExperimentPlan, config: &Config) -> Result<SweepReport> {
    plan.validate()?;
    config.validate()?;
    let streams = Streams::new(plan.seed);
    let world = World::sample(config.sim.clone(), &streams)?;
    let eval = EvalCohort::draw(&world, &streams.child(rng::EVAL, &[]), plan.eval_patients);
    let pt = evaluate_policy(&PhysioPolicy, &world, &eval)?;
    let optimal = evaluate_policy(&OptimalPolicy, &world, &eval)?;
    tracing::info!(pt = pt.mean_return, optimal = optimal.mean_return, "baselines evaluated");

    let outputs = par::map_range(plan.replicates, |r| {
        let out = run_replicate(r, plan, config, &world, &eval, &streams);
        tracing::debug!(replicate = r, "replicate finished");
        out
    });
    let mut records = Vec::new();
    let mut fits = Vec::new();
    for o in outputs {
        let o = o?;
        records.extend(o.records);
        fits.extend(o.fits);
    }
    Ok(SweepReport {
        plan: plan.clone(),
        config: config.clone(),
        pt,
        optimal,
        records,
        fits,
    })
}
