//! Training datasets: behaviour-policy cohorts, the per-action split-row
//! transform and per-stage selection statistics.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::GroupAssignment;
use crate::par;
use crate::rng::Streams;
use crate::sim::{run_episode, EpisodeStreams, Plan, Policy, Stage, Trajectory, WeekRecord, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub world_id: String,
    pub policy: String,
    pub trajectories: Vec<Trajectory>,
}

impl Cohort {
    pub fn new(world_id: impl Into<String>, policy: impl Into<String>) -> Self {
        Self {
            world_id: world_id.into(),
            policy: policy.into(),
            trajectories: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_records(&self) -> usize {
        self.trajectories.iter().map(|t| t.records.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &WeekRecord> {
        self.trajectories.iter().flat_map(|t| t.records.iter())
    }

    /// The first `n` patients.
    pub fn prefix(&self, n: usize) -> Cohort {
        Cohort {
            world_id: self.world_id.clone(),
            policy: self.policy.clone(),
            trajectories: self.trajectories[..n.min(self.len())].to_vec(),
        }
    }

    /// Appends `n` episodes. Episode `i` always uses substream `i` of
    /// `streams`, so growing in steps reproduces a single large draw.
    pub fn grow(
        &mut self,
        n: usize,
        policy: &dyn Policy,
        world: &World,
        streams: &Streams,
    ) -> Result<()> {
        let start = self.len() as u64;
        let new = par::map_range(n, |i| {
            run_episode(policy, world, &EpisodeStreams::new(streams, start + i as u64))
        });
        for t in new {
            self.trajectories.push(t?);
        }
        Ok(())
    }
}

pub fn generate_cohort(
    n_patients: usize,
    policy: &dyn Policy,
    policy_name: &str,
    world: &World,
    world_id: &str,
    streams: &Streams,
) -> Result<Cohort> {
    if n_patients == 0 {
        return Err(Error::InvalidParams("cohort needs at least one patient".into()));
    }
    let mut c = Cohort::new(world_id, policy_name);
    c.grow(n_patients, policy, world, streams)?;
    Ok(c)
}

/// One single-action row exploded from a weekly record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub stage: Stage,
    pub weeks_remaining: usize,
    pub action_group: usize,
    pub reward: f64,
    pub next_stage: Stage,
}

/// Explodes every weekly record into one row per planned treatment, carrying
/// the treatment's group label. Rows are ordered by episode, week and
/// ascending treatment id.
pub fn split_rows(cohort: &Cohort, groups: &GroupAssignment) -> Result<Vec<SplitRow>> {
    let mut out = Vec::with_capacity(cohort.n_records() * 8);
    for rec in cohort.records() {
        for &t in rec.plan.treatments() {
            out.push(SplitRow {
                stage: rec.stage,
                weeks_remaining: rec.weeks_remaining,
                action_group: groups.label(t)?,
                reward: rec.reward,
                next_stage: rec.next_stage,
            });
        }
    }
    Ok(out)
}

/// Per-stage selection counts of treatments and of groups.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStats {
    n_treatments: usize,
    k: usize,
    labels: Vec<usize>,
    counts: Vec<Vec<u64>>,
    group_counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageStatsRecord {
    treatment_counts: Vec<u64>,
    group_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StatsRecord {
    labels: Vec<usize>,
    stages: BTreeMap<String, StageStatsRecord>,
}

impl SelectionStats {
    pub fn from_cohort(cohort: &Cohort, groups: &GroupAssignment, n_stages: usize) -> Result<Self> {
        let n_t = groups.n_treatments();
        let k = groups.k();
        let mut counts = vec![vec![0u64; n_t]; n_stages];
        let mut group_counts = vec![vec![0u64; k]; n_stages];
        for rec in cohort.records() {
            for &t in rec.plan.treatments() {
                let g = groups.label(t)?;
                counts[rec.stage][t - 1] += 1;
                group_counts[rec.stage][g - 1] += 1;
            }
        }
        Ok(Self {
            n_treatments: n_t,
            k,
            labels: groups.labels().to_vec(),
            counts,
            group_counts,
        })
    }

    pub fn n_stages(&self) -> usize {
        self.counts.len()
    }

    pub fn n_treatments(&self) -> usize {
        self.n_treatments
    }

    pub fn count(&self, stage: Stage, treatment: usize) -> u64 {
        self.counts[stage][treatment - 1]
    }

    pub fn stage_counts(&self, stage: Stage) -> &[u64] {
        &self.counts[stage]
    }

    pub fn group_count(&self, stage: Stage, group: usize) -> u64 {
        self.group_counts[stage][group - 1]
    }

    /// Share of the group's selections at `stage` that went to `treatment`;
    /// zero when the group was never selected there.
    pub fn proportion(&self, stage: Stage, treatment: usize) -> f64 {
        let g = self.labels[treatment - 1];
        let total = self.group_counts[stage][g - 1];
        if total == 0 {
            0.0
        } else {
            self.counts[stage][treatment - 1] as f64 / total as f64
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let stages = (0..self.n_stages())
            .map(|s| {
                (
                    s.to_string(),
                    StageStatsRecord {
                        treatment_counts: self.counts[s].clone(),
                        group_counts: self.group_counts[s].clone(),
                    },
                )
            })
            .collect();
        Ok(serde_json::to_string_pretty(&StatsRecord {
            labels: self.labels.clone(),
            stages,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: StatsRecord = serde_json::from_str(text)?;
        let n_stages = rec.stages.len();
        let k = rec.labels.iter().copied().max().unwrap_or(0);
        let mut counts = Vec::with_capacity(n_stages);
        let mut group_counts = Vec::with_capacity(n_stages);
        for s in 0..n_stages {
            let st = rec
                .stages
                .get(&s.to_string())
                .ok_or_else(|| Error::InvalidParams(format!("missing stage {s}")))?;
            counts.push(st.treatment_counts.clone());
            group_counts.push(st.group_counts.clone());
        }
        Ok(Self {
            n_treatments: rec.labels.len(),
            k,
            labels: rec.labels,
            counts,
            group_counts,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

pub fn selection_proportions(
    cohort: &Cohort,
    groups: &GroupAssignment,
    n_stages: usize,
    stage: Stage,
    treatment: usize,
) -> Result<f64> {
    Ok(SelectionStats::from_cohort(cohort, groups, n_stages)?.proportion(stage, treatment))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes the cohort as one CSV row per week.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, plan_size: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["episode_id".to_string(), "week_index".into(), "stage".into(), "weeks_remaining".into()];
    header.extend((1..=plan_size).map(|i| format!("t{i}")));
    header.extend(["reward".to_string(), "next_stage".into()]);
    w.write_record(&header)?;
    for traj in &cohort.trajectories {
        for (week, rec) in traj.records.iter().enumerate() {
            let mut row = vec![
                traj.episode.to_string(),
                week.to_string(),
                rec.stage.to_string(),
                rec.weeks_remaining.to_string(),
            ];
            row.extend(rec.plan.treatments().iter().map(usize::to_string));
            row.push(format!("{}", rec.reward));
            row.push(rec.next_stage.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<cohort csv>", e))?;
    Ok(())
}

pub fn save_cohort_csv(cohort: &Cohort, plan_size: usize, path: &Path) -> Result<()> {
    write_cohort_csv(cohort, plan_size, create(path)?)
}

pub fn read_cohort_csv<R: Read>(input: R, world_id: &str, policy: &str) -> Result<Cohort> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let plan_size = headers.iter().filter(|h| h.starts_with('t') && h[1..].parse::<usize>().is_ok()).count();
    let mut cohort = Cohort::new(world_id, policy);
    let parse = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::InvalidParams(format!("bad integer field {s:?}")))
    };
    for row in rdr.records() {
        let row = row?;
        let episode = parse(&row[0])? as u64;
        let stage = parse(&row[2])?;
        let weeks_remaining = parse(&row[3])?;
        let plan = (0..plan_size)
            .map(|i| parse(&row[4 + i]))
            .collect::<Result<Vec<_>>>()?;
        let reward: f64 = row[4 + plan_size]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParams("bad reward".into()))?;
        let next_stage = parse(&row[5 + plan_size])?;
        let rec = WeekRecord {
            stage,
            weeks_remaining,
            plan: Plan::new(plan),
            reward,
            next_stage,
        };
        match cohort.trajectories.last_mut() {
            Some(t) if t.episode == episode => t.records.push(rec),
            _ => cohort.trajectories.push(Trajectory {
                episode,
                initial_stage: stage,
                records: vec![rec],
            }),
        }
    }
    Ok(cohort)
}

pub fn load_cohort_csv(path: &Path, world_id: &str, policy: &str) -> Result<Cohort> {
    read_cohort_csv(File::open(path).map_err(|e| Error::io(path, e))?, world_id, policy)
}

pub fn write_split_rows_csv<W: Write>(rows: &[SplitRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<split rows csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::{dkbg_assignment, GroupAssignment, Provenance};
    use crate::params::SimParams;

    fn record(stage: usize, weeks: usize, plan: Vec<usize>, reward: f64, next: usize) -> WeekRecord {
        WeekRecord {
            stage,
            weeks_remaining: weeks,
            plan: Plan::new(plan),
            reward,
            next_stage: next,
        }
    }

    fn single(records: Vec<WeekRecord>) -> Cohort {
        Cohort {
            world_id: "toy".into(),
            policy: "toy".into(),
            trajectories: vec![Trajectory {
                episode: 0,
                initial_stage: records[0].stage,
                records,
            }],
        }
    }

    #[test]
    fn table_two_example() {
        let cohort = single(vec![record(3, 2, vec![24, 26, 33, 34, 38, 39, 42, 50], 0.0, 3)]);
        let mut labels: Vec<usize> = (1..=110).map(|t| (t - 1) / 10 + 1).collect();
        // Table 2b mapping for the plan's treatments.
        for (t, g) in [(24, 3), (26, 3), (33, 4), (34, 4), (38, 4), (39, 4), (42, 5), (50, 5)] {
            labels[t - 1] = g;
        }
        let groups = GroupAssignment::new(labels, Provenance::Dkbg).unwrap();
        let rows = split_rows(&cohort, &groups).unwrap();
        assert_eq!(rows.len(), 8);
        let got: Vec<usize> = rows.iter().map(|r| r.action_group).collect();
        assert_eq!(got, vec![3, 3, 4, 4, 4, 4, 5, 5]);
        for r in &rows {
            assert_eq!((r.stage, r.weeks_remaining, r.reward, r.next_stage), (3, 2, 0.0, 3));
        }
    }

    #[test]
    fn identity_grouping_keeps_ids() {
        let cohort = single(vec![record(0, 13, vec![5, 1, 2, 3, 4, 6, 7, 110], 1.0, 1)]);
        let rows = split_rows(&cohort, &GroupAssignment::identity(110)).unwrap();
        let got: Vec<usize> = rows.iter().map(|r| r.action_group).collect();
        assert_eq!(got, vec![1, 2, 3, 4, 5, 6, 7, 110]);
    }

    #[test]
    fn missing_group_is_an_error() {
        let cohort = single(vec![record(0, 13, vec![1, 2, 3, 4, 5, 6, 7, 110], 1.0, 1)]);
        let short = GroupAssignment::identity(100);
        assert!(matches!(split_rows(&cohort, &short), Err(Error::UngroupedTreatment(110))));
    }

    #[test]
    fn proportions_on_toy_cohort() {
        let p = SimParams::default();
        let groups = dkbg_assignment(&p);
        // Twelve group-1 selections at stage 2, three of which are treatment 1.
        let mut recs = Vec::new();
        for week in 0..3 {
            recs.push(record(2, 10 - week, vec![1, 2, 3, 4, 20, 30, 40, 50], 0.0, 2));
        }
        let cohort = single(recs);
        let stats = SelectionStats::from_cohort(&cohort, &groups, 11).unwrap();
        assert_eq!(stats.group_count(2, 1), 12);
        assert!((stats.proportion(2, 1) - 0.25).abs() < 1e-15);
        assert_eq!(stats.proportion(2, 5), 0.0);
        assert_eq!(stats.proportion(2, 20), 1.0);
        assert_eq!(stats.proportion(5, 1), 0.0);

        let back = SelectionStats::from_json(&stats.to_json().unwrap()).unwrap();
        assert_eq!(back, stats);
    }

    #[test]
    fn csv_round_trip() {
        let cohort = Cohort {
            world_id: "w".into(),
            policy: "pt".into(),
            trajectories: vec![
                Trajectory {
                    episode: 0,
                    initial_stage: 3,
                    records: vec![
                        record(3, 2, vec![1, 2, 3, 4, 5, 6, 7, 8], 0.0, 3),
                        record(3, 1, vec![1, 2, 3, 4, 5, 6, 7, 8], 4.0, 4),
                    ],
                },
                Trajectory {
                    episode: 1,
                    initial_stage: 10,
                    records: vec![record(10, 1, vec![9, 2, 3, 4, 5, 6, 7, 8], 11.0, 11)],
                },
            ],
        };
        let mut buf = Vec::new();
        write_cohort_csv(&cohort, 8, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("episode_id,week_index,stage,weeks_remaining,t1,t2,t3,t4,t5,t6,t7,t8,reward,next_stage\n"));
        let back = read_cohort_csv(buf.as_slice(), "w", "pt").unwrap();
        assert_eq!(back, cohort);
    }
}
