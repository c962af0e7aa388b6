//! Three actions, one decision stage, two picks per decision. Compares the
//! split-row fit with a joint fit on the whole pair.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fqi::{fit_fqi, FeatureEncoder, FitStatus, FqiConfig, FqiRow};
use crate::par;
use crate::rng::{self, Streams};

/// Success probability for a pair of picks, `1` best, `2` middle, `3` worst.
pub fn oracle_success_probability(picks: [usize; 2]) -> Result<f64> {
    let mut counts = [0usize; 3];
    for a in picks {
        if !(1..=3).contains(&a) {
            return Err(Error::Domain(format!("action {a} out of range")));
        }
        counts[a - 1] += 1;
    }
    Ok(match counts {
        [2, 0, 0] => 0.8,
        [1, 1, 0] => 0.7,
        [1, 0, 1] => 0.55,
        [0, 2, 0] => 0.6,
        [0, 1, 1] => 0.45,
        [0, 0, 2] => 0.3,
        _ => unreachable!("two picks"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub n_obs: usize,
    pub joint_status: FitStatus,
    pub split_status: FitStatus,
    /// Action values (best, middle, worst) under each fit, up to a shared
    /// offset.
    pub joint_values: Vec<f64>,
    pub split_values: Vec<f64>,
    /// Actions ordered from highest to lowest value.
    pub joint_ranking: Vec<usize>,
    pub split_ranking: Vec<usize>,
    pub agree: bool,
    /// Both rankings equal best > middle > worst.
    pub correct: bool,
}

fn ranking(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=values.len()).collect();
    order.sort_by(|&a, &b| values[b - 1].total_cmp(&values[a - 1]).then(a.cmp(&b)));
    order
}

/// Draws `n_obs` decisions with both picks uniform and independent, then fits
/// both models with one week remaining and the success stage as reward.
pub fn run_oracle(n_obs: usize, streams: &Streams, fqi: &FqiConfig) -> Result<OracleReport> {
    if n_obs == 0 {
        return Err(Error::InvalidParams("oracle needs observations".into()));
    }
    let mut rng = streams.rng("oracle", &[]);
    let mut joint = Vec::with_capacity(n_obs);
    let mut split = Vec::with_capacity(2 * n_obs);
    for _ in 0..n_obs {
        let picks = [rng.gen_range(1..=3), rng.gen_range(1..=3)];
        let success = rng.gen::<f64>() < oracle_success_probability(picks)?;
        let next_stage = usize::from(success);
        let row = |labels: Vec<usize>| FqiRow {
            stage: 0,
            weeks_remaining: 1,
            labels,
            reward: next_stage as f64,
            next_stage,
        };
        joint.push(row(picks.to_vec()));
        split.extend(picks.iter().map(|&a| row(vec![a])));
    }
    let joint_model = fit_fqi(&joint, &FeatureEncoder::joint_with_capacity(1, 2, vec![2; 3]), fqi)?;
    let split_model = fit_fqi(&split, &FeatureEncoder::split(3, 1), fqi)?;
    let joint_values = (1..=3)
        .map(|a| joint_model.predict(0, &[a], 1.0))
        .collect::<Result<Vec<_>>>()?;
    let split_values = (1..=3)
        .map(|a| split_model.predict(0, &[a], 1.0))
        .collect::<Result<Vec<_>>>()?;
    let joint_ranking = ranking(&joint_values);
    let split_ranking = ranking(&split_values);
    let agree = joint_ranking == split_ranking;
    Ok(OracleReport {
        n_obs,
        joint_status: joint_model.status(),
        split_status: split_model.status(),
        correct: agree && joint_ranking == [1, 2, 3],
        joint_values,
        split_values,
        joint_ranking,
        split_ranking,
        agree,
    })
}

/// Independent repetitions, each on its own substream.
pub fn run_oracle_repetitions(
    repetitions: usize,
    n_obs: usize,
    streams: &Streams,
    fqi: &FqiConfig,
) -> Result<Vec<OracleReport>> {
    par::map_range(repetitions, |i| run_oracle(n_obs, &streams.child(rng::TRAIN, &[i as u64]), fqi))
        .into_iter()
        .collect()
}
