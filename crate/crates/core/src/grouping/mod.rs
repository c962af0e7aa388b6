//! Treatment-to-group maps: the known domain grouping and the learned one
//! (co-occurrence embedding followed by K-means).

mod cooccur;
mod glove;
mod kmeans;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::SimParams;

pub use cooccur::{build_cooccurrence, write_cooccurrence_csv, CooccurrenceMatrix};
pub use glove::{glove_weight, train_glove, EmbeddingMatrix, GloveConfig};
pub use kmeans::{cluster_kmeans, lloyd, KMeansConfig, KMeansFit, LloydRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    True,
    Dkbg,
    Tebg,
    Identity,
}

/// Total map from treatments `1..=n` to group labels `1..=k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    labels: Vec<usize>,
    k: usize,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, serde_json::Value>,
}

impl GroupAssignment {
    /// `labels[t - 1]` is the group of treatment `t`. Every label in `1..=k`
    /// must be used.
    pub fn new(labels: Vec<usize>, provenance: Provenance) -> Result<Self> {
        let k = labels.iter().copied().max().unwrap_or(0);
        if labels.iter().any(|&l| l == 0) {
            return Err(Error::InvalidParams("group labels start at 1".into()));
        }
        let mut used = vec![false; k];
        for &l in &labels {
            used[l - 1] = true;
        }
        if let Some(missing) = used.iter().position(|u| !u) {
            return Err(Error::InvalidParams(format!(
                "group label {} is never used",
                missing + 1
            )));
        }
        Ok(Self {
            labels,
            k,
            provenance,
            parameters: BTreeMap::new(),
        })
    }

    pub fn n_treatments(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn label(&self, treatment: usize) -> Result<usize> {
        treatment
            .checked_sub(1)
            .and_then(|i| self.labels.get(i))
            .copied()
            .ok_or(Error::UngroupedTreatment(treatment))
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn members(&self, group: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == group)
            .map(|(i, _)| i + 1)
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l - 1] += 1;
        }
        sizes
    }

    /// Every treatment in its own group.
    pub fn identity(n_treatments: usize) -> Self {
        Self::new((1..=n_treatments).collect(), Provenance::Identity)
            .expect("identity labels are dense")
    }

    pub fn truth(params: &SimParams) -> Self {
        let labels = (1..=params.n_treatments())
            .map(|t| params.true_group(t))
            .collect();
        Self::new(labels, Provenance::True).expect("true groups are dense")
    }

    pub fn with_parameter(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.parameters.insert(key.to_string(), value.into());
        self
    }
}

/// The domain-knowledge grouping: consecutive blocks of ten treatments.
pub fn dkbg_assignment(params: &SimParams) -> GroupAssignment {
    let mut g = GroupAssignment::truth(params);
    g.provenance = Provenance::Dkbg;
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// Smaller of the two directional purities, so the score is symmetric.
    pub purity: f64,
    pub adjusted_rand: f64,
}

fn contingency(a: &[usize], b: &[usize]) -> BTreeMap<(usize, usize), u64> {
    let mut table = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0) += 1;
    }
    table
}

fn directional_purity(table: &BTreeMap<(usize, usize), u64>, n: usize) -> f64 {
    let mut best: BTreeMap<usize, u64> = BTreeMap::new();
    for (&(_, cluster), &count) in table {
        let e = best.entry(cluster).or_insert(0);
        *e = (*e).max(count);
    }
    best.values().sum::<u64>() as f64 / n as f64
}

fn choose2(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

pub fn partition_agreement(a: &GroupAssignment, b: &GroupAssignment) -> Result<Agreement> {
    if a.n_treatments() != b.n_treatments() {
        return Err(Error::InvalidParams(
            "assignments cover different treatment sets".into(),
        ));
    }
    let n = a.n_treatments();
    let ab = contingency(a.labels(), b.labels());
    let ba = contingency(b.labels(), a.labels());
    let purity = directional_purity(&ab, n).min(directional_purity(&ba, n));

    let index: f64 = ab.values().map(|&c| choose2(c)).sum();
    let rows: f64 = a.group_sizes().iter().map(|&c| choose2(c as u64)).sum();
    let cols: f64 = b.group_sizes().iter().map(|&c| choose2(c as u64)).sum();
    let total = choose2(n as u64);
    let expected = rows * cols / total;
    let max_index = 0.5 * (rows + cols);
    let denom = max_index - expected;
    let adjusted_rand = if denom.abs() < 1e-12 {
        if a.k() == b.k() && purity == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (index - expected) / denom
    };
    Ok(Agreement {
        purity,
        adjusted_rand,
    })
}
