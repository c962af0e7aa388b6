use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};

/// Symmetric count of plans containing each unordered pair of treatments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl CooccurrenceMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry for 1-based treatments `i` and `j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i - 1) * self.n + (j - 1)]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.values[(i - 1) * self.n..i * self.n].iter().sum()
    }

    pub fn add_plan(&mut self, plan: &[usize]) {
        for (a, &i) in plan.iter().enumerate() {
            for &j in &plan[a + 1..] {
                if i != j {
                    self.values[(i - 1) * self.n + (j - 1)] += 1.0;
                    self.values[(j - 1) * self.n + (i - 1)] += 1.0;
                }
            }
        }
    }

    /// Nonzero off-diagonal entries as 1-based `(i, j, x)` triplets, row major.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                let x = self.values[i * self.n + j];
                if x != 0.0 {
                    out.push((i + 1, j + 1, x));
                }
            }
        }
        out
    }

    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut m = Self::zeros(n);
        for &(i, j, x) in triplets {
            m.values[(i - 1) * n + (j - 1)] = x;
        }
        m
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.values[i * self.n + j] == self.values[j * self.n + i]))
    }
}

/// Sparse `i, j, count` triplets, both triangles, nonzero entries only.
pub fn write_cooccurrence_csv<W: std::io::Write>(x: &CooccurrenceMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "j", "count"])?;
    for (i, j, v) in x.triplets() {
        w.write_record([i.to_string(), j.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<co-occurrence csv>", e))?;
    Ok(())
}

/// Co-occurrence over every weekly plan with an unbounded, unweighted context
/// window.
pub fn build_cooccurrence(cohort: &Cohort, n_treatments: usize) -> CooccurrenceMatrix {
    let mut m = CooccurrenceMatrix::zeros(n_treatments);
    for traj in &cohort.trajectories {
        for rec in &traj.records {
            m.add_plan(rec.plan.treatments());
        }
    }
    m
}
