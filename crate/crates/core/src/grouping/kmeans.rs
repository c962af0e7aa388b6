use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{GroupAssignment, Provenance};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, Streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    /// Empty-cluster reseeds allowed per restart.
    pub max_repairs: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 11,
            restarts: 1000,
            max_iters: 1000,
            max_repairs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each assignment/update pass.
    pub wcss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LloydRun {
    pub fn wcss(&self) -> f64 {
        *self.wcss_trace.last().unwrap_or(&f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignment: GroupAssignment,
    pub wcss: f64,
    pub best_restart: usize,
    pub run: LloydRun,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn total_wcss(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum()
}

/// Lloyd iterations from the given initial centroids. Labels are 0-based
/// cluster indices. An empty cluster is reseeded at the point farthest from
/// its current centroid.
pub fn lloyd(
    points: &[Vec<f64>],
    initial: Vec<Vec<f64>>,
    max_iters: usize,
    max_repairs: usize,
) -> LloydRun {
    let k = initial.len();
    let dim = points.first().map_or(0, Vec::len);
    let mut centroids = initial;
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut trace = vec![total_wcss(points, &labels, &centroids)];
    let mut repairs = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        // Update step.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        // Empty-cluster repair.
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            if repairs >= max_repairs {
                break;
            }
            repairs += 1;
            let far = (0..points.len())
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &centroids[labels[a]])
                        .total_cmp(&sq_dist(&points[b], &centroids[labels[b]]))
                        .then(b.cmp(&a))
                });
            let Some(far) = far else { break };
            counts[labels[far]] -= 1;
            counts[empty] = 1;
            labels[far] = empty;
            centroids[empty] = points[far].clone();
        }
        // Assignment step.
        let new_labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = new_labels != labels;
        labels = new_labels;
        trace.push(total_wcss(points, &labels, &centroids));
        if !changed {
            converged = true;
            break;
        }
    }
    LloydRun {
        labels,
        centroids,
        wcss_trace: trace,
        iterations,
        converged,
    }
}

/// Relabels clusters 1..=k in order of their smallest member index.
fn canonical_labels(labels: &[usize], k: usize) -> Vec<usize> {
    let mut map = vec![0usize; k];
    let mut next = 1;
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        if map[l] == 0 {
            map[l] = next;
            next += 1;
        }
        out.push(map[l]);
    }
    out
}

/// Euclidean K-means, best of `restarts` Lloyd runs by within-cluster sum of
/// squares. Each restart seeds from `k` distinct points chosen uniformly.
pub fn cluster_kmeans(
    points: &[Vec<f64>],
    config: &KMeansConfig,
    streams: &Streams,
) -> Result<KMeansFit> {
    let n = points.len();
    if config.k == 0 || config.k > n {
        return Err(Error::InvalidParams(format!(
            "cannot form {} clusters from {n} points",
            config.k
        )));
    }
    let runs = par::map_range(config.restarts.max(1), |r| {
        let mut rng = streams.rng(rng::KMEANS, &[r as u64]);
        let init = sample(&mut rng, n, config.k)
            .into_iter()
            .map(|i| points[i].clone())
            .collect();
        lloyd(points, init, config.max_iters, config.max_repairs)
    });
    let (best_restart, run) = runs
        .into_iter()
        .enumerate()
        .reduce(|best, cand| if cand.1.wcss() < best.1.wcss() { cand } else { best })
        .expect("at least one restart");
    let labels = canonical_labels(&run.labels, config.k);
    let assignment = GroupAssignment::new(labels, Provenance::Tebg)?;
    if assignment.k() != config.k {
        return Err(Error::InvalidParams(format!(
            "clustering produced {} groups instead of {}",
            assignment.k(),
            config.k
        )));
    }
    Ok(KMeansFit {
        assignment,
        wcss: run.wcss(),
        best_restart,
        run,
    })
}
