use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CooccurrenceMatrix;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GloveConfig {
    pub dim: usize,
    pub epochs: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub learning_rate: f64,
}

impl Default for GloveConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            epochs: 50,
            x_max: 10.0,
            alpha: 0.75,
            learning_rate: 0.05,
        }
    }
}

/// Co-occurrence weighting `min(1, (x / x_max)^alpha)`.
pub fn glove_weight(x: f64, x_max: f64, alpha: f64) -> f64 {
    if x < x_max {
        (x / x_max).powf(alpha)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    /// Main word vectors, one row per treatment.
    pub main: Vec<Vec<f64>>,
    /// Context vectors.
    pub context: Vec<Vec<f64>>,
    pub main_bias: Vec<f64>,
    pub context_bias: Vec<f64>,
    /// Objective before training, then after each epoch.
    pub loss_history: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Final treatment vectors: main plus context.
    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.main
            .iter()
            .zip(&self.context)
            .map(|(w, c)| w.iter().zip(c).map(|(a, b)| a + b).collect())
            .collect()
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history holds the initial loss")
    }

    /// One row per treatment: `treatment, v1..vd` of the final vectors.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["treatment".to_string()];
        header.extend((1..=self.dim).map(|k| format!("v{k}")));
        w.write_record(&header)?;
        for (i, v) in self.vectors().iter().enumerate() {
            let mut row = vec![(i + 1).to_string()];
            row.extend(v.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<embedding csv>", e))?;
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn objective(e: &EmbeddingMatrix, entries: &[(usize, usize, f64, f64, f64)]) -> f64 {
    entries
        .iter()
        .map(|&(i, j, _, log_x, weight)| {
            let diff = dot(&e.main[i], &e.context[j]) + e.main_bias[i] + e.context_bias[j] - log_x;
            weight * diff * diff
        })
        .sum()
}

/// Weighted least-squares log-bilinear embedding of a co-occurrence matrix,
/// trained with per-parameter AdaGrad steps over shuffled nonzero entries.
pub fn train_glove(
    x: &CooccurrenceMatrix,
    config: &GloveConfig,
    rng: &mut StreamRng,
) -> Result<EmbeddingMatrix> {
    if config.dim < 2 {
        return Err(Error::InvalidParams("embedding dimension must be at least 2".into()));
    }
    let entries: Vec<(usize, usize, f64, f64, f64)> = x
        .triplets()
        .into_iter()
        .filter(|&(i, j, v)| i != j && v > 0.0)
        .map(|(i, j, v)| (i - 1, j - 1, v, v.ln(), glove_weight(v, config.x_max, config.alpha)))
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyCooccurrence);
    }

    let n = x.n();
    let d = config.dim;
    let init = |rng: &mut StreamRng| (rng.gen::<f64>() - 0.5) / d as f64;
    let mut e = EmbeddingMatrix {
        dim: d,
        main: (0..n).map(|_| (0..d).map(|_| init(rng)).collect()).collect(),
        context: (0..n).map(|_| (0..d).map(|_| init(rng)).collect()).collect(),
        main_bias: (0..n).map(|_| init(rng)).collect(),
        context_bias: (0..n).map(|_| init(rng)).collect(),
        loss_history: Vec::with_capacity(config.epochs + 1),
    };
    let mut g_main = vec![vec![1.0f64; d]; n];
    let mut g_context = vec![vec![1.0f64; d]; n];
    let mut g_main_bias = vec![1.0f64; n];
    let mut g_context_bias = vec![1.0f64; n];
    let lr = config.learning_rate;

    e.loss_history.push(objective(&e, &entries));
    let mut order: Vec<usize> = (0..entries.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for &idx in &order {
            let (i, j, _, log_x, weight) = entries[idx];
            let diff =
                dot(&e.main[i], &e.context[j]) + e.main_bias[i] + e.context_bias[j] - log_x;
            let fdiff = weight * diff;
            for k in 0..d {
                let gw = fdiff * e.context[j][k];
                let gc = fdiff * e.main[i][k];
                e.main[i][k] -= lr * gw / g_main[i][k].sqrt();
                e.context[j][k] -= lr * gc / g_context[j][k].sqrt();
                g_main[i][k] += gw * gw;
                g_context[j][k] += gc * gc;
            }
            e.main_bias[i] -= lr * fdiff / g_main_bias[i].sqrt();
            e.context_bias[j] -= lr * fdiff / g_context_bias[j].sqrt();
            g_main_bias[i] += fdiff * fdiff;
            g_context_bias[j] += fdiff * fdiff;
        }
        e.loss_history.push(objective(&e, &entries));
    }
    Ok(e)
}
