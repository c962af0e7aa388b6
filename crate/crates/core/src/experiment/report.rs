//! CSV and JSON artifacts for a finished sweep. Output is a pure function of
//! the report, so replaying a manifest reproduces every file byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Agent, ExperimentPlan, Summary, SweepReport};
use crate::error::{Error, Result};
use crate::policy::PolicyKind;

pub const REPORT_FILES: [&str; 5] = [
    "figure2_returns.csv",
    "table3_transitions.csv",
    "figure3_surface.csv",
    "figure4_crosssection.csv",
    "summary.json",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    /// SHA-256 of the simulation/learning configuration as JSON.
    pub config_hash: String,
    pub plan: ExperimentPlan,
    /// SHA-256 of each emitted file.
    pub files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn csv_bytes(header: &[String], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Domain(e.to_string()))
}

fn strings<const N: usize>(items: [&str; N]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn figure2(report: &SweepReport) -> Result<Vec<u8>> {
    let size = report.plan.max_train_size();
    let mut rows = Vec::new();
    for &agent in &report.plan.agents {
        for r in report.matching(Some(agent), PolicyKind::Agent, None, size) {
            rows.push(vec![
                r.replicate.to_string(),
                agent.to_string(),
                size.to_string(),
                r.evaluation.mean_return.to_string(),
            ]);
        }
    }
    csv_bytes(&strings(["replicate", "agent", "train_size", "mean_return"]), rows)
}

fn stage_means(report: &SweepReport, agent: Agent, size: usize) -> Vec<Option<f64>> {
    let stages = report.pt.stage_probabilities.len();
    let recs: Vec<_> = report.matching(Some(agent), PolicyKind::Agent, None, size).collect();
    (0..stages)
        .map(|s| {
            (!recs.is_empty()).then(|| {
                recs.iter().map(|r| r.evaluation.stage_probabilities[s]).sum::<f64>() / recs.len() as f64
            })
        })
        .collect()
}

fn table3(report: &SweepReport) -> Result<Vec<u8>> {
    let size = report.plan.max_train_size();
    let mut header = strings(["stage", "pt"]);
    let mut columns = Vec::new();
    for &agent in &report.plan.agents {
        header.push(format!("agent_{agent}"));
        columns.push(stage_means(report, agent, size));
    }
    let rows = (0..report.pt.stage_probabilities.len())
        .map(|s| {
            let mut row = vec![s.to_string(), report.pt.stage_probabilities[s].to_string()];
            row.extend(columns.iter().map(|c| c[s].map_or_else(String::new, |v| v.to_string())));
            row
        })
        .collect();
    csv_bytes(&header, rows)
}

fn summary_cells(s: Option<Summary>) -> Vec<String> {
    match s {
        Some(s) => [s.mean, s.ci_low, s.ci_high, s.q05, s.q95]
            .iter()
            .map(f64::to_string)
            .chain(std::iter::once(s.n.to_string()))
            .collect(),
        None => vec![String::new(), String::new(), String::new(), String::new(), String::new(), "0".into()],
    }
}

fn figure3(report: &SweepReport) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for &agent in &report.plan.agents {
        for &size in &report.plan.train_sizes {
            for &w in &report.plan.weights {
                let s = report.summary(Some(agent), PolicyKind::Mixed, Some(w), size);
                rows.push(vec![
                    agent.to_string(),
                    size.to_string(),
                    w.to_string(),
                    s.map_or_else(String::new, |s| s.mean.to_string()),
                    s.map_or(0, |s| s.n).to_string(),
                ]);
            }
        }
    }
    csv_bytes(&strings(["agent", "train_size", "weight", "mean_return", "n"]), rows)
}

fn figure4(report: &SweepReport) -> Result<Vec<u8>> {
    let w = report.plan.cross_section_weight;
    let mut rows = Vec::new();
    for &agent in &report.plan.agents {
        for &size in &report.plan.train_sizes {
            let mut row = vec![agent.to_string(), size.to_string(), w.to_string()];
            row.extend(summary_cells(report.summary(Some(agent), PolicyKind::Mixed, Some(w), size)));
            row.push(report.pt.mean_return.to_string());
            row.push(report.optimal.mean_return.to_string());
            rows.push(row);
        }
    }
    csv_bytes(
        &strings([
            "agent", "train_size", "weight", "mean", "ci_low", "ci_high", "q05", "q95", "n", "pt_mean",
            "optimal_mean",
        ]),
        rows,
    )
}

/// Writes the report files and `manifest.json` into `dir`, creating it if
/// needed.
pub fn emit_reports(report: &SweepReport, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let contents = [
        figure2(report)?,
        table3(report)?,
        figure3(report)?,
        figure4(report)?,
        serde_json::to_vec_pretty(&report.headline())?,
    ];
    let mut files = BTreeMap::new();
    for (name, bytes) in REPORT_FILES.iter().zip(&contents) {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        files.insert(name.to_string(), sha256_hex(bytes));
    }
    let manifest = Manifest {
        seed: report.plan.seed,
        config_hash: sha256_hex(&serde_json::to_vec(&report.config)?),
        plan: report.plan.clone(),
        files,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
