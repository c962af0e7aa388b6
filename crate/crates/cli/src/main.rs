//! `rehab`: simulate cohorts, learn groupings and agents, evaluate policies
//! and run the full experiment sweep. Logs go to stderr as JSON lines;
//! results go to files under `--out` with a JSON summary on stdout.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rehab_core::cohort::{generate_cohort, load_cohort_csv, save_cohort_csv, split_rows, write_split_rows_csv, Cohort, SelectionStats};
use rehab_core::config::Config;
use rehab_core::experiment::{
    emit_reports, evaluate_policy, fit_grouped, fit_tebg, run_divergence_diagnostics, run_full_sweep,
    run_oracle_repetitions, Agent, EvalCohort, ExperimentPlan, SweepReport,
};
use rehab_core::fqi::{FitStatus, QModel};
use rehab_core::grouping::{dkbg_assignment, write_cooccurrence_csv, GroupAssignment};
use rehab_core::policy::{PhysioPolicy, PolicyKind, PolicySpec, SsavcForm, SsavcTable};
use rehab_core::rng::{self, Streams};
use rehab_core::sim::World;
use rehab_core::{Error, Result};

#[derive(Parser)]
#[command(name = "rehab", version, about = "Treatment-recommendation experiments on a simulated rehabilitation process")]
struct Cli {
    /// Master seed; overrides the seed in --config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value = "info")]
    log_level: tracing::Level,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training cohort under the physiotherapist policy.
    Simulate {
        #[arg(long, default_value_t = 1000)]
        patients: usize,
    },
    /// Group treatments by domain knowledge or learned embeddings.
    Group {
        #[arg(value_enum)]
        method: Method,
        #[command(flatten)]
        cohort: CohortArg,
    },
    /// Fit the grouped split-row model.
    Train {
        #[command(flatten)]
        cohort: CohortArg,
        /// GroupAssignment JSON; takes precedence over --agent.
        #[arg(long)]
        groups: Option<PathBuf>,
        /// Grouping to learn from when no --groups file is given.
        #[arg(long, default_value = "dkbg")]
        agent: String,
    },
    /// Evaluate one policy on fresh patients.
    Evaluate {
        #[arg(long, default_value = "pt")]
        policy: String,
        #[arg(long, default_value_t = 0.0)]
        weight: f64,
        #[arg(long, default_value_t = 1000)]
        patients: usize,
        /// World JSON written by `simulate`; sampled from the seed otherwise.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        groups: Option<PathBuf>,
    },
    /// Run the replicate sweep and emit reports.
    Sweep(SweepArgs),
    /// Three-action comparison of split-row and joint fits.
    Oracle {
        #[arg(long, default_value_t = 1000)]
        observations: usize,
        #[arg(long, default_value_t = 1)]
        repetitions: usize,
    },
    /// Fit the whole-plan and ungrouped model variants.
    Diagnose {
        #[command(flatten)]
        cohort: CohortArg,
    },
    /// Emit report files from a saved sweep.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Dkbg,
    Tebg,
}

#[derive(Args)]
struct CohortArg {
    /// Cohort CSV; a fresh cohort is simulated from the seed when absent.
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    patients: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Independent training replicates.
    #[arg(long)]
    replicates: Option<usize>,
    /// Comma list or inclusive range, e.g. `1..20` or `0,5,11`.
    #[arg(long)]
    weights: Option<String>,
    /// Comma list or inclusive range with step, e.g. `100..1000:100`.
    #[arg(long)]
    train_sizes: Option<String>,
    /// Agents to fit, `dkbg`, `tebg` or both.
    #[arg(long, value_delimiter = ',')]
    agent: Vec<String>,
    /// Evaluation patients shared by all policies.
    #[arg(long)]
    eval_patients: Option<usize>,
    /// Weight used for the training-size cross-section.
    #[arg(long)]
    cross_section_weight: Option<f64>,
}

/// Parses `a,b,c`, `lo..hi` or `lo..hi:step` (ranges inclusive).
fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidParams(format!("cannot parse grid {spec:?}"));
    let num = |s: &str| f64::from_str(s.trim()).map_err(|_| bad());
    if let Some((lo, rest)) = spec.split_once("..") {
        let (hi, step) = rest.split_once(':').map_or((rest, "1"), |(h, s)| (h, s));
        let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
        if !(step > 0.0) || hi < lo {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| lo + i as f64 * step).collect());
    }
    spec.split(',').map(num).collect()
}

fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
    parse_grid(spec)?
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidParams(format!("training size {v} is not a whole number")))
            }
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

struct Ctx {
    config: Config,
    out: PathBuf,
}

impl Ctx {
    fn streams(&self) -> Streams {
        Streams::new(self.config.seed)
    }

    fn world(&self) -> Result<World> {
        World::sample(self.config.sim.clone(), &self.streams())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// The cohort from `--cohort`, or the first training cohort of the seed.
    fn cohort(&self, arg: &CohortArg) -> Result<Cohort> {
        match &arg.cohort {
            Some(p) => load_cohort_csv(p, "file", "pt"),
            None => {
                let world = self.world()?;
                let train = self.streams().child(rng::TRAIN, &[0]);
                generate_cohort(arg.patients, &PhysioPolicy, "pt", &world, "seed", &train)
            }
        }
    }
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let ctx = Ctx { config, out: cli.out };
    let params = &ctx.config.sim;

    match cli.command {
        Command::Simulate { patients } => {
            let world = ctx.world()?;
            let cohort = ctx.cohort(&CohortArg { cohort: None, patients })?;
            save_cohort_csv(&cohort, params.plan_size, &ctx.path("cohort.csv"))?;
            write_json(&ctx.path("world.json"), &world)?;
            Ok(serde_json::json!({
                "patients": cohort.len(),
                "records": cohort.n_records(),
                "mean_return": cohort.trajectories.iter().map(|t| t.episode_return()).sum::<f64>() / cohort.len() as f64,
            }))
        }
        Command::Group { method, cohort } => {
            let groups = match method {
                Method::Dkbg => dkbg_assignment(params),
                Method::Tebg => {
                    let c = ctx.cohort(&cohort)?;
                    let fit = fit_tebg(&c, &ctx.config, &ctx.streams(), &[0, c.len() as u64])?;
                    write_cooccurrence_csv(&fit.cooccurrence, create(&ctx.path("cooccurrence.csv"))?)?;
                    fit.embedding.write_csv(create(&ctx.path("embedding.csv"))?)?;
                    fit.kmeans
                        .assignment
                        .clone()
                        .with_parameter("wcss", fit.kmeans.wcss)
                        .with_parameter("best_restart", fit.kmeans.best_restart)
                        .with_parameter("final_glove_loss", fit.embedding.final_loss())
                }
            };
            write_json(&ctx.path("groups.json"), &groups)?;
            Ok(serde_json::json!({ "k": groups.k(), "group_sizes": groups.group_sizes() }))
        }
        Command::Train { cohort, groups, agent } => {
            let c = ctx.cohort(&cohort)?;
            let groups: GroupAssignment = match (groups, agent.parse::<Agent>()?) {
                (Some(p), _) => read_json(&p)?,
                (None, Agent::Dkbg) => dkbg_assignment(params),
                (None, Agent::Tebg) => fit_tebg(&c, &ctx.config, &ctx.streams(), &[0, c.len() as u64])?.kmeans.assignment,
            };
            write_json(&ctx.path("groups.json"), &groups)?;
            write_split_rows_csv(&split_rows(&c, &groups)?, create(&ctx.path("split_rows.csv"))?)?;
            let (model, stats) = fit_grouped(&c, &groups, &ctx.config)?;
            model.save_json(&ctx.path("qmodel.json"))?;
            model.write_trace_csv(create(&ctx.path("trace.csv"))?)?;
            fs::write(ctx.path("selection_stats.json"), stats.to_json()?)
                .map_err(|e| Error::io(ctx.path("selection_stats.json"), e))?;
            if model.status() == FitStatus::Converged {
                let table = SsavcTable::build(&model, &stats, &groups, params, SsavcForm::Standardized)?;
                table.write_csv(create(&ctx.path("ssavc.csv"))?)?;
            } else {
                tracing::warn!(status = ?model.status(), "fit did not converge; no SSAVC table written");
            }
            Ok(serde_json::json!({
                "status": model.status(),
                "iterations": model.diagnostics.iterations,
                "rank": model.diagnostics.rank,
                "n_features": model.encoder.n_features(),
            }))
        }
        Command::Evaluate { policy, weight, patients, world, model, stats, groups } => {
            let world = match world {
                Some(p) => read_json(&p)?,
                None => ctx.world()?,
            };
            let spec = PolicySpec { weight, ..PolicySpec::new(policy.parse::<PolicyKind>()?) };
            let stats: Option<SelectionStats> = match stats {
                Some(p) => Some(SelectionStats::from_json(
                    &fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?,
                )?),
                None => None,
            };
            let model = model.map(|p| QModel::load_json(&p)).transpose()?;
            let groups: GroupAssignment = match groups {
                Some(p) => read_json(&p)?,
                None => dkbg_assignment(params),
            };
            let learned = match (&model, &stats) {
                (Some(m), Some(s)) => Some((m, s, &groups)),
                _ => None,
            };
            let built = spec.build(params, learned, stats.as_ref())?;
            let eval = EvalCohort::draw(&world, &ctx.streams().child(rng::EVAL, &[]), patients);
            let result = evaluate_policy(built.as_ref(), &world, &eval)?;
            write_json(&ctx.path("evaluation.json"), &(&spec, &result))?;
            Ok(serde_json::to_value(&result)?)
        }
        Command::Sweep(args) => {
            let mut plan = ExperimentPlan { seed: ctx.config.seed, ..Default::default() };
            if let Some(r) = args.replicates {
                plan.replicates = r;
            }
            if let Some(w) = &args.weights {
                plan.weights = parse_grid(w)?;
            }
            if let Some(s) = &args.train_sizes {
                plan.train_sizes = parse_sizes(s)?;
            }
            if !args.agent.is_empty() {
                plan.agents = args.agent.iter().map(|a| a.parse::<Agent>()).collect::<Result<_>>()?;
            }
            if let Some(n) = args.eval_patients {
                plan.eval_patients = n;
            }
            if let Some(w) = args.cross_section_weight {
                plan.cross_section_weight = w;
            }
            let report = run_full_sweep(&plan, &ctx.config)?;
            write_json(&ctx.path("sweep_report.json"), &report)?;
            emit_reports(&report, &ctx.out)?;
            Ok(serde_json::to_value(report.headline())?)
        }
        Command::Oracle { observations, repetitions } => {
            let reports = run_oracle_repetitions(repetitions, observations, &ctx.streams(), &ctx.config.fqi)?;
            write_json(&ctx.path("oracle.json"), &reports)?;
            Ok(serde_json::json!({
                "repetitions": repetitions,
                "correct": reports.iter().filter(|r| r.correct).count(),
                "agree": reports.iter().filter(|r| r.agree).count(),
            }))
        }
        Command::Diagnose { cohort } => {
            let c = ctx.cohort(&cohort)?;
            let report = run_divergence_diagnostics(&c, params, &ctx.config.fqi)?;
            write_json(&ctx.path("diagnostics.json"), &report)?;
            Ok(serde_json::to_value(&report)?)
        }
        Command::Report { input } => {
            let report: SweepReport = read_json(&input)?;
            let manifest = emit_reports(&report, &ctx.out)?;
            Ok(serde_json::to_value(&manifest)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .json()
        .with_max_level(cli.log_level)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            tracing::error!(error = %e, "command failed");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("1..3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid("0,5,11").unwrap(), vec![0.0, 5.0, 11.0]);
        assert_eq!(parse_sizes("100..300:100").unwrap(), vec![100, 200, 300]);
        assert!(parse_grid("3..1").is_err());
        assert!(parse_sizes("1.5").is_err());
    }
}
