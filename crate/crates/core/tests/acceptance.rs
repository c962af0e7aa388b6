//! Acceptance run: one PASS/FAIL line per criterion, all at the default seed.
//! Exits nonzero if any criterion fails that is not listed in
//! `RECORDED_FAILURES` with its analysis.

use std::process::ExitCode;
use std::time::Instant;

use rehab_core::cohort::{generate_cohort, split_rows};
use rehab_core::config::Config;
use rehab_core::experiment::{
    run_divergence_diagnostics, run_full_sweep, run_oracle_repetitions, transition_rate, Agent,
    ExperimentPlan, SweepReport,
};
use rehab_core::fqi::FitStatus;
use rehab_core::grouping::{build_cooccurrence, dkbg_assignment, lloyd};
use rehab_core::par;
use rehab_core::policy::{select_mixed, select_optimal, select_pt, PhysioPolicy, PolicyKind, RandomPolicy};
use rehab_core::rng::{self, Streams};
use rehab_core::sim::{transition_probability, PerceivedBenefits, World};

/// Criteria known to fail at this seed; the analysis is kept with the
/// project's decision notes.
const RECORDED_FAILURES: &[&str] = &["A6", "A7"];

const CAP: f64 = 2.0 / 3.0;

struct Outcome {
    id: &'static str,
    pass: bool,
}

struct Run {
    outcomes: Vec<Outcome>,
    max_probability: f64,
}

impl Run {
    fn record(&mut self, id: &'static str, pass: bool, detail: String) {
        println!("{id} {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.outcomes.push(Outcome { id, pass });
    }

    fn saw(&mut self, p: f64) {
        self.max_probability = self.max_probability.max(p);
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean of per-replicate differences `a - b`; constant baselines broadcast.
fn paired(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
    (0..n).map(|i| at(a, i) - at(b, i)).sum::<f64>() / n as f64
}

fn calibration(run: &mut Run, config: &Config, seed: u64) {
    let t = Instant::now();
    let root = Streams::new(seed).child("calibration", &[]);
    let pt = transition_rate(&config.sim, &PhysioPolicy, 50, 200, &root).unwrap();
    run.saw(pt.max_probability);
    run.record(
        "A1",
        (0.233..=0.273).contains(&pt.mean),
        format!("pt weekly transition rate {:.4} over 50 worlds x 200 episodes, band [0.233, 0.273] ({:.1?})", pt.mean, t.elapsed()),
    );
    let t = Instant::now();
    let random = transition_rate(&config.sim, &RandomPolicy, 50, 200, &root).unwrap();
    run.saw(random.max_probability);
    run.record(
        "A2",
        (0.002..=0.02).contains(&random.mean),
        format!("random weekly transition rate {:.4}, band [0.002, 0.02] ({:.1?})", random.mean, t.elapsed()),
    );
}

fn oracle(run: &mut Run, config: &Config, seed: u64) {
    let t = Instant::now();
    let reps = run_oracle_repetitions(100, 1000, &Streams::new(seed).child("oracle", &[]), &config.fqi).unwrap();
    let good = reps
        .iter()
        .filter(|r| r.correct && r.joint_status == FitStatus::Converged && r.split_status == FitStatus::Converged)
        .count();
    run.record(
        "A4",
        good >= 95,
        format!("{good}/100 repetitions: both fits converge and rank best > middle > worst ({:.1?})", t.elapsed()),
    );
}

fn sweep(run: &mut Run, config: &Config, seed: u64) -> SweepReport {
    let plan = ExperimentPlan {
        seed,
        replicates: 20,
        train_sizes: vec![100, 1000],
        ..Default::default()
    };
    let t = Instant::now();
    let report = run_full_sweep(&plan, config).unwrap();
    println!("   sweep: 20 replicates, sizes 100 and 1000, weights 1..20 in {:.1?}", t.elapsed());
    for p in report.pt.stage_probabilities.iter().chain(&report.optimal.stage_probabilities) {
        run.saw(*p);
    }
    for r in &report.records {
        for p in &r.evaluation.stage_probabilities {
            run.saw(*p);
        }
    }
    report
}

fn ordinal(run: &mut Run, report: &SweepReport) {
    let big = 1000;
    let pt = [report.pt.mean_return];
    let opt = [report.optimal.mean_return];
    let mixed = |a| report.returns(Some(a), PolicyKind::Mixed, Some(11.0), big);
    let agent = |a| report.returns(Some(a), PolicyKind::Agent, None, big);
    let (md, mt) = (mixed(Agent::Dkbg), mixed(Agent::Tebg));
    let (ad, at) = (agent(Agent::Dkbg), agent(Agent::Tebg));
    let at_shift: Vec<f64> = at.iter().map(|v| v - 0.15).collect();
    let order = [
        ("optimal > mixed dkbg", paired(&opt, &md)),
        ("mixed dkbg > mixed tebg", paired(&md, &mt)),
        ("mixed tebg > pt", paired(&mt, &pt)),
        ("agent dkbg > pt", paired(&ad, &pt)),
        ("pt > agent tebg - 0.15", paired(&pt, &at_shift)),
    ];
    let anchors = [
        ("mixed dkbg", mean(&md), 6.853),
        ("mixed tebg", mean(&mt), 6.608),
        ("pt", report.pt.mean_return, 5.949),
    ];
    let ordered = order.iter().all(|(_, d)| *d > 0.0);
    let anchored = anchors.iter().all(|(_, m, a)| (m - a).abs() <= 0.6);
    let mut detail = format!(
        "optimal {:.3}, mixed(w=11) dkbg {:.3} tebg {:.3}, pt {:.3}, agent dkbg {:.3} tebg {:.3} (n={});",
        opt[0], mean(&md), mean(&mt), pt[0], mean(&ad), mean(&at), md.len()
    );
    for (name, d) in &order {
        detail += &format!(" [{name}: paired diff {d:+.3}]");
    }
    for (name, m, a) in &anchors {
        detail += &format!(" [{name} {m:.3} vs anchor {a} +/- 0.6]");
    }
    run.record("A5", ordered && anchored, detail);

    let small = 100;
    let mut ok = true;
    let mut detail = String::new();
    for a in [Agent::Dkbg, Agent::Tebg] {
        let curve: Vec<f64> = (1..=20)
            .map(|w| mean(&report.returns(Some(a), PolicyKind::Mixed, Some(w as f64), small)))
            .collect();
        let (first, last) = (curve[0], curve[19]);
        let harmful = last < report.pt.mean_return;
        let (best_w, best) = (2..=19).map(|w| (w, curve[w - 1])).fold((0, f64::MIN), |b, c| if c.1 > b.1 { c } else { b });
        let interior = best > first && best > last;
        ok &= harmful && interior;
        detail += &format!(
            "[{a}: w=20 {last:.3} vs pt {:.3} ({}); best interior w={best_w} {best:.3} vs w=1 {first:.3}, w=20 {last:.3} ({})] ",
            report.pt.mean_return,
            if harmful { "below" } else { "NOT below" },
            if interior { "inverted U" } else { "NO interior maximum" },
        );
    }
    run.record("A6", ok, detail.trim_end().to_string());

    let closure = report.headline().gap_closure;
    let (gd, gt) = (closure[&Agent::Dkbg], closure[&Agent::Tebg]);
    run.record(
        "A8",
        gd > gt && (gd - 0.541).abs() <= 0.15 && (gt - 0.394).abs() <= 0.15,
        format!("gap closure at w=11, 1000 episodes: dkbg {:.1}% tebg {:.1}% (anchors 54.1% / 39.4% +/- 15 points)", 100.0 * gd, 100.0 * gt),
    );
}

fn diagnostics(run: &mut Run, config: &Config, seed: u64) {
    let t = Instant::now();
    let streams = Streams::new(seed);
    let world = World::sample(config.sim.clone(), &streams).unwrap();
    let cohort = generate_cohort(1000, &PhysioPolicy, "pt", &world, "acceptance", &streams.child(rng::TRAIN, &[0])).unwrap();
    let d = run_divergence_diagnostics(&cohort, &config.sim, &config.fqi).unwrap();
    let pass = d.joint_action.n_features == 1211
        && d.joint_action.n_aliased > 0
        && d.joint_action.status == FitStatus::Diverged
        && d.joint_group.status == FitStatus::Diverged
        && d.split_ungrouped.status == FitStatus::Converged
        && d.split_ungrouped.max_last_stage_q > 11.0;
    run.record(
        "A7",
        pass,
        format!(
            "joint-action: {} features, {} aliased, {:?}; joint-group: {:?} after {} iterations; split ungrouped: {:?}, max stage-10 Q {:.2} ({:.1?})",
            d.joint_action.n_features,
            d.joint_action.n_aliased,
            d.joint_action.status,
            d.joint_group.status,
            d.joint_group.iterations,
            d.split_ungrouped.status,
            d.split_ungrouped.max_last_stage_q,
            t.elapsed()
        ),
    );
}

/// Quick re-checks of the module invariants; the exhaustive versions live in
/// the unit and integration tests.
fn properties(run: &mut Run, config: &Config, report: &SweepReport, seed: u64) {
    let mut failures: Vec<String> = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    check("ssavc <= 1", report.fits.iter().filter_map(|f| f.max_ssavc).all(|v| v <= 1.0));
    let violations = report.fits.iter().filter(|f| !f.weeks_invariant).count();

    let streams = Streams::new(seed).child("properties", &[]);
    let world = World::sample(config.sim.clone(), &streams).unwrap();
    let cohort = generate_cohort(200, &PhysioPolicy, "pt", &world, "p", &streams).unwrap();
    let groups = dkbg_assignment(&config.sim);
    check("split-row counts", split_rows(&cohort, &groups).unwrap().len() == 8 * cohort.n_records());
    let x = build_cooccurrence(&cohort, 110);
    check("co-occurrence symmetry", x.is_symmetric());
    check(
        "co-occurrence row sums",
        (1..=110).all(|t| x.row_sum(t) == 7.0 * cohort.records().filter(|r| r.plan.treatments().contains(&t)).count() as f64),
    );

    let points: Vec<Vec<f64>> = (0..110).map(|i| vec![(i % 11) as f64, (i / 11) as f64 * 0.1]).collect();
    let lr = lloyd(&points, points[..11].to_vec(), 100, 10);
    check("k-means wcss monotone", lr.wcss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));

    let a = rehab_core::experiment::fit_grouped(&cohort, &groups, config).unwrap().0;
    let b = par::sequential(|| rehab_core::experiment::fit_grouped(&cohort, &groups, config)).unwrap().0;
    check("fqi determinism", a == b);

    let perceived = PerceivedBenefits { episode: 0, stage: 0, values: world.benefits.column(0).iter().map(|v| v * 0.9).collect() };
    let ssavc: Vec<f64> = (0..110).map(|i| (i as f64 * 0.37).sin()).collect();
    check("mixed weight 0 equals pt", select_mixed(&perceived, &ssavc, 0.0, 8) == select_pt(&perceived, 8));

    // Reduced world: best 3 of 10 by benefit maximizes the transition
    // probability over all 120 subsets.
    let column: Vec<f64> = (0..10).map(|i| 4.0 + ((i * 7) % 10) as f64 * 0.5).collect();
    let chosen = select_optimal(&column, 3);
    let p = |s: &[usize]| transition_probability(&config.sim, s.iter().map(|t| column[t - 1]).sum()).unwrap();
    let mut best = 0.0f64;
    for i in 1..=10 {
        for j in i + 1..=10 {
            for k in j + 1..=10 {
                best = best.max(p(&[i, j, k]));
            }
        }
    }
    check("optimal subset", (p(chosen.treatments()) - best).abs() < 1e-15);

    run.record(
        "A9",
        failures.is_empty(),
        format!(
            "invariant re-checks {}; {} fits checked for SSAVC bound, weeks-invariance warnings: {violations}; full property tests run under cargo test",
            if failures.is_empty() { "all hold".to_string() } else { format!("failed: {}", failures.join(", ")) },
            report.fits.len()
        ),
    );
}

fn main() -> ExitCode {
    let config = Config::default();
    let seed = config.seed;
    let started = Instant::now();
    println!("acceptance run, seed {seed}, parallel helpers: {}", par::is_parallel());
    let mut run = Run { outcomes: Vec::new(), max_probability: 0.0 };

    calibration(&mut run, &config, seed);
    oracle(&mut run, &config, seed);
    let report = sweep(&mut run, &config, seed);
    ordinal(&mut run, &report);
    diagnostics(&mut run, &config, seed);

    let mut prev = 0.0;
    let mut monotone = true;
    for i in 0..10_000 {
        let p = transition_probability(&config.sim, -20.0 + i as f64 * 0.015).unwrap();
        monotone &= p >= prev;
        prev = p;
        run.saw(p);
    }
    run.record(
        "A3",
        run.max_probability < CAP && monotone,
        format!("max probability seen is {:.2e} below 2/3; monotone on 10^4-point grid: {monotone}", CAP - run.max_probability),
    );
    properties(&mut run, &config, &report, seed);

    run.outcomes.sort_by_key(|o| o.id);
    println!("summary ({:.1?}):", started.elapsed());
    let mut unexpected = false;
    for o in &run.outcomes {
        let recorded = RECORDED_FAILURES.contains(&o.id);
        let note = match (o.pass, recorded) {
            (true, true) => " (listed as a recorded failure but now passes)",
            (false, true) => " (recorded failure; see decision notes)",
            (false, false) => " (UNEXPECTED)",
            _ => "",
        };
        unexpected |= !o.pass && !recorded;
        println!("  {} {}{note}", o.id, if o.pass { "PASS" } else { "FAIL" });
    }
    if unexpected {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
