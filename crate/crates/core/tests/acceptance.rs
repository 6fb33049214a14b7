//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.
//!
//! Criteria 1-4 exercise the solver against the exhaustive DP oracle on
//! random small instances. Criteria 5-9 run the bundled presets over 20
//! matched seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use echelon_core::demand::{DemandModel, DemandPmf};
use echelon_core::network::{FirmId, FirmParams, Network};
use echelon_core::policy::{brute_force_dp, compute_policy, PolicyTable, SolverInstance};
use echelon_core::scenario::{files, run_scenario, Scenario, ScenarioRun};
use echelon_core::simulator::ShockKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const ORACLE_INSTANCES: usize = 200;
const VALUE_TOL: f64 = 1e-9;
const SEEDS: std::ops::RangeInclusive<u64> = 1..=20;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn main() {
    let start = Instant::now();
    let instances = oracle_instances();
    let presets = PresetRuns::load();

    let results: Vec<(&str, Outcome)> = vec![
        ("1 oracle equivalence", criterion_1(&instances)),
        ("2 newsvendor fractile", criterion_2()),
        ("3 structural invariants", criterion_3(&instances)),
        ("4 boundary binding", criterion_4(&instances)),
        ("5 ideal scenario", criterion_5(&presets)),
        ("6 outage scenario", criterion_6(&presets)),
        ("7 demand-shock scenario", criterion_7(&presets)),
        ("8 cost ordering", criterion_8(&presets)),
        ("9 determinism", criterion_9()),
    ];

    let mut failed = 0;
    for (name, o) in &results {
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- solver

struct Instance {
    inst: SolverInstance,
    table: PolicyTable,
}

fn random_pmf(rng: &mut ChaCha8Rng) -> DemandPmf {
    let n = rng.gen_range(1..=12);
    let min = rng.gen_range(0..=4);
    let weights = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    DemandPmf::from_weights(min, weights).unwrap()
}

/// Random instance with support <= 12, T <= 6, x^L in [lo_min, 10] and a
/// tabulated grid of at most 150 points.
fn random_instance(rng: &mut ChaCha8Rng, lo_min: i64) -> SolverInstance {
    loop {
        let horizon = rng.gen_range(1..=6);
        let lo = rng.gen_range(lo_min..=10);
        let demand = if rng.gen_bool(0.3) {
            DemandModel::Staged { pmfs: (0..horizon).map(|_| random_pmf(rng)).collect() }
        } else {
            DemandModel::stationary(random_pmf(rng))
        };
        let d_max = demand.max_over(horizon);
        let hi_max = lo + 149 - (horizon as i64 - 1) * d_max;
        if hi_max < lo + d_max {
            continue;
        }
        let hi = rng.gen_range(lo + d_max..=hi_max.min(lo + d_max + 60));
        let c = rng.gen_range(0.5..5.0);
        let s = c + rng.gen_range(0.0..10.0);
        let h = rng.gen_range(0.1..3.0);
        return SolverInstance::new(FirmParams::new(c, s, h, lo, hi), demand, horizon);
    }
}

fn oracle_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut out: Vec<Instance> = (0..ORACLE_INSTANCES)
        .map(|_| {
            let inst = random_instance(&mut rng, -30);
            let table = compute_policy(&inst).unwrap();
            Instance { inst, table }
        })
        .collect();
    // extra nonnegative-floor instances so the boundary check has >= 50 cases
    out.extend((0..60).map(|_| {
        let inst = random_instance(&mut rng, 0);
        let table = compute_policy(&inst).unwrap();
        Instance { inst, table }
    }));
    out
}

fn criterion_1(instances: &[Instance]) -> Outcome {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut states = 0usize;
    let mut worst = 0.0f64;
    for (i, case) in instances.iter().take(ORACLE_INSTANCES).enumerate() {
        let p = &case.inst.params;
        let grid = case.table.stages[0].f.len();
        let support = (0..case.inst.horizon).map(|k| case.inst.demand.stage(k).probs().len()).max().unwrap();
        if grid > 150 || support > 12 {
            mismatches.push(format!("instance {i} out of range (grid {grid}, support {support})"));
        }
        let oracle = brute_force_dp(&case.inst).unwrap();
        for k in 0..case.inst.horizon {
            for x in p.inv_lower..=p.inv_upper {
                states += 1;
                let got = case.table.optimal_request(k, x).unwrap();
                let want = oracle.action(k, x);
                let err = (case.table.cost_to_go(k, x).unwrap() - oracle.value(k, x)).abs();
                worst = worst.max(err);
                if got != want || err > VALUE_TOL {
                    mismatches.push(format!("instance {i} k={k} x={x}: request {got} vs {want}, value err {err:e}"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches.is_empty() && elapsed < Duration::from_secs(30);
    Outcome::new(
        pass,
        format!(
            "{ORACLE_INSTANCES} instances, {states} states, max value error {worst:.2e}, {} mismatches, {:.2}s{}",
            mismatches.len(),
            elapsed.as_secs_f64(),
            mismatches.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

fn criterion_2() -> Outcome {
    let pmf = DemandPmf::uniform(0, 9).unwrap();
    let inst = SolverInstance::stationary(FirmParams::new(4.0, 10.0, 2.0, -20, 50), pmf.clone(), 1);
    let table = compute_policy(&inst).unwrap();
    let m = table.threshold(0).unwrap();
    let fractile = (10.0 - 4.0) / (10.0 + 2.0);
    let closed_form = (0..=9).find(|&y| pmf.cdf(y) >= fractile).unwrap();
    // F(y) = -s + (s + h) P(w <= y) on the tabulated grid
    let st = &table.stages[0];
    let f_ok = (st.grid_min..=st.grid_max())
        .all(|y| (st.f_at(y).unwrap() - (-10.0 + 12.0 * pmf.cdf(y))).abs() < 1e-12);
    Outcome::new(m == 4 && closed_form == 4 && f_ok, format!("M = {m}, closed form {closed_form}, F matches: {f_ok}"))
}

fn second_differences_ok(v: &[f64]) -> bool {
    v.windows(3).all(|w| w[2] - 2.0 * w[1] + w[0] >= -VALUE_TOL)
}

fn criterion_3(instances: &[Instance]) -> Outcome {
    let mut failures = Vec::new();
    for (i, case) in instances.iter().take(ORACLE_INSTANCES).enumerate() {
        let t = &case.table;
        let horizon = case.inst.horizon;
        for (k, st) in t.stages.iter().enumerate() {
            let checks = [
                ("F nondecreasing", st.f.windows(2).all(|w| w[1] >= w[0] - VALUE_TOL)),
                ("G convex", second_differences_ok(&st.g)),
                (
                    "dG = F",
                    st.g.windows(2).zip(&st.f).all(|(g, f)| (g[1] - g[0] - f).abs() <= VALUE_TOL),
                ),
                ("J convex", {
                    let j: Vec<f64> = (st.grid_min..=st.grid_max()).map(|x| t.cost_to_go(k, x).unwrap()).collect();
                    second_differences_ok(&j)
                }),
                ("threshold in band", st.band.0 == case.inst.band_floor(k) && (st.band.0..=st.band.1).contains(&st.threshold)),
            ];
            for (name, ok) in checks {
                if !ok {
                    failures.push(format!("instance {i} stage {k}: {name}"));
                }
            }
        }
        let p = &case.inst.params;
        if !(p.inv_lower..=p.inv_upper).all(|x| t.cost_to_go(horizon, x) == Ok(0.0)) {
            failures.push(format!("instance {i}: terminal cost nonzero"));
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "{ORACLE_INSTANCES} instances, {} violations{}",
            failures.len(),
            failures.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

fn criterion_4(instances: &[Instance]) -> Outcome {
    let mut checked = 0;
    let mut failures = Vec::new();
    for (i, case) in instances.iter().enumerate().filter(|(_, c)| c.inst.params.inv_lower >= 0) {
        checked += 1;
        let lo = case.inst.params.inv_lower;
        let oracle = brute_force_dp(&case.inst).unwrap();
        for k in 0..case.inst.horizon {
            let d = case.inst.demand.stage(k).max();
            let m = case.table.threshold(k).unwrap();
            // the oracle raises stock from x^L to the threshold
            let oracle_m = lo + oracle.action(k, lo);
            if m != lo + d || oracle_m != lo + d {
                failures.push(format!("instance {i} stage {k}: M = {m}, oracle {oracle_m}, x^L + D = {}", lo + d));
            }
        }
    }
    Outcome::new(
        failures.is_empty() && checked >= 50,
        format!(
            "{checked} instances with x^L >= 0, {} violations{}",
            failures.len(),
            failures.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- presets

fn preset_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.scn"))
}

fn load_preset(name: &str, seed: u64) -> Scenario {
    let mut sc = Scenario::load(&preset_path(name)).unwrap();
    sc.override_seed(seed);
    sc
}

struct PresetRuns {
    ideal: Vec<ScenarioRun>,
    outage: Vec<ScenarioRun>,
    shock: Vec<ScenarioRun>,
    ideal_elapsed: Duration,
}

impl PresetRuns {
    fn load() -> Self {
        let batch = |name: &str| -> Vec<ScenarioRun> {
            SEEDS.collect::<Vec<_>>().par_iter().map(|&s| run_scenario(&load_preset(name, s), None).unwrap()).collect()
        };
        let start = Instant::now();
        let ideal = batch("ideal");
        let ideal_elapsed = start.elapsed();
        PresetRuns { ideal, outage: batch("outage"), shock: batch("demand_shock"), ideal_elapsed }
    }
}

fn warmup(net: &Network) -> usize {
    4 * net.depth()
}

fn criterion_5(runs: &PresetRuns) -> Outcome {
    let mut below = 0;
    let mut shortages = 0;
    for run in &runs.ideal {
        let net = &run.validated.net;
        for row in run.output.trace.rows.iter().filter(|r| r.k > warmup(net)) {
            if net.is_distributor(row.firm) && row.inv_out < net.firm(row.firm).params.inv_lower {
                below += 1;
            }
            shortages += usize::from(row.shortage > 0);
        }
    }
    let firms = runs.ideal[0].validated.net.len();
    let fast = runs.ideal_elapsed < Duration::from_secs(60);
    Outcome::new(
        below == 0 && shortages == 0 && fast && firms == 15,
        format!(
            "{} seeds, {firms} firms, {below} distributor steps below x^L, {shortages} shortage events after warmup, {:.1}s",
            runs.ideal.len(),
            runs.ideal_elapsed.as_secs_f64()
        ),
    )
}

/// The shocked firm and every firm downstream of it, with the supply edges
/// among them.
fn downstream_edges(net: &Network, root: FirmId) -> Vec<(FirmId, FirmId)> {
    let mut seen = BTreeSet::from([root]);
    let mut stack = vec![root];
    let mut edges = Vec::new();
    while let Some(u) = stack.pop() {
        for &j in net.customers_of(u) {
            edges.push((u, j));
            if seen.insert(j) {
                stack.push(j);
            }
        }
    }
    edges.sort();
    edges
}

fn criterion_6(runs: &PresetRuns) -> Outcome {
    let sc = load_preset("outage", 1);
    let shock = sc.shocks.iter().find(|s| s.kind == ShockKind::FullOutage).expect("outage preset");
    let (onset, end) = (shock.start, shock.end);

    let (mut transitions, mut positive, mut negative) = (0, 0, 0);
    let mut restore_failures = Vec::new();
    for (run, seed) in runs.outage.iter().zip(SEEDS) {
        let net = &run.validated.net;
        let trace = &run.output.trace;
        let first_short = |f: FirmId| trace.firm_rows(f).find(|r| r.k >= onset && r.shortage > 0).map(|r| r.k);
        for (u, j) in downstream_edges(net, shock.firm) {
            let Some(tu) = first_short(u) else { continue };
            transitions += 1;
            match first_short(j) {
                Some(tj) if tj < tu => negative += 1,
                Some(tj) if tj == tu => {}
                _ => positive += 1,
            }
        }

        // restore time per echelon: last firm in the tier to get back to x^L
        let mut tier: BTreeMap<usize, usize> = BTreeMap::new();
        for id in net.ids() {
            let lo = net.firm(id).params.inv_lower;
            let dipped = trace.firm_rows(id).any(|r| r.k >= onset && r.k <= end && r.inv_out < lo);
            if !dipped {
                continue;
            }
            let back = trace.firm_rows(id).find(|r| r.k > end && r.inv_out >= lo).map_or(usize::MAX, |r| r.k);
            let e = tier.entry(net.echelon(id)).or_insert(0);
            *e = (*e).max(back);
        }
        let Some(&dist) = tier.get(&1) else {
            restore_failures.push(format!("seed {seed}: distributors never dipped"));
            continue;
        };
        let others = tier.iter().filter(|(&e, _)| e > 1).map(|(_, &t)| t).min().unwrap_or(usize::MAX);
        if dist > end + 3 || dist >= others {
            restore_failures.push(format!("seed {seed}: distributors back at {dist}, next tier at {others}"));
        }
    }
    let share = positive as f64 / transitions.max(1) as f64;
    let pass = negative == 0 && transitions > 0 && share >= 0.8 && restore_failures.is_empty();
    Outcome::new(
        pass,
        format!(
            "(a) {transitions} transitions, {negative} early, {:.0}% delayed; (b) {} seeds failed restore{}",
            100.0 * share,
            restore_failures.len(),
            restore_failures.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if mean == 0.0 {
        0.0
    } else {
        var.sqrt() / mean
    }
}

fn criterion_7(runs: &PresetRuns) -> Outcome {
    let mut worst_cv = 0.0f64;
    let mut windows = 0;
    let mut saturation_failures = Vec::new();
    let (mut upstream_checks, mut upstream_violations, mut worst_excess) = (0usize, 0usize, 0i64);
    let mut example = None;
    for (run, seed) in runs.shock.iter().zip(SEEDS) {
        let net = &run.validated.net;
        let trace = &run.output.trace;
        for d in net.distributors() {
            let m = run.propagation.policies[&d].threshold(0).unwrap();
            let shipped: Vec<f64> = trace.firm_rows(d).filter(|r| r.omega > m).map(|r| r.shipped as f64).collect();
            if shipped.is_empty() {
                saturation_failures.push(format!("seed {seed} {d}: demand never exceeded M = {m}"));
                continue;
            }
            windows += 1;
            let cv = coefficient_of_variation(&shipped);
            worst_cv = worst_cv.max(cv);
            if cv >= 0.05 {
                saturation_failures.push(format!("seed {seed} {d}: CV {cv:.3} over {} steps", shipped.len()));
            }
        }
        for u in net.ids().filter(|&u| net.echelon(u) >= 3) {
            let support = run.propagation.demand.get(u).unwrap().stage(0).max();
            for r in trace.firm_rows(u).filter(|r| r.k >= warmup(net)) {
                upstream_checks += 1;
                if r.omega > support {
                    upstream_violations += 1;
                    worst_excess = worst_excess.max(r.omega - support);
                    example.get_or_insert(format!("seed {seed} {u} k={}: {} > D = {support}", r.k, r.omega));
                }
            }
        }
    }
    // same check on the unshocked runs, for contrast
    let nominal: usize = runs
        .ideal
        .iter()
        .map(|run| {
            let net = &run.validated.net;
            net.ids()
                .filter(|&u| net.echelon(u) >= 3)
                .map(|u| {
                    let support = run.propagation.demand.get(u).unwrap().stage(0).max();
                    run.output.trace.firm_rows(u).filter(|r| r.k >= warmup(net) && r.omega > support).count()
                })
                .sum::<usize>()
        })
        .sum();
    let pass = saturation_failures.is_empty() && upstream_violations == 0;
    Outcome::new(
        pass,
        format!(
            "(a) {windows} saturated windows, max CV {worst_cv:.4}{}; (b) {upstream_violations}/{upstream_checks} upstream steps above D, max excess {worst_excess}{}; ideal runs: {nominal} steps above D",
            saturation_failures.first().map(|m| format!(" [{m}]")).unwrap_or_default(),
            example.map(|m| format!(" [{m}]")).unwrap_or_default()
        ),
    )
}

fn criterion_8(runs: &PresetRuns) -> Outcome {
    let mut failures = Vec::new();
    let mut min_gap = [f64::INFINITY; 2];
    for (i, seed) in SEEDS.enumerate() {
        let ideal = &runs.ideal[i].output.ledger.network;
        for (slot, (name, run)) in [("outage", &runs.outage[i]), ("demand_shock", &runs.shock[i])].into_iter().enumerate() {
            let onset = load_preset(name, seed).shocks.iter().map(|s| s.start).min().unwrap_or(0);
            let shocked = &run.output.ledger.network;
            let last = ideal.len() - 1;
            let gap = shocked[last] - ideal[last];
            min_gap[slot] = min_gap[slot].min(gap);
            if gap < 0.0 {
                failures.push(format!("seed {seed} {name}: final gap {gap:.2}"));
            }
            if let Some(k) = (0..onset).find(|&k| shocked[k] != ideal[k]) {
                failures.push(format!("seed {seed} {name}: costs differ at k={k} before onset {onset}"));
            }
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "{} seeds, min final gap outage {:.1}, demand shock {:.1}{}",
            runs.ideal.len(),
            min_gap[0],
            min_gap[1],
            failures.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}

const BUNDLE: [&str; 7] = [
    files::NETWORK,
    files::DEMAND,
    files::THRESHOLDS,
    files::ARTIFACTS,
    files::TRACE,
    files::LEDGER,
    files::SUMMARY,
];

fn bundle(name: &str, threads: usize) -> BTreeMap<&'static str, Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::load(&preset_path(name)).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| run_scenario(&sc, Some(dir.path()))).unwrap();
    BUNDLE.iter().map(|&f| (f, std::fs::read(dir.path().join(f)).unwrap())).collect()
}

fn criterion_9() -> Outcome {
    let mut diffs = Vec::new();
    for name in ["ideal", "outage", "demand_shock"] {
        let reference = bundle(name, 4);
        for (label, threads) in [("rerun", 4), ("1 thread", 1), ("8 threads", 8)] {
            let other = bundle(name, threads);
            for f in BUNDLE {
                if other[f] != reference[f] {
                    diffs.push(format!("{name} {label}: {f}"));
                }
            }
        }
    }
    Outcome::new(
        diffs.is_empty(),
        format!(
            "3 presets x (rerun, 1, 8 threads), {} files differ{}",
            diffs.len(),
            diffs.first().map(|m| format!("; first: {m}")).unwrap_or_default()
        ),
    )
}
