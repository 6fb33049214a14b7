//! Scenario files and the end-to-end pipeline behind the command line.
//!
//! A scenario is a TOML document (`.scn`) holding the network, the
//! distributors' demand, solver/propagation/simulation settings and a shock
//! list. [`run_scenario`] validates it, propagates demand (solving every
//! policy along the way), simulates, and writes an output bundle.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{DemandError, DemandPmf, DemandSpec};
use crate::network::{build_network, FirmId, FirmSpec, Network, NetworkError, NetworkSpec};
use crate::policy::{PolicyMode, PolicyTable, ThresholdSchedule};
use crate::propagation::{propagate, NetworkDemand, Propagation, PropagationConfig, PropagationError};
use crate::simulator::{run, Shock, ShockKind, SimConfig, SimError, SimOutput};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown firm {0}")]
    UnknownFirm(FirmId),
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("demand of {firm}: {source}")]
    Demand { firm: FirmId, source: DemandError },
    #[error("propagation: {0}")]
    Propagation(#[from] PropagationError),
    #[error("simulation: {0}")]
    Simulation(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

/// How firm lower bounds enter the solver.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerBoundMode {
    /// Each firm's own `inv_lower`.
    #[default]
    Firm,
    /// Solve as if every `inv_lower` were zero; reports still use the
    /// firm's declared bound.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub horizon: usize,
    #[serde(default)]
    pub lower_bound_mode: LowerBoundMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationSection {
    pub replicates: usize,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub policy_mode: PolicyMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFirm {
    #[serde(flatten)]
    pub spec: FirmSpec,
    /// Exogenous demand; required for distributors, forbidden otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<DemandSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub solver: SolverSection,
    pub propagation: PropagationSection,
    pub simulation: SimulationSection,
    pub firms: Vec<ScenarioFirm>,
    #[serde(default)]
    pub shocks: Vec<Shock>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if sc.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Schema(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                sc.schema_version
            )));
        }
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Replaces both the propagation and simulation seeds.
    pub fn override_seed(&mut self, seed: u64) {
        self.propagation.seed = seed;
        self.simulation.seed = seed;
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec { firms: self.firms.iter().map(|f| f.spec.clone()).collect(), edges: None }
    }

    pub fn propagation_config(&self) -> PropagationConfig {
        PropagationConfig {
            replicates: self.propagation.replicates,
            horizon: self.propagation.horizon,
            warmup: self.propagation.warmup,
            base_seed: self.propagation.seed,
            policy_mode: self.simulation.policy_mode,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig { steps: self.simulation.steps, seed: self.simulation.seed, policy_mode: self.simulation.policy_mode }
    }

    /// Checks everything that can be checked without solving.
    pub fn validate(&self) -> Result<Validated, ScenarioError> {
        if self.solver.horizon == 0 {
            return Err(ScenarioError::Schema("solver.horizon must be positive".into()));
        }
        if self.simulation.steps == 0 {
            return Err(ScenarioError::Schema("simulation.steps must be positive".into()));
        }
        let net = build_network(&self.network_spec())?;
        let warmup = self.propagation_config().warmup_for(&net);
        if self.propagation.replicates == 0 || warmup >= self.propagation.horizon {
            return Err(ScenarioError::Schema(format!(
                "propagation needs replicates > 0 and warmup ({warmup}) < horizon ({})",
                self.propagation.horizon
            )));
        }
        let mut demand = BTreeMap::new();
        for (i, f) in self.firms.iter().enumerate() {
            let id = FirmId(i);
            match (&f.demand, net.is_distributor(id)) {
                (Some(d), true) => {
                    d.to_pmf().map_err(|source| ScenarioError::Demand { firm: id, source })?;
                    demand.insert(id, d.clone());
                }
                (None, true) => return Err(ScenarioError::Schema(format!("distributor {id} has no demand"))),
                (Some(_), false) => {
                    return Err(ScenarioError::Schema(format!("supplier {id} must not declare exogenous demand")))
                }
                (None, false) => {}
            }
        }
        for s in &self.shocks {
            if !net.contains(s.firm) {
                return Err(ScenarioError::UnknownFirm(s.firm));
            }
            if s.start > s.end || s.end >= self.simulation.steps {
                return Err(ScenarioError::Schema(format!(
                    "shock on {} has window [{}, {}] outside [0, {})",
                    s.firm, s.start, s.end, self.simulation.steps
                )));
            }
            if s.kind == ShockKind::DemandShift && !net.is_distributor(s.firm) {
                return Err(ScenarioError::Schema(format!("demand_shift targets supplier {}", s.firm)));
            }
        }
        Ok(Validated { net, demand })
    }
}

/// A scenario whose network and demand passed validation.
#[derive(Clone, Debug)]
pub struct Validated {
    pub net: Network,
    pub demand: BTreeMap<FirmId, DemandSpec>,
}

impl Validated {
    pub fn exogenous_pmfs(&self) -> BTreeMap<FirmId, DemandPmf> {
        self.demand.iter().map(|(&f, d)| (f, d.to_pmf().expect("validated"))).collect()
    }

    /// Network used by the solver, after applying the lower-bound mode.
    fn solver_network(&self, mode: LowerBoundMode) -> Result<Network, ScenarioError> {
        match mode {
            LowerBoundMode::Firm => Ok(self.net.clone()),
            LowerBoundMode::Zero => {
                let mut spec = self.net.to_spec();
                for f in &mut spec.firms {
                    f.params.inv_lower = 0;
                }
                Ok(build_network(&spec)?)
            }
        }
    }
}

/// Solved policies and estimated demand for a scenario.
pub fn prepare(sc: &Scenario, v: &Validated) -> Result<Propagation, ScenarioError> {
    let solver_net = v.solver_network(sc.solver.lower_bound_mode)?;
    Ok(propagate(&solver_net, &v.exogenous_pmfs(), sc.solver.horizon, &sc.propagation_config())?)
}

/// Runs the simulation against prepared policies.
pub fn simulate(sc: &Scenario, v: &Validated, schedules: &BTreeMap<FirmId, ThresholdSchedule>) -> Result<SimOutput, ScenarioError> {
    Ok(run(&v.net, schedules, &v.demand, &sc.shocks, &sc.sim_config())?)
}

pub fn schedules(policies: &BTreeMap<FirmId, PolicyTable>) -> BTreeMap<FirmId, ThresholdSchedule> {
    policies.iter().map(|(&f, t)| (f, ThresholdSchedule::from(t))).collect()
}

/// Human-readable network description with echelons and cost-rule warnings.
pub fn network_report(name: &str, net: &Network) -> String {
    let mut out = format!("scenario: {name}\nfirms: {}\nechelons: {}\n\n", net.len(), net.depth());
    for f in net.firms() {
        let inputs: Vec<String> = f.bom.inputs().map(|(r, q)| format!("{q}x v{r}")).collect();
        let p = &f.params;
        let _ = writeln!(
            out,
            "{} echelon={} c={} s={} h={} x_lower={} x_upper={} inputs=[{}]{}",
            f.id,
            net.echelon(f.id),
            p.production_cost,
            p.shortage_penalty,
            p.holding_cost,
            p.inv_lower,
            p.inv_upper,
            inputs.join(", "),
            f.name.as_deref().map(|n| format!(" name={n}")).unwrap_or_default(),
        );
    }
    let report = net.validate_costs();
    out.push_str("\ncost warnings:\n");
    if report.warnings.is_empty() {
        out.push_str("none\n");
    }
    for w in &report.warnings {
        let _ = writeln!(out, "{w}");
    }
    out
}

/// `firm,stage,threshold,case,band_lower,band_upper` followed by `F` and `G`
/// at both band edges.
pub fn thresholds_csv(policies: &BTreeMap<FirmId, PolicyTable>) -> String {
    let mut out =
        String::from("firm,stage,threshold,case,band_lower,band_upper,f_lower,f_upper,g_lower,g_upper\n");
    for (f, t) in policies {
        for (k, st) in t.stages.iter().enumerate() {
            let case = match st.case {
                crate::policy::ThresholdCase::Interior => "interior",
                crate::policy::ThresholdCase::Lower => "lower",
                crate::policy::ThresholdCase::Upper => "upper",
            };
            let (lo, hi) = st.band;
            let (f_lo, f_hi) = st.f_range();
            let (g_lo, g_hi) = (st.g_at(lo).unwrap(), st.g_at(hi).unwrap());
            let _ = writeln!(
                out,
                "{},{k},{},{case},{lo},{hi},{f_lo:.6},{f_hi:.6},{g_lo:.6},{g_hi:.6}",
                f.0, st.threshold
            );
        }
    }
    out
}

/// Cached solver output consumed by `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverArtifacts {
    pub scenario: String,
    pub horizon: usize,
    pub policies: BTreeMap<FirmId, ThresholdSchedule>,
    pub demand: NetworkDemand,
}

impl SolverArtifacts {
    pub fn new(sc: &Scenario, p: &Propagation) -> Self {
        SolverArtifacts {
            scenario: sc.name.clone(),
            horizon: sc.solver.horizon,
            policies: schedules(&p.policies),
            demand: p.demand.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifacts serialize") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|e| ScenarioError::Artifact { path: path.into(), message: e.to_string() })
    }
}

/// Per-firm end-of-run figures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirmSummary {
    pub firm: usize,
    pub total_cost: f64,
    pub shortage_events: usize,
    pub shortage_units: i64,
    pub min_inventory: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub steps: usize,
    pub seed: u64,
    pub total_cost: f64,
    pub shortage_events: usize,
    pub firms: Vec<FirmSummary>,
}

impl RunSummary {
    pub fn new(sc: &Scenario, out: &SimOutput) -> Self {
        let n = out.trace.firms;
        let firms: Vec<FirmSummary> = (0..n)
            .map(|i| {
                let rows: Vec<_> = out.trace.firm_rows(FirmId(i)).collect();
                FirmSummary {
                    firm: i,
                    total_cost: out.ledger.firms[i].last().copied().unwrap_or(0.0),
                    shortage_events: rows.iter().filter(|r| r.shortage > 0).count(),
                    shortage_units: rows.iter().map(|r| r.shortage).sum(),
                    min_inventory: rows.iter().map(|r| r.inv_out).min().unwrap_or(0),
                }
            })
            .collect();
        RunSummary {
            scenario: sc.name.clone(),
            steps: sc.simulation.steps,
            seed: sc.simulation.seed,
            total_cost: out.ledger.total(),
            shortage_events: firms.iter().map(|f| f.shortage_events).sum(),
            firms,
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }
}

/// File names inside an output bundle.
pub mod files {
    pub const NETWORK: &str = "network.txt";
    pub const DEMAND: &str = "demand_pmfs.csv";
    pub const THRESHOLDS: &str = "thresholds.csv";
    pub const ARTIFACTS: &str = "solver.json";
    pub const TRACE: &str = "trace.csv";
    pub const LEDGER: &str = "ledger.csv";
    pub const SUMMARY: &str = "summary.toml";
    pub const REPORT_INVENTORY: &str = "report_inventory.csv";
    pub const REPORT_COSTS: &str = "report_costs.csv";
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(|source| ScenarioError::Io { path: dir.into(), source })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| ScenarioError::Io { path, source })
}

/// Writes the solver-side files: network report, pmfs, thresholds, cache.
pub fn write_solver_bundle(dir: &Path, sc: &Scenario, v: &Validated, p: &Propagation) -> Result<(), ScenarioError> {
    write_file(dir, files::NETWORK, &network_report(&sc.name, &v.net))?;
    write_file(dir, files::DEMAND, &p.demand.to_csv())?;
    write_file(dir, files::THRESHOLDS, &thresholds_csv(&p.policies))?;
    write_file(dir, files::ARTIFACTS, &SolverArtifacts::new(sc, p).to_json())
}

/// Writes trace, ledger and summary.
pub fn write_sim_bundle(dir: &Path, sc: &Scenario, v: &Validated, out: &SimOutput) -> Result<RunSummary, ScenarioError> {
    write_file(dir, files::TRACE, &out.trace.to_csv(&v.net))?;
    write_file(dir, files::LEDGER, &out.ledger.to_csv())?;
    let summary = RunSummary::new(sc, out);
    write_file(dir, files::SUMMARY, &summary.to_toml_string())?;
    Ok(summary)
}

/// Everything produced by one pipeline run.
pub struct ScenarioRun {
    pub validated: Validated,
    pub propagation: Propagation,
    pub output: SimOutput,
    pub summary: RunSummary,
}

/// validate, propagate, simulate; writes the full bundle when `out_dir` is set.
pub fn run_scenario(sc: &Scenario, out_dir: Option<&Path>) -> Result<ScenarioRun, ScenarioError> {
    let validated = sc.validate()?;
    let propagation = prepare(sc, &validated)?;
    let output = simulate(sc, &validated, &schedules(&propagation.policies))?;
    let summary = RunSummary::new(sc, &output);
    if let Some(dir) = out_dir {
        write_solver_bundle(dir, sc, &validated, &propagation)?;
        write_sim_bundle(dir, sc, &validated, &output)?;
    }
    Ok(ScenarioRun { validated, propagation, output, summary })
}

/// Builds long-format plot tables from a bundle's trace and ledger:
/// `report_inventory.csv` (`k,firm,echelon,inv_out,shortage`) and
/// `report_costs.csv` (`k,series,cum_cost`).
pub fn write_reports(dir: &Path) -> Result<(), ScenarioError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|source| ScenarioError::Io { path, source })
    };
    let bad = |name: &str, message: String| ScenarioError::Artifact { path: dir.join(name), message };

    let trace = read(files::TRACE)?;
    let echelons = read_echelons(&read(files::NETWORK)?);
    let mut lines = trace.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad(files::TRACE, "empty file".into()))?.split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| bad(files::TRACE, format!("missing column {name}")))
    };
    let (ck, cf, ci, cs) = (col("k")?, col("firm")?, col("inv_out")?, col("shortage")?);
    let mut inv = String::from("k,firm,echelon,inv_out,shortage\n");
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(bad(files::TRACE, format!("ragged row: {line}")));
        }
        let firm = cells[cf];
        let echelon = firm.parse::<usize>().ok().and_then(|f| echelons.get(&f).copied()).unwrap_or(0);
        let _ = writeln!(inv, "{},{firm},{echelon},{},{}", cells[ck], cells[ci], cells[cs]);
    }
    write_file(dir, files::REPORT_INVENTORY, &inv)?;

    let ledger = read(files::LEDGER)?;
    let mut costs = String::from("k,series,cum_cost\n");
    for line in ledger.lines().skip(1) {
        let mut it = line.splitn(3, ',');
        let (Some(k), Some(f), Some(c)) = (it.next(), it.next(), it.next()) else {
            return Err(bad(files::LEDGER, format!("ragged row: {line}")));
        };
        let series = if f == "network" { "network".to_string() } else { format!("v{f}") };
        let _ = writeln!(costs, "{k},{series},{c}");
    }
    write_file(dir, files::REPORT_COSTS, &costs)
}

/// Parses `v<i> echelon=<e>` lines from a network report.
fn read_echelons(report: &str) -> BTreeMap<usize, usize> {
    report
        .lines()
        .filter_map(|l| {
            let mut parts = l.split_whitespace();
            let id = parts.next()?.strip_prefix('v')?.parse().ok()?;
            let e = parts.next()?.strip_prefix("echelon=")?.parse().ok()?;
            Some((id, e))
        })
        .collect()
}
