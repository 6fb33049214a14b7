use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use echelon_core::scenario::{
    files, network_report, prepare, run_scenario, simulate, write_file, write_reports, write_sim_bundle,
    write_solver_bundle, Scenario, SolverArtifacts,
};

/// Multi-echelon supply network solver and simulator.
#[derive(Parser)]
#[command(name = "echelon", version)]
struct Cli {
    /// Replace the scenario's propagation and simulation seeds.
    #[arg(long, global = true, value_name = "SEED")]
    seed_override: Option<u64>,
    /// Output directory (default: the scenario's output_dir, else out/<name>).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a scenario, then print the network report.
    Validate { scenario: PathBuf },
    /// Propagate demand, solve every firm and write thresholds plus the solver cache.
    Solve { scenario: PathBuf },
    /// Propagate demand and write the estimated pmfs plus the solver cache.
    Propagate { scenario: PathBuf },
    /// Run the full pipeline and write the output bundle.
    Simulate {
        scenario: PathBuf,
        /// Reuse a solver cache (solver.json) instead of re-solving.
        #[arg(long, value_name = "FILE")]
        from_cache: Option<PathBuf>,
    },
    /// Build long-format plot tables from an output bundle.
    Report { dir: PathBuf },
}

struct Ctx {
    seed_override: Option<u64>,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn load(&self, path: &Path) -> Result<Scenario> {
        let mut sc = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(seed) = self.seed_override {
            sc.override_seed(seed);
        }
        Ok(sc)
    }

    fn out_dir(&self, sc: &Scenario) -> PathBuf {
        self.out
            .clone()
            .or_else(|| sc.simulation.output_dir.clone())
            .unwrap_or_else(|| Path::new("out").join(&sc.name))
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { seed_override: cli.seed_override, out: cli.out, quiet: cli.quiet };
    match cli.command {
        Command::Validate { scenario } => {
            let sc = ctx.load(&scenario)?;
            let v = sc.validate().context("validate")?;
            ctx.say(network_report(&sc.name, &v.net));
            ctx.say(format!("{}: ok", scenario.display()));
        }
        Command::Solve { scenario } => {
            let sc = ctx.load(&scenario)?;
            let v = sc.validate().context("validate")?;
            let p = prepare(&sc, &v).context("solve")?;
            let dir = ctx.out_dir(&sc);
            write_solver_bundle(&dir, &sc, &v, &p).context("export")?;
            for (f, t) in &p.policies {
                ctx.say(format!("{f} echelon {} threshold {}", v.net.echelon(*f), t.threshold(0)?));
            }
            ctx.say(format!("wrote {}", dir.display()));
        }
        Command::Propagate { scenario } => {
            let sc = ctx.load(&scenario)?;
            let v = sc.validate().context("validate")?;
            let p = prepare(&sc, &v).context("propagate")?;
            let dir = ctx.out_dir(&sc);
            write_solver_bundle(&dir, &sc, &v, &p).context("export")?;
            for (f, pmf) in p.demand.pmfs() {
                let drift = p.drift.get(&f).map(|d| format!(", drift {:.2}%", 100.0 * d.relative())).unwrap_or_default();
                ctx.say(format!("{f} support [{}, {}] mean {:.2}{drift}", pmf.min(), pmf.max(), pmf.mean()));
            }
            ctx.say(format!("wrote {}", dir.join(files::DEMAND).display()));
        }
        Command::Simulate { scenario, from_cache } => {
            let sc = ctx.load(&scenario)?;
            let dir = ctx.out_dir(&sc);
            let summary = match from_cache {
                Some(cache) => {
                    let v = sc.validate().context("validate")?;
                    let art = SolverArtifacts::load(&cache).context("load cache")?;
                    if art.scenario != sc.name {
                        bail!("cache {} was built for scenario {:?}, not {:?}", cache.display(), art.scenario, sc.name);
                    }
                    let out = simulate(&sc, &v, &art.policies).context("simulate")?;
                    write_file(&dir, files::NETWORK, &network_report(&sc.name, &v.net)).context("export")?;
                    write_sim_bundle(&dir, &sc, &v, &out).context("export")?
                }
                None => run_scenario(&sc, Some(&dir)).context("simulate")?.summary,
            };
            ctx.say(format!(
                "{}: {} steps, total cost {:.2}, {} shortage events",
                sc.name, summary.steps, summary.total_cost, summary.shortage_events
            ));
            ctx.say(format!("wrote {}", dir.display()));
        }
        Command::Report { dir } => {
            write_reports(&dir).context("report")?;
            ctx.say(format!("wrote {} and {}", files::REPORT_INVENTORY, files::REPORT_COSTS));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
