//! The `geodc` command line.

pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::allocation::allocate;
use crate::battery::fit_efficiency_curve;
use crate::error::{Error, Result};
use crate::integer::{branch_and_bound, round_heuristic, BbOptions, IntegerSolution};
use crate::model::Scenario;
use crate::oracle::{joint_oracle_with, JointOracleOptions};
use crate::policy::{solve_policy, Policy};
use crate::scenario::{generate, simulate, ForecastMode, GeneratorConfig, PriceSeries, SimulationOptions, SlotChain};
use crate::scp::{check_convexity_condition, solve_scp, RelaxedSolution};

/// Exit code of malformed invocations.
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Largest fleet `solve` also runs branch and bound on.
const SOLVE_BB_LIMIT: usize = 6;

#[derive(Debug, Parser)]
#[command(name = "geodc", version, about = "Joint power purchasing, battery scheduling and workload dispatch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Baseline,
    WorkloadOnly,
    StorageOnly,
    Joint,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Baseline => Policy::Baseline,
            PolicyArg::WorkloadOnly => Policy::WorkloadOnly,
            PolicyArg::StorageOnly => Policy::StorageOnly,
            PolicyArg::Joint => Policy::Joint,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Experiment {
    Gaps,
    UseRatio,
    Savings,
    CleanFraction,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split one data center's demand across its power sources.
    Allocate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        dc: usize,
        /// Energy to buy, kWh.
        #[arg(long)]
        demand: f64,
    },
    /// Solve one slot: relaxation, rounding heuristic and, for small
    /// fleets, branch and bound.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        /// Stop after the continuous relaxation.
        #[arg(long)]
        relaxed_only: bool,
        #[arg(long, value_enum, default_value = "joint")]
        policy: PolicyArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certified integer optimum by branch and bound.
    SolveExact {
        #[arg(long)]
        scenario: PathBuf,
        /// Allow more than eight data centers.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1e-6)]
        gap_tol: f64,
        #[arg(long, default_value_t = 20_000)]
        node_limit: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a multi-slot chain and emit per-slot results as CSV.
    Simulate(SimulateArgs),
    /// Compare the solver against the grid oracle on a small scenario.
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        /// Points per one-dimensional search level.
        #[arg(long, default_value_t = 9)]
        points: usize,
        #[arg(long, default_value_t = 9)]
        levels: usize,
        /// Compare whole server counts (branch and bound vs integer grid).
        #[arg(long)]
        integer: bool,
    },
    /// Fit the efficiency curve to `delta,eta_prime` samples.
    FitEta {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = 3)]
        degree: usize,
    },
    /// Generate a scenario and its price series.
    Gen(GenArgs),
    /// Produce an experiment table.
    Report {
        #[arg(long, value_enum)]
        experiment: Experiment,
        /// Fleet sizes, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "2,4,6")]
        dcs: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        /// Slots per simulated chain in the savings experiment.
        #[arg(long, default_value_t = 24)]
        slots: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    dcs: usize,
    #[arg(long, default_value_t = 3)]
    sources: usize,
    #[arg(long, default_value_t = 1)]
    slots: usize,
    #[arg(long)]
    price_spread: Option<f64>,
    #[arg(long)]
    load_fraction: Option<f64>,
    /// Writes scenario.json and prices.csv here instead of printing the
    /// scenario.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl GenArgs {
    fn config(&self) -> GeneratorConfig {
        let mut c = GeneratorConfig { sources: self.sources, slots: self.slots, ..GeneratorConfig::new(self.seed, self.dcs) };
        if let Some(s) = self.price_spread {
            c.ranges.price_spread = s;
        }
        if let Some(l) = self.load_fraction {
            c.ranges.load_fraction = l;
        }
        c
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario file; needs `--prices`.
    #[arg(long, requires = "prices", conflicts_with = "seed")]
    scenario: Option<PathBuf>,
    /// Price CSV with header slot,dc,source,price.
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Generate the chain instead of reading it.
    #[arg(long, required_unless_present = "scenario")]
    seed: Option<u64>,
    #[arg(long, default_value_t = 2)]
    dcs: usize,
    #[arg(long, default_value_t = 24)]
    slots: usize,
    #[arg(long, default_value_t = 2)]
    passes: usize,
    #[arg(long, value_enum, default_value = "joint")]
    policy: PolicyArg,
    /// Relative standard deviation of forecast errors on future unit costs.
    #[arg(long, conflicts_with = "no_potential")]
    forecast_error: Option<f64>,
    #[arg(long, default_value_t = 0)]
    forecast_seed: u64,
    /// Ignore the future value of stored energy.
    #[arg(long)]
    no_potential: bool,
    /// Keep server counts continuous.
    #[arg(long)]
    relaxed: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Maps a library error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) | Error::Unstable { .. } => EXIT_INFEASIBLE,
        Error::Internal(_) => EXIT_INTERNAL,
        _ => EXIT_CONFIG,
    }
}

/// Runs the command line with explicit output streams; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn write_to(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes `text` to `DIR/name` when a directory is given, else to stdout.
fn emit(out: &mut dyn Write, dir: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match dir {
        Some(d) => write_to(&d.join(name), text),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn load_scenario(path: &Path, err: &mut dyn Write) -> Result<Scenario> {
    let s = Scenario::load(path)?;
    for w in s.validate()? {
        writeln!(err, "warning: {w}")?;
    }
    Ok(s)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    policy: Policy,
    relaxed: &'a RelaxedSolution,
    #[serde(skip_serializing_if = "Option::is_none")]
    integer: Option<&'a IntegerSolution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    branch_and_bound: Option<BbSummary>,
}

#[derive(Serialize)]
struct BbSummary {
    objective: f64,
    nodes: usize,
    bound_gap: f64,
    heuristic_gap: f64,
    heuristic_gap_rel: f64,
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Allocate { scenario, dc, demand } => {
            let s = load_scenario(&scenario, err)?;
            let cfg = s.datacenters.get(dc).ok_or_else(|| Error::config(format!("dc {dc} outside 0..{}", s.dc_count())))?;
            let r = allocate(&cfg.sources, demand)?;
            out.write_all(json(&r).as_bytes())?;
        }
        Command::Solve { scenario, relaxed_only, policy, out: dir } => {
            let s = load_scenario(&scenario, err)?;
            let policy = Policy::from(policy);
            let text = if policy == Policy::Joint {
                let relaxed = solve_scp(&s)?;
                let (integer, bb) = if relaxed_only {
                    (None, None)
                } else {
                    let h = round_heuristic(&s, &relaxed)?;
                    let bb = if s.dc_count() <= SOLVE_BB_LIMIT {
                        let b = branch_and_bound(&s, &BbOptions::default())?;
                        writeln!(
                            err,
                            "heuristic vs branch and bound: phi {:.6} vs {:.6}, gap {:.3e} relative",
                            h.objective,
                            b.objective,
                            (h.objective - b.objective) / b.objective
                        )?;
                        Some(BbSummary {
                            objective: b.objective,
                            nodes: b.nodes,
                            bound_gap: b.bound_gap,
                            heuristic_gap: h.objective - b.objective,
                            heuristic_gap_rel: (h.objective - b.objective) / b.objective,
                        })
                    } else {
                        None
                    };
                    (Some(h), bb)
                };
                json(&SolveOutput { policy, relaxed: &relaxed, integer: integer.as_ref(), branch_and_bound: bb })
            } else {
                json(&solve_policy(&s, policy, !relaxed_only)?)
            };
            emit(out, dir.as_deref(), "solution.json", &text)?;
        }
        Command::SolveExact { scenario, force, gap_tol, node_limit, out: dir } => {
            let s = load_scenario(&scenario, err)?;
            let sol = branch_and_bound(&s, &BbOptions { gap_tol, node_limit, force, ..Default::default() })?;
            emit(out, dir.as_deref(), "solution.json", &json(&sol))?;
        }
        Command::Simulate(a) => {
            let chain = match (&a.scenario, a.seed) {
                (Some(path), _) => {
                    let base = load_scenario(path, err)?;
                    let prices_path = a.prices.as_ref().expect("clap enforces --prices");
                    let file = std::fs::File::open(prices_path)
                        .map_err(|e| Error::config(format!("cannot read {}: {e}", prices_path.display())))?;
                    SlotChain::new(base, PriceSeries::from_csv(file)?)?
                }
                (None, Some(seed)) => generate(&GeneratorConfig { slots: a.slots, ..GeneratorConfig::new(seed, a.dcs) })?,
                (None, None) => unreachable!("clap requires --scenario or --seed"),
            };
            let mode = if a.no_potential {
                ForecastMode::NoPotential
            } else if let Some(error) = a.forecast_error {
                ForecastMode::Forecast { error, seed: a.forecast_seed }
            } else {
                ForecastMode::PerfectForesight
            };
            let opts = SimulationOptions { passes: a.passes, mode, policy: a.policy.into(), integer: !a.relaxed };
            let r = simulate(&chain, &opts)?;
            emit(out, a.out.as_deref(), "simulation.csv", &r.to_csv())?;
        }
        Command::Verify { scenario, points, levels, integer } => {
            let s = load_scenario(&scenario, err)?;
            let oracle = joint_oracle_with(&s, &JointOracleOptions { points, levels, integer_servers: integer })?;
            let solver = if integer { branch_and_bound(&s, &BbOptions::default())?.objective } else { solve_scp(&s)?.objective };
            let gap = (solver - oracle.best_value) / oracle.best_value.abs();
            writeln!(out, "mode: {}", if integer { "integer" } else { "relaxed" })?;
            writeln!(out, "solver_objective: {solver:.9}")?;
            writeln!(out, "oracle_objective: {:.9}", oracle.best_value)?;
            writeln!(out, "relative_gap: {gap:.3e}")?;
            writeln!(out, "oracle_evaluations: {}", oracle.evaluations)?;
            writeln!(out, "within_tolerance: {}", gap <= 5e-3)?;
        }
        Command::FitEta { samples, degree } => {
            let file =
                std::fs::File::open(&samples).map_err(|e| Error::config(format!("cannot read {}: {e}", samples.display())))?;
            let mut rdr = csv::Reader::from_reader(file);
            let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
            if header != ["delta", "eta_prime"] {
                return Err(Error::Parse("sample header must be delta,eta_prime".into()));
            }
            let pts = rdr.deserialize::<(f64, f64)>().collect::<std::result::Result<Vec<_>, _>>()?;
            let fit = fit_efficiency_curve(&pts, degree)?;
            #[derive(Serialize)]
            struct FitOutput {
                coefficients: [f64; 4],
                domain: (f64, f64),
                rms_residual: f64,
                certificate: crate::scp::ConvexityCertificate,
            }
            let o = FitOutput {
                coefficients: fit.curve.coefficients(),
                domain: fit.curve.domain(),
                rms_residual: fit.rms_residual,
                certificate: check_convexity_condition(&fit.curve),
            };
            out.write_all(json(&o).as_bytes())?;
        }
        Command::Gen(g) => {
            let chain = generate(&g.config())?;
            match &g.out {
                Some(dir) => {
                    write_to(&dir.join("scenario.json"), &chain.base.to_json())?;
                    write_to(&dir.join("prices.csv"), &chain.prices.to_csv())?;
                }
                None => out.write_all(chain.base.to_json().as_bytes())?,
            }
        }
        Command::Report { experiment, dcs, seeds, seed_base, slots, out: dir } => {
            let seed_list: Vec<u64> = (seed_base..seed_base + seeds).collect();
            let r = match experiment {
                Experiment::Gaps => report::gaps_report(&dcs, &seed_list)?,
                Experiment::UseRatio => report::use_ratio_report()?,
                Experiment::Savings => {
                    report::savings_report(&report::SavingsGrid { dcs, seeds: seed_list, slots, ..Default::default() })?
                }
                Experiment::CleanFraction => report::clean_fraction_report()?,
            };
            match dir {
                Some(d) => {
                    write_to(&d.join(format!("{}.csv", r.name)), &r.to_csv())?;
                    out.write_all(r.to_text().as_bytes())?;
                }
                None => out.write_all(r.to_csv().as_bytes())?,
            }
        }
    }
    Ok(())
}
