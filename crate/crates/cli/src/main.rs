use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use ccuc_core::harness::{self, write_report_csv, write_report_json, Run};
use ccuc_core::{
    bundled, load_instance, load_scenarios, sample_scenarios, BackendKind, MarginalForecast,
    Method, RelaxationMode, RunReport, RunStatus, ScenarioSet, SweepGrid, UCInstance,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const EXIT_INFEASIBLE: u8 = 1;
const EXIT_NON_CONVERGENCE: u8 = 2;
const EXIT_INPUT: u8 = 3;

/// Chance-constrained unit commitment: direct reformulations and bilinear
/// Benders decomposition.
#[derive(Debug, Parser)]
#[command(name = "ccuc", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one instance with one method.
    Solve {
        #[command(flatten)]
        common: Common,
        /// det, suc, cc-bigm, cc-bilinear or benders.
        #[arg(long, default_value = "benders")]
        method: Method,
        /// Write the Benders iteration log here.
        #[arg(long, value_name = "PATH")]
        iteration_log: Option<PathBuf>,
    },
    /// Enumerate every admissible indicator vector and solve the restricted SUC.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Integrality gaps of the Big-M and bilinear reformulations.
    Gap {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the risk level or the scenario count.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "benders")]
        method: Method,
        /// Comma-separated risk levels.
        #[arg(
            long,
            value_delimiter = ',',
            conflicts_with = "sizes",
            required_unless_present = "sizes"
        )]
        epsilons: Vec<f64>,
        /// Comma-separated scenario counts (prefixes of the scenario set).
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
    /// Run Big-M, bilinear and Benders on identical inputs.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Relative tolerance of the cross-method agreement check.
        #[arg(long, default_value_t = 1e-4)]
        agreement: f64,
        /// Stop Benders after this multiple of the slower direct wall time.
        #[arg(long, value_name = "FACTOR")]
        budget_factor: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Instance file, or `bundled:NAME` (micro-1, micro-2, six-shape).
    #[arg(long, value_name = "PATH")]
    instance: String,
    /// Scenario file. Without this or --sample the point forecast is the
    /// only scenario (the bundled six-shape instance uses its 5-scenario set).
    #[arg(long, value_name = "PATH", conflicts_with = "sample")]
    scenarios: Option<PathBuf>,
    /// Draw this many scenarios from the marginal forecasts.
    #[arg(long, value_name = "N")]
    sample: Option<usize>,
    /// Sampling seed; defaults to the instance's rng_seed.
    #[arg(long, value_name = "S", requires = "sample")]
    seed: Option<u64>,
    /// Risk level.
    #[arg(long)]
    epsilon: Option<f64>,
    /// full-drop or paper-literal.
    #[arg(long)]
    mode: Option<RelaxationMode>,
    /// Scalar Big-M replacing the data-driven value.
    #[arg(long)]
    big_m: Option<f64>,
    #[arg(long)]
    mip_gap: Option<f64>,
    /// Benders relative stopping tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Per-MIP time limit in seconds.
    #[arg(long, value_name = "SECONDS")]
    time_limit: Option<f64>,
    /// highs or native.
    #[arg(long, default_value_t = BackendKind::default().as_str().to_string())]
    backend: String,
    /// Write report rows as delimited text.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Write a machine-readable run record.
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
}

/// Failure classes that map to distinct exit codes.
#[derive(Debug)]
struct InputError(anyhow::Error);

impl Common {
    fn load(&self) -> Result<(UCInstance, ScenarioSet, BackendKind), InputError> {
        self.load_inner().map_err(InputError)
    }

    fn load_inner(&self) -> anyhow::Result<(UCInstance, ScenarioSet, BackendKind)> {
        let (mut instance, bundled_set) = match self.instance.strip_prefix("bundled:") {
            Some(name) => {
                let inst = bundled::by_name(name)
                    .with_context(|| format!("no bundled instance named {name:?}"))?;
                let set = (name == "six-shape").then(bundled::six_shape_scenarios);
                (inst, set)
            }
            None => (load_instance(&self.instance)?, None),
        };
        if let Some(eps) = self.epsilon {
            instance.risk_level = eps;
        }
        let cfg = &mut instance.config;
        if let Some(mode) = self.mode {
            cfg.relaxation_mode = mode;
        }
        if self.big_m.is_some() {
            cfg.big_m_override = self.big_m;
        }
        if let Some(gap) = self.mip_gap {
            cfg.mip_gap = gap;
        }
        if let Some(tol) = self.tolerance {
            cfg.benders_tolerance = tol;
        }
        if self.time_limit.is_some() {
            cfg.time_limit = self.time_limit;
        }
        instance.validate()?;

        let scenarios = if let Some(path) = &self.scenarios {
            load_scenarios(path, &instance)?
        } else if let Some(n) = self.sample {
            let seed = self.seed.unwrap_or(instance.config.rng_seed);
            sample_scenarios(
                &instance,
                &MarginalForecast::from_instance(&instance),
                n,
                seed,
            )?
        } else {
            bundled_set.unwrap_or_else(|| ScenarioSet::forecast_only(&instance))
        };
        scenarios.check_dimensions(&instance)?;
        let backend = self
            .backend
            .parse::<BackendKind>()
            .map_err(anyhow::Error::msg)?;
        Ok((instance, scenarios, backend))
    }

    fn emit<T: Serialize + ?Sized>(&self, rows: &[RunReport], record: &T) -> anyhow::Result<()> {
        if let Some(path) = &self.report {
            write_report_csv(rows, create(path)?)?;
        }
        if let Some(path) = &self.json {
            write_report_json(record, create(path)?)?;
        }
        Ok(())
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn print_rows(rows: &[RunReport]) {
    println!(
        "{:<12} {:>4} {:>7} {:>16} {:<16} {:>6} {:>10} {:>9}  z",
        "method", "N", "eps", "objective", "status", "iters", "time_s", "IG"
    );
    for r in rows {
        println!(
            "{:<12} {:>4} {:>7.4} {:>16} {:<16} {:>6} {:>10.3} {:>9}  {}",
            r.method.as_str(),
            r.scenarios,
            r.epsilon,
            fmt_opt(r.objective),
            r.status.as_str(),
            r.iterations
                .map(|i| i.to_string())
                .unwrap_or_else(|| "-".into()),
            r.wall_time,
            r.integrality_gap
                .map(|g| format!("{g:.5}"))
                .unwrap_or_else(|| "-".into()),
            r.z.iter().map(|b| char::from(b'0' + b)).collect::<String>(),
        );
    }
}

/// Exit code for a set of rows: the worst status wins.
fn exit_for(rows: &[RunReport]) -> u8 {
    if rows
        .iter()
        .any(|r| matches!(r.status, RunStatus::NonConvergence | RunStatus::Failed))
    {
        EXIT_NON_CONVERGENCE
    } else if rows.iter().any(|r| r.status == RunStatus::Infeasible) {
        EXIT_INFEASIBLE
    } else {
        0
    }
}

#[derive(Serialize)]
struct SolveRecord<'a> {
    report: &'a RunReport,
    commitment: Option<&'a Vec<Vec<f64>>>,
    dispatch: Option<&'a Vec<Vec<f64>>>,
    iterations: Vec<IterationRow>,
}

#[derive(Serialize)]
struct IterationRow {
    iteration: usize,
    lower_bound: f64,
    upper_bound: f64,
    gap: f64,
    cuts_added: usize,
    fsp_violations: usize,
    wall_time: f64,
}

fn solve(common: &Common, method: Method, iteration_log: Option<&Path>) -> anyhow::Result<u8> {
    let (instance, scenarios, backend) = load(common)?;
    let Run {
        report,
        schedule,
        benders,
    } = harness::run_method(method, &instance, &scenarios, backend)?;
    print_rows(std::slice::from_ref(&report));
    if let (Some(state), Some(path)) = (&benders, iteration_log) {
        state.write_log(create(path)?)?;
    }
    let record = SolveRecord {
        report: &report,
        commitment: schedule.as_ref().map(|s| &s.u),
        dispatch: schedule.as_ref().map(|s| &s.p),
        iterations: benders
            .iter()
            .flat_map(|s| &s.log)
            .map(|r| IterationRow {
                iteration: r.iteration,
                lower_bound: r.lower_bound,
                upper_bound: r.upper_bound,
                gap: r.gap,
                cuts_added: r.cuts_added,
                fsp_violations: r.fsp_violations,
                wall_time: r.wall_time.as_secs_f64(),
            })
            .collect(),
    };
    common.emit(std::slice::from_ref(&report), &record)?;
    Ok(exit_for(std::slice::from_ref(&report)))
}

/// Marks an error as caused by the inputs.
#[derive(Debug)]
struct InputMarker;

impl std::fmt::Display for InputMarker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("invalid input")
    }
}

fn load(common: &Common) -> anyhow::Result<(UCInstance, ScenarioSet, BackendKind)> {
    common
        .load()
        .map_err(|InputError(e)| e.context(InputMarker))
}

fn run(command: &Command) -> anyhow::Result<u8> {
    match command {
        Command::Solve {
            common,
            method,
            iteration_log,
        } => solve(common, *method, iteration_log.as_deref()),
        Command::Oracle { common } => {
            let (instance, scenarios, backend) = load(common)?;
            let eps = instance.risk_level;
            let result = match harness::exhaustive_oracle(&instance, &scenarios, eps, backend) {
                Err(e @ ccuc_core::HarnessError::TooManyCombinations { .. }) => {
                    return Err(anyhow::Error::new(e).context(InputMarker))
                }
                other => other?,
            };
            println!("{:>16}  dropped", "objective");
            for c in &result.combinations {
                println!(
                    "{:>16}  {:?}",
                    fmt_opt(c.objective),
                    c.dropped.iter().map(|n| n + 1).collect::<Vec<_>>()
                );
            }
            let z: String = result.z.iter().map(|b| char::from(b'0' + b)).collect();
            println!(
                "best {} with z = {z}",
                fmt_opt(Some(result.objective).filter(|o| o.is_finite()))
            );
            common.emit(&[], &result)?;
            Ok(if result.objective.is_finite() {
                0
            } else {
                EXIT_INFEASIBLE
            })
        }
        Command::Gap { common } => {
            let (instance, scenarios, backend) = load(common)?;
            let study = harness::integrality_gap_study(&instance, &scenarios, backend)?;
            print_rows(&study.rows);
            match study.bilinear_tighter {
                Some(true) => println!("IG_bilinear <= IG_bigm: holds"),
                Some(false) => println!("IG_bilinear <= IG_bigm: VIOLATED"),
                None => println!("IG_bilinear <= IG_bigm: not checked (a solve was not optimal)"),
            }
            common.emit(&study.rows, &study)?;
            Ok(exit_for(&study.rows))
        }
        Command::Sweep {
            common,
            method,
            epsilons,
            sizes,
        } => {
            let (instance, scenarios, backend) = load(common)?;
            let grid = if epsilons.is_empty() {
                SweepGrid::Size(sizes.clone())
            } else {
                SweepGrid::Epsilon(epsilons.clone())
            };
            let result = harness::sweep(&instance, &scenarios, &grid, *method, backend)?;
            print_rows(&result.rows);
            if let Some(m) = result.monotone {
                println!(
                    "objective non-increasing in epsilon: {}",
                    if m { "yes" } else { "NO" }
                );
            }
            common.emit(&result.rows, &result)?;
            Ok(exit_for(&result.rows))
        }
        Command::Bench {
            common,
            agreement,
            budget_factor,
        } => {
            let (instance, scenarios, backend) = load(common)?;
            let result =
                harness::benchmark(&instance, &scenarios, backend, *agreement, *budget_factor)?;
            print_rows(&result.rows);
            if let Some(a) = result.agreement {
                println!(
                    "objectives agree within {agreement}: {}",
                    if a { "yes" } else { "NO" }
                );
            }
            if let Some(r) = result.time_ratio {
                println!("benders / fastest direct wall time: {r:.3}");
            }
            common.emit(&result.rows, &result)?;
            Ok(exit_for(&result.rows))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let _ = io::Write::flush(&mut io::stdout());
            eprintln!("error: {e:#}");
            if e.downcast_ref::<InputMarker>().is_some() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::from(EXIT_NON_CONVERGENCE)
            }
        }
    }
}
