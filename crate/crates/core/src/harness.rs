//! Method runner, exhaustive indicator oracle, integrality-gap, sweep and
//! benchmark studies, and report emission.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::benders::{
    benders_solve_with, relative_gap, BendersError, BendersOptions, BendersState,
};
use crate::formulations::{
    build_cc_bigm, build_cc_bilinear, build_first_stage, build_suc, FirstStageSolution,
    FormulationError, UcModel,
};
use crate::instance::UCInstance;
use crate::model::{relax_binaries, BackendKind, MipOptions, SolveStatus, SolverError};
use crate::scenarios::ScenarioSet;

/// Largest number of admissible indicator vectors the oracle enumerates.
pub const ORACLE_LIMIT: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{count} admissible indicator vectors exceed the oracle limit of {limit}")]
    TooManyCombinations { count: usize, limit: usize },
    #[error("unknown method {0:?} (expected det, suc, cc-bigm, cc-bilinear or benders)")]
    UnknownMethod(String),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Benders(#[from] BendersError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Det,
    Suc,
    CcBigm,
    CcBilinear,
    Benders,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Det,
        Method::Suc,
        Method::CcBigm,
        Method::CcBilinear,
        Method::Benders,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Det => "det",
            Self::Suc => "suc",
            Self::CcBigm => "cc-bigm",
            Self::CcBilinear => "cc-bilinear",
            Self::Benders => "benders",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| HarnessError::UnknownMethod(s.to_string()))
    }
}

/// Outcome class of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Optimal,
    FeasibleGap,
    TimeLimit,
    Infeasible,
    NonConvergence,
    Failed,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Optimal => "optimal",
            Self::FeasibleGap => "feasible-gap",
            Self::TimeLimit => "time-limit",
            Self::Infeasible => "infeasible",
            Self::NonConvergence => "non-convergence",
            Self::Failed => "failed",
        }
    }

    /// Whether the run produced an objective value.
    pub fn has_objective(&self) -> bool {
        matches!(self, Self::Optimal | Self::FeasibleGap | Self::TimeLimit)
    }

    fn from_solve(status: SolveStatus, has_point: bool) -> Self {
        match status {
            SolveStatus::Optimal => Self::Optimal,
            SolveStatus::FeasibleGap => Self::FeasibleGap,
            SolveStatus::TimeLimit if has_point => Self::TimeLimit,
            SolveStatus::TimeLimit => Self::NonConvergence,
            SolveStatus::Infeasible => Self::Infeasible,
            SolveStatus::Unbounded => Self::Failed,
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of any study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub method: Method,
    pub instance: String,
    pub scenarios: usize,
    pub epsilon: f64,
    pub relaxation_mode: String,
    pub objective: Option<f64>,
    pub status: RunStatus,
    pub wall_time: f64,
    pub iterations: Option<usize>,
    pub mip_gap: Option<f64>,
    /// LP-relaxation optimum, filled by the integrality-gap study.
    pub relaxation: Option<f64>,
    pub integrality_gap: Option<f64>,
    /// Indicator vector, empty for methods without indicators.
    pub z: Vec<u8>,
}

impl RunReport {
    fn new(method: Method, instance: &UCInstance, scenarios: &ScenarioSet) -> Self {
        Self {
            method,
            instance: instance.name.clone(),
            scenarios: scenarios.len(),
            epsilon: instance.risk_level,
            relaxation_mode: instance.config.relaxation_mode.as_str().to_string(),
            objective: None,
            status: RunStatus::Failed,
            wall_time: 0.0,
            iterations: None,
            mip_gap: None,
            relaxation: None,
            integrality_gap: None,
            z: Vec::new(),
        }
    }

    /// `sum_n pi_n z_n`.
    pub fn dropped_probability(&self, scenarios: &ScenarioSet) -> f64 {
        self.z
            .iter()
            .zip(&scenarios.probabilities)
            .filter(|(z, _)| **z == 1)
            .map(|(_, p)| p)
            .sum()
    }
}

/// A finished run: the report row plus the schedule and, for Benders, the
/// loop state.
#[derive(Debug, Clone)]
pub struct Run {
    pub report: RunReport,
    pub schedule: Option<FirstStageSolution>,
    pub benders: Option<BendersState>,
}

fn mip_options(instance: &UCInstance) -> MipOptions {
    MipOptions::new(
        instance.config.mip_gap,
        instance.config.time_limit.map(Duration::from_secs_f64),
    )
}

fn indicator_bits(z: &[f64]) -> Vec<u8> {
    z.iter().map(|&v| u8::from(v > 0.5)).collect()
}

fn build(
    method: Method,
    instance: &UCInstance,
    scenarios: &ScenarioSet,
) -> Result<UcModel, FormulationError> {
    match method {
        Method::Det => build_first_stage(instance),
        Method::Suc => build_suc(instance, scenarios),
        Method::CcBigm => build_cc_bigm(instance, scenarios),
        Method::CcBilinear | Method::Benders => build_cc_bilinear(instance, scenarios),
    }
}

/// Solve `method` on the given inputs. Infeasibility and non-convergence
/// are reported as row statuses; only build and backend failures are errors.
pub fn run_method(
    method: Method,
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    backend: BackendKind,
) -> Result<Run, HarnessError> {
    if method == Method::Benders {
        let options = BendersOptions {
            backend,
            ..BendersOptions::default()
        };
        return run_benders(instance, scenarios, &options);
    }
    let mut report = RunReport::new(method, instance, scenarios);
    let start = Instant::now();
    let uc = build(method, instance, scenarios)?;
    let sol = backend
        .create()
        .solve_mip(&uc.model, &mip_options(instance))?;
    report.wall_time = start.elapsed().as_secs_f64();
    report.status = RunStatus::from_solve(sol.status, sol.has_point());
    if !sol.has_point() {
        return Ok(Run {
            report,
            schedule: None,
            benders: None,
        });
    }
    let schedule = uc.extract(&sol);
    report.objective = Some(sol.objective);
    report.mip_gap = sol.mip_gap;
    report.z = indicator_bits(&schedule.z);
    Ok(Run {
        report,
        schedule: Some(schedule),
        benders: None,
    })
}

/// Run the decomposition with explicit options, reported like the direct
/// methods.
pub fn run_benders(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    options: &BendersOptions,
) -> Result<Run, HarnessError> {
    let mut report = RunReport::new(Method::Benders, instance, scenarios);
    let start = Instant::now();
    let outcome = benders_solve_with(instance, scenarios, options);
    report.wall_time = start.elapsed().as_secs_f64();
    match outcome {
        Ok((schedule, state)) => {
            report.status = RunStatus::Optimal;
            report.objective = Some(state.upper_bound);
            report.iterations = Some(state.iteration);
            report.mip_gap = Some(state.gap());
            report.z = indicator_bits(&schedule.z);
            Ok(Run {
                report,
                schedule: Some(schedule),
                benders: Some(state),
            })
        }
        Err(err) => {
            let status = match &err {
                BendersError::NoChanceFeasibleCommitment { .. } => RunStatus::Infeasible,
                BendersError::NonConvergence { .. } | BendersError::Stalled { .. } => {
                    RunStatus::NonConvergence
                }
                BendersError::MasterStatus { .. } => RunStatus::NonConvergence,
                BendersError::TimeLimit { .. } => RunStatus::TimeLimit,
                _ => return Err(err.into()),
            };
            log::warn!("benders on {}: {err}", instance.name);
            let state = err.state().cloned();
            report.status = status;
            if let Some(s) = &state {
                report.iterations = Some(s.iteration);
                if s.upper_bound.is_finite() {
                    report.objective = Some(s.upper_bound);
                    report.mip_gap = Some(s.gap());
                }
            }
            Ok(Run {
                report,
                schedule: state.as_ref().and_then(|s| s.incumbent.clone()),
                benders: state,
            })
        }
    }
}

/// One admissible indicator vector evaluated by the oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Combination {
    pub dropped: Vec<usize>,
    /// `None` when the restricted SUC is infeasible.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    /// `+inf` when no admissible vector is feasible.
    pub objective: f64,
    pub z: Vec<u8>,
    pub combinations: Vec<Combination>,
}

/// All index sets whose probability fits in `epsilon`, in lexicographic
/// order. Fails once more than `limit` sets are found.
pub fn admissible_sets(
    probabilities: &[f64],
    epsilon: f64,
    limit: usize,
) -> Result<Vec<Vec<usize>>, HarnessError> {
    fn extend(
        start: usize,
        used: f64,
        current: &mut Vec<usize>,
        p: &[f64],
        eps: f64,
        limit: usize,
        out: &mut Vec<Vec<usize>>,
    ) -> bool {
        out.push(current.clone());
        if out.len() > limit {
            return false;
        }
        for n in start..p.len() {
            if used + p[n] <= eps + 1e-9 {
                current.push(n);
                let ok = extend(n + 1, used + p[n], current, p, eps, limit, out);
                current.pop();
                if !ok {
                    return false;
                }
            }
        }
        true
    }
    let mut out = Vec::new();
    if !extend(
        0,
        0.0,
        &mut Vec::new(),
        probabilities,
        epsilon,
        limit,
        &mut out,
    ) {
        return Err(HarnessError::TooManyCombinations {
            count: out.len(),
            limit,
        });
    }
    Ok(out)
}

/// Enumerate every admissible indicator vector, solve the SUC over the
/// responsive scenarios of each, and return the cheapest.
pub fn exhaustive_oracle(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    epsilon: f64,
    backend: BackendKind,
) -> Result<OracleResult, HarnessError> {
    scenarios
        .check_dimensions(instance)
        .map_err(FormulationError::from)?;
    let sets = admissible_sets(&scenarios.probabilities, epsilon, ORACLE_LIMIT)?;
    let options = mip_options(instance);
    let combinations: Vec<Combination> = sets
        .into_par_iter()
        .map(|dropped| -> Result<Combination, HarnessError> {
            let responsive: Vec<usize> = (0..scenarios.len())
                .filter(|n| !dropped.contains(n))
                .collect();
            let uc = if responsive.is_empty() {
                build_first_stage(instance)?
            } else {
                // SUC has no recourse cost, so the renormalized weights only
                // serve the dimension check
                let mut kept = scenarios.subset(&responsive);
                let total: f64 = kept.probabilities.iter().sum();
                kept.probabilities.iter_mut().for_each(|p| *p /= total);
                build_suc(instance, &kept)?
            };
            let sol = backend.create().solve_mip(&uc.model, &options)?;
            let objective = sol.has_point().then_some(sol.objective);
            Ok(Combination { dropped, objective })
        })
        .collect::<Result<_, _>>()?;
    let best = combinations
        .iter()
        .filter_map(|c| c.objective.map(|o| (o, c)))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    let (objective, z) = match best {
        Some((o, c)) => {
            let mut z = vec![0u8; scenarios.len()];
            for &n in &c.dropped {
                z[n] = 1;
            }
            (o, z)
        }
        None => (f64::INFINITY, vec![1u8; scenarios.len()]),
    };
    Ok(OracleResult {
        objective,
        z,
        combinations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapStudy {
    /// Big-M row then bilinear row.
    pub rows: Vec<RunReport>,
    /// `IG_bilinear <= IG_bigm + 1e-9`, or `None` when a solve was not optimal.
    pub bilinear_tighter: Option<bool>,
}

/// Solve each CC reformulation as a MIP and as its LP relaxation; the
/// integrality gap is the ratio of the two optima.
pub fn integrality_gap_study(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    backend: BackendKind,
) -> Result<GapStudy, HarnessError> {
    let mut rows = Vec::new();
    for method in [Method::CcBigm, Method::CcBilinear] {
        let start = Instant::now();
        let mut run = run_method(method, instance, scenarios, backend)?;
        let uc = build(method, instance, scenarios)?;
        let lp = backend.create().solve_lp(&relax_binaries(&uc.model))?;
        run.report.wall_time = start.elapsed().as_secs_f64();
        if lp.is_optimal() {
            run.report.relaxation = Some(lp.objective);
            if run.report.status == RunStatus::Optimal {
                run.report.integrality_gap = run.report.objective.map(|mip| mip / lp.objective);
            }
        }
        rows.push(run.report);
    }
    let bilinear_tighter = match (rows[0].integrality_gap, rows[1].integrality_gap) {
        (Some(bigm), Some(bilinear)) => Some(bilinear <= bigm + 1e-9),
        _ => None,
    };
    Ok(GapStudy {
        rows,
        bilinear_tighter,
    })
}

/// Grid of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepGrid {
    /// Risk levels over the full scenario set.
    Epsilon(Vec<f64>),
    /// Leading prefixes of the scenario set, renormalized.
    Size(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<RunReport>,
    /// For risk-level grids: objectives non-increasing in `epsilon` within
    /// the MIP gap. `None` for size grids or when a row has no objective.
    pub monotone: Option<bool>,
}

pub fn sweep(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    grid: &SweepGrid,
    method: Method,
    backend: BackendKind,
) -> Result<SweepResult, HarnessError> {
    let mut rows = Vec::new();
    match grid {
        SweepGrid::Epsilon(levels) => {
            for &eps in levels {
                rows.push(
                    run_method(method, &instance.with_risk_level(eps), scenarios, backend)?.report,
                );
            }
        }
        SweepGrid::Size(sizes) => {
            for &n in sizes {
                let set = scenarios.truncated(n).map_err(FormulationError::from)?;
                rows.push(run_method(method, instance, &set, backend)?.report);
            }
        }
    }
    let monotone = match grid {
        SweepGrid::Epsilon(levels) => {
            let mut order: Vec<usize> = (0..levels.len()).collect();
            order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
            let objectives: Option<Vec<f64>> = order.iter().map(|&i| rows[i].objective).collect();
            objectives.map(|obj| {
                let tol = instance
                    .config
                    .mip_gap
                    .max(instance.config.benders_tolerance);
                obj.windows(2)
                    .all(|w| w[1] <= w[0] + tol * w[0].abs() + 1e-6)
            })
        }
        SweepGrid::Size(_) => None,
    };
    Ok(SweepResult { rows, monotone })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkResult {
    /// Big-M, bilinear, Benders, in that order.
    pub rows: Vec<RunReport>,
    /// Pairwise agreement within `tolerance` relative among rows that
    /// reached optimality; `None` if fewer than two did.
    pub agreement: Option<bool>,
    /// Benders wall time over the faster direct solve.
    pub time_ratio: Option<f64>,
}

/// Run both direct reformulations and Benders on identical inputs. With
/// `budget_factor`, Benders gets that multiple of the slower direct wall
/// time and stops with a time-limit row when it runs out.
pub fn benchmark(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    backend: BackendKind,
    tolerance: f64,
    budget_factor: Option<f64>,
) -> Result<BenchmarkResult, HarnessError> {
    let mut rows = Vec::new();
    for method in [Method::CcBigm, Method::CcBilinear] {
        rows.push(run_method(method, instance, scenarios, backend)?.report);
    }
    let slower = rows[0].wall_time.max(rows[1].wall_time);
    let options = BendersOptions {
        backend,
        time_budget: budget_factor.map(|f| Duration::from_secs_f64(f * slower)),
        ..BendersOptions::default()
    };
    rows.push(run_benders(instance, scenarios, &options)?.report);
    let optimal: Vec<f64> = rows
        .iter()
        .filter(|r| r.status == RunStatus::Optimal)
        .filter_map(|r| r.objective)
        .collect();
    let agreement = (optimal.len() >= 2).then(|| {
        optimal.iter().all(|&a| {
            optimal
                .iter()
                .all(|&b| relative_gap(a.min(b), a.max(b)) <= tolerance)
        })
    });
    let direct = rows[0].wall_time.min(rows[1].wall_time);
    let time_ratio = (direct > 0.0).then(|| rows[2].wall_time / direct);
    Ok(BenchmarkResult {
        rows,
        agreement,
        time_ratio,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Report rows as delimited text. The indicator vector is one string of
/// `0`/`1` characters.
pub fn write_report_csv<W: Write>(rows: &[RunReport], writer: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method",
        "instance",
        "scenarios",
        "epsilon",
        "relaxation_mode",
        "objective",
        "status",
        "wall_time_s",
        "iterations",
        "mip_gap",
        "relaxation",
        "integrality_gap",
        "z",
    ])?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            r.instance.clone(),
            r.scenarios.to_string(),
            r.epsilon.to_string(),
            r.relaxation_mode.clone(),
            opt(r.objective),
            r.status.to_string(),
            format!("{:.6}", r.wall_time),
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
            opt(r.mip_gap),
            opt(r.relaxation),
            opt(r.integrality_gap),
            r.z.iter().map(|b| char::from(b'0' + b)).collect(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json<W: Write, T: Serialize + ?Sized>(
    record: &T,
    writer: W,
) -> Result<(), HarnessError> {
    serde_json::to_writer_pretty(writer, record)?;
    Ok(())
}
