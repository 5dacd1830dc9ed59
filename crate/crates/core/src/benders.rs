//! Bilinear Benders decomposition: a master UC with scenario indicators and
//! McCormick-linearized feasibility cuts, one slack-minimizing feasibility
//! LP per scenario, and an upper-bound step that audits the incumbent.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::formulations::{
    add_second_stage_scenario, build_cc_bilinear, build_first_stage, FirstStageSolution,
    FirstStageVars, FormulationError, SecondStageMode, UcModel,
};
use crate::instance::{RelaxationMode, UCInstance};
use crate::model::{
    Backend, BackendKind, LinearModel, MipOptions, RowId, RowSense, SolveStatus, SolverError, VarId,
};
use crate::scenarios::ScenarioSet;

/// Slack below which a feasibility subproblem counts as satisfied, on top
/// of the configured threshold.
pub const SLACK_TOL: f64 = 1e-6;
/// Dual coefficients smaller than this are left out of cut rows.
const COEF_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum BendersError {
    #[error("no chance-feasible commitment: master problem infeasible at iteration {}", .state.iteration)]
    NoChanceFeasibleCommitment { state: Box<BendersState> },
    #[error("no convergence after {} iterations (LB {}, UB {})", .state.iteration, .state.lower_bound, .state.upper_bound)]
    NonConvergence { state: Box<BendersState> },
    #[error("time budget exhausted after {} iterations (LB {}, UB {})", .state.iteration, .state.lower_bound, .state.upper_bound)]
    TimeLimit { state: Box<BendersState> },
    #[error("stalled at iteration {}: no violated cut but gap {} above tolerance", .state.iteration, .state.gap())]
    Stalled { state: Box<BendersState> },
    #[error("master solve ended with status {status} at iteration {}", .state.iteration)]
    MasterStatus {
        status: SolveStatus,
        state: Box<BendersState>,
    },
    #[error("feasibility subproblem of scenario {scenario} returned {status}")]
    Subproblem {
        scenario: usize,
        status: SolveStatus,
    },
    #[error("cut requested for Psi = {psi} at threshold {threshold}")]
    BelowThreshold { psi: f64, threshold: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
}

impl BendersError {
    /// The loop state, for errors raised inside the loop.
    pub fn state(&self) -> Option<&BendersState> {
        match self {
            Self::NoChanceFeasibleCommitment { state }
            | Self::NonConvergence { state }
            | Self::TimeLimit { state }
            | Self::Stalled { state }
            | Self::MasterStatus { state, .. } => Some(state),
            _ => None,
        }
    }
}

/// Duals of the fixing rows of a feasibility subproblem, indexed `[g][t]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FixingDuals {
    /// `u` fixing.
    pub lambda: Vec<Vec<f64>>,
    /// `v` fixing.
    pub mu: Vec<Vec<f64>>,
    /// `y` fixing.
    pub rho: Vec<Vec<f64>>,
    /// `P` fixing.
    pub varphi: Vec<Vec<f64>>,
    /// `R+` fixing.
    pub phi: Vec<Vec<f64>>,
    /// `R-` fixing.
    pub psi: Vec<Vec<f64>>,
}

/// The six fixed first-stage families, in cut order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    U,
    V,
    Y,
    P,
    RUp,
    RDn,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::U,
        Family::V,
        Family::Y,
        Family::P,
        Family::RUp,
        Family::RDn,
    ];

    fn tag(self) -> &'static str {
        match self {
            Self::U => "u",
            Self::V => "v",
            Self::Y => "y",
            Self::P => "P",
            Self::RUp => "Rup",
            Self::RDn => "Rdn",
        }
    }

    fn values(self, fs: &FirstStageSolution) -> &Vec<Vec<f64>> {
        match self {
            Self::U => &fs.u,
            Self::V => &fs.v,
            Self::Y => &fs.y,
            Self::P => &fs.p,
            Self::RUp => &fs.r_up,
            Self::RDn => &fs.r_dn,
        }
    }

    fn vars(self, first: &FirstStageVars) -> &Vec<Vec<VarId>> {
        match self {
            Self::U => &first.u,
            Self::V => &first.v,
            Self::Y => &first.y,
            Self::P => &first.p,
            Self::RUp => &first.r_up,
            Self::RDn => &first.r_dn,
        }
    }

    /// Upper bound used by the McCormick envelope of `x z`.
    fn upper(self, instance: &UCInstance, g: usize) -> f64 {
        let unit = &instance.units[g];
        match self {
            Self::U | Self::V | Self::Y => 1.0,
            Self::P => unit.p_max,
            Self::RUp => unit.reserve_up_max,
            Self::RDn => unit.reserve_dn_max,
        }
    }
}

impl FixingDuals {
    pub fn family(&self, f: Family) -> &Vec<Vec<f64>> {
        match f {
            Family::U => &self.lambda,
            Family::V => &self.mu,
            Family::Y => &self.rho,
            Family::P => &self.varphi,
            Family::RUp => &self.phi,
            Family::RDn => &self.psi,
        }
    }

    fn family_mut(&mut self, f: Family) -> &mut Vec<Vec<f64>> {
        match f {
            Family::U => &mut self.lambda,
            Family::V => &mut self.mu,
            Family::Y => &mut self.rho,
            Family::P => &mut self.varphi,
            Family::RUp => &mut self.phi,
            Family::RDn => &mut self.psi,
        }
    }
}

/// Which rows of a scenario the feasibility subproblem measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FspScope {
    /// Balance and line slacks both count.
    Full,
    /// Only line slacks count; the balance is left free.
    LinesOnly,
    /// Only the slacks of one period count. Every other period is relaxed,
    /// so the optimum never exceeds the full one.
    Period(usize),
}

impl FspScope {
    /// Whether a balance (`balance = true`) or line slack of period `t`
    /// enters the objective.
    pub fn counts(self, balance: bool, t: usize) -> bool {
        match self {
            Self::Full => true,
            Self::LinesOnly => !balance,
            Self::Period(p) => p == t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityResult {
    pub scenario: usize,
    pub scope: FspScope,
    /// Optimal total slack.
    pub psi: f64,
    /// `eta1+` per period.
    pub balance_up: Vec<f64>,
    /// `eta1-` per period.
    pub balance_dn: Vec<f64>,
    /// `eta2` per `[l][t]`.
    pub line_slack: Vec<Vec<f64>>,
    pub duals: FixingDuals,
}

impl FeasibilityResult {
    /// Sum of the slacks the objective counts.
    pub fn slack_total(&self) -> f64 {
        let mut total = 0.0;
        for t in 0..self.balance_up.len() {
            if self.scope.counts(true, t) {
                total += self.balance_up[t] + self.balance_dn[t];
            }
            if self.scope.counts(false, t) {
                total += self.line_slack.iter().map(|row| row[t]).sum::<f64>();
            }
        }
        total
    }

    /// Periods with a positive counted slack.
    pub fn violated_periods(&self) -> Vec<usize> {
        (0..self.balance_up.len())
            .filter(|&t| {
                let lines: f64 = self.line_slack.iter().map(|row| row[t]).sum();
                self.balance_up[t] + self.balance_dn[t] + lines > SLACK_TOL
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityCut {
    pub scenario: usize,
    pub iteration: usize,
    /// `Phi`: optimal slack at the snapshot.
    pub phi: f64,
    pub duals: FixingDuals,
    pub snapshot: FirstStageSolution,
    /// Subproblem the cut came from.
    pub scope: FspScope,
    /// Conditional cuts vanish when `z_n = 1`. Line-only cuts of the
    /// paper-literal mode bind for every `z`.
    pub conditional: bool,
}

impl FeasibilityCut {
    /// `Phi + sum dual (x - x^)`.
    pub fn linear_part(&self, x: &FirstStageSolution) -> f64 {
        let mut value = self.phi;
        for f in Family::ALL {
            let duals = self.duals.family(f);
            let now = f.values(x);
            let then = f.values(&self.snapshot);
            for g in 0..duals.len() {
                for t in 0..duals[g].len() {
                    value += duals[g][t] * (now[g][t] - then[g][t]);
                }
            }
        }
        value
    }

    /// Left-hand side of the cut, `(Phi + sum dual (x - x^)) (1 - z)`;
    /// feasible points keep it `<= 0`.
    pub fn evaluate(&self, x: &FirstStageSolution, z: f64) -> f64 {
        let scale = if self.conditional { 1.0 - z } else { 1.0 };
        self.linear_part(x) * scale
    }
}

/// Build the feasibility LP of scenario `n` with the first stage fixed at
/// `fixed`. The first-stage variables are free and pinned by equality rows
/// so that the fixing duals are the sensitivities of the total slack.
fn build_fsp(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    n: usize,
    fixed: &FirstStageSolution,
    scope: FspScope,
) -> Result<
    (
        LinearModel,
        crate::formulations::ScenarioVars,
        BTreeMap<(Family, usize, usize), RowId>,
    ),
    FormulationError,
> {
    let mut model = LinearModel::new();
    let mut first = FirstStageVars::default();
    let mut fixing = BTreeMap::new();
    for f in Family::ALL {
        let grid: Vec<Vec<VarId>> = instance
            .units
            .iter()
            .enumerate()
            .map(|(g, unit)| {
                (0..instance.horizon)
                    .map(|t| {
                        let var = model.add_continuous(
                            format!("{}[{},{}]", f.tag(), unit.id, t + 1),
                            f64::NEG_INFINITY,
                            f64::INFINITY,
                        );
                        let row = model.add_row(
                            format!("fix{}[{},{}]", f.tag(), unit.id, t + 1),
                            [(var, 1.0)],
                            RowSense::Eq,
                            f.values(fixed)[g][t],
                        );
                        fixing.insert((f, g, t), row);
                        var
                    })
                    .collect()
            })
            .collect();
        match f {
            Family::U => first.u = grid,
            Family::V => first.v = grid,
            Family::Y => first.y = grid,
            Family::P => first.p = grid,
            Family::RUp => first.r_up = grid,
            Family::RDn => first.r_dn = grid,
        }
    }
    let sv = add_second_stage_scenario(
        &mut model,
        instance,
        &first,
        scenarios,
        n,
        SecondStageMode::Slacked,
    )?;
    for t in 0..instance.horizon {
        if !scope.counts(true, t) {
            model.set_cost(sv.balance_up[t], 0.0);
            model.set_cost(sv.balance_dn[t], 0.0);
        }
        if !scope.counts(false, t) {
            for row in &sv.line_slack {
                model.set_cost(row[t], 0.0);
            }
        }
    }
    Ok((model, sv, fixing))
}

/// Solve the feasibility subproblem of scenario `n` (0-based) at `fixed`.
pub fn solve_fsp_with(
    backend: &mut dyn Backend,
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    n: usize,
    fixed: &FirstStageSolution,
    scope: FspScope,
) -> Result<FeasibilityResult, BendersError> {
    let (model, sv, fixing) = build_fsp(instance, scenarios, n, fixed, scope)?;
    let sol = backend.solve_lp(&model)?;
    if !sol.is_optimal() {
        return Err(BendersError::Subproblem {
            scenario: n,
            status: sol.status,
        });
    }
    let g_count = instance.units.len();
    let mut duals = FixingDuals::default();
    for f in Family::ALL {
        *duals.family_mut(f) = (0..g_count)
            .map(|g| {
                (0..instance.horizon)
                    .map(|t| sol.dual(fixing[&(f, g, t)]))
                    .collect()
            })
            .collect();
    }
    let values = |vars: &[VarId]| -> Vec<f64> { vars.iter().map(|&v| sol.value(v)).collect() };
    let result = FeasibilityResult {
        scenario: n,
        scope,
        psi: sol.objective.max(0.0),
        balance_up: values(&sv.balance_up),
        balance_dn: values(&sv.balance_dn),
        line_slack: sv.line_slack.iter().map(|row| values(row)).collect(),
        duals,
    };
    Ok(result)
}

/// [`solve_fsp_with`] on the default backend, measuring balance and lines.
pub fn solve_fsp(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    n: usize,
    fixed: &FirstStageSolution,
) -> Result<FeasibilityResult, BendersError> {
    solve_fsp_with(
        BackendKind::default().create().as_mut(),
        instance,
        scenarios,
        n,
        fixed,
        FspScope::Full,
    )
}

/// Turn a violated subproblem into a cut. Fails when `Psi` does not exceed
/// `threshold`.
pub fn make_cut(
    result: &FeasibilityResult,
    fixed: &FirstStageSolution,
    iteration: usize,
    threshold: f64,
) -> Result<FeasibilityCut, BendersError> {
    if result.psi <= threshold {
        return Err(BendersError::BelowThreshold {
            psi: result.psi,
            threshold,
        });
    }
    Ok(FeasibilityCut {
        scenario: result.scenario,
        iteration,
        phi: result.psi,
        duals: result.duals.clone(),
        snapshot: fixed.clone(),
        scope: result.scope,
        conditional: result.scope != FspScope::LinesOnly,
    })
}

/// The master problem and the handles needed to read it back.
#[derive(Debug, Clone)]
pub struct MasterModel {
    pub uc: UcModel,
    /// McCormick product variables `x z_n`, keyed by `(family, g, t, n)`.
    pub products: BTreeMap<(Family, usize, usize, usize), VarId>,
    pub cut_rows: Vec<RowId>,
}

/// First stage, scenario indicators with the budget row, and one linearized
/// row per cut. Products `x z_n` exist only where some cut has a nonzero
/// coefficient.
pub fn build_master(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    cuts: &[FeasibilityCut],
) -> Result<MasterModel, FormulationError> {
    scenarios.check_dimensions(instance)?;
    let mut uc = build_first_stage(instance)?;
    uc.z = (0..scenarios.len())
        .map(|n| uc.model.add_binary(format!("z[{}]", n + 1)))
        .collect();
    uc.model.add_row(
        "budget",
        uc.z.iter()
            .zip(&scenarios.probabilities)
            .map(|(&z, &pi)| (z, pi)),
        RowSense::Le,
        instance.risk_level,
    );

    let mut products = BTreeMap::new();
    let mut cut_rows = Vec::with_capacity(cuts.len());
    for (k, cut) in cuts.iter().enumerate() {
        let n = cut.scenario;
        let z = uc.z[n];
        // Phi + sum c (x - x^) <= 0 when z = 0; with K = Phi - sum c x^ and
        // x~ = x z this is  sum c x - sum c x~ - K z <= -K.
        let mut constant = cut.phi;
        let mut terms = Vec::new();
        for f in Family::ALL {
            let duals = cut.duals.family(f);
            let vars = f.vars(&uc.first);
            let snap = f.values(&cut.snapshot);
            for g in 0..duals.len() {
                for t in 0..duals[g].len() {
                    let c = duals[g][t];
                    if c.abs() <= COEF_TOL {
                        continue;
                    }
                    constant -= c * snap[g][t];
                    terms.push((vars[g][t], c));
                    if cut.conditional {
                        let prod = *products.entry((f, g, t, n)).or_insert_with(|| {
                            add_product(&mut uc.model, instance, f, g, t, n, vars[g][t], z)
                        });
                        terms.push((prod, -c));
                    }
                }
            }
        }
        if cut.conditional {
            terms.push((z, -constant));
        }
        let row = uc.model.add_row(
            format!("cut[{},{},{}]", k + 1, cut.iteration, n + 1),
            terms,
            RowSense::Le,
            -constant,
        );
        cut_rows.push(row);
    }
    Ok(MasterModel {
        uc,
        products,
        cut_rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn add_product(
    model: &mut LinearModel,
    instance: &UCInstance,
    f: Family,
    g: usize,
    t: usize,
    n: usize,
    x: VarId,
    z: VarId,
) -> VarId {
    let upper = f.upper(instance, g);
    let id = &instance.units[g].id;
    let name = |p: &str| format!("{p}{}[{id},{},{}]", f.tag(), t + 1, n + 1);
    let prod = model.add_continuous(name("x"), 0.0, f64::INFINITY);
    model.add_row(name("mca"), [(prod, 1.0), (z, -upper)], RowSense::Le, 0.0);
    model.add_row(name("mcb"), [(prod, 1.0), (x, -1.0)], RowSense::Le, 0.0);
    model.add_row(
        name("mcc"),
        [(prod, 1.0), (x, -1.0), (z, -upper)],
        RowSense::Ge,
        -upper,
    );
    prod
}

/// Per-iteration record of the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub gap: f64,
    pub cuts_added: usize,
    /// Scenarios whose subproblem reported positive slack at the master point.
    pub fsp_violations: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BendersState {
    pub iteration: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub cuts: Vec<FeasibilityCut>,
    pub incumbent: Option<FirstStageSolution>,
    pub log: Vec<IterationRecord>,
    pub tolerance: f64,
}

impl BendersState {
    fn new(tolerance: f64) -> Self {
        Self {
            iteration: 0,
            lower_bound: f64::NEG_INFINITY,
            upper_bound: f64::INFINITY,
            cuts: Vec::new(),
            incumbent: None,
            log: Vec::new(),
            tolerance,
        }
    }

    pub fn gap(&self) -> f64 {
        relative_gap(self.lower_bound, self.upper_bound)
    }

    pub fn converged(&self) -> bool {
        self.gap() <= self.tolerance
    }

    /// Iteration log as delimited text.
    pub fn write_log<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "iteration",
            "lower_bound",
            "upper_bound",
            "gap",
            "cuts_added",
            "fsp_violations",
            "wall_time_s",
        ])?;
        for r in &self.log {
            w.write_record([
                r.iteration.to_string(),
                r.lower_bound.to_string(),
                r.upper_bound.to_string(),
                r.gap.to_string(),
                r.cuts_added.to_string(),
                r.fsp_violations.to_string(),
                format!("{:.6}", r.wall_time.as_secs_f64()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(UB - LB) / |LB|`, or the absolute gap when `|LB| < 1`.
pub fn relative_gap(lower: f64, upper: f64) -> f64 {
    if !upper.is_finite() || !lower.is_finite() {
        return f64::INFINITY;
    }
    let diff = (upper - lower).max(0.0);
    if lower.abs() < 1.0 {
        diff
    } else {
        diff / lower.abs()
    }
}

/// Outcome of the upper-bound step.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperBound {
    /// `+inf` when no admissible indicator vector accommodates the schedule.
    pub value: f64,
    /// Indicator vector realizing `value` (all ones when infeasible).
    pub z: Vec<f64>,
    /// Total slack per scenario at the schedule.
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BendersOptions {
    pub backend: BackendKind,
    /// Solve the subproblems of one iteration on the rayon pool.
    pub parallel: bool,
    /// Besides the cut of each violated scenario, add one cut per violated
    /// period from a subproblem that only counts that period's slacks.
    pub period_cuts: bool,
    /// Per period, keep only the period cuts of the scenarios with the
    /// largest shortfall, one more than the budget can drop. Weaker ones
    /// reappear in a later iteration if they become binding.
    pub limit_period_cuts: bool,
    /// Solve early masters to a loose gap (a fifth of the current
    /// decomposition gap, at most 1e-2) and tighten as the bounds close, or
    /// at once after an iteration without cuts. The lower bound reads the
    /// master's dual bound, so it stays valid.
    pub adaptive_master_gap: bool,
    /// Wall-clock budget for the whole loop. The master's time limit is cut
    /// to what remains.
    pub time_budget: Option<Duration>,
}

impl BendersOptions {
    fn period_cut_limit(&self, scenarios: &ScenarioSet, epsilon: f64) -> Option<usize> {
        if !self.limit_period_cuts {
            return None;
        }
        let mut probs = scenarios.probabilities.clone();
        probs.sort_by(f64::total_cmp);
        let mut mass = 0.0;
        let mut droppable = 0;
        for p in probs {
            mass += p;
            if mass > epsilon + 1e-9 {
                break;
            }
            droppable += 1;
        }
        Some(droppable + 1)
    }
}

/// Master gap for the next solve. After an iteration without new cuts only
/// the master's own gap keeps the bounds apart, so it goes to the target.
fn master_gap(options: &BendersOptions, target: f64, current: f64, stalled: bool) -> f64 {
    if !options.adaptive_master_gap || stalled {
        return target;
    }
    if !current.is_finite() {
        return target.max(1e-2);
    }
    (current / 5.0).clamp(target, target.max(1e-2))
}

/// Keep, for every period, the `keep` results with the largest period slack.
fn strongest_per_period(results: Vec<FeasibilityResult>, keep: usize) -> Vec<FeasibilityResult> {
    let mut by_period: BTreeMap<usize, Vec<FeasibilityResult>> = BTreeMap::new();
    for r in results {
        if let FspScope::Period(t) = r.scope {
            by_period.entry(t).or_default().push(r);
        }
    }
    by_period
        .into_values()
        .flat_map(|mut rs| {
            rs.sort_by(|a, b| b.psi.total_cmp(&a.psi).then(a.scenario.cmp(&b.scenario)));
            rs.truncate(keep);
            rs
        })
        .collect()
}

impl Default for BendersOptions {
    fn default() -> Self {
        Self {
            backend: BackendKind::default(),
            parallel: true,
            period_cuts: true,
            limit_period_cuts: true,
            adaptive_master_gap: true,
            time_budget: None,
        }
    }
}

fn run_fsps(
    options: &BendersOptions,
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    jobs: &[(usize, FspScope)],
    fixed: &FirstStageSolution,
) -> Result<Vec<FeasibilityResult>, BendersError> {
    let solve = |&(n, scope): &(usize, FspScope)| {
        let mut backend = options.backend.create();
        solve_fsp_with(backend.as_mut(), instance, scenarios, n, fixed, scope)
    };
    if options.parallel {
        jobs.par_iter().map(solve).collect()
    } else {
        jobs.iter().map(solve).collect()
    }
}

fn with_scope(scenarios: &[usize], scope: FspScope) -> Vec<(usize, FspScope)> {
    scenarios.iter().map(|&n| (n, scope)).collect()
}

fn violated(psi: f64, threshold: f64) -> bool {
    psi > threshold + SLACK_TOL
}

/// Upper-bound step for a fixed schedule. The objective has no recourse
/// term, so the step reduces to deciding whether the scenarios the schedule
/// cannot accommodate fit in the risk budget; in paper-literal mode those
/// dropped scenarios must still respect the line limits.
pub fn upper_bound_step_with(
    options: &BendersOptions,
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    fixed: &FirstStageSolution,
    known: &BTreeMap<usize, f64>,
) -> Result<UpperBound, BendersError> {
    let threshold = instance.config.feasibility_threshold;
    let missing: Vec<usize> = (0..scenarios.len())
        .filter(|n| !known.contains_key(n))
        .collect();
    let mut psi: BTreeMap<usize, f64> = known.clone();
    for r in run_fsps(
        options,
        instance,
        scenarios,
        &with_scope(&missing, FspScope::Full),
        fixed,
    )? {
        psi.insert(r.scenario, r.psi);
    }
    let psi: Vec<f64> = psi.into_values().collect();
    let forced: Vec<usize> = (0..psi.len())
        .filter(|&n| violated(psi[n], threshold))
        .collect();
    let budget: f64 = forced.iter().map(|&n| scenarios.probabilities[n]).sum();
    let mut feasible = budget <= instance.risk_level + 1e-9;
    if feasible && instance.config.relaxation_mode == RelaxationMode::PaperLiteral {
        let lines = run_fsps(
            options,
            instance,
            scenarios,
            &with_scope(&forced, FspScope::LinesOnly),
            fixed,
        )?;
        feasible = lines.iter().all(|r| !violated(r.psi, threshold));
    }
    if !feasible {
        return Ok(UpperBound {
            value: f64::INFINITY,
            z: vec![1.0; psi.len()],
            psi,
        });
    }
    let mut z = vec![0.0; psi.len()];
    for &n in &forced {
        z[n] = 1.0;
    }
    Ok(UpperBound {
        value: fixed.objective,
        z,
        psi,
    })
}

/// [`upper_bound_step_with`] on the default backend.
pub fn upper_bound_step(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    fixed: &FirstStageSolution,
) -> Result<UpperBound, BendersError> {
    upper_bound_step_with(
        &BendersOptions::default(),
        instance,
        scenarios,
        fixed,
        &BTreeMap::new(),
    )
}

/// The upper-bound step as one MIP: the bilinear extensive model with the
/// first stage pinned at `fixed`. Used to cross-check the decomposed step.
pub fn upper_bound_step_extensive(
    backend: &mut dyn Backend,
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    fixed: &FirstStageSolution,
) -> Result<UpperBound, BendersError> {
    let mut uc = build_cc_bilinear(instance, scenarios)?;
    for f in Family::ALL {
        let vars = f.vars(&uc.first).clone();
        for (g, row) in vars.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                uc.model.fix(v, f.values(fixed)[g][t]);
            }
        }
    }
    for (g, segs) in uc.first.delta.clone().iter().enumerate() {
        for (s, row) in segs.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                uc.model.fix(v, fixed.delta[g][s][t]);
            }
        }
    }
    let gap = instance.config.mip_gap;
    let sol = backend.solve_mip(&uc.model, &MipOptions::new(gap, None))?;
    Ok(match sol.status {
        SolveStatus::Infeasible => UpperBound {
            value: f64::INFINITY,
            z: vec![1.0; scenarios.len()],
            psi: Vec::new(),
        },
        _ if sol.has_point() => UpperBound {
            value: sol.objective,
            z: uc.z.iter().map(|&z| sol.value(z)).collect(),
            psi: Vec::new(),
        },
        status => {
            return Err(BendersError::Subproblem {
                scenario: usize::MAX,
                status,
            })
        }
    })
}

/// Run the decomposition with default options.
pub fn benders_solve(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
) -> Result<(FirstStageSolution, BendersState), BendersError> {
    benders_solve_with(instance, scenarios, &BendersOptions::default())
}

pub fn benders_solve_with(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    options: &BendersOptions,
) -> Result<(FirstStageSolution, BendersState), BendersError> {
    let cfg = &instance.config;
    let sigma = cfg.benders_tolerance;
    let threshold = cfg.feasibility_threshold;
    let target_gap = cfg.mip_gap.min(sigma / 10.0);
    let time_limit = cfg.time_limit.map(Duration::from_secs_f64);
    let mut state = BendersState::new(sigma);
    let mut master_backend = options.backend.create();
    let start = Instant::now();

    while state.iteration < cfg.max_iterations {
        let remaining = options
            .time_budget
            .map(|b| b.saturating_sub(start.elapsed()));
        if remaining == Some(Duration::ZERO) {
            return Err(BendersError::TimeLimit {
                state: Box::new(state),
            });
        }
        state.iteration += 1;
        let tau = state.iteration;

        // master
        let master = build_master(instance, scenarios, &state.cuts)?;
        let limit = match (time_limit, remaining) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let stalled = state.log.last().is_some_and(|r| r.cuts_added == 0);
        let mip = MipOptions::new(master_gap(options, target_gap, state.gap(), stalled), limit);
        let sol = master_backend.solve_mip(&master.uc.model, &mip)?;
        match sol.status {
            SolveStatus::TimeLimit if !sol.has_point() && remaining.is_some() => {
                return Err(BendersError::TimeLimit {
                    state: Box::new(state),
                });
            }
            SolveStatus::Infeasible => {
                return Err(BendersError::NoChanceFeasibleCommitment {
                    state: Box::new(state),
                });
            }
            SolveStatus::Optimal | SolveStatus::FeasibleGap | SolveStatus::TimeLimit
                if sol.has_point() => {}
            status => {
                return Err(BendersError::MasterStatus {
                    status,
                    state: Box::new(state),
                })
            }
        }
        let xhat = master.uc.extract(&sol);
        let bound = sol.best_bound.unwrap_or(sol.objective).min(sol.objective);
        state.lower_bound = state.lower_bound.max(bound);

        // feasibility subproblems at the master point
        let responsive: Vec<usize> = (0..scenarios.len()).filter(|&n| xhat.z[n] < 0.5).collect();
        let results = run_fsps(
            options,
            instance,
            scenarios,
            &with_scope(&responsive, FspScope::Full),
            &xhat,
        )?;
        let mut known = BTreeMap::new();
        let mut new_cuts = Vec::new();
        let mut period_jobs = Vec::new();
        for r in &results {
            known.insert(r.scenario, r.psi);
            if violated(r.psi, threshold) {
                new_cuts.push(make_cut(r, &xhat, tau, threshold)?);
                let periods = r.violated_periods();
                if options.period_cuts && periods.len() > 1 {
                    period_jobs.extend(
                        periods
                            .into_iter()
                            .map(|t| (r.scenario, FspScope::Period(t))),
                    );
                }
            }
        }
        let fsp_violations = new_cuts.len();
        let mut period_results: Vec<FeasibilityResult> =
            run_fsps(options, instance, scenarios, &period_jobs, &xhat)?
                .into_iter()
                .filter(|r| violated(r.psi, threshold))
                .collect();
        if let Some(keep) = options.period_cut_limit(scenarios, instance.risk_level) {
            period_results = strongest_per_period(period_results, keep);
        }
        for r in &period_results {
            new_cuts.push(make_cut(r, &xhat, tau, threshold)?);
        }
        // scenario-major order, the full cut of a scenario before its period cuts
        new_cuts.sort_by_key(|c| c.scenario);
        if cfg.relaxation_mode == RelaxationMode::PaperLiteral {
            let dropped: Vec<usize> = (0..scenarios.len()).filter(|&n| xhat.z[n] >= 0.5).collect();
            for r in run_fsps(
                options,
                instance,
                scenarios,
                &with_scope(&dropped, FspScope::LinesOnly),
                &xhat,
            )? {
                if violated(r.psi, threshold) {
                    new_cuts.push(make_cut(&r, &xhat, tau, threshold)?);
                }
            }
        }

        // upper bound
        let ub = upper_bound_step_with(options, instance, scenarios, &xhat, &known)?;
        if ub.value < state.upper_bound {
            state.upper_bound = ub.value;
            let mut incumbent = xhat.clone();
            incumbent.z = ub.z.clone();
            state.incumbent = Some(incumbent);
        }

        let cuts_added = new_cuts.len();
        state.cuts.extend(new_cuts);
        state.log.push(IterationRecord {
            iteration: tau,
            lower_bound: state.lower_bound,
            upper_bound: state.upper_bound,
            gap: state.gap(),
            cuts_added,
            fsp_violations,
            wall_time: start.elapsed(),
        });
        log::info!(
            "benders iteration {tau}: LB {:.4} UB {:.4} gap {:.3e} cuts {cuts_added}",
            state.lower_bound,
            state.upper_bound,
            state.gap()
        );

        if state.converged() {
            let incumbent = state.incumbent.clone().expect("finite UB has an incumbent");
            return Ok((incumbent, state));
        }
        // a loose master can return a feasible point with the gap still
        // open; the next master is solved tighter
        if cuts_added == 0 && mip.gap <= target_gap && sol.status != SolveStatus::TimeLimit {
            return Err(BendersError::Stalled {
                state: Box::new(state),
            });
        }
    }
    Err(BendersError::NonConvergence {
        state: Box::new(state),
    })
}
