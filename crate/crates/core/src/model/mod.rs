//! Solver-agnostic mixed-integer linear model and the backend adapter
//! contract.
//!
//! Dual values follow one convention across backends: the dual of a row is
//! the sensitivity of the (minimized) objective to its right-hand side,
//! `d obj / d rhs`. A binding `>=` row of a minimization therefore has a
//! non-negative dual and a binding `<=` row a non-positive one.

use std::collections::HashMap;
use std::fmt;
use std::time::Duration;

mod branch_bound;
#[cfg(feature = "highs")]
mod highs_backend;
mod lp_format;
mod simplex;

pub use branch_bound::BranchAndBound;
#[cfg(feature = "highs")]
pub use highs_backend::HighsBackend;
pub use lp_format::write_lp;
pub use simplex::DenseSimplex;

/// Primal feasibility tolerance shared by the bundled backends.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId(usize);

impl RowId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for RowSense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Le => "<=",
            Self::Eq => "=",
            Self::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, a)| a * x[v.0]).sum()
    }
}

/// Minimization model `min c'x + k` over rows and variable bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearModel {
    vars: Vec<Variable>,
    rows: Vec<Constraint>,
    objective: Vec<f64>,
    objective_constant: f64,
    var_index: HashMap<String, VarId>,
    row_index: HashMap<String, RowId>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("duplicate name {0}")]
    DuplicateName(String),
    #[error("variable {0} has empty or invalid bounds")]
    Bounds(String),
    #[error("row {0} has a non-finite coefficient or right-hand side")]
    NonFinite(String),
}

impl LinearModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declare a variable. Binary bounds are clipped to `[0, 1]`.
    ///
    /// Panics when the name is already taken: builders generate names
    /// deterministically, so a clash is a construction bug.
    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        kind: VarKind,
        cost: f64,
    ) -> VarId {
        let name = name.into();
        let id = VarId(self.vars.len());
        assert!(
            self.var_index.insert(name.clone(), id).is_none(),
            "duplicate variable name {name}"
        );
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            VarKind::Continuous => (lower, upper),
        };
        self.vars.push(Variable {
            name,
            lower,
            upper,
            kind,
        });
        self.objective.push(cost);
        id
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, lower, upper, VarKind::Continuous, 0.0)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, 1.0, VarKind::Binary, 0.0)
    }

    /// Add a row; repeated variables are merged and zero coefficients dropped.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        terms: impl IntoIterator<Item = (VarId, f64)>,
        sense: RowSense,
        rhs: f64,
    ) -> RowId {
        let name = name.into();
        let id = RowId(self.rows.len());
        assert!(
            self.row_index.insert(name.clone(), id).is_none(),
            "duplicate row name {name}"
        );
        let mut merged: Vec<(VarId, f64)> = Vec::new();
        for (v, a) in terms {
            assert!(
                v.0 < self.vars.len(),
                "row {name} references undeclared variable"
            );
            match merged.iter_mut().find(|(w, _)| *w == v) {
                Some(entry) => entry.1 += a,
                None => merged.push((v, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0.0);
        self.rows.push(Constraint {
            name,
            terms: merged,
            sense,
            rhs,
        });
        id
    }

    pub fn set_cost(&mut self, var: VarId, cost: f64) {
        self.objective[var.0] = cost;
    }

    pub fn add_cost(&mut self, var: VarId, cost: f64) {
        self.objective[var.0] += cost;
    }

    pub fn add_objective_constant(&mut self, value: f64) {
        self.objective_constant += value;
    }

    pub fn set_bounds(&mut self, var: VarId, lower: f64, upper: f64) {
        let v = &mut self.vars[var.0];
        v.lower = lower;
        v.upper = upper;
    }

    /// Fix a variable at `value` through its bounds.
    pub fn fix(&mut self, var: VarId, value: f64) {
        self.set_bounds(var, value, value);
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn rows(&self) -> &[Constraint] {
        &self.rows
    }

    pub fn row(&self, id: RowId) -> &Constraint {
        &self.rows[id.0]
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn objective_constant(&self) -> f64 {
        self.objective_constant
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.var_index.get(name).copied()
    }

    pub fn row_by_name(&self, name: &str) -> Option<RowId> {
        self.row_index.get(name).copied()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn has_binaries(&self) -> bool {
        self.vars.iter().any(|v| v.kind == VarKind::Binary)
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| VarId(i))
    }

    pub fn evaluate_objective(&self, x: &[f64]) -> f64 {
        self.objective_constant
            + self
                .objective
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = self
            .vars
            .iter()
            .zip(x)
            .map(|(v, &val)| (v.lower - val).max(val - v.upper).max(0.0));
        let rows = self.rows.iter().map(|r| {
            let act = r.activity(x);
            match r.sense {
                RowSense::Le => (act - r.rhs).max(0.0),
                RowSense::Ge => (r.rhs - act).max(0.0),
                RowSense::Eq => (act - r.rhs).abs(),
            }
        });
        bounds.chain(rows).fold(0.0, f64::max)
    }

    /// Structural checks a backend relies on.
    pub fn validate(&self) -> Result<(), ModelError> {
        for v in &self.vars {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(ModelError::Bounds(v.name.clone()));
            }
            if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0) {
                return Err(ModelError::Bounds(v.name.clone()));
            }
        }
        for r in &self.rows {
            if !r.rhs.is_finite() || r.terms.iter().any(|(_, a)| !a.is_finite()) {
                return Err(ModelError::NonFinite(r.name.clone()));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) || !self.objective_constant.is_finite() {
            return Err(ModelError::NonFinite("objective".into()));
        }
        Ok(())
    }
}

/// Every binary variable becomes continuous on its `[0, 1]` bounds.
pub fn relax_binaries(model: &LinearModel) -> LinearModel {
    let mut out = model.clone();
    for v in &mut out.vars {
        v.kind = VarKind::Continuous;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Stopped with an incumbent whose proven gap exceeds the target.
    FeasibleGap,
    Infeasible,
    Unbounded,
    TimeLimit,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Optimal => "optimal",
            Self::FeasibleGap => "feasible-gap",
            Self::Infeasible => "infeasible",
            Self::Unbounded => "unbounded",
            Self::TimeLimit => "time-limit",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    /// Objective of the returned point; `+inf` when there is none.
    pub objective: f64,
    /// Primal values indexed by [`VarId`]; empty when there is no point.
    pub primal: Vec<f64>,
    /// Row duals indexed by [`RowId`] (LP solves only).
    pub duals: Option<Vec<f64>>,
    /// Proven relative gap (MIP solves only).
    pub mip_gap: Option<f64>,
    /// Proven lower bound on the optimum (MIP solves only).
    pub best_bound: Option<f64>,
    pub wall_time: Duration,
}

impl Solution {
    pub fn without_point(status: SolveStatus, wall_time: Duration) -> Self {
        Self {
            status,
            objective: f64::INFINITY,
            primal: Vec::new(),
            duals: None,
            mip_gap: None,
            best_bound: None,
            wall_time,
        }
    }

    pub fn has_point(&self) -> bool {
        !self.primal.is_empty()
    }

    pub fn value(&self, var: VarId) -> f64 {
        self.primal[var.0]
    }

    pub fn dual(&self, row: RowId) -> f64 {
        self.duals.as_ref().map_or(0.0, |d| d[row.0])
    }

    pub fn value_by_name(&self, model: &LinearModel, name: &str) -> Option<f64> {
        model.var_by_name(name).map(|v| self.primal[v.0])
    }

    pub fn dual_by_name(&self, model: &LinearModel, name: &str) -> Option<f64> {
        let row = model.row_by_name(name)?;
        self.duals.as_ref().map(|d| d[row.0])
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MipOptions {
    /// Relative optimality gap at which the search stops.
    pub gap: f64,
    pub time_limit: Option<Duration>,
}

impl Default for MipOptions {
    fn default() -> Self {
        Self {
            gap: 1e-4,
            time_limit: None,
        }
    }
}

impl MipOptions {
    pub fn new(gap: f64, time_limit: Option<Duration>) -> Self {
        Self { gap, time_limit }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("LP solve requested for a model with binary variables")]
    HasBinaries,
    #[error("{backend} failed: {message}")]
    Backend {
        backend: &'static str,
        message: String,
    },
}

/// A linear / mixed-integer solver. Instances are not assumed reentrant:
/// concurrent solves each need their own backend.
pub trait Backend: Send {
    fn name(&self) -> &'static str;

    /// Solve a pure LP, returning primal values and row duals.
    fn solve_lp(&mut self, model: &LinearModel) -> Result<Solution, SolverError>;

    /// Solve a MIP to the requested relative gap.
    fn solve_mip(
        &mut self,
        model: &LinearModel,
        options: &MipOptions,
    ) -> Result<Solution, SolverError>;
}

/// Selects a bundled backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendKind {
    /// HiGHS, linked in-process.
    #[cfg(feature = "highs")]
    Highs,
    /// Dense bounded simplex with branch-and-bound, pure Rust. Intended for
    /// small models and cross-checks.
    Native,
}

impl Default for BackendKind {
    fn default() -> Self {
        #[cfg(feature = "highs")]
        {
            Self::Highs
        }
        #[cfg(not(feature = "highs"))]
        {
            Self::Native
        }
    }
}

impl BackendKind {
    pub fn create(self) -> Box<dyn Backend> {
        match self {
            #[cfg(feature = "highs")]
            Self::Highs => Box::new(HighsBackend::default()),
            Self::Native => Box::new(BranchAndBound::default()),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            #[cfg(feature = "highs")]
            Self::Highs => "highs",
            Self::Native => "native",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            #[cfg(feature = "highs")]
            "highs" => Ok(Self::Highs),
            "native" => Ok(Self::Native),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

/// Solve a MIP with the default backend.
pub fn solve_mip(
    model: &LinearModel,
    gap: f64,
    time_limit: Option<Duration>,
) -> Result<Solution, SolverError> {
    BackendKind::default()
        .create()
        .solve_mip(model, &MipOptions::new(gap, time_limit))
}

/// Solve an LP with the default backend.
pub fn solve_lp(model: &LinearModel) -> Result<Solution, SolverError> {
    BackendKind::default().create().solve_lp(model)
}

/// Objective of the LP dual built from row duals and the reduced costs of
/// bounded columns: `k + sum_i y_i b_i + sum_j d_j x_j` where `x_j` sits at
/// the bound its reduced cost points to. Equal to the primal objective at an
/// optimal primal-dual pair.
pub fn dual_objective(model: &LinearModel, duals: &[f64]) -> f64 {
    let mut reduced = model.objective.clone();
    for (row, &y) in model.rows.iter().zip(duals) {
        for &(v, a) in &row.terms {
            reduced[v.0] -= y * a;
        }
    }
    let mut value = model.objective_constant
        + model
            .rows
            .iter()
            .zip(duals)
            .map(|(r, y)| y * r.rhs)
            .sum::<f64>();
    for (v, d) in model.vars.iter().zip(&reduced) {
        // Round-off on a free or basic column must not pick up an infinite bound.
        if d.abs() > 1e-9 {
            value += d * if *d > 0.0 { v.lower } else { v.upper };
        }
    }
    value
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn backends() -> Vec<Box<dyn Backend>> {
        vec![
            BackendKind::Native.create(),
            #[cfg(feature = "highs")]
            BackendKind::Highs.create(),
        ]
    }

    #[test]
    fn continuous_minimum() {
        for mut b in backends() {
            let mut m = LinearModel::new();
            let x = m.add_var(
                "x",
                f64::NEG_INFINITY,
                f64::INFINITY,
                VarKind::Continuous,
                1.0,
            );
            m.add_row("lb", [(x, 1.0)], RowSense::Ge, 3.0);
            let s = b.solve_mip(&m, &MipOptions::default()).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal, "{}", b.name());
            assert!((s.objective - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_region_is_infeasible() {
        for mut b in backends() {
            let mut m = LinearModel::new();
            let x = m.add_var(
                "x",
                f64::NEG_INFINITY,
                f64::INFINITY,
                VarKind::Continuous,
                1.0,
            );
            m.add_row("up", [(x, 1.0)], RowSense::Le, 0.0);
            m.add_row("down", [(x, 1.0)], RowSense::Ge, 1.0);
            assert_eq!(
                b.solve_lp(&m).unwrap().status,
                SolveStatus::Infeasible,
                "{}",
                b.name()
            );
            assert_eq!(
                b.solve_mip(&m, &MipOptions::default()).unwrap().status,
                SolveStatus::Infeasible
            );
        }
    }

    #[test]
    fn binding_row_dual_is_objective_sensitivity() {
        for mut b in backends() {
            let mut m = LinearModel::new();
            let s = m.add_var("s", 0.0, f64::INFINITY, VarKind::Continuous, 1.0);
            let row = m.add_row("floor", [(s, 1.0)], RowSense::Ge, 20.0);
            let sol = b.solve_lp(&m).unwrap();
            assert!((sol.objective - 20.0).abs() < 1e-9);
            assert!((sol.dual(row) - 1.0).abs() < 1e-9, "{}", b.name());
        }
    }

    #[test]
    fn fixing_row_dual_is_objective_sensitivity() {
        for mut b in backends() {
            let mut m = LinearModel::new();
            let x = m.add_var(
                "x",
                f64::NEG_INFINITY,
                f64::INFINITY,
                VarKind::Continuous,
                1.0,
            );
            let row = m.add_row("fix", [(x, 1.0)], RowSense::Eq, 5.0);
            let sol = b.solve_lp(&m).unwrap();
            assert!((sol.value(x) - 5.0).abs() < 1e-9);
            assert!((sol.dual(row) - 1.0).abs() < 1e-9, "{}", b.name());
        }
    }

    #[test]
    fn le_row_dual_is_non_positive() {
        // max x + y  <=>  min -x - y  s.t. x + 2y <= 4, 3x + y <= 6
        for mut b in backends() {
            let mut m = LinearModel::new();
            let x = m.add_var("x", 0.0, f64::INFINITY, VarKind::Continuous, -1.0);
            let y = m.add_var("y", 0.0, f64::INFINITY, VarKind::Continuous, -1.0);
            let r1 = m.add_row("r1", [(x, 1.0), (y, 2.0)], RowSense::Le, 4.0);
            let r2 = m.add_row("r2", [(x, 3.0), (y, 1.0)], RowSense::Le, 6.0);
            let sol = b.solve_lp(&m).unwrap();
            // vertex x = 8/5, y = 6/5; duals y1 = -2/5, y2 = -1/5
            assert!((sol.objective + 14.0 / 5.0).abs() < 1e-9);
            assert!((sol.dual(r1) + 0.4).abs() < 1e-9, "{}", b.name());
            assert!((sol.dual(r2) + 0.2).abs() < 1e-9);
            let dual = dual_objective(&m, sol.duals.as_ref().unwrap());
            assert!((dual - sol.objective).abs() < 1e-9);
        }
    }

    #[test]
    fn lp_solve_rejects_binaries() {
        for mut b in backends() {
            let mut m = LinearModel::new();
            m.add_binary("u");
            assert!(matches!(b.solve_lp(&m), Err(SolverError::HasBinaries)));
        }
    }

    #[test]
    fn relaxing_without_binaries_is_identity() {
        let mut m = LinearModel::new();
        let x = m.add_continuous("x", 0.0, 2.0);
        m.add_row("r", [(x, 1.0)], RowSense::Le, 1.0);
        assert_eq!(relax_binaries(&m), m);
    }

    #[test]
    fn relaxing_a_binary_keeps_unit_bounds() {
        let mut m = LinearModel::new();
        let u = m.add_binary("u");
        let r = relax_binaries(&m);
        assert_eq!(r.var(u).kind, VarKind::Continuous);
        assert_eq!((r.var(u).lower, r.var(u).upper), (0.0, 1.0));
    }

    #[test]
    fn knapsack_mip_and_relaxation() {
        // max 5a + 4b + 3c s.t. 2a + 3b + c <= 5, 4a + b + 2c <= 11, 3a + 4b + 2c <= 8
        for mut b in backends() {
            let mut m = LinearModel::new();
            let xs: Vec<VarId> = [5.0, 4.0, 3.0]
                .iter()
                .enumerate()
                .map(|(i, c)| m.add_var(format!("x{i}"), 0.0, 1.0, VarKind::Binary, -c))
                .collect();
            m.add_row(
                "a",
                [(xs[0], 2.0), (xs[1], 3.0), (xs[2], 1.0)],
                RowSense::Le,
                5.0,
            );
            m.add_row(
                "b",
                [(xs[0], 4.0), (xs[1], 1.0), (xs[2], 2.0)],
                RowSense::Le,
                11.0,
            );
            m.add_row(
                "c",
                [(xs[0], 3.0), (xs[1], 4.0), (xs[2], 2.0)],
                RowSense::Le,
                8.0,
            );
            let mip = b.solve_mip(&m, &MipOptions::new(1e-9, None)).unwrap();
            assert!(
                (mip.objective + 9.0).abs() < 1e-9,
                "{}: {}",
                b.name(),
                mip.objective
            );
            let lp = b.solve_lp(&relax_binaries(&m)).unwrap();
            assert!(lp.objective <= mip.objective + 1e-9);
        }
    }

    #[test]
    fn duplicate_names_panic() {
        let result = std::panic::catch_unwind(|| {
            let mut m = LinearModel::new();
            m.add_continuous("x", 0.0, 1.0);
            m.add_continuous("x", 0.0, 1.0);
        });
        assert!(result.is_err());
    }
}
