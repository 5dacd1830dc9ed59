use std::time::Instant;

use highs::{HighsModelStatus, HighsSolutionStatus, RowProblem, Sense};

use super::{
    Backend, LinearModel, MipOptions, RowSense, Solution, SolveStatus, SolverError, VarKind,
};

/// HiGHS adapter. Each solve builds a fresh HiGHS instance.
#[derive(Debug, Clone, Default)]
pub struct HighsBackend {
    /// Forwarded to the HiGHS `threads` option when set.
    pub threads: Option<u32>,
}

fn backend_error(message: impl Into<String>) -> SolverError {
    SolverError::Backend {
        backend: "highs",
        message: message.into(),
    }
}

fn build(model: &LinearModel, integer: bool) -> RowProblem {
    let mut pb = RowProblem::default();
    let cols: Vec<_> = model
        .vars()
        .iter()
        .zip(model.objective())
        .map(|(v, &c)| {
            let is_int = integer && v.kind == VarKind::Binary;
            pb.add_column_with_integrality(c, v.lower..=v.upper, is_int)
        })
        .collect();
    for row in model.rows() {
        let terms = row.terms.iter().map(|&(v, a)| (cols[v.index()], a));
        match row.sense {
            RowSense::Le => pb.add_row(f64::NEG_INFINITY..=row.rhs, terms),
            RowSense::Ge => pb.add_row(row.rhs..=f64::INFINITY, terms),
            RowSense::Eq => pb.add_row(row.rhs..=row.rhs, terms),
        }
    }
    pb
}

impl HighsBackend {
    fn run(
        &self,
        model: &LinearModel,
        options: Option<&MipOptions>,
        presolve: bool,
    ) -> Result<highs::SolvedModel, SolverError> {
        let mut hm = build(model, options.is_some()).optimise(Sense::Minimise);
        hm.make_quiet();
        if let Some(t) = self.threads {
            hm.set_option("threads", t as i32);
        }
        if !presolve {
            hm.set_option("presolve", "off");
        }
        if let Some(opts) = options {
            hm.set_option("mip_rel_gap", opts.gap);
            if let Some(limit) = opts.time_limit {
                hm.set_option("time_limit", limit.as_secs_f64());
            }
        }
        hm.try_solve()
            .map_err(|status| backend_error(format!("run returned {status:?}")))
    }

    fn solve(
        &mut self,
        model: &LinearModel,
        options: Option<&MipOptions>,
    ) -> Result<Solution, SolverError> {
        model.validate()?;
        let start = Instant::now();
        let k = model.objective_constant();
        if model.num_vars() == 0 {
            let infeasible = model.rows().iter().any(|r| match r.sense {
                RowSense::Le => r.rhs < 0.0,
                RowSense::Ge => r.rhs > 0.0,
                RowSense::Eq => r.rhs != 0.0,
            });
            if infeasible {
                return Ok(Solution::without_point(
                    SolveStatus::Infeasible,
                    start.elapsed(),
                ));
            }
            return Ok(Solution {
                status: SolveStatus::Optimal,
                objective: k,
                primal: Vec::new(),
                duals: options.is_none().then(|| vec![0.0; model.num_rows()]),
                mip_gap: options.map(|_| 0.0),
                best_bound: options.map(|_| k),
                wall_time: start.elapsed(),
            });
        }

        let mut solved = self.run(model, options, true)?;
        if solved.status() == HighsModelStatus::UnboundedOrInfeasible {
            solved = self.run(model, options, false)?;
        }
        let status = match solved.status() {
            HighsModelStatus::Optimal => SolveStatus::Optimal,
            HighsModelStatus::Infeasible => SolveStatus::Infeasible,
            HighsModelStatus::Unbounded => SolveStatus::Unbounded,
            // Presolve-free rerun still ambiguous: a bounded objective over
            // an empty region is the only way this arises for our models.
            HighsModelStatus::UnboundedOrInfeasible => SolveStatus::Infeasible,
            HighsModelStatus::ReachedTimeLimit => SolveStatus::TimeLimit,
            HighsModelStatus::ReachedIterationLimit
            | HighsModelStatus::ReachedSolutionLimit
            | HighsModelStatus::ReachedInterrupt
            | HighsModelStatus::ObjectiveBound
            | HighsModelStatus::ObjectiveTarget => SolveStatus::FeasibleGap,
            HighsModelStatus::ModelEmpty => SolveStatus::Optimal,
            other => return Err(backend_error(format!("model status {other:?}"))),
        };
        let wall_time = start.elapsed();
        let has_point = matches!(status, SolveStatus::Optimal)
            || (matches!(status, SolveStatus::TimeLimit | SolveStatus::FeasibleGap)
                && solved.primal_solution_status() == HighsSolutionStatus::Feasible);
        if !has_point {
            let mut out = Solution::without_point(status, wall_time);
            if options.is_some() && status == SolveStatus::TimeLimit {
                out.best_bound = solved
                    .double_info_value(c"mip_dual_bound")
                    .ok()
                    .map(|b| b + k);
            }
            return Ok(out);
        }

        let sol = solved.get_solution();
        let primal: Vec<f64> = model
            .vars()
            .iter()
            .zip(sol.columns())
            .map(|(v, &x)| {
                let x = x.clamp(v.lower, v.upper);
                if options.is_some() && v.kind == VarKind::Binary {
                    x.round()
                } else {
                    x
                }
            })
            .collect();
        let objective = model.evaluate_objective(&primal);
        let mut out = Solution {
            status,
            objective,
            primal,
            duals: None,
            mip_gap: None,
            best_bound: None,
            wall_time,
        };
        match options {
            None => out.duals = Some(sol.dual_rows().to_vec()),
            Some(opts) => {
                let bound = if model.has_binaries() {
                    solved
                        .double_info_value(c"mip_dual_bound")
                        .map(|b| b + k)
                        .unwrap_or(objective)
                        .min(objective)
                } else {
                    objective
                };
                let gap = (objective - bound).max(0.0) / objective.abs().max(1e-10);
                out.best_bound = Some(bound);
                out.mip_gap = Some(gap);
                if out.status == SolveStatus::Optimal
                    && gap > opts.gap + 1e-9
                    && gap * objective.abs() > 1e-6
                {
                    out.status = SolveStatus::FeasibleGap;
                }
            }
        }
        Ok(out)
    }
}

impl Backend for HighsBackend {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn solve_lp(&mut self, model: &LinearModel) -> Result<Solution, SolverError> {
        if model.has_binaries() {
            return Err(SolverError::HasBinaries);
        }
        self.solve(model, None)
    }

    fn solve_mip(
        &mut self,
        model: &LinearModel,
        options: &MipOptions,
    ) -> Result<Solution, SolverError> {
        self.solve(model, Some(options))
    }
}
