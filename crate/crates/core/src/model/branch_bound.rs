//! Best-first branch-and-bound over [`DenseSimplex`] relaxations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::simplex::{LpOutcome, LpStatus};
use super::{
    Backend, DenseSimplex, LinearModel, MipOptions, Solution, SolveStatus, SolverError, VarKind,
};

const INT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct BranchAndBound {
    pub lp: DenseSimplex,
    pub max_nodes: usize,
}

impl Default for BranchAndBound {
    fn default() -> Self {
        Self {
            lp: DenseSimplex::default(),
            max_nodes: 200_000,
        }
    }
}

struct Node {
    bound: f64,
    depth: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap on "better": lower bound first, deeper node on ties.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
    }
}

fn most_fractional(model: &LinearModel, x: &[f64]) -> Option<usize> {
    model
        .binaries()
        .map(|v| (v.index(), (x[v.index()] - x[v.index()].round()).abs()))
        .filter(|&(_, f)| f > INT_TOL)
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(j, _)| j)
}

impl BranchAndBound {
    fn relax(
        &self,
        model: &LinearModel,
        lower: &[f64],
        upper: &[f64],
    ) -> Result<LpOutcome, SolverError> {
        self.lp.solve_bounded(model, lower, upper)
    }
}

impl Backend for BranchAndBound {
    fn name(&self) -> &'static str {
        "native"
    }

    fn solve_lp(&mut self, model: &LinearModel) -> Result<Solution, SolverError> {
        if model.has_binaries() {
            return Err(SolverError::HasBinaries);
        }
        model.validate()?;
        let start = Instant::now();
        let lower: Vec<f64> = model.vars().iter().map(|v| v.lower).collect();
        let upper: Vec<f64> = model.vars().iter().map(|v| v.upper).collect();
        let out = self.relax(model, &lower, &upper)?;
        Ok(match out.status {
            LpStatus::Optimal => Solution {
                status: SolveStatus::Optimal,
                objective: out.objective,
                primal: out.x,
                duals: Some(out.duals),
                mip_gap: None,
                best_bound: None,
                wall_time: start.elapsed(),
            },
            LpStatus::Infeasible => {
                Solution::without_point(SolveStatus::Infeasible, start.elapsed())
            }
            LpStatus::Unbounded => Solution::without_point(SolveStatus::Unbounded, start.elapsed()),
        })
    }

    fn solve_mip(
        &mut self,
        model: &LinearModel,
        options: &MipOptions,
    ) -> Result<Solution, SolverError> {
        model.validate()?;
        let start = Instant::now();
        let deadline = options.time_limit.map(|d| start + d);
        let lower: Vec<f64> = model.vars().iter().map(|v| v.lower).collect();
        let upper: Vec<f64> = model.vars().iter().map(|v| v.upper).collect();

        let root = self.relax(model, &lower, &upper)?;
        match root.status {
            LpStatus::Infeasible => {
                return Ok(Solution::without_point(
                    SolveStatus::Infeasible,
                    start.elapsed(),
                ));
            }
            LpStatus::Unbounded => {
                return Ok(Solution::without_point(
                    SolveStatus::Unbounded,
                    start.elapsed(),
                ));
            }
            LpStatus::Optimal => {}
        }

        let mut incumbent: Option<(f64, Vec<f64>)> = None;
        let mut heap = BinaryHeap::new();
        let offer =
            |node: Node, incumbent: &mut Option<(f64, Vec<f64>)>, heap: &mut BinaryHeap<Node>| {
                if most_fractional(model, &node.x).is_none() {
                    if incumbent
                        .as_ref()
                        .is_none_or(|(best, _)| node.bound < *best)
                    {
                        *incumbent = Some((node.bound, node.x));
                    }
                } else {
                    heap.push(node);
                }
            };
        offer(
            Node {
                bound: root.objective,
                depth: 0,
                lower,
                upper,
                x: root.x,
            },
            &mut incumbent,
            &mut heap,
        );

        let mut nodes = 0usize;
        let mut stopped = None;
        while let Some(node) = heap.peek() {
            if let Some((best, _)) = &incumbent {
                let tol = (options.gap * best.abs()).max(1e-9);
                if node.bound >= best - tol {
                    break;
                }
            }
            if deadline.is_some_and(|d| Instant::now() >= d) {
                stopped = Some(SolveStatus::TimeLimit);
                break;
            }
            if nodes >= self.max_nodes {
                stopped = Some(SolveStatus::FeasibleGap);
                break;
            }
            nodes += 1;
            let node = heap.pop().expect("peeked");
            let j = most_fractional(model, &node.x).expect("queued nodes are fractional");
            let up_first = node.x[j] >= 0.5;
            for value in if up_first { [1.0, 0.0] } else { [0.0, 1.0] } {
                let mut lo = node.lower.clone();
                let mut hi = node.upper.clone();
                lo[j] = value;
                hi[j] = value;
                let child = self.relax(model, &lo, &hi)?;
                if child.status != LpStatus::Optimal {
                    continue;
                }
                if incumbent
                    .as_ref()
                    .is_some_and(|(best, _)| child.objective >= *best)
                {
                    continue;
                }
                offer(
                    Node {
                        bound: child.objective.max(node.bound),
                        depth: node.depth + 1,
                        lower: lo,
                        upper: hi,
                        x: child.x,
                    },
                    &mut incumbent,
                    &mut heap,
                );
            }
        }
        log::debug!("native branch-and-bound explored {nodes} nodes");

        let open_bound = heap.peek().map(|n| n.bound);
        let wall_time = start.elapsed();
        let Some((_, mut x)) = incumbent else {
            let status = stopped.unwrap_or(SolveStatus::Infeasible);
            let mut out = Solution::without_point(status, wall_time);
            out.best_bound = open_bound.filter(|_| stopped.is_some());
            return Ok(out);
        };
        for (v, val) in model.vars().iter().zip(x.iter_mut()) {
            if v.kind == VarKind::Binary {
                *val = val.round();
            }
        }
        let objective = model.evaluate_objective(&x);
        let bound = open_bound.map_or(objective, |b| b.min(objective));
        let gap = (objective - bound).max(0.0) / objective.abs().max(1e-10);
        let status = match stopped {
            Some(s) if gap > options.gap => s,
            _ => SolveStatus::Optimal,
        };
        Ok(Solution {
            status,
            objective,
            primal: x,
            duals: None,
            mip_gap: Some(gap),
            best_bound: Some(bound),
            wall_time,
        })
    }
}
