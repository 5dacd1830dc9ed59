//! Dense-tableau bounded-variable primal simplex, two phases.
//!
//! Every row `a x (<=,=,>=) b` becomes `a x + s + sign * art = b` with a
//! bounded slack `s` and a phase-one artificial. The artificial columns keep
//! `B^-1` inside the tableau, which is where the row duals are read from.

use super::{LinearModel, RowSense, SolverError};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const DEGENERATE_STREAK: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub(crate) struct LpOutcome {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub duals: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Position {
    Basic,
    AtLower,
    AtUpper,
    /// Free column resting at zero.
    Zero,
}

/// Pure-Rust LP solver. Suited to models with a few hundred rows.
#[derive(Debug, Clone)]
pub struct DenseSimplex {
    pub max_iterations: usize,
}

impl Default for DenseSimplex {
    fn default() -> Self {
        Self {
            max_iterations: 200_000,
        }
    }
}

struct Tableau {
    m: usize,
    width: usize,
    /// Row-major `m x (width + 1)`; the last column is `B^-1 b`.
    cells: Vec<f64>,
    reduced: Vec<f64>,
    basis: Vec<usize>,
    position: Vec<Position>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    sign: Vec<f64>,
    first_art: usize,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * (self.width + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width)
    }

    fn price(&mut self, cost: &[f64]) {
        self.reduced.copy_from_slice(cost);
        for r in 0..self.m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                let row = &self.cells[r * (self.width + 1)..r * (self.width + 1) + self.width];
                for (d, a) in self.reduced.iter_mut().zip(row) {
                    *d -= cb * a;
                }
            }
        }
    }

    /// Recompute basic values from `B^-1 b` and the nonbasic values.
    fn refresh_basics(&mut self) {
        for r in 0..self.m {
            let mut value = self.rhs(r);
            let row = &self.cells[r * (self.width + 1)..r * (self.width + 1) + self.width];
            for (j, a) in row.iter().enumerate() {
                if self.position[j] != Position::Basic && *a != 0.0 {
                    value -= a * self.x[j];
                }
            }
            self.x[self.basis[r]] = value;
        }
    }

    fn pivot(&mut self, p: usize, q: usize) {
        let stride = self.width + 1;
        let pivot = self.cells[p * stride + q];
        for c in 0..stride {
            self.cells[p * stride + c] /= pivot;
        }
        let (before, rest) = self.cells.split_at_mut(p * stride);
        let (prow, after) = rest.split_at_mut(stride);
        for row in before.chunks_mut(stride).chain(after.chunks_mut(stride)) {
            let factor = row[q];
            if factor != 0.0 {
                for (a, b) in row.iter_mut().zip(prow.iter()) {
                    *a -= factor * b;
                }
            }
        }
        let dq = self.reduced[q];
        if dq != 0.0 {
            for (d, b) in self.reduced.iter_mut().zip(prow[..self.width].iter()) {
                *d -= dq * b;
            }
        }
        self.basis[p] = q;
    }

    /// Run primal simplex iterations for the current reduced costs. Columns
    /// at or beyond `barred` never enter.
    fn iterate(&mut self, barred: usize, budget: &mut usize) -> Result<LpStatus, SolverError> {
        let mut degenerate = 0usize;
        loop {
            if *budget == 0 {
                return Err(SolverError::Backend {
                    backend: "native",
                    message: "simplex iteration limit reached".into(),
                });
            }
            *budget -= 1;
            let bland = degenerate >= DEGENERATE_STREAK;

            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..barred {
                let d = self.reduced[j];
                let dir = match self.position[j] {
                    Position::Basic => continue,
                    _ if self.lower[j] == self.upper[j] => continue,
                    Position::AtLower if d < -COST_TOL => 1.0,
                    Position::AtUpper if d > COST_TOL => -1.0,
                    Position::Zero if d.abs() > COST_TOL => -d.signum(),
                    _ => continue,
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if d.abs() > best {
                    best = d.abs();
                    entering = Some((j, dir));
                }
            }
            let Some((q, dir)) = entering else {
                return Ok(LpStatus::Optimal);
            };

            // Ratio test over the basic rows and the entering column's own range.
            let mut theta = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let alpha = dir * self.at(r, q);
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[r];
                let limit = if alpha > 0.0 {
                    if self.lower[b] == f64::NEG_INFINITY {
                        continue;
                    }
                    (self.x[b] - self.lower[b]) / alpha
                } else {
                    if self.upper[b] == f64::INFINITY {
                        continue;
                    }
                    (self.upper[b] - self.x[b]) / -alpha
                };
                let limit = limit.max(0.0);
                let better = match leave {
                    None => limit < theta,
                    Some((cur, cur_alpha)) => {
                        if bland {
                            limit < theta - 1e-12 || (limit <= theta + 1e-12 && b < self.basis[cur])
                        } else {
                            limit < theta - 1e-12
                                || (limit <= theta + 1e-12 && alpha.abs() > cur_alpha.abs())
                        }
                    }
                };
                if better {
                    theta = limit.min(theta);
                    leave = Some((r, alpha));
                }
            }
            if theta == f64::INFINITY {
                return Ok(LpStatus::Unbounded);
            }
            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            self.x[q] += dir * theta;
            for r in 0..self.m {
                let a = self.at(r, q);
                if a != 0.0 {
                    let b = self.basis[r];
                    self.x[b] -= dir * theta * a;
                }
            }

            match leave {
                None => {
                    // Bound flip.
                    self.position[q] = if dir > 0.0 {
                        self.x[q] = self.upper[q];
                        Position::AtUpper
                    } else {
                        self.x[q] = self.lower[q];
                        Position::AtLower
                    };
                }
                Some((p, alpha)) => {
                    let out = self.basis[p];
                    self.position[out] = if alpha > 0.0 {
                        self.x[out] = self.lower[out];
                        Position::AtLower
                    } else {
                        self.x[out] = self.upper[out];
                        Position::AtUpper
                    };
                    self.position[q] = Position::Basic;
                    self.pivot(p, q);
                }
            }
        }
    }
}

impl DenseSimplex {
    /// Solve `model` with the column bounds replaced by `lower`/`upper`.
    /// Binary kinds are ignored (treated as their continuous relaxation).
    pub(crate) fn solve_bounded(
        &self,
        model: &LinearModel,
        lower: &[f64],
        upper: &[f64],
    ) -> Result<LpOutcome, SolverError> {
        let n = model.num_vars();
        let m = model.num_rows();
        let first_art = n + m;
        let width = n + 2 * m;

        if lower.iter().zip(upper).any(|(l, u)| l > u) {
            return Ok(LpOutcome {
                status: LpStatus::Infeasible,
                x: Vec::new(),
                duals: Vec::new(),
                objective: f64::INFINITY,
            });
        }

        let mut col_lower = lower.to_vec();
        let mut col_upper = upper.to_vec();
        for row in model.rows() {
            let (l, u) = match row.sense {
                RowSense::Le => (0.0, f64::INFINITY),
                RowSense::Ge => (f64::NEG_INFINITY, 0.0),
                RowSense::Eq => (0.0, 0.0),
            };
            col_lower.push(l);
            col_upper.push(u);
        }
        col_lower.extend(std::iter::repeat_n(0.0, m));
        col_upper.extend(std::iter::repeat_n(f64::INFINITY, m));

        let mut x = vec![0.0; width];
        let mut position = vec![Position::Zero; width];
        for j in 0..first_art {
            if col_lower[j].is_finite() {
                x[j] = col_lower[j];
                position[j] = Position::AtLower;
            } else if col_upper[j].is_finite() {
                x[j] = col_upper[j];
                position[j] = Position::AtUpper;
            } else if j >= n {
                position[j] = Position::AtLower;
            }
        }

        let stride = width + 1;
        let mut cells = vec![0.0; m * stride];
        let mut sign = vec![1.0; m];
        let mut basis = Vec::with_capacity(m);
        for (i, row) in model.rows().iter().enumerate() {
            let residual = row.rhs - row.activity(&x[..n]);
            sign[i] = if residual >= 0.0 { 1.0 } else { -1.0 };
            let s = sign[i];
            let base = i * stride;
            for &(v, a) in &row.terms {
                cells[base + v.index()] = s * a;
            }
            cells[base + n + i] = s;
            cells[base + first_art + i] = 1.0;
            cells[base + width] = s * row.rhs;
            x[first_art + i] = residual.abs();
            position[first_art + i] = Position::Basic;
            basis.push(first_art + i);
        }

        let mut tab = Tableau {
            m,
            width,
            cells,
            reduced: vec![0.0; width],
            basis,
            position,
            lower: col_lower,
            upper: col_upper,
            x,
            sign,
            first_art,
        };
        let mut budget = self.max_iterations;

        // Phase one: drive the artificials to zero.
        let mut cost = vec![0.0; width];
        cost[first_art..].iter_mut().for_each(|c| *c = 1.0);
        tab.price(&cost);
        tab.iterate(width, &mut budget)?;
        tab.refresh_basics();
        let infeasibility: f64 = tab.x[first_art..].iter().map(|v| v.abs()).sum();
        let scale = 1.0 + model.rows().iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        if infeasibility > 1e-7 * scale {
            return Ok(LpOutcome {
                status: LpStatus::Infeasible,
                x: Vec::new(),
                duals: Vec::new(),
                objective: f64::INFINITY,
            });
        }
        for j in first_art..width {
            tab.upper[j] = 0.0;
            if tab.position[j] != Position::Basic {
                tab.x[j] = 0.0;
                tab.position[j] = Position::AtLower;
            }
        }

        // Phase two.
        let mut cost = vec![0.0; width];
        cost[..n].copy_from_slice(model.objective());
        tab.price(&cost);
        let status = tab.iterate(first_art, &mut budget)?;
        if status == LpStatus::Unbounded {
            return Ok(LpOutcome {
                status,
                x: Vec::new(),
                duals: Vec::new(),
                objective: f64::NEG_INFINITY,
            });
        }
        tab.refresh_basics();

        // y_i = sum_r c_B[r] * (B^-1)[r, i], with (B^-1)[r, i] = sign_i * T[r, art_i].
        let duals = (0..m)
            .map(|i| {
                (0..m)
                    .map(|r| cost[tab.basis[r]] * tab.at(r, tab.first_art + i) * tab.sign[i])
                    .sum::<f64>()
            })
            .collect();
        let x: Vec<f64> = (0..n)
            .map(|j| tab.x[j].clamp(tab.lower[j], tab.upper[j]))
            .collect();
        let objective = model.evaluate_objective(&x);
        Ok(LpOutcome {
            status: LpStatus::Optimal,
            x,
            duals,
            objective,
        })
    }
}
