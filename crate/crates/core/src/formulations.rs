//! Model builders: first-stage unit commitment, per-scenario second stage,
//! stochastic UC and the two chance-constrained reformulations.
//!
//! Periods are 0-based in code and 1-based in variable and row names.

use crate::instance::{RelaxationMode, ThermalUnit, Topology, UCInstance};
use crate::model::{LinearModel, RowSense, Solution, VarId, VarKind};
use crate::scenarios::{ScenarioError, ScenarioSet};

#[derive(Debug, thiserror::Error)]
pub enum FormulationError {
    #[error("piecewise fuel cost needs at least one segment")]
    NoSegments,
    #[error("scenario index {index} out of range (set has {count})")]
    UnknownScenario { index: usize, count: usize },
    #[error(transparent)]
    Scenarios(#[from] ScenarioError),
}

/// Piecewise-linear fuel cost over `[p_min, p_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseCost {
    /// `F(p_min)`, charged whenever the unit is online.
    pub base: f64,
    pub slopes: Vec<f64>,
    pub widths: Vec<f64>,
}

impl PiecewiseCost {
    /// Cost of an online unit producing `p` (filled segment by segment).
    pub fn evaluate(&self, p_min: f64, p: f64) -> f64 {
        let mut rest = (p - p_min).max(0.0);
        let mut cost = self.base;
        for (slope, width) in self.slopes.iter().zip(&self.widths) {
            let used = rest.min(*width);
            cost += slope * used;
            rest -= used;
        }
        cost
    }
}

/// Equal-width secant approximation of the quadratic fuel cost.
pub fn piecewise_linearize(
    unit: &ThermalUnit,
    segments: usize,
) -> Result<PiecewiseCost, FormulationError> {
    if segments < 1 {
        return Err(FormulationError::NoSegments);
    }
    let f = unit.fuel_cost;
    let width = (unit.p_max - unit.p_min) / segments as f64;
    let slopes = (0..segments)
        .map(|k| {
            let lo = unit.p_min + width * k as f64;
            // secant of a + b p + c p^2 over [lo, lo + width]
            f.b + f.c * (2.0 * lo + width)
        })
        .collect();
    Ok(PiecewiseCost {
        base: f.eval(unit.p_min),
        slopes,
        widths: vec![width; segments],
    })
}

/// Variable handles of the first stage, indexed `[g][t]` (`delta` is `[g][s][t]`,
/// `segments` is `[g][k][t]`). Feasibility subproblems leave `delta` and
/// `segments` empty.
#[derive(Debug, Clone, Default)]
pub struct FirstStageVars {
    pub u: Vec<Vec<VarId>>,
    pub v: Vec<Vec<VarId>>,
    pub y: Vec<Vec<VarId>>,
    pub delta: Vec<Vec<Vec<VarId>>>,
    pub p: Vec<Vec<VarId>>,
    pub segments: Vec<Vec<Vec<VarId>>>,
    pub r_up: Vec<Vec<VarId>>,
    pub r_dn: Vec<Vec<VarId>>,
}

/// Variable handles of one scenario block, indexed `[g][t]`; slacks exist
/// only in slacked mode.
#[derive(Debug, Clone, Default)]
pub struct ScenarioVars {
    pub scenario: usize,
    pub p: Vec<Vec<VarId>>,
    pub r_up: Vec<Vec<VarId>>,
    pub r_dn: Vec<Vec<VarId>>,
    /// `P~ = P_n z_n` products (bilinear model only).
    pub p_tilde: Vec<Vec<VarId>>,
    /// `eta1+` / `eta1-` per period.
    pub balance_up: Vec<VarId>,
    pub balance_dn: Vec<VarId>,
    /// `eta2` per `[l][t]`.
    pub line_slack: Vec<Vec<VarId>>,
}

/// How a scenario's power balance enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondStageMode {
    /// Balance equality and line limits hold exactly.
    Strict,
    /// Balance and line limits carry non-negative slacks.
    Slacked,
    /// Neither balance nor line rows are added; the chance-constrained
    /// builders attach their own indicator-controlled versions.
    Indicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Deterministic,
    Suc,
    BigM,
    Bilinear,
}

/// A built model together with its variable handles.
#[derive(Debug, Clone)]
pub struct UcModel {
    pub kind: ModelKind,
    pub model: LinearModel,
    pub first: FirstStageVars,
    pub z: Vec<VarId>,
    pub second: Vec<ScenarioVars>,
}

/// A first-stage schedule, matrices indexed `[g][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageSolution {
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// `[g][s][t]`.
    pub delta: Vec<Vec<Vec<f64>>>,
    pub p: Vec<Vec<f64>>,
    pub r_up: Vec<Vec<f64>>,
    pub r_dn: Vec<Vec<f64>>,
    /// Scenario indicators; empty for models without them.
    pub z: Vec<f64>,
    pub objective: f64,
}

impl FirstStageSolution {
    /// Indices of scenarios with `z_n = 1`.
    pub fn dropped(&self) -> Vec<usize> {
        self.z
            .iter()
            .enumerate()
            .filter(|(_, z)| **z > 0.5)
            .map(|(n, _)| n)
            .collect()
    }

    /// `sum_n pi_n z_n`.
    pub fn dropped_probability(&self, scenarios: &ScenarioSet) -> f64 {
        self.dropped()
            .iter()
            .map(|&n| scenarios.probabilities[n])
            .sum()
    }
}

fn name_gt(prefix: &str, unit: &ThermalUnit, t: usize) -> String {
    format!("{prefix}[{},{}]", unit.id, t + 1)
}

fn name_gtn(prefix: &str, unit: &ThermalUnit, t: usize, n: usize) -> String {
    format!("{prefix}[{},{},{}]", unit.id, t + 1, n + 1)
}

/// Either a first-stage variable or a constant from the initial history.
enum Term {
    Var(VarId),
    Const(f64),
}

/// `y_{g,period}` for a 1-based period that may precede the horizon.
fn shutdown_term(first: &FirstStageVars, unit: &ThermalUnit, g: usize, period: i64) -> Term {
    if period >= 1 {
        Term::Var(first.y[g][(period - 1) as usize])
    } else {
        Term::Const(unit.shutdown_before(period))
    }
}

fn startup_term(first: &FirstStageVars, unit: &ThermalUnit, g: usize, period: i64) -> Term {
    if period >= 1 {
        Term::Var(first.v[g][(period - 1) as usize])
    } else {
        Term::Const(unit.startup_before(period))
    }
}

/// Sum of `terms` (with coefficient `sign`) split into variable terms and a
/// constant.
fn collect(terms: impl IntoIterator<Item = Term>, sign: f64) -> (Vec<(VarId, f64)>, f64) {
    let mut vars = Vec::new();
    let mut constant = 0.0;
    for term in terms {
        match term {
            Term::Var(v) => vars.push((v, sign)),
            Term::Const(c) => constant += sign * c,
        }
    }
    (vars, constant)
}

/// Objective and constraints of the first stage.
pub fn build_first_stage(instance: &UCInstance) -> Result<UcModel, FormulationError> {
    let mut model = LinearModel::new();
    let first = add_first_stage(&mut model, instance)?;
    Ok(UcModel {
        kind: ModelKind::Deterministic,
        model,
        first,
        z: Vec::new(),
        second: Vec::new(),
    })
}

fn add_first_stage(
    model: &mut LinearModel,
    instance: &UCInstance,
) -> Result<FirstStageVars, FormulationError> {
    let horizon = instance.horizon;
    let topo = instance.topology();
    let mut first = FirstStageVars::default();

    for unit in &instance.units {
        let pw = piecewise_linearize(unit, instance.config.fuel_segments)?;
        let (c_up, c_dn) = unit.reserve_costs();
        let mut u = Vec::with_capacity(horizon);
        let mut v = Vec::with_capacity(horizon);
        let mut y = Vec::with_capacity(horizon);
        let mut p = Vec::with_capacity(horizon);
        let mut r_up = Vec::with_capacity(horizon);
        let mut r_dn = Vec::with_capacity(horizon);
        for t in 0..horizon {
            u.push(model.add_var(
                name_gt("u", unit, t),
                0.0,
                1.0,
                VarKind::Binary,
                unit.no_load_cost + pw.base,
            ));
            v.push(model.add_var(name_gt("v", unit, t), 0.0, 1.0, VarKind::Binary, 0.0));
            y.push(model.add_var(
                name_gt("y", unit, t),
                0.0,
                1.0,
                VarKind::Binary,
                unit.shutdown_cost,
            ));
            p.push(model.add_continuous(name_gt("P", unit, t), 0.0, unit.p_max));
            r_up.push(model.add_var(
                name_gt("Rup", unit, t),
                0.0,
                unit.reserve_up_max,
                VarKind::Continuous,
                c_up,
            ));
            r_dn.push(model.add_var(
                name_gt("Rdn", unit, t),
                0.0,
                unit.reserve_dn_max,
                VarKind::Continuous,
                c_dn,
            ));
        }
        let delta: Vec<Vec<VarId>> = unit
            .startup_segments
            .iter()
            .enumerate()
            .map(|(s, seg)| {
                (0..horizon)
                    .map(|t| {
                        model.add_var(
                            format!("delta[{},{},{}]", unit.id, s + 1, t + 1),
                            0.0,
                            1.0,
                            VarKind::Binary,
                            seg.cost,
                        )
                    })
                    .collect()
            })
            .collect();
        let segments: Vec<Vec<VarId>> = pw
            .slopes
            .iter()
            .zip(&pw.widths)
            .enumerate()
            .map(|(k, (&slope, &width))| {
                (0..horizon)
                    .map(|t| {
                        model.add_var(
                            format!("seg[{},{},{}]", unit.id, k + 1, t + 1),
                            0.0,
                            width,
                            VarKind::Continuous,
                            slope,
                        )
                    })
                    .collect()
            })
            .collect();
        first.u.push(u);
        first.v.push(v);
        first.y.push(y);
        first.p.push(p);
        first.r_up.push(r_up);
        first.r_dn.push(r_dn);
        first.delta.push(delta);
        first.segments.push(segments);
    }

    for (g, unit) in instance.units.iter().enumerate() {
        let u = &first.u[g];
        let v = &first.v[g];
        let y = &first.y[g];
        let p = &first.p[g];
        for t in 0..horizon {
            let period = t as i64 + 1;

            // P = p_min u + sum_k seg_k
            let mut terms = vec![(p[t], 1.0), (u[t], -unit.p_min)];
            terms.extend(first.segments[g].iter().map(|seg| (seg[t], -1.0)));
            model.add_row(name_gt("pwl", unit, t), terms, RowSense::Eq, 0.0);

            // A startup of type s needs a shutdown in [T_s, T_{s+1}) hours ago.
            let segs = &unit.startup_segments;
            for s in 0..segs.len().saturating_sub(1) {
                let lo = i64::from(segs[s].offline_threshold_hours);
                let hi = i64::from(segs[s + 1].offline_threshold_hours);
                let (mut terms, constant) = collect(
                    (lo..hi).map(|i| shutdown_term(&first, unit, g, period - i)),
                    -1.0,
                );
                terms.push((first.delta[g][s][t], 1.0));
                model.add_row(
                    format!("sutype[{},{},{}]", unit.id, s + 1, t + 1),
                    terms,
                    RowSense::Le,
                    -constant,
                );
            }

            // exactly one startup type per startup
            let mut terms: Vec<(VarId, f64)> = first.delta[g].iter().map(|d| (d[t], 1.0)).collect();
            terms.push((v[t], -1.0));
            model.add_row(name_gt("sutotal", unit, t), terms, RowSense::Eq, 0.0);

            // minimum up time
            let tu = i64::from(unit.min_up);
            let (mut terms, constant) = collect(
                (period - tu + 1..=period).map(|i| startup_term(&first, unit, g, i)),
                1.0,
            );
            terms.push((u[t], -1.0));
            model.add_row(name_gt("minup", unit, t), terms, RowSense::Le, -constant);

            // minimum down time
            let td = i64::from(unit.min_down);
            let (mut terms, constant) = collect(
                (period - td + 1..=period).map(|i| shutdown_term(&first, unit, g, i)),
                1.0,
            );
            terms.push((u[t], 1.0));
            model.add_row(
                name_gt("mindn", unit, t),
                terms,
                RowSense::Le,
                1.0 - constant,
            );

            // u_t - u_{t-1} = v_t - y_t
            let mut terms = vec![(u[t], 1.0), (v[t], -1.0), (y[t], 1.0)];
            let rhs = if t == 0 {
                unit.initial_status()
            } else {
                terms.push((u[t - 1], -1.0));
                0.0
            };
            model.add_row(name_gt("logic", unit, t), terms, RowSense::Eq, rhs);

            // P_t + R+_t - P_{t-1} <= RU u_{t-1} + SU v_t
            let mut terms = vec![
                (p[t], 1.0),
                (first.r_up[g][t], 1.0),
                (v[t], -unit.startup_cap),
            ];
            let rhs = if t == 0 {
                unit.initial_output + unit.ramp_up * unit.initial_status()
            } else {
                terms.push((p[t - 1], -1.0));
                terms.push((u[t - 1], -unit.ramp_up));
                0.0
            };
            model.add_row(name_gt("rampup", unit, t), terms, RowSense::Le, rhs);

            // -P_t + R-_t + P_{t-1} <= RD u_t + SD y_t
            let mut terms = vec![
                (p[t], -1.0),
                (first.r_dn[g][t], 1.0),
                (u[t], -unit.ramp_down),
                (y[t], -unit.shutdown_cap),
            ];
            let rhs = if t == 0 {
                -unit.initial_output
            } else {
                terms.push((p[t - 1], 1.0));
                0.0
            };
            model.add_row(name_gt("rampdn", unit, t), terms, RowSense::Le, rhs);

            // capacity with reserves
            model.add_row(
                name_gt("capup", unit, t),
                [(p[t], 1.0), (first.r_up[g][t], 1.0), (u[t], -unit.p_max)],
                RowSense::Le,
                0.0,
            );
            model.add_row(
                name_gt("capdn", unit, t),
                [(p[t], 1.0), (first.r_dn[g][t], -1.0), (u[t], -unit.p_min)],
                RowSense::Ge,
                0.0,
            );
        }
    }

    // forecast balance and forecast line limits
    for t in 0..horizon {
        let wind: Vec<f64> = instance.wind_farms.iter().map(|w| w.forecast[t]).collect();
        let load: Vec<f64> = instance.loads.iter().map(|l| l.forecast[t]).collect();
        let net = load.iter().sum::<f64>() - wind.iter().sum::<f64>();
        model.add_row(
            format!("balance[{}]", t + 1),
            first.p.iter().map(|row| (row[t], 1.0)),
            RowSense::Eq,
            net,
        );
        let injection = topo.fixed_injection(&wind, &load);
        add_line_rows(
            model, instance, &topo, &first.p, t, &injection, "line", None, None,
        );
    }
    Ok(first)
}

/// How far a line row may be relaxed when its scenario is dropped.
enum LineRelax<'a> {
    BigM { z: VarId, m: &'a [f64] },
    Bilinear { z: VarId, p_tilde: &'a [Vec<VarId>] },
    Slack(&'a [VarId]),
}

/// `-C_l <= sum_b K_lb (gen + W - L) <= C_l` at period `t` for every line.
#[allow(clippy::too_many_arguments)]
fn add_line_rows(
    model: &mut LinearModel,
    instance: &UCInstance,
    topo: &Topology,
    p: &[Vec<VarId>],
    t: usize,
    injection: &[f64],
    prefix: &str,
    scenario: Option<usize>,
    relax: Option<LineRelax<'_>>,
) {
    for (l, line) in instance.network.lines.iter().enumerate() {
        let cap = topo.capacity[l];
        let fixed = topo.fixed_flow(l, injection);
        let mut terms: Vec<(VarId, f64)> = p
            .iter()
            .enumerate()
            .map(|(g, row)| (row[t], topo.ptdf[l][topo.unit_bus[g]]))
            .filter(|(_, k)| *k != 0.0)
            .collect();
        let suffix = match scenario {
            Some(n) => format!("{},{},{}", line.id, t + 1, n + 1),
            None => format!("{},{}", line.id, t + 1),
        };
        let (mut upper, mut lower) = (terms.clone(), std::mem::take(&mut terms));
        let (mut rhs_up, mut rhs_lo) = (cap - fixed, -cap - fixed);
        match &relax {
            None => {}
            Some(LineRelax::BigM { z, m }) => {
                upper.push((*z, -m[l]));
                lower.push((*z, m[l]));
            }
            Some(LineRelax::Bilinear { z, p_tilde }) => {
                // (flow - C)(1 - z) <= 0 and (flow + C)(1 - z) >= 0 with P~ = P z
                for (g, row) in p_tilde.iter().enumerate() {
                    let k = topo.ptdf[l][topo.unit_bus[g]];
                    if k != 0.0 {
                        upper.push((row[t], -k));
                        lower.push((row[t], -k));
                    }
                }
                upper.push((*z, cap - fixed));
                lower.push((*z, -(cap + fixed)));
                rhs_up = cap - fixed;
                rhs_lo = -cap - fixed;
            }
            Some(LineRelax::Slack(slacks)) => {
                upper.push((slacks[l], -1.0));
                lower.push((slacks[l], 1.0));
            }
        }
        model.add_row(format!("{prefix}up[{suffix}]"), upper, RowSense::Le, rhs_up);
        model.add_row(format!("{prefix}lo[{suffix}]"), lower, RowSense::Ge, rhs_lo);
    }
}

/// Add the recourse block of scenario `n`: deployment, ramp and capacity
/// rows always, plus balance
/// and line rows according to `mode`.
pub fn add_second_stage_scenario(
    model: &mut LinearModel,
    instance: &UCInstance,
    first: &FirstStageVars,
    scenarios: &ScenarioSet,
    n: usize,
    mode: SecondStageMode,
) -> Result<ScenarioVars, FormulationError> {
    if n >= scenarios.len() {
        return Err(FormulationError::UnknownScenario {
            index: n,
            count: scenarios.len(),
        });
    }
    let topo = instance.topology();
    let scenario = scenarios.scenario(n);
    let horizon = instance.horizon;
    let mut out = ScenarioVars {
        scenario: n,
        ..Default::default()
    };

    for (g, unit) in instance.units.iter().enumerate() {
        let mut p = Vec::with_capacity(horizon);
        let mut r_up = Vec::with_capacity(horizon);
        let mut r_dn = Vec::with_capacity(horizon);
        for t in 0..horizon {
            p.push(model.add_continuous(name_gtn("Pn", unit, t, n), 0.0, f64::INFINITY));
            r_up.push(model.add_continuous(name_gtn("rup", unit, t, n), 0.0, f64::INFINITY));
            r_dn.push(model.add_continuous(name_gtn("rdn", unit, t, n), 0.0, f64::INFINITY));
        }
        let u = &first.u[g];
        let v = &first.v[g];
        let y = &first.y[g];
        for t in 0..horizon {
            // deployment within the scheduled reserves
            model.add_row(
                name_gtn("link", unit, t, n),
                [
                    (p[t], 1.0),
                    (first.p[g][t], -1.0),
                    (r_up[t], -1.0),
                    (r_dn[t], 1.0),
                ],
                RowSense::Eq,
                0.0,
            );
            // reserve deployment limits
            model.add_row(
                name_gtn("dplup", unit, t, n),
                [(r_up[t], 1.0), (first.r_up[g][t], -1.0)],
                RowSense::Le,
                0.0,
            );
            model.add_row(
                name_gtn("dpldn", unit, t, n),
                [(r_dn[t], 1.0), (first.r_dn[g][t], -1.0)],
                RowSense::Le,
                0.0,
            );
            // ramp up
            let mut terms = vec![(p[t], 1.0), (v[t], -unit.startup_cap)];
            let rhs = if t == 0 {
                unit.initial_output + unit.ramp_up * unit.initial_status()
            } else {
                terms.push((p[t - 1], -1.0));
                terms.push((u[t - 1], -unit.ramp_up));
                0.0
            };
            model.add_row(name_gtn("nrampup", unit, t, n), terms, RowSense::Le, rhs);
            // ramp down
            let mut terms = vec![
                (p[t], -1.0),
                (u[t], -unit.ramp_down),
                (y[t], -unit.shutdown_cap),
            ];
            let rhs = if t == 0 {
                -unit.initial_output
            } else {
                terms.push((p[t - 1], 1.0));
                0.0
            };
            model.add_row(name_gtn("nrampdn", unit, t, n), terms, RowSense::Le, rhs);
            // capacity
            model.add_row(
                name_gtn("ncapup", unit, t, n),
                [(p[t], 1.0), (u[t], -unit.p_max)],
                RowSense::Le,
                0.0,
            );
            model.add_row(
                name_gtn("ncapdn", unit, t, n),
                [(p[t], 1.0), (u[t], -unit.p_min)],
                RowSense::Ge,
                0.0,
            );
        }
        out.p.push(p);
        out.r_up.push(r_up);
        out.r_dn.push(r_dn);
    }

    if mode == SecondStageMode::Indicator {
        return Ok(out);
    }
    for t in 0..horizon {
        let wind = scenario.wind_at(t);
        let load = scenario.load_at(t);
        let net = load.iter().sum::<f64>() - wind.iter().sum::<f64>();
        let mut terms: Vec<(VarId, f64)> = out.p.iter().map(|row| (row[t], 1.0)).collect();
        let injection = topo.fixed_injection(&wind, &load);
        match mode {
            SecondStageMode::Strict => {
                model.add_row(
                    format!("nbal[{},{}]", t + 1, n + 1),
                    terms,
                    RowSense::Eq,
                    net,
                );
                add_line_rows(
                    model,
                    instance,
                    &topo,
                    &out.p,
                    t,
                    &injection,
                    "nline",
                    Some(n),
                    None,
                );
            }
            SecondStageMode::Slacked => {
                // sum P + W = L + eta+ - eta-
                let up = model.add_var(
                    format!("eta1up[{},{}]", t + 1, n + 1),
                    0.0,
                    f64::INFINITY,
                    VarKind::Continuous,
                    1.0,
                );
                let dn = model.add_var(
                    format!("eta1dn[{},{}]", t + 1, n + 1),
                    0.0,
                    f64::INFINITY,
                    VarKind::Continuous,
                    1.0,
                );
                terms.push((up, -1.0));
                terms.push((dn, 1.0));
                model.add_row(
                    format!("nbal[{},{}]", t + 1, n + 1),
                    terms,
                    RowSense::Eq,
                    net,
                );
                out.balance_up.push(up);
                out.balance_dn.push(dn);
                let slacks: Vec<VarId> = instance
                    .network
                    .lines
                    .iter()
                    .map(|line| {
                        model.add_var(
                            format!("eta2[{},{},{}]", line.id, t + 1, n + 1),
                            0.0,
                            f64::INFINITY,
                            VarKind::Continuous,
                            1.0,
                        )
                    })
                    .collect();
                add_line_rows(
                    model,
                    instance,
                    &topo,
                    &out.p,
                    t,
                    &injection,
                    "nline",
                    Some(n),
                    Some(LineRelax::Slack(&slacks)),
                );
                for (l, s) in slacks.into_iter().enumerate() {
                    if out.line_slack.len() <= l {
                        out.line_slack.push(Vec::with_capacity(horizon));
                    }
                    out.line_slack[l].push(s);
                }
            }
            SecondStageMode::Indicator => unreachable!(),
        }
    }
    Ok(out)
}

/// Line rows of scenario `n` that bind unconditionally (paper-literal mode).
fn add_scenario_lines(
    model: &mut LinearModel,
    instance: &UCInstance,
    scenarios: &ScenarioSet,
    sv: &ScenarioVars,
) {
    let topo = instance.topology();
    let scenario = scenarios.scenario(sv.scenario);
    for t in 0..instance.horizon {
        let injection = topo.fixed_injection(&scenario.wind_at(t), &scenario.load_at(t));
        add_line_rows(
            model,
            instance,
            &topo,
            &sv.p,
            t,
            &injection,
            "nline",
            Some(sv.scenario),
            None,
        );
    }
}

/// Stochastic UC: every scenario is enforced.
pub fn build_suc(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
) -> Result<UcModel, FormulationError> {
    scenarios.check_dimensions(instance)?;
    let mut uc = build_first_stage(instance)?;
    uc.kind = ModelKind::Suc;
    for n in 0..scenarios.len() {
        let sv = add_second_stage_scenario(
            &mut uc.model,
            instance,
            &uc.first,
            scenarios,
            n,
            SecondStageMode::Strict,
        )?;
        uc.second.push(sv);
    }
    Ok(uc)
}

fn add_indicators(uc: &mut UcModel, instance: &UCInstance, scenarios: &ScenarioSet) {
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
}

/// Per-line relaxation constants `M_l = sum_b |K_lb| (gen_b + wind_b + load_b)`
/// from the largest values any scenario can place at each bus.
pub fn line_big_m(instance: &UCInstance, scenarios: &ScenarioSet, t: usize) -> Vec<f64> {
    let topo = instance.topology();
    let mut bound = vec![0.0; topo.bus_count];
    for (g, unit) in instance.units.iter().enumerate() {
        bound[topo.unit_bus[g]] += unit.p_max;
    }
    for q in 0..instance.wind_farms.len() {
        bound[topo.wind_bus[q]] += scenarios.max_wind(q, t);
    }
    for d in 0..instance.loads.len() {
        bound[topo.load_bus[d]] += scenarios.max_load(d, t);
    }
    topo.ptdf
        .iter()
        .map(|row| row.iter().zip(&bound).map(|(k, b)| k.abs() * b).sum())
        .collect()
}

/// Big-M chance-constrained UC.
pub fn build_cc_bigm(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
) -> Result<UcModel, FormulationError> {
    scenarios.check_dimensions(instance)?;
    let mut uc = build_first_stage(instance)?;
    uc.kind = ModelKind::BigM;
    add_indicators(&mut uc, instance, scenarios);
    let topo = instance.topology();
    let mode = instance.config.relaxation_mode;
    for n in 0..scenarios.len() {
        let sv = add_second_stage_scenario(
            &mut uc.model,
            instance,
            &uc.first,
            scenarios,
            n,
            SecondStageMode::Indicator,
        )?;
        let z = uc.z[n];
        let scenario = scenarios.scenario(n);
        for t in 0..instance.horizon {
            let m = instance.default_big_m(Some(scenarios), t);
            let net =
                scenario.load_at(t).iter().sum::<f64>() - scenario.wind_at(t).iter().sum::<f64>();
            let terms: Vec<(VarId, f64)> = sv.p.iter().map(|row| (row[t], 1.0)).collect();
            // -M z <= sum P + W - L <= M z
            let mut up = terms.clone();
            up.push((z, -m));
            uc.model
                .add_row(format!("bmup[{},{}]", t + 1, n + 1), up, RowSense::Le, net);
            let mut lo = terms;
            lo.push((z, m));
            uc.model
                .add_row(format!("bmlo[{},{}]", t + 1, n + 1), lo, RowSense::Ge, net);
            if mode == RelaxationMode::FullDrop {
                let ml = line_big_m(instance, scenarios, t);
                let injection = topo.fixed_injection(&scenario.wind_at(t), &scenario.load_at(t));
                add_line_rows(
                    &mut uc.model,
                    instance,
                    &topo,
                    &sv.p,
                    t,
                    &injection,
                    "nline",
                    Some(n),
                    Some(LineRelax::BigM { z, m: &ml }),
                );
            }
        }
        if mode == RelaxationMode::PaperLiteral {
            add_scenario_lines(&mut uc.model, instance, scenarios, &sv);
        }
        uc.second.push(sv);
    }
    Ok(uc)
}

/// McCormick-linearized bilinear chance-constrained UC.
pub fn build_cc_bilinear(
    instance: &UCInstance,
    scenarios: &ScenarioSet,
) -> Result<UcModel, FormulationError> {
    scenarios.check_dimensions(instance)?;
    let mut uc = build_first_stage(instance)?;
    uc.kind = ModelKind::Bilinear;
    add_indicators(&mut uc, instance, scenarios);
    let topo = instance.topology();
    let mode = instance.config.relaxation_mode;
    for n in 0..scenarios.len() {
        let mut sv = add_second_stage_scenario(
            &mut uc.model,
            instance,
            &uc.first,
            scenarios,
            n,
            SecondStageMode::Indicator,
        )?;
        let z = uc.z[n];
        for (g, unit) in instance.units.iter().enumerate() {
            let mut row = Vec::with_capacity(instance.horizon);
            for t in 0..instance.horizon {
                let pt = uc
                    .model
                    .add_continuous(name_gtn("Pt", unit, t, n), 0.0, f64::INFINITY);
                let pn = sv.p[g][t];
                // McCormick envelope of P z
                uc.model.add_row(
                    name_gtn("mc1", unit, t, n),
                    [(pt, 1.0), (z, -unit.p_max)],
                    RowSense::Le,
                    0.0,
                );
                uc.model.add_row(
                    name_gtn("mc2", unit, t, n),
                    [(pt, 1.0), (pn, -1.0)],
                    RowSense::Le,
                    0.0,
                );
                uc.model.add_row(
                    name_gtn("mc3", unit, t, n),
                    [(pt, 1.0), (pn, -1.0), (z, -unit.p_max)],
                    RowSense::Ge,
                    -unit.p_max,
                );
                row.push(pt);
            }
            sv.p_tilde.push(row);
        }
        let scenario = scenarios.scenario(n);
        for t in 0..instance.horizon {
            let wind = scenario.wind_at(t);
            let load = scenario.load_at(t);
            let net = load.iter().sum::<f64>() - wind.iter().sum::<f64>();
            // sum (P - P~) + (W - L)(1 - z) = 0
            let mut terms: Vec<(VarId, f64)> = Vec::new();
            for g in 0..instance.units.len() {
                terms.push((sv.p[g][t], 1.0));
                terms.push((sv.p_tilde[g][t], -1.0));
            }
            terms.push((z, net));
            uc.model.add_row(
                format!("blbal[{},{}]", t + 1, n + 1),
                terms,
                RowSense::Eq,
                net,
            );
            if mode == RelaxationMode::FullDrop {
                let injection = topo.fixed_injection(&wind, &load);
                add_line_rows(
                    &mut uc.model,
                    instance,
                    &topo,
                    &sv.p,
                    t,
                    &injection,
                    "nline",
                    Some(n),
                    Some(LineRelax::Bilinear {
                        z,
                        p_tilde: &sv.p_tilde,
                    }),
                );
            }
        }
        if mode == RelaxationMode::PaperLiteral {
            add_scenario_lines(&mut uc.model, instance, scenarios, &sv);
        }
        uc.second.push(sv);
    }
    Ok(uc)
}

impl UcModel {
    /// Read the first-stage schedule (and `z`) out of a solution.
    pub fn extract(&self, solution: &Solution) -> FirstStageSolution {
        let grid = |m: &Vec<Vec<VarId>>| -> Vec<Vec<f64>> {
            m.iter()
                .map(|row| row.iter().map(|&v| solution.value(v)).collect())
                .collect()
        };
        FirstStageSolution {
            u: grid(&self.first.u),
            v: grid(&self.first.v),
            y: grid(&self.first.y),
            delta: self.first.delta.iter().map(grid).collect(),
            p: grid(&self.first.p),
            r_up: grid(&self.first.r_up),
            r_dn: grid(&self.first.r_dn),
            z: self.z.iter().map(|&z| solution.value(z)).collect(),
            objective: solution.objective,
        }
    }
}

/// Objective of a schedule, with the piecewise fuel cost filled
/// cheapest segment first.
pub fn first_stage_cost(
    instance: &UCInstance,
    fs: &FirstStageSolution,
) -> Result<f64, FormulationError> {
    let mut total = 0.0;
    for (g, unit) in instance.units.iter().enumerate() {
        let pw = piecewise_linearize(unit, instance.config.fuel_segments)?;
        let (c_up, c_dn) = unit.reserve_costs();
        for t in 0..instance.horizon {
            let u = fs.u[g][t];
            total += (unit.no_load_cost + pw.base) * u
                + unit.shutdown_cost * fs.y[g][t]
                + c_up * fs.r_up[g][t]
                + c_dn * fs.r_dn[g][t]
                + if u > 0.5 {
                    pw.evaluate(unit.p_min, fs.p[g][t]) - pw.base
                } else {
                    0.0
                };
            for (s, seg) in unit.startup_segments.iter().enumerate() {
                total += seg.cost * fs.delta[g][s][t];
            }
        }
    }
    Ok(total)
}

/// Scan a schedule for violations of the commitment logic and minimum up/down times, taking
/// the initial history into account. Returns a description of the first
/// violation.
pub fn check_commitment_logic(
    instance: &UCInstance,
    fs: &FirstStageSolution,
) -> Result<(), String> {
    for (g, unit) in instance.units.iter().enumerate() {
        let u: Vec<bool> = fs.u[g].iter().map(|&x| x > 0.5).collect();
        let mut prev = unit.initial_on;
        // Length of the run in progress, counting the history.
        let mut run = unit.initial_hours_in_state as usize;
        for t in 0..instance.horizon {
            let v = fs.v[g][t] > 0.5;
            let y = fs.y[g][t] > 0.5;
            if (u[t] && !prev) != v || (!u[t] && prev) != y {
                return Err(format!(
                    "unit {} period {}: v/y inconsistent with u",
                    unit.id,
                    t + 1
                ));
            }
            if u[t] != prev {
                let need = if prev { unit.min_up } else { unit.min_down } as usize;
                if run < need {
                    return Err(format!(
                        "unit {} period {}: switched after {run} h, minimum {need} h",
                        unit.id,
                        t + 1
                    ));
                }
                run = 1;
            } else {
                run += 1;
            }
            prev = u[t];
        }
    }
    Ok(())
}
