//! Acceptance suite. One test per criterion; the tests take a shared lock so
//! they run one at a time (criterion 9 compares wall times) and each writes
//! a PASS/FAIL line to stderr, past the test harness's output capture.

mod common;

use std::io::Write as _;
use std::sync::Mutex;
use std::time::Instant;

use ccuc_core::benders::{make_cut, solve_fsp_with, FeasibilityCut, FspScope};
use ccuc_core::harness::{
    benchmark, exhaustive_oracle, integrality_gap_study, run_method, sweep, SweepGrid,
};
use ccuc_core::model::relax_binaries;
use ccuc_core::{
    benders_solve, build_cc_bigm, build_cc_bilinear, bundled, solve_fsp, BackendKind, Method,
    RelaxationMode, RunStatus, ScenarioSet, UCInstance,
};
use common::{micro1_with, product_range, random_schedules, rel_diff, sampled, solve_mip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

/// Run one criterion under the lock, print its verdict, and fail the test
/// with the collected messages if any check failed.
fn criterion(number: u32, title: &str, body: impl FnOnce(&mut Vec<String>) -> String) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut failures = Vec::new();
    let summary = body(&mut failures);
    let verdict = if failures.is_empty() { "PASS" } else { "FAIL" };
    let line = format!(
        "criterion {number} [{verdict}] {title}: {summary} ({:.1} s)\n",
        start.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(
        failures.is_empty(),
        "criterion {number} failed:\n  {}",
        failures.join("\n  ")
    );
}

fn check(failures: &mut Vec<String>, ok: bool, message: impl FnOnce() -> String) {
    if !ok {
        failures.push(message());
    }
}

fn tuned(instance: &UCInstance, mip_gap: f64, tolerance: f64) -> UCInstance {
    let mut inst = instance.clone();
    inst.config.mip_gap = mip_gap;
    inst.config.benders_tolerance = tolerance;
    inst
}

fn objective(method: Method, instance: &UCInstance, scenarios: &ScenarioSet) -> Option<f64> {
    let run = run_method(method, instance, scenarios, BackendKind::default()).unwrap();
    (run.report.status == RunStatus::Optimal)
        .then_some(run.report.objective)
        .flatten()
}

fn lp_relaxation(model: &ccuc_core::LinearModel) -> f64 {
    let sol = BackendKind::default()
        .create()
        .solve_lp(&relax_binaries(model))
        .unwrap();
    assert!(sol.is_optimal(), "{:?}", sol.status);
    sol.objective
}

#[test]
fn criterion_1_oracle_equivalence() {
    criterion(
        1,
        "oracle equivalence on six-shape, 5 scenarios, eps 0.2",
        |failures| {
            let inst = tuned(&bundled::six_shape(), 1e-7, 1e-5).with_risk_level(0.2);
            let set = bundled::six_shape_scenarios();
            let start = Instant::now();
            let oracle = exhaustive_oracle(&inst, &set, 0.2, BackendKind::default()).unwrap();
            check(failures, oracle.combinations.len() == 6, || {
                format!(
                    "{} admissible combinations, expected 6",
                    oracle.combinations.len()
                )
            });
            let mut parts = vec![format!("oracle {:.4}", oracle.objective)];
            for method in [Method::Benders, Method::CcBigm, Method::CcBilinear] {
                match objective(method, &inst, &set) {
                    Some(value) => {
                        let diff = rel_diff(value, oracle.objective);
                        check(failures, diff <= 1e-4, || {
                            format!(
                                "{method}: {value} vs oracle {} (rel {diff:.2e})",
                                oracle.objective
                            )
                        });
                        parts.push(format!("{method} {value:.4}"));
                    }
                    None => failures.push(format!("{method} did not reach optimality")),
                }
            }
            let elapsed = start.elapsed().as_secs_f64();
            check(failures, elapsed < 60.0, || {
                format!("took {elapsed:.1} s, expected < 60 s")
            });
            parts.join(", ")
        },
    );
}

#[test]
fn criterion_2_reduction_identities() {
    criterion(
        2,
        "eps = 0 equals SUC, eps = 1 equals deterministic",
        |failures| {
            let cases = [
                (
                    "micro-1",
                    bundled::micro1(),
                    sampled(&bundled::micro1(), 6, 1),
                ),
                (
                    "micro-2",
                    bundled::micro2(),
                    sampled(&bundled::micro2(), 6, 1),
                ),
                (
                    "six-shape",
                    bundled::six_shape(),
                    bundled::six_shape_scenarios(),
                ),
            ];
            let mut worst: f64 = 0.0;
            for (name, inst, set) in cases {
                let inst = tuned(&inst, 1e-9, 1e-7);
                let suc = objective(Method::Suc, &inst, &set).expect("SUC solves");
                let det = objective(Method::Det, &inst, &set).expect("deterministic solves");
                for (eps, reference, label) in [(0.0, suc, "SUC"), (1.0, det, "deterministic")] {
                    let at = inst
                        .with_risk_level(eps)
                        .with_mode(RelaxationMode::FullDrop);
                    for method in [Method::CcBigm, Method::CcBilinear, Method::Benders] {
                        match objective(method, &at, &set) {
                            Some(value) => {
                                let diff = rel_diff(value, reference);
                                worst = worst.max(diff);
                                check(failures, diff <= 1e-6, || {
                                    format!(
                                        "{name} eps {eps} {method}: {value} vs {label} {reference}"
                                    )
                                });
                            }
                            None => failures.push(format!("{name} eps {eps} {method} not optimal")),
                        }
                    }
                }
            }
            format!("largest relative deviation {worst:.2e}")
        },
    );
}

#[test]
fn criterion_3_relaxation_tightness() {
    criterion(
        3,
        "bilinear LP relaxation at least Big-M's; strict IG gap exists",
        |failures| {
            let mut compared = 0;
            for (name, inst) in bundled::all() {
                for n in [5, 20, 50] {
                    let set = sampled(&inst, n, 7);
                    let bigm = lp_relaxation(&build_cc_bigm(&inst, &set).unwrap().model);
                    let bilinear = lp_relaxation(&build_cc_bilinear(&inst, &set).unwrap().model);
                    let tol = 1e-7 * bigm.abs().max(1.0);
                    check(failures, bilinear >= bigm - tol, || {
                        format!("{name} N={n}: bilinear LP {bilinear} < Big-M LP {bigm}")
                    });
                    compared += 1;
                }
            }
            let mut strict = Vec::new();
            for (name, inst, sizes) in [
                ("micro-1", bundled::micro1(), &[5, 20][..]),
                ("micro-2", bundled::micro2(), &[5, 20][..]),
                ("six-shape", bundled::six_shape(), &[5][..]),
            ] {
                let inst = tuned(&inst, 1e-9, 1e-4);
                for &n in sizes {
                    let study =
                        integrality_gap_study(&inst, &sampled(&inst, n, 7), BackendKind::default())
                            .unwrap();
                    let (bigm, bilinear) =
                        (study.rows[0].integrality_gap, study.rows[1].integrality_gap);
                    match (bigm, bilinear) {
                        (Some(a), Some(b)) => {
                            check(failures, b <= a + 1e-9, || {
                                format!("{name} N={n}: IG bilinear {b} > Big-M {a}")
                            });
                            if b < a - 1e-6 {
                                strict.push(format!("{name} N={n} ({a:.5} vs {b:.5})"));
                            }
                        }
                        _ => failures.push(format!("{name} N={n}: gap study incomplete")),
                    }
                }
            }
            check(failures, !strict.is_empty(), || {
                "no instance shows a strict gap".into()
            });
            format!(
                "{compared} LP pairs ordered; strict IG gap on {}",
                strict.join(", ")
            )
        },
    );
}

#[test]
fn criterion_4_mccormick_exactness() {
    criterion(
        4,
        "McCormick rows pin P z for binary z, envelope for fractional z",
        |failures| {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let cases = 1000;
            for _ in 0..cases {
                let p_max = rng.random_range(1.0..500.0);
                let p = rng.random_range(0.0..=1.0) * p_max;
                let tol = 1e-9 * p_max;
                let z = if rng.random::<bool>() { 1.0 } else { 0.0 };
                let (lo, hi) = product_range(p_max, p, z);
                check(
                    failures,
                    (lo - p * z).abs() <= tol && (hi - p * z).abs() <= tol,
                    || format!("P {p}, z {z}, p_max {p_max}: range [{lo}, {hi}]"),
                );
                let z = rng.random_range(0.001..0.999);
                let (lo, hi) = product_range(p_max, p, z);
                let envelope = ((p + p_max * z - p_max).max(0.0), p.min(p_max * z));
                check(
                    failures,
                    (lo - envelope.0).abs() <= tol
                        && (hi - envelope.1).abs() <= tol
                        && lo <= p * z + tol
                        && p * z <= hi + tol,
                    || {
                        format!("P {p}, z {z}, p_max {p_max}: range [{lo}, {hi}], envelope {envelope:?}")
                    },
                );
            }
            for p in [0.0, 80.0] {
                for z in [0.0, 1.0] {
                    let (lo, hi) = product_range(80.0, p, z);
                    check(failures, (lo - hi).abs() < 1e-12, || {
                        format!("vertex ({p}, {z}) not attained")
                    });
                }
            }
            format!("{cases} binary and {cases} fractional triples")
        },
    );
}

#[test]
fn criterion_5_cut_validity() {
    criterion(
        5,
        "cuts are subgradient inequalities on micro-2",
        |failures| {
            let inst = bundled::micro2();
            let set = sampled(&inst, 10, 11);
            let points = random_schedules(&inst, 60, 5);
            let threshold = inst.config.feasibility_threshold;

            let (_, state) = benders_solve(&inst, &set).unwrap();
            let mut cuts: Vec<FeasibilityCut> = state.cuts.clone();
            let from_loop = cuts.len();
            for x in &points[..10] {
                for n in 0..set.len() {
                    let r = solve_fsp(&inst, &set, n, x).unwrap();
                    if r.psi > threshold {
                        cuts.push(make_cut(&r, x, 0, threshold).unwrap());
                    }
                }
            }

            let mut checks = 0;
            let mut worst: f64 = f64::INFINITY;
            for (i, x) in points.iter().enumerate() {
                let mut cache = std::collections::HashMap::new();
                for cut in &cuts {
                    let scope = cut.scope;
                    let psi = *cache
                        .entry((cut.scenario, format!("{scope:?}")))
                        .or_insert_with(|| {
                            let mut backend = BackendKind::default().create();
                            solve_fsp_with(backend.as_mut(), &inst, &set, cut.scenario, x, scope)
                                .unwrap()
                                .psi
                        });
                    let bound = cut.linear_part(x);
                    worst = worst.min(psi - bound);
                    checks += 1;
                    check(failures, psi >= bound - 1e-6, || {
                        format!(
                            "point {i}, cut of scenario {} ({scope:?}): psi {psi} < {bound}",
                            cut.scenario
                        )
                    });
                    // a period cut also bounds the full subproblem
                    if scope != FspScope::Full {
                        let full = solve_fsp(&inst, &set, cut.scenario, x).unwrap().psi;
                        check(failures, full >= psi - 1e-6, || {
                            format!("point {i}: period value {psi} above full value {full}")
                        });
                    }
                }
            }

            let uc = build_cc_bilinear(&inst, &set).unwrap();
            let opt = uc.extract(&solve_mip(&uc.model));
            for cut in &state.cuts {
                let lhs = cut.evaluate(&opt, opt.z[cut.scenario]);
                check(failures, lhs <= 1e-6, || {
                    format!(
                        "extensive optimum violates a cut of scenario {} by {lhs}",
                        cut.scenario
                    )
                });
            }
            format!(
            "{} points x {} cuts ({from_loop} from the loop): {checks} checks, min slack {worst:.2e}",
            points.len(),
            cuts.len()
        )
        },
    );
}

#[test]
fn criterion_6_benders_dynamics() {
    criterion(
        6,
        "monotone bounds, <= 20 iterations, gap <= 1e-4",
        |failures| {
            let cases = [
                (
                    "micro-1 N=10",
                    bundled::micro1(),
                    sampled(&bundled::micro1(), 10, 3),
                    RelaxationMode::FullDrop,
                ),
                (
                    "micro-2 N=10",
                    bundled::micro2(),
                    sampled(&bundled::micro2(), 10, 3),
                    RelaxationMode::FullDrop,
                ),
                (
                    "micro-2 N=10 paper-literal",
                    bundled::micro2(),
                    sampled(&bundled::micro2(), 10, 3),
                    RelaxationMode::PaperLiteral,
                ),
                (
                    "six-shape N=5",
                    bundled::six_shape(),
                    bundled::six_shape_scenarios(),
                    RelaxationMode::FullDrop,
                ),
                (
                    "six-shape N=10",
                    bundled::six_shape(),
                    sampled(&bundled::six_shape(), 10, 7),
                    RelaxationMode::FullDrop,
                ),
            ];
            let mut summary = Vec::new();
            for (name, inst, set, mode) in cases {
                let inst = tuned(&inst, 1e-4, 1e-4).with_mode(mode);
                let (_, state) = match benders_solve(&inst, &set) {
                    Ok(done) => done,
                    Err(e) => {
                        failures.push(format!("{name}: {e}"));
                        continue;
                    }
                };
                for w in state.log.windows(2) {
                    check(
                        failures,
                        w[1].lower_bound >= w[0].lower_bound - 1e-9,
                        || format!("{name}: LB fell at iteration {}", w[1].iteration),
                    );
                    check(
                        failures,
                        w[1].upper_bound <= w[0].upper_bound + 1e-9,
                        || format!("{name}: UB rose at iteration {}", w[1].iteration),
                    );
                }
                check(failures, state.iteration <= 20, || {
                    format!("{name}: {} iterations", state.iteration)
                });
                check(failures, state.gap() <= 1e-4, || {
                    format!("{name}: final gap {}", state.gap())
                });
                summary.push(format!("{name}: {} it", state.iteration));
            }
            summary.join(", ")
        },
    );
}

#[test]
fn criterion_7_epsilon_monotonicity() {
    criterion(
        7,
        "six-shape N=50 objectives non-increasing in eps",
        |failures| {
            let gap = 1e-3;
            let inst = tuned(&bundled::six_shape(), gap, gap);
            let set = sampled(&inst, 50, 7);
            let levels = vec![0.0, 0.05, 0.10, 0.15, 0.20, 1.0];
            let result = sweep(
                &inst,
                &set,
                &SweepGrid::Epsilon(levels.clone()),
                Method::CcBigm,
                BackendKind::default(),
            )
            .unwrap();
            let objectives: Vec<f64> = result
                .rows
                .iter()
                .map(|r| r.objective.unwrap_or(f64::NAN))
                .collect();
            for r in &result.rows {
                check(failures, r.status == RunStatus::Optimal, || {
                    format!("eps {}: status {}", r.epsilon, r.status.as_str())
                });
            }
            // each objective is within `gap` of its optimum, so a rise above
            // gap / (1 - gap) would contradict monotone optima
            for i in 1..levels.len() {
                let (prev, next) = (objectives[i - 1], objectives[i]);
                check(failures, next <= prev / (1.0 - gap) + 1e-6, || {
                    format!("eps {} -> {}: {prev} -> {next}", levels[i - 1], levels[i])
                });
            }
            let shown: Vec<String> = levels
                .iter()
                .zip(&objectives)
                .map(|(e, o)| format!("{e}: {o:.1}"))
                .collect();
            shown.join(", ")
        },
    );
}

#[test]
fn criterion_8_fsp_analytics() {
    criterion(
        8,
        "micro-1 shortfall beyond committed capacity",
        |failures| {
            let (inst, set, fs) = micro1_with(120.0, 0.0, 3);
            let capacity = fs.p[0][3] + fs.r_up[0][3];
            check(failures, (capacity - 100.0).abs() < 1e-12, || {
                format!("capacity {capacity}")
            });
            let short = solve_fsp(&inst, &set, 0, &fs).unwrap();
            check(failures, (short.psi - 20.0).abs() <= 1e-6, || {
                format!("psi {} at load 120", short.psi)
            });
            check(
                failures,
                (short.slack_total() - short.psi).abs() <= 1e-6,
                || "slack total differs from psi".into(),
            );
            let mut zero = Vec::new();
            for load in [60.0, 95.0, 100.0] {
                let (inst, set, fs) = micro1_with(load, 0.0, 3);
                let psi = solve_fsp(&inst, &set, 0, &fs).unwrap().psi;
                check(failures, psi.abs() <= 1e-6, || {
                    format!("psi {psi} at load {load}")
                });
                zero.push(psi);
            }
            format!("psi {:.6} at 120 MW, {zero:?} at 60/95/100 MW", short.psi)
        },
    );
}

#[test]
fn criterion_9_speed_direction() {
    criterion(
        9,
        "six-shape N=200: benders no slower than each direct solve",
        |failures| {
            let gap = 1e-2;
            let inst = tuned(&bundled::six_shape(), gap, gap);
            let set = sampled(&inst, 200, 7);
            // Benders may use as long as the slower direct solve; past that the
            // criterion has failed whatever happens next
            let result = benchmark(&inst, &set, BackendKind::default(), gap, Some(1.0)).unwrap();
            let [bigm, bilinear, benders] = [&result.rows[0], &result.rows[1], &result.rows[2]];
            for r in [bigm, bilinear] {
                check(failures, r.status == RunStatus::Optimal, || {
                    format!("{}: status {}", r.method, r.status.as_str())
                });
            }
            check(failures, benders.status == RunStatus::Optimal, || {
                format!(
                    "benders: status {} after {} iterations in {:.1} s",
                    benders.status.as_str(),
                    benders.iterations.unwrap_or(0),
                    benders.wall_time
                )
            });
            let fastest = bigm.wall_time.min(bilinear.wall_time);
            check(failures, benders.wall_time <= fastest, || {
                format!(
                    "benders {:.1} s vs fastest direct {fastest:.1} s",
                    benders.wall_time
                )
            });
            format!(
                "cc-bigm {:.1} s, cc-bilinear {:.1} s, benders {:.1} s ({}), ratio {}",
                bigm.wall_time,
                bilinear.wall_time,
                benders.wall_time,
                benders.status.as_str(),
                result
                    .time_ratio
                    .map(|r| format!("{r:.2}"))
                    .unwrap_or_else(|| "-".into())
            )
        },
    );
}
