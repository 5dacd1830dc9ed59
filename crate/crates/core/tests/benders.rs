mod common;

use ccuc_core::benders::{build_master, make_cut, upper_bound_step, upper_bound_step_extensive};
use ccuc_core::{
    benders_solve, build_suc, bundled, solve_fsp, BackendKind, FirstStageSolution, Scenario,
    ScenarioSet, UCInstance,
};
use common::{deterministic, micro1_with, random_schedules, sampled, solve_mip};

fn micro2_set() -> (UCInstance, ScenarioSet) {
    let inst = bundled::micro2();
    let set = sampled(&inst, 10, 11);
    (inst, set)
}

#[test]
fn cut_evaluates_to_phi_at_its_snapshot_and_vanishes_when_dropped() {
    let (inst, set) = micro2_set();
    let x = &random_schedules(&inst, 1, 9)[0];
    let threshold = inst.config.feasibility_threshold;
    let r = (0..set.len())
        .map(|n| solve_fsp(&inst, &set, n, x).unwrap())
        .find(|r| r.psi > threshold)
        .expect("a random schedule misses some scenario");
    let cut = make_cut(&r, x, 1, threshold).unwrap();
    assert!((cut.evaluate(x, 0.0) - r.psi).abs() < 1e-9);
    assert_eq!(cut.evaluate(x, 1.0), 0.0);
    assert!(make_cut(
        &solve_fsp(&inst, &set, 0, &deterministic(&inst)).unwrap(),
        x,
        1,
        1e9
    )
    .is_err());
}

#[test]
fn master_excludes_the_point_a_cut_was_generated_at() {
    let (inst, set) = micro2_set();
    let master = build_master(&inst, &set, &[]).unwrap();
    let xhat = master.uc.extract(&solve_mip(&master.uc.model));
    let threshold = inst.config.feasibility_threshold;
    let r = (0..set.len())
        .filter(|&n| xhat.z[n] < 0.5)
        .map(|n| solve_fsp(&inst, &set, n, &xhat).unwrap())
        .find(|r| r.psi > threshold)
        .expect("the first-stage optimum misses some scenario");
    let n = r.scenario;
    let cut = make_cut(&r, &xhat, 1, threshold).unwrap();

    let master = build_master(&inst, &set, std::slice::from_ref(&cut)).unwrap();
    let next = master.uc.extract(&solve_mip(&master.uc.model));
    assert!(cut.evaluate(&next, next.z[n]) <= 1e-6);
    let same = xhat.u == next.u
        && xhat.v == next.v
        && xhat.y == next.y
        && xhat.p == next.p
        && xhat.r_up == next.r_up
        && xhat.r_dn == next.r_dn;
    assert!(
        !(same && next.z[n] < 0.5),
        "master returned the cut-off pair again"
    );
    assert!(next.objective >= xhat.objective - 1e-6);
}

#[test]
fn decomposed_upper_bound_matches_the_extensive_step() {
    let (inst, set) = micro2_set();
    let (incumbent, _) = benders_solve(&inst, &set).unwrap();
    let suc = build_suc(&inst, &set).unwrap();
    let mut points = random_schedules(&inst, 12, 21);
    points.extend([
        deterministic(&inst),
        incumbent,
        suc.extract(&solve_mip(&suc.model)),
    ]);
    let mut finite = 0;
    for x in &points {
        let decomposed = upper_bound_step(&inst, &set, x).unwrap();
        let extensive =
            upper_bound_step_extensive(BackendKind::default().create().as_mut(), &inst, &set, x)
                .unwrap();
        if decomposed.value.is_finite() {
            finite += 1;
            let rel = (decomposed.value - extensive.value).abs() / extensive.value.abs();
            assert!(rel < 1e-6, "{} vs {}", decomposed.value, extensive.value);
        } else {
            assert!(
                extensive.value.is_infinite(),
                "extensive step found {}",
                extensive.value
            );
        }
    }
    assert!(finite > 0);
}

const TWO_BUS: &str = r#"
name = "two-bus"
horizon = 1
risk_level = 0.0

[network]
buses = ["a", "b"]

[[network.lines]]
id = "ab"
capacity = 10.0
ptdf_row = { a = 1.0, b = 0.0 }

[[units]]
id = "g1"
bus = "a"
p_min = 5.0
p_max = 80.0
ramp_up = 100.0
ramp_down = 100.0
startup_cap = 100.0
shutdown_cap = 100.0
min_up = 1
min_down = 1
no_load_cost = 10.0
shutdown_cost = 0.0
fuel_cost = { a = 0.0, b = 10.0, c = 0.0 }
startup_segments = [{ offline_threshold_hours = 1, cost = 10.0 }]
reserve_up_max = 25.0
reserve_dn_max = 25.0
initial_on = true
initial_hours_in_state = 2
initial_output = 40.0

[[units]]
id = "g2"
bus = "b"
p_min = 5.0
p_max = 80.0
ramp_up = 100.0
ramp_down = 100.0
startup_cap = 100.0
shutdown_cap = 100.0
min_up = 1
min_down = 1
no_load_cost = 10.0
shutdown_cost = 0.0
fuel_cost = { a = 0.0, b = 20.0, c = 0.0 }
startup_segments = [{ offline_threshold_hours = 1, cost = 10.0 }]
reserve_up_max = 25.0
reserve_dn_max = 25.0
initial_on = true
initial_hours_in_state = 2
initial_output = 40.0

[[wind]]
id = "w1"
bus = "b"
forecast = [0.0]

[[loads]]
id = "d1"
bus = "a"
forecast = [60.0]
"#;

#[test]
fn line_overflow_after_redispatch_matches_grid_search() {
    let inst = UCInstance::from_toml_str(TWO_BUS).unwrap();
    let (load, wind) = (60.0, 25.0);
    let cases = [(20.0, 40.0), (35.0, 25.0), (50.0, 10.0), (45.0, 15.0)];
    for (p1, p2) in cases {
        let fs = FirstStageSolution {
            u: vec![vec![1.0]; 2],
            v: vec![vec![0.0]; 2],
            y: vec![vec![0.0]; 2],
            delta: vec![vec![vec![0.0]]; 2],
            p: vec![vec![p1], vec![p2]],
            r_up: vec![vec![25.0]; 2],
            r_dn: vec![vec![25.0]; 2],
            z: Vec::new(),
            objective: 0.0,
        };
        let set = ScenarioSet::uniform(vec![Scenario {
            wind: vec![vec![wind]],
            load: vec![vec![load]],
        }])
        .unwrap();
        let fsp = solve_fsp(&inst, &set, 0, &fs).unwrap().psi;

        // flow on ab is the injection at a: P1 - load; P2 only enters the balance
        let range = |p: f64| ((p - 25.0).max(5.0), (p + 25.0).min(80.0));
        let (lo1, hi1) = range(p1);
        let (lo2, hi2) = range(p2);
        let steps = 200_000;
        let mut best = f64::INFINITY;
        for k in 0..=steps {
            let q1 = lo1 + (hi1 - lo1) * k as f64 / steps as f64;
            let q2 = (load - wind - q1).clamp(lo2, hi2);
            let balance = (q1 + q2 + wind - load).abs();
            let overflow = ((q1 - load).abs() - 10.0).max(0.0);
            best = best.min(balance + overflow);
        }
        assert!(
            (fsp - best).abs() <= 1e-3,
            "schedule ({p1}, {p2}): fsp {fsp} vs grid {best}"
        );
    }
}

#[test]
fn upper_bound_drops_the_single_bad_scenario() {
    let (inst, bad_set, fs) = micro1_with(120.0, 0.0, 3);
    let good = Scenario::forecast(&inst);
    let bad = bad_set.scenarios[0].clone();
    let mut scenarios = vec![good; 5];
    scenarios[2] = bad;
    let set = ScenarioSet::uniform(scenarios).unwrap();
    let inst = inst.with_risk_level(0.2);
    let ub = upper_bound_step(&inst, &set, &fs).unwrap();
    assert!((ub.value - fs.objective).abs() < 1e-9);
    assert_eq!(ub.z, vec![0.0, 0.0, 1.0, 0.0, 0.0]);

    // enumeration over indicator vectors: the only admissible ones drop at
    // most one scenario, and only dropping scenario 3 accommodates the rest
    let feasible: Vec<usize> = (0..5)
        .filter(|&d| (0..5).all(|n| n == d || solve_fsp(&inst, &set, n, &fs).unwrap().psi <= 1e-6))
        .collect();
    assert_eq!(feasible, vec![2]);

    let strict = inst.with_risk_level(0.1);
    assert!(upper_bound_step(&strict, &set, &fs)
        .unwrap()
        .value
        .is_infinite());
}

#[test]
fn bounds_are_monotone_and_the_gap_closes() {
    for (name, inst) in bundled::all() {
        if name == "six-shape" {
            continue;
        }
        let set = sampled(&inst, 8, 3);
        let (_, state) = benders_solve(&inst, &set).unwrap();
        for w in state.log.windows(2) {
            assert!(
                w[1].lower_bound >= w[0].lower_bound - 1e-9,
                "{name}: LB decreased"
            );
            assert!(
                w[1].upper_bound <= w[0].upper_bound + 1e-9,
                "{name}: UB increased"
            );
        }
        assert!(state.gap() <= 1e-4, "{name}: gap {}", state.gap());
    }
}
