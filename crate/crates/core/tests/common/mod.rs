//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use ccuc_core::formulations::first_stage_cost;
use ccuc_core::model::RowSense;
use ccuc_core::{
    build_cc_bilinear, build_first_stage, bundled, sample_scenarios, BackendKind,
    FirstStageSolution, LinearModel, MarginalForecast, MipOptions, Scenario, ScenarioSet, Solution,
    UCInstance,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn solve_mip(model: &LinearModel) -> Solution {
    let sol = BackendKind::default()
        .create()
        .solve_mip(model, &MipOptions::new(1e-9, None))
        .unwrap();
    assert!(sol.has_point(), "{:?}", sol.status);
    sol
}

pub fn deterministic(instance: &UCInstance) -> FirstStageSolution {
    let uc = build_first_stage(instance).unwrap();
    uc.extract(&solve_mip(&uc.model))
}

pub fn sampled(instance: &UCInstance, count: usize, seed: u64) -> ScenarioSet {
    sample_scenarios(
        instance,
        &MarginalForecast::from_instance(instance),
        count,
        seed,
    )
    .unwrap()
}

/// Feasible first-stage points: optima of the first stage under random
/// extra costs on commitment, dispatch and reserves.
pub fn random_schedules(instance: &UCInstance, count: usize, seed: u64) -> Vec<FirstStageSolution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut uc = build_first_stage(instance).unwrap();
            for g in 0..instance.units.len() {
                for t in 0..instance.horizon {
                    uc.model
                        .add_cost(uc.first.u[g][t], rng.random_range(-400.0..400.0));
                    uc.model
                        .add_cost(uc.first.p[g][t], rng.random_range(-40.0..40.0));
                    uc.model
                        .add_cost(uc.first.r_up[g][t], rng.random_range(-20.0..20.0));
                    uc.model
                        .add_cost(uc.first.r_dn[g][t], rng.random_range(-20.0..20.0));
                }
            }
            let mut fs = uc.extract(&solve_mip(&uc.model));
            fs.objective = first_stage_cost(instance, &fs).unwrap();
            fs
        })
        .collect()
}

/// micro-1 with a single scenario that equals the forecast except at `hour`,
/// and a schedule that runs the unit at the forecast net load with as much
/// up-reserve as fits, so `P + R+ = 100` MW at hour 4.
pub fn micro1_with(
    load: f64,
    wind: f64,
    hour: usize,
) -> (UCInstance, ScenarioSet, FirstStageSolution) {
    let inst = bundled::micro1();
    let unit = &inst.units[0];
    let net: Vec<f64> = (0..inst.horizon)
        .map(|t| inst.loads[0].forecast[t] - inst.wind_farms[0].forecast[t])
        .collect();
    let grid = |f: &dyn Fn(usize) -> f64| vec![(0..inst.horizon).map(f).collect::<Vec<f64>>()];
    let mut fs = FirstStageSolution {
        u: grid(&|_| 1.0),
        v: grid(&|_| 0.0),
        y: grid(&|_| 0.0),
        delta: vec![vec![vec![0.0; inst.horizon]; unit.startup_segments.len()]],
        p: grid(&|t| net[t]),
        r_up: grid(&|t| (unit.p_max - net[t]).min(unit.reserve_up_max)),
        r_dn: grid(&|t| (net[t] - unit.p_min).min(unit.reserve_dn_max)),
        z: Vec::new(),
        objective: 0.0,
    };
    fs.objective = first_stage_cost(&inst, &fs).unwrap();
    let mut scenario = Scenario::forecast(&inst);
    scenario.load[0][hour] = load;
    scenario.wind[0][hour] = wind;
    (inst, ScenarioSet::uniform(vec![scenario]).unwrap(), fs)
}

/// Feasible range of `Pt[g1,1,1]` in the bilinear micro-1 model once `P` and
/// `z` are pinned, read off its envelope rows (the balance row also mentions
/// the product but does not belong to the envelope).
pub fn product_range(p_max: f64, p: f64, z: f64) -> (f64, f64) {
    let mut inst = bundled::micro1();
    inst.units[0].p_max = p_max;
    let set = ScenarioSet::forecast_only(&inst);
    let uc = build_cc_bilinear(&inst, &set).unwrap();
    let model = &uc.model;
    let pt = model.var_by_name("Pt[g1,1,1]").expect("product variable");
    let pn = uc.second[0].p[0][0];
    let zv = uc.z[0];

    let var = model.var(pt);
    let (mut lo, mut hi) = (var.lower, var.upper);
    let mut count = 0;
    for row in model.rows().iter().filter(|r| r.name.starts_with("mc")) {
        let Some(&(_, a)) = row.terms.iter().find(|(v, _)| *v == pt) else {
            continue;
        };
        let mut rest = 0.0;
        for &(v, c) in &row.terms {
            if v == pt {
                continue;
            }
            let value = if v == pn {
                p
            } else if v == zv {
                z
            } else {
                panic!(
                    "row {} couples the product with {}",
                    row.name,
                    model.var(v).name
                );
            };
            rest += c * value;
        }
        count += 1;
        let bound = (row.rhs - rest) / a;
        let upper = matches!(
            (row.sense, a > 0.0),
            (RowSense::Le, true) | (RowSense::Ge, false)
        );
        match row.sense {
            RowSense::Eq => {
                lo = lo.max(bound);
                hi = hi.min(bound);
            }
            _ if upper => hi = hi.min(bound),
            _ => lo = lo.max(bound),
        }
    }
    assert_eq!(count, 3, "three envelope rows per product");
    (lo, hi)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
