//! Fixtures shared by the benchmarks.

use ccuc_core::{bundled, sample_scenarios, MarginalForecast, ScenarioSet, UCInstance};

/// A bundled instance with `count` sampled scenarios.
pub fn sampled(name: &str, count: usize, seed: u64) -> (UCInstance, ScenarioSet) {
    let instance = bundled::by_name(name).unwrap_or_else(|| panic!("no bundled instance {name}"));
    let set = sample_scenarios(
        &instance,
        &MarginalForecast::from_instance(&instance),
        count,
        seed,
    )
    .expect("bundled forecasts sample");
    (instance, set)
}
