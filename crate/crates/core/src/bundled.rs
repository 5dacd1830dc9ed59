//! Instances shipped with the crate.
//!
//! * micro-1: one unit on one bus.
//! * micro-2: two units on two buses joined by one line.
//! * six-shape: three units, six buses, seven lines, one wind farm at bus 4
//!   and three loads, over 24 hours.

use crate::instance::UCInstance;
use crate::scenarios::{read_scenarios, ScenarioSet};

pub const MICRO1_TOML: &str = include_str!("../data/micro1.toml");
pub const MICRO2_TOML: &str = include_str!("../data/micro2.toml");
pub const SIX_SHAPE_TOML: &str = include_str!("../data/six_shape.toml");
pub const SIX_SHAPE_5_CSV: &str = include_str!("../data/six_shape_5.csv");

fn parse(text: &str, name: &str) -> UCInstance {
    UCInstance::from_toml_str(text).unwrap_or_else(|e| panic!("bundled {name} is invalid: {e}"))
}

pub fn micro1() -> UCInstance {
    parse(MICRO1_TOML, "micro-1")
}

pub fn micro2() -> UCInstance {
    parse(MICRO2_TOML, "micro-2")
}

pub fn six_shape() -> UCInstance {
    parse(SIX_SHAPE_TOML, "six-shape")
}

/// Five equiprobable scenarios for [`six_shape`]; scenario 1 is the point
/// forecast.
pub fn six_shape_scenarios() -> ScenarioSet {
    read_scenarios(SIX_SHAPE_5_CSV.as_bytes(), &six_shape())
        .unwrap_or_else(|e| panic!("bundled six-shape scenarios are invalid: {e}"))
}

/// Every bundled instance with its name.
pub fn all() -> Vec<(&'static str, UCInstance)> {
    vec![
        ("micro-1", micro1()),
        ("micro-2", micro2()),
        ("six-shape", six_shape()),
    ]
}

/// Look a bundled instance up by name.
pub fn by_name(name: &str) -> Option<UCInstance> {
    all().into_iter().find(|(n, _)| *n == name).map(|(_, i)| i)
}
