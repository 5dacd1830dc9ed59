//! Unit-commitment problem data: network, thermal units, wind farms, loads
//! and solver configuration, plus file ingestion and validation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scenarios::ScenarioSet;

/// Share of the linear fuel coefficient charged for up-reserve capacity.
pub const UP_RESERVE_COST_SHARE: f64 = 0.10;
/// Share of the linear fuel coefficient charged for down-reserve capacity.
pub const DOWN_RESERVE_COST_SHARE: f64 = 0.07;

const PTDF_WARN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum InstanceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed instance file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize instance: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid instance: {entity}: {reason}")]
    Validation { entity: String, reason: String },
}

fn invalid(entity: impl Into<String>, reason: impl Into<String>) -> InstanceError {
    InstanceError::Validation {
        entity: entity.into(),
        reason: reason.into(),
    }
}

/// Quadratic fuel cost `a + b p + c p^2` in currency/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuelCost {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl FuelCost {
    pub fn eval(&self, p: f64) -> f64 {
        self.a + self.b * p + self.c * p * p
    }
}

/// One step of the stair-wise startup cost: applies when the unit has been
/// offline for at least `offline_threshold_hours`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartupSegment {
    pub offline_threshold_hours: u32,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalUnit {
    pub id: String,
    pub bus: String,
    pub p_min: f64,
    pub p_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub startup_cap: f64,
    pub shutdown_cap: f64,
    pub min_up: u32,
    pub min_down: u32,
    pub no_load_cost: f64,
    pub shutdown_cost: f64,
    pub fuel_cost: FuelCost,
    pub startup_segments: Vec<StartupSegment>,
    pub reserve_up_max: f64,
    pub reserve_dn_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserve_up_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserve_dn_cost: Option<f64>,
    pub initial_on: bool,
    pub initial_hours_in_state: u32,
    pub initial_output: f64,
}

impl ThermalUnit {
    /// Reserve cost rates `(up, down)`: explicit file values when present,
    /// otherwise the default shares of the linear fuel coefficient.
    pub fn reserve_costs(&self) -> (f64, f64) {
        let (up, dn) = default_reserve_costs(self);
        (
            self.reserve_up_cost.unwrap_or(up),
            self.reserve_dn_cost.unwrap_or(dn),
        )
    }

    /// Commitment status before the horizon (`u_{g,0}`).
    pub fn initial_status(&self) -> f64 {
        if self.initial_on {
            1.0
        } else {
            0.0
        }
    }

    /// Startup indicator `v_{g,i}` for a period `i <= 0` reconstructed from the
    /// initial history: the unit came online `initial_hours_in_state` periods
    /// before the horizon.
    pub fn startup_before(&self, period: i64) -> f64 {
        debug_assert!(period <= 0);
        if self.initial_on && period == 1 - i64::from(self.initial_hours_in_state) {
            1.0
        } else {
            0.0
        }
    }

    /// Shutdown indicator `y_{g,i}` for a period `i <= 0`.
    pub fn shutdown_before(&self, period: i64) -> f64 {
        debug_assert!(period <= 0);
        if !self.initial_on && period == 1 - i64::from(self.initial_hours_in_state) {
            1.0
        } else {
            0.0
        }
    }

    fn validate(&self, buses: &HashSet<&str>) -> Result<(), InstanceError> {
        let id = format!("unit {}", self.id);
        if !buses.contains(self.bus.as_str()) {
            return Err(invalid(id, format!("unknown bus {}", self.bus)));
        }
        let finite = [
            self.p_min,
            self.p_max,
            self.ramp_up,
            self.ramp_down,
            self.startup_cap,
            self.shutdown_cap,
            self.no_load_cost,
            self.shutdown_cost,
            self.fuel_cost.a,
            self.fuel_cost.b,
            self.fuel_cost.c,
            self.reserve_up_max,
            self.reserve_dn_max,
            self.initial_output,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(invalid(id, "numeric fields must be finite"));
        }
        if self.p_min < 0.0 || self.p_min > self.p_max {
            return Err(invalid(id, "requires 0 <= p_min <= p_max"));
        }
        if self.ramp_up < 0.0 || self.ramp_down < 0.0 {
            return Err(invalid(id, "ramp rates must be non-negative"));
        }
        if self.startup_cap < self.p_min {
            return Err(invalid(id, "startup_cap must be >= p_min"));
        }
        if self.shutdown_cap < self.p_min {
            return Err(invalid(id, "shutdown_cap must be >= p_min"));
        }
        if self.min_up < 1 || self.min_down < 1 {
            return Err(invalid(id, "min_up and min_down must be >= 1"));
        }
        if self.fuel_cost.c < 0.0 {
            return Err(invalid(id, "fuel_cost.c must be >= 0 (convex cost)"));
        }
        if self.reserve_up_max < 0.0 || self.reserve_dn_max < 0.0 {
            return Err(invalid(id, "reserve maxima must be non-negative"));
        }
        for cost in [self.reserve_up_cost, self.reserve_dn_cost]
            .into_iter()
            .flatten()
        {
            if !cost.is_finite() || cost < 0.0 {
                return Err(invalid(id, "reserve costs must be finite and non-negative"));
            }
        }
        let first = self
            .startup_segments
            .first()
            .ok_or_else(|| invalid(&id, "at least one startup segment is required"))?;
        if first.offline_threshold_hours != self.min_down {
            return Err(invalid(
                id,
                "first startup segment threshold must equal min_down",
            ));
        }
        if self
            .startup_segments
            .windows(2)
            .any(|w| w[1].offline_threshold_hours <= w[0].offline_threshold_hours)
        {
            return Err(invalid(
                id,
                "startup segment thresholds must be strictly increasing",
            ));
        }
        if self.startup_segments.iter().any(|s| !s.cost.is_finite()) {
            return Err(invalid(id, "startup costs must be finite"));
        }
        if self.initial_hours_in_state < 1 {
            return Err(invalid(id, "initial_hours_in_state must be >= 1"));
        }
        if self.initial_on {
            if self.initial_output < self.p_min || self.initial_output > self.p_max {
                return Err(invalid(
                    id,
                    "initially online unit needs p_min <= initial_output <= p_max",
                ));
            }
        } else if self.initial_output != 0.0 {
            return Err(invalid(
                id,
                "initially offline unit needs initial_output = 0",
            ));
        }
        Ok(())
    }
}

/// Reserve cost rates derived from the linear fuel coefficient.
pub fn default_reserve_costs(unit: &ThermalUnit) -> (f64, f64) {
    let b = unit.fuel_cost.b;
    (UP_RESERVE_COST_SHARE * b, DOWN_RESERVE_COST_SHARE * b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    /// Thermal limit in MW.
    pub capacity: f64,
    /// Shift factors by bus; missing buses read as zero.
    #[serde(default)]
    pub ptdf_row: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub buses: Vec<String>,
    #[serde(default)]
    pub lines: Vec<Line>,
}

/// A forecast injection point: wind farm (`W_qt`) or load (`L_bt`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub id: String,
    pub bus: String,
    pub forecast: Vec<f64>,
}

pub type WindFarm = ForecastPoint;
pub type LoadPoint = ForecastPoint;

/// How the chance-constrained models treat a non-responsive scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RelaxationMode {
    /// The scenario is dropped entirely: balance and line limits are relaxed.
    #[default]
    FullDrop,
    /// Only the balance rows are relaxed; line limits bind for every scenario.
    PaperLiteral,
}

impl RelaxationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::FullDrop => "full-drop",
            Self::PaperLiteral => "paper-literal",
        }
    }
}

impl fmt::Display for RelaxationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RelaxationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full-drop" => Ok(Self::FullDrop),
            "paper-literal" => Ok(Self::PaperLiteral),
            other => Err(format!(
                "unknown relaxation mode {other:?} (expected full-drop or paper-literal)"
            )),
        }
    }
}

fn default_fuel_segments() -> usize {
    3
}
fn default_gap() -> f64 {
    1e-4
}
fn default_max_iterations() -> usize {
    100
}
fn default_wind_spread() -> f64 {
    0.25
}
fn default_load_spread() -> f64 {
    0.03
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Scalar Big-M used for every period instead of the data-driven value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_m_override: Option<f64>,
    #[serde(default = "default_fuel_segments")]
    pub fuel_segments: usize,
    #[serde(default = "default_gap")]
    pub mip_gap: f64,
    /// Relative stopping tolerance of the Benders loop.
    #[serde(default = "default_gap")]
    pub benders_tolerance: f64,
    #[serde(default)]
    pub feasibility_threshold: f64,
    /// Wall-clock limit per MIP solve, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit: Option<f64>,
    #[serde(default)]
    pub relaxation_mode: RelaxationMode,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Relative spread of the default wind marginal forecast.
    #[serde(default = "default_wind_spread")]
    pub wind_spread: f64,
    /// Relative spread of the default load marginal forecast.
    #[serde(default = "default_load_spread")]
    pub load_spread: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            big_m_override: None,
            fuel_segments: default_fuel_segments(),
            mip_gap: default_gap(),
            benders_tolerance: default_gap(),
            feasibility_threshold: 0.0,
            time_limit: None,
            relaxation_mode: RelaxationMode::default(),
            rng_seed: 0,
            max_iterations: default_max_iterations(),
            wind_spread: default_wind_spread(),
            load_spread: default_load_spread(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UCInstance {
    #[serde(default)]
    pub name: String,
    pub horizon: usize,
    pub risk_level: f64,
    pub network: Network,
    pub units: Vec<ThermalUnit>,
    #[serde(default, rename = "wind")]
    pub wind_farms: Vec<WindFarm>,
    #[serde(default)]
    pub loads: Vec<LoadPoint>,
    #[serde(default)]
    pub config: SolverConfig,
}

/// Read and validate an instance file.
pub fn load_instance(path: impl AsRef<Path>) -> Result<UCInstance, InstanceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    UCInstance::from_toml_str(&text)
}

impl UCInstance {
    pub fn from_toml_str(text: &str) -> Result<Self, InstanceError> {
        let instance: UCInstance = toml::from_str(text)?;
        instance.validate()?;
        Ok(instance)
    }

    pub fn to_toml_string(&self) -> Result<String, InstanceError> {
        Ok(toml::to_string(self)?)
    }

    /// Check every invariant, naming the first offending entity.
    pub fn validate(&self) -> Result<(), InstanceError> {
        if self.horizon < 1 {
            return Err(invalid("instance", "horizon must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.risk_level) {
            return Err(invalid("instance", "risk_level must lie in [0, 1]"));
        }
        if self.units.is_empty() {
            return Err(invalid("instance", "at least one thermal unit is required"));
        }
        let cfg = &self.config;
        if !(cfg.benders_tolerance > 0.0) {
            return Err(invalid("config", "benders_tolerance must be > 0"));
        }
        if cfg.fuel_segments < 1 {
            return Err(invalid("config", "fuel_segments must be >= 1"));
        }
        if !(cfg.mip_gap >= 0.0) {
            return Err(invalid("config", "mip_gap must be >= 0"));
        }
        if !(cfg.feasibility_threshold >= 0.0) {
            return Err(invalid("config", "feasibility_threshold must be >= 0"));
        }
        if cfg.max_iterations < 1 {
            return Err(invalid("config", "max_iterations must be >= 1"));
        }
        if let Some(m) = cfg.big_m_override {
            if !(m > 0.0) || !m.is_finite() {
                return Err(invalid("config", "big_m_override must be positive"));
            }
        }
        if let Some(limit) = cfg.time_limit {
            if !(limit > 0.0) {
                return Err(invalid("config", "time_limit must be positive"));
            }
        }
        if !(cfg.wind_spread >= 0.0) || !(cfg.load_spread >= 0.0) {
            return Err(invalid("config", "forecast spreads must be non-negative"));
        }

        let mut buses = HashSet::new();
        for bus in &self.network.buses {
            if !buses.insert(bus.as_str()) {
                return Err(invalid(format!("bus {bus}"), "duplicate bus identifier"));
            }
        }
        if buses.is_empty() {
            return Err(invalid("network", "at least one bus is required"));
        }

        let mut ids = HashSet::new();
        for line in &self.network.lines {
            let id = format!("line {}", line.id);
            if !ids.insert(line.id.as_str()) {
                return Err(invalid(id, "duplicate line identifier"));
            }
            if !(line.capacity > 0.0) || !line.capacity.is_finite() {
                return Err(invalid(id, "capacity must be positive"));
            }
            for (bus, k) in &line.ptdf_row {
                if !buses.contains(bus.as_str()) {
                    return Err(invalid(
                        id,
                        format!("ptdf_row references unknown bus {bus}"),
                    ));
                }
                if !k.is_finite() {
                    return Err(invalid(id, "ptdf entries must be finite"));
                }
                if k.abs() > 1.0 + PTDF_WARN_TOLERANCE {
                    log::warn!(
                        "line {}: |K| = {} exceeds 1 at bus {}",
                        line.id,
                        k.abs(),
                        bus
                    );
                }
            }
        }

        let mut ids = HashSet::new();
        for unit in &self.units {
            if !ids.insert(unit.id.as_str()) {
                return Err(invalid(
                    format!("unit {}", unit.id),
                    "duplicate unit identifier",
                ));
            }
            unit.validate(&buses)?;
        }

        for (kind, points) in [("wind farm", &self.wind_farms), ("load", &self.loads)] {
            let mut ids = HashSet::new();
            for point in points {
                let id = format!("{kind} {}", point.id);
                if !ids.insert(point.id.as_str()) {
                    return Err(invalid(id, "duplicate identifier"));
                }
                if !buses.contains(point.bus.as_str()) {
                    return Err(invalid(id, format!("unknown bus {}", point.bus)));
                }
                if point.forecast.len() != self.horizon {
                    return Err(invalid(
                        id,
                        format!(
                            "forecast has {} values, horizon is {}",
                            point.forecast.len(),
                            self.horizon
                        ),
                    ));
                }
                if point.forecast.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(invalid(id, "forecast values must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn with_risk_level(&self, risk_level: f64) -> Self {
        let mut out = self.clone();
        out.risk_level = risk_level;
        out
    }

    pub fn with_mode(&self, mode: RelaxationMode) -> Self {
        let mut out = self.clone();
        out.config.relaxation_mode = mode;
        out
    }

    pub fn topology(&self) -> Topology {
        Topology::new(self)
    }

    /// Data-driven Big-M of the balance rows at period `t` (0-based):
    /// the sum of the bounds of every term in the residual. When `scenarios`
    /// is `None` the point forecasts are used as the wind and load bounds.
    pub fn default_big_m(&self, scenarios: Option<&ScenarioSet>, t: usize) -> f64 {
        if let Some(m) = self.config.big_m_override {
            return m;
        }
        let thermal: f64 = self.units.iter().map(|u| u.p_max).sum();
        let (wind, load) = match scenarios {
            Some(set) => (
                (0..self.wind_farms.len())
                    .map(|q| set.max_wind(q, t))
                    .sum::<f64>(),
                (0..self.loads.len())
                    .map(|d| set.max_load(d, t))
                    .sum::<f64>(),
            ),
            None => (
                self.wind_farms.iter().map(|w| w.forecast[t]).sum::<f64>(),
                self.loads.iter().map(|l| l.forecast[t]).sum::<f64>(),
            ),
        };
        thermal + wind + load
    }
}

/// Index view of the network: bus positions and a dense shift-factor matrix.
#[derive(Debug, Clone)]
pub struct Topology {
    pub bus_count: usize,
    pub unit_bus: Vec<usize>,
    pub wind_bus: Vec<usize>,
    pub load_bus: Vec<usize>,
    /// `ptdf[l][b]`.
    pub ptdf: Vec<Vec<f64>>,
    pub capacity: Vec<f64>,
}

impl Topology {
    fn new(instance: &UCInstance) -> Self {
        let index: HashMap<&str, usize> = instance
            .network
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.as_str(), i))
            .collect();
        let bus_count = index.len();
        let ptdf = instance
            .network
            .lines
            .iter()
            .map(|line| {
                let mut row = vec![0.0; bus_count];
                for (bus, k) in &line.ptdf_row {
                    row[index[bus.as_str()]] = *k;
                }
                row
            })
            .collect();
        Self {
            bus_count,
            unit_bus: instance
                .units
                .iter()
                .map(|u| index[u.bus.as_str()])
                .collect(),
            wind_bus: instance
                .wind_farms
                .iter()
                .map(|w| index[w.bus.as_str()])
                .collect(),
            load_bus: instance
                .loads
                .iter()
                .map(|l| index[l.bus.as_str()])
                .collect(),
            ptdf,
            capacity: instance.network.lines.iter().map(|l| l.capacity).collect(),
        }
    }

    pub fn line_count(&self) -> usize {
        self.capacity.len()
    }

    /// Net uncontrollable injection `W - L` at every bus.
    pub fn fixed_injection(&self, wind: &[f64], load: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bus_count];
        for (q, w) in wind.iter().enumerate() {
            out[self.wind_bus[q]] += w;
        }
        for (d, l) in load.iter().enumerate() {
            out[self.load_bus[d]] -= l;
        }
        out
    }

    /// Flow contribution of the fixed injections on line `l`.
    pub fn fixed_flow(&self, l: usize, injection: &[f64]) -> f64 {
        self.ptdf[l].iter().zip(injection).map(|(k, p)| k * p).sum()
    }
}
