//! Finite scenario sets standing in for the uncertain wind and load: file
//! ingestion and Monte Carlo sampling from marginal quantile forecasts.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::instance::UCInstance;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario file: {0}")]
    Csv(#[from] csv::Error),
    #[error("scenario count must be >= 1")]
    Empty,
    #[error("missing value for scenario {scenario}, period {period}, {kind} {entity}")]
    MissingCell {
        scenario: usize,
        period: usize,
        kind: &'static str,
        entity: String,
    },
    #[error("duplicate value for scenario {scenario}, period {period}, {kind} {entity}")]
    DuplicateCell {
        scenario: usize,
        period: usize,
        kind: &'static str,
        entity: String,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("negative value {value} for scenario {scenario}, period {period}, {entity}")]
    Negative {
        scenario: usize,
        period: usize,
        entity: String,
        value: f64,
    },
    #[error("invalid quantile curve for {entity}: {reason}")]
    Curve { entity: String, reason: String },
    #[error("no marginal forecast for {kind} {entity} at period {period}")]
    MissingForecast {
        kind: &'static str,
        entity: String,
        period: usize,
    },
}

/// One realization of every wind farm and load over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// `wind[q][t]`, MW.
    pub wind: Vec<Vec<f64>>,
    /// `load[d][t]`, MW, one row per load point.
    pub load: Vec<Vec<f64>>,
}

impl Scenario {
    /// The point forecast of the instance as a scenario.
    pub fn forecast(instance: &UCInstance) -> Self {
        Self {
            wind: instance
                .wind_farms
                .iter()
                .map(|w| w.forecast.clone())
                .collect(),
            load: instance.loads.iter().map(|l| l.forecast.clone()).collect(),
        }
    }

    pub fn wind_at(&self, t: usize) -> Vec<f64> {
        self.wind.iter().map(|w| w[t]).collect()
    }

    pub fn load_at(&self, t: usize) -> Vec<f64> {
        self.load.iter().map(|l| l[t]).collect()
    }

    /// `sum_q W_qt - sum_d L_dt`.
    pub fn net_uncontrolled(&self, t: usize) -> f64 {
        self.wind.iter().map(|w| w[t]).sum::<f64>() - self.load.iter().map(|l| l[t]).sum::<f64>()
    }
}

/// `N` realizations with their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub probabilities: Vec<f64>,
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    /// Equiprobable set.
    pub fn uniform(scenarios: Vec<Scenario>) -> Result<Self, ScenarioError> {
        if scenarios.is_empty() {
            return Err(ScenarioError::Empty);
        }
        let n = scenarios.len();
        Ok(Self {
            probabilities: vec![1.0 / n as f64; n],
            scenarios,
        })
    }

    /// A single scenario equal to the point forecast.
    pub fn forecast_only(instance: &UCInstance) -> Self {
        Self {
            probabilities: vec![1.0],
            scenarios: vec![Scenario::forecast(instance)],
        }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn scenario(&self, n: usize) -> &Scenario {
        &self.scenarios[n]
    }

    pub fn max_wind(&self, q: usize, t: usize) -> f64 {
        self.scenarios
            .iter()
            .map(|s| s.wind[q][t])
            .fold(0.0, f64::max)
    }

    pub fn max_load(&self, d: usize, t: usize) -> f64 {
        self.scenarios
            .iter()
            .map(|s| s.load[d][t])
            .fold(0.0, f64::max)
    }

    /// The first `n` scenarios, renormalized to equal probabilities.
    pub fn truncated(&self, n: usize) -> Result<Self, ScenarioError> {
        Self::uniform(self.scenarios.iter().take(n).cloned().collect())
    }

    /// Keep the scenarios at `indices` (in the given order). Probabilities
    /// are carried over unnormalized.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            probabilities: indices.iter().map(|&i| self.probabilities[i]).collect(),
            scenarios: indices.iter().map(|&i| self.scenarios[i].clone()).collect(),
        }
    }

    /// Check the set against the instance dimensions.
    pub fn check_dimensions(&self, instance: &UCInstance) -> Result<(), ScenarioError> {
        if self.is_empty() {
            return Err(ScenarioError::Empty);
        }
        if self.probabilities.len() != self.scenarios.len() {
            return Err(ScenarioError::Dimension(
                "probability vector length differs from scenario count".into(),
            ));
        }
        let total: f64 = self.probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ScenarioError::Dimension(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        for (n, s) in self.scenarios.iter().enumerate() {
            if s.wind.len() != instance.wind_farms.len() || s.load.len() != instance.loads.len() {
                return Err(ScenarioError::Dimension(format!(
                    "scenario {} has {} wind and {} load series, instance has {} and {}",
                    n + 1,
                    s.wind.len(),
                    s.load.len(),
                    instance.wind_farms.len(),
                    instance.loads.len()
                )));
            }
            if s.wind
                .iter()
                .chain(&s.load)
                .any(|series| series.len() != instance.horizon)
            {
                return Err(ScenarioError::Dimension(format!(
                    "scenario {} series length differs from horizon {}",
                    n + 1,
                    instance.horizon
                )));
            }
        }
        Ok(())
    }

    /// Write the set in the delimited scenario format.
    pub fn write_csv<W: Write>(
        &self,
        instance: &UCInstance,
        writer: W,
    ) -> Result<(), ScenarioError> {
        let mut out = csv::Writer::from_writer(writer);
        for (n, s) in self.scenarios.iter().enumerate() {
            for t in 0..instance.horizon {
                for (q, farm) in instance.wind_farms.iter().enumerate() {
                    out.serialize(Record {
                        scenario_index: n + 1,
                        period: t + 1,
                        entity_kind: EntityKind::Wind,
                        entity_id: farm.id.clone(),
                        value_mw: s.wind[q][t],
                    })?;
                }
                for (d, load) in instance.loads.iter().enumerate() {
                    out.serialize(Record {
                        scenario_index: n + 1,
                        period: t + 1,
                        entity_kind: EntityKind::Load,
                        entity_id: load.id.clone(),
                        value_mw: s.load[d][t],
                    })?;
                }
            }
        }
        out.flush().map_err(|source| ScenarioError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EntityKind {
    Wind,
    Load,
}

impl EntityKind {
    fn as_str(self) -> &'static str {
        match self {
            Self::Wind => "wind",
            Self::Load => "load",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    scenario_index: usize,
    period: usize,
    entity_kind: EntityKind,
    entity_id: String,
    value_mw: f64,
}

/// Read a scenario file for `instance`.
pub fn load_scenarios(
    path: impl AsRef<Path>,
    instance: &UCInstance,
) -> Result<ScenarioSet, ScenarioError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_scenarios(file, instance)
}

/// Parse scenario rows from any reader. Every (scenario, period, entity)
/// cell must appear exactly once; the scenario count is the largest index.
pub fn read_scenarios<R: Read>(
    reader: R,
    instance: &UCInstance,
) -> Result<ScenarioSet, ScenarioError> {
    let wind_index: HashMap<&str, usize> = instance
        .wind_farms
        .iter()
        .enumerate()
        .map(|(i, w)| (w.id.as_str(), i))
        .collect();
    let load_index: HashMap<&str, usize> = instance
        .loads
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id.as_str(), i))
        .collect();
    let horizon = instance.horizon;

    let mut cells: HashMap<(usize, usize, EntityKind, usize), f64> = HashMap::new();
    let mut count = 0;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    for row in rdr.deserialize() {
        let rec: Record = row?;
        let entity = format!("{} {}", rec.entity_kind.as_str(), rec.entity_id);
        if rec.scenario_index < 1 {
            return Err(ScenarioError::Dimension("scenario_index is 1-based".into()));
        }
        if rec.period < 1 || rec.period > horizon {
            return Err(ScenarioError::Dimension(format!(
                "period {} outside horizon 1..={horizon}",
                rec.period
            )));
        }
        let index = match rec.entity_kind {
            EntityKind::Wind => wind_index.get(rec.entity_id.as_str()),
            EntityKind::Load => load_index.get(rec.entity_id.as_str()),
        }
        .copied()
        .ok_or_else(|| ScenarioError::Dimension(format!("unknown {entity}")))?;
        if !rec.value_mw.is_finite() || rec.value_mw < 0.0 {
            return Err(ScenarioError::Negative {
                scenario: rec.scenario_index,
                period: rec.period,
                entity,
                value: rec.value_mw,
            });
        }
        let key = (
            rec.scenario_index - 1,
            rec.period - 1,
            rec.entity_kind,
            index,
        );
        if cells.insert(key, rec.value_mw).is_some() {
            return Err(ScenarioError::DuplicateCell {
                scenario: rec.scenario_index,
                period: rec.period,
                kind: rec.entity_kind.as_str(),
                entity: rec.entity_id,
            });
        }
        count = count.max(rec.scenario_index);
    }
    if count == 0 {
        return Err(ScenarioError::Empty);
    }

    let mut scenarios = Vec::with_capacity(count);
    for n in 0..count {
        let mut fill = |kind: EntityKind, ids: Vec<&str>| -> Result<Vec<Vec<f64>>, ScenarioError> {
            ids.iter()
                .enumerate()
                .map(|(i, id)| {
                    (0..horizon)
                        .map(|t| {
                            cells.remove(&(n, t, kind, i)).ok_or_else(|| {
                                ScenarioError::MissingCell {
                                    scenario: n + 1,
                                    period: t + 1,
                                    kind: kind.as_str(),
                                    entity: id.to_string(),
                                }
                            })
                        })
                        .collect()
                })
                .collect()
        };
        let wind = fill(
            EntityKind::Wind,
            instance.wind_farms.iter().map(|w| w.id.as_str()).collect(),
        )?;
        let load = fill(
            EntityKind::Load,
            instance.loads.iter().map(|l| l.id.as_str()).collect(),
        )?;
        scenarios.push(Scenario { wind, load });
    }
    ScenarioSet::uniform(scenarios)
}

/// A marginal distribution given by quantile knots `(level, value)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCurve {
    knots: Vec<(f64, f64)>,
}

impl QuantileCurve {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, String> {
        if knots.is_empty() {
            return Err("at least one knot is required".into());
        }
        if knots
            .iter()
            .any(|&(p, v)| !(p > 0.0 && p < 1.0) || !v.is_finite())
        {
            return Err("levels must lie in (0, 1) and values must be finite".into());
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err("probability levels must be strictly increasing".into());
        }
        if knots.windows(2).any(|w| w[1].1 < w[0].1) {
            return Err("values must be non-decreasing in the level".into());
        }
        Ok(Self { knots })
    }

    /// A point mass at `value`.
    pub fn constant(value: f64) -> Self {
        Self {
            knots: vec![(0.5, value)],
        }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Inverse CDF: linear between knots, flat beyond the outer knots.
    pub fn inverse(&self, u: f64) -> f64 {
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if u <= first.0 {
            return first.1;
        }
        if u >= last.0 {
            return last.1;
        }
        let k = self.knots.partition_point(|&(p, _)| p <= u);
        let (p0, v0) = self.knots[k - 1];
        let (p1, v1) = self.knots[k];
        v0 + (v1 - v0) * (u - p0) / (p1 - p0)
    }

    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            knots: self.knots.iter().map(|&(p, v)| (p, v + delta)).collect(),
        }
    }
}

/// Per-entity, per-period marginal forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalForecast {
    /// `wind[q][t]`.
    pub wind: Vec<Vec<QuantileCurve>>,
    /// `load[d][t]`.
    pub load: Vec<Vec<QuantileCurve>>,
}

/// Standard normal quantiles at the levels of the default curves.
const NORMAL_KNOTS: [(f64, f64); 5] = [
    (0.05, -1.644_853_626_951_472),
    (0.25, -0.674_489_750_196_082),
    (0.50, 0.0),
    (0.75, 0.674_489_750_196_082),
    (0.95, 1.644_853_626_951_472),
];

impl MarginalForecast {
    /// Normal-shaped curves centred on the point forecasts, with standard
    /// deviation `spread * forecast` from the instance config.
    pub fn from_instance(instance: &UCInstance) -> Self {
        let curves = |forecast: &[f64], spread: f64| -> Vec<QuantileCurve> {
            forecast
                .iter()
                .map(|&f| QuantileCurve {
                    knots: NORMAL_KNOTS
                        .iter()
                        .map(|&(p, z)| (p, f * (1.0 + spread * z)))
                        .collect(),
                })
                .collect()
        };
        Self {
            wind: instance
                .wind_farms
                .iter()
                .map(|w| curves(&w.forecast, instance.config.wind_spread))
                .collect(),
            load: instance
                .loads
                .iter()
                .map(|l| curves(&l.forecast, instance.config.load_spread))
                .collect(),
        }
    }

    fn check(&self, instance: &UCInstance) -> Result<(), ScenarioError> {
        let sides = [
            ("wind", &self.wind, &instance.wind_farms),
            ("load", &self.load, &instance.loads),
        ];
        for (kind, curves, points) in sides {
            for (i, point) in points.iter().enumerate() {
                let row = curves.get(i).map(Vec::as_slice).unwrap_or(&[]);
                if row.len() < instance.horizon {
                    return Err(ScenarioError::MissingForecast {
                        kind,
                        entity: point.id.clone(),
                        period: row.len() + 1,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Draw `count` equiprobable scenarios by inverse-transform sampling of each
/// (entity, period) marginal independently. Values are clamped at zero.
pub fn sample_scenarios(
    instance: &UCInstance,
    forecasts: &MarginalForecast,
    count: usize,
    seed: u64,
) -> Result<ScenarioSet, ScenarioError> {
    if count == 0 {
        return Err(ScenarioError::Empty);
    }
    forecasts.check(instance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |curves: &[Vec<QuantileCurve>]| -> Vec<Vec<f64>> {
        curves
            .iter()
            .map(|row| {
                row[..instance.horizon]
                    .iter()
                    .map(|curve| curve.inverse(rng.random::<f64>()).max(0.0))
                    .collect()
            })
            .collect()
    };
    let scenarios = (0..count)
        .map(|_| {
            let wind = draw(&forecasts.wind);
            let load = draw(&forecasts.load);
            Scenario { wind, load }
        })
        .collect();
    ScenarioSet::uniform(scenarios)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use proptest::prelude::*;

    #[test]
    fn two_knot_curve_interpolates_at_midpoint() {
        let curve = QuantileCurve::new(vec![(0.25, 10.0), (0.75, 30.0)]).unwrap();
        assert!((curve.inverse(0.5) - 20.0).abs() < 1e-12);
        assert_eq!(curve.inverse(0.1), 10.0);
        assert_eq!(curve.inverse(0.9), 30.0);
    }

    #[test]
    fn curve_rejects_unordered_levels() {
        assert!(QuantileCurve::new(vec![(0.5, 1.0), (0.4, 2.0)]).is_err());
        assert!(QuantileCurve::new(vec![(0.4, 3.0), (0.5, 2.0)]).is_err());
    }

    #[test]
    fn point_mass_curves_give_constant_scenarios() {
        let inst = bundled::micro1();
        let fc = MarginalForecast {
            wind: vec![vec![QuantileCurve::constant(7.0); inst.horizon]],
            load: vec![vec![QuantileCurve::constant(42.0); inst.horizon]],
        };
        let set = sample_scenarios(&inst, &fc, 4, 9).unwrap();
        for s in &set.scenarios {
            assert!(s.wind[0].iter().all(|&v| v == 7.0));
            assert!(s.load[0].iter().all(|&v| v == 42.0));
        }
    }

    #[test]
    fn single_scenario_has_unit_probability() {
        let inst = bundled::micro1();
        let set = sample_scenarios(&inst, &MarginalForecast::from_instance(&inst), 1, 3).unwrap();
        assert_eq!(set.probabilities, vec![1.0]);
    }

    #[test]
    fn missing_forecast_is_reported() {
        let inst = bundled::micro1();
        let mut fc = MarginalForecast::from_instance(&inst);
        fc.load[0].pop();
        assert!(matches!(
            sample_scenarios(&inst, &fc, 2, 0),
            Err(ScenarioError::MissingForecast { .. })
        ));
    }

    #[test]
    fn bundled_five_scenario_file_loads() {
        let inst = bundled::six_shape();
        let set = bundled::six_shape_scenarios();
        assert_eq!(set.len(), 5);
        assert!(set.probabilities.iter().all(|&p| p == 0.2));
        set.check_dimensions(&inst).unwrap();
        // Scenario 1 of the bundled file is the point forecast.
        assert_eq!(set.scenarios[0], Scenario::forecast(&inst));
    }

    #[test]
    fn missing_cell_is_named() {
        let inst = bundled::micro1();
        let set = ScenarioSet::forecast_only(&inst);
        let mut buf = Vec::new();
        set.write_csv(&inst, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let dropped: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with("1,2,load"))
            .collect();
        let err = read_scenarios(dropped.join("\n").as_bytes(), &inst).unwrap_err();
        match err {
            ScenarioError::MissingCell {
                scenario, period, ..
            } => assert_eq!((scenario, period), (1, 2)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn negative_values_are_rejected() {
        let inst = bundled::micro1();
        let text = "scenario_index,period,entity_kind,entity_id,value_mw\n1,1,load,d1,-1.0\n";
        assert!(matches!(
            read_scenarios(text.as_bytes(), &inst),
            Err(ScenarioError::Negative { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let inst = bundled::six_shape();
        let set = sample_scenarios(&inst, &MarginalForecast::from_instance(&inst), 3, 11).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&inst, &mut buf).unwrap();
        let back = read_scenarios(buf.as_slice(), &inst).unwrap();
        assert_eq!(back, set);
    }

    proptest! {
        #[test]
        fn sampling_is_deterministic_and_normalized(n in 1usize..40, seed in any::<u64>()) {
            let inst = bundled::micro2();
            let fc = MarginalForecast::from_instance(&inst);
            let a = sample_scenarios(&inst, &fc, n, seed).unwrap();
            let b = sample_scenarios(&inst, &fc, n, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let total: f64 = a.probabilities.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(a.scenarios.iter().all(|s| s.wind.iter().chain(&s.load).flatten().all(|&v| v >= 0.0)));
        }

        #[test]
        fn raising_quantiles_shifts_samples(delta in 0.0f64..50.0, seed in any::<u64>()) {
            let inst = bundled::micro2();
            let fc = MarginalForecast::from_instance(&inst);
            let shift = |rows: &Vec<Vec<QuantileCurve>>| -> Vec<Vec<QuantileCurve>> {
                rows.iter().map(|r| r.iter().map(|c| c.shifted(delta)).collect()).collect()
            };
            let raised = MarginalForecast { wind: shift(&fc.wind), load: shift(&fc.load) };
            let a = sample_scenarios(&inst, &fc, 5, seed).unwrap();
            let b = sample_scenarios(&inst, &raised, 5, seed).unwrap();
            for (sa, sb) in a.scenarios.iter().zip(&b.scenarios) {
                for (ra, rb) in sa.wind.iter().chain(&sa.load).zip(sb.wind.iter().chain(&sb.load)) {
                    for (&x, &y) in ra.iter().zip(rb) {
                        // Clamping at zero can only absorb part of the shift
                        // for draws that were negative before raising.
                        if x > 0.0 {
                            prop_assert!((y - x - delta).abs() < 1e-9);
                        } else {
                            prop_assert!(y >= x && y <= delta + 1e-9);
                        }
                    }
                }
            }
        }
    }
}
