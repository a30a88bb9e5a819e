//! Domain types and the static power and cost formulas.
//!
//! Units throughout: energy in kWh, power in kW, time in hours for slots and
//! seconds for delays, rates in requests per second, money is abstract.

use serde::{Deserialize, Serialize};

use crate::battery::EfficiencyCurve;
use crate::error::{Error, Result};
use crate::queueing::DelayBudget;

/// Current version of the scenario document layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Relative tolerance of the p_max consistency warning.
const P_MAX_TOLERANCE: f64 = 0.05;

/// One purchasable type of power at a data center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSource {
    /// Money per kWh.
    pub price: f64,
    /// Dirtiness weight of the source.
    pub pollution_factor: f64,
    /// Coefficient of the quadratic pollution term, money per kWh².
    pub pif_coeff: f64,
}

impl PowerSource {
    /// Builds a source with an explicit pollution-index coefficient.
    ///
    /// Zero prices are accepted here so that the allocation routines can be
    /// exercised on textbook instances; [`Scenario::validate`] insists on
    /// strictly positive prices for real fleets.
    pub fn new(price: f64, pollution_factor: f64, pif_coeff: f64) -> Result<Self> {
        if !(price.is_finite() && price >= 0.0) {
            return Err(Error::config(format!("price must be finite and >= 0, got {price}")));
        }
        if !(pollution_factor.is_finite() && pollution_factor >= 0.0) {
            return Err(Error::config(format!("pollution factor must be finite and >= 0, got {pollution_factor}")));
        }
        if !(pif_coeff.is_finite() && pif_coeff > 0.0) {
            return Err(Error::config(format!("pif coefficient must be > 0, got {pif_coeff}")));
        }
        Ok(Self { price, pollution_factor, pif_coeff })
    }

    /// Builds a source whose coefficient is `pollution_factor / power_factor`.
    ///
    /// With `power_factor = slot_hours * p_max_kw` the penalty depends only on
    /// the fraction of the data center's maximum energy that is bought.
    pub fn with_power_factor(price: f64, pollution_factor: f64, power_factor_kwh: f64) -> Result<Self> {
        if !(pollution_factor > 0.0) {
            return Err(Error::config("pollution factor must be > 0"));
        }
        if !(power_factor_kwh.is_finite() && power_factor_kwh > 0.0) {
            return Err(Error::config(format!("power factor must be > 0, got {power_factor_kwh}")));
        }
        Self::new(price, pollution_factor, pollution_factor / power_factor_kwh)
    }

    /// Pollution-index plus monetary cost of buying `q` kWh.
    pub fn cost(&self, q: f64) -> f64 {
        self.pif_coeff * q * q + self.price * q
    }

    /// Derivative of [`cost`](Self::cost) at `q`.
    pub fn marginal(&self, q: f64) -> f64 {
        2.0 * self.pif_coeff * q + self.price
    }
}

/// Static battery parameters of one data center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub capacity_kwh: f64,
    pub initial_charge_kwh: f64,
    /// Most negative per-slot action (discharge limit).
    pub delta_lb_kwh: f64,
    /// Largest per-slot action (charge limit).
    pub delta_ub_kwh: f64,
    #[serde(rename = "efficiency_coeffs")]
    pub efficiency: EfficiencyCurve,
    /// Weighted forecast of future storage unit cost, money per kWh.
    pub potential_price: f64,
    pub horizon_weights: Vec<f64>,
}

impl BatteryConfig {
    /// A battery-less configuration: every action is pinned to zero.
    pub fn none() -> Self {
        Self {
            capacity_kwh: 0.0,
            initial_charge_kwh: 0.0,
            delta_lb_kwh: 0.0,
            delta_ub_kwh: 0.0,
            efficiency: EfficiencyCurve::identity(),
            potential_price: 0.0,
            horizon_weights: crate::battery::default_horizon_weights(crate::battery::DEFAULT_HORIZON),
        }
    }

    /// Normalizing energy `slot_hours * capacity` of the charge rate.
    pub fn rate_scale(&self, slot_hours: f64) -> f64 {
        slot_hours * self.capacity_kwh
    }

    pub fn validate(&self, slot_hours: f64) -> Result<()> {
        let cap = self.capacity_kwh;
        if !(cap.is_finite() && cap >= 0.0) {
            return Err(Error::config(format!("battery capacity must be >= 0, got {cap}")));
        }
        if !(self.initial_charge_kwh >= -1e-9 && self.initial_charge_kwh <= cap + 1e-9) {
            return Err(Error::config(format!("initial charge {} outside [0, {cap}]", self.initial_charge_kwh)));
        }
        if self.delta_lb_kwh > 0.0 || self.delta_ub_kwh < 0.0 {
            return Err(Error::config("battery action bounds must straddle zero"));
        }
        let scale = slot_hours * cap;
        if self.delta_lb_kwh < -scale * (1.0 + 1e-12) - 1e-12 {
            return Err(Error::config(format!("discharge bound {} exceeds the speed cap {}", self.delta_lb_kwh, -scale)));
        }
        if self.delta_ub_kwh > 0.3 * scale * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::config(format!("charge bound {} exceeds the speed cap {}", self.delta_ub_kwh, 0.3 * scale)));
        }
        if !(self.potential_price.is_finite() && self.potential_price >= 0.0) {
            return Err(Error::config("potential price must be finite and >= 0"));
        }
        crate::battery::validate_horizon_weights(&self.horizon_weights)
    }
}

/// Static parameters of one data center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataCenterConfig {
    pub server_count: u32,
    pub server_power_kw: f64,
    pub idle_power_kw: f64,
    pub service_rate_per_server: f64,
    pub p_max_kw: f64,
    /// Worst-case portal-to-DC transmission delay, treated as a constant.
    pub transmission_delay_s: f64,
    pub sources: Vec<PowerSource>,
    pub battery: BatteryConfig,
    pub weight_delay: f64,
    pub weight_cost: f64,
}

impl DataCenterConfig {
    pub fn max_servers(&self) -> f64 {
        f64::from(self.server_count)
    }

    /// Full-load service capacity, requests per second.
    pub fn max_capacity(&self) -> f64 {
        self.max_servers() * self.service_rate_per_server
    }

    /// Returns warnings (not errors) for soft inconsistencies.
    pub fn validate(&self, slot_hours: f64) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.server_count < 1 {
            return Err(Error::config("server_count must be >= 1"));
        }
        for (name, v) in [
            ("server_power_kw", self.server_power_kw),
            ("idle_power_kw", self.idle_power_kw),
            ("service_rate_per_server", self.service_rate_per_server),
            ("p_max_kw", self.p_max_kw),
            ("weight_delay", self.weight_delay),
            ("weight_cost", self.weight_cost),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.transmission_delay_s.is_finite() && self.transmission_delay_s >= 0.0) {
            return Err(Error::config("transmission_delay_s must be >= 0"));
        }
        if self.sources.is_empty() {
            return Err(Error::config("a data center needs at least one power source"));
        }
        for (n, s) in self.sources.iter().enumerate() {
            if !(s.price.is_finite() && s.price > 0.0) {
                return Err(Error::config(format!("source {n}: price must be > 0")));
            }
            if !(s.pollution_factor.is_finite() && s.pollution_factor > 0.0) {
                return Err(Error::config(format!("source {n}: pollution factor must be > 0")));
            }
            if !(s.pif_coeff.is_finite() && s.pif_coeff > 0.0) {
                return Err(Error::config(format!("source {n}: pif coefficient must be > 0")));
            }
        }
        self.battery.validate(slot_hours)?;
        let full = self.max_servers() * self.server_power_kw + self.idle_power_kw;
        if (full - self.p_max_kw).abs() > P_MAX_TOLERANCE * self.p_max_kw {
            warnings.push(format!("p_max_kw {} differs from full-load power {full:.3} kW by more than 5%", self.p_max_kw));
        }
        Ok(warnings)
    }
}

/// A complete single-slot instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub slot_hours: f64,
    /// Total request rate to dispatch, req/s.
    pub total_load: f64,
    pub max_load: f64,
    /// Largest end-to-end delay users tolerate, seconds.
    pub delay_bound_s: f64,
    pub datacenters: Vec<DataCenterConfig>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioDocument {
    schema_version: u32,
    #[serde(flatten)]
    scenario: Scenario,
}

#[derive(Serialize)]
struct ScenarioDocumentRef<'a> {
    schema_version: u32,
    #[serde(flatten)]
    scenario: &'a Scenario,
}

impl Scenario {
    pub fn dc_count(&self) -> usize {
        self.datacenters.len()
    }

    pub fn delay_budget(&self, dc: usize) -> Result<DelayBudget> {
        let d = &self.datacenters[dc];
        DelayBudget::new(self.delay_bound_s, d.transmission_delay_s, d.service_rate_per_server)
    }

    /// Checks every invariant; soft issues come back as warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.slot_hours.is_finite() && self.slot_hours > 0.0) {
            return Err(Error::config("slot_hours must be > 0"));
        }
        if self.datacenters.is_empty() {
            return Err(Error::config("scenario has no data centers"));
        }
        let mut warnings = Vec::new();
        for (i, dc) in self.datacenters.iter().enumerate() {
            for w in dc.validate(self.slot_hours).map_err(|e| prefix(e, i))? {
                warnings.push(format!("dc {i}: {w}"));
            }
            self.delay_budget(i).map_err(|e| prefix(e, i))?;
        }
        let full: f64 = self.datacenters.iter().map(DataCenterConfig::max_capacity).sum();
        if !(self.total_load >= 0.0 && self.total_load <= self.max_load * (1.0 + 1e-12)) {
            return Err(Error::config(format!("total_load {} must lie in [0, max_load = {}]", self.total_load, self.max_load)));
        }
        if self.max_load > full * (1.0 + 1e-12) {
            return Err(Error::config(format!("max_load {} exceeds the fleet capacity {full}", self.max_load)));
        }
        Ok(warnings)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScenarioDocument = serde_json::from_str(text)?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", doc.schema_version)));
        }
        Ok(doc.scenario)
    }

    pub fn to_json(&self) -> String {
        let doc = ScenarioDocumentRef { schema_version: SCHEMA_VERSION, scenario: self };
        let mut s = serde_json::to_string_pretty(&doc).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

fn prefix(e: Error, dc: usize) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("dc {dc}: {m}")),
        other => other,
    }
}

/// Optimized variables of one data center for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub arrival_rate: f64,
    pub active_servers: f64,
    pub battery_delta_kwh: f64,
    pub purchases: Vec<f64>,
}

impl Decision {
    /// Checks bounds, supply-demand balance and the delay floor.
    pub fn check(&self, scenario: &Scenario, dc: usize) -> Result<()> {
        let cfg = &scenario.datacenters[dc];
        let tol = 1e-9;
        if self.arrival_rate < -tol * scenario.total_load.max(1.0) {
            return Err(Error::infeasible(format!("dc {dc}: negative arrival rate")));
        }
        if self.active_servers < 1.0 - tol || self.active_servers > cfg.max_servers() + tol {
            return Err(Error::infeasible(format!(
                "dc {dc}: active servers {} outside [1, {}]",
                self.active_servers, cfg.server_count
            )));
        }
        if self.purchases.iter().any(|&q| q < -1e-9) {
            return Err(Error::infeasible(format!("dc {dc}: negative purchase")));
        }
        let cons = consumption_kwh(cfg, self.active_servers.clamp(1.0, cfg.max_servers()), scenario.slot_hours)?;
        let bat = crate::battery::effective_grid_power(
            &cfg.battery.efficiency,
            self.battery_delta_kwh,
            cfg.battery.capacity_kwh,
            scenario.slot_hours,
        )?;
        let bought: f64 = self.purchases.iter().sum();
        let need = cons + bat;
        if (bought - need).abs() > 1e-6 * need.abs().max(1.0) {
            return Err(Error::infeasible(format!("dc {dc}: purchases {bought} do not cover demand {need}")));
        }
        let floor = scenario.delay_budget(dc)?.capacity_floor()?;
        let slack = self.active_servers * cfg.service_rate_per_server - self.arrival_rate;
        if slack < floor - 1e-8 * floor.max(1.0) {
            return Err(Error::infeasible(format!("dc {dc}: service slack {slack} below delay floor {floor}")));
        }
        Ok(())
    }
}

/// Energy used in one slot by `active_servers` servers plus the idle base load.
pub fn consumption_kwh(dc: &DataCenterConfig, active_servers: f64, slot_hours: f64) -> Result<f64> {
    let max = dc.max_servers();
    if !(active_servers >= 1.0 && active_servers <= max) {
        return Err(Error::domain(format!("active servers {active_servers} outside [1, {max}]")));
    }
    Ok(slot_hours * (active_servers * dc.server_power_kw + dc.idle_power_kw))
}

/// Cost `a q² + p q` of buying `q` kWh from `source`.
pub fn pif_cost(source: &PowerSource, q: f64) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(Error::domain(format!("purchase must be >= 0, got {q}")));
    }
    Ok(source.cost(q))
}

/// Average cost per kWh, zero when nothing is bought.
pub fn unit_cost(total_cost: f64, total_q: f64) -> f64 {
    if total_q > 0.0 {
        total_cost / total_q
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn dc(s: f64, beta: f64, m: u32) -> DataCenterConfig {
        DataCenterConfig {
            server_count: m,
            server_power_kw: s,
            idle_power_kw: beta,
            service_rate_per_server: 80.0,
            p_max_kw: f64::from(m) * s + beta,
            transmission_delay_s: 0.5,
            sources: vec![PowerSource::new(0.1, 0.5, 0.001).unwrap()],
            battery: BatteryConfig::none(),
            weight_delay: 1.0,
            weight_cost: 1.0,
        }
    }

    #[test]
    fn consumption_examples() {
        assert_relative_eq!(consumption_kwh(&dc(0.5, 50.0, 200), 100.0, 1.0).unwrap(), 100.0);
        assert_relative_eq!(consumption_kwh(&dc(0.4, 40.0, 200), 1.0, 1.0).unwrap(), 40.4);
        assert!(matches!(consumption_kwh(&dc(0.7, 60.0, 200), 0.5, 1.0), Err(Error::Domain(_))));
        assert!(consumption_kwh(&dc(0.7, 60.0, 200), 201.0, 1.0).is_err());
    }

    #[test]
    fn consumption_at_full_load_is_p_max() {
        let d = dc(0.55, 45.0, 1700);
        let q = consumption_kwh(&d, 1700.0, 1.0).unwrap();
        assert_relative_eq!(q, d.p_max_kw, max_relative = 1e-12);
    }

    #[test]
    fn pif_cost_examples() {
        let s = PowerSource::new(0.10, 0.5, 0.001).unwrap();
        assert_eq!(pif_cost(&s, 0.0).unwrap(), 0.0);
        assert_relative_eq!(pif_cost(&s, 100.0).unwrap(), 20.0, max_relative = 1e-12);
        // thermal source with the power-factor rule, gamma 0.5 over a 1 MWh slot
        let tp = PowerSource::with_power_factor(0.04, 0.5, 1000.0).unwrap();
        assert_relative_eq!(tp.pif_coeff, 0.0005);
        let expected = 0.0005 * 500.0 * 500.0 + 0.04 * 500.0;
        assert_relative_eq!(expected, 145.0, max_relative = 1e-12);
        assert_relative_eq!(pif_cost(&tp, 500.0).unwrap(), 145.0, max_relative = 1e-12);
        assert!(matches!(pif_cost(&s, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn unit_cost_examples() {
        assert_relative_eq!(unit_cost(20.0, 100.0), 0.2);
        assert_eq!(unit_cost(5.0, 0.0), 0.0);
        assert_relative_eq!(unit_cost(0.695, 1.0), 0.695);
    }

    #[test]
    fn source_rejects_bad_coefficients() {
        assert!(PowerSource::new(0.1, 0.5, 0.0).is_err());
        assert!(PowerSource::new(-0.1, 0.5, 1.0).is_err());
        assert!(PowerSource::with_power_factor(0.1, 0.0, 1000.0).is_err());
    }

    #[test]
    fn p_max_mismatch_is_a_warning() {
        let mut d = dc(0.5, 50.0, 1000);
        d.p_max_kw = 1000.0;
        let w = d.validate(1.0).unwrap();
        assert_eq!(w.len(), 1);
        d.p_max_kw = 550.0;
        assert!(d.validate(1.0).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn pif_cost_strictly_increasing_and_convex(
            a in 1e-5f64..1.0, p in 0.01f64..0.5, q1 in 0.0f64..1000.0, dq in 1e-3f64..1000.0
        ) {
            let s = PowerSource::new(p, 0.5, a).unwrap();
            let q2 = q1 + dq;
            prop_assert!(pif_cost(&s, q2).unwrap() > pif_cost(&s, q1).unwrap());
            let u1 = unit_cost(pif_cost(&s, q1).unwrap(), q1);
            let u2 = unit_cost(pif_cost(&s, q2).unwrap(), q2);
            if q1 > 0.0 {
                prop_assert!(u2 > u1);
            }
        }

        #[test]
        fn power_factor_fairness(
            gamma in 0.1f64..1.0, p in 0.01f64..0.5, pmax in 100.0f64..5000.0,
            k in 1.1f64..10.0, frac in 0.0f64..1.0
        ) {
            let small = PowerSource::with_power_factor(p, gamma, pmax).unwrap();
            let large = PowerSource::with_power_factor(p, gamma, k * pmax).unwrap();
            let q = frac * pmax;
            let u_small = unit_cost(small.cost(q), q);
            let u_large = unit_cost(large.cost(k * q), k * q);
            prop_assert!((u_small - u_large).abs() <= 1e-12 * u_small.max(1.0));
        }

        #[test]
        fn consumption_is_affine(m1 in 1.0f64..500.0, m2 in 1.0f64..500.0, t in 0.0f64..1.0) {
            let d = dc(0.5, 50.0, 500);
            let mid = t * m1 + (1.0 - t) * m2;
            let lhs = consumption_kwh(&d, mid, 1.0).unwrap();
            let rhs = t * consumption_kwh(&d, m1, 1.0).unwrap()
                + (1.0 - t) * consumption_kwh(&d, m2, 1.0).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
