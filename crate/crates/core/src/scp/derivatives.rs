//! Per-data-center objective of the convexified problem and its analytic
//! first and second partial derivatives in `(λ, m, Δ)`.

use crate::allocation::LagrangeAggregates;
use crate::battery::GridMap;
use crate::model::Scenario;

/// Objective `Φ_i(λ, m, Δ)` of one data center with the purchase split
/// replaced by its closed-form optimal cost on a fixed source set.
#[derive(Debug, Clone, Copy)]
pub struct DcModel {
    pub theta_delay: f64,
    pub theta_cost: f64,
    pub service_rate: f64,
    pub server_kw: f64,
    pub idle_kw: f64,
    pub slot_hours: f64,
    pub agg: LagrangeAggregates,
    pub map: GridMap,
    pub potential_price: f64,
}

impl DcModel {
    pub fn new(scenario: &Scenario, dc: usize, agg: LagrangeAggregates) -> Self {
        let cfg = &scenario.datacenters[dc];
        Self {
            theta_delay: cfg.weight_delay,
            theta_cost: cfg.weight_cost,
            service_rate: cfg.service_rate_per_server,
            server_kw: cfg.server_power_kw,
            idle_kw: cfg.idle_power_kw,
            slot_hours: scenario.slot_hours,
            agg,
            map: GridMap::new(&cfg.battery, scenario.slot_hours),
            potential_price: cfg.battery.potential_price,
        }
    }

    /// Server energy `τ (m s + β)`.
    pub fn consumption(&self, m: f64) -> f64 {
        self.slot_hours * (m * self.server_kw + self.idle_kw)
    }

    /// `dQ^cons/dm`.
    pub fn consumption_slope(&self) -> f64 {
        self.slot_hours * self.server_kw
    }

    /// Grid purchase `Q^cons(m) + g(Δ)`.
    pub fn purchase(&self, m: f64, delta: f64) -> f64 {
        self.consumption(m) + self.map.value(delta)
    }

    /// Power cost on the fixed source set minus the potential credit.
    pub fn cost(&self, m: f64, delta: f64) -> f64 {
        self.agg.cost(self.purchase(m, delta)) - self.potential_price * delta
    }

    pub fn phi(&self, lambda: f64, m: f64, delta: f64) -> f64 {
        let x = m * self.service_rate - lambda;
        self.theta_delay * (1.0 / x + 1.0 / self.service_rate) + self.theta_cost * self.cost(m, delta)
    }

    pub fn gradient(&self, lambda: f64, m: f64, delta: f64) -> [f64; 3] {
        let u = self.service_rate;
        let x = m * u - lambda;
        let q = self.purchase(m, delta);
        let slope = 2.0 * q + self.agg.y;
        let t1 = self.theta_delay / (x * x);
        [
            t1,
            -t1 * u + self.theta_cost * self.consumption_slope() * slope / self.agg.x,
            self.theta_cost * (slope / self.agg.x * self.map.slope(delta) - self.potential_price),
        ]
    }

    pub fn hessian(&self, lambda: f64, m: f64, delta: f64) -> [[f64; 3]; 3] {
        let u = self.service_rate;
        let x = m * u - lambda;
        let q = self.purchase(m, delta);
        let ts = self.consumption_slope();
        let (g1, g2) = (self.map.slope(delta), self.map.curvature(delta));
        let (th1, th2, xa) = (self.theta_delay, self.theta_cost, self.agg.x);
        let d = 2.0 * th1 / (x * x * x);
        let ll = d;
        let lm = -d * u;
        let mm = d * u * u + th2 * 2.0 * ts * ts / xa;
        let md = th2 * 2.0 * ts * g1 / xa;
        let dd = th2 * (2.0 * g1 * g1 + (2.0 * q + self.agg.y) * g2) / xa;
        [[ll, lm, 0.0], [lm, mm, md], [0.0, md, dd]]
    }

    /// Closed forms of the three leading principal minors of the Hessian.
    pub fn leading_minors(&self, lambda: f64, m: f64, delta: f64) -> [f64; 3] {
        let x = m * self.service_rate - lambda;
        let x3 = x * x * x;
        let q = self.purchase(m, delta);
        let ts = self.consumption_slope();
        let (th1, th2, xa) = (self.theta_delay, self.theta_cost, self.agg.x);
        [
            2.0 * th1 / x3,
            4.0 * th1 * th2 * ts * ts / (xa * x3),
            4.0 * th1 * th2 * th2 * ts * ts * (2.0 * q + self.agg.y) * self.map.curvature(delta) / (x3 * xa * xa),
        ]
    }
}
