//! Seeded scenario generation, price series and multi-slot simulation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::allocation::allocate;
use crate::battery::{default_horizon_weights, horizon_estimate, EfficiencyCurve, DEFAULT_HORIZON};
use crate::error::{Error, Result};
use crate::model::{BatteryConfig, DataCenterConfig, Decision, PowerSource, Scenario};
use crate::policy::{solve_policy, Policy};
use crate::queueing::DelayBudget;

/// Largest accepted price spread factor.
pub const MAX_PRICE_SPREAD: f64 = 1.9;

/// Ranges the generator samples from. Every pair is an inclusive `(lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParameterRanges {
    pub server_power_kw: (f64, f64),
    pub idle_power_kw: (f64, f64),
    pub service_rate_per_server: f64,
    pub p_max_kw: f64,
    /// Battery capacity as a fraction of `slot_hours * p_max_kw`.
    pub capacity_fraction: (f64, f64),
    pub transmission_delay_s: (f64, f64),
    pub delay_bound_s: f64,
    pub slot_hours: f64,
    /// Pollution factors of TP, WP and SP, in that order.
    pub pollution_factors: Vec<f64>,
    /// Price band per source type, money per kWh.
    pub price_bands: Vec<(f64, f64)>,
    /// Scales every price's distance from its band centre.
    pub price_spread: f64,
    /// Total load as a fraction of the fleet's usable capacity.
    pub load_fraction: f64,
    /// When set, replaces `slot_hours * p_max_kw` in the pollution coefficient.
    pub constant_power_factor: Option<f64>,
    pub weight_delay: f64,
    pub weight_cost: f64,
    pub horizon: usize,
}

impl Default for ParameterRanges {
    fn default() -> Self {
        Self {
            server_power_kw: (0.4, 0.7),
            idle_power_kw: (40.0, 60.0),
            service_rate_per_server: 80.0,
            p_max_kw: 1000.0,
            capacity_fraction: (0.4, 0.6),
            transmission_delay_s: (0.2, 0.8),
            delay_bound_s: 2.0,
            slot_hours: 1.0,
            pollution_factors: vec![0.5, 0.4, 0.3],
            price_bands: vec![(0.04, 0.12), (0.08, 0.14), (0.10, 0.18)],
            price_spread: 1.0,
            load_fraction: 0.6,
            constant_power_factor: None,
            weight_delay: 10.0,
            weight_cost: 1.0,
            horizon: DEFAULT_HORIZON,
        }
    }
}

fn check_pair(name: &str, (lo, hi): (f64, f64), min: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo >= min && lo <= hi) {
        return Err(Error::config(format!("{name}: invalid range [{lo}, {hi}]")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::config(format!("{name} must be > 0, got {v}")));
    }
    Ok(())
}

impl ParameterRanges {
    pub fn validate(&self) -> Result<()> {
        check_pair("server_power_kw", self.server_power_kw, f64::MIN_POSITIVE)?;
        check_pair("idle_power_kw", self.idle_power_kw, f64::MIN_POSITIVE)?;
        check_pair("capacity_fraction", self.capacity_fraction, 0.0)?;
        check_pair("transmission_delay_s", self.transmission_delay_s, 0.0)?;
        for (name, v) in [
            ("service_rate_per_server", self.service_rate_per_server),
            ("p_max_kw", self.p_max_kw),
            ("delay_bound_s", self.delay_bound_s),
            ("slot_hours", self.slot_hours),
            ("weight_delay", self.weight_delay),
            ("weight_cost", self.weight_cost),
            ("load_fraction", self.load_fraction),
        ] {
            check_positive(name, v)?;
        }
        if self.load_fraction > 1.0 {
            return Err(Error::config("load_fraction must lie in (0, 1]"));
        }
        if self.idle_power_kw.1 + self.server_power_kw.1 > self.p_max_kw {
            return Err(Error::config("p_max_kw leaves no room for a single server"));
        }
        if self.pollution_factors.len() != self.price_bands.len() || self.price_bands.is_empty() {
            return Err(Error::config("need one pollution factor per price band"));
        }
        for &g in &self.pollution_factors {
            check_positive("pollution factor", g)?;
        }
        for &band in &self.price_bands {
            check_pair("price band", band, f64::MIN_POSITIVE)?;
        }
        if !(0.0..=MAX_PRICE_SPREAD).contains(&self.price_spread) {
            return Err(Error::config(format!("price_spread must lie in [0, {MAX_PRICE_SPREAD}]")));
        }
        if let Some(f) = self.constant_power_factor {
            check_positive("constant_power_factor", f)?;
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be >= 1"));
        }
        // the worst transmission delay must still leave a stable queue
        DelayBudget::new(self.delay_bound_s, self.transmission_delay_s.1, self.service_rate_per_server)?;
        Ok(())
    }

    fn spread_price(&self, band: (f64, f64), u: f64) -> f64 {
        let centre = 0.5 * (band.0 + band.1);
        centre + self.price_spread * (u - centre)
    }
}

/// Everything `generate` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub dcs: usize,
    pub sources: usize,
    pub slots: usize,
    pub ranges: ParameterRanges,
}

impl GeneratorConfig {
    pub fn new(seed: u64, dcs: usize) -> Self {
        Self { seed, dcs, sources: 3, slots: 1, ranges: ParameterRanges::default() }
    }
}

/// Prices per slot, data center and source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    prices: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PriceRecord {
    slot: usize,
    dc: usize,
    source: usize,
    price: f64,
}

const PRICE_HEADER: [&str; 4] = ["slot", "dc", "source", "price"];

impl PriceSeries {
    /// Builds a series from `[slot][dc][source]` prices.
    pub fn new(prices: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if prices.is_empty() || prices[0].is_empty() {
            return Err(Error::config("price series has no slots or no data centers"));
        }
        let shape: Vec<usize> = prices[0].iter().map(Vec::len).collect();
        for (t, slot) in prices.iter().enumerate() {
            if slot.iter().map(Vec::len).collect::<Vec<_>>() != shape {
                return Err(Error::config(format!("slot {t}: shape differs from slot 0")));
            }
            for (i, dc) in slot.iter().enumerate() {
                if dc.is_empty() {
                    return Err(Error::config(format!("slot {t}, dc {i}: no sources")));
                }
                if let Some(p) = dc.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                    return Err(Error::config(format!("slot {t}, dc {i}: price {p} is not > 0")));
                }
            }
        }
        Ok(Self { prices })
    }

    /// Prices of one slot taken from a scenario.
    pub fn constant(scenario: &Scenario, slots: usize) -> Result<Self> {
        let slot: Vec<Vec<f64>> = scenario.datacenters.iter().map(|d| d.sources.iter().map(|s| s.price).collect()).collect();
        Self::new(vec![slot; slots.max(1)])
    }

    pub fn slot_count(&self) -> usize {
        self.prices.len()
    }

    pub fn dc_count(&self) -> usize {
        self.prices[0].len()
    }

    pub fn source_count(&self, dc: usize) -> usize {
        self.prices[0][dc].len()
    }

    pub fn price(&self, slot: usize, dc: usize, source: usize) -> f64 {
        self.prices[slot][dc][source]
    }

    pub fn slot(&self, slot: usize) -> &[Vec<f64>] {
        &self.prices[slot]
    }

    /// Checks that the series fits the scenario's fleet.
    pub fn check_against(&self, scenario: &Scenario) -> Result<()> {
        if self.dc_count() != scenario.dc_count() {
            return Err(Error::config(format!(
                "price series covers {} data centers, scenario has {}",
                self.dc_count(),
                scenario.dc_count()
            )));
        }
        for (i, dc) in scenario.datacenters.iter().enumerate() {
            if self.source_count(i) != dc.sources.len() {
                return Err(Error::config(format!(
                    "dc {i}: price series has {} sources, scenario has {}",
                    self.source_count(i),
                    dc.sources.len()
                )));
            }
        }
        Ok(())
    }

    /// Parses `slot,dc,source,price` rows. Every index combination must
    /// appear exactly once and indices must be contiguous from zero.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != PRICE_HEADER {
            return Err(Error::Parse(format!("price header must be slot,dc,source,price, got {}", header.join(","))));
        }
        let mut cells: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for (line, rec) in rdr.deserialize::<PriceRecord>().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("price row {}: {e}", line + 2)))?;
            if cells.insert((rec.slot, rec.dc, rec.source), rec.price).is_some() {
                return Err(Error::Parse(format!("duplicate price for slot {}, dc {}, source {}", rec.slot, rec.dc, rec.source)));
            }
        }
        if cells.is_empty() {
            return Err(Error::Parse("price file has no rows".into()));
        }
        let slots = cells.keys().map(|k| k.0).max().unwrap_or(0) + 1;
        let dcs = cells.keys().map(|k| k.1).max().unwrap_or(0) + 1;
        let mut prices = vec![vec![Vec::new(); dcs]; slots];
        for ((t, i, n), p) in cells {
            let row = &mut prices[t][i];
            if row.len() != n {
                return Err(Error::Parse(format!("slot {t}, dc {i}: source {n} appears without source {}", row.len())));
            }
            row.push(p);
        }
        Self::new(prices).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (t, slot) in self.prices.iter().enumerate() {
            for (i, dc) in slot.iter().enumerate() {
                for (n, &price) in dc.iter().enumerate() {
                    w.serialize(PriceRecord { slot: t, dc: i, source: n, price }).expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// A fleet run over consecutive slots with battery charge carried forward.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotChain {
    /// Static fleet; its prices and initial charges describe slot 0.
    pub base: Scenario,
    pub prices: PriceSeries,
    /// Total load per slot.
    pub loads: Vec<f64>,
    /// `soc[t][i]`: stored energy at the start of slot `t`.
    soc: Vec<Vec<f64>>,
}

impl SlotChain {
    pub fn new(base: Scenario, prices: PriceSeries) -> Result<Self> {
        base.validate()?;
        prices.check_against(&base)?;
        let loads = vec![base.total_load; prices.slot_count()];
        let soc = vec![base.datacenters.iter().map(|d| d.battery.initial_charge_kwh).collect()];
        Ok(Self { base, prices, loads, soc })
    }

    pub fn slot_count(&self) -> usize {
        self.prices.slot_count()
    }

    /// Stored energy at the start of slot `t`, if already propagated.
    pub fn soc(&self, t: usize) -> Option<&[f64]> {
        self.soc.get(t).map(Vec::as_slice)
    }

    /// Number of slots whose end state is known.
    pub fn stepped(&self) -> usize {
        self.soc.len() - 1
    }

    /// Forgets all propagated states.
    pub fn reset(&mut self) {
        self.soc.truncate(1);
    }

    /// The single-slot problem for slot `t` with the given stored energy and
    /// potential prices.
    pub fn snapshot(&self, t: usize, soc: &[f64], potential: &[f64]) -> Result<Scenario> {
        if t >= self.slot_count() {
            return Err(Error::config(format!("slot {t} outside the chain of {}", self.slot_count())));
        }
        let mut s = self.base.clone();
        s.total_load = self.loads[t];
        for (i, dc) in s.datacenters.iter_mut().enumerate() {
            for (n, src) in dc.sources.iter_mut().enumerate() {
                src.price = self.prices.price(t, i, n);
            }
            dc.battery.initial_charge_kwh = soc[i];
            dc.battery.potential_price = potential[i];
        }
        Ok(s)
    }

    /// Applies slot `t`'s decisions and returns the stored energy at the start
    /// of slot `t + 1`. Slots must be stepped in order.
    pub fn step(&mut self, t: usize, decisions: &[Decision]) -> Result<&[f64]> {
        if t != self.stepped() {
            return Err(Error::Internal(format!("stepping slot {t}, but the chain is at slot {}", self.stepped())));
        }
        if decisions.len() != self.base.dc_count() {
            return Err(Error::config("one decision per data center is required"));
        }
        let mut next = Vec::with_capacity(decisions.len());
        for (i, (d, dc)) in decisions.iter().zip(&self.base.datacenters).enumerate() {
            let cap = dc.battery.capacity_kwh;
            let c = self.soc[t][i] + d.battery_delta_kwh;
            let tol = 1e-9 * cap.max(1.0);
            if c < -tol || c > cap + tol {
                return Err(Error::Internal(format!("state of charge propagation left [0, {cap}] at dc {i}, slot {t}: {c}")));
            }
            next.push(c.clamp(0.0, cap));
        }
        self.soc.push(next);
        Ok(&self.soc[t + 1])
    }
}

/// The `h`-slot-ahead window `(t+1 … t+H) mod T` of one data center's unit
/// costs.
pub fn future_window(unit_costs: &[Vec<f64>], t: usize, dc: usize, horizon: usize) -> Vec<f64> {
    let slots = unit_costs.len();
    (1..=horizon).map(|h| unit_costs[(t + h) % slots][dc]).collect()
}

/// How the potential price of stored energy is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ForecastMode {
    /// Unit costs of the previous pass, used as they are.
    PerfectForesight,
    /// Each future unit cost multiplied by `1 + error * N(0, 1)`.
    Forecast { error: f64, seed: u64 },
    /// Stored energy has no future value.
    NoPotential,
}

/// `ε̂` per slot and data center from unit costs `[slot][dc]`.
pub fn potential_prices(base: &Scenario, unit_costs: &[Vec<f64>], mode: ForecastMode) -> Result<Vec<Vec<f64>>> {
    let slots = unit_costs.len();
    let mut rng = match mode {
        ForecastMode::Forecast { error, seed } => {
            if !(error.is_finite() && error >= 0.0) {
                return Err(Error::config("forecast error must be >= 0"));
            }
            Some((ChaCha8Rng::seed_from_u64(seed), error))
        }
        _ => None,
    };
    let mut out = vec![vec![0.0; base.dc_count()]; slots];
    for (t, row) in out.iter_mut().enumerate() {
        for (i, dc) in base.datacenters.iter().enumerate() {
            if mode == ForecastMode::NoPotential {
                continue;
            }
            let weights = &dc.battery.horizon_weights;
            let mut window = future_window(unit_costs, t, i, weights.len());
            if let Some((rng, err)) = rng.as_mut() {
                for v in &mut window {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = (*v * (1.0 + *err * z)).max(0.0);
                }
            }
            row[i] = horizon_estimate(weights, &window)?;
        }
    }
    Ok(out)
}

/// Generates a fleet and its price series deterministically from the seed.
pub fn generate(config: &GeneratorConfig) -> Result<SlotChain> {
    let r = &config.ranges;
    r.validate()?;
    if config.dcs == 0 || config.slots == 0 {
        return Err(Error::config("need at least one data center and one slot"));
    }
    if config.sources == 0 || config.sources > r.price_bands.len() {
        return Err(Error::config(format!("sources must lie in 1..={}", r.price_bands.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tau = r.slot_hours;
    let u = r.service_rate_per_server;

    struct Draw {
        s: f64,
        beta: f64,
        cap_frac: f64,
        dt: f64,
    }
    let draws: Vec<Draw> = (0..config.dcs)
        .map(|_| Draw {
            s: rng.random_range(r.server_power_kw.0..=r.server_power_kw.1),
            beta: rng.random_range(r.idle_power_kw.0..=r.idle_power_kw.1),
            cap_frac: rng.random_range(r.capacity_fraction.0..=r.capacity_fraction.1),
            dt: rng.random_range(r.transmission_delay_s.0..=r.transmission_delay_s.1),
        })
        .collect();
    let mut prices = vec![vec![vec![0.0; config.sources]; config.dcs]; config.slots];
    for slot in prices.iter_mut() {
        for dc in slot.iter_mut() {
            for (n, p) in dc.iter_mut().enumerate() {
                let band = r.price_bands[n];
                *p = r.spread_price(band, rng.random_range(band.0..=band.1));
            }
        }
    }
    let prices = PriceSeries::new(prices)?;

    let power_factor = r.constant_power_factor.unwrap_or(tau * r.p_max_kw);
    let weights = default_horizon_weights(r.horizon);
    let mut datacenters = Vec::with_capacity(config.dcs);
    for (i, d) in draws.iter().enumerate() {
        let m = ((r.p_max_kw - d.beta) / d.s).floor();
        let capacity = d.cap_frac * r.p_max_kw * tau;
        let sources = (0..config.sources)
            .map(|n| PowerSource::with_power_factor(prices.price(0, i, n), r.pollution_factors[n], power_factor))
            .collect::<Result<Vec<_>>>()?;
        datacenters.push(DataCenterConfig {
            server_count: m as u32,
            server_power_kw: d.s,
            idle_power_kw: d.beta,
            service_rate_per_server: u,
            p_max_kw: r.p_max_kw,
            transmission_delay_s: d.dt,
            sources,
            battery: BatteryConfig {
                capacity_kwh: capacity,
                initial_charge_kwh: 0.5 * capacity,
                delta_lb_kwh: -tau * capacity,
                delta_ub_kwh: 0.3 * tau * capacity,
                efficiency: EfficiencyCurve::reference(),
                potential_price: 0.0,
                horizon_weights: weights.clone(),
            },
            weight_delay: r.weight_delay,
            weight_cost: r.weight_cost,
        });
    }
    let mut base = Scenario { slot_hours: tau, total_load: 0.0, max_load: 0.0, delay_bound_s: r.delay_bound_s, datacenters };
    let mut max_load = 0.0;
    for i in 0..base.dc_count() {
        max_load += base.datacenters[i].max_capacity() - base.delay_budget(i)?.capacity_floor()?;
    }
    base.max_load = max_load;
    base.total_load = r.load_fraction * max_load;

    // potential prices from unit costs at a nominal purchase level
    let nominal = 0.6 * tau * r.p_max_kw;
    let mut unit = vec![vec![0.0; config.dcs]; config.slots];
    for (t, row) in unit.iter_mut().enumerate() {
        for (i, dc) in base.datacenters.iter().enumerate() {
            let srcs: Vec<PowerSource> =
                dc.sources.iter().enumerate().map(|(n, s)| PowerSource { price: prices.price(t, i, n), ..*s }).collect();
            row[i] = allocate(&srcs, nominal)?.unit_cost;
        }
    }
    let eps = potential_prices(&base, &unit, ForecastMode::PerfectForesight)?;
    for (i, dc) in base.datacenters.iter_mut().enumerate() {
        dc.battery.potential_price = eps[0][i];
    }
    SlotChain::new(base, prices)
}

/// Settings of [`simulate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// Forward passes after the battery-free pass that seeds the unit costs.
    pub passes: usize,
    pub mode: ForecastMode,
    pub policy: Policy,
    /// Whole server counts through the rounding heuristic.
    pub integer: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { passes: 2, mode: ForecastMode::PerfectForesight, policy: Policy::Joint, integer: true }
    }
}

/// One output row: a data center in one slot. `soc` is the end-of-slot
/// charge; missing sources are reported as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRow {
    pub slot: usize,
    pub dc: usize,
    pub lambda: f64,
    pub m: f64,
    pub delta: f64,
    pub soc: f64,
    pub q_tp: f64,
    pub q_wp: f64,
    pub q_sp: f64,
    pub monetary: f64,
    pub pollution: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub rows: Vec<SimulationRow>,
    /// `[slot][dc]` potential prices used in the final pass.
    pub potential_prices: Vec<Vec<f64>>,
    /// `[slot][dc]` unit costs realized in the final pass.
    pub unit_costs: Vec<Vec<f64>>,
    pub objective: f64,
    pub monetary_cost: f64,
}

impl SimulationResult {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Battery actions `[slot][dc]`.
    pub fn deltas(&self, dcs: usize) -> Vec<Vec<f64>> {
        self.rows.chunks(dcs).map(|c| c.iter().map(|r| r.delta).collect()).collect()
    }
}

struct Pass {
    rows: Vec<SimulationRow>,
    unit: Vec<Vec<f64>>,
    objective: f64,
    monetary: f64,
}

fn run_pass(chain: &mut SlotChain, potential: &[Vec<f64>], policy: Policy, integer: bool, battery: bool) -> Result<Pass> {
    chain.reset();
    let dcs = chain.base.dc_count();
    let mut pass = Pass { rows: Vec::new(), unit: Vec::new(), objective: 0.0, monetary: 0.0 };
    for t in 0..chain.slot_count() {
        let soc = chain.soc(t).expect("stepped in order").to_vec();
        let mut scn = chain.snapshot(t, &soc, &potential[t])?;
        if !battery {
            for dc in &mut scn.datacenters {
                dc.battery.delta_lb_kwh = 0.0;
                dc.battery.delta_ub_kwh = 0.0;
            }
        }
        let out = solve_policy(&scn, policy, integer)?;
        let end = chain.step(t, &out.decisions)?.to_vec();
        pass.objective += out.objective;
        pass.monetary += out.monetary_cost();
        let mut unit = Vec::with_capacity(dcs);
        for (i, (d, terms)) in out.decisions.iter().zip(&out.terms).enumerate() {
            let q = |n: usize| d.purchases.get(n).copied().unwrap_or(0.0);
            let bought: f64 = d.purchases.iter().sum();
            unit.push(crate::model::unit_cost(terms.power_cost, bought));
            pass.rows.push(SimulationRow {
                slot: t,
                dc: i,
                lambda: d.arrival_rate,
                m: d.active_servers,
                delta: d.battery_delta_kwh,
                soc: end[i],
                q_tp: q(0),
                q_wp: q(1),
                q_sp: q(2),
                monetary: terms.monetary_cost,
                pollution: terms.pollution_cost,
                phi: terms.phi,
            });
        }
        pass.unit.push(unit);
    }
    Ok(pass)
}

/// Runs the chain forward. A battery-free pass yields unit costs; each
/// following pass prices stored energy from the previous pass's unit costs.
pub fn simulate(chain: &SlotChain, opts: &SimulationOptions) -> Result<SimulationResult> {
    if opts.passes == 0 {
        return Err(Error::config("simulation needs at least one pass"));
    }
    let mut chain = chain.clone();
    let zero = vec![vec![0.0; chain.base.dc_count()]; chain.slot_count()];
    let mut unit = run_pass(&mut chain, &zero, opts.policy, opts.integer, false)?.unit;
    let mut last = None;
    for _ in 0..opts.passes {
        let eps = potential_prices(&chain.base, &unit, opts.mode)?;
        let pass = run_pass(&mut chain, &eps, opts.policy, opts.integer, true)?;
        unit = pass.unit.clone();
        last = Some((pass, eps));
    }
    let (pass, eps) = last.expect("at least one pass");
    Ok(SimulationResult {
        rows: pass.rows,
        potential_prices: eps,
        unit_costs: pass.unit,
        objective: pass.objective,
        monetary_cost: pass.monetary,
    })
}
