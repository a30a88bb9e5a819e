#![allow(dead_code)]

use geodc::battery::{default_horizon_weights, EfficiencyCurve};
use geodc::model::{BatteryConfig, DataCenterConfig, PowerSource, Scenario};
use geodc::scenario::{generate, GeneratorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A generated fleet of `dcs` data centers with `sources` sources each.
pub fn generated(seed: u64, dcs: usize, sources: usize) -> Scenario {
    generate(&GeneratorConfig { sources, ..GeneratorConfig::new(seed, dcs) }).unwrap().base
}

/// Small fleets of varied shape: one to three data centers, one to three
/// sources, random load and spread, and on some seeds a source priced far
/// above the rest so that it clamps.
pub fn small_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let dcs = rng.random_range(1..=3);
    let sources = rng.random_range(1..=3);
    let mut cfg = GeneratorConfig { sources, ..GeneratorConfig::new(seed, dcs) };
    cfg.ranges.load_fraction = rng.random_range(0.2..0.9);
    cfg.ranges.price_spread = rng.random_range(0.5..1.5);
    cfg.ranges.weight_delay = rng.random_range(1.0..50.0);
    let mut s = generate(&cfg).unwrap().base;
    if sources > 1 && rng.random_bool(0.4) {
        let i = rng.random_range(0..dcs);
        let n = rng.random_range(0..sources);
        s.datacenters[i].sources[n].price *= 100.0;
    }
    s
}

/// One data center with a plain battery and identical-price sources.
pub fn dc(servers: u32, prices: &[f64], potential: f64) -> DataCenterConfig {
    let s = 0.5;
    let beta = 50.0;
    let p_max = f64::from(servers) * s + beta;
    let cap = 0.5 * p_max;
    DataCenterConfig {
        server_count: servers,
        server_power_kw: s,
        idle_power_kw: beta,
        service_rate_per_server: 80.0,
        p_max_kw: p_max,
        transmission_delay_s: 0.5,
        sources: prices
            .iter()
            .zip([0.5, 0.4, 0.3, 0.2])
            .map(|(&p, g)| PowerSource::with_power_factor(p, g, p_max).unwrap())
            .collect(),
        battery: BatteryConfig {
            capacity_kwh: cap,
            initial_charge_kwh: 0.5 * cap,
            delta_lb_kwh: -cap,
            delta_ub_kwh: 0.3 * cap,
            efficiency: EfficiencyCurve::reference(),
            potential_price: potential,
            horizon_weights: default_horizon_weights(6),
        },
        weight_delay: 10.0,
        weight_cost: 1.0,
    }
}

/// Wraps data centers into a scenario loaded to `fraction` of capacity.
pub fn fleet(dcs: Vec<DataCenterConfig>, fraction: f64) -> Scenario {
    let mut s = Scenario { slot_hours: 1.0, total_load: 0.0, max_load: 0.0, delay_bound_s: 2.0, datacenters: dcs };
    let mut max_load = 0.0;
    for i in 0..s.dc_count() {
        max_load += s.datacenters[i].max_capacity() - s.delay_budget(i).unwrap().capacity_floor().unwrap();
    }
    s.max_load = max_load;
    s.total_load = fraction * max_load;
    s
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
