mod common;

use common::*;
use geodc::battery::action_box;
use geodc::model::Scenario;
use geodc::policy::Policy;
use geodc::scenario::{generate, simulate, ForecastMode, GeneratorConfig, PriceSeries, SimulationOptions, SlotChain};

fn chain(base: Scenario, per_slot: &[&[f64]]) -> SlotChain {
    let prices = per_slot.iter().map(|p| base.datacenters.iter().map(|_| p.to_vec()).collect()).collect();
    SlotChain::new(base, PriceSeries::new(prices).unwrap()).unwrap()
}

#[test]
fn high_then_low_prices_discharge_then_charge() {
    for integer in [false, true] {
        let c = chain(fleet(vec![dc(1200, &[0.1, 0.12], 0.0)], 0.5), &[&[0.9, 1.0], &[0.02, 0.03]]);
        let r = simulate(&c, &SimulationOptions { integer, ..Default::default() }).unwrap();
        let d = r.deltas(1);
        assert!(d[0][0] < 0.0, "{d:?}");
        assert!(d[1][0] > 0.0, "{d:?}");
        assert!(r.potential_prices[0][0] < r.potential_prices[1][0]);
    }
}

#[test]
fn flat_prices_without_potential_empty_the_battery_once() {
    let base = fleet(vec![dc(900, &[0.1, 0.12, 0.14], 0.0), dc(1500, &[0.1, 0.12, 0.14], 0.0)], 0.6);
    let first: Vec<f64> = base.datacenters.iter().map(|d| action_box(&d.battery, base.slot_hours).0).collect();
    let flat: &[f64] = &[0.1, 0.12, 0.14];
    let c = chain(base, &[flat; 5]);
    let opts = SimulationOptions { mode: ForecastMode::NoPotential, ..Default::default() };
    let r = simulate(&c, &opts).unwrap();
    let d = r.deltas(2);
    for i in 0..2 {
        assert_eq!(d[0][i], first[i], "{d:?}");
        for row in &d[1..] {
            assert_eq!(row[i], 0.0, "{d:?}");
        }
    }
    assert!(r.potential_prices.iter().flatten().all(|&e| e == 0.0));
}

#[test]
fn state_of_charge_follows_the_actions() {
    let c = generate(&GeneratorConfig { slots: 8, ..GeneratorConfig::new(21, 3) }).unwrap();
    let r = simulate(&c, &SimulationOptions::default()).unwrap();
    for i in 0..3 {
        let cap = c.base.datacenters[i].battery.capacity_kwh;
        let mut soc = c.base.datacenters[i].battery.initial_charge_kwh;
        for row in r.rows.iter().filter(|row| row.dc == i) {
            soc += row.delta;
            assert!((row.soc - soc).abs() < 1e-9 * cap);
            assert!(row.soc >= 0.0 && row.soc <= cap);
            assert_eq!(row.m, row.m.round());
        }
    }
}

#[test]
fn forecast_noise_is_seeded() {
    let c = generate(&GeneratorConfig { slots: 6, ..GeneratorConfig::new(2, 2) }).unwrap();
    let noisy =
        |seed| SimulationOptions { mode: ForecastMode::Forecast { error: 0.2, seed }, integer: false, ..Default::default() };
    let a = simulate(&c, &noisy(1)).unwrap();
    let b = simulate(&c, &noisy(1)).unwrap();
    let other = simulate(&c, &noisy(2)).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_ne!(a.potential_prices, other.potential_prices);
}

#[test]
fn policies_order_on_every_slot_of_a_chain() {
    let c = generate(&GeneratorConfig { slots: 6, ..GeneratorConfig::new(4, 3) }).unwrap();
    let run = |policy| simulate(&c, &SimulationOptions { policy, integer: false, passes: 1, ..Default::default() }).unwrap();
    let base = run(Policy::Baseline);
    let workload = run(Policy::WorkloadOnly);
    assert!(workload.objective <= base.objective * (1.0 + 1e-9));
    for r in &run(Policy::WorkloadOnly).rows {
        assert_eq!(r.delta, 0.0);
    }
}

#[test]
fn chains_reject_mismatched_price_series() {
    let base = fleet(vec![dc(900, &[0.1, 0.12], 0.0)], 0.5);
    let wrong = PriceSeries::new(vec![vec![vec![0.1, 0.12, 0.14]]]).unwrap();
    assert!(SlotChain::new(base.clone(), wrong).is_err());
    assert!(PriceSeries::new(vec![vec![vec![0.1, -0.1]]]).is_err());
    let c = chain(base, &[&[0.1, 0.12]]);
    assert!(simulate(&c, &SimulationOptions { passes: 0, ..Default::default() }).is_err());
}
