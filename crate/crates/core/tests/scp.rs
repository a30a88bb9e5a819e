mod common;

use common::*;
use geodc::allocation::LagrangeAggregates;
use geodc::battery::action_box;
use geodc::oracle::{joint_oracle_with, JointOracleOptions};
use geodc::scp::derivatives::DcModel;
use geodc::scp::{solve_scp, solve_scp_with, SolveOptions};
use geodc::Error;

fn assert_invariants(s: &geodc::model::Scenario, r: &geodc::scp::RelaxedSolution) {
    let total: f64 = r.decisions.iter().map(|d| d.arrival_rate).sum();
    assert!(rel(total, s.total_load) < 1e-8, "sum of rates {total} vs {}", s.total_load);
    for (i, d) in r.decisions.iter().enumerate() {
        d.check(s, i).unwrap();
    }
    assert!(r.kkt_residual <= 1e-6, "kkt residual {}", r.kkt_residual);
    let n: usize = s.datacenters.iter().map(|d| d.sources.len()).sum();
    assert!(r.outer_iterations <= 2 * n);
    assert!(r.objective_monotone(), "{:?}", r.objective_history);
}

#[test]
fn identical_data_centers_split_symmetrically() {
    let s = fleet(vec![dc(1500, &[0.08, 0.11, 0.14], 0.1), dc(1500, &[0.08, 0.11, 0.14], 0.1)], 0.5);
    let r = solve_scp(&s).unwrap();
    let (a, b) = (&r.decisions[0], &r.decisions[1]);
    assert!(rel(a.arrival_rate, s.total_load / 2.0) < 1e-8);
    assert!(rel(a.active_servers, b.active_servers) < 1e-9);
    assert!((a.battery_delta_kwh - b.battery_delta_kwh).abs() < 1e-6);
    assert_invariants(&s, &r);
}

#[test]
fn without_potential_price_batteries_discharge_to_the_bound() {
    let s = fleet(vec![dc(1200, &[0.1, 0.1], 0.0), dc(1800, &[0.1, 0.12], 0.0)], 0.6);
    let r = solve_scp(&s).unwrap();
    for (i, d) in r.decisions.iter().enumerate() {
        let (lo, _) = action_box(&s.datacenters[i].battery, s.slot_hours);
        assert!((d.battery_delta_kwh - lo).abs() < 1e-9, "dc {i}: {} vs {lo}", d.battery_delta_kwh);
        // a one-dimensional scan over the action never beats the bound
        let agg = LagrangeAggregates::all(&s.datacenters[i].sources).unwrap();
        let md = DcModel::new(&s, i, agg);
        let best = md.phi(d.arrival_rate, d.active_servers, d.battery_delta_kwh);
        for k in 0..=400 {
            let delta = lo + (0.0 - lo) * f64::from(k) / 400.0;
            assert!(md.phi(d.arrival_rate, d.active_servers, delta) >= best - 1e-9);
        }
    }
}

#[test]
fn no_clamping_needs_one_outer_iteration() {
    let s = generated(11, 3, 3);
    let r = solve_scp(&s).unwrap();
    assert!(r.allocations.iter().all(|a| a.clamped.is_empty()));
    assert_eq!(r.outer_iterations, 1);
    assert_invariants(&s, &r);
}

#[test]
fn expensive_source_clamps_and_satisfies_complementarity() {
    let mut s = generated(12, 2, 3);
    s.datacenters[0].sources[2].price *= 100.0;
    let r = solve_scp(&s).unwrap();
    assert_eq!(r.outer_iterations, 2);
    let a = &r.allocations[0];
    assert_eq!(a.purchases[2], 0.0);
    assert!(s.datacenters[0].sources[2].price >= a.marginal_cost - 1e-8);
    assert_invariants(&s, &r);
}

#[test]
fn single_data_center_matches_grid_oracle() {
    for seed in 0..4 {
        let s = generated(seed, 1, 3);
        let r = solve_scp(&s).unwrap();
        let o = joint_oracle_with(&s, &JointOracleOptions { points: 11, levels: 12, integer_servers: false }).unwrap();
        assert!(r.objective <= o.best_value * (1.0 + 1e-9), "solver {} oracle {}", r.objective, o.best_value);
        assert!(rel(r.objective, o.best_value) < 1e-3);
    }
}

#[test]
fn random_small_scenarios_hold_invariants() {
    for seed in 0..30 {
        let s = small_scenario(seed);
        let r = solve_scp(&s).unwrap();
        assert_invariants(&s, &r);
        for (cfg, a) in s.datacenters.iter().zip(&r.allocations) {
            for (src, &q) in cfg.sources.iter().zip(&a.purchases) {
                if q > 0.0 {
                    assert!(rel(src.marginal(q), a.marginal_cost) < 1e-8);
                } else {
                    assert!(src.price >= a.marginal_cost - 1e-8);
                }
            }
        }
    }
}

#[test]
fn overloaded_fleet_is_infeasible() {
    let mut s = generated(3, 2, 3);
    let full: f64 = s.datacenters.iter().map(|d| d.max_capacity()).sum();
    s.max_load = full;
    s.total_load = full;
    match solve_scp(&s) {
        Err(Error::Infeasible(msg)) => assert!(msg.contains("aggregate capacity"), "{msg}"),
        other => panic!("expected infeasibility, got {other:?}"),
    }
}

#[test]
fn documents_with_a_decreasing_curve_are_rejected() {
    let s = generated(3, 1, 2);
    let text = s.to_json();
    let good = serde_json::to_string(&s.datacenters[0].battery.efficiency).unwrap();
    let bad = r#"{"coefficients":[0.0,0.0,-1.0,1.5],"domain":[-1.0,0.3]}"#;
    let compact: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut doc = compact.clone();
    doc["datacenters"][0]["battery"]["efficiency_coeffs"] = serde_json::from_str(bad).unwrap();
    let err = geodc::model::Scenario::from_json(&doc.to_string()).unwrap_err();
    assert!(err.to_string().contains("convexity"), "{err}");
    doc["datacenters"][0]["battery"]["efficiency_coeffs"] = serde_json::from_str(&good).unwrap();
    assert!(geodc::model::Scenario::from_json(&doc.to_string()).is_ok());
}

#[test]
fn fixed_dispatch_and_disabled_battery_are_respected() {
    let s = generated(5, 3, 3);
    let fixed = geodc::policy::proportional_dispatch(&s).unwrap();
    let r = solve_scp_with(&s, &SolveOptions { disable_battery: true, fixed_dispatch: Some(fixed.clone()), server_bounds: None })
        .unwrap();
    for (d, l) in r.decisions.iter().zip(&fixed) {
        assert_eq!(d.arrival_rate, *l);
        assert_eq!(d.battery_delta_kwh, 0.0);
    }
    let free = solve_scp(&s).unwrap();
    assert!(free.objective <= r.objective);
}

#[test]
fn pinned_servers_stay_pinned() {
    let s = generated(6, 2, 3);
    let m: Vec<f64> = solve_scp(&s).unwrap().servers().iter().map(|m| m.ceil() + 3.0).collect();
    let r = solve_scp_with(&s, &SolveOptions::default().with_servers(&m)).unwrap();
    assert_eq!(r.servers(), m);
    assert_invariants(&s, &r);
}
