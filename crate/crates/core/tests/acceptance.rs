//! One test per acceptance criterion. Each prints a `PASS`/`FAIL` line with
//! the measured quantities before asserting.

mod common;

use std::time::{Duration, Instant};

use common::*;
use geodc::allocation::{allocate, optimal_cost_closed_form, AllocationResult, LagrangeAggregates};
use geodc::battery::{action_box, EfficiencyCurve};
use geodc::cli::report::{scaled_fleet, USE_RATIO_SERVERS};
use geodc::integer::{branch_and_bound, solve_heuristic, BbOptions};
use geodc::model::{PowerSource, Scenario};
use geodc::oracle::{allocation_oracle, joint_oracle_with, JointOracleOptions};
use geodc::policy::{solve_policy, Policy};
use geodc::scenario::{generate, simulate, ForecastMode, GeneratorConfig, PriceSeries, SimulationOptions, SlotChain};
use geodc::scp::derivatives::DcModel;
use geodc::scp::{check_convexity_condition, solve_scp};
use geodc::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(name: &str, ok: bool, detail: String) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

/// Random sources with `a` log-uniform on [1e-4, 1], prices on [0.01, 0.5]
/// and demand on [0, 1000].
fn random_sources(rng: &mut ChaCha8Rng) -> (Vec<PowerSource>, f64) {
    let n = rng.random_range(1..=4);
    let sources = (0..n)
        .map(|_| {
            let a = 10f64.powf(rng.random_range(-4.0..=0.0));
            PowerSource::new(rng.random_range(0.01..=0.5), rng.random_range(0.1..0.6), a).unwrap()
        })
        .collect();
    (sources, rng.random_range(0.0..=1000.0))
}

/// Marginal-equality and complementarity failures of one allocation.
fn kkt_failures(sources: &[PowerSource], r: &AllocationResult) -> usize {
    let v = r.marginal_cost;
    let mut bad = 0;
    for (s, &q) in sources.iter().zip(&r.purchases) {
        let ok = if q > 0.0 { rel(s.marginal(q), v) <= 1e-8 } else { s.price >= v * (1.0 - 1e-8) };
        if !ok {
            bad += 1;
        }
    }
    bad
}

fn closed_form_gap(sources: &[PowerSource], r: &AllocationResult) -> f64 {
    let summed: f64 = sources.iter().zip(&r.purchases).map(|(s, &q)| geodc::model::pif_cost(s, q).unwrap()).sum();
    let agg = LagrangeAggregates::over(sources, &r.active_mask()).unwrap();
    let closed = optimal_cost_closed_form(&agg, r.total_purchase());
    if summed == 0.0 && closed.abs() < 1e-300 {
        0.0
    } else {
        (summed - closed).abs() / summed.abs().max(1e-300)
    }
}

#[test]
fn criterion_01_allocation_matches_grid_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut clamped) = (0.0f64, 0);
    for _ in 0..200 {
        let (sources, demand) = random_sources(&mut rng);
        let r = allocate(&sources, demand).unwrap();
        clamped += usize::from(!r.clamped.is_empty());
        let o = allocation_oracle(&sources, demand, 2000).unwrap();
        let gap = if o.best_value == 0.0 { r.total_cost.abs() } else { (r.total_cost - o.best_value).abs() / o.best_value };
        worst = worst.max(gap);
    }
    let took = start.elapsed();
    report(
        "allocation oracle equivalence",
        worst <= 1e-4 && took <= Duration::from_secs(30),
        format!("200 instances ({clamped} with clamped sources), worst relative gap {worst:.2e}, {:.1} s", took.as_secs_f64()),
    );
}

#[test]
fn criterion_02_kkt_witness() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut checked, mut bad) = (0, 0);
    for _ in 0..200 {
        let (sources, demand) = random_sources(&mut rng);
        let r = allocate(&sources, demand).unwrap();
        bad += kkt_failures(&sources, &r);
        checked += 1;
    }
    for seed in 0..50 {
        let s = small_scenario(seed);
        let r = solve_scp(&s).unwrap();
        for (cfg, a) in s.datacenters.iter().zip(&r.allocations) {
            bad += kkt_failures(&cfg.sources, a);
            checked += 1;
        }
    }
    report("KKT witness", bad == 0, format!("{checked} solved allocations, {bad} violations"));
}

#[test]
fn criterion_03_closed_form_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..200 {
        let (sources, demand) = random_sources(&mut rng);
        worst = worst.max(closed_form_gap(&sources, &allocate(&sources, demand).unwrap()));
        count += 1;
    }
    for seed in 0..50 {
        let s = small_scenario(seed);
        let r = solve_scp(&s).unwrap();
        for (cfg, a) in s.datacenters.iter().zip(&r.allocations) {
            worst = worst.max(closed_form_gap(&cfg.sources, a));
            count += 1;
        }
    }
    report("closed-form consistency", worst <= 1e-10, format!("{count} allocations, worst relative gap {worst:.2e}"));
}

#[test]
fn criterion_04_scp_matches_joint_oracle() {
    let start = Instant::now();
    let (mut worst, mut over_limit) = (f64::NEG_INFINITY, 0);
    for seed in 0..50 {
        let s = small_scenario(seed);
        let r = solve_scp(&s).unwrap();
        let o = joint_oracle_with(&s, &JointOracleOptions::default()).unwrap();
        worst = worst.max((r.objective - o.best_value) / o.best_value.abs());
        let n: usize = s.datacenters.iter().map(|d| d.sources.len()).sum();
        if r.outer_iterations > 2 * n {
            over_limit += 1;
        }
    }
    let took = start.elapsed();
    report(
        "SCP optimality",
        worst <= 5e-3 && over_limit == 0 && took <= Duration::from_secs(300),
        format!(
            "50 scenarios, worst (solver - oracle)/oracle {worst:.2e}, {over_limit} runs over the iteration limit, {:.1} s",
            took.as_secs_f64()
        ),
    );
}

/// Nearest power of two, so that `v ± step` is exact for `v` on a dyadic grid.
fn pow2(step: f64) -> f64 {
    2f64.powi(step.log2().round() as i32)
}

/// Rounds to a multiple of 2⁻²⁴; with power-of-two steps the perturbed
/// arguments and `m ū` stay exact, and only the evaluation of `Φ` rounds.
fn dyadic(v: f64) -> f64 {
    (v * 16_777_216.0).round() / 16_777_216.0
}

fn fd_errors(md: &DcModel, lambda: f64, m: f64, delta: f64, scale_delta: f64, u: f64) -> (f64, f64, f64) {
    let x = m * u - lambda;
    let h = [pow2(1e-5 * x), pow2(1e-5 * x / u), pow2(1e-5 * scale_delta)];
    let at = |p: [f64; 3]| md.phi(p[0], p[1], p[2]);
    let grad = |p: [f64; 3]| md.gradient(p[0], p[1], p[2]);
    let p = [lambda, m, delta];
    let g = md.gradient(lambda, m, delta);
    let hs = md.hessian(lambda, m, delta);
    let hmax = hs.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let (mut gerr, mut herr) = (0.0f64, 0.0f64);
    for k in 0..3 {
        let mut up = p;
        let mut dn = p;
        up[k] += h[k];
        dn[k] -= h[k];
        let fd = (at(up) - at(dn)) / (2.0 * h[k]);
        gerr = gerr.max((fd - g[k]).abs() / g[k].abs().max(1e-12));
        let (gu, gd) = (grad(up), grad(dn));
        for j in 0..3 {
            let fd2 = (gu[j] - gd[j]) / (2.0 * h[k]);
            herr = herr.max((fd2 - hs[j][k]).abs() / hs[j][k].abs().max(1e-10 * hmax));
        }
    }
    let minors = md.leading_minors(lambda, m, delta);
    (gerr, herr, minors.iter().copied().fold(f64::INFINITY, f64::min))
}

#[test]
fn criterion_05_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut gworst, mut hworst, mut min_minor, mut points) = (0.0f64, 0.0f64, f64::INFINITY, 0);
    for seed in 0..10 {
        let s = small_scenario(seed);
        for (i, cfg) in s.datacenters.iter().enumerate() {
            let md = DcModel::new(&s, i, LagrangeAggregates::all(&cfg.sources).unwrap());
            let u = cfg.service_rate_per_server;
            let floor = s.delay_budget(i).unwrap().capacity_floor().unwrap();
            let (lo, hi) = action_box(&cfg.battery, s.slot_hours);
            let k = cfg.battery.capacity_kwh * s.slot_hours;
            for _ in 0..20 {
                let m = dyadic(rng.random_range(0.2..0.95) * cfg.max_servers());
                let lambda = dyadic(m * u - floor * rng.random_range(1.0..5.0));
                if lambda <= 0.0 {
                    continue;
                }
                let delta = dyadic(lo + (hi - lo) * rng.random_range(0.05..0.95));
                let (g, h, minor) = fd_errors(&md, lambda, m, delta, k, u);
                gworst = gworst.max(g);
                hworst = hworst.max(h);
                min_minor = min_minor.min(minor);
                points += 1;
            }
        }
    }
    report(
        "gradient and Hessian checks",
        points >= 200 && gworst <= 1e-6 && hworst <= 1e-4 && min_minor >= 0.0,
        format!("{points} points, gradient {gworst:.2e}, Hessian {hworst:.2e}, smallest leading minor {min_minor:.3e}"),
    );
}

#[test]
fn criterion_06_convexity_certificate() {
    let c = check_convexity_condition(&EfficiencyCurve::reference());
    let disc = (6.0 * 1.830f64).powi(2) - 4.0 * (12.0 * 0.873) * (2.0 * 1.495);
    let rejected = matches!(
        EfficiencyCurve::new([0.0, 0.0, -1.0, 1.5], -1.0, 0.3),
        Err(Error::Certificate { value, .. }) if value < 0.0
    );
    report(
        "convexity certificate",
        c.holds && c.min_value > 0.0 && (disc + 4.73).abs() < 0.01 && rejected,
        format!(
            "reference minimum {:.4} at {:.4}, discriminant {disc:.3}, decreasing curve rejected: {rejected}",
            c.min_value, c.argmin_delta
        ),
    );
}

#[test]
fn criterion_07_heuristic_close_to_branch_and_bound() {
    let (mut phi_worst, mut cost_worst, mut calls_ok) = (0.0f64, 0.0f64, true);
    let mut lines = Vec::new();
    for dcs in [2, 4, 6] {
        for seed in 0..10 {
            let s = generate(&GeneratorConfig::new(seed, dcs)).unwrap().base;
            let h = solve_heuristic(&s).unwrap();
            let bb = branch_and_bound(&s, &BbOptions::default()).unwrap();
            phi_worst = phi_worst.max((h.objective - bb.objective) / bb.objective);
            let (hc, bc) = (h.total_power_cost(), bb.total_power_cost());
            cost_worst = cost_worst.max((hc - bc).abs() / bc);
            calls_ok &= h.scp_calls == 2;
            lines.push(format!("I={dcs} seed={seed} nodes={} bound_gap={:.1e}", bb.nodes, bb.bound_gap));
        }
    }
    for l in &lines {
        println!("  {l}");
    }
    report(
        "heuristic vs branch and bound",
        phi_worst <= 1e-3 && cost_worst <= 5e-3 && calls_ok,
        format!("30 fleets, worst phi gap {phi_worst:.2e}, worst power cost gap {cost_worst:.2e}, two SCP calls: {calls_ok}"),
    );
}

#[test]
fn criterion_08_power_factor_fairness() {
    let scaled = solve_scp(&scaled_fleet(&USE_RATIO_SERVERS, None, 0.6).unwrap()).unwrap();
    let constant = solve_scp(&scaled_fleet(&USE_RATIO_SERVERS, Some(500.0), 0.6).unwrap()).unwrap();
    let ratio = |r: &geodc::scp::RelaxedSolution| -> Vec<f64> {
        r.servers().iter().zip(USE_RATIO_SERVERS).map(|(m, big_m)| m / f64::from(big_m)).collect()
    };
    let (a, b) = (ratio(&scaled), ratio(&constant));
    let spread = a.iter().fold(f64::NEG_INFINITY, |x, &v| x.max(v)) - a.iter().fold(f64::INFINITY, |x, &v| x.min(v));
    let one_server = 1.0 / f64::from(USE_RATIO_SERVERS[0]);
    let decreasing = b.windows(2).all(|w| w[1] < w[0]);
    report(
        "power-factor fairness",
        spread <= one_server && decreasing,
        format!("scaled ratios {a:.4?} (spread {spread:.2e} vs {one_server:.2e}), constant ratios {b:.4?}"),
    );
}

#[test]
fn criterion_09_clean_power_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ratio_worst = 0.0f64;
    for _ in 0..50 {
        let p = rng.random_range(0.04..0.18);
        let sources: Vec<PowerSource> = [0.5, 0.4, 0.3]
            .iter()
            .map(|&g| PowerSource::with_power_factor(p, g, rng.random_range(300.0..1500.0)).unwrap())
            .collect();
        let r = allocate(&sources, rng.random_range(10.0..2000.0)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = sources[j].pif_coeff / sources[i].pif_coeff;
                ratio_worst = ratio_worst.max(rel(r.purchases[i] / r.purchases[j], expect));
            }
        }
    }
    // Thermal is the cheapest source, as in the generated price bands.
    let mut drops = 0;
    for _ in 0..50 {
        let tp = rng.random_range(0.04..0.08);
        let prices = [tp, rng.random_range(tp + 0.01..0.14), rng.random_range(tp + 0.01..0.18)];
        let fp = rng.random_range(300.0..1500.0);
        let sources: Vec<PowerSource> =
            prices.iter().zip([0.5, 0.4, 0.3]).map(|(&p, g)| PowerSource::with_power_factor(p, g, fp).unwrap()).collect();
        let clean = |q: f64| {
            let r = allocate(&sources, q).unwrap();
            (r.purchases[1] + r.purchases[2]) / q
        };
        let mut prev = clean(1.0);
        for k in 1..=200 {
            let c = clean(1.0 + 10.0 * f64::from(k));
            if c < prev - 1e-12 {
                drops += 1;
            }
            prev = c;
        }
    }
    report(
        "clean-power properties",
        ratio_worst <= 1e-12 && drops == 0,
        format!("equal prices: worst ratio error {ratio_worst:.2e}; distinct prices: {drops} decreases over 50 demand sweeps"),
    );
}

fn flat_chain(base: Scenario, per_slot: &[&[f64]]) -> SlotChain {
    let prices = per_slot.iter().map(|p| base.datacenters.iter().map(|_| p.to_vec()).collect()).collect();
    SlotChain::new(base, PriceSeries::new(prices).unwrap()).unwrap()
}

#[test]
fn criterion_10_storage_behaviour() {
    let two = flat_chain(fleet(vec![dc(1200, &[0.1, 0.12], 0.0)], 0.5), &[&[0.9, 1.0], &[0.02, 0.03]]);
    let r = simulate(&two, &SimulationOptions::default()).unwrap();
    let d = r.deltas(1);
    let arbitrage = d[0][0] < 0.0 && d[1][0] > 0.0;

    let base = fleet(vec![dc(900, &[0.1, 0.12, 0.14], 0.0), dc(1500, &[0.1, 0.12, 0.14], 0.0)], 0.6);
    let max_discharge: Vec<f64> = base.datacenters.iter().map(|c| action_box(&c.battery, base.slot_hours).0).collect();
    let flat: &[f64] = &[0.1, 0.12, 0.14];
    let chain = flat_chain(base, &[flat; 5]);
    let z = simulate(&chain, &SimulationOptions { mode: ForecastMode::NoPotential, ..Default::default() }).unwrap();
    let zd = z.deltas(2);
    let pattern = (0..2).all(|i| zd[0][i] == max_discharge[i] && zd[1..].iter().all(|row| row[i] == 0.0));
    report(
        "storage behaviour",
        arbitrage && pattern,
        format!("two-slot actions {:?}; flat chain actions {zd:?} with bound {max_discharge:?}", [d[0][0], d[1][0]]),
    );
}

fn workload_savings(seed: u64, spread: f64) -> f64 {
    let mut cfg = GeneratorConfig { slots: 24, ..GeneratorConfig::new(seed, 4) };
    cfg.ranges.price_spread = spread;
    let chain = generate(&cfg).unwrap();
    let opts = SimulationOptions::default();
    let base = simulate(&chain, &SimulationOptions { policy: Policy::Baseline, ..opts.clone() }).unwrap();
    let wl = simulate(&chain, &SimulationOptions { policy: Policy::WorkloadOnly, ..opts }).unwrap();
    100.0 * (base.monetary_cost - wl.monetary_cost) / base.monetary_cost
}

#[test]
fn criterion_11_policy_dominance() {
    let mut order_violations = 0;
    for dcs in [2, 4, 6] {
        for seed in 0..10 {
            let s = generate(&GeneratorConfig::new(seed, dcs)).unwrap().base;
            let phi = |p| solve_policy(&s, p, false).unwrap().objective;
            let (j, w, b) = (phi(Policy::Joint), phi(Policy::WorkloadOnly), phi(Policy::Baseline));
            let tol = 1e-9 * b.abs();
            if !(j <= w + tol && w <= b + tol) {
                order_violations += 1;
            }
        }
    }
    let mut pairs = Vec::new();
    for seed in 0..5 {
        pairs.push((workload_savings(seed, 1.0), workload_savings(seed, 1.5)));
    }
    let variance_ok = pairs.iter().all(|(lo, hi)| hi > lo);
    report(
        "policy dominance",
        order_violations == 0 && variance_ok,
        format!(
            "{order_violations} ordering violations over 30 fleets; workload savings % (spread 1.0, 1.5) per seed {:.3?}",
            pairs
        ),
    );
}

fn cli(args: &[&str]) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = geodc::cli::run(std::iter::once("geodc").chain(args.iter().copied()), &mut out, &mut err);
    (code, out)
}

fn dir_contents(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_12_cli_determinism() {
    let work = tempfile::tempdir().unwrap();
    let data = work.path().join("data");
    let p = |path: &std::path::Path| path.to_str().unwrap().to_owned();
    let (code, _) = cli(&["gen", "--seed", "7", "--dcs", "2", "--slots", "4", "--out", &p(&data)]);
    assert_eq!(code, 0);
    let scenario = p(&data.join("scenario.json"));
    let prices = p(&data.join("prices.csv"));
    let samples = work.path().join("samples.csv");
    let curve = EfficiencyCurve::reference();
    let (lo, hi) = curve.domain();
    let mut text = String::from("delta,eta_prime\n");
    for k in 0..=30 {
        let d = lo + (hi - lo) * f64::from(k) / 30.0;
        text.push_str(&format!("{d},{}\n", curve.value(d)));
    }
    std::fs::write(&samples, text).unwrap();
    let samples = p(&samples);

    let commands: Vec<Vec<&str>> = vec![
        vec!["gen", "--seed", "7", "--dcs", "3", "--slots", "4"],
        vec!["allocate", "--scenario", &scenario, "--demand", "250"],
        vec!["solve", "--scenario", &scenario],
        vec!["solve", "--scenario", &scenario, "--policy", "baseline"],
        vec!["solve-exact", "--scenario", &scenario],
        vec!["simulate", "--scenario", &scenario, "--prices", &prices],
        vec!["simulate", "--seed", "7", "--dcs", "2", "--slots", "4", "--forecast-error", "0.1", "--forecast-seed", "3"],
        vec!["verify", "--scenario", &scenario],
        vec!["fit-eta", "--samples", &samples],
        vec!["report", "--experiment", "gaps", "--dcs", "2", "--seeds", "2"],
        vec!["report", "--experiment", "use-ratio"],
        vec!["report", "--experiment", "savings", "--dcs", "2", "--seeds", "1", "--slots", "4"],
        vec!["report", "--experiment", "clean-fraction"],
    ];
    let mut differing = Vec::new();
    for args in &commands {
        let first = cli(args);
        let second = cli(args);
        if first.0 != 0 || first != second {
            differing.push(args.join(" "));
        }
    }
    // commands that write files
    let runs: Vec<_> = (0..2)
        .map(|k| {
            let out = work.path().join(format!("run{k}"));
            let o = p(&out);
            cli(&["gen", "--seed", "7", "--dcs", "2", "--slots", "3", "--out", &o]);
            cli(&["simulate", "--seed", "7", "--dcs", "2", "--slots", "3", "--out", &o]);
            cli(&["report", "--experiment", "clean-fraction", "--out", &o]);
            dir_contents(&out)
        })
        .collect();
    if runs[0] != runs[1] || runs[0].len() != 4 {
        differing.push("file outputs".into());
    }
    report(
        "CLI determinism",
        differing.is_empty(),
        format!("{} commands run twice, differing: {differing:?}", commands.len() + 3),
    );
}
