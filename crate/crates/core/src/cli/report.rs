//! Experiment tables emitted by `geodc report`.

use serde::Serialize;

use crate::allocation::allocate;
use crate::battery::{default_horizon_weights, EfficiencyCurve};
use crate::error::{Error, Result};
use crate::integer::{branch_and_bound, solve_heuristic, BbOptions};
use crate::model::{BatteryConfig, DataCenterConfig, PowerSource, Scenario};
use crate::policy::Policy;
use crate::scenario::{generate, simulate, GeneratorConfig, SimulationOptions, SlotChain};
use crate::scp::solve_scp;

/// A named table ready to be written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub name: String,
    /// Lines written above the header, each starting with `#`.
    pub notes: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.into(), notes: vec![], header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for n in &self.notes {
            out.push_str("# ");
            out.push_str(n);
            out.push('\n');
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"));
        out
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| self.rows.iter().map(|r| r[c].len()).chain([self.header[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = format!("{}\n", self.name);
        for n in &self.notes {
            out.push_str(&format!("  {n}\n"));
        }
        out.push_str(&line(&self.header));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

/// Heuristic against branch and bound on generated fleets.
pub fn gaps_report(dcs: &[usize], seeds: &[u64]) -> Result<Report> {
    let mut r = Report::new(
        "gaps",
        &[
            "dcs",
            "seed",
            "phi_bb",
            "phi_heuristic",
            "phi_gap",
            "phi_gap_rel",
            "power_cost_bb",
            "power_cost_heuristic",
            "power_cost_gap",
            "mean_dq_bb",
            "mean_dq_heuristic",
            "mean_dq_gap",
            "bb_nodes",
            "bb_bound_gap",
            "heuristic_scp_calls",
        ],
    );
    for &n in dcs {
        for &seed in seeds {
            let s = generate(&GeneratorConfig::new(seed, n))?.base;
            let h = solve_heuristic(&s)?;
            let bb = branch_and_bound(&s, &BbOptions { force: true, ..Default::default() })?;
            r.push(vec![
                n.to_string(),
                seed.to_string(),
                f(bb.objective),
                f(h.objective),
                f(h.objective - bb.objective),
                format!("{:.3e}", (h.objective - bb.objective) / bb.objective),
                f(bb.total_power_cost()),
                f(h.total_power_cost()),
                f(h.total_power_cost() - bb.total_power_cost()),
                f(bb.mean_queue_delay()),
                f(h.mean_queue_delay()),
                f(h.mean_queue_delay() - bb.mean_queue_delay()),
                bb.nodes.to_string(),
                format!("{:.3e}", bb.bound_gap),
                h.scp_calls.to_string(),
            ]);
        }
    }
    Ok(r)
}

/// Server sizes of the fairness fleet.
pub const USE_RATIO_SERVERS: [u32; 6] = [2200, 2600, 3000, 4600, 5000, 5400];

/// A fleet whose data centers are scaled copies of one another, with
/// identical prices everywhere. `power_factor = None` uses `τ P_max`.
pub fn scaled_fleet(servers: &[u32], power_factor: Option<f64>, load_fraction: f64) -> Result<Scenario> {
    let base_m = f64::from(servers[0]);
    let mut dcs = Vec::new();
    for &m in servers {
        let k = f64::from(m) / base_m;
        let beta = 50.0 * k;
        let p_max = f64::from(m) * 0.5 + beta;
        let fp = power_factor.unwrap_or(p_max);
        let cap = 0.5 * p_max;
        let sources = [(0.08, 0.5), (0.08, 0.4), (0.08, 0.3)]
            .iter()
            .map(|&(p, g)| PowerSource::with_power_factor(p, g, fp))
            .collect::<Result<Vec<_>>>()?;
        dcs.push(DataCenterConfig {
            server_count: m,
            server_power_kw: 0.5,
            idle_power_kw: beta,
            service_rate_per_server: 80.0,
            p_max_kw: p_max,
            transmission_delay_s: 0.5,
            sources,
            battery: BatteryConfig {
                capacity_kwh: cap,
                initial_charge_kwh: 0.5 * cap,
                delta_lb_kwh: -cap,
                delta_ub_kwh: 0.3 * cap,
                efficiency: EfficiencyCurve::reference(),
                potential_price: 0.08,
                horizon_weights: default_horizon_weights(6),
            },
            weight_delay: 10.0,
            weight_cost: 1.0,
        });
    }
    let mut s = Scenario { slot_hours: 1.0, total_load: 0.0, max_load: 0.0, delay_bound_s: 2.0, datacenters: dcs };
    let mut max_load = 0.0;
    for i in 0..s.dc_count() {
        max_load += s.datacenters[i].max_capacity() - s.delay_budget(i)?.capacity_floor()?;
    }
    s.max_load = max_load;
    s.total_load = load_fraction * max_load;
    Ok(s)
}

/// Active-server ratios with a constant power factor and with `τ P_max`.
pub fn use_ratio_report() -> Result<Report> {
    let mut r =
        Report::new("use-ratio", &["dc", "servers", "m_constant_fp", "ratio_constant_fp", "m_scaled_fp", "ratio_scaled_fp"]);
    r.notes.push("identical prices, load 60% of capacity, constant power factor 500 kWh".into());
    let constant = solve_scp(&scaled_fleet(&USE_RATIO_SERVERS, Some(500.0), 0.6)?)?;
    let scaled = solve_scp(&scaled_fleet(&USE_RATIO_SERVERS, None, 0.6)?)?;
    for (i, &m) in USE_RATIO_SERVERS.iter().enumerate() {
        let a = constant.decisions[i].active_servers;
        let b = scaled.decisions[i].active_servers;
        let mf = f64::from(m);
        r.push(vec![
            i.to_string(),
            m.to_string(),
            format!("{a:.2}"),
            format!("{:.4}", a / mf),
            format!("{b:.2}"),
            format!("{:.4}", b / mf),
        ]);
    }
    Ok(r)
}

/// Savings of one policy over another on a set of chains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SavingsSummary {
    pub baseline: Policy,
    pub treatment: Policy,
    /// Percentage monetary saving per chain.
    pub per_chain: Vec<f64>,
    pub mean_pct: f64,
}

/// Percentage monetary saving of `treatment` over `baseline`, simulating
/// every chain with both.
pub fn savings_experiment(
    baseline: Policy,
    treatment: Policy,
    chains: &[SlotChain],
    opts: &SimulationOptions,
) -> Result<SavingsSummary> {
    if chains.is_empty() {
        return Err(Error::config("savings experiment needs at least one chain"));
    }
    let mut per_chain = Vec::new();
    for c in chains {
        let b = simulate(c, &SimulationOptions { policy: baseline, ..opts.clone() })?;
        let t = simulate(c, &SimulationOptions { policy: treatment, ..opts.clone() })?;
        per_chain.push(100.0 * (b.monetary_cost - t.monetary_cost) / b.monetary_cost);
    }
    let mean_pct = per_chain.iter().sum::<f64>() / per_chain.len() as f64;
    Ok(SavingsSummary { baseline, treatment, per_chain, mean_pct })
}

/// Grid of the savings report.
#[derive(Debug, Clone, PartialEq)]
pub struct SavingsGrid {
    pub dcs: Vec<usize>,
    pub load_fractions: Vec<f64>,
    pub spreads: Vec<f64>,
    pub seeds: Vec<u64>,
    pub slots: usize,
}

impl Default for SavingsGrid {
    fn default() -> Self {
        Self {
            dcs: vec![2, 4, 6],
            load_fractions: vec![0.3, 0.6, 0.9],
            spreads: vec![1.0, 1.5],
            seeds: (0..3).collect(),
            slots: 24,
        }
    }
}

pub fn savings_report(grid: &SavingsGrid) -> Result<Report> {
    let mut r =
        Report::new("savings", &["dcs", "load_fraction", "price_spread", "policy", "monetary_cost", "phi", "savings_pct"]);
    r.notes.push(
        "baseline: load split in proportion to capacity, fewest servers meeting the delay bound, idle batteries, optimal purchase split"
            .into(),
    );
    r.notes.push(format!("{} slots per run, monetary cost summed over seeds {:?}", grid.slots, grid.seeds));
    for &n in &grid.dcs {
        for &lf in &grid.load_fractions {
            for &spread in &grid.spreads {
                let chains: Vec<SlotChain> = grid
                    .seeds
                    .iter()
                    .map(|&seed| {
                        let mut cfg = GeneratorConfig { slots: grid.slots, ..GeneratorConfig::new(seed, n) };
                        cfg.ranges.load_fraction = lf;
                        cfg.ranges.price_spread = spread;
                        generate(&cfg)
                    })
                    .collect::<Result<_>>()?;
                let mut totals = Vec::new();
                for p in Policy::ALL {
                    let (mut money, mut phi) = (0.0, 0.0);
                    for c in &chains {
                        let s = simulate(c, &SimulationOptions { policy: p, ..Default::default() })?;
                        money += s.monetary_cost;
                        phi += s.objective;
                    }
                    totals.push((p, money, phi));
                }
                let base = totals[0].1;
                for (p, money, phi) in totals {
                    r.push(vec![
                        n.to_string(),
                        format!("{lf}"),
                        format!("{spread}"),
                        p.name().into(),
                        f(money),
                        f(phi),
                        format!("{:.3}", 100.0 * (base - money) / base),
                    ]);
                }
            }
        }
    }
    Ok(r)
}

/// Clean share of the purchase of a 1 MW data center as demand grows.
pub fn clean_fraction_report() -> Result<Report> {
    let mut r = Report::new(
        "clean-fraction",
        &["demand_kwh", "clean_fraction_distinct", "unit_cost_distinct", "clean_fraction_identical", "unit_cost_identical"],
    );
    r.notes.push("prices 0.08/0.11/0.14 (distinct) or 0.11 (identical); pollution factors 0.5/0.4/0.3".into());
    let mk = |prices: [f64; 3]| -> Result<Vec<PowerSource>> {
        prices.iter().zip([0.5, 0.4, 0.3]).map(|(&p, g)| PowerSource::with_power_factor(p, g, 1000.0)).collect()
    };
    let distinct = mk([0.08, 0.11, 0.14])?;
    let identical = mk([0.11; 3])?;
    for k in 1..=20 {
        let q = 50.0 * f64::from(k);
        let a = allocate(&distinct, q)?;
        let b = allocate(&identical, q)?;
        let clean = |p: &[f64]| (p[1] + p[2]) / q;
        r.push(vec![
            format!("{q}"),
            format!("{:.6}", clean(&a.purchases)),
            format!("{:.6}", a.unit_cost),
            format!("{:.6}", clean(&b.purchases)),
            format!("{:.6}", b.unit_cost),
        ]);
    }
    Ok(r)
}
