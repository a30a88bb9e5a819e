//! Whole server counts: the two-solve rounding heuristic and a best-first
//! branch and bound over the relaxation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Decision, Scenario};
use crate::scp::{solve_scp_with, DcTerms, RelaxedSolution, SolveOptions};

/// Rounding residuals below this are treated as exact integers.
const SNAP_TOL: f64 = 1e-9;
/// Distance from an integer below which a relaxed count counts as integral.
const INTEGRAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Heuristic,
    BranchAndBound,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegerSolution {
    pub decisions: Vec<Decision>,
    pub terms: Vec<DcTerms>,
    pub objective: f64,
    pub relaxed_objective: f64,
    /// `objective − relaxed_objective`.
    pub gap_vs_relaxed: f64,
    pub scp_calls: usize,
    pub method: Method,
    /// Explored branch-and-bound nodes; zero for the heuristic.
    pub nodes: usize,
    /// Relative distance between the incumbent and the best open bound.
    pub bound_gap: f64,
    /// Whether the capacity fallback had to add servers.
    pub fallback_used: bool,
    pub warnings: Vec<String>,
}

impl IntegerSolution {
    pub fn servers(&self) -> Vec<f64> {
        self.decisions.iter().map(|d| d.active_servers).collect()
    }

    pub fn total_power_cost(&self) -> f64 {
        self.terms.iter().map(|t| t.power_cost).sum()
    }

    pub fn mean_queue_delay(&self) -> f64 {
        self.terms.iter().map(|t| t.queue_delay_s).sum::<f64>() / self.terms.len() as f64
    }
}

/// Thresholds of the four corrections applied after rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundingThresholds {
    pub omega: [f64; 4],
}

impl Default for RoundingThresholds {
    fn default() -> Self {
        Self { omega: [0.0; 4] }
    }
}

/// Per-DC bounds `[m_lo, M]` a whole server count must respect, and whether
/// the aggregate capacity constraint applies.
struct Capacity {
    lo: Vec<f64>,
    hi: Vec<f64>,
    floors: Vec<f64>,
    rates: Vec<f64>,
    load: Option<f64>,
}

impl Capacity {
    fn new(scenario: &Scenario, opts: &SolveOptions) -> Result<Self> {
        let n = scenario.dc_count();
        let mut c = Capacity { lo: vec![], hi: vec![], floors: vec![], rates: vec![], load: None };
        for i in 0..n {
            let dc = &scenario.datacenters[i];
            let floor = scenario.delay_budget(i)?.capacity_floor()?;
            let fixed = opts.fixed_dispatch.as_ref().map_or(0.0, |v| v[i]);
            let (blo, bhi) = opts.server_bounds.as_ref().map_or((1.0, dc.max_servers()), |b| b[i]);
            let need = ((fixed + floor) / dc.service_rate_per_server - 1e-9).ceil();
            c.lo.push(need.max(blo.ceil()).max(1.0));
            c.hi.push(bhi.floor().min(dc.max_servers()));
            c.floors.push(floor);
            c.rates.push(dc.service_rate_per_server);
        }
        if opts.fixed_dispatch.is_none() {
            c.load = Some(scenario.total_load);
        }
        Ok(c)
    }

    fn shortfall(&self, m: &[f64]) -> f64 {
        let Some(load) = self.load else { return 0.0 };
        let cap: f64 = (0..m.len()).map(|i| m[i] * self.rates[i] - self.floors[i]).sum();
        load - cap - 1e-9 * load.max(1.0)
    }

    fn feasible(&self, m: &[f64]) -> bool {
        m.iter().enumerate().all(|(i, &v)| v >= self.lo[i] && v <= self.hi[i]) && self.shortfall(m) <= 0.0
    }
}

/// Rounds the relaxed server counts, corrects the capacity, and re-solves
/// with the counts fixed.
pub fn round_heuristic(scenario: &Scenario, relaxed: &RelaxedSolution) -> Result<IntegerSolution> {
    round_heuristic_with(scenario, relaxed, &SolveOptions::default(), &RoundingThresholds::default())
}

pub fn round_heuristic_with(
    scenario: &Scenario,
    relaxed: &RelaxedSolution,
    opts: &SolveOptions,
    thresholds: &RoundingThresholds,
) -> Result<IntegerSolution> {
    let [w1, w2, w3, w4] = thresholds.omega;
    let n = scenario.dc_count();
    let m_ac = relaxed.servers();
    let rates: Vec<f64> = scenario.datacenters.iter().map(|d| d.service_rate_per_server).collect();
    let mut m_int: Vec<f64> = m_ac.iter().map(|m| m.round()).collect();

    let gap1: f64 = (0..n).map(|i| (m_int[i] - m_ac[i]) * rates[i]).sum();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = m_int[i] - m_ac[i];
            if v.abs() < SNAP_TOL {
                0.0
            } else {
                v
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));

    let mut num1 = 0;
    if gap1 < w1 {
        let u_bar = rates.iter().sum::<f64>() / n as f64;
        let cap: f64 = (0..n).map(|i| m_ac[i] * rates[i]).sum();
        num1 = ((cap - scenario.total_load).abs() / u_bar).ceil() as usize;
        for &k in order.iter().take(num1) {
            if d[k] < w2 {
                m_int[k] += 1.0;
            }
        }
    }
    let gap2: f64 = (0..n).map(|i| m_int[i] - m_ac[i]).sum();
    let num2 = gap2.abs().round() as usize;
    if gap2 < w3 {
        for &k in order.iter().skip(num1).take(num2) {
            m_int[k] += 1.0;
        }
    }
    if gap2 > w4 {
        for &k in order.iter().rev().take(num2) {
            m_int[k] -= 1.0;
        }
    }
    for m in &mut m_int {
        if *m <= 0.0 {
            *m += 1.0;
        }
    }

    let cap = Capacity::new(scenario, opts)?;
    let mut warnings = Vec::new();
    for i in 0..n {
        if m_int[i] > cap.hi[i] {
            m_int[i] = cap.hi[i];
        }
    }
    let fallback_used = !cap.feasible(&m_int);
    if fallback_used {
        repair(&cap, relaxed, scenario, &mut m_int)?;
        warnings.push(format!("rounded server counts needed the capacity fallback: {m_int:?}"));
        log::info!("rounding fallback raised server counts to {m_int:?}");
    }

    let fixed = solve_scp_with(scenario, &opts.with_servers(&m_int))?;
    warnings.extend(fixed.warnings.iter().cloned());
    Ok(IntegerSolution {
        gap_vs_relaxed: fixed.objective - relaxed.objective,
        relaxed_objective: relaxed.objective,
        decisions: fixed.decisions,
        terms: fixed.terms,
        objective: fixed.objective,
        scp_calls: 2,
        method: Method::Heuristic,
        nodes: 0,
        bound_gap: 0.0,
        fallback_used,
        warnings,
    })
}

/// Adds servers where capacity is cheapest until every constraint holds.
fn repair(cap: &Capacity, relaxed: &RelaxedSolution, scenario: &Scenario, m: &mut [f64]) -> Result<()> {
    for i in 0..m.len() {
        m[i] = m[i].max(cap.lo[i]);
        if m[i] > cap.hi[i] {
            return Err(Error::infeasible(format!("dc {i}: no whole server count fits the delay bound")));
        }
    }
    let price: Vec<f64> = (0..m.len())
        .map(|i| {
            let dc = &scenario.datacenters[i];
            let v = relaxed.allocations.get(i).map_or(dc.sources[0].price, |a| a.marginal_cost);
            v * scenario.slot_hours * dc.server_power_kw / dc.service_rate_per_server
        })
        .collect();
    while cap.shortfall(m) > 0.0 {
        let best = (0..m.len())
            .filter(|&i| m[i] + 1.0 <= cap.hi[i])
            .min_by(|&a, &b| price[a].total_cmp(&price[b]).then(a.cmp(&b)))
            .ok_or_else(|| Error::infeasible("aggregate capacity cannot cover the load with whole servers"))?;
        m[best] += 1.0;
    }
    Ok(())
}

/// Relaxed solve followed by [`round_heuristic_with`].
pub fn solve_heuristic(scenario: &Scenario) -> Result<IntegerSolution> {
    solve_heuristic_with(scenario, &SolveOptions::default())
}

pub fn solve_heuristic_with(scenario: &Scenario, opts: &SolveOptions) -> Result<IntegerSolution> {
    let relaxed = solve_scp_with(scenario, opts)?;
    round_heuristic_with(scenario, &relaxed, opts, &RoundingThresholds::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbOptions {
    /// Relative optimality gap at which a node is pruned.
    pub gap_tol: f64,
    pub node_limit: usize,
    /// Allow more than [`MAX_BB_DCS`] data centers.
    pub force: bool,
    pub solve: SolveOptions,
}

impl Default for BbOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-6, node_limit: 20_000, force: false, solve: SolveOptions::default() }
    }
}

/// Largest fleet branch and bound accepts without `force`.
pub const MAX_BB_DCS: usize = 8;

struct Node {
    bound: f64,
    seq: usize,
    bounds: Vec<(f64, f64)>,
    relaxed: RelaxedSolution,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    // smallest bound first, then oldest
    fn cmp(&self, o: &Self) -> Ordering {
        o.bound.total_cmp(&self.bound).then(o.seq.cmp(&self.seq))
    }
}

fn most_fractional(m: &[f64]) -> Option<usize> {
    m.iter()
        .enumerate()
        .map(|(i, &v)| (i, (v - v.floor()).min(v.ceil() - v)))
        .filter(|&(_, f)| f > INTEGRAL_TOL)
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
}

fn prunable(bound: f64, incumbent: f64, gap_tol: f64) -> bool {
    bound >= incumbent - gap_tol * incumbent.abs()
}

/// Best-first branch and bound on the server counts with the relaxed
/// problem at every node. Seeded with the heuristic's solution.
pub fn branch_and_bound(scenario: &Scenario, opts: &BbOptions) -> Result<IntegerSolution> {
    let n = scenario.dc_count();
    if n > MAX_BB_DCS && !opts.force {
        return Err(Error::config(format!(
            "branch and bound refuses {n} data centers (limit {MAX_BB_DCS}); pass force to override"
        )));
    }
    if !(opts.gap_tol >= 0.0) || opts.node_limit == 0 {
        return Err(Error::config("gap_tol must be >= 0 and node_limit >= 1"));
    }
    let cap = Capacity::new(scenario, &opts.solve)?;
    let root_bounds: Vec<(f64, f64)> = (0..n).map(|i| (cap.lo[i], cap.hi[i])).collect();
    if root_bounds.iter().any(|&(lo, hi)| lo > hi) {
        return Err(Error::infeasible("some data center cannot meet its delay bound with whole servers"));
    }
    let root_opts = SolveOptions { server_bounds: Some(root_bounds.clone()), ..opts.solve.clone() };
    let root = solve_scp_with(scenario, &root_opts)?;
    let mut calls = 1;
    let relaxed_objective = root.objective;

    let mut best = round_heuristic_with(scenario, &root, &opts.solve, &RoundingThresholds::default())?;
    calls += 1;
    let mut warnings = std::mem::take(&mut best.warnings);

    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    heap.push(Node { bound: root.objective, seq, bounds: root_bounds, relaxed: root });
    let mut nodes = 0;
    let mut open_bound = f64::INFINITY;

    while let Some(node) = heap.pop() {
        if prunable(node.bound, best.objective, opts.gap_tol) {
            // every remaining node has a bound at least this large
            heap.clear();
            break;
        }
        if nodes >= opts.node_limit {
            open_bound = node.bound;
            warnings.push(format!("node budget of {} exhausted", opts.node_limit));
            break;
        }
        nodes += 1;
        let m = node.relaxed.servers();
        match most_fractional(&m) {
            None => {
                let whole: Vec<f64> = m.iter().map(|v| v.round()).collect();
                let sol = solve_scp_with(scenario, &opts.solve.with_servers(&whole));
                calls += 1;
                if let Ok(sol) = sol {
                    if sol.objective < best.objective {
                        best.decisions = sol.decisions;
                        best.terms = sol.terms;
                        best.objective = sol.objective;
                        best.fallback_used = false;
                    }
                }
            }
            Some(k) => {
                let v = m[k];
                let (lo, hi) = node.bounds[k];
                for (clo, chi) in [(lo, v.floor()), (v.ceil(), hi)] {
                    if clo > chi {
                        continue;
                    }
                    let mut b = node.bounds.clone();
                    b[k] = (clo, chi);
                    let child = SolveOptions { server_bounds: Some(b.clone()), ..opts.solve.clone() };
                    calls += 1;
                    match solve_scp_with(scenario, &child) {
                        Ok(r) => {
                            if !prunable(r.objective, best.objective, opts.gap_tol) {
                                seq += 1;
                                heap.push(Node { bound: r.objective, seq, bounds: b, relaxed: r });
                            }
                        }
                        Err(Error::Infeasible(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    let bound = heap.iter().map(|n| n.bound).fold(open_bound, f64::min).min(best.objective);
    let bound_gap = if best.objective != 0.0 { (best.objective - bound) / best.objective.abs() } else { 0.0 };
    Ok(IntegerSolution {
        gap_vs_relaxed: best.objective - relaxed_objective,
        relaxed_objective,
        decisions: best.decisions,
        terms: best.terms,
        objective: best.objective,
        scp_calls: calls,
        method: Method::BranchAndBound,
        nodes: nodes.max(1),
        bound_gap: bound_gap.max(0.0),
        fallback_used: best.fallback_used,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn most_fractional_picks_closest_to_half() {
        assert_eq!(most_fractional(&[1.0, 2.5, 3.9]), Some(1));
        assert_eq!(most_fractional(&[1.0, 2.0 + 1e-8]), None);
        assert_eq!(most_fractional(&[1.3, 2.7]), Some(0));
    }

    #[test]
    fn nodes_pop_in_bound_order() {
        let dummy = |bound: f64, seq: usize| Node {
            bound,
            seq,
            bounds: vec![],
            relaxed: RelaxedSolution {
                decisions: vec![],
                allocations: vec![],
                objective: bound,
                model_objective: bound,
                terms: vec![],
                kkt_residual: 0.0,
                dual_price: None,
                outer_iterations: 0,
                inner_solve_count: 0,
                objective_history: vec![],
                warnings: vec![],
            },
        };
        let mut h = BinaryHeap::new();
        h.push(dummy(3.0, 0));
        h.push(dummy(1.0, 1));
        h.push(dummy(1.0, 2));
        h.push(dummy(2.0, 3));
        let order: Vec<usize> = std::iter::from_fn(|| h.pop().map(|n| n.seq)).collect();
        assert_eq!(order, vec![1, 2, 3, 0]);
    }
}
