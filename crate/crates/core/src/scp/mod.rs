//! The continuous joint problem: convexity certificate, inner convex solves
//! and the outer loop that settles which power sources each data center
//! buys from.

pub mod derivatives;
pub mod p1;

use serde::{Deserialize, Serialize};

use crate::allocation::{allocate, split_at, AllocationResult, LagrangeAggregates, NEGATIVE_TOL_KWH};
use crate::battery::{EfficiencyCurve, GridMap};
use crate::error::{Error, Result};
use crate::model::{Decision, Scenario};
use crate::queueing::{queue_delay, QUEUE_DELAY_WARNING_S};

pub use p1::{solve_p1, DcPoint, DeltaState, P1Solution};

/// Slack below zero tolerated when checking the curvature certificate.
const CERTIFICATE_TOL: f64 = 1e-12;

/// Result of checking that `g(Δ) = η′(δ) Δ` is convex on the curve domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityCertificate {
    pub holds: bool,
    /// Minimum of `12 a δ² + 6 b δ + 2 c` over the domain.
    pub min_value: f64,
    pub argmin_delta: f64,
}

/// Minimizes `2 η′_δ + δ η′_δδ` over the curve domain.
///
/// The quadratic is proportional to `d²(η′Δ)/dΔ²`, so a non-negative
/// minimum makes the battery term convex. Values down to `-1e-12` count as
/// zero so that fitted constant curves are accepted.
pub fn check_convexity_condition(curve: &EfficiencyCurve) -> ConvexityCertificate {
    let (lo, hi) = curve.domain();
    let [a, b, _, _] = curve.coefficients();
    let mut cands = vec![lo, hi];
    if a != 0.0 {
        let vertex = -b / (4.0 * a);
        if vertex > lo && vertex < hi {
            cands.push(vertex);
        }
    }
    let (argmin_delta, min_value) = cands
        .into_iter()
        .map(|d| (d, curve.certificate_poly(d)))
        .fold((lo, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
    ConvexityCertificate { holds: min_value >= -CERTIFICATE_TOL, min_value, argmin_delta }
}

/// Restrictions layered on top of the scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Pin every battery action to zero.
    pub disable_battery: bool,
    /// Per-DC arrival rates held fixed instead of optimized.
    pub fixed_dispatch: Option<Vec<f64>>,
    /// Per-DC `[lo, hi]` limits on the active-server count.
    pub server_bounds: Option<Vec<(f64, f64)>>,
}

impl SolveOptions {
    pub fn check(&self, dcs: usize) -> Result<()> {
        if let Some(v) = &self.fixed_dispatch {
            if v.len() != dcs || v.iter().any(|&l| !(l >= 0.0)) {
                return Err(Error::config("fixed dispatch needs one non-negative rate per data center"));
            }
        }
        if let Some(b) = &self.server_bounds {
            if b.len() != dcs || b.iter().any(|&(lo, hi)| !(lo <= hi)) {
                return Err(Error::config("server bounds need one ordered pair per data center"));
            }
        }
        Ok(())
    }

    /// Same options with the server counts pinned.
    pub fn with_servers(&self, m: &[f64]) -> Self {
        Self { server_bounds: Some(m.iter().map(|&v| (v, v)).collect()), ..self.clone() }
    }
}

/// Cost and delay breakdown of one data center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcTerms {
    pub queue_delay_s: f64,
    /// `θ1 D^q`.
    pub delay_term: f64,
    /// Money plus pollution index paid for power.
    pub power_cost: f64,
    pub monetary_cost: f64,
    pub pollution_cost: f64,
    /// `−ε̂ Δ`.
    pub potential_cost: f64,
    /// `θ2 (power_cost + potential_cost)`.
    pub cost_term: f64,
    pub phi: f64,
}

/// Objective of explicit decisions, with purchases re-derived by the
/// optimal split.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub terms: Vec<DcTerms>,
    pub allocations: Vec<AllocationResult>,
    pub decisions: Vec<Decision>,
}

/// Evaluates `(λ, m, Δ)` per data center. The purchase is clipped at zero
/// to absorb rounding from the zero-purchase constraint.
pub fn evaluate(scenario: &Scenario, points: &[(f64, f64, f64)]) -> Result<Evaluation> {
    let mut out = Evaluation { objective: 0.0, terms: vec![], allocations: vec![], decisions: vec![] };
    for (i, (&(lambda, m, delta), cfg)) in points.iter().zip(&scenario.datacenters).enumerate() {
        let map = GridMap::new(&cfg.battery, scenario.slot_hours);
        let need =
            crate::model::consumption_kwh(cfg, m, scenario.slot_hours).map_err(|e| Error::Internal(format!("dc {i}: {e}")))?;
        let q = (need + map.value(delta)).max(0.0);
        let alloc = allocate(&cfg.sources, q)?;
        let dq = queue_delay(m, cfg.service_rate_per_server, lambda)?;
        let monetary: f64 = cfg.sources.iter().zip(&alloc.purchases).map(|(s, q)| s.price * q).sum();
        let pollution = alloc.total_cost - monetary;
        let potential = -cfg.battery.potential_price * delta;
        let delay_term = cfg.weight_delay * dq;
        let cost_term = cfg.weight_cost * (alloc.total_cost + potential);
        let phi = delay_term + cost_term;
        out.objective += phi;
        out.terms.push(DcTerms {
            queue_delay_s: dq,
            delay_term,
            power_cost: alloc.total_cost,
            monetary_cost: monetary,
            pollution_cost: pollution,
            potential_cost: potential,
            cost_term,
            phi,
        });
        out.decisions.push(Decision {
            arrival_rate: lambda,
            active_servers: m,
            battery_delta_kwh: delta,
            purchases: alloc.purchases.clone(),
        });
        out.allocations.push(alloc);
    }
    Ok(out)
}

/// Continuous optimum of the joint problem.
#[derive(Debug, Clone, Serialize)]
pub struct RelaxedSolution {
    pub decisions: Vec<Decision>,
    #[serde(skip)]
    pub allocations: Vec<AllocationResult>,
    pub objective: f64,
    /// Convexified objective of the final inner solve.
    pub model_objective: f64,
    pub terms: Vec<DcTerms>,
    pub kkt_residual: f64,
    pub dual_price: Option<f64>,
    pub outer_iterations: usize,
    pub inner_solve_count: usize,
    /// Objective after each outer iteration.
    pub objective_history: Vec<f64>,
    pub warnings: Vec<String>,
}

impl RelaxedSolution {
    pub fn servers(&self) -> Vec<f64> {
        self.decisions.iter().map(|d| d.active_servers).collect()
    }

    pub fn total_power_cost(&self) -> f64 {
        self.terms.iter().map(|t| t.power_cost).sum()
    }

    pub fn total_monetary_cost(&self) -> f64 {
        self.terms.iter().map(|t| t.monetary_cost).sum()
    }

    pub fn mean_queue_delay(&self) -> f64 {
        self.terms.iter().map(|t| t.queue_delay_s).sum::<f64>() / self.terms.len() as f64
    }

    /// Whether the objective never rose between outer iterations.
    pub fn objective_monotone(&self) -> bool {
        self.objective_history.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
    }
}

/// Solves the continuous joint problem.
pub fn solve_scp(scenario: &Scenario) -> Result<RelaxedSolution> {
    solve_scp_with(scenario, &SolveOptions::default())
}

/// [`solve_scp`] under extra restrictions.
pub fn solve_scp_with(scenario: &Scenario, opts: &SolveOptions) -> Result<RelaxedSolution> {
    scenario.validate()?;
    let n_total: usize = scenario.datacenters.iter().map(|d| d.sources.len()).sum();
    let limit = 2 * n_total;
    let mut active: Vec<Vec<bool>> = scenario.datacenters.iter().map(|d| vec![true; d.sources.len()]).collect();
    let mut history = Vec::new();

    for iteration in 1..=limit {
        let aggs: Vec<LagrangeAggregates> = scenario
            .datacenters
            .iter()
            .zip(&active)
            .map(|(d, a)| LagrangeAggregates::over(&d.sources, a))
            .collect::<Result<_>>()?;
        let sol = solve_p1(scenario, &aggs, opts)?;
        let points: Vec<(f64, f64, f64)> = sol.points.iter().map(|p| (p.lambda, p.m, p.delta)).collect();
        let eval = evaluate(scenario, &points)?;
        history.push(eval.objective);

        let mut changed = false;
        for (i, cfg) in scenario.datacenters.iter().enumerate() {
            let md = derivatives::DcModel::new(scenario, i, aggs[i]);
            let p = &sol.points[i];
            let q = md.purchase(p.m, p.delta).max(0.0);
            let v = aggs[i].marginal(q);
            let split = split_at(&cfg.sources, &active[i], v);
            let was_clamped: Vec<bool> = active[i].iter().map(|a| !a).collect();
            let mut still_active = active[i].iter().filter(|&&a| a).count();
            for (n, &qn) in split.iter().enumerate() {
                if active[i][n] && qn < NEGATIVE_TOL_KWH && still_active > 1 {
                    active[i][n] = false;
                    still_active -= 1;
                    changed = true;
                }
            }
            for (n, s) in cfg.sources.iter().enumerate() {
                if was_clamped[n] && s.price < v - 1e-12 * v.abs() {
                    active[i][n] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            let mut warnings = Vec::new();
            if !history.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)) {
                log::debug!("objective rose between outer iterations: {history:?}");
            }
            for (i, t) in eval.terms.iter().enumerate() {
                if t.queue_delay_s > QUEUE_DELAY_WARNING_S {
                    warnings.push(format!("dc {i}: queueing delay {:.3} s exceeds 1 s", t.queue_delay_s));
                }
            }
            return Ok(RelaxedSolution {
                decisions: eval.decisions,
                allocations: eval.allocations,
                objective: eval.objective,
                model_objective: sol.objective,
                terms: eval.terms,
                kkt_residual: sol.kkt_residual,
                dual_price: sol.dual_price,
                outer_iterations: iteration,
                inner_solve_count: iteration,
                objective_history: history,
                warnings,
            });
        }
    }
    Err(Error::Internal(format!("source sets still changing after {limit} outer iterations")))
}
