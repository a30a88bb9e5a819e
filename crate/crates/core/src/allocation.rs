//! Cheapest split of a data center's purchase across its power sources.
//!
//! Minimizes `Σ (a_n q_n² + p_n q_n)` subject to `Σ q_n = demand`, `q ≥ 0`.
//! On a fixed set of sources the Lagrange solution is closed form; sources
//! whose closed-form purchase is negative are clamped to zero and the split
//! is recomputed over the rest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PowerSource;

/// Purchases below this are treated as negative and clamped.
pub const NEGATIVE_TOL_KWH: f64 = -1e-12;

/// Sums over the active sources: `X = Σ 1/a`, `Y = Σ p/a`, `Z = Σ p²/a`,
/// `W = (Y² − X Z)/4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangeAggregates {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl LagrangeAggregates {
    /// Aggregates over the sources with `active[n] == true`.
    pub fn over(sources: &[PowerSource], active: &[bool]) -> Result<Self> {
        let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
        let mut any = false;
        for (s, &on) in sources.iter().zip(active) {
            if on {
                any = true;
                x += 1.0 / s.pif_coeff;
                y += s.price / s.pif_coeff;
                z += s.price * s.price / s.pif_coeff;
            }
        }
        if !any {
            return Err(Error::config("no active power source"));
        }
        Ok(Self { x, y, z, w: 0.25 * (y * y - x * z) })
    }

    pub fn all(sources: &[PowerSource]) -> Result<Self> {
        Self::over(sources, &vec![true; sources.len()])
    }

    /// Common marginal cost `(2 demand + Y)/X` of the unclamped split.
    pub fn marginal(&self, demand_kwh: f64) -> f64 {
        (2.0 * demand_kwh + self.y) / self.x
    }

    /// Optimal cost `(demand² + Y demand + W)/X` on this active set.
    pub fn cost(&self, demand_kwh: f64) -> f64 {
        (demand_kwh * demand_kwh + self.y * demand_kwh + self.w) / self.x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub purchases: Vec<f64>,
    /// `v*`, the common marginal cost of the purchasing sources.
    pub marginal_cost: f64,
    pub unit_cost: f64,
    pub total_cost: f64,
    /// Sources forced to zero, ascending.
    pub clamped: Vec<usize>,
    pub iterations: usize,
    /// `v*` after each clamping round.
    pub marginal_history: Vec<f64>,
}

impl AllocationResult {
    pub fn active_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.purchases.len()];
        for &n in &self.clamped {
            mask[n] = false;
        }
        mask
    }

    pub fn total_purchase(&self) -> f64 {
        self.purchases.iter().sum()
    }
}

/// Unclamped closed-form split over all sources; entries may be negative.
pub fn lagrange_split(sources: &[PowerSource], demand_kwh: f64) -> (Vec<f64>, f64) {
    let agg = LagrangeAggregates::all(sources).expect("lagrange_split needs at least one source");
    let v = agg.marginal(demand_kwh);
    (split_at(sources, &vec![true; sources.len()], v), v)
}

/// `q_n = (v − p_n)/(2 a_n)` on active sources, zero elsewhere.
pub fn split_at(sources: &[PowerSource], active: &[bool], marginal: f64) -> Vec<f64> {
    sources.iter().zip(active).map(|(s, &on)| if on { (marginal - s.price) / (2.0 * s.pif_coeff) } else { 0.0 }).collect()
}

/// Optimal nonnegative split of `demand_kwh`.
pub fn allocate(sources: &[PowerSource], demand_kwh: f64) -> Result<AllocationResult> {
    if sources.is_empty() {
        return Err(Error::config("allocation needs at least one power source"));
    }
    if !(demand_kwh >= 0.0 && demand_kwh.is_finite()) {
        return Err(Error::domain(format!("demand must be finite and >= 0, got {demand_kwh}")));
    }
    if demand_kwh == 0.0 {
        let cheapest = sources.iter().map(|s| s.price).fold(f64::INFINITY, f64::min);
        let clamped = (0..sources.len()).filter(|&n| sources[n].price > cheapest).collect();
        return Ok(AllocationResult {
            purchases: vec![0.0; sources.len()],
            marginal_cost: cheapest,
            unit_cost: 0.0,
            total_cost: 0.0,
            clamped,
            iterations: 0,
            marginal_history: Vec::new(),
        });
    }

    let mut active = vec![true; sources.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let agg = LagrangeAggregates::over(sources, &active)?;
        let v = agg.marginal(demand_kwh);
        history.push(v);
        let mut q = split_at(sources, &active, v);
        let mut changed = false;
        for (n, qn) in q.iter().enumerate() {
            if active[n] && *qn < NEGATIVE_TOL_KWH {
                active[n] = false;
                changed = true;
            }
        }
        if !changed {
            for qn in q.iter_mut() {
                *qn = qn.max(0.0);
            }
            let total_cost: f64 = sources.iter().zip(&q).map(|(s, &qn)| s.cost(qn)).sum();
            let clamped = (0..sources.len()).filter(|&n| !active[n]).collect();
            return Ok(AllocationResult {
                purchases: q,
                marginal_cost: v,
                unit_cost: crate::model::unit_cost(total_cost, demand_kwh),
                total_cost,
                clamped,
                iterations,
                marginal_history: history,
            });
        }
        if iterations > sources.len() {
            return Err(Error::Internal("allocation failed to settle its active set".into()));
        }
    }
}

/// Closed-form optimal cost on a fixed active set.
pub fn optimal_cost_closed_form(aggregates: &LagrangeAggregates, demand_kwh: f64) -> f64 {
    aggregates.cost(demand_kwh)
}
