//! Inner convex solve for fixed source sets.
//!
//! The data centers couple only through `Σ λ_i = L`. For a price `μ` on that
//! constraint each data center solves
//!
//! ```text
//! min  θ1/(m ū − λ) + θ2 C(m, Δ) − μ λ
//! ```
//!
//! over its own box. Writing `x = m ū − λ` separates the delay part, whose
//! minimizer is `x = √(θ1/μ)` clipped to `[F, m ū]`. What remains is a convex
//! function of `m` alone once `Δ` is eliminated by its own monotone
//! first-order condition, so `m` comes from a safeguarded Newton iteration.
//! The price itself is found by bisection on `ln μ`.
//!
//! The purchase must stay non-negative. That constraint is not convex in
//! `(m, Δ)`, but it is linear in `(m, z = g(Δ))`, where the problem is
//! convex. It is enforced exactly as `Δ ≥ ℓ(m)` with `g(ℓ(m)) = −Q^cons(m)`.

use crate::allocation::LagrangeAggregates;
use crate::battery::action_box;
use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::numeric::safeguarded_newton;

use super::derivatives::DcModel;
use super::SolveOptions;

/// Relative width at which the dual bisection stops.
const LOG_MU_TOL: f64 = 1e-15;
const MU_MIN: f64 = 1e-30;
const MU_MAX: f64 = 1e30;

/// Which constraint, if any, holds the battery action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaState {
    Lower,
    Upper,
    Interior,
    /// The purchase is zero: the battery covers the whole consumption.
    Drained,
}

/// One data center's share of an inner solve.
#[derive(Debug, Clone, Copy)]
pub struct DcPoint {
    pub lambda: f64,
    pub m: f64,
    pub delta: f64,
    pub state: DeltaState,
}

#[derive(Debug, Clone)]
pub struct P1Solution {
    pub points: Vec<DcPoint>,
    /// Price of the dispatch constraint; `None` when dispatch is fixed.
    pub dual_price: Option<f64>,
    /// Convexified objective, including the constant `W/X` terms.
    pub objective: f64,
    pub kkt_residual: f64,
}

struct Reduced {
    d1: f64,
    d2: f64,
}

pub(crate) struct DcProblem {
    pub model: DcModel,
    floor: f64,
    box_lo: f64,
    box_hi: f64,
    m_lo: f64,
    m_hi: f64,
    fixed_lambda: Option<f64>,
}

impl DcProblem {
    fn new(scenario: &Scenario, dc: usize, agg: LagrangeAggregates, opts: &SolveOptions) -> Result<Self> {
        let cfg = &scenario.datacenters[dc];
        let model = DcModel::new(scenario, dc, agg);
        let floor = scenario.delay_budget(dc)?.capacity_floor()?;
        let (box_lo, box_hi) = if opts.disable_battery { (0.0, 0.0) } else { action_box(&cfg.battery, scenario.slot_hours) };
        let (mut m_lo, m_hi) = match &opts.server_bounds {
            Some(b) => b[dc],
            None => (1.0, cfg.max_servers()),
        };
        let fixed_lambda = opts.fixed_dispatch.as_ref().map(|v| v[dc]);
        let u = cfg.service_rate_per_server;
        m_lo = m_lo.max(1.0).max((fixed_lambda.unwrap_or(0.0) + floor) / u);
        if m_lo > m_hi * (1.0 + 1e-12) {
            return Err(Error::infeasible(format!(
                "dc {dc}: at most {m_hi} servers cannot serve the dispatched load within the delay bound (need {m_lo})"
            )));
        }
        Ok(Self { model, floor, box_lo, box_hi, m_lo: m_lo.min(m_hi), m_hi, fixed_lambda })
    }

    fn u(&self) -> f64 {
        self.model.service_rate
    }

    /// Largest dispatch this data center can absorb.
    fn max_lambda(&self) -> f64 {
        self.m_hi * self.u() - self.floor
    }

    /// Lowest admissible action at `m`, and whether the zero-purchase
    /// constraint is what sets it.
    fn action_floor(&self, m: f64) -> (f64, bool) {
        let need = self.model.consumption(m);
        let map = &self.model.map;
        if need + map.value(self.box_lo) >= 0.0 {
            return (self.box_lo, false);
        }
        let tol = 1e-14 * map.scale.max(1.0);
        let guess = -need / map.slope(0.0);
        let mut d = safeguarded_newton(|d| (map.value(d) + need, map.slope(d)), self.box_lo, 0.0, guess, tol);
        // land on the side where the purchase is non-negative
        while map.value(d) + need < 0.0 {
            d += tol;
        }
        (d.min(0.0), true)
    }

    fn best_action(&self, m: f64) -> (f64, DeltaState) {
        if self.box_hi - self.box_lo <= 0.0 {
            return (self.box_lo, DeltaState::Lower);
        }
        let (lo, drained) = self.action_floor(m);
        let md = &self.model;
        let need = md.consumption(m);
        let h = |d: f64| {
            let q = need + md.map.value(d);
            let g1 = md.map.slope(d);
            let slope = 2.0 * q + md.agg.y;
            (slope / md.agg.x * g1 - md.potential_price, (2.0 * g1 * g1 + slope * md.map.curvature(d)) / md.agg.x)
        };
        if h(lo).0 >= 0.0 {
            return (lo, if drained { DeltaState::Drained } else { DeltaState::Lower });
        }
        if h(self.box_hi).0 <= 0.0 {
            return (self.box_hi, DeltaState::Upper);
        }
        let tol = 1e-13 * md.map.scale.max(1.0);
        let d = safeguarded_newton(h, lo, self.box_hi, 0.5 * (lo + self.box_hi), tol);
        (d, DeltaState::Interior)
    }

    /// Cost with the action optimized out, and its first two `m` derivatives.
    fn reduced(&self, m: f64) -> Reduced {
        let (delta, state) = self.best_action(m);
        let md = &self.model;
        let q = md.purchase(m, delta).max(0.0);
        let ts = md.consumption_slope();
        let (xa, eps) = (md.agg.x, md.potential_price);
        let g1 = md.map.slope(delta);
        let g2 = md.map.curvature(delta);
        let slope = 2.0 * q + md.agg.y;
        let (d1, d2) = match state {
            DeltaState::Drained => (eps * ts / g1, eps * ts * ts * g2 / (g1 * g1 * g1)),
            DeltaState::Interior => {
                let cmm = 2.0 * ts * ts / xa;
                let cmd = 2.0 * ts * g1 / xa;
                let cdd = (2.0 * g1 * g1 + slope * g2) / xa;
                (ts * slope / xa, (cmm - cmd * cmd / cdd).max(0.0))
            }
            DeltaState::Lower | DeltaState::Upper => (ts * slope / xa, 2.0 * ts * ts / xa),
        };
        Reduced { d1, d2 }
    }

    /// Delay part for fixed `m`: `(λ, dψ/dm, d²ψ/dm²)`.
    fn dispatch(&self, m: f64, mu: f64) -> (f64, f64, f64) {
        let u = self.u();
        let th = self.model.theta_delay;
        let cap = m * u;
        let clamped = |x: f64| (-th * u / (x * x), 2.0 * th * u * u / (x * x * x));
        if let Some(l) = self.fixed_lambda {
            let (d1, d2) = clamped(cap - l);
            return (l, d1, d2);
        }
        let s = if mu > 0.0 { (th / mu).sqrt() } else { f64::INFINITY };
        if s >= cap {
            let (d1, d2) = clamped(cap);
            (0.0, d1, d2)
        } else {
            (cap - s.max(self.floor), -mu * u, 0.0)
        }
    }

    fn respond_at(&self, m: f64, mu: f64) -> DcPoint {
        let (lambda, _, _) = self.dispatch(m, mu);
        let (delta, state) = self.best_action(m);
        DcPoint { lambda, m, delta, state }
    }

    fn respond(&self, mu: f64) -> DcPoint {
        let th2 = self.model.theta_cost;
        let dv = |m: f64| {
            let (_, p1, p2) = self.dispatch(m, mu);
            let r = self.reduced(m);
            (p1 + th2 * r.d1, p2 + th2 * r.d2)
        };
        let m = if self.m_hi - self.m_lo <= 1e-12 * self.m_hi || dv(self.m_lo).0 >= 0.0 {
            self.m_lo
        } else if dv(self.m_hi).0 <= 0.0 {
            self.m_hi
        } else {
            safeguarded_newton(dv, self.m_lo, self.m_hi, 0.5 * (self.m_lo + self.m_hi), 1e-13 * self.m_hi)
        };
        self.respond_at(m, mu)
    }

    /// Stationarity residual with multipliers fitted on the active constraints.
    fn kkt(&self, p: &DcPoint, mu: Option<f64>, load_scale: f64) -> f64 {
        let md = &self.model;
        let u = self.u();
        let grad = md.gradient(p.lambda, p.m, p.delta);
        let mut target = grad;
        if let Some(mu) = mu {
            target[0] -= mu;
        } else {
            target[0] = 0.0;
        }
        let x = p.m * u - p.lambda;
        let near = |a: f64, b: f64| (a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1.0);
        let mut cols: Vec<[f64; 3]> = Vec::new();
        if mu.is_some() {
            if near(x, self.floor) {
                cols.push([-1.0, u, 0.0]);
            }
            if p.lambda <= 1e-9 * load_scale.max(1.0) {
                cols.push([1.0, 0.0, 0.0]);
            }
        } else if near(x, self.floor) {
            cols.push([0.0, u, 0.0]);
        }
        if near(p.m, self.m_lo) {
            cols.push([0.0, 1.0, 0.0]);
        }
        if near(p.m, self.m_hi) {
            cols.push([0.0, -1.0, 0.0]);
        }
        let scale = md.map.scale.max(1.0);
        if (p.delta - self.box_lo).abs() <= 1e-9 * scale {
            cols.push([0.0, 0.0, 1.0]);
        }
        if (p.delta - self.box_hi).abs() <= 1e-9 * scale {
            cols.push([0.0, 0.0, -1.0]);
        }
        if p.state == DeltaState::Drained || md.purchase(p.m, p.delta) <= 1e-9 * md.consumption(p.m) {
            cols.push([0.0, md.consumption_slope(), md.map.slope(p.delta)]);
        }
        let norm = grad.iter().chain(mu.iter()).fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
        nonneg_fit_residual(&cols, &target) / norm
    }
}

/// `min ‖A y − b‖∞` over `y ≥ 0`, by trying every column subset.
fn nonneg_fit_residual(cols: &[[f64; 3]], b: &[f64; 3]) -> f64 {
    let inf = |r: &[f64; 3]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut best = inf(b);
    let k = cols.len();
    for mask in 1u32..(1 << k) {
        let idx: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let a = nalgebra::DMatrix::from_fn(3, idx.len(), |r, c| cols[idx[c]][r]);
        let rhs = nalgebra::DVector::from_column_slice(b);
        let Ok(y) = a.clone().svd(true, true).solve(&rhs, 1e-14) else { continue };
        if y.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let r = &a * &y - &rhs;
        best = best.min(inf(&[r[0], r[1], r[2]]));
    }
    best
}

/// Solves the convexified problem for the given per-DC source aggregates.
pub fn solve_p1(scenario: &Scenario, aggregates: &[LagrangeAggregates], opts: &SolveOptions) -> Result<P1Solution> {
    let n = scenario.dc_count();
    if aggregates.len() != n {
        return Err(Error::config("one aggregate set per data center is required"));
    }
    opts.check(n)?;
    for (i, dc) in scenario.datacenters.iter().enumerate() {
        let cert = super::check_convexity_condition(&dc.battery.efficiency);
        if !cert.holds {
            log::error!("dc {i}: efficiency curve fails the convexity certificate");
            return Err(Error::Certificate { delta: cert.argmin_delta, value: cert.min_value });
        }
    }
    let probs: Vec<DcProblem> = (0..n).map(|i| DcProblem::new(scenario, i, aggregates[i], opts)).collect::<Result<_>>()?;
    let load = scenario.total_load;

    let (points, mu) = if let Some(fixed) = &opts.fixed_dispatch {
        (probs.iter().map(|p| p.respond(0.0)).collect::<Vec<_>>(), {
            let _ = fixed;
            None
        })
    } else {
        let cap: f64 = probs.iter().map(DcProblem::max_lambda).sum();
        if load > cap * (1.0 + 1e-12) {
            return Err(Error::infeasible(format!("aggregate capacity constraint violated: Σ(M ū − F) = {cap} < L = {load}")));
        }
        dispatch_by_price(&probs, load)
    };

    let mut objective = 0.0;
    let mut kkt = 0.0f64;
    for (prob, p) in probs.iter().zip(&points) {
        objective += prob.model.phi(p.lambda, p.m, p.delta);
        kkt = kkt.max(prob.kkt(p, mu, load));
        let x = p.m * prob.u() - p.lambda;
        kkt = kkt.max((prob.floor - x).max(0.0) / prob.floor.max(1.0));
        kkt = kkt.max((-p.lambda).max(0.0) / load.max(1.0));
    }
    if opts.fixed_dispatch.is_none() && load > 0.0 {
        let total: f64 = points.iter().map(|p| p.lambda).sum();
        kkt = kkt.max((total - load).abs() / load);
    }
    Ok(P1Solution { points, dual_price: mu, objective, kkt_residual: kkt })
}

fn responses(probs: &[DcProblem], mu: f64) -> (Vec<DcPoint>, f64) {
    let pts: Vec<DcPoint> = probs.iter().map(|p| p.respond(mu)).collect();
    let total = pts.iter().map(|p| p.lambda).sum();
    (pts, total)
}

/// Finds the dispatch price that balances `Σ λ_i = load`.
fn dispatch_by_price(probs: &[DcProblem], load: f64) -> (Vec<DcPoint>, Option<f64>) {
    if load <= 0.0 {
        let (mut pts, _) = responses(probs, 0.0);
        for p in &mut pts {
            p.lambda = 0.0;
        }
        return (pts, Some(0.0));
    }
    let tol = 1e-13 * load;
    let start = probs.iter().map(|p| p.model.theta_delay / (p.floor * p.floor).max(1e-12)).fold(0.0, f64::max).clamp(1e-12, 1e12);
    let (mut lo, mut hi) = (start, start);
    let (mut lo_r, mut hi_r) = (responses(probs, lo), responses(probs, hi));
    while lo_r.1 > load && lo > MU_MIN {
        lo /= 10.0;
        lo_r = responses(probs, lo);
    }
    while hi_r.1 < load && hi < MU_MAX {
        hi *= 10.0;
        hi_r = responses(probs, hi);
    }
    if (lo_r.1 - load).abs() <= tol {
        return (lo_r.0, Some(lo));
    }
    if (hi_r.1 - load).abs() <= tol {
        return (hi_r.0, Some(hi));
    }
    for _ in 0..400 {
        if (hi / lo).ln() <= LOG_MU_TOL {
            break;
        }
        let mid = (lo * hi).sqrt();
        let r = responses(probs, mid);
        if (r.1 - load).abs() <= tol {
            return (r.0, Some(mid));
        }
        if r.1 < load {
            lo = mid;
            lo_r = r;
        } else {
            hi = mid;
            hi_r = r;
        }
    }
    // blend the two bracketing responses so the dispatch sums exactly
    let t = ((load - lo_r.1) / (hi_r.1 - lo_r.1)).clamp(0.0, 1.0);
    let mu = (lo * hi).sqrt();
    let pts = probs
        .iter()
        .zip(lo_r.0.iter().zip(&hi_r.0))
        .map(|(prob, (a, b))| {
            let m = a.m + t * (b.m - a.m);
            let (delta, state) = prob.best_action(m);
            DcPoint { lambda: a.lambda + t * (b.lambda - a.lambda), m, delta, state }
        })
        .collect();
    (pts, Some(mu))
}
