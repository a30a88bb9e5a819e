//! Brute-force reference minimizers for small instances.
//!
//! Everything here is built from the plain cost formulas in `model`,
//! `battery` and `queueing`; the solver modules are never called. Searches
//! are deterministic grids refined by zooming around the best point. Every
//! one-dimensional search is over a unimodal function, so after a zoom the
//! window still contains the minimizer.

use rayon::prelude::*;
use serde::Serialize;

use crate::battery::{effective_grid_power, feasible_delta_range};
use crate::error::{Error, Result};
use crate::model::{consumption_kwh, DataCenterConfig, PowerSource, Scenario};
use crate::queueing::queue_delay;

/// Largest source count the allocation oracle accepts.
pub const MAX_ORACLE_SOURCES: usize = 4;
/// Largest fleet the joint oracle accepts.
pub const MAX_ORACLE_DCS: usize = 3;
/// Largest per-DC source count the joint oracle accepts.
pub const MAX_JOINT_SOURCES: usize = 3;

/// Points per axis of the first allocation level, by source count.
const ALLOCATION_COARSE: [usize; 5] = [0, 1, 5000, 1500, 120];
/// Points per axis of each allocation zoom level.
const ALLOCATION_FINE: usize = 41;
const ALLOCATION_LEVELS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub best_value: f64,
    /// Purchases for the allocation oracle; `(λ, m, Δ)` per data center,
    /// flattened, for the joint oracle.
    pub best_point: Vec<f64>,
    /// Spacing of the finest grid, relative to the first grid.
    pub grid_resolution: f64,
    pub evaluations: u64,
}

impl OracleReport {
    /// `(λ, m, Δ)` triples of a joint report.
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        self.best_point.chunks(3).map(|c| (c[0], c[1], c[2])).collect()
    }
}

/// Minimum of `Σ (a q² + p q)` over `Σ q = demand`, `q ≥ 0` by simplex grid
/// search. The first grid has `grid_steps` intervals per axis (fewer for
/// four sources), then zoom levels shrink the window around the incumbent
/// until the spacing is far below `demand / grid_steps`.
pub fn allocation_oracle(sources: &[PowerSource], demand: f64, grid_steps: usize) -> Result<OracleReport> {
    let n = sources.len();
    if n == 0 {
        return Err(Error::config("allocation oracle needs at least one source"));
    }
    if n > MAX_ORACLE_SOURCES {
        return Err(Error::config(format!("allocation oracle refuses {n} > {MAX_ORACLE_SOURCES} sources")));
    }
    if !(1..=5000).contains(&grid_steps) {
        return Err(Error::config("grid_steps must lie in 1..=5000"));
    }
    if !(demand >= 0.0 && demand.is_finite()) {
        return Err(Error::domain("demand must be finite and >= 0"));
    }
    let cost = |q: &[f64]| -> f64 { sources.iter().zip(q).map(|(s, &x)| s.cost(x)).sum() };
    if demand == 0.0 || n == 1 {
        let mut q = vec![0.0; n];
        q[0] = demand;
        return Ok(OracleReport { best_value: cost(&q), best_point: q, grid_resolution: 0.0, evaluations: 1 });
    }

    let dims = n - 1;
    let coarse = grid_steps.min(ALLOCATION_COARSE[n]);
    let mut lo = vec![0.0; dims];
    let mut hi = vec![demand; dims];
    let mut steps = coarse;
    let mut best = (f64::INFINITY, vec![0.0; n]);
    let mut evaluations = 0u64;
    let mut h = demand / steps as f64;
    let target = demand / grid_steps as f64 * 1e-3;
    for level in 0..ALLOCATION_LEVELS {
        h = (0..dims).map(|k| (hi[k] - lo[k]) / steps as f64).fold(0.0, f64::max);
        let mut idx = vec![0usize; dims];
        let mut q = vec![0.0; n];
        loop {
            let mut used = 0.0;
            for k in 0..dims {
                q[k] = (lo[k] + idx[k] as f64 * (hi[k] - lo[k]) / steps as f64).min(demand);
                used += q[k];
            }
            let rest = demand - used;
            if rest >= -1e-12 * demand {
                q[dims] = rest.max(0.0);
                evaluations += 1;
                let v = cost(&q);
                if v < best.0 {
                    best = (v, q.clone());
                }
            }
            // odometer over the grid
            let mut k = 0;
            while k < dims {
                idx[k] += 1;
                if idx[k] <= steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == dims {
                break;
            }
        }
        if level + 1 == ALLOCATION_LEVELS || h <= target {
            break;
        }
        steps = ALLOCATION_FINE - 1;
        for k in 0..dims {
            let w = 4.0 * h;
            lo[k] = (best.1[k] - w).max(0.0);
            hi[k] = (best.1[k] + w).min(demand);
        }
    }
    Ok(OracleReport { best_value: best.0, best_point: best.1, grid_resolution: h / (demand / coarse as f64), evaluations })
}

/// Cheapest purchase of `q` kWh by water-filling sources in price order.
fn purchase_cost(sorted: &[PowerSource], q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let (mut x, mut y) = (0.0, 0.0);
    for k in 0..sorted.len() {
        x += 1.0 / sorted[k].pif_coeff;
        y += sorted[k].price / sorted[k].pif_coeff;
        let level = (2.0 * q + y) / x;
        if k + 1 == sorted.len() || level <= sorted[k + 1].price {
            return sorted[..=k].iter().map(|s| s.cost((level - s.price) / (2.0 * s.pif_coeff))).sum();
        }
    }
    unreachable!("loop returns on the last source")
}

/// Grid density and server-count mode of the joint oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointOracleOptions {
    /// Grid points per one-dimensional search level.
    pub points: usize,
    /// Zoom levels per one-dimensional search.
    pub levels: usize,
    /// Enumerate integer server counts instead of searching a continuum.
    pub integer_servers: bool,
}

impl Default for JointOracleOptions {
    fn default() -> Self {
        Self { points: 9, levels: 9, integer_servers: false }
    }
}

struct Dc<'a> {
    cfg: &'a DataCenterConfig,
    sorted: Vec<PowerSource>,
    floor: f64,
    slot_hours: f64,
}

impl Dc<'_> {
    fn cap(&self) -> f64 {
        self.cfg.max_capacity() - self.floor
    }

    fn value(&self, lambda: f64, m: f64, delta: f64) -> f64 {
        let c = self.cfg;
        let Ok(dq) = queue_delay(m, c.service_rate_per_server, lambda) else { return f64::INFINITY };
        if m * c.service_rate_per_server - lambda < self.floor * (1.0 - 1e-12) {
            return f64::INFINITY;
        }
        let Ok(need) = consumption_kwh(c, m, self.slot_hours) else { return f64::INFINITY };
        let Ok(bat) = effective_grid_power(&c.battery.efficiency, delta, c.battery.capacity_kwh, self.slot_hours) else {
            return f64::INFINITY;
        };
        let q = need + bat;
        if q < -1e-9 * need {
            return f64::INFINITY;
        }
        c.weight_delay * dq + c.weight_cost * (purchase_cost(&self.sorted, q) - c.battery.potential_price * delta)
    }

    /// Best action for fixed `(λ, m)`.
    fn best_action(&self, lambda: f64, m: f64, o: &JointOracleOptions) -> (f64, f64, u64) {
        let Ok(need) = consumption_kwh(self.cfg, m, self.slot_hours) else { return (f64::INFINITY, 0.0, 0) };
        let Ok((lo, hi)) = feasible_delta_range(&self.cfg.battery, need, self.slot_hours) else {
            return (f64::INFINITY, 0.0, 0);
        };
        let (d, v, n) = zoom_min(|d| (self.value(lambda, m, d), 1), lo, hi, o.points, o.levels);
        (v, d, n)
    }

    /// Best `(m, Δ)` for a dispatched rate, `+∞` if it cannot be served.
    fn best(&self, lambda: f64, o: &JointOracleOptions) -> (f64, f64, f64, u64) {
        let c = self.cfg;
        let m_min = ((lambda + self.floor) / c.service_rate_per_server).max(1.0);
        let m_max = c.max_servers();
        if m_min > m_max * (1.0 + 1e-12) {
            return (f64::INFINITY, m_min, 0.0, 0);
        }
        let m_min = m_min.min(m_max);
        if o.integer_servers {
            let mut best = (f64::INFINITY, m_min, 0.0, 0u64);
            let first = (m_min - 1e-9).ceil().max(1.0) as u64;
            for m in first..=c.server_count as u64 {
                let (v, d, n) = self.best_action(lambda, m as f64, o);
                best.3 += n;
                if v < best.0 {
                    best = (v, m as f64, d, best.3);
                }
            }
            return best;
        }
        let (m, v, mut evals) = zoom_min(
            |m| {
                let (v, _, n) = self.best_action(lambda, m, o);
                (v, n)
            },
            m_min,
            m_max,
            o.points,
            o.levels,
        );
        let (_, d, n) = self.best_action(lambda, m, o);
        evals += n;
        (v, m, d, evals)
    }
}

/// Minimizes a unimodal `f` on `[lo, hi]`; `f` also returns an evaluation
/// count. Returns `(argmin, min, evaluations)`.
fn zoom_min<F: Fn(f64) -> (f64, u64)>(f: F, lo: f64, hi: f64, points: usize, levels: usize) -> (f64, f64, u64) {
    let mut best = (lo, f64::INFINITY);
    let mut evals = 0;
    let (mut a, mut b) = (lo, hi);
    for _ in 0..levels {
        if !(b > a) {
            let (v, n) = f(a);
            evals += n;
            if v < best.1 {
                best = (a, v);
            }
            break;
        }
        let h = (b - a) / (points - 1) as f64;
        let mut j_best = 0;
        let mut v_best = f64::INFINITY;
        for j in 0..points {
            let x = if j + 1 == points { b } else { a + j as f64 * h };
            let (v, n) = f(x);
            evals += n;
            if v < v_best {
                v_best = v;
                j_best = j;
            }
        }
        let x = if j_best + 1 == points { b } else { a + j_best as f64 * h };
        if v_best < best.1 {
            best = (x, v_best);
        }
        a = (x - h).max(lo);
        b = (x + h).min(hi);
    }
    (best.0, best.1, evals)
}

/// Parallel variant of [`zoom_min`] for the expensive outer searches.
fn zoom_min_par<T, F>(f: F, lo: f64, hi: f64, points: usize, levels: usize) -> (f64, f64, u64, Option<T>)
where
    T: Send + Clone,
    F: Fn(f64) -> (f64, u64, T) + Sync,
{
    let mut best: (f64, f64, Option<T>) = (lo, f64::INFINITY, None);
    let mut evals = 0;
    let (mut a, mut b) = (lo, hi);
    for _ in 0..levels {
        let xs: Vec<f64> = if b > a {
            let h = (b - a) / (points - 1) as f64;
            (0..points).map(|j| if j + 1 == points { b } else { a + j as f64 * h }).collect()
        } else {
            vec![a]
        };
        let results: Vec<(f64, u64, T)> = xs.par_iter().map(|&x| f(x)).collect();
        let mut j_best = 0;
        for (j, r) in results.iter().enumerate() {
            evals += r.1;
            if r.0 < results[j_best].0 {
                j_best = j;
            }
        }
        if results[j_best].0 < best.1 {
            best = (xs[j_best], results[j_best].0, Some(results[j_best].2.clone()));
        }
        if xs.len() == 1 {
            break;
        }
        let h = (b - a) / (points - 1) as f64;
        let x = xs[j_best];
        a = (x - h).max(lo);
        b = (x + h).min(hi);
    }
    (best.0, best.1, evals, best.2)
}

/// Grid minimum of the joint problem with default density.
pub fn joint_oracle(scenario: &Scenario, grid_steps: usize) -> Result<OracleReport> {
    joint_oracle_with(scenario, &JointOracleOptions { points: grid_steps, ..Default::default() })
}

/// Grid minimum of the joint problem over dispatch split, server counts and
/// battery actions.
pub fn joint_oracle_with(scenario: &Scenario, o: &JointOracleOptions) -> Result<OracleReport> {
    scenario.validate()?;
    let count = scenario.dc_count();
    if count > MAX_ORACLE_DCS {
        return Err(Error::config(format!("joint oracle refuses {count} > {MAX_ORACLE_DCS} data centers")));
    }
    if scenario.datacenters.iter().any(|d| d.sources.len() > MAX_JOINT_SOURCES) {
        return Err(Error::config(format!("joint oracle refuses more than {MAX_JOINT_SOURCES} sources per data center")));
    }
    if !(3..=5000).contains(&o.points) || o.levels == 0 {
        return Err(Error::config("joint oracle needs 3..=5000 points and at least one level"));
    }
    if o.integer_servers && scenario.datacenters.iter().any(|d| d.server_count > 5000) {
        return Err(Error::config("integer oracle refuses more than 5000 servers per data center"));
    }
    let dcs: Vec<Dc> = scenario
        .datacenters
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let mut sorted = cfg.sources.clone();
            sorted.sort_by(|a, b| a.price.total_cmp(&b.price));
            Ok(Dc { cfg, sorted, floor: scenario.delay_budget(i)?.capacity_floor()?, slot_hours: scenario.slot_hours })
        })
        .collect::<Result<_>>()?;
    let load = scenario.total_load;
    let total_cap: f64 = dcs.iter().map(Dc::cap).sum();
    if load > total_cap * (1.0 + 1e-12) {
        return Err(Error::infeasible(format!("load {load} exceeds the aggregate capacity {total_cap}")));
    }
    let levels = o.levels;
    let resolution = (2.0 / (o.points - 1) as f64).powi(levels as i32 - 1) / (o.points - 1) as f64;

    type Pt = Vec<(f64, f64, f64)>;
    let single = |i: usize, lambda: f64| -> (f64, u64, Pt) {
        let (v, m, d, n) = dcs[i].best(lambda, o);
        (v, n, vec![(lambda, m, d)])
    };

    let (value, evals, point): (f64, u64, Pt) = match count {
        1 => single(0, load),
        2 => {
            let lo = (load - dcs[1].cap()).max(0.0);
            let hi = load.min(dcs[0].cap());
            let (_, v, n, p) = zoom_min_par(
                |l1| {
                    let a = single(0, l1);
                    let b = single(1, load - l1);
                    (a.0 + b.0, a.1 + b.1, [a.2, b.2].concat())
                },
                lo,
                hi,
                o.points,
                levels,
            );
            (v, n, p.unwrap_or_default())
        }
        _ => {
            let lo = (load - dcs[1].cap() - dcs[2].cap()).max(0.0);
            let hi = load.min(dcs[0].cap());
            let (_, v, n, p) = zoom_min_par(
                |l1| {
                    let a = single(0, l1);
                    let rest = load - l1;
                    let lo2 = (rest - dcs[2].cap()).max(0.0);
                    let hi2 = rest.min(dcs[1].cap());
                    if lo2 > hi2 {
                        return (f64::INFINITY, a.1, Vec::new());
                    }
                    let inner = std::cell::RefCell::new((f64::INFINITY, Vec::new()));
                    let (_, v, n) = zoom_min(
                        |l2| {
                            let b = single(1, l2);
                            let c = single(2, rest - l2);
                            let v = b.0 + c.0;
                            let mut cur = inner.borrow_mut();
                            if v < cur.0 {
                                *cur = (v, [b.2, c.2].concat());
                            }
                            (v, b.1 + c.1)
                        },
                        lo2,
                        hi2,
                        o.points,
                        levels,
                    );
                    let tail = inner.into_inner().1;
                    (a.0 + v, a.1 + n, [a.2, tail].concat())
                },
                lo,
                hi,
                o.points,
                levels,
            );
            (v, n, p.unwrap_or_default())
        }
    };
    if !value.is_finite() {
        return Err(Error::infeasible("no feasible grid point"));
    }
    let mut flat = Vec::with_capacity(3 * count);
    for (l, m, d) in point {
        flat.extend([l, m, d]);
    }
    Ok(OracleReport { best_value: value, best_point: flat, grid_resolution: resolution, evaluations: evals })
}
