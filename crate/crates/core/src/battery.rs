//! Battery charge/discharge efficiency, grid-side energy of an action,
//! potential cost, feasible action ranges and curve fitting.
//!
//! A battery action `Δ` (kWh stored, negative when discharging) is normalized
//! to the charge rate `δ = Δ / (τ C)`. The grid sees `g(Δ) = η′(δ) Δ`, where
//! `η′` is a cubic in `δ`: above one when charging (extra energy is lost) and
//! typically below one when discharging.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BatteryConfig;
use crate::scp::check_convexity_condition;

/// Number of future hours in the potential-cost forecast.
pub const DEFAULT_HORIZON: usize = 6;

/// Geometric decay of the default horizon weights.
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.7;

/// Bisection tolerance of the discharge limit that keeps purchases >= 0.
const BISECTION_TOL_KWH: f64 = 1e-10;

/// Samples used when checking that `η′(δ) δ` is increasing.
const MONOTONE_SAMPLES: usize = 2001;

/// Cubic `η′(δ) = a δ³ + b δ² + c δ + d` on `[domain_lo, domain_hi]`.
///
/// Construction validates positivity, strict monotonicity of `η′(δ) δ` and
/// the convexity certificate, so solvers never see a pathological curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurveSpec", into = "CurveSpec")]
pub struct EfficiencyCurve {
    coeffs: [f64; 4],
    domain_lo: f64,
    domain_hi: f64,
}

#[derive(Serialize, Deserialize)]
struct CurveSpec {
    coefficients: [f64; 4],
    domain: [f64; 2],
}

impl TryFrom<CurveSpec> for EfficiencyCurve {
    type Error = Error;

    fn try_from(s: CurveSpec) -> Result<Self> {
        EfficiencyCurve::new(s.coefficients, s.domain[0], s.domain[1])
    }
}

impl From<EfficiencyCurve> for CurveSpec {
    fn from(c: EfficiencyCurve) -> Self {
        CurveSpec { coefficients: c.coeffs, domain: [c.domain_lo, c.domain_hi] }
    }
}

impl EfficiencyCurve {
    /// `coeffs` are `[a, b, c, d]`, highest power first.
    pub fn new(coeffs: [f64; 4], domain_lo: f64, domain_hi: f64) -> Result<Self> {
        let curve = Self::new_unchecked(coeffs, domain_lo, domain_hi)?;
        curve.validate()?;
        Ok(curve)
    }

    fn new_unchecked(coeffs: [f64; 4], domain_lo: f64, domain_hi: f64) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("efficiency coefficients must be finite"));
        }
        if !(domain_lo.is_finite() && domain_hi.is_finite() && domain_lo <= 0.0 && domain_hi >= 0.0) {
            return Err(Error::config(format!("efficiency domain [{domain_lo}, {domain_hi}] must contain 0")));
        }
        Ok(Self { coeffs, domain_lo, domain_hi })
    }

    /// The lead-acid fit used throughout the experiments.
    pub fn reference() -> Self {
        Self::new([0.873, 1.830, 1.495, 1.038], -1.0, 0.3).expect("reference curve is valid")
    }

    /// Lossless battery, `η′ ≡ 1`.
    pub fn identity() -> Self {
        Self::new([0.0, 0.0, 0.0, 1.0], -1.0, 0.3).expect("identity curve is valid")
    }

    pub fn coefficients(&self) -> [f64; 4] {
        self.coeffs
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.domain_lo, self.domain_hi)
    }

    pub fn contains(&self, delta: f64) -> bool {
        delta >= self.domain_lo - 1e-12 && delta <= self.domain_hi + 1e-12
    }

    /// `η′(δ)`, no domain check.
    pub fn value(&self, d: f64) -> f64 {
        let [a, b, c, e] = self.coeffs;
        ((a * d + b) * d + c) * d + e
    }

    /// `dη′/dδ`.
    pub fn slope(&self, d: f64) -> f64 {
        let [a, b, c, _] = self.coeffs;
        (3.0 * a * d + 2.0 * b) * d + c
    }

    /// `d²η′/dδ²`.
    pub fn curvature(&self, d: f64) -> f64 {
        let [a, b, _, _] = self.coeffs;
        6.0 * a * d + 2.0 * b
    }

    /// `2 η′_δ + δ η′_δδ`, which equals `K · d²(η′Δ)/dΔ²`.
    pub fn certificate_poly(&self, d: f64) -> f64 {
        2.0 * self.slope(d) + d * self.curvature(d)
    }

    /// `d(η′(δ) δ)/dδ`, equal to `d(η′Δ)/dΔ`.
    pub fn grid_slope(&self, d: f64) -> f64 {
        self.value(d) + d * self.slope(d)
    }

    fn validate(&self) -> Result<()> {
        if self.domain_hi - self.domain_lo <= 0.0 {
            return Ok(());
        }
        let cert = check_convexity_condition(self);
        if !cert.holds {
            return Err(Error::Certificate { delta: cert.argmin_delta, value: cert.min_value });
        }
        for k in 0..MONOTONE_SAMPLES {
            let t = k as f64 / (MONOTONE_SAMPLES - 1) as f64;
            let d = self.domain_lo + t * (self.domain_hi - self.domain_lo);
            if !(self.value(d) > 0.0) {
                return Err(Error::config(format!("efficiency is not positive at delta = {d}")));
            }
            if !(self.grid_slope(d) > 0.0) {
                return Err(Error::config(format!("grid energy is not increasing in the action at delta = {d}")));
            }
        }
        Ok(())
    }

    /// Points where `η′ < 1` while charging or `η′ > 1` while discharging.
    ///
    /// The reference cubic exceeds one slightly below `δ = 0`, so this is a
    /// diagnostic rather than a construction error.
    pub fn side_violations(&self, samples: usize) -> Vec<f64> {
        let n = samples.max(2);
        (0..n)
            .map(|k| self.domain_lo + (self.domain_hi - self.domain_lo) * k as f64 / (n - 1) as f64)
            .filter(|&d| (d >= 0.0 && self.value(d) < 1.0) || (d < 0.0 && self.value(d) > 1.0))
            .collect()
    }
}

/// Grid-side view of one battery for one slot: `g(Δ) = η′(Δ/K) Δ`.
#[derive(Debug, Clone, Copy)]
pub struct GridMap {
    pub curve: EfficiencyCurve,
    /// `τ C`; zero for a battery-less data center.
    pub scale: f64,
}

impl GridMap {
    pub fn new(battery: &BatteryConfig, slot_hours: f64) -> Self {
        Self { curve: battery.efficiency, scale: battery.rate_scale(slot_hours) }
    }

    fn rate(&self, delta: f64) -> f64 {
        if self.scale > 0.0 {
            delta / self.scale
        } else {
            0.0
        }
    }

    pub fn value(&self, delta: f64) -> f64 {
        self.curve.value(self.rate(delta)) * delta
    }

    pub fn slope(&self, delta: f64) -> f64 {
        self.curve.grid_slope(self.rate(delta))
    }

    pub fn curvature(&self, delta: f64) -> f64 {
        if self.scale > 0.0 {
            self.curve.certificate_poly(self.rate(delta)) / self.scale
        } else {
            0.0
        }
    }

    /// Action range allowed by the curve's domain.
    pub fn domain(&self) -> (f64, f64) {
        (self.curve.domain_lo * self.scale, self.curve.domain_hi * self.scale)
    }
}

fn checked_rate(curve: &EfficiencyCurve, delta_kwh: f64, capacity_kwh: f64, slot_hours: f64) -> Result<f64> {
    let scale = slot_hours * capacity_kwh;
    if !(scale > 0.0) {
        if delta_kwh == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::domain("battery has no capacity"));
    }
    let d = delta_kwh / scale;
    if !curve.contains(d) {
        let (lo, hi) = curve.domain();
        return Err(Error::domain(format!("charge rate {d} outside [{lo}, {hi}]")));
    }
    Ok(d)
}

/// Efficiency multiplier `η′` of the action `delta_kwh`.
pub fn eta_prime(curve: &EfficiencyCurve, delta_kwh: f64, capacity_kwh: f64, slot_hours: f64) -> Result<f64> {
    Ok(curve.value(checked_rate(curve, delta_kwh, capacity_kwh, slot_hours)?))
}

/// Energy drawn from (positive) or returned to (negative) the grid side.
pub fn effective_grid_power(curve: &EfficiencyCurve, delta_kwh: f64, capacity_kwh: f64, slot_hours: f64) -> Result<f64> {
    let d = checked_rate(curve, delta_kwh, capacity_kwh, slot_hours)?;
    Ok(curve.value(d) * delta_kwh)
}

/// Geometric weights `∝ 0.7^h`, normalized over `horizon` hours.
pub fn default_horizon_weights(horizon: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=horizon).map(|h| DEFAULT_WEIGHT_DECAY.powi(h as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn validate_horizon_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::config("horizon weights are empty"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("horizon weights sum to {sum}, not 1")));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::config("horizon weights must be positive"));
    }
    if weights.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::config("horizon weights must be strictly decreasing"));
    }
    Ok(())
}

/// Weighted forecast `Σ w(h) v̄(h)` of the storage unit cost.
pub fn horizon_estimate(weights: &[f64], future_unit_costs: &[f64]) -> Result<f64> {
    validate_horizon_weights(weights)?;
    if future_unit_costs.len() != weights.len() {
        return Err(Error::config(format!("expected {} future unit costs, got {}", weights.len(), future_unit_costs.len())));
    }
    Ok(weights.iter().zip(future_unit_costs).map(|(w, v)| w * v).sum())
}

/// Value now of the future effect of the action: `−ε̂ Δ`.
pub fn potential_cost(battery: &BatteryConfig, delta_kwh: f64, future_unit_costs: &[f64]) -> Result<f64> {
    let eps = horizon_estimate(&battery.horizon_weights, future_unit_costs)?;
    Ok(-eps * delta_kwh)
}

/// Action interval from the state of charge, the rate limits and the curve
/// domain, ignoring consumption. `(0, 0)` without a battery.
pub fn action_box(battery: &BatteryConfig, slot_hours: f64) -> (f64, f64) {
    let map = GridMap::new(battery, slot_hours);
    if map.scale <= 0.0 {
        return (0.0, 0.0);
    }
    let (dom_lo, dom_hi) = map.domain();
    let lo = (-battery.initial_charge_kwh).max(battery.delta_lb_kwh).max(dom_lo).min(0.0);
    let hi = (battery.capacity_kwh - battery.initial_charge_kwh).min(battery.delta_ub_kwh).min(dom_hi).max(0.0);
    (lo, hi)
}

/// Feasible action interval `[lo, hi]` given this slot's consumption.
///
/// Combines the state-of-charge limits, the rate limits, the curve domain and
/// the requirement that the battery never returns more than the servers use.
pub fn feasible_delta_range(battery: &BatteryConfig, consumption_kwh: f64, slot_hours: f64) -> Result<(f64, f64)> {
    if !(consumption_kwh >= 0.0) {
        return Err(Error::domain(format!("consumption must be >= 0, got {consumption_kwh}")));
    }
    let map = GridMap::new(battery, slot_hours);
    if map.scale <= 0.0 {
        return Ok((0.0, 0.0));
    }
    let (box_lo, hi) = action_box(battery, slot_hours);
    let lo = if consumption_kwh + map.value(box_lo) >= 0.0 {
        box_lo
    } else {
        // g is increasing, so bisect for g(Δ) = -consumption on [box_lo, 0]
        crate::numeric::bisect(|d| consumption_kwh + map.value(d), box_lo, 0.0, BISECTION_TOL_KWH)
    };
    if lo > hi + 1e-12 {
        return Err(Error::infeasible(format!("battery action range is empty: [{lo}, {hi}]")));
    }
    Ok((lo, hi))
}

/// Least-squares efficiency curve and its residual.
#[derive(Debug, Clone, Serialize)]
pub struct CurveFit {
    pub curve: EfficiencyCurve,
    pub rms_residual: f64,
}

/// Fits `η′` as a polynomial of `degree` (at most 3) in `δ`.
pub fn fit_efficiency_curve(samples: &[(f64, f64)], degree: usize) -> Result<CurveFit> {
    if degree > 3 {
        return Err(Error::Fit(format!("degree {degree} exceeds 3")));
    }
    if samples.len() < degree + 1 {
        return Err(Error::Fit(format!("need at least {} samples for degree {degree}, got {}", degree + 1, samples.len())));
    }
    for &(d, e) in samples {
        if !(d.is_finite() && e.is_finite()) {
            return Err(Error::Fit("non-finite sample".into()));
        }
        if !(-1.0 - 1e-12..=0.3 + 1e-12).contains(&d) {
            return Err(Error::Fit(format!("sample delta {d} outside [-1, 0.3]")));
        }
    }
    let cols = degree + 1;
    let design = DMatrix::from_fn(samples.len(), cols, |r, c| samples[r].0.powi((degree - c) as i32));
    let target = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Fit("sample set is rank deficient".into()));
    }
    let sol = svd.solve(&target, 0.0).map_err(|e| Error::Fit(e.to_string()))?;
    let resid = &design * &sol - &target;
    let rms = (resid.norm_squared() / samples.len() as f64).sqrt();

    let mut coeffs = [0.0; 4];
    for c in 0..cols {
        coeffs[4 - cols + c] = sol[c];
    }
    let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min).min(0.0);
    let hi = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let curve = EfficiencyCurve::new(coeffs, lo, hi)?;
    Ok(CurveFit { curve, rms_residual: rms })
}
