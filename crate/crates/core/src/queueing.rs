//! Queueing delay of a data center and the delay-bound constraint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Queueing delay above which a solved decision earns a warning, seconds.
pub const QUEUE_DELAY_WARNING_S: f64 = 1.0;

/// Delay budget of one data center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBudget {
    pub total_bound_s: f64,
    pub transmission_s: f64,
    pub service_rate: f64,
    /// Smallest admissible `m ū − λ`.
    pub min_capacity_margin: f64,
}

impl DelayBudget {
    pub fn new(total_bound_s: f64, transmission_s: f64, service_rate: f64) -> Result<Self> {
        if !(service_rate.is_finite() && service_rate > 0.0) {
            return Err(Error::config(format!("service rate must be > 0, got {service_rate}")));
        }
        if !(transmission_s >= 0.0) || total_bound_s.is_nan() {
            return Err(Error::config("delays must be non-negative numbers"));
        }
        let room = total_bound_s - 1.0 / service_rate - transmission_s;
        if !(room > 0.0) {
            return Err(Error::config(format!(
                "delay bound {total_bound_s} s leaves no room for queueing after service time {} s and transmission {transmission_s} s",
                1.0 / service_rate
            )));
        }
        Ok(Self { total_bound_s, transmission_s, service_rate, min_capacity_margin: 1.0 / room })
    }

    /// Service slack `m ū − λ` needed to keep the total delay within budget.
    pub fn capacity_floor(&self) -> Result<f64> {
        if !(self.min_capacity_margin >= 0.0 && self.min_capacity_margin.is_finite()) {
            return Err(Error::config("capacity floor is not finite"));
        }
        Ok(self.min_capacity_margin)
    }
}

/// Mean time in system `1/(m ū − λ) + 1/ū`.
pub fn queue_delay(active_servers: f64, service_rate: f64, arrival_rate: f64) -> Result<f64> {
    let capacity = active_servers * service_rate;
    if !(capacity > arrival_rate) {
        return Err(Error::Unstable { capacity, arrival: arrival_rate });
    }
    Ok(1.0 / (capacity - arrival_rate) + 1.0 / service_rate)
}

/// Standalone form of [`DelayBudget::capacity_floor`].
pub fn capacity_floor(budget: &DelayBudget) -> Result<f64> {
    budget.capacity_floor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn queue_delay_examples() {
        assert_relative_eq!(queue_delay(2.0, 1.0, 1.0).unwrap(), 2.0);
        assert_relative_eq!(queue_delay(100.0, 80.0, 7990.0).unwrap(), 0.1125, max_relative = 1e-12);
        assert!(matches!(queue_delay(1.0, 80.0, 80.0), Err(Error::Unstable { .. })));
    }

    #[test]
    fn capacity_floor_examples() {
        let b = DelayBudget::new(2.0, 0.5, 80.0).unwrap();
        assert!((b.capacity_floor().unwrap() - 0.6723).abs() < 1e-4);
        assert!(matches!(DelayBudget::new(2.0, 2.0, 80.0), Err(Error::Config(_))));
        let inf = DelayBudget::new(f64::INFINITY, 0.5, 80.0).unwrap();
        assert_eq!(inf.capacity_floor().unwrap(), 0.0);
        let big = DelayBudget::new(1e9, 0.5, 80.0).unwrap();
        assert!(big.capacity_floor().unwrap() < 1e-8);
    }

    proptest! {
        #[test]
        fn floor_implies_delay_bound(
            d in 0.1f64..10.0, dt_frac in 0.0f64..0.9, u in 1.0f64..200.0, m in 1.0f64..1000.0, extra in 0.0f64..50.0
        ) {
            let dt = dt_frac * (d - 1.0 / u).max(0.0);
            prop_assume!(d - 1.0 / u - dt > 1e-6);
            let b = DelayBudget::new(d, dt, u).unwrap();
            let floor = b.capacity_floor().unwrap();
            let lambda = m * u - floor - extra;
            prop_assume!(lambda >= 0.0);
            let total = queue_delay(m, u, lambda).unwrap() + dt;
            prop_assert!(total <= d * (1.0 + 1e-12));
        }

        #[test]
        fn delay_monotone(m in 2.0f64..100.0, u in 1.0f64..100.0, frac in 0.0f64..0.9, dm in 0.01f64..5.0, dl in 0.01f64..5.0) {
            let lambda = frac * m * u;
            let base = queue_delay(m, u, lambda).unwrap();
            prop_assert!(queue_delay(m + dm, u, lambda).unwrap() < base);
            let lam2 = (lambda + dl).min(m * u - 1e-3);
            if lam2 > lambda {
                prop_assert!(queue_delay(m, u, lam2).unwrap() > base);
            }
        }
    }
}
