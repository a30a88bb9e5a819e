//! Scheduling policies compared in the savings experiments.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::integer::solve_heuristic_with;
use crate::model::{Decision, Scenario};
use crate::scp::{evaluate, solve_scp_with, DcTerms, SolveOptions};

/// What a policy is allowed to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Dispatch proportional to capacity, fewest servers meeting the delay
    /// floor, idle batteries. Purchases are still split optimally.
    Baseline,
    /// Dispatch and servers optimized, batteries idle.
    WorkloadOnly,
    /// Dispatch proportional to capacity, servers and batteries optimized.
    StorageOnly,
    Joint,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Baseline, Policy::WorkloadOnly, Policy::StorageOnly, Policy::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Baseline => "baseline",
            Policy::WorkloadOnly => "workload-only",
            Policy::StorageOnly => "storage-only",
            Policy::Joint => "joint",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| crate::Error::Config(format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyOutcome {
    pub policy: Policy,
    pub decisions: Vec<Decision>,
    pub terms: Vec<DcTerms>,
    pub objective: f64,
}

impl PolicyOutcome {
    pub fn monetary_cost(&self) -> f64 {
        self.terms.iter().map(|t| t.monetary_cost).sum()
    }

    pub fn power_cost(&self) -> f64 {
        self.terms.iter().map(|t| t.power_cost).sum()
    }
}

/// Splits the load in proportion to each data center's usable capacity
/// `M ū − F`.
pub fn proportional_dispatch(scenario: &Scenario) -> Result<Vec<f64>> {
    let caps: Vec<f64> = (0..scenario.dc_count())
        .map(|i| Ok(scenario.datacenters[i].max_capacity() - scenario.delay_budget(i)?.capacity_floor()?))
        .collect::<Result<_>>()?;
    let total: f64 = caps.iter().sum();
    Ok(caps.iter().map(|c| scenario.total_load * c / total).collect())
}

fn options(scenario: &Scenario, policy: Policy) -> Result<SolveOptions> {
    Ok(match policy {
        Policy::WorkloadOnly => SolveOptions { disable_battery: true, ..Default::default() },
        Policy::StorageOnly => SolveOptions { fixed_dispatch: Some(proportional_dispatch(scenario)?), ..Default::default() },
        Policy::Joint | Policy::Baseline => SolveOptions::default(),
    })
}

/// Runs `policy` on one slot. With `integer` the server counts are whole.
pub fn solve_policy(scenario: &Scenario, policy: Policy, integer: bool) -> Result<PolicyOutcome> {
    if policy == Policy::Baseline {
        scenario.validate()?;
        let lambdas = proportional_dispatch(scenario)?;
        let points: Vec<(f64, f64, f64)> = lambdas
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let dc = &scenario.datacenters[i];
                let floor = scenario.delay_budget(i)?.capacity_floor()?;
                let m = ((l + floor) / dc.service_rate_per_server).max(1.0);
                let m = if integer { (m - 1e-9).ceil() } else { m };
                Ok((l, m.min(dc.max_servers()), 0.0))
            })
            .collect::<Result<_>>()?;
        let e = evaluate(scenario, &points)?;
        return Ok(PolicyOutcome { policy, decisions: e.decisions, terms: e.terms, objective: e.objective });
    }
    let opts = options(scenario, policy)?;
    if integer {
        let s = solve_heuristic_with(scenario, &opts)?;
        Ok(PolicyOutcome { policy, decisions: s.decisions, terms: s.terms, objective: s.objective })
    } else {
        let s = solve_scp_with(scenario, &opts)?;
        Ok(PolicyOutcome { policy, decisions: s.decisions, terms: s.terms, objective: s.objective })
    }
}
