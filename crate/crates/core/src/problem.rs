//! Problem instances, plans, objective and constraint checks.
//!
//! The objective is the sum of per-device round latencies. Constraints:
//!
//! * C1 - leakage risk at the chosen cut is at most `p_risk`; with a monotone
//!   profile this is the box `x >= x_min`;
//! * C2/C3/C4 - downlink, uplink and compute shares each sum to at most 1;
//! * C5 - cut positions are integers in `1..=L` (relaxed: `1 <= x <= L`);
//! * C6 - every share lies strictly inside (0, 1).

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::cost_models::{Workload, WorkloadModel};
use crate::latency::{
    self, Decision, DeviceContext, DeviceProfile, LatencyBreakdown, LatencyError, LinkMode, Resource, ResourceCosts,
    ServerProfile,
};
use crate::risk::{RiskError, RiskProfile};

/// Slack allowed on the share budgets.
pub const BUDGET_SLACK: f64 = 1e-6;
/// Slack allowed on the risk constraint.
pub const RISK_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("fleet must contain at least one device")]
    EmptyFleet,
    #[error("risk profile covers {profile} layers but the workload model has {model}")]
    LayerMismatch { profile: u32, model: u32 },
    #[error("plan has {plan} decisions for {fleet} devices")]
    PlanSize { plan: usize, fleet: usize },
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    fleet: Vec<DeviceProfile>,
    server: ServerProfile,
    workload: WorkloadModel,
    risk_profile: RiskProfile,
    p_risk: f64,
    epochs: u32,
    link: LinkMode,
    relaxed: bool,
    x_min: f64,
}

/// Builder-style inputs for [`ProblemInstance::new`].
#[derive(Debug, Clone)]
pub struct InstanceSpec {
    pub fleet: Vec<DeviceProfile>,
    pub server: ServerProfile,
    pub workload: WorkloadModel,
    pub risk_profile: RiskProfile,
    pub p_risk: f64,
    pub epochs: u32,
    pub link: LinkMode,
    pub relaxed: bool,
}

impl ProblemInstance {
    pub fn new(spec: InstanceSpec) -> Result<Self, ProblemError> {
        if spec.fleet.is_empty() {
            return Err(ProblemError::EmptyFleet);
        }
        for dev in &spec.fleet {
            dev.validate()?;
        }
        spec.server.validate()?;
        spec.link.validate(spec.fleet.len())?;
        if spec.epochs < 1 {
            return Err(LatencyError::NoEpochs.into());
        }
        if spec.risk_profile.layers() != spec.workload.layers() {
            return Err(ProblemError::LayerMismatch {
                profile: spec.risk_profile.layers(),
                model: spec.workload.layers(),
            });
        }
        let x_min = spec.risk_profile.min_feasible_cut(spec.p_risk)?;
        Ok(Self {
            fleet: spec.fleet,
            server: spec.server,
            workload: spec.workload,
            risk_profile: spec.risk_profile,
            p_risk: spec.p_risk,
            epochs: spec.epochs,
            link: spec.link,
            relaxed: spec.relaxed,
            x_min,
        })
    }

    pub fn fleet(&self) -> &[DeviceProfile] {
        &self.fleet
    }

    pub fn len(&self) -> usize {
        self.fleet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fleet.is_empty()
    }

    pub fn server(&self) -> &ServerProfile {
        &self.server
    }

    pub fn workload(&self) -> &WorkloadModel {
        &self.workload
    }

    pub fn risk_profile(&self) -> &RiskProfile {
        &self.risk_profile
    }

    pub fn p_risk(&self) -> f64 {
        self.p_risk
    }

    pub fn epochs(&self) -> u32 {
        self.epochs
    }

    pub fn link(&self) -> &LinkMode {
        &self.link
    }

    pub fn relaxed(&self) -> bool {
        self.relaxed
    }

    pub fn with_relaxed(&self, relaxed: bool) -> Self {
        Self { relaxed, ..self.clone() }
    }

    pub fn layers(&self) -> u32 {
        self.workload.layers()
    }

    /// Shallowest cut allowed by the risk constraint.
    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    /// Shallowest integer cut allowed by the risk constraint.
    pub fn min_integer_cut(&self) -> u32 {
        let nearest = self.x_min.round();
        if (self.x_min - nearest).abs() < 1e-9
            && self.risk_profile.risk_at(nearest).is_ok_and(|r| r <= self.p_risk + RISK_SLACK)
        {
            return nearest as u32;
        }
        (self.x_min.ceil() as u32).min(self.layers())
    }

    /// Latency context of device `n`; it exposes only that device's profile.
    pub fn context(&self, n: usize) -> DeviceContext<'_> {
        DeviceContext {
            device: &self.fleet[n],
            server: &self.server,
            link: self.link.for_device(n),
            epochs: self.epochs,
        }
    }

    pub fn device_latency(&self, n: usize, d: &Decision) -> Result<LatencyBreakdown, ProblemError> {
        Ok(latency::round_latency(&self.context(n), &self.workload, d)?)
    }

    pub fn device_costs(&self, n: usize, x: f64) -> Result<ResourceCosts, ProblemError> {
        Ok(latency::resource_costs(&self.context(n), &self.workload, x)?)
    }

    fn check_size(&self, plan: &Plan) -> Result<(), ProblemError> {
        if plan.decisions.len() != self.fleet.len() {
            return Err(ProblemError::PlanSize { plan: plan.decisions.len(), fleet: self.fleet.len() });
        }
        Ok(())
    }

    pub fn round_latencies(&self, plan: &Plan) -> Result<Vec<f64>, ProblemError> {
        self.check_size(plan)?;
        plan.decisions.iter().enumerate().map(|(n, d)| Ok(self.device_latency(n, d)?.round)).collect()
    }

    /// Sum of per-device round latencies, in seconds.
    pub fn objective(&self, plan: &Plan) -> Result<f64, ProblemError> {
        Ok(self.round_latencies(plan)?.iter().sum())
    }

    /// Lists every violated constraint; empty iff the plan is feasible.
    pub fn check_feasible(&self, plan: &Plan) -> Vec<Violation> {
        let mut out = Vec::new();
        if plan.decisions.len() != self.fleet.len() {
            out.push(Violation {
                constraint: Constraint::Shape,
                device: None,
                margin: plan.decisions.len() as f64 - self.fleet.len() as f64,
            });
            return out;
        }
        let layers = f64::from(self.layers());
        for (n, d) in plan.decisions.iter().enumerate() {
            if !(d.x >= 1.0 && d.x <= layers) {
                let margin = if d.x < 1.0 { 1.0 - d.x } else { d.x - layers };
                out.push(Violation { constraint: Constraint::C5, device: Some(n), margin });
            } else {
                let risk = self.risk_profile.risk_at(d.x).expect("x checked in range");
                if risk > self.p_risk + RISK_SLACK {
                    out.push(Violation { constraint: Constraint::C1, device: Some(n), margin: risk - self.p_risk });
                }
                if !self.relaxed && d.x.fract() != 0.0 {
                    let margin = (d.x - d.x.round()).abs();
                    out.push(Violation { constraint: Constraint::C5, device: Some(n), margin });
                }
            }
            for r in Resource::ALL {
                let v = d.share(r);
                if !(v > 0.0 && v < 1.0) {
                    let margin = if v <= 0.0 { -v } else { v - 1.0 };
                    out.push(Violation { constraint: Constraint::C6, device: Some(n), margin: margin.max(0.0) });
                }
            }
        }
        for (r, c) in
            [(Resource::Dl, Constraint::C2), (Resource::Ul, Constraint::C3), (Resource::Compute, Constraint::C4)]
        {
            let sum: f64 = plan.decisions.iter().map(|d| d.share(r)).sum();
            if sum > 1.0 + BUDGET_SLACK {
                out.push(Violation { constraint: c, device: None, margin: sum - 1.0 });
            }
        }
        out
    }

    /// Snaps each cut to the nearest risk-feasible integer layer, breaking
    /// ties upward. Allocations are carried over unchanged.
    pub fn round_plan(&self, relaxed: &Plan) -> Plan {
        let lo = self.min_integer_cut();
        let hi = self.layers();
        let decisions = relaxed.decisions.iter().map(|d| Decision { x: snap_cut(d.x, lo, hi), ..*d }).collect();
        Plan { decisions }
    }
}

/// Nearest integer in `[lo, hi]`, with `.5` rounding up.
pub fn snap_cut(x: f64, lo: u32, hi: u32) -> f64 {
    let nearest = (x + 0.5).floor();
    nearest.clamp(f64::from(lo), f64::from(hi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub decisions: Vec<Decision>,
}

impl Plan {
    pub fn new(decisions: Vec<Decision>) -> Self {
        Self { decisions }
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn shares(&self, resource: Resource) -> Vec<f64> {
        self.decisions.iter().map(|d| d.share(resource)).collect()
    }

    pub fn set_shares(&mut self, resource: Resource, shares: &[f64]) {
        assert_eq!(shares.len(), self.decisions.len());
        for (d, s) in self.decisions.iter_mut().zip(shares) {
            d.set_share(resource, *s);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Constraint {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    /// Plan and fleet sizes differ.
    Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub device: Option<usize>,
    pub margin: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.device {
            Some(n) => write!(f, "{:?} violated on device {n} by {:.3e}", self.constraint, self.margin),
            None => write!(f, "{:?} violated by {:.3e}", self.constraint, self.margin),
        }
    }
}
