//! Comparison strategies: a cut-selection rule paired with a fixed resource
//! allocator and an execution schedule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::{Decision, Resource};
use crate::problem::{Plan, ProblemInstance};
use crate::simulator::ScheduleMode;
use crate::solver::{self, SolverConfig, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("common cut layer {layer} is infeasible: risk-feasible layers are {lo}..={hi}")]
    InfeasibleLayer { layer: u32, lo: u32, hi: u32 },
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutRule {
    /// Whole model on the device.
    Fedavg,
    /// One layer for every device; `None` picks the shallowest risk-feasible one.
    FixedCommon(Option<u32>),
    /// Per-device cuts from the planner's cut block under equal shares.
    PerDeviceDpmora,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfBasis {
    #[default]
    Minibatch,
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocator {
    Af,
    Pf(PfBasis),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub cut_rule: CutRule,
    pub schedule: ScheduleMode,
    pub allocator: Allocator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StrategyName {
    Faaf,
    Sf1af,
    Sf1pf,
    Sf2af,
    Sf2pf,
    Sf3af,
    Sf3pf,
    Fsaf,
    Fspf,
    Dpmora,
}

impl StrategyName {
    pub const ALL: [StrategyName; 10] = [
        StrategyName::Faaf,
        StrategyName::Sf1af,
        StrategyName::Sf1pf,
        StrategyName::Sf2af,
        StrategyName::Sf2pf,
        StrategyName::Sf3af,
        StrategyName::Sf3pf,
        StrategyName::Fsaf,
        StrategyName::Fspf,
        StrategyName::Dpmora,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyName::Faaf => "FAAF",
            StrategyName::Sf1af => "SF1AF",
            StrategyName::Sf1pf => "SF1PF",
            StrategyName::Sf2af => "SF2AF",
            StrategyName::Sf2pf => "SF2PF",
            StrategyName::Sf3af => "SF3AF",
            StrategyName::Sf3pf => "SF3PF",
            StrategyName::Fsaf => "FSAF",
            StrategyName::Fspf => "FSPF",
            StrategyName::Dpmora => "DPMORA",
        }
    }

    /// The baseline recipe, or `None` for the planner itself.
    pub fn strategy(self, pf_basis: PfBasis) -> Option<Strategy> {
        use CutRule::*;
        use ScheduleMode::*;
        let pf = Allocator::Pf(pf_basis);
        let (cut_rule, schedule, allocator) = match self {
            StrategyName::Faaf => (Fedavg, Parallel, Allocator::Af),
            StrategyName::Sf1af => (FixedCommon(None), Sequential, Allocator::Af),
            StrategyName::Sf1pf => (FixedCommon(None), Sequential, pf),
            StrategyName::Sf2af => (PerDeviceDpmora, Sequential, Allocator::Af),
            StrategyName::Sf2pf => (PerDeviceDpmora, Sequential, pf),
            StrategyName::Sf3af => (PerDeviceDpmora, Parallel, Allocator::Af),
            StrategyName::Sf3pf => (PerDeviceDpmora, Parallel, pf),
            StrategyName::Fsaf => (FixedCommon(None), Parallel, Allocator::Af),
            StrategyName::Fspf => (FixedCommon(None), Parallel, pf),
            StrategyName::Dpmora => return None,
        };
        Some(Strategy { cut_rule, schedule, allocator })
    }

    pub fn schedule(self) -> ScheduleMode {
        self.strategy(PfBasis::Minibatch).map_or(ScheduleMode::Parallel, |s| s.schedule)
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyName {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        StrategyName::ALL
            .into_iter()
            .find(|n| n.as_str() == upper)
            .ok_or_else(|| BaselineError::UnknownStrategy(s.to_string()))
    }
}

pub fn allocate_af(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn allocate_pf(weights: &[u64]) -> Vec<f64> {
    let total: f64 = weights.iter().map(|&w| w as f64).sum();
    weights.iter().map(|&w| w as f64 / total).collect()
}

fn shares(allocator: Allocator, p: &ProblemInstance) -> Vec<f64> {
    match allocator {
        Allocator::Af => allocate_af(p.len()),
        Allocator::Pf(PfBasis::Minibatch) => allocate_pf(&p.fleet().iter().map(|d| d.minibatch).collect::<Vec<_>>()),
        Allocator::Pf(PfBasis::Dataset) => allocate_pf(&p.fleet().iter().map(|d| d.dataset_size).collect::<Vec<_>>()),
    }
}

fn uniform_plan(x: f64, mu: &[f64]) -> Plan {
    Plan::new(mu.iter().map(|&m| Decision::new(x, m, m, m)).collect())
}

/// Builds the plan a baseline strategy would run on `p`.
pub fn build_plan(strategy: &Strategy, p: &ProblemInstance, cfg: &SolverConfig) -> Result<Plan, BaselineError> {
    let layers = p.layers();
    let lo = p.min_integer_cut();
    let mu = shares(strategy.allocator, p);
    let mut plan = match strategy.cut_rule {
        CutRule::Fedavg => uniform_plan(f64::from(layers), &mu),
        CutRule::FixedCommon(layer) => {
            let layer = layer.unwrap_or(lo);
            if layer < lo || layer > layers {
                return Err(BaselineError::InfeasibleLayer { layer, lo, hi: layers });
            }
            uniform_plan(f64::from(layer), &mu)
        }
        CutRule::PerDeviceDpmora => {
            let frozen = uniform_plan(f64::from(layers), &allocate_af(p.len()));
            solver::solve_cuts_frozen(p, &frozen, cfg)?
        }
    };
    for r in Resource::ALL {
        plan.set_shares(r, &mu);
    }
    Ok(plan)
}
