//! Round replay: finish times, waiting latencies and multi-round timelines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::problem::{Plan, ProblemError, ProblemInstance};
use crate::solver::SolverTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Parallel,
    /// Devices run one after another in fleet order.
    Sequential,
}

impl ScheduleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleMode::Parallel => "parallel",
            ScheduleMode::Sequential => "sequential",
        }
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "parallel" => Ok(ScheduleMode::Parallel),
            "sequential" => Ok(ScheduleMode::Sequential),
            other => Err(format!("unknown schedule mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleResult {
    pub finish: Vec<f64>,
    pub waiting: Vec<f64>,
    pub round_latency: f64,
    pub mode: ScheduleMode,
}

/// Schedules per-device round latencies.
pub fn schedule(latencies: &[f64], mode: ScheduleMode) -> ScheduleResult {
    let finish: Vec<f64> = match mode {
        ScheduleMode::Parallel => latencies.to_vec(),
        ScheduleMode::Sequential => latencies
            .iter()
            .scan(0.0, |acc, t| {
                *acc += t;
                Some(*acc)
            })
            .collect(),
    };
    let last = finish.iter().copied().fold(0.0, f64::max);
    let waiting = finish.iter().map(|f| last - f).collect();
    ScheduleResult { finish, waiting, round_latency: last, mode }
}

pub fn simulate_round(plan: &Plan, p: &ProblemInstance, mode: ScheduleMode) -> Result<ScheduleResult, ProblemError> {
    Ok(schedule(&p.round_latencies(plan)?, mode))
}

/// Mean and population variance of the waiting latencies.
pub fn waiting_stats(s: &ScheduleResult) -> (f64, f64) {
    let n = s.waiting.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = s.waiting.iter().sum::<f64>() / n as f64;
    let var = s.waiting.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var)
}

/// Cumulative wall time after each of `rounds` rounds.
pub fn simulate_training(
    plan: &Plan,
    p: &ProblemInstance,
    rounds: u32,
    mode: ScheduleMode,
) -> Result<Vec<f64>, ProblemError> {
    let round = simulate_round(plan, p, mode)?.round_latency;
    Ok((1..=rounds).map(|k| f64::from(k) * round).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MessageCounts {
    pub uplinks: usize,
    pub broadcasts: usize,
    pub total: usize,
}

pub fn message_overhead(trace: &SolverTrace) -> MessageCounts {
    let iters = trace.inner_iterations();
    let uplinks = trace.devices * iters;
    MessageCounts { uplinks, broadcasts: uplinks, total: 2 * uplinks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential() {
        let s = schedule(&[3.0, 5.0], ScheduleMode::Parallel);
        assert_eq!((s.finish.clone(), s.waiting.clone(), s.round_latency), (vec![3.0, 5.0], vec![2.0, 0.0], 5.0));
        assert_eq!(waiting_stats(&s).1, 1.0);
        let s = schedule(&[3.0, 5.0], ScheduleMode::Sequential);
        assert_eq!((s.finish.clone(), s.waiting.clone(), s.round_latency), (vec![3.0, 8.0], vec![5.0, 0.0], 8.0));
        assert_eq!(waiting_stats(&s).1, 6.25);
        let s = schedule(&[4.0; 3], ScheduleMode::Parallel);
        assert_eq!(waiting_stats(&s), (0.0, 0.0));
    }

    #[test]
    fn single_zero_wait() {
        let s = schedule(&[1.0, 7.0, 2.0, 3.5], ScheduleMode::Parallel);
        assert_eq!(s.waiting.iter().filter(|w| **w == 0.0).count(), 1);
    }

    #[test]
    fn overhead_formula() {
        let mut t = SolverTrace { devices: 2, ..SolverTrace::default() };
        assert_eq!(message_overhead(&t).total, 0);
        t.blocks.push(crate::solver::BlockRecord {
            outer: 1,
            block: crate::solver::Block::Share(crate::latency::Resource::Dl),
            iterations: 100,
            residuals: Vec::new(),
            final_residual: 0.0,
            uploads: 200,
            broadcasts: 200,
            setup_messages: 4,
            accepted: true,
            wall: std::time::Duration::ZERO,
        });
        let c = message_overhead(&t);
        assert_eq!((c.uplinks, c.broadcasts, c.total), (200, 200, 400));
    }

    #[test]
    fn mode_parse() {
        assert_eq!("Sequential".parse::<ScheduleMode>().unwrap(), ScheduleMode::Sequential);
        assert!("serial".parse::<ScheduleMode>().is_err());
    }
}
