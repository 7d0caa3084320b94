//! Block-coordinate-descent planner with decentralized resource allocation.
//!
//! The outer loop cycles through four blocks: every device's cut position
//! (projected gradient descent on its own latency), then the downlink,
//! uplink and compute shares. Each share block is a separable convex problem
//! `min Σ a_n + c_n/mu_n  s.t.  Σ mu_n <= 1` solved by a primal-dual
//! consensus iteration in which device `n` only ever sees its own latency
//! model plus the `(lambda_m, z_m)` pairs of its neighbours, relayed by the
//! server.
//!
//! Two conditioning measures keep the consensus iteration usable with
//! latencies measured in seconds:
//!
//! * the local objectives are divided by a common scale `(Σ_m sqrt(c_m))²`,
//!   gathered in one relay round before the iteration starts, so that the
//!   equilibrium multiplier sits at -1 instead of at `-(Σ sqrt(c))²`;
//! * the projected primal step of device `n` is divided by its own local
//!   curvature whenever that exceeds 1, and the neighbour coupling gain is
//!   lowered on dense graphs so that `eta` times the Laplacian spectrum stays
//!   below 1/2.
//!
//! Neither changes the fixed points of the iteration.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::{self, Decision, Resource};
use crate::problem::{Plan, ProblemError, ProblemInstance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(
        "{resource} allocation did not converge within {iterations} iterations (residual {residual:.3e}){context}"
    )]
    NonConvergence { resource: &'static str, iterations: usize, residual: f64, context: String },
}

impl From<latency::LatencyError> for SolverError {
    fn from(e: latency::LatencyError) -> Self {
        SolverError::Problem(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Every device hears every other device through the server relay.
    #[default]
    Complete,
    Ring,
    /// Undirected edge list over device indices.
    Custom(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Cuts at half depth, equal shares.
    #[default]
    Default,
    /// Cuts at half depth, random shares drawn from the given seed.
    Random(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Integration step of the consensus iteration.
    pub eta: f64,
    /// Step size of the cut-position update.
    pub step_alpha: f64,
    /// Relative objective change that stops the outer loop.
    pub sigma_outer: f64,
    /// Residual that stops an inner loop.
    pub sigma_inner: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Shares are kept in `[eps_margin, 1 - eps_margin]`.
    pub eps_margin: f64,
    pub topology: Topology,
    pub init: InitMode,
    /// Runs the consensus iteration without normalization, curvature gain or
    /// coupling attenuation.
    pub literal_consensus: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            step_alpha: 0.01,
            sigma_outer: 1e-4,
            sigma_inner: 1e-5,
            max_outer: 100,
            max_inner: 20_000,
            eps_margin: 1e-6,
            topology: Topology::Complete,
            init: InitMode::Default,
            literal_consensus: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = [
            ("eta", self.eta),
            ("step_alpha", self.step_alpha),
            ("sigma_outer", self.sigma_outer),
            ("sigma_inner", self.sigma_inner),
            ("eps_margin", self.eps_margin),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SolverError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.eps_margin >= 0.5 {
            return Err(SolverError::Config("eps_margin must be below 0.5".into()));
        }
        if self.max_outer < 1 || self.max_inner < 1 {
            return Err(SolverError::Config("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Undirected communication graph over devices.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    pub fn build(topology: &Topology, n: usize) -> Result<Self, SolverError> {
        let mut neighbors = vec![Vec::new(); n];
        let add = |a: usize, b: usize, neighbors: &mut Vec<Vec<usize>>| {
            if a != b && !neighbors[a].contains(&b) {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        };
        match topology {
            Topology::Complete => {
                for a in 0..n {
                    for b in a + 1..n {
                        add(a, b, &mut neighbors);
                    }
                }
            }
            Topology::Ring => {
                for a in 0..n {
                    add(a, (a + 1) % n, &mut neighbors);
                }
            }
            Topology::Custom(edges) => {
                for &(a, b) in edges {
                    if a >= n || b >= n {
                        return Err(SolverError::Config(format!("edge ({a}, {b}) references a device outside 0..{n}")));
                    }
                    add(a, b, &mut neighbors);
                }
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let graph = Self { neighbors };
        if !graph.is_connected() {
            return Err(SolverError::Config("communication graph is not connected".into()));
        }
        Ok(graph)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.neighbors[n]
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    fn is_connected(&self) -> bool {
        if self.neighbors.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.neighbors.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &m in &self.neighbors[v] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// One device's latency as a function of its own share of a resource.
pub trait LocalObjective {
    /// `d tau_n / d mu`.
    fn marginal(&self, mu: f64) -> f64;
    /// `d² tau_n / d mu²`.
    fn curvature(&self, mu: f64) -> f64;
    /// Scalar uploaded once to build the common normalization; `sqrt(c_n)`
    /// for a latency of the form `a + c_n/mu`.
    fn scale_hint(&self) -> f64;
}

/// `tau(mu) = base + cost/mu`, the shape every share block reduces to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShareCost {
    pub cost: f64,
}

impl LocalObjective for ShareCost {
    fn marginal(&self, mu: f64) -> f64 {
        -self.cost / (mu * mu)
    }

    fn curvature(&self, mu: f64) -> f64 {
        2.0 * self.cost / (mu * mu * mu)
    }

    fn scale_hint(&self) -> f64 {
        self.cost.sqrt()
    }
}

/// State a device holds between consensus iterations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeState {
    pub mu: f64,
    pub lambda: f64,
    pub z: f64,
}

/// What the server relays from a neighbour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborMsg {
    pub lambda: f64,
    pub z: f64,
}

/// Shared constants of one consensus run.
#[derive(Debug, Clone, Copy)]
pub struct StepParams {
    pub devices: usize,
    pub scale: f64,
    pub coupling: f64,
    pub eps: f64,
    /// Divide the primal step by the local curvature when it exceeds 1.
    pub damped: bool,
}

/// Gradient directions `(d_mu, d_lambda, d_z)` of one device.
///
/// Receives the device's own objective and state plus relayed neighbour
/// messages, nothing else.
pub fn device_step<A: LocalObjective + ?Sized>(
    objective: &A,
    own: NodeState,
    neighbors: &[NeighborMsg],
    params: &StepParams,
) -> (f64, f64, f64) {
    let marginal = objective.marginal(own.mu) / params.scale;
    let curvature = objective.curvature(own.mu) / params.scale;
    let gain = if params.damped && curvature > 1.0 { 1.0 / curvature } else { 1.0 };
    let target = (own.mu - gain * (marginal - own.lambda)).clamp(params.eps, 1.0 - params.eps);
    let d_mu = target - own.mu;

    let (mut dl, mut dz) = (0.0, 0.0);
    for m in neighbors {
        dl += own.lambda - m.lambda;
        dz += own.z - m.z;
    }
    let d_lambda = -params.coupling * dl - params.coupling * dz + (1.0 / params.devices as f64 - own.mu);
    let d_z = params.coupling * dl;
    (d_mu, d_lambda, d_z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub nodes: Vec<NodeState>,
    pub iterations: usize,
    /// Residual `|∇mu|₂ + |∇lambda|₂ + |∇z|₂` at every checked iteration.
    pub residuals: Vec<f64>,
    /// Device-to-server messages carrying `(lambda, z)`.
    pub uploads: usize,
    /// Server-to-device relayed neighbour bundles.
    pub broadcasts: usize,
    /// Messages of the normalization round that precedes the iteration.
    pub setup_messages: usize,
    pub converged: bool,
}

impl ConsensusState {
    pub fn shares(&self) -> Vec<f64> {
        self.nodes.iter().map(|s| s.mu).collect()
    }

    pub fn lambda_spread(&self) -> f64 {
        let (lo, hi) = self
            .nodes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.lambda), hi.max(s.lambda)));
        if self.nodes.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

/// Runs the synchronous consensus iteration over `objectives` (one per
/// device) until the residual drops below `cfg.sigma_inner`.
///
/// Returns the state whether or not it converged; `converged` tells which.
pub fn run_consensus<A: LocalObjective>(
    objectives: &[A],
    graph: &Graph,
    cfg: &SolverConfig,
    initial_shares: Option<&[f64]>,
) -> ConsensusState {
    let n = objectives.len();
    assert_eq!(graph.len(), n, "graph and objective counts differ");
    let eps = cfg.eps_margin;
    let mut nodes: Vec<NodeState> = (0..n)
        .map(|i| NodeState {
            mu: initial_shares.map_or(1.0 / n as f64, |s| s[i]).clamp(eps, 1.0 - eps),
            lambda: 0.0,
            z: 0.0,
        })
        .collect();

    let scale =
        if cfg.literal_consensus { 1.0 } else { objectives.iter().map(|o| o.scale_hint()).sum::<f64>().powi(2) };
    let mut state = ConsensusState {
        nodes: Vec::new(),
        iterations: 0,
        residuals: Vec::new(),
        uploads: 0,
        broadcasts: 0,
        setup_messages: if cfg.literal_consensus { 0 } else { 2 * n },
        converged: false,
    };
    let all_flat = objectives.iter().all(|o| o.scale_hint() == 0.0);
    if all_flat || !(scale > 0.0 && scale.is_finite()) {
        // no device is sensitive to this resource
        for s in &mut nodes {
            s.mu = (1.0 / n as f64).clamp(eps, 1.0 - eps);
        }
        state.nodes = nodes;
        state.converged = true;
        return state;
    }

    let d_max = graph.max_degree().max(1) as f64;
    let coupling = if cfg.literal_consensus { 1.0 } else { (0.25 / (cfg.eta * d_max)).min(1.0) };
    let params = StepParams { devices: n, scale, coupling, eps, damped: !cfg.literal_consensus };
    let mut grads = vec![(0.0, 0.0, 0.0); n];
    let mut inbox: Vec<NeighborMsg> = Vec::with_capacity(graph.max_degree());
    loop {
        let (mut g_mu, mut g_l, mut g_z) = (0.0, 0.0, 0.0);
        for (i, grad) in grads.iter_mut().enumerate() {
            inbox.clear();
            inbox.extend(graph.neighbors(i).iter().map(|&m| NeighborMsg { lambda: nodes[m].lambda, z: nodes[m].z }));
            *grad = device_step(&objectives[i], nodes[i], &inbox, &params);
            g_mu += grad.0 * grad.0;
            g_l += grad.1 * grad.1;
            g_z += grad.2 * grad.2;
        }
        let residual = g_mu.sqrt() + g_l.sqrt() + g_z.sqrt();
        state.residuals.push(residual);
        if residual < cfg.sigma_inner {
            state.converged = true;
            break;
        }
        if state.iterations >= cfg.max_inner {
            break;
        }
        for (s, g) in nodes.iter_mut().zip(&grads) {
            s.mu += cfg.eta * g.0;
            s.lambda += cfg.eta * g.1;
            s.z += cfg.eta * g.2;
        }
        state.iterations += 1;
        state.broadcasts += n;
        state.uploads += n;
    }

    // residual slack may leave the budget marginally overshot
    let total: f64 = nodes.iter().map(|s| s.mu).sum();
    if total > 1.0 {
        for s in &mut nodes {
            s.mu = (s.mu / total).max(eps);
        }
    }
    state.nodes = nodes;
    state
}

/// Centralized optimum of `min Σ c_n/mu_n s.t. Σ mu_n = 1`:
/// `mu_n = sqrt(c_n) / Σ sqrt(c_m)`. Zero-cost devices get `eps` and the
/// rest share what remains; all-zero costs give the uniform split.
pub fn closed_form_allocation(costs: &[f64], eps: f64) -> Vec<f64> {
    let n = costs.len();
    let roots: Vec<f64> = costs.iter().map(|c| c.max(0.0).sqrt()).collect();
    let total: f64 = roots.iter().sum();
    if total == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    let zeros = roots.iter().filter(|r| **r == 0.0).count();
    let budget = 1.0 - zeros as f64 * eps;
    roots.iter().map(|r| if *r == 0.0 { eps } else { budget * r / total }).collect()
}

/// Decentralized allocation of one resource with cuts and the other two
/// resources held fixed.
pub fn allocate_decentralized(
    resource: Resource,
    p: &ProblemInstance,
    plan: &Plan,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, ConsensusState), SolverError> {
    let graph = Graph::build(&cfg.topology, p.len())?;
    let objectives = share_costs(resource, p, plan)?;
    let state = run_consensus(&objectives, &graph, cfg, None);
    if !state.converged {
        return Err(SolverError::NonConvergence {
            resource: resource.name(),
            iterations: state.iterations,
            residual: state.final_residual(),
            context: String::new(),
        });
    }
    Ok((state.shares(), state))
}

fn share_costs(resource: Resource, p: &ProblemInstance, plan: &Plan) -> Result<Vec<ShareCost>, SolverError> {
    plan.decisions
        .iter()
        .enumerate()
        .map(|(n, d)| Ok(ShareCost { cost: p.device_costs(n, d.x)?.cost(resource) }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlphaStats {
    pub iterations: usize,
    pub halvings: usize,
}

/// Projected gradient descent on every device's normalized cut position
/// `a = x/L`, each device independently, other decisions fixed.
///
/// The gradient is taken on the device latency divided by its value at the
/// start of the block, so `step_alpha` is a relative step. A trial step that
/// would raise the latency (or produce a non-finite value) is rejected and
/// the step size halved.
pub fn update_alpha(p: &ProblemInstance, plan: &Plan, cfg: &SolverConfig) -> Result<(Plan, AlphaStats), SolverError> {
    let mut out = plan.clone();
    let mut stats = AlphaStats::default();
    for n in 0..p.len() {
        let (d, s) = descend_cut(p, n, plan.decisions[n], cfg)?;
        out.decisions[n] = d;
        stats.iterations += s.iterations;
        stats.halvings += s.halvings;
    }
    Ok((out, stats))
}

const MAX_HALVINGS: usize = 40;

fn descend_cut(
    p: &ProblemInstance,
    n: usize,
    start: Decision,
    cfg: &SolverConfig,
) -> Result<(Decision, AlphaStats), SolverError> {
    let layers = f64::from(p.layers());
    let lo = p.x_min().max(1.0) / layers;
    let ctx = p.context(n);
    let wl = p.workload();
    let tau = |a: f64| -> Result<f64, SolverError> {
        let d = Decision { x: a * layers, ..start };
        Ok(latency::round_latency(&ctx, wl, &d)?.round)
    };

    let mut a = (start.x / layers).clamp(lo, 1.0);
    let mut current = tau(a)?;
    let norm = current;
    let mut stats = AlphaStats::default();
    if !(norm > 0.0 && norm.is_finite()) {
        return Ok((Decision { x: a * layers, ..start }, stats));
    }
    let mut step = cfg.step_alpha;
    'outer: while stats.iterations < cfg.max_inner {
        let d = Decision { x: a * layers, ..start };
        let grad = layers * latency::cut_derivative(&ctx, wl, &d)? / norm;
        if !grad.is_finite() {
            break;
        }
        loop {
            let trial = (a - step * grad).clamp(lo, 1.0);
            if (trial - a).abs() < cfg.sigma_inner {
                break 'outer;
            }
            let value = tau(trial)?;
            if value.is_finite() && value <= current {
                a = trial;
                current = value;
                break;
            }
            step *= 0.5;
            stats.halvings += 1;
            if stats.halvings > MAX_HALVINGS {
                break 'outer;
            }
        }
        stats.iterations += 1;
    }
    Ok((Decision { x: a * layers, ..start }, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Block {
    Cut,
    Share(Resource),
    FinalShare(Resource),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockRecord {
    pub outer: usize,
    pub block: Block,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub final_residual: f64,
    pub uploads: usize,
    pub broadcasts: usize,
    pub setup_messages: usize,
    /// Whether the block result replaced the previous iterate.
    pub accepted: bool,
    pub wall: Duration,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverTrace {
    /// Objective after initialization (index 0) and after each outer pass.
    pub objective: Vec<f64>,
    pub blocks: Vec<BlockRecord>,
    pub converged: bool,
    pub devices: usize,
}

impl SolverTrace {
    pub fn outer_iterations(&self) -> usize {
        self.objective.len().saturating_sub(1)
    }

    pub fn inner_iterations(&self) -> usize {
        self.blocks.iter().filter(|b| b.block != Block::Cut).map(|b| b.iterations).sum()
    }

    pub fn uploads(&self) -> usize {
        self.blocks.iter().map(|b| b.uploads).sum()
    }

    pub fn broadcasts(&self) -> usize {
        self.blocks.iter().map(|b| b.broadcasts).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Integer-cut plan after rounding and the final allocation pass.
    pub plan: Plan,
    /// Relaxed plan at the end of the outer loop.
    pub relaxed: Plan,
    pub trace: SolverTrace,
}

/// Initial iterate: half-depth cuts projected into the feasible box, equal
/// (or seeded random) shares.
pub fn initial_plan(p: &ProblemInstance, cfg: &SolverConfig) -> Plan {
    let n = p.len();
    let layers = f64::from(p.layers());
    let x = (0.5 * layers).clamp(p.x_min().max(1.0), layers);
    let eps = cfg.eps_margin;
    let mut plan = Plan::new(vec![Decision::new(x, 1.0 / n as f64, 1.0 / n as f64, 1.0 / n as f64); n]);
    if let InitMode::Random(seed) = cfg.init {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for r in Resource::ALL {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let shares: Vec<f64> = raw.iter().map(|v| (v / total).clamp(eps, 1.0 - eps)).collect();
            plan.set_shares(r, &shares);
        }
    }
    plan
}

/// Consensus allocation of one resource, kept only if it does not raise the
/// objective.
#[allow(clippy::too_many_arguments)]
fn share_block(
    p: &ProblemInstance,
    plan: &mut Plan,
    resource: Resource,
    graph: &Graph,
    cfg: &SolverConfig,
    outer: usize,
    block: Block,
    current: &mut f64,
) -> Result<BlockRecord, SolverError> {
    let t0 = Instant::now();
    let objectives = share_costs(resource, p, plan)?;
    let state = run_consensus(&objectives, graph, cfg, None);
    if !state.converged {
        return Err(SolverError::NonConvergence {
            resource: resource.name(),
            iterations: state.iterations,
            residual: state.final_residual(),
            context: format!(" in outer iteration {outer}"),
        });
    }
    let mut candidate = plan.clone();
    candidate.set_shares(resource, &state.shares());
    let value = p.objective(&candidate)?;
    let accepted = value <= *current || !current.is_finite();
    if accepted {
        *plan = candidate;
        *current = value;
    }
    Ok(BlockRecord {
        outer,
        block,
        iterations: state.iterations,
        final_residual: state.final_residual(),
        residuals: state.residuals,
        uploads: state.uploads,
        broadcasts: state.broadcasts,
        setup_messages: state.setup_messages,
        accepted,
        wall: t0.elapsed(),
    })
}

/// Runs the full planner: BCD over the relaxed problem, rounding of the cuts,
/// then one more allocation pass with the integer cuts fixed.
pub fn solve(p: &ProblemInstance, cfg: &SolverConfig) -> Result<Solution, SolverError> {
    cfg.validate()?;
    let graph = Graph::build(&cfg.topology, p.len())?;
    let mut plan = initial_plan(p, cfg);
    let mut current = p.objective(&plan)?;
    let mut trace = SolverTrace { objective: vec![current], devices: p.len(), ..SolverTrace::default() };

    for outer in 1..=cfg.max_outer {
        let t0 = Instant::now();
        let (next, stats) = update_alpha(p, &plan, cfg)?;
        let value = p.objective(&next)?;
        let accepted = value <= current;
        if accepted {
            plan = next;
            current = value;
        }
        trace.blocks.push(BlockRecord {
            outer,
            block: Block::Cut,
            iterations: stats.iterations,
            residuals: Vec::new(),
            final_residual: 0.0,
            uploads: 0,
            broadcasts: 0,
            setup_messages: 0,
            accepted,
            wall: t0.elapsed(),
        });
        for r in Resource::ALL {
            let rec = share_block(p, &mut plan, r, &graph, cfg, outer, Block::Share(r), &mut current)?;
            trace.blocks.push(rec);
        }
        let previous = *trace.objective.last().expect("initial objective recorded");
        trace.objective.push(current);
        if ((current - previous) / current).abs() < cfg.sigma_outer {
            trace.converged = true;
            break;
        }
    }

    let relaxed = plan.clone();
    let mut rounded = p.round_plan(&plan);
    let mut value = p.objective(&rounded)?;
    for r in Resource::ALL {
        let rec =
            share_block(p, &mut rounded, r, &graph, cfg, trace.outer_iterations(), Block::FinalShare(r), &mut value)?;
        trace.blocks.push(rec);
    }
    Ok(Solution { plan: rounded, relaxed, trace })
}

/// Cut positions chosen by the planner's cut block alone, with the shares
/// of `plan` frozen, rounded to integer layers.
pub fn solve_cuts_frozen(p: &ProblemInstance, plan: &Plan, cfg: &SolverConfig) -> Result<Plan, SolverError> {
    cfg.validate()?;
    let layers = f64::from(p.layers());
    let mut start = plan.clone();
    for d in &mut start.decisions {
        d.x = (0.5 * layers).clamp(p.x_min().max(1.0), layers);
    }
    let (relaxed, _) = update_alpha(p, &start, cfg)?;
    Ok(p.round_plan(&relaxed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        let a = closed_form_allocation(&[1.0, 4.0], 1e-6);
        assert!((a[0] - 1.0 / 3.0).abs() < 1e-15 && (a[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(closed_form_allocation(&[1.0; 4], 1e-6), vec![0.25; 4]);
        let a = closed_form_allocation(&[9.0, 16.0], 1e-6);
        assert!((a[0] - 3.0 / 7.0).abs() < 1e-15 && (a[1] - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(closed_form_allocation(&[0.0, 0.0], 1e-6), vec![0.5, 0.5]);
        let a = closed_form_allocation(&[0.0, 1.0, 1.0], 1e-6);
        assert_eq!(a[0], 1e-6);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn graphs() {
        let g = Graph::build(&Topology::Complete, 4).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2, 3]);
        let g = Graph::build(&Topology::Ring, 5).unwrap();
        assert_eq!(g.neighbors(0), &[1, 4]);
        let g = Graph::build(&Topology::Ring, 2).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(Graph::build(&Topology::Ring, 1).unwrap().max_degree(), 0);
        assert!(Graph::build(&Topology::Custom(vec![(0, 1)]), 3).is_err());
        assert!(Graph::build(&Topology::Custom(vec![(0, 5)]), 3).is_err());
        assert!(Graph::build(&Topology::Custom(vec![(0, 1), (1, 2)]), 3).is_ok());
    }

    #[test]
    fn consensus_two_devices() {
        let objectives = [ShareCost { cost: 1.0 }, ShareCost { cost: 4.0 }];
        let g = Graph::build(&Topology::Complete, 2).unwrap();
        let s = run_consensus(&objectives, &g, &SolverConfig::default(), None);
        assert!(s.converged);
        let mu = s.shares();
        assert!((mu[0] - 1.0 / 3.0).abs() < 1e-3 && (mu[1] - 2.0 / 3.0).abs() < 1e-3);
        assert!(s.lambda_spread() < 1e-3);
        assert_eq!(s.uploads + s.broadcasts, 2 * 2 * s.iterations);
    }

    #[test]
    fn consensus_symmetric_costs() {
        let objectives = vec![ShareCost { cost: 7.5 }; 6];
        let g = Graph::build(&Topology::Ring, 6).unwrap();
        let s = run_consensus(&objectives, &g, &SolverConfig::default(), None);
        assert!(s.converged);
        for mu in s.shares() {
            assert!((mu - 1.0 / 6.0).abs() < 1e-3);
        }
    }

    #[test]
    fn consensus_zero_costs() {
        let g = Graph::build(&Topology::Complete, 3).unwrap();
        let s = run_consensus(&[ShareCost { cost: 0.0 }; 3], &g, &SolverConfig::default(), None);
        assert!(s.converged);
        assert_eq!(s.iterations, 0);
        let s = run_consensus(
            &[ShareCost { cost: 0.0 }, ShareCost { cost: 2.0 }, ShareCost { cost: 2.0 }],
            &g,
            &SolverConfig::default(),
            None,
        );
        assert!(s.converged);
        let mu = s.shares();
        assert!(mu[0] < 1e-3);
        assert!((mu[1] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn consensus_reports_cap() {
        let cfg = SolverConfig { max_inner: 5, ..SolverConfig::default() };
        let g = Graph::build(&Topology::Complete, 2).unwrap();
        let s = run_consensus(&[ShareCost { cost: 1.0 }, ShareCost { cost: 4.0 }], &g, &cfg, None);
        assert!(!s.converged);
        assert_eq!(s.iterations, 5);
        assert!(s.final_residual() > cfg.sigma_inner);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { eta: 0.0, ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig { max_inner: 0, ..SolverConfig::default() }.validate().is_err());
    }
}
