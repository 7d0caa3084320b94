//! Experiment configuration, plan and sweep runs, CSV and plot-data output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{self, BaselineError, PfBasis, StrategyName};
use crate::cost_models::{self, CostModel, FitKind, Workload, WorkloadModel};
use crate::latency::{DeviceProfile, LinkMode, Resource, ServerProfile};
use crate::problem::{InstanceSpec, Plan, ProblemError, ProblemInstance};
use crate::risk::RiskProfile;
use crate::simulator::{self, ScheduleMode, ScheduleResult};
use crate::solver::{self, Block, InitMode, SolverConfig, SolverError, SolverTrace};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error(transparent)]
    Solver(SolverError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{0}")]
    Data(String),
}

impl HarnessError {
    fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        HarnessError::Config { path: path.into(), msg: msg.into() }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io { path: path.display().to_string(), msg: e.to_string() }
    }

    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Solver(SolverError::NonConvergence { .. }) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    /// Canonical unit GFLOPS.
    Compute,
    /// Hz or bit/s.
    Bandwidth,
    Power,
    NoiseDensity,
}

const PREFIXES: [(&str, f64); 9] =
    [("p", 1e-12), ("n", 1e-9), ("u", 1e-6), ("µ", 1e-6), ("m", 1e-3), ("k", 1e3), ("M", 1e6), ("G", 1e9), ("T", 1e12)];

/// A number in canonical units or a string like `"50 Mbps"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Number(f64),
    Text(String),
}

impl From<f64> for Quantity {
    fn from(v: f64) -> Self {
        Quantity::Number(v)
    }
}

impl Quantity {
    pub fn resolve(&self, dim: Dimension, path: &str) -> Result<f64, HarnessError> {
        let v = match self {
            Quantity::Number(v) => *v,
            Quantity::Text(s) => parse_quantity(s, dim).map_err(|m| HarnessError::config(path, m))?,
        };
        if !v.is_finite() {
            return Err(HarnessError::config(path, "value must be finite"));
        }
        Ok(v)
    }
}

/// Parses `"<number> [prefix]<unit>"` into the dimension's canonical unit.
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64, String> {
    let s = text.trim();
    let split = s
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit()
                || c == '.'
                || c == '+'
                || c == '-'
                || ((c == 'e' || c == 'E')
                    && i > 0
                    && s[i + 1..].starts_with(|n: char| n.is_ascii_digit() || n == '-' || n == '+')))
        })
        .map_or(s.len(), |(i, _)| i);
    let value: f64 = s[..split].parse().map_err(|_| format!("cannot parse a number from {text:?}"))?;
    let unit = s[split..].trim();
    if unit.is_empty() {
        return Ok(value);
    }
    let (units, divisor): (&[&str], f64) = match dim {
        Dimension::Compute => (&["FLOPS"], 1e9),
        Dimension::Bandwidth => (&["bit/s", "bps", "Hz"], 1.0),
        Dimension::Power => (&["W"], 1.0),
        Dimension::NoiseDensity => (&["W/Hz"], 1.0),
    };
    for u in units {
        if let Some(prefix) = unit.strip_suffix(u) {
            let factor = if prefix.is_empty() {
                1.0
            } else {
                PREFIXES
                    .iter()
                    .find(|(p, _)| *p == prefix)
                    .map(|(_, f)| *f)
                    .ok_or_else(|| format!("unknown SI prefix {prefix:?} in {text:?}"))?
            };
            return Ok(value * factor / divisor);
        }
    }
    Err(format!("unit {unit:?} in {text:?} does not match expected {}", units.join(" | ")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub id: String,
    pub f_d: Quantity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_power: Option<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minibatch: Option<u64>,
    /// Full-share downlink rate override for the direct link model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dl_rate: Option<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ul_rate: Option<Quantity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub f_s: Quantity,
    pub dl_bw: Quantity,
    pub ul_bw: Quantity,
    pub tx_power: Quantity,
    pub noise_density: Quantity,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            f_s: Quantity::Text("60 GFLOPS".into()),
            dl_bw: Quantity::Text("50 Mbps".into()),
            ul_bw: Quantity::Text("100 Mbps".into()),
            tx_power: Quantity::Text("1 W".into()),
            noise_density: Quantity::Number(4e-21),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    /// Each device's full-share rate equals the server bandwidth figure.
    #[default]
    Direct,
    Shannon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Option<String>,
    pub custom: Option<CostModel>,
    /// Backward-to-forward workload ratio.
    pub kappa: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { preset: Some("resnet18".into()), custom: None, kappa: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PRisk,
    FS,
    UlBw,
    DlBw,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::PRisk => "p_risk",
            SweepParam::FS => "f_s",
            SweepParam::UlBw => "ul_bw",
            SweepParam::DlBw => "dl_bw",
        }
    }

    fn dimension(self) -> Option<Dimension> {
        match self {
            SweepParam::PRisk => None,
            SweepParam::FS => Some(Dimension::Compute),
            SweepParam::UlBw | SweepParam::DlBw => Some(Dimension::Bandwidth),
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p_risk" => Ok(SweepParam::PRisk),
            "f_s" => Ok(SweepParam::FS),
            "ul_bw" => Ok(SweepParam::UlBw),
            "dl_bw" => Ok(SweepParam::DlBw),
            other => Err(format!("unknown sweep parameter {other:?} (expected p_risk, f_s, ul_bw or dl_bw)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub from: Quantity,
    pub to: Quantity,
    pub step: Quantity,
}

impl SweepSpec {
    /// Parses `param:from:to:step`.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 4 {
            return Err(HarnessError::config("sweep", format!("expected param:from:to:step, got {text:?}")));
        }
        let parameter = parts[0].parse().map_err(|m: String| HarnessError::config("sweep.parameter", m))?;
        let q = |s: &str| match s.trim().parse::<f64>() {
            Ok(v) => Quantity::Number(v),
            Err(_) => Quantity::Text(s.trim().to_string()),
        };
        Ok(Self { parameter, from: q(parts[1]), to: q(parts[2]), step: q(parts[3]) })
    }

    /// Sweep points `from + k·step` up to `to`.
    pub fn values(&self) -> Result<Vec<f64>, HarnessError> {
        let resolve = |q: &Quantity, field: &str| {
            let path = format!("sweep.{field}");
            match self.parameter.dimension() {
                Some(dim) => q.resolve(dim, &path),
                None => match q {
                    Quantity::Number(v) => Ok(*v),
                    Quantity::Text(s) => {
                        s.trim().parse().map_err(|_| HarnessError::config(path, format!("{s:?} is not a number")))
                    }
                },
            }
        };
        let from = resolve(&self.from, "from")?;
        let to = resolve(&self.to, "to")?;
        let step = resolve(&self.step, "step")?;
        if step <= 0.0 {
            return Err(HarnessError::config("sweep.step", "step must be positive"));
        }
        if to < from {
            return Err(HarnessError::config("sweep.to", "sweep bounds must satisfy from <= to"));
        }
        let count = ((to - from) / step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|k| from + k as f64 * step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fleet: Vec<DeviceConfig>,
    pub server: ServerConfig,
    pub link: LinkKind,
    pub model: ModelConfig,
    /// Measured `(layer, risk)` table; a synthetic linear profile when absent.
    pub risk_profile: Option<RiskProfile>,
    pub p_risk: f64,
    pub epochs: u32,
    pub rounds: u32,
    pub solver: SolverConfig,
    /// Seeded random initial shares for the planner.
    pub random_init: bool,
    pub strategies: Vec<StrategyName>,
    pub pf_basis: PfBasis,
    pub sweep: Option<SweepSpec>,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

pub fn default_fleet() -> Vec<DeviceConfig> {
    let kinds = [("rpi3", 3.62, 4), ("rpi3a+", 5.0, 3), ("rpi4b", 9.69, 3)];
    let mut fleet = Vec::new();
    for (name, gflops, count) in kinds {
        for k in 0..count {
            fleet.push(DeviceConfig {
                id: format!("{name}-{k}"),
                f_d: Quantity::Number(gflops),
                tx_power: None,
                channel_gain: None,
                dataset_size: None,
                minibatch: None,
                dl_rate: None,
                ul_rate: None,
            });
        }
    }
    fleet
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fleet: default_fleet(),
            server: ServerConfig::default(),
            link: LinkKind::Direct,
            model: ModelConfig::default(),
            risk_profile: None,
            p_risk: 0.5,
            epochs: 5,
            rounds: 1,
            solver: SolverConfig::default(),
            random_init: false,
            strategies: StrategyName::ALL.to_vec(),
            pf_basis: PfBasis::Minibatch,
            sweep: None,
            seed: 0,
            output_dir: None,
        }
    }
}

pub const DEFAULT_DATASET: u64 = 5000;
pub const DEFAULT_MINIBATCH: u64 = 32;
pub const DEFAULT_DEVICE_POWER: f64 = 0.1;
pub const DEFAULT_CHANNEL_GAIN: f64 = 1e-10;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text)
            .map_err(|e| HarnessError::config(format!("line {} column {}", e.line(), e.column()), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Short SHA-256 of the canonical JSON form (output directory excluded).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut cfg = self.solver.clone();
        if self.random_init {
            cfg.init = InitMode::Random(self.seed);
        }
        cfg
    }

    /// Checks every field and converts quantities to canonical units.
    pub fn resolve(&self) -> Result<Resolved, HarnessError> {
        if self.fleet.is_empty() {
            return Err(HarnessError::config("fleet", "fleet must contain at least one device"));
        }
        if self.strategies.is_empty() {
            return Err(HarnessError::config("strategies", "at least one strategy is required"));
        }
        if !(0.0..=1.0).contains(&self.p_risk) {
            return Err(HarnessError::config("p_risk", "must lie in [0, 1]"));
        }
        if self.epochs < 1 {
            return Err(HarnessError::config("epochs", "must be at least 1"));
        }
        if self.rounds < 1 {
            return Err(HarnessError::config("rounds", "must be at least 1"));
        }
        self.solver.validate().map_err(|e| HarnessError::config("solver", e.to_string()))?;
        let server = ServerProfile {
            f_s: self.server.f_s.resolve(Dimension::Compute, "server.f_s")?,
            w_dl: self.server.dl_bw.resolve(Dimension::Bandwidth, "server.dl_bw")?,
            w_ul: self.server.ul_bw.resolve(Dimension::Bandwidth, "server.ul_bw")?,
            tx_power: self.server.tx_power.resolve(Dimension::Power, "server.tx_power")?,
            noise_density: self.server.noise_density.resolve(Dimension::NoiseDensity, "server.noise_density")?,
        };
        server.validate().map_err(|e| HarnessError::config("server", e.to_string()))?;

        let mut fleet = Vec::with_capacity(self.fleet.len());
        let mut overrides = Vec::with_capacity(self.fleet.len());
        for (i, d) in self.fleet.iter().enumerate() {
            let path = |f: &str| format!("fleet[{i}].{f}");
            let dev = DeviceProfile {
                id: d.id.clone(),
                f_d: d.f_d.resolve(Dimension::Compute, &path("f_d"))?,
                tx_power: match &d.tx_power {
                    Some(q) => q.resolve(Dimension::Power, &path("tx_power"))?,
                    None => DEFAULT_DEVICE_POWER,
                },
                channel_gain: d.channel_gain.unwrap_or(DEFAULT_CHANNEL_GAIN),
                dataset_size: d.dataset_size.unwrap_or(DEFAULT_DATASET),
                minibatch: d.minibatch.unwrap_or(DEFAULT_MINIBATCH),
            };
            dev.validate().map_err(|e| HarnessError::config(format!("fleet[{i}]"), e.to_string()))?;
            let rate = |q: &Option<Quantity>, f: &str| -> Result<Option<f64>, HarnessError> {
                match q {
                    Some(q) => {
                        let v = q.resolve(Dimension::Bandwidth, &path(f))?;
                        if v <= 0.0 {
                            return Err(HarnessError::config(path(f), "rate must be positive"));
                        }
                        Ok(Some(v))
                    }
                    None => Ok(None),
                }
            };
            overrides.push((rate(&d.dl_rate, "dl_rate")?, rate(&d.ul_rate, "ul_rate")?));
            fleet.push(dev);
        }

        let cost = match (&self.model.preset, &self.model.custom) {
            (Some(name), None) => {
                CostModel::preset(name).map_err(|e| HarnessError::config("model.preset", e.to_string()))?
            }
            (None, Some(model)) => model.clone(),
            _ => return Err(HarnessError::config("model", "exactly one of preset or custom is required")),
        };
        let workload =
            WorkloadModel::new(cost, self.model.kappa).map_err(|e| HarnessError::config("model", e.to_string()))?;
        let risk_profile = match &self.risk_profile {
            Some(p) => p.clone(),
            None => RiskProfile::synthetic(workload.layers()),
        };
        if risk_profile.layers() != workload.layers() {
            return Err(HarnessError::config(
                "risk_profile",
                format!("profile has {} layers but the model has {}", risk_profile.layers(), workload.layers()),
            ));
        }
        Ok(Resolved {
            fleet,
            rate_overrides: overrides,
            server,
            link: self.link,
            workload,
            risk_profile,
            p_risk: self.p_risk,
            epochs: self.epochs,
        })
    }
}

/// A validated configuration in canonical units.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub fleet: Vec<DeviceProfile>,
    pub rate_overrides: Vec<(Option<f64>, Option<f64>)>,
    pub server: ServerProfile,
    pub link: LinkKind,
    pub workload: WorkloadModel,
    pub risk_profile: RiskProfile,
    pub p_risk: f64,
    pub epochs: u32,
}

impl Resolved {
    pub fn with_sweep(&self, param: SweepParam, value: f64) -> Self {
        let mut r = self.clone();
        match param {
            SweepParam::PRisk => r.p_risk = value,
            SweepParam::FS => r.server.f_s = value,
            SweepParam::UlBw => r.server.w_ul = value,
            SweepParam::DlBw => r.server.w_dl = value,
        }
        r
    }

    pub fn instance(&self) -> Result<ProblemInstance, ProblemError> {
        let link = match self.link {
            LinkKind::Shannon => LinkMode::Shannon,
            LinkKind::Direct => LinkMode::Direct(
                self.rate_overrides
                    .iter()
                    .map(|(dl, ul)| (dl.unwrap_or(self.server.w_dl), ul.unwrap_or(self.server.w_ul)))
                    .collect(),
            ),
        };
        ProblemInstance::new(InstanceSpec {
            fleet: self.fleet.clone(),
            server: self.server.clone(),
            workload: self.workload.clone(),
            risk_profile: self.risk_profile.clone(),
            p_risk: self.p_risk,
            epochs: self.epochs,
            link,
            relaxed: false,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Evaluated {
    pub plan: Plan,
    pub objective: f64,
    pub schedule: ScheduleResult,
    pub violations: usize,
    pub trace: Option<SolverTrace>,
}

#[derive(Debug, Clone)]
pub enum Status {
    Ok(Box<Evaluated>),
    Infeasible(String),
}

#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub strategy: StrategyName,
    pub schedule: ScheduleMode,
    pub sweep_value: Option<f64>,
    pub status: Status,
}

impl StrategyOutcome {
    pub fn evaluated(&self) -> Option<&Evaluated> {
        match &self.status {
            Status::Ok(e) => Some(e),
            Status::Infeasible(_) => None,
        }
    }

    pub fn objective(&self) -> Option<f64> {
        self.evaluated().map(|e| e.objective)
    }
}

/// Builds or solves the plan for one strategy. Infeasibility is returned
/// in-band; solver failures are hard errors.
pub fn run_strategy(
    strategy: StrategyName,
    p: &ProblemInstance,
    cfg: &SolverConfig,
    pf_basis: PfBasis,
    mode: Option<ScheduleMode>,
) -> Result<Status, HarnessError> {
    let (plan, trace) = match strategy.strategy(pf_basis) {
        None => {
            let sol = solver::solve(p, cfg).map_err(HarnessError::Solver)?;
            (sol.plan, Some(sol.trace))
        }
        Some(s) => match baselines::build_plan(&s, p, cfg) {
            Ok(plan) => (plan, None),
            Err(BaselineError::Solver(e)) => return Err(HarnessError::Solver(e)),
            Err(e) => return Ok(Status::Infeasible(e.to_string())),
        },
    };
    let mode = mode.unwrap_or(strategy.schedule());
    let objective = p.objective(&plan).map_err(|e| HarnessError::Data(e.to_string()))?;
    let schedule = simulator::simulate_round(&plan, p, mode).map_err(|e| HarnessError::Data(e.to_string()))?;
    let violations = p.check_feasible(&plan).len();
    Ok(Status::Ok(Box::new(Evaluated { plan, objective, schedule, violations, trace })))
}

/// Runs every configured strategy on one (possibly swept) configuration.
pub fn evaluate_point(
    resolved: &Resolved,
    config: &ExperimentConfig,
    sweep_value: Option<f64>,
    mode: Option<ScheduleMode>,
) -> Result<Vec<StrategyOutcome>, HarnessError> {
    let cfg = config.solver_config();
    let instance = resolved.instance();
    config
        .strategies
        .iter()
        .map(|&strategy| {
            let schedule = mode.unwrap_or(strategy.schedule());
            let status = match &instance {
                Ok(p) => run_strategy(strategy, p, &cfg, config.pf_basis, mode)?,
                Err(e) => Status::Infeasible(e.to_string()),
            };
            Ok(StrategyOutcome { strategy, schedule, sweep_value, status })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub sweep_param: Option<SweepParam>,
    pub device_ids: Vec<String>,
    pub outcomes: Vec<StrategyOutcome>,
}

impl RunReport {
    pub fn find(&self, strategy: StrategyName, sweep_value: Option<f64>) -> Option<&StrategyOutcome> {
        self.outcomes.iter().find(|o| o.strategy == strategy && o.sweep_value == sweep_value)
    }

    pub fn warnings(&self) -> Vec<String> {
        self.outcomes
            .iter()
            .filter_map(|o| match &o.status {
                Status::Infeasible(msg) => Some(format!("{} infeasible: {msg}", o.strategy)),
                Status::Ok(_) => None,
            })
            .collect()
    }
}

/// Single configuration, every strategy.
pub fn run_plan(config: &ExperimentConfig, mode: Option<ScheduleMode>) -> Result<RunReport, HarnessError> {
    let resolved = config.resolve()?;
    let outcomes = evaluate_point(&resolved, config, None, mode)?;
    Ok(RunReport {
        config_hash: config.hash(),
        seed: config.seed,
        sweep_param: None,
        device_ids: resolved.fleet.iter().map(|d| d.id.clone()).collect(),
        outcomes,
    })
}

/// Every sweep point, every strategy; points run concurrently and are
/// reported in sweep order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    let sweep = config.sweep.as_ref().ok_or_else(|| HarnessError::config("sweep", "no sweep specified"))?;
    let values = sweep.values()?;
    let resolved = config.resolve()?;
    let per_point: Vec<Result<Vec<StrategyOutcome>, HarnessError>> = values
        .par_iter()
        .map(|&v| evaluate_point(&resolved.with_sweep(sweep.parameter, v), config, Some(v), None))
        .collect();
    let mut outcomes = Vec::new();
    for r in per_point {
        outcomes.extend(r?);
    }
    Ok(RunReport {
        config_hash: config.hash(),
        seed: config.seed,
        sweep_param: Some(sweep.parameter),
        device_ids: resolved.fleet.iter().map(|d| d.id.clone()).collect(),
        outcomes,
    })
}

pub const PLANS_HEADER: &str =
    "strategy,sweep_param,sweep_value,seed,config_hash,device_id,cut_layer,mu_dl,mu_ul,theta,round_latency_s";
pub const LATENCY_HEADER: &str =
    "strategy,sweep_param,sweep_value,seed,config_hash,status,schedule,objective_s,round_s,wait_mean_s,wait_var_s2,violations,outer_iterations,messages,note";
pub const WAITING_HEADER: &str = "strategy,sweep_param,sweep_value,seed,config_hash,device_id,finish_s,waiting_s";
pub const TRACE_HEADER: &str =
    "strategy,sweep_param,sweep_value,seed,config_hash,iteration,block,objective_s,inner_iterations,residual,messages";
pub const TIMELINE_HEADER: &str = "strategy,sweep_param,sweep_value,seed,config_hash,round,elapsed_s";

fn provenance(report: &RunReport, o: &StrategyOutcome) -> String {
    let param = report.sweep_param.map_or("", SweepParam::as_str);
    let value = o.sweep_value.map_or(String::new(), |v| v.to_string());
    format!("{},{},{},{},{}", o.strategy, param, value, report.seed, report.config_hash)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn block_name(b: Block) -> String {
    match b {
        Block::Cut => "cut".into(),
        Block::Share(r) => r.name().to_string(),
        Block::FinalShare(r) => format!("final_{}", r.name()),
    }
}

pub fn plans_csv(report: &RunReport) -> String {
    let mut out = format!("{PLANS_HEADER}\n");
    for o in &report.outcomes {
        if let Some(e) = o.evaluated() {
            let prov = provenance(report, o);
            for (n, d) in e.plan.decisions.iter().enumerate() {
                let tau = e.schedule.finish.get(n).copied().unwrap_or(0.0);
                let tau =
                    if o.schedule == ScheduleMode::Sequential && n > 0 { tau - e.schedule.finish[n - 1] } else { tau };
                let _ = writeln!(
                    out,
                    "{prov},{},{},{},{},{},{}",
                    csv_field(&report.device_ids[n]),
                    d.x,
                    d.share(Resource::Dl),
                    d.share(Resource::Ul),
                    d.share(Resource::Compute),
                    tau
                );
            }
        }
    }
    out
}

pub fn latency_csv(report: &RunReport) -> String {
    let mut out = format!("{LATENCY_HEADER}\n");
    for o in &report.outcomes {
        let prov = provenance(report, o);
        match &o.status {
            Status::Ok(e) => {
                let (mean, var) = simulator::waiting_stats(&e.schedule);
                let (outer, messages) =
                    e.trace.as_ref().map_or((0, 0), |t| (t.outer_iterations(), simulator::message_overhead(t).total));
                let _ = writeln!(
                    out,
                    "{prov},ok,{},{},{},{mean},{var},{},{outer},{messages},",
                    o.schedule, e.objective, e.schedule.round_latency, e.violations
                );
            }
            Status::Infeasible(msg) => {
                let _ = writeln!(out, "{prov},infeasible,{},,,,,,,,{}", o.schedule, csv_field(msg));
            }
        }
    }
    out
}

pub fn waiting_csv(report: &RunReport) -> String {
    let mut out = format!("{WAITING_HEADER}\n");
    for o in &report.outcomes {
        if let Some(e) = o.evaluated() {
            let prov = provenance(report, o);
            for (n, (f, w)) in e.schedule.finish.iter().zip(&e.schedule.waiting).enumerate() {
                let _ = writeln!(out, "{prov},{},{f},{w}", csv_field(&report.device_ids[n]));
            }
        }
    }
    out
}

pub fn trace_csv(report: &RunReport) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for o in &report.outcomes {
        let Some(t) = o.evaluated().and_then(|e| e.trace.as_ref()) else { continue };
        let prov = provenance(report, o);
        let _ = writeln!(out, "{prov},0,init,{},0,,0", t.objective[0]);
        for b in &t.blocks {
            let q = t.objective.get(b.outer).copied().unwrap_or(f64::NAN);
            let residual = if b.block == Block::Cut { String::new() } else { b.final_residual.to_string() };
            let _ = writeln!(
                out,
                "{prov},{},{},{q},{},{residual},{}",
                b.outer,
                block_name(b.block),
                b.iterations,
                b.uploads + b.broadcasts
            );
        }
    }
    out
}

pub fn timeline_csv(report: &RunReport, rounds: u32) -> String {
    let mut out = format!("{TIMELINE_HEADER}\n");
    for o in &report.outcomes {
        if let Some(e) = o.evaluated() {
            let prov = provenance(report, o);
            for k in 1..=rounds {
                let _ = writeln!(out, "{prov},{k},{}", f64::from(k) * e.schedule.round_latency);
            }
        }
    }
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, HarnessError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Writes the four run CSVs into `dir`.
pub fn write_artifacts(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    Ok(vec![
        write_file(dir, "plans.csv", &plans_csv(report))?,
        write_file(dir, "latency.csv", &latency_csv(report))?,
        write_file(dir, "waiting.csv", &waiting_csv(report))?,
        write_file(dir, "trace.csv", &trace_csv(report))?,
    ])
}

pub fn write_timeline(report: &RunReport, rounds: u32, dir: &Path) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write_file(dir, "timeline.csv", &timeline_csv(report, rounds))
}

/// Turns a `latency.csv` into one whitespace-separated series file per
/// strategy (`sweep_value objective_s round_s`) plus `index.dat`.
pub fn emit_plot_data(csv_path: &Path, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| HarnessError::io(csv_path, e))?;
    let headers = reader.headers().map_err(|e| HarnessError::io(csv_path, e))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::Data(format!("{}: missing column {name:?}", csv_path.display())))
    };
    let (c_strategy, c_value, c_status, c_obj, c_round) =
        (column("strategy")?, column("sweep_value")?, column("status")?, column("objective_s")?, column("round_s")?);

    let mut series: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| HarnessError::Data(format!("{} line {line}: {e}", csv_path.display())))?;
        let get = |c: usize| record.get(c).unwrap_or("");
        let lines = series.entry(get(c_strategy).to_string()).or_default();
        if get(c_status) != "ok" {
            continue;
        }
        let mut fields = Vec::with_capacity(3);
        for c in [c_value, c_obj, c_round] {
            let v = get(c);
            let v = if v.is_empty() && c == c_value { "0" } else { v };
            v.parse::<f64>().map_err(|_| {
                HarnessError::Data(format!("{} line {line}: {:?} is not a number", csv_path.display(), v))
            })?;
            fields.push(v.to_string());
        }
        lines.push(fields.join(" "));
    }

    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();
    let mut index = String::from("# strategy file\n");
    for (strategy, lines) in &series {
        let name = format!("{strategy}.dat");
        let mut body = String::from("# sweep_value objective_s round_s\n");
        for l in lines {
            body.push_str(l);
            body.push('\n');
        }
        written.push(write_file(dir, &name, &body)?);
        let _ = writeln!(index, "{strategy} {name}");
    }
    written.push(write_file(dir, "index.dat", &index)?);
    Ok(written)
}

/// Fits a regression row to `x,y` samples read from a CSV with a header.
pub fn fit_csv(path: &Path, kind: FitKind) -> Result<cost_models::FitResult, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| HarnessError::Data(format!("{} line {line}: {e}", path.display())))?;
        let parse = |c: usize| -> Result<f64, HarnessError> {
            record.get(c).and_then(|v| v.trim().parse().ok()).ok_or_else(|| {
                HarnessError::Data(format!("{} line {line}: expected two numeric columns", path.display()))
            })
        };
        samples.push((parse(0)?, parse(1)?));
    }
    cost_models::fit(kind, &samples).map_err(|e| HarnessError::Data(e.to_string()))
}
