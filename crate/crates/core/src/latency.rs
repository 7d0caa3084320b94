//! Per-round training latency of one end device.
//!
//! A round is a start phase (device-side model download), `epochs` passes of
//! `ceil(D/B)` mini-batches each, and an end phase (device-side model upload).
//! Every mini-batch goes through six steps: device forward, smashed-data
//! upload, server forward, server backward, gradient download and device
//! backward.
//!
//! Units: workloads in GFLOPs against capacities in GFLOPS give seconds
//! directly; sizes in Mbit are scaled by 1e6 before dividing by bit/s rates.
//! Server-side aggregation is treated as instantaneous.
//!
//! For a fixed cut position the round latency is affine in the reciprocals of
//! the three shares, `a + c_dl/mu_dl + c_ul/mu_ul + c_theta/theta`, which is
//! what [`ResourceCosts`] captures.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_models::{CostModelError, Workload, Workloads};

const MBIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatencyError {
    #[error(transparent)]
    Cost(#[from] CostModelError),
    #[error("{what} must lie in (0, 1], got {value}")]
    InvalidShare { what: &'static str, value: f64 },
    #[error("invalid device profile `{id}`: {reason}")]
    InvalidDevice { id: String, reason: String },
    #[error("invalid server profile: {0}")]
    InvalidServer(String),
    #[error("epochs must be at least 1")]
    NoEpochs,
    #[error("direct link rates must be positive, got dl={dl}, ul={ul}")]
    InvalidRates { dl: f64, ul: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: String,
    /// Compute capacity, GFLOPS.
    pub f_d: f64,
    /// Transmit power, W.
    pub tx_power: f64,
    /// Channel power gain |h|².
    pub channel_gain: f64,
    /// Local dataset size, samples.
    pub dataset_size: u64,
    /// Mini-batch size, samples.
    pub minibatch: u64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), LatencyError> {
        let bad = |reason: &str| LatencyError::InvalidDevice { id: self.id.clone(), reason: reason.into() };
        if !(self.f_d > 0.0 && self.f_d.is_finite()) {
            return Err(bad("compute capacity must be positive"));
        }
        if self.minibatch < 1 {
            return Err(bad("mini-batch size must be at least 1"));
        }
        if self.dataset_size < self.minibatch {
            return Err(bad("dataset must hold at least one mini-batch"));
        }
        if !(self.tx_power > 0.0 && self.tx_power.is_finite()) {
            return Err(bad("transmit power must be positive"));
        }
        if !(self.channel_gain > 0.0 && self.channel_gain.is_finite()) {
            return Err(bad("channel gain must be positive"));
        }
        Ok(())
    }

    /// Mini-batches per epoch, `ceil(D/B)`.
    pub fn batches(&self) -> u64 {
        self.dataset_size.div_ceil(self.minibatch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerProfile {
    /// Compute capacity, GFLOPS.
    pub f_s: f64,
    /// Downlink bandwidth, Hz.
    pub w_dl: f64,
    /// Uplink bandwidth, Hz.
    pub w_ul: f64,
    /// Transmit power, W.
    pub tx_power: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_density: f64,
}

impl ServerProfile {
    pub fn validate(&self) -> Result<(), LatencyError> {
        for (name, v) in [
            ("f_s", self.f_s),
            ("w_dl", self.w_dl),
            ("w_ul", self.w_ul),
            ("tx_power", self.tx_power),
            ("noise_density", self.noise_density),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LatencyError::InvalidServer(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Dl,
    Ul,
}

/// How one device's full-share link rate is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeviceLink {
    /// `W·log2(1 + P|h|²/(W·N0))` from the server and device radio parameters.
    Shannon,
    /// Fixed full-share rates in bit/s.
    Direct { dl: f64, ul: f64 },
}

/// Link model for a whole fleet.
#[derive(Debug, Clone, PartialEq)]
pub enum LinkMode {
    Shannon,
    /// One `(dl, ul)` pair of full-share rates (bit/s) per device.
    Direct(Vec<(f64, f64)>),
}

impl LinkMode {
    pub fn for_device(&self, index: usize) -> DeviceLink {
        match self {
            LinkMode::Shannon => DeviceLink::Shannon,
            LinkMode::Direct(rates) => {
                let (dl, ul) = rates[index];
                DeviceLink::Direct { dl, ul }
            }
        }
    }

    pub fn validate(&self, fleet_size: usize) -> Result<(), LatencyError> {
        if let LinkMode::Direct(rates) = self {
            if rates.len() != fleet_size {
                return Err(LatencyError::InvalidServer(format!(
                    "direct link mode lists {} rate pairs for {fleet_size} devices",
                    rates.len()
                )));
            }
            for &(dl, ul) in rates {
                if !(dl > 0.0 && ul > 0.0 && dl.is_finite() && ul.is_finite()) {
                    return Err(LatencyError::InvalidRates { dl, ul });
                }
            }
        }
        Ok(())
    }
}

/// Full-share (mu = 1) rate in bit/s.
pub fn full_rate(direction: Direction, server: &ServerProfile, device: &DeviceProfile, link: DeviceLink) -> f64 {
    match (link, direction) {
        (DeviceLink::Direct { dl, .. }, Direction::Dl) => dl,
        (DeviceLink::Direct { ul, .. }, Direction::Ul) => ul,
        (DeviceLink::Shannon, Direction::Dl) => {
            shannon(server.w_dl, server.tx_power, device.channel_gain, server.noise_density)
        }
        (DeviceLink::Shannon, Direction::Ul) => {
            shannon(server.w_ul, device.tx_power, device.channel_gain, server.noise_density)
        }
    }
}

fn shannon(bandwidth: f64, power: f64, gain: f64, noise_density: f64) -> f64 {
    bandwidth * (1.0 + power * gain / (bandwidth * noise_density)).log2()
}

/// Rate in bit/s granted to a device holding share `mu` of the link.
pub fn link_rate(
    direction: Direction,
    server: &ServerProfile,
    device: &DeviceProfile,
    mu: f64,
    link: DeviceLink,
) -> Result<f64, LatencyError> {
    check_share("link share", mu)?;
    Ok(mu * full_rate(direction, server, device, link))
}

fn check_share(what: &'static str, value: f64) -> Result<(), LatencyError> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(LatencyError::InvalidShare { what, value })
    }
}

/// One device's decision: continuous cut position and three resource shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// Cut position in `[1, L]`.
    pub x: f64,
    pub mu_dl: f64,
    pub mu_ul: f64,
    pub theta: f64,
}

impl Decision {
    pub fn new(x: f64, mu_dl: f64, mu_ul: f64, theta: f64) -> Self {
        Self { x, mu_dl, mu_ul, theta }
    }

    pub fn share(&self, resource: Resource) -> f64 {
        match resource {
            Resource::Dl => self.mu_dl,
            Resource::Ul => self.mu_ul,
            Resource::Compute => self.theta,
        }
    }

    pub fn set_share(&mut self, resource: Resource, value: f64) {
        match resource {
            Resource::Dl => self.mu_dl = value,
            Resource::Ul => self.mu_ul = value,
            Resource::Compute => self.theta = value,
        }
    }
}

/// The three server-side resources shared among devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resource {
    Dl,
    Ul,
    Compute,
}

impl Resource {
    pub const ALL: [Resource; 3] = [Resource::Dl, Resource::Ul, Resource::Compute];

    pub fn name(self) -> &'static str {
        match self {
            Resource::Dl => "dl",
            Resource::Ul => "ul",
            Resource::Compute => "compute",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LatencyBreakdown {
    pub start: f64,
    pub dev_fwd: f64,
    pub smash_up: f64,
    pub srv_fwd: f64,
    pub srv_bwd: f64,
    pub grad_down: f64,
    pub dev_bwd: f64,
    pub epoch: f64,
    pub end: f64,
    pub round: f64,
    pub epochs: u32,
    pub batches: u64,
}

impl LatencyBreakdown {
    pub fn batch_sum(&self) -> f64 {
        self.dev_fwd + self.smash_up + self.srv_fwd + self.srv_bwd + self.grad_down + self.dev_bwd
    }
}

/// Everything the latency formulas need about one device.
#[derive(Debug, Clone, Copy)]
pub struct DeviceContext<'a> {
    pub device: &'a DeviceProfile,
    pub server: &'a ServerProfile,
    pub link: DeviceLink,
    pub epochs: u32,
}

impl DeviceContext<'_> {
    fn passes(&self) -> f64 {
        f64::from(self.epochs) * self.device.batches() as f64
    }
}

fn check_decision(d: &Decision, epochs: u32) -> Result<(), LatencyError> {
    check_share("mu_dl", d.mu_dl)?;
    check_share("mu_ul", d.mu_ul)?;
    check_share("theta", d.theta)?;
    if epochs < 1 {
        return Err(LatencyError::NoEpochs);
    }
    Ok(())
}

pub fn round_latency<W: Workload + ?Sized>(
    ctx: &DeviceContext<'_>,
    wl: &W,
    d: &Decision,
) -> Result<LatencyBreakdown, LatencyError> {
    check_decision(d, ctx.epochs)?;
    let w = wl.at(d.x)?;
    let b = ctx.device.minibatch as f64;
    let r_dl = link_rate(Direction::Dl, ctx.server, ctx.device, d.mu_dl, ctx.link)?;
    let r_ul = link_rate(Direction::Ul, ctx.server, ctx.device, d.mu_ul, ctx.link)?;
    let f_d = ctx.device.f_d;
    let f_srv = d.theta * ctx.server.f_s;

    let mut out = LatencyBreakdown {
        start: w.model_size * MBIT / r_dl,
        dev_fwd: b * w.device_fwd / f_d,
        smash_up: b * w.smashed_size * MBIT / r_ul,
        srv_fwd: b * w.server_fwd / f_srv,
        srv_bwd: b * w.server_bwd / f_srv,
        grad_down: b * w.grad_size * MBIT / r_dl,
        dev_bwd: b * w.device_bwd / f_d,
        end: w.model_size * MBIT / r_ul,
        epochs: ctx.epochs,
        batches: ctx.device.batches(),
        ..LatencyBreakdown::default()
    };
    out.epoch = out.batches as f64 * out.batch_sum();
    out.round = out.start + f64::from(out.epochs) * out.epoch + out.end;
    Ok(out)
}

/// Round latency decomposed as `base + c_dl/mu_dl + c_ul/mu_ul + c_theta/theta`
/// for a fixed cut position.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResourceCosts {
    /// Share-independent part (device compute), s.
    pub base: f64,
    pub c_dl: f64,
    pub c_ul: f64,
    pub c_theta: f64,
}

impl ResourceCosts {
    pub fn cost(&self, resource: Resource) -> f64 {
        match resource {
            Resource::Dl => self.c_dl,
            Resource::Ul => self.c_ul,
            Resource::Compute => self.c_theta,
        }
    }

    pub fn latency(&self, d: &Decision) -> f64 {
        self.base + self.c_dl / d.mu_dl + self.c_ul / d.mu_ul + self.c_theta / d.theta
    }

    /// Second derivative with respect to one share; the Hessian in the shares
    /// is diagonal.
    pub fn second_derivative(&self, resource: Resource, share: f64) -> f64 {
        2.0 * self.cost(resource) / share.powi(3)
    }
}

fn costs_from(ctx: &DeviceContext<'_>, w: &Workloads) -> ResourceCosts {
    let b = ctx.device.minibatch as f64;
    let passes = ctx.passes();
    let r_dl = full_rate(Direction::Dl, ctx.server, ctx.device, ctx.link);
    let r_ul = full_rate(Direction::Ul, ctx.server, ctx.device, ctx.link);
    ResourceCosts {
        base: passes * b * (w.device_fwd + w.device_bwd) / ctx.device.f_d,
        c_dl: (w.model_size + passes * b * w.grad_size) * MBIT / r_dl,
        c_ul: (w.model_size + passes * b * w.smashed_size) * MBIT / r_ul,
        c_theta: passes * b * (w.server_fwd + w.server_bwd) / ctx.server.f_s,
    }
}

pub fn resource_costs<W: Workload + ?Sized>(
    ctx: &DeviceContext<'_>,
    wl: &W,
    x: f64,
) -> Result<ResourceCosts, LatencyError> {
    if ctx.epochs < 1 {
        return Err(LatencyError::NoEpochs);
    }
    Ok(costs_from(ctx, &wl.at(x)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatencyGradient {
    pub d_x: f64,
    pub d_mu_dl: f64,
    pub d_mu_ul: f64,
    pub d_theta: f64,
}

/// Analytic partial derivatives of the round latency.
///
/// Where a regression row is clamped at its floor its contribution to `d_x`
/// is zero.
pub fn round_latency_gradient<W: Workload + ?Sized>(
    ctx: &DeviceContext<'_>,
    wl: &W,
    d: &Decision,
) -> Result<LatencyGradient, LatencyError> {
    check_decision(d, ctx.epochs)?;
    let c = costs_from(ctx, &wl.at(d.x)?);
    let dc = costs_from(ctx, &wl.derivative_at(d.x)?);
    Ok(LatencyGradient {
        d_x: dc.latency(d),
        d_mu_dl: -c.c_dl / (d.mu_dl * d.mu_dl),
        d_mu_ul: -c.c_ul / (d.mu_ul * d.mu_ul),
        d_theta: -c.c_theta / (d.theta * d.theta),
    })
}

/// `d/dx` of the round latency only.
pub fn cut_derivative<W: Workload + ?Sized>(
    ctx: &DeviceContext<'_>,
    wl: &W,
    d: &Decision,
) -> Result<f64, LatencyError> {
    check_decision(d, ctx.epochs)?;
    Ok(costs_from(ctx, &wl.derivative_at(d.x)?).latency(d))
}
