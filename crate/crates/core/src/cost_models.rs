//! Regression cost models for per-layer workloads and transfer sizes.
//!
//! Two families are supported: quadratic polynomials (`a2·x² + a1·x + a0`)
//! for forward/backward workloads and device-side model size, and reciprocal
//! models (`num/x + off`) for smashed-data and gradient sizes. Workloads are
//! GFLOPs per sample, sizes are Mbit (per sample for transfers, total for the
//! device-side model).
//!
//! Raw regression outputs can go negative near the edges of the cut-layer
//! domain. Evaluation clamps them at a floor (0 by default) and reports a zero
//! derivative wherever the clamp is active.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostModelError {
    #[error("cut position {x} outside the domain [1, {layers}]")]
    OutOfDomain { x: f64, layers: u32 },
    #[error("reciprocal model evaluated at non-positive x = {0}")]
    NonPositiveReciprocal(f64),
    #[error("unknown cost-model preset `{0}` (expected resnet18 or resnet34)")]
    UnknownPreset(String),
    #[error("{kind} fit needs at least {needed} samples with distinct x, got {got}")]
    TooFewSamples { kind: FitKind, needed: usize, got: usize },
    #[error("{0} fit failed: design matrix is rank deficient")]
    RankDeficient(FitKind),
    #[error("invalid cost model: {0}")]
    Invalid(String),
    #[error("backward/forward workload ratio must be positive, got {0}")]
    NonPositiveKappa(f64),
}

/// Common interface of the two regression families.
pub trait Regression {
    fn raw(&self, x: f64) -> f64;
    fn raw_derivative(&self, x: f64) -> f64;

    fn clamped(&self, x: f64, floor: f64) -> f64 {
        self.raw(x).max(floor)
    }

    /// Derivative of the clamped model; zero where the floor is active.
    fn clamped_derivative(&self, x: f64, floor: f64) -> f64 {
        if self.raw(x) < floor {
            0.0
        } else {
            self.raw_derivative(x)
        }
    }
}

/// Serialized form of a regression row: `{"kind": "qpr", "coeffs": [a2, a1, a0]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowSpec {
    kind: FitKind,
    coeffs: Vec<f64>,
}

fn row_coeffs<const K: usize>(spec: RowSpec, kind: FitKind) -> Result<[f64; K], String> {
    if spec.kind != kind {
        return Err(format!("expected a {kind} row, got {}", spec.kind));
    }
    spec.coeffs.try_into().map_err(|c: Vec<f64>| format!("{kind} rows take {K} coefficients, got {}", c.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RowSpec", into = "RowSpec")]
pub struct QprModel {
    pub a2: f64,
    pub a1: f64,
    pub a0: f64,
}

impl QprModel {
    pub const fn new(a2: f64, a1: f64, a0: f64) -> Self {
        Self { a2, a1, a0 }
    }

    pub fn coeffs(&self) -> [f64; 3] {
        [self.a2, self.a1, self.a0]
    }
}

impl TryFrom<RowSpec> for QprModel {
    type Error = String;

    fn try_from(spec: RowSpec) -> Result<Self, Self::Error> {
        let [a2, a1, a0] = row_coeffs(spec, FitKind::Qpr)?;
        Ok(Self::new(a2, a1, a0))
    }
}

impl From<QprModel> for RowSpec {
    fn from(m: QprModel) -> Self {
        RowSpec { kind: FitKind::Qpr, coeffs: m.coeffs().to_vec() }
    }
}

impl Regression for QprModel {
    fn raw(&self, x: f64) -> f64 {
        (self.a2 * x + self.a1) * x + self.a0
    }

    fn raw_derivative(&self, x: f64) -> f64 {
        2.0 * self.a2 * x + self.a1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RowSpec", into = "RowSpec")]
pub struct RrModel {
    pub num: f64,
    pub off: f64,
}

impl RrModel {
    pub const fn new(num: f64, off: f64) -> Self {
        Self { num, off }
    }

    pub fn coeffs(&self) -> [f64; 2] {
        [self.num, self.off]
    }
}

impl TryFrom<RowSpec> for RrModel {
    type Error = String;

    fn try_from(spec: RowSpec) -> Result<Self, Self::Error> {
        let [num, off] = row_coeffs(spec, FitKind::Rr)?;
        Ok(Self::new(num, off))
    }
}

impl From<RrModel> for RowSpec {
    fn from(m: RrModel) -> Self {
        RowSpec { kind: FitKind::Rr, coeffs: m.coeffs().to_vec() }
    }
}

impl Regression for RrModel {
    fn raw(&self, x: f64) -> f64 {
        self.num / x + self.off
    }

    fn raw_derivative(&self, x: f64) -> f64 {
        -self.num / (x * x)
    }
}

/// Identifies one of the five regression rows of a [`CostModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CostPart {
    ModelSize,
    FwdShare,
    BwdShare,
    SmashedUp,
    GradDown,
}

/// The five regression rows profiled for one DNN architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub name: String,
    /// Number of candidate cut positions `L`.
    pub layers: u32,
    pub model_size: QprModel,
    pub fwd_share: QprModel,
    pub bwd_share: QprModel,
    pub smashed_up: RrModel,
    pub grad_down: RrModel,
    #[serde(default)]
    pub floor: f64,
}

impl CostModel {
    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), CostModelError> {
        if self.layers < 1 {
            return Err(CostModelError::Invalid("layer count must be at least 1".into()));
        }
        if !(self.floor >= 0.0 && self.floor.is_finite()) {
            return Err(CostModelError::Invalid(format!("floor must be finite and >= 0, got {}", self.floor)));
        }
        let finite = self
            .model_size
            .coeffs()
            .iter()
            .chain(self.fwd_share.coeffs().iter())
            .chain(self.bwd_share.coeffs().iter())
            .chain(self.smashed_up.coeffs().iter())
            .chain(self.grad_down.coeffs().iter())
            .all(|c| c.is_finite());
        if !finite {
            return Err(CostModelError::Invalid("non-finite coefficient".into()));
        }
        if self.smashed_up.num <= 0.0 || self.grad_down.num <= 0.0 {
            return Err(CostModelError::Invalid("reciprocal numerators must be positive".into()));
        }
        Ok(())
    }

    pub fn check_domain(&self, x: f64) -> Result<(), CostModelError> {
        if x.is_finite() && x >= 1.0 && x <= f64::from(self.layers) {
            Ok(())
        } else {
            Err(CostModelError::OutOfDomain { x, layers: self.layers })
        }
    }

    fn part(&self, part: CostPart) -> &dyn Regression {
        match part {
            CostPart::ModelSize => &self.model_size,
            CostPart::FwdShare => &self.fwd_share,
            CostPart::BwdShare => &self.bwd_share,
            CostPart::SmashedUp => &self.smashed_up,
            CostPart::GradDown => &self.grad_down,
        }
    }

    /// Clamped evaluation of one row over the cut-layer domain.
    pub fn eval(&self, part: CostPart, x: f64) -> Result<f64, CostModelError> {
        self.check_domain(x)?;
        Ok(self.part(part).clamped(x, self.floor))
    }

    pub fn eval_derivative(&self, part: CostPart, x: f64) -> Result<f64, CostModelError> {
        self.check_domain(x)?;
        Ok(self.part(part).clamped_derivative(x, self.floor))
    }

    /// Built-in coefficient tables for the two profiled ResNet variants.
    pub fn preset(name: &str) -> Result<Self, CostModelError> {
        let model = match name.to_ascii_lowercase().as_str() {
            "resnet18" => CostModel {
                name: "resnet18".into(),
                // CONV + POOL + 8 BasicBlocks + FC
                layers: 11,
                model_size: QprModel::new(0.9746, -5.58, 6.528),
                fwd_share: QprModel::new(-0.01597, 0.7705, -0.4282),
                bwd_share: QprModel::new(0.01597, -0.7705, 5.8946),
                smashed_up: RrModel::new(3.2028, -0.3443),
                grad_down: RrModel::new(3.2028, -0.3443),
                floor: 0.0,
            },
            "resnet34" => CostModel {
                name: "resnet34".into(),
                // CONV + POOL + 16 BasicBlocks + FC
                layers: 19,
                model_size: QprModel::new(0.4795, -3.517, 5.001),
                fwd_share: QprModel::new(-0.00274, 0.7044, -0.3718),
                bwd_share: QprModel::new(0.00274, -0.7044, 11.3978),
                smashed_up: RrModel::new(2.891, -0.0987),
                grad_down: RrModel::new(2.891, -0.0987),
                floor: 0.0,
            },
            _ => return Err(CostModelError::UnknownPreset(name.to_string())),
        };
        Ok(model)
    }

    /// Builds the four-workload adapter consumed by the latency engine.
    pub fn adapt(&self, kappa: f64) -> Result<WorkloadModel, CostModelError> {
        WorkloadModel::new(self.clone(), kappa)
    }
}

/// Per-sample workloads (GFLOPs) and data sizes (Mbit) at one cut position.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Workloads {
    pub device_fwd: f64,
    pub device_bwd: f64,
    pub server_fwd: f64,
    pub server_bwd: f64,
    pub smashed_size: f64,
    pub grad_size: f64,
    pub model_size: f64,
}

/// Source of workloads and their derivatives with respect to the cut position.
pub trait Workload {
    fn layers(&self) -> u32;
    fn at(&self, x: f64) -> Result<Workloads, CostModelError>;
    fn derivative_at(&self, x: f64) -> Result<Workloads, CostModelError>;
}

/// Maps the two profiled workload rows onto the four workloads of a round.
///
/// `fwd_share` is the device-side forward workload and `bwd_share` the
/// server-side backward workload; the other two follow from the
/// backward/forward ratio `kappa`. At `x = L` the server-side model is empty,
/// so server workloads and both transfer sizes are forced to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadModel {
    cost: CostModel,
    kappa: f64,
}

impl WorkloadModel {
    pub fn new(cost: CostModel, kappa: f64) -> Result<Self, CostModelError> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(CostModelError::NonPositiveKappa(kappa));
        }
        cost.validate()?;
        Ok(Self { cost, kappa })
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    fn is_full_device(&self, x: f64) -> bool {
        x >= f64::from(self.cost.layers)
    }
}

impl Workload for WorkloadModel {
    fn layers(&self) -> u32 {
        self.cost.layers
    }

    fn at(&self, x: f64) -> Result<Workloads, CostModelError> {
        let c = &self.cost;
        let device_fwd = c.eval(CostPart::FwdShare, x)?;
        let model_size = c.eval(CostPart::ModelSize, x)?;
        if self.is_full_device(x) {
            return Ok(Workloads {
                device_fwd,
                device_bwd: self.kappa * device_fwd,
                model_size,
                ..Workloads::default()
            });
        }
        let server_bwd = c.eval(CostPart::BwdShare, x)?;
        Ok(Workloads {
            device_fwd,
            device_bwd: self.kappa * device_fwd,
            server_fwd: server_bwd / self.kappa,
            server_bwd,
            smashed_size: c.eval(CostPart::SmashedUp, x)?,
            grad_size: c.eval(CostPart::GradDown, x)?,
            model_size,
        })
    }

    fn derivative_at(&self, x: f64) -> Result<Workloads, CostModelError> {
        let c = &self.cost;
        let device_fwd = c.eval_derivative(CostPart::FwdShare, x)?;
        let model_size = c.eval_derivative(CostPart::ModelSize, x)?;
        if self.is_full_device(x) {
            return Ok(Workloads {
                device_fwd,
                device_bwd: self.kappa * device_fwd,
                model_size,
                ..Workloads::default()
            });
        }
        let server_bwd = c.eval_derivative(CostPart::BwdShare, x)?;
        Ok(Workloads {
            device_fwd,
            device_bwd: self.kappa * device_fwd,
            server_fwd: server_bwd / self.kappa,
            server_bwd,
            smashed_size: c.eval_derivative(CostPart::SmashedUp, x)?,
            grad_size: c.eval_derivative(CostPart::GradDown, x)?,
            model_size,
        })
    }
}

/// Workloads that do not depend on the cut position. Handy for pinning the
/// latency arithmetic independently of any regression table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantWorkload {
    pub layers: u32,
    pub values: Workloads,
}

impl Workload for ConstantWorkload {
    fn layers(&self) -> u32 {
        self.layers
    }

    fn at(&self, x: f64) -> Result<Workloads, CostModelError> {
        if !(x >= 1.0 && x <= f64::from(self.layers)) {
            return Err(CostModelError::OutOfDomain { x, layers: self.layers });
        }
        Ok(self.values)
    }

    fn derivative_at(&self, x: f64) -> Result<Workloads, CostModelError> {
        self.at(x)?;
        Ok(Workloads::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Qpr,
    Rr,
}

impl std::fmt::Display for FitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitKind::Qpr => f.write_str("QPR"),
            FitKind::Rr => f.write_str("RR"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FittedModel {
    Qpr(QprModel),
    Rr(RrModel),
}

impl FittedModel {
    pub fn raw(&self, x: f64) -> f64 {
        match self {
            FittedModel::Qpr(m) => m.raw(x),
            FittedModel::Rr(m) => m.raw(x),
        }
    }

    pub fn coeffs(&self) -> Vec<f64> {
        match self {
            FittedModel::Qpr(m) => m.coeffs().to_vec(),
            FittedModel::Rr(m) => m.coeffs().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub model: FittedModel,
    pub rmse: f64,
}

/// Ordinary least-squares fit of a QPR or RR model to `(x, y)` samples.
///
/// RR is linear in `(1/x, 1)`, so both families reduce to a linear
/// least-squares problem solved through a QR factorization of the design
/// matrix.
pub fn fit(kind: FitKind, samples: &[(f64, f64)]) -> Result<FitResult, CostModelError> {
    let needed = match kind {
        FitKind::Qpr => 3,
        FitKind::Rr => 2,
    };
    let mut xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.dedup();
    if xs.len() < needed {
        if samples.len() >= needed {
            return Err(CostModelError::RankDeficient(kind));
        }
        return Err(CostModelError::TooFewSamples { kind, needed, got: samples.len() });
    }
    if samples.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(CostModelError::Invalid("non-finite sample".into()));
    }
    if kind == FitKind::Rr && samples.iter().any(|(x, _)| *x == 0.0) {
        return Err(CostModelError::NonPositiveReciprocal(0.0));
    }

    let rows = samples.len();
    let design = DMatrix::from_fn(rows, needed, |i, j| {
        let x = samples[i].0;
        match kind {
            FitKind::Qpr => x.powi(2 - j as i32),
            FitKind::Rr => {
                if j == 0 {
                    1.0 / x
                } else {
                    1.0
                }
            }
        }
    });
    let target = DVector::from_iterator(rows, samples.iter().map(|s| s.1));

    let qr = design.qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if scale == 0.0 || r.diagonal().iter().any(|d| d.abs() <= scale * 1e-12) {
        return Err(CostModelError::RankDeficient(kind));
    }
    let qty = qr.q().transpose() * &target;
    let coeffs = r.solve_upper_triangular(&qty).ok_or(CostModelError::RankDeficient(kind))?;

    let model = match kind {
        FitKind::Qpr => FittedModel::Qpr(QprModel::new(coeffs[0], coeffs[1], coeffs[2])),
        FitKind::Rr => FittedModel::Rr(RrModel::new(coeffs[0], coeffs[1])),
    };
    Ok(FitResult { model, rmse: rmse(&model, samples) })
}

pub fn rmse(model: &FittedModel, samples: &[(f64, f64)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sse: f64 = samples.iter().map(|(x, y)| (y - model.raw(*x)).powi(2)).sum();
    (sse / samples.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r18() -> CostModel {
        CostModel::preset("resnet18").unwrap()
    }

    #[test]
    fn eval_examples() {
        let m = r18();
        assert!((m.eval(CostPart::ModelSize, 1.0).unwrap() - 1.9226).abs() < 1e-12);
        // raw value -0.7336 is clamped to the floor
        assert!((m.model_size.raw(2.0) + 0.7336).abs() < 1e-12);
        assert_eq!(m.eval(CostPart::ModelSize, 2.0).unwrap(), 0.0);
        assert!((m.eval(CostPart::SmashedUp, 1.0).unwrap() - 2.8585).abs() < 1e-12);
    }

    #[test]
    fn eval_rejects_out_of_domain() {
        let m = r18();
        assert!(matches!(m.eval(CostPart::FwdShare, 0.5), Err(CostModelError::OutOfDomain { .. })));
        assert!(m.eval(CostPart::FwdShare, 11.5).is_err());
        assert!(m.eval(CostPart::FwdShare, f64::NAN).is_err());
    }

    #[test]
    fn derivative_examples() {
        let q = QprModel::new(0.9746, -5.58, 6.528);
        assert!((q.clamped_derivative(5.0, 0.0) - 4.166).abs() < 1e-12);
        let r = RrModel::new(3.2028, -0.3443);
        assert!((r.clamped_derivative(2.0, 0.0) + 0.8007).abs() < 1e-12);
        assert_eq!(r18().eval_derivative(CostPart::ModelSize, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn presets() {
        assert_eq!(r18().fwd_share, QprModel::new(-0.01597, 0.7705, -0.4282));
        assert_eq!(r18().layers, 11);
        let r34 = CostModel::preset("resnet34").unwrap();
        assert_eq!(r34.smashed_up, RrModel::new(2.891, -0.0987));
        assert_eq!(r34.layers, 19);
        assert_eq!(CostModel::preset("vgg16"), Err(CostModelError::UnknownPreset("vgg16".into())));
    }

    #[test]
    fn adapter_examples() {
        let wl = r18().adapt(1.0).unwrap();
        let w = wl.at(1.0).unwrap();
        assert!((w.device_fwd + w.server_bwd - 5.4664).abs() < 1e-12);
        let w = wl.at(11.0).unwrap();
        assert_eq!((w.server_fwd, w.server_bwd, w.smashed_size, w.grad_size), (0.0, 0.0, 0.0, 0.0));
        let wl2 = r18().adapt(2.0).unwrap();
        for x in [1.0, 3.3, 7.0, 10.9] {
            let w = wl2.at(x).unwrap();
            assert_eq!(w.device_bwd, 2.0 * w.device_fwd);
            assert_eq!(w.server_fwd, w.server_bwd / 2.0);
        }
        assert_eq!(r18().adapt(0.0), Err(CostModelError::NonPositiveKappa(0.0)));
    }

    #[test]
    fn exact_fits() {
        let s: Vec<_> = [1.0, 2.0, 3.0, 4.0].iter().map(|&x| (x, x * x)).collect();
        let f = fit(FitKind::Qpr, &s).unwrap();
        for (got, want) in f.model.coeffs().iter().zip([1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(f.rmse < 1e-12);

        let s: Vec<_> = [1.0, 2.0, 4.0].iter().map(|&x| (x, 2.0 / x)).collect();
        let f = fit(FitKind::Rr, &s).unwrap();
        for (got, want) in f.model.coeffs().iter().zip([2.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(f.rmse < 1e-12);
    }

    #[test]
    fn degenerate_fits_fail() {
        let same = [(2.0, 1.0), (2.0, 3.0), (2.0, 4.0), (2.0, 5.0)];
        assert_eq!(fit(FitKind::Qpr, &same), Err(CostModelError::RankDeficient(FitKind::Qpr)));
        assert!(matches!(
            fit(FitKind::Qpr, &[(1.0, 1.0), (2.0, 2.0)]),
            Err(CostModelError::TooFewSamples { needed: 3, .. })
        ));
        assert!(matches!(fit(FitKind::Rr, &[(1.0, 1.0)]), Err(CostModelError::TooFewSamples { .. })));
    }
}
