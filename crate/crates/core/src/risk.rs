//! Data-leakage risk versus cut layer.
//!
//! Risk is the cosine similarity between original and reconstructed samples.
//! Profiles are measured offline and supplied as `(layer, risk)` tables; the
//! relaxed problem needs risk at fractional cut positions, so profiles are
//! interpolated linearly between table points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("matrix shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("cosine similarity of a zero-norm matrix is undefined")]
    ZeroNorm,
    #[error("invalid risk profile: {0}")]
    InvalidProfile(String),
    #[error("cut position {x} outside [1, {layers}]")]
    OutOfRange { x: f64, layers: u32 },
    #[error("risk constraint {p_risk} is infeasible: minimum achievable risk is {min_risk}")]
    Infeasible { p_risk: f64, min_risk: f64 },
}

/// Dense row-major matrix used for similarity computations.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.rows, self.cols, self.data.iter().map(|v| v * k).collect())
    }
}

/// Frobenius cosine similarity `<Z, Z'> / (|Z| |Z'|)`.
pub fn cosine_similarity(z: &Matrix, z_rec: &Matrix) -> Result<f64, RiskError> {
    if z.shape() != z_rec.shape() {
        return Err(RiskError::ShapeMismatch(z.shape(), z_rec.shape()));
    }
    let dot: f64 = z.data.iter().zip(&z_rec.data).map(|(a, b)| a * b).sum();
    let na = z.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = z_rec.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(RiskError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Monotone, piecewise-linear risk table over cut layers `1..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u32, f64)>", into = "Vec<(u32, f64)>")]
pub struct RiskProfile {
    risks: Vec<f64>,
}

impl TryFrom<Vec<(u32, f64)>> for RiskProfile {
    type Error = RiskError;

    fn try_from(points: Vec<(u32, f64)>) -> Result<Self, Self::Error> {
        Self::new(&points)
    }
}

impl From<RiskProfile> for Vec<(u32, f64)> {
    fn from(p: RiskProfile) -> Self {
        p.points()
    }
}

impl RiskProfile {
    pub fn new(points: &[(u32, f64)]) -> Result<Self, RiskError> {
        if points.is_empty() {
            return Err(RiskError::InvalidProfile("empty profile".into()));
        }
        for (i, &(layer, risk)) in points.iter().enumerate() {
            if layer as usize != i + 1 {
                return Err(RiskError::InvalidProfile(format!(
                    "layers must be 1, 2, ..., L in order; entry {i} has layer {layer}"
                )));
            }
            if !(0.0..=1.0).contains(&risk) {
                return Err(RiskError::InvalidProfile(format!("risk {risk} at layer {layer} outside [0, 1]")));
            }
            if i > 0 && risk > points[i - 1].1 {
                return Err(RiskError::InvalidProfile(format!(
                    "risk must be non-increasing in layer; layer {layer} rises to {risk}"
                )));
            }
        }
        Ok(Self { risks: points.iter().map(|p| p.1).collect() })
    }

    /// Synthetic linear-decay profile `max(0, 0.95 - 0.85·(l-1)/(L-1))`.
    /// For demos only; not a measured profile.
    pub fn synthetic(layers: u32) -> Self {
        let l = layers.max(1);
        let risks = (1..=l)
            .map(|layer| if l == 1 { 0.95 } else { (0.95 - 0.85 * f64::from(layer - 1) / f64::from(l - 1)).max(0.0) })
            .collect();
        Self { risks }
    }

    pub fn layers(&self) -> u32 {
        self.risks.len() as u32
    }

    pub fn points(&self) -> Vec<(u32, f64)> {
        self.risks.iter().enumerate().map(|(i, r)| (i as u32 + 1, *r)).collect()
    }

    pub fn min_risk(&self) -> f64 {
        *self.risks.last().expect("profile is non-empty")
    }

    pub fn risk_at(&self, x: f64) -> Result<f64, RiskError> {
        let layers = self.layers();
        if !(x >= 1.0 && x <= f64::from(layers)) {
            return Err(RiskError::OutOfRange { x, layers });
        }
        let lo = (x.floor() as usize).min(self.risks.len());
        let t = x - lo as f64;
        if t == 0.0 {
            return Ok(self.risks[lo - 1]);
        }
        let (a, b) = (self.risks[lo - 1], self.risks[lo]);
        Ok(a + (b - a) * t)
    }

    /// Smallest cut position whose interpolated risk is at most `p_risk`.
    pub fn min_feasible_cut(&self, p_risk: f64) -> Result<f64, RiskError> {
        if !(0.0..=1.0).contains(&p_risk) {
            return Err(RiskError::InvalidProfile(format!("risk constraint {p_risk} outside [0, 1]")));
        }
        let min_risk = self.min_risk();
        if min_risk > p_risk {
            return Err(RiskError::Infeasible { p_risk, min_risk });
        }
        if self.risks[0] <= p_risk {
            return Ok(1.0);
        }
        // first k (0-based) with risks[k] > p >= risks[k+1]
        let k = self
            .risks
            .windows(2)
            .position(|w| w[0] > p_risk && w[1] <= p_risk)
            .expect("monotone profile crosses the threshold");
        let (a, b) = (self.risks[k], self.risks[k + 1]);
        let t = (a - p_risk) / (a - b);
        Ok(k as f64 + 1.0 + t)
    }
}
