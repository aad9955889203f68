//! Cloud-versus-edge deployment arithmetic.
//!
//! For a dataset of `n` images, running on the edge device costs
//! `n * etpt`; shipping the dataset to a cloud accelerator costs
//! `ndtt + n * ctpt`. The edge wins while `n * etpt < ndtt + n * ctpt`.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Planner inputs, all in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeployInputs {
    /// Network data transmission time for the dataset.
    pub ndtt: f64,
    /// Edge per-image prediction time.
    pub etpt: f64,
    /// Cloud per-image prediction time.
    pub ctpt: f64,
}

impl DeployInputs {
    pub fn new(ndtt: f64, etpt: f64, ctpt: f64) -> Result<Self> {
        let d = Self { ndtt, etpt, ctpt };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ndtt.is_finite() && self.etpt.is_finite() && self.ctpt.is_finite()) {
            return Err(Error::InvalidArgument("planner inputs must be finite".into()));
        }
        if self.ndtt < 0.0 {
            return Err(Error::InvalidArgument(format!("ndtt must be >= 0, got {}", self.ndtt)));
        }
        if self.ctpt <= 0.0 {
            return Err(Error::InvalidArgument(format!("ctpt must be > 0, got {}", self.ctpt)));
        }
        if self.etpt <= 0.0 {
            return Err(Error::InvalidArgument(format!("etpt must be > 0, got {}", self.etpt)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Target {
    Edge,
    Cloud,
}

/// Asymptotic cloud-over-edge speed-up, `lim n->inf n*etpt / (ndtt + n*ctpt)`.
pub fn suctet_limit(d: &DeployInputs) -> Result<f64> {
    d.validate()?;
    Ok(d.etpt / d.ctpt)
}

/// Total time to predict `n` images on `target`.
pub fn total_time(d: &DeployInputs, n: u64, target: Target) -> f64 {
    match target {
        Target::Edge => n as f64 * d.etpt,
        Target::Cloud => d.ndtt + n as f64 * d.ctpt,
    }
}

fn edge_wins(d: &DeployInputs, n: u64) -> bool {
    total_time(d, n, Target::Edge) < total_time(d, n, Target::Cloud)
}

/// Where the edge stops being faster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreakEven {
    /// `etpt <= ctpt`: the cloud never catches up.
    EdgeAlways,
    /// Largest `n` for which the edge is strictly faster (0 when it never is).
    Limit(u64),
}

impl BreakEven {
    pub fn limit(self) -> Option<u64> {
        match self {
            BreakEven::EdgeAlways => None,
            BreakEven::Limit(n) => Some(n),
        }
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for BreakEven {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        match self {
            BreakEven::EdgeAlways => s.serialize_str("none (edge dominates all n)"),
            BreakEven::Limit(n) => s.serialize_u64(*n),
        }
    }
}

/// Largest integer `n` with `n < ndtt / (etpt - ctpt)`. The floating-point
/// estimate is corrected against [`total_time`] so the result agrees
/// exactly with the edge/cloud comparison; ties go to the cloud.
pub fn break_even_n(d: &DeployInputs) -> Result<BreakEven> {
    d.validate()?;
    if d.etpt <= d.ctpt {
        return Ok(BreakEven::EdgeAlways);
    }
    let bound = d.ndtt / (d.etpt - d.ctpt);
    let mut n = if bound.is_finite() && bound < u64::MAX as f64 / 2.0 {
        libm::floor(bound) as u64
    } else {
        return Err(Error::InvalidArgument("break-even point exceeds the representable range".into()));
    };
    while n > 0 && !edge_wins(d, n) {
        n -= 1;
    }
    while edge_wins(d, n + 1) {
        n += 1;
    }
    Ok(BreakEven::Limit(n))
}

/// Recommendation for one dataset size.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Recommendation {
    pub n: u64,
    pub edge_ms: f64,
    pub cloud_ms: f64,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct BreakEvenReport {
    pub inputs: DeployInputs,
    pub asymptotic_speedup: f64,
    pub break_even_n: BreakEven,
    pub recommendations: Vec<Recommendation>,
}

pub fn recommend(d: &DeployInputs, n: u64) -> Recommendation {
    Recommendation {
        n,
        edge_ms: total_time(d, n, Target::Edge),
        cloud_ms: total_time(d, n, Target::Cloud),
        target: if edge_wins(d, n) { Target::Edge } else { Target::Cloud },
    }
}

pub fn plan(d: &DeployInputs, candidates: &[u64]) -> Result<BreakEvenReport> {
    Ok(BreakEvenReport {
        inputs: *d,
        asymptotic_speedup: suctet_limit(d)?,
        break_even_n: break_even_n(d)?,
        recommendations: candidates.iter().map(|&n| recommend(d, n)).collect(),
    })
}
