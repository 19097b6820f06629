//! The three benchmark problems on the stretched unit ball.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::{CoefficientSet, CoupledData, ManufacturedData};
use crate::geometry::fields::{SinTimeBilinear, SinTimeCosCos};
use crate::geometry::{project_tangential, DomainEvolution, EllipsoidFlow};
use crate::{Error, Mat3, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemId {
    Surface,
    Bulk,
    Coupled,
}

impl ProblemId {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemId::Surface => "surface",
            ProblemId::Bulk => "bulk",
            ProblemId::Coupled => "coupled",
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "surface" => Ok(ProblemId::Surface),
            "bulk" => Ok(ProblemId::Bulk),
            "coupled" => Ok(ProblemId::Coupled),
            other => Err(Error::Config(format!(
                "unknown problem '{other}' (expected surface, bulk or coupled)"
            ))),
        }
    }
}

/// Evolution, coefficients and exact solutions of one benchmark.
#[derive(Debug, Clone)]
pub struct ProblemDefinition {
    pub id: ProblemId,
    pub evolution: Arc<dyn DomainEvolution>,
    /// Bulk data (bulk and coupled problems).
    pub bulk: Option<ManufacturedData>,
    /// Surface data (surface and coupled problems).
    pub surface: Option<ManufacturedData>,
    pub alpha: f64,
    pub beta: f64,
    pub final_time: f64,
    pub supported_orders: Vec<usize>,
}

impl ProblemDefinition {
    pub fn supports(&self, order: usize) -> bool {
        self.supported_orders.contains(&order)
    }

    /// Coupled-system data; `None` unless both sub-problems are present.
    pub fn coupled_data(&self) -> Option<CoupledData> {
        Some(CoupledData {
            bulk: self.bulk.clone()?,
            surface: self.surface.clone()?,
            alpha: self.alpha,
            beta: self.beta,
        })
    }
}

fn scaled_identity() -> Arc<dyn Fn(&Vec3, f64) -> Mat3 + Send + Sync> {
    Arc::new(|x, _| Mat3::identity() * (1.0 + x.x * x.x))
}

/// `A = (1+x₁²)I`, `b = (1,2,0) − ((1,2,0)·ν)ν`, `c = sin(x₁x₂)`, `u = sin(t)x₂x₃`.
pub fn surface_coefficients() -> CoefficientSet {
    CoefficientSet {
        diffusion: scaled_identity(),
        advection: Arc::new(|_, _, nu| {
            let b = Vec3::new(1.0, 2.0, 0.0);
            nu.map_or(b, |n| project_tangential(n, &b))
        }),
        reaction: Arc::new(|x, _| (x.x * x.y).sin()),
    }
}

/// `A = (1+x₁²)I`, `b = (1,2,0)`, `c = cos(x₁x₂)`.
pub fn bulk_coefficients() -> CoefficientSet {
    CoefficientSet {
        diffusion: scaled_identity(),
        advection: Arc::new(|_, _, _| Vec3::new(1.0, 2.0, 0.0)),
        reaction: Arc::new(|x, _| (x.x * x.y).cos()),
    }
}

pub fn surface_problem() -> ProblemDefinition {
    ProblemDefinition {
        id: ProblemId::Surface,
        evolution: Arc::new(EllipsoidFlow),
        bulk: None,
        surface: Some(ManufacturedData::new(
            surface_coefficients(),
            Arc::new(SinTimeBilinear { i: 1, j: 2 }),
        )),
        alpha: 1.0,
        beta: 1.0,
        final_time: 1.0,
        supported_orders: vec![1, 2, 3],
    }
}

/// `u = sin(t)cos(πx₁)cos(πx₂)` with the bulk coefficients.
pub fn bulk_problem() -> ProblemDefinition {
    ProblemDefinition {
        id: ProblemId::Bulk,
        evolution: Arc::new(EllipsoidFlow),
        bulk: Some(ManufacturedData::new(
            bulk_coefficients(),
            Arc::new(SinTimeCosCos),
        )),
        surface: None,
        alpha: 1.0,
        beta: 1.0,
        final_time: 1.0,
        supported_orders: vec![1, 2],
    }
}

/// `A = I`, `b = 0`, `c = 0` in both domains, `u = sin(t)x₁x₂`,
/// `v = sin(t)x₂x₃`, `α = β = 1`.
pub fn coupled_problem() -> ProblemDefinition {
    ProblemDefinition {
        id: ProblemId::Coupled,
        evolution: Arc::new(EllipsoidFlow),
        bulk: Some(ManufacturedData::new(
            CoefficientSet::laplacian(),
            Arc::new(SinTimeBilinear { i: 0, j: 1 }),
        )),
        surface: Some(ManufacturedData::new(
            CoefficientSet::laplacian(),
            Arc::new(SinTimeBilinear { i: 1, j: 2 }),
        )),
        alpha: 1.0,
        beta: 1.0,
        final_time: 1.0,
        supported_orders: vec![1, 2],
    }
}

pub fn problem(id: ProblemId) -> ProblemDefinition {
    match id {
        ProblemId::Surface => surface_problem(),
        ProblemId::Bulk => bulk_problem(),
        ProblemId::Coupled => coupled_problem(),
    }
}
