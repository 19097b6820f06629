//! Evolving isoparametric Lagrange finite elements for linear parabolic
//! equations on moving closed surfaces, moving bulk domains, and coupled
//! bulk-surface systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`refelem`]: reference simplices, Lagrange bases and quadrature,
//! * [`mesh`]: simplicial meshes, macro meshes, red refinement, I/O,
//! * [`geometry`]: the prescribed domain evolution and ambient calculus,
//! * [`fespace`]: evolving isoparametric spaces and element geometry,
//! * [`assembly`]: mass, stiffness, manufactured right-hand sides,
//! * [`solver`]: CSR kernels, GMRES and the implicit Euler stepper,
//! * [`problems`]: the three benchmark problems,
//! * [`harness`]: convergence studies and report emission.

pub mod assembly;
pub mod error;
pub mod fespace;
pub mod geometry;
pub mod harness;
pub mod mesh;
pub mod problems;
pub mod refelem;
pub mod solver;

pub use error::{Error, Result};

/// Points and vectors in the ambient space.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 matrices in the ambient space.
pub type Mat3 = nalgebra::Matrix3<f64>;
