//! Prescribed domain evolution and ambient calculus for smooth fields.
//!
//! Everything here works with smooth ambient extensions: exact solutions,
//! coefficients and the velocity are closed-form functions on R³ × time,
//! and surface quantities are obtained by projecting with the normal of the
//! level set `ψ(·, t)`.

use std::fmt::Debug;

use crate::{Error, Mat3, Result, Vec3};

/// Tolerance on `|ψ|` for points accepted as lying on the surface.
pub const ON_SURFACE_TOL: f64 = 1e-8;

/// A smooth scalar field on R³ × time with hand-coded derivatives.
pub trait AmbientField: Send + Sync + Debug {
    fn value(&self, x: &Vec3, t: f64) -> f64;
    fn gradient(&self, x: &Vec3, t: f64) -> Vec3;
    fn time_derivative(&self, x: &Vec3, t: f64) -> f64;
}

/// A flow map `Φ_t` of R³ with velocity `w`, carrying the zero level set of
/// `ψ(·, 0)` onto the zero level set of `ψ(·, t)`.
pub trait DomainEvolution: Send + Sync + Debug {
    fn flow(&self, x: &Vec3, t: f64) -> Vec3;
    fn velocity(&self, x: &Vec3, t: f64) -> Vec3;
    /// Spatial Jacobian `∇w`, rows indexed by velocity component.
    fn velocity_jacobian(&self, x: &Vec3, t: f64) -> Mat3;
    /// Level set `ψ(x, t)`: negative inside, zero on the boundary.
    fn level_set(&self, x: &Vec3, t: f64) -> f64;
    fn level_set_gradient(&self, x: &Vec3, t: f64) -> Vec3;

    /// `∇ψ / |∇ψ|` at any point off the singular set, on the surface or not.
    fn normal_at(&self, x: &Vec3, t: f64) -> Vec3 {
        self.level_set_gradient(x, t).normalize()
    }

    /// Outward unit normal at a point of `Γ(t)`.
    fn outward_normal(&self, x: &Vec3, t: f64) -> Result<Vec3> {
        let psi = self.level_set(x, t);
        if psi.abs() > ON_SURFACE_TOL {
            return Err(Error::Domain(format!(
                "point {x:?} is off the surface at t={t} (ψ={psi:e})"
            )));
        }
        Ok(self.normal_at(x, t))
    }

    /// `(I - νν^T)∇f` at a point of `Γ(t)`.
    fn tangential_gradient(&self, f: &dyn AmbientField, x: &Vec3, t: f64) -> Result<Vec3> {
        let nu = self.outward_normal(x, t)?;
        Ok(project_tangential(&nu, &f.gradient(x, t)))
    }

    /// `∇_Γ·w = ∇·w - ν^T(∇w)ν` at a point of `Γ(t)`.
    fn tangential_divergence_velocity(&self, x: &Vec3, t: f64) -> Result<f64> {
        let nu = self.outward_normal(x, t)?;
        Ok(self.tangential_divergence_velocity_with(&nu, x, t))
    }

    /// `∇_Γ·w` using a caller-supplied normal.
    fn tangential_divergence_velocity_with(&self, nu: &Vec3, x: &Vec3, t: f64) -> f64 {
        let jw = self.velocity_jacobian(x, t);
        jw.trace() - nu.dot(&(jw * nu))
    }

    fn bulk_divergence_velocity(&self, x: &Vec3, t: f64) -> f64 {
        self.velocity_jacobian(x, t).trace()
    }

    /// `∂•f = ∂_t f + w·∇f`.
    fn material_derivative(&self, f: &dyn AmbientField, x: &Vec3, t: f64) -> f64 {
        f.time_derivative(x, t) + self.velocity(x, t).dot(&f.gradient(x, t))
    }
}

pub fn project_tangential(nu: &Vec3, v: &Vec3) -> Vec3 {
    v - nu * nu.dot(v)
}

/// The unit ball stretched along the first axis:
/// `G(x, t) = (a(t)^{1/2} x₁, x₂, x₃)` with `a(t) = 1 + sin(t)/4`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EllipsoidFlow;

impl EllipsoidFlow {
    pub fn scale(&self, t: f64) -> f64 {
        1.0 + 0.25 * t.sin()
    }
}

impl DomainEvolution for EllipsoidFlow {
    fn flow(&self, x: &Vec3, t: f64) -> Vec3 {
        Vec3::new(self.scale(t).sqrt() * x.x, x.y, x.z)
    }

    fn velocity(&self, x: &Vec3, t: f64) -> Vec3 {
        Vec3::new(t.cos() * x.x / (8.0 * self.scale(t)), 0.0, 0.0)
    }

    fn velocity_jacobian(&self, _x: &Vec3, t: f64) -> Mat3 {
        let mut j = Mat3::zeros();
        j[(0, 0)] = t.cos() / (8.0 * self.scale(t));
        j
    }

    fn level_set(&self, x: &Vec3, t: f64) -> f64 {
        x.x * x.x / self.scale(t) + x.y * x.y + x.z * x.z - 1.0
    }

    fn level_set_gradient(&self, x: &Vec3, t: f64) -> Vec3 {
        Vec3::new(2.0 * x.x / self.scale(t), 2.0 * x.y, 2.0 * x.z)
    }
}

/// The unit sphere/ball at rest: identity flow, zero velocity.
#[derive(Debug, Clone, Copy, Default)]
pub struct Stationary;

impl DomainEvolution for Stationary {
    fn flow(&self, x: &Vec3, _t: f64) -> Vec3 {
        *x
    }

    fn velocity(&self, _x: &Vec3, _t: f64) -> Vec3 {
        Vec3::zeros()
    }

    fn velocity_jacobian(&self, _x: &Vec3, _t: f64) -> Mat3 {
        Mat3::zeros()
    }

    fn level_set(&self, x: &Vec3, _t: f64) -> f64 {
        x.norm_squared() - 1.0
    }

    fn level_set_gradient(&self, x: &Vec3, _t: f64) -> Vec3 {
        2.0 * x
    }
}

/// Closest point on the initial unit sphere: `x / |x|`.
pub fn initial_surface_projection(x: &Vec3) -> Result<Vec3> {
    let r = x.norm();
    if r <= 0.5 {
        return Err(Error::Domain(format!(
            "point {x:?} is outside the projection band (|x| = {r})"
        )));
    }
    Ok(x / r)
}

/// Fields of the form `s(t) · g(x)` with separate space and time factors.
pub mod fields {
    use super::AmbientField;
    use crate::Vec3;
    use std::f64::consts::PI;

    /// Constant field.
    #[derive(Debug, Clone, Copy)]
    pub struct Constant(pub f64);

    impl AmbientField for Constant {
        fn value(&self, _x: &Vec3, _t: f64) -> f64 {
            self.0
        }
        fn gradient(&self, _x: &Vec3, _t: f64) -> Vec3 {
            Vec3::zeros()
        }
        fn time_derivative(&self, _x: &Vec3, _t: f64) -> f64 {
            0.0
        }
    }

    /// `sin(t) · x_i · x_j` for `i ≠ j`.
    #[derive(Debug, Clone, Copy)]
    pub struct SinTimeBilinear {
        pub i: usize,
        pub j: usize,
    }

    impl AmbientField for SinTimeBilinear {
        fn value(&self, x: &Vec3, t: f64) -> f64 {
            t.sin() * x[self.i] * x[self.j]
        }
        fn gradient(&self, x: &Vec3, t: f64) -> Vec3 {
            let mut g = Vec3::zeros();
            g[self.i] = t.sin() * x[self.j];
            g[self.j] = t.sin() * x[self.i];
            g
        }
        fn time_derivative(&self, x: &Vec3, t: f64) -> f64 {
            t.cos() * x[self.i] * x[self.j]
        }
    }

    /// `sin(t) · cos(π x₁) · cos(π x₂)`.
    #[derive(Debug, Clone, Copy)]
    pub struct SinTimeCosCos;

    impl AmbientField for SinTimeCosCos {
        fn value(&self, x: &Vec3, t: f64) -> f64 {
            t.sin() * (PI * x.x).cos() * (PI * x.y).cos()
        }
        fn gradient(&self, x: &Vec3, t: f64) -> Vec3 {
            let s = t.sin();
            let (s1, c1) = (PI * x.x).sin_cos();
            let (s2, c2) = (PI * x.y).sin_cos();
            Vec3::new(-PI * s * s1 * c2, -PI * s * c1 * s2, 0.0)
        }
        fn time_derivative(&self, x: &Vec3, t: f64) -> f64 {
            t.cos() * (PI * x.x).cos() * (PI * x.y).cos()
        }
    }

    /// `c + x_i x_j`, time independent.
    #[derive(Debug, Clone, Copy)]
    pub struct ShiftedBilinear {
        pub shift: f64,
        pub i: usize,
        pub j: usize,
    }

    impl AmbientField for ShiftedBilinear {
        fn value(&self, x: &Vec3, _t: f64) -> f64 {
            self.shift + x[self.i] * x[self.j]
        }
        fn gradient(&self, x: &Vec3, _t: f64) -> Vec3 {
            let mut g = Vec3::zeros();
            g[self.i] += x[self.j];
            g[self.j] += x[self.i];
            g
        }
        fn time_derivative(&self, _x: &Vec3, _t: f64) -> f64 {
            0.0
        }
    }
}
