//! Quadrature on reference simplices.
//!
//! Rules are collapsed (conical) products of one-dimensional Gauss–Jacobi
//! rules: the Duffy map sends the unit cube onto the reference simplex and
//! the Jacobian factors `(1-u)^a` are absorbed into Jacobi weights, so an
//! `n`-point product rule is exact for total degree `2n-1`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

/// Highest polynomial degree for which a rule can be requested.
pub const MAX_QUADRATURE_DEGREE: usize = 30;

/// A quadrature rule on the reference simplex of dimension `dim`.
///
/// Points are stored in barycentric coordinates `(λ0, …, λdim)` where the
/// reference coordinates are `x̂_i = λ_i` for `i ≥ 1`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    dim: usize,
    degree: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Polynomial degree integrated exactly.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` (given reference coordinates) over the reference simplex.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(&p[1..]))
            .sum()
    }
}

/// Volume of the reference simplex `{x̂ ≥ 0, Σ x̂ ≤ 1}` of dimension `dim`.
pub fn reference_volume(dim: usize) -> f64 {
    (1..=dim).fold(1.0, |acc, i| acc / i as f64)
}

/// Builds a rule on the reference simplex of dimension `dim` exact for
/// polynomials of total degree `degree`.
pub fn make_quadrature(dim: usize, degree: usize) -> Result<QuadratureRule> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Config(format!(
            "unsupported simplex dimension {dim}"
        )));
    }
    if degree > MAX_QUADRATURE_DEGREE {
        return Err(Error::Config(format!(
            "quadrature degree {degree} exceeds supported maximum {MAX_QUADRATURE_DEGREE}"
        )));
    }
    let n = degree / 2 + 1;
    // Jacobi exponent in collapsed direction i is dim-1-i.
    let lines: Vec<(Vec<f64>, Vec<f64>)> = (0..dim)
        .map(|i| gauss_jacobi_unit(n, (dim - 1 - i) as u32))
        .collect();

    let mut points = Vec::with_capacity(n.pow(dim as u32));
    let mut weights = Vec::with_capacity(n.pow(dim as u32));
    let mut idx = vec![0usize; dim];
    loop {
        let mut w = 1.0;
        let mut x = vec![0.0; dim];
        let mut scale = 1.0;
        for d in 0..dim {
            let (nodes, wts) = &lines[d];
            let u = nodes[idx[d]];
            w *= wts[idx[d]];
            x[d] = u * scale;
            scale *= 1.0 - u;
        }
        let mut bary = Vec::with_capacity(dim + 1);
        bary.push(1.0 - x.iter().sum::<f64>());
        bary.extend_from_slice(&x);
        points.push(bary);
        weights.push(w);

        // odometer over the product grid
        let mut d = dim;
        loop {
            if d == 0 {
                return Ok(QuadratureRule {
                    dim,
                    degree,
                    points,
                    weights,
                });
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < n {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// `n`-point Gauss rule on `[0,1]` for the weight `(1-u)^a`.
fn gauss_jacobi_unit(n: usize, a: u32) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_jacobi(n, a);
    let scale = 0.5f64.powi(a as i32 + 1);
    let nodes = x.iter().map(|xi| 0.5 * (xi + 1.0)).collect();
    let weights = w.iter().map(|wi| wi * scale).collect();
    (nodes, weights)
}

/// `n`-point Gauss–Jacobi rule on `[-1,1]` for the weight `(1-x)^a`.
///
/// Initial nodes come from the Golub–Welsch eigenproblem; they are then
/// polished by Newton iteration on `P_n^{(a,0)}` and the weights are taken
/// from the closed-form Christoffel expression.
fn gauss_jacobi(n: usize, a: u32) -> (Vec<f64>, Vec<f64>) {
    let alpha = a as f64;
    let beta = 0.0;
    let ab = alpha + beta;

    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let k = i as f64;
        let diag = if i == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * k + ab) * (2.0 * k + ab + 2.0))
        };
        jac[(i, i)] = diag;
        if i + 1 < n {
            let m = k + 1.0;
            let num = 4.0 * m * (m + alpha) * (m + beta) * (m + ab);
            let den = (2.0 * m + ab).powi(2) * (2.0 * m + ab + 1.0) * (2.0 * m + ab - 1.0);
            let off = (num / den).sqrt();
            jac[(i, i + 1)] = off;
            jac[(i + 1, i)] = off;
        }
    }
    let mut nodes: Vec<f64> = SymmetricEigen::new(jac)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    nodes.sort_by(|p, q| p.partial_cmp(q).unwrap());

    for x in nodes.iter_mut() {
        for _ in 0..8 {
            let (p, dp) = jacobi_with_derivative(n, alpha, beta, *x);
            let step = p / dp;
            *x -= step;
            if step.abs() < 1e-17 {
                break;
            }
        }
    }

    // w_i = 2^{a+b+1} Γ(n+a+1) Γ(n+b+1) / (Γ(n+a+b+1) n!) / ((1-x²) P_n'(x)²),
    // and the gamma ratio is 1 for b = 0.
    let c = 2f64.powf(ab + 1.0);
    let weights = nodes
        .iter()
        .map(|&x| {
            let (_, dp) = jacobi_with_derivative(n, alpha, beta, x);
            c / ((1.0 - x * x) * dp * dp)
        })
        .collect();
    (nodes, weights)
}

/// Value and derivative of the Jacobi polynomial `P_n^{(α,β)}(x)`.
fn jacobi_with_derivative(n: usize, alpha: f64, beta: f64, x: f64) -> (f64, f64) {
    let p = jacobi(n, alpha, beta, x);
    let dp = if n == 0 {
        0.0
    } else {
        0.5 * (n as f64 + alpha + beta + 1.0) * jacobi(n - 1, alpha + 1.0, beta + 1.0, x)
    };
    (p, dp)
}

fn jacobi(n: usize, alpha: f64, beta: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let ab = alpha + beta;
    let mut p0 = 1.0;
    let mut p1 = 0.5 * ((ab + 2.0) * x + (alpha - beta));
    for k in 2..=n {
        let k = k as f64;
        let c = 2.0 * k + ab;
        let a1 = 2.0 * k * (k + ab) * (c - 2.0);
        let a2 = (c - 1.0) * (c * (c - 2.0) * x + alpha * alpha - beta * beta);
        let a3 = 2.0 * (k + alpha - 1.0) * (k + beta - 1.0) * c;
        let p2 = (a2 * p1 - a3 * p0) / a1;
        p0 = p1;
        p1 = p2;
    }
    p1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_reference_volume() {
        for dim in 1..=3 {
            for degree in 0..=12 {
                let rule = make_quadrature(dim, degree).unwrap();
                let s: f64 = rule.weights().iter().sum();
                assert!(
                    (s - reference_volume(dim)).abs() < 1e-14,
                    "dim {dim} deg {degree}"
                );
            }
        }
    }

    #[test]
    fn simple_integrals() {
        let tri = make_quadrature(2, 2).unwrap();
        assert!((tri.integrate(|_| 1.0) - 0.5).abs() < 1e-15);
        assert!((tri.integrate(|x| x[0]) - 1.0 / 6.0).abs() < 1e-15);
        let tet = make_quadrature(3, 1).unwrap();
        assert!((tet.integrate(|_| 1.0) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn points_inside_simplex() {
        let rule = make_quadrature(3, 8).unwrap();
        for p in rule.points() {
            assert!(p.iter().all(|&l| (0.0..=1.0).contains(&l)));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(matches!(make_quadrature(4, 2), Err(Error::Config(_))));
        assert!(matches!(
            make_quadrature(2, MAX_QUADRATURE_DEGREE + 1),
            Err(Error::Config(_))
        ));
    }
}
