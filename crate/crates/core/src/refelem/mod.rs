//! Reference simplices, Lagrange shape functions and quadrature.
//!
//! Lagrange nodes of order `k` are the lattice points `α / k` for barycentric
//! multi-indices `α = (α0, …, αdim)` with `|α| = k`. Nodes are ordered
//! lexicographically *descending* in `α`, so for `k = 1` the order is
//! vertex 0, vertex 1, …, and vertex 0 is the origin of the reference
//! coordinates `x̂_i = λ_i` (`i ≥ 1`).

mod quadrature;

pub use quadrature::{make_quadrature, reference_volume, QuadratureRule, MAX_QUADRATURE_DEGREE};

use nalgebra::DMatrix;

use crate::{Error, Result};

/// An order-`k` Lagrange element on the reference simplex.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    dim: usize,
    order: usize,
    multi_indices: Vec<Vec<usize>>,
    nodes: Vec<Vec<f64>>,
}

/// Builds the reference Lagrange element of order `order` on the simplex of
/// dimension `dim`.
pub fn make_reference(dim: usize, order: usize) -> Result<ReferenceElement> {
    ReferenceElement::new(dim, order)
}

impl ReferenceElement {
    pub fn new(dim: usize, order: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!(
                "unsupported simplex dimension {dim}"
            )));
        }
        if !(1..=3).contains(&order) {
            return Err(Error::Config(format!("unsupported element order {order}")));
        }
        let multi_indices = lattice(dim, order);
        let nodes = multi_indices
            .iter()
            .map(|a| a.iter().map(|&ai| ai as f64 / order as f64).collect())
            .collect();
        Ok(Self {
            dim,
            order,
            multi_indices,
            nodes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions, `C(dim + k, k)`.
    pub fn basis_count(&self) -> usize {
        self.nodes.len()
    }

    /// Lagrange nodes as barycentric tuples.
    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    /// Barycentric multi-indices `α` with `|α| = k`, one per node.
    pub fn multi_indices(&self) -> &[Vec<usize>] {
        &self.multi_indices
    }

    /// Index of the node sitting on reference vertex `v`.
    pub fn vertex_node(&self, v: usize) -> usize {
        self.multi_indices
            .iter()
            .position(|a| a[v] == self.order)
            .expect("every vertex carries a node")
    }

    /// Values of all basis functions at a barycentric point.
    pub fn eval_basis(&self, point: &[f64]) -> Vec<f64> {
        assert_eq!(
            point.len(),
            self.dim + 1,
            "barycentric tuple has wrong length"
        );
        let mut out = vec![0.0; self.basis_count()];
        self.eval_into(point, &mut out, None);
        out
    }

    /// Gradients with respect to the reference coordinates, one row per
    /// basis function (`N × dim`).
    pub fn eval_basis_gradients(&self, point: &[f64]) -> DMatrix<f64> {
        assert_eq!(
            point.len(),
            self.dim + 1,
            "barycentric tuple has wrong length"
        );
        let n = self.basis_count();
        let mut values = vec![0.0; n];
        let mut grads = vec![[0.0; 3]; n];
        self.eval_into(point, &mut values, Some(&mut grads));
        DMatrix::from_fn(n, self.dim, |i, j| grads[i][j])
    }

    /// Values and reference gradients at every point of `rule`.
    pub fn tabulate(&self, rule: &QuadratureRule) -> Tabulation {
        assert_eq!(rule.dim(), self.dim, "quadrature dimension mismatch");
        let n = self.basis_count();
        let nq = rule.len();
        let mut values = vec![0.0; nq * n];
        let mut grads = vec![[0.0; 3]; nq * n];
        for (q, p) in rule.points().iter().enumerate() {
            self.eval_into(
                p,
                &mut values[q * n..(q + 1) * n],
                Some(&mut grads[q * n..(q + 1) * n]),
            );
        }
        Tabulation {
            n,
            weights: rule.weights().to_vec(),
            values,
            grads,
        }
    }

    /// Silvester's product formula: `χ_α(λ) = Π_j Π_{m<α_j} (kλ_j - m)/(m+1)`.
    fn eval_into(&self, point: &[f64], values: &mut [f64], mut grads: Option<&mut [[f64; 3]]>) {
        let k = self.order as f64;
        let nb = self.dim + 1;
        let mut f = [0.0; 4];
        let mut df = [0.0; 4];
        for (i, alpha) in self.multi_indices.iter().enumerate() {
            for j in 0..nb {
                let (v, d) = axis_factor(alpha[j], k, point[j]);
                f[j] = v;
                df[j] = d;
            }
            values[i] = f[..nb].iter().product();
            if let Some(g) = grads.as_deref_mut() {
                // derivative with respect to each barycentric coordinate
                let mut dl = [0.0; 4];
                for j in 0..nb {
                    dl[j] = df[j] * (0..nb).filter(|&l| l != j).map(|l| f[l]).product::<f64>();
                }
                // x̂_j = λ_j, λ_0 = 1 - Σ x̂
                let mut row = [0.0; 3];
                for j in 1..nb {
                    row[j - 1] = dl[j] - dl[0];
                }
                g[i] = row;
            }
        }
    }
}

/// Value and derivative of `Π_{m<a} (kλ - m)/(m+1)`.
fn axis_factor(a: usize, k: f64, lambda: f64) -> (f64, f64) {
    let mut v = 1.0;
    let mut d = 0.0;
    for m in 0..a {
        let m = m as f64;
        let term = (k * lambda - m) / (m + 1.0);
        let dterm = k / (m + 1.0);
        d = d * term + v * dterm;
        v *= term;
    }
    (v, d)
}

/// Multi-indices of total degree `k` in `dim + 1` components, descending
/// lexicographic order.
fn lattice(dim: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, remaining: usize, slots: usize, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for a in (0..=remaining).rev() {
            prefix.push(a);
            rec(prefix, remaining - a, slots - 1, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(dim + 1), k, dim + 1, &mut out);
    out
}

/// Basis values and reference gradients tabulated at the points of a rule.
#[derive(Debug, Clone)]
pub struct Tabulation {
    n: usize,
    weights: Vec<f64>,
    values: Vec<f64>,
    grads: Vec<[f64; 3]>,
}

impl Tabulation {
    pub fn basis_count(&self) -> usize {
        self.n
    }

    pub fn point_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Basis values at quadrature point `q`.
    pub fn values(&self, q: usize) -> &[f64] {
        &self.values[q * self.n..(q + 1) * self.n]
    }

    /// Reference gradients at quadrature point `q` (unused components are 0).
    pub fn grads(&self, q: usize) -> &[[f64; 3]] {
        &self.grads[q * self.n..(q + 1) * self.n]
    }
}
