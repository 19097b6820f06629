//! Mass, stiffness and manufactured right-hand sides on evolving spaces.
//!
//! Matrices share a symbolic CSR pattern computed once from connectivity.
//! Each assembly pass computes element blocks (in parallel when a rayon pool
//! with more than one thread is active) and scatters them sequentially in
//! element order, so values do not depend on the thread count.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::fespace::{ElementGeometry, EvolvingSpace, SpaceKind, TraceMap};
use crate::geometry::{project_tangential, AmbientField};
use crate::refelem::{make_quadrature, Tabulation};
use crate::{Error, Mat3, Result, Vec3};

/// Symbolic CSR structure: sorted column indices per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
}

impl SparsityPattern {
    /// Pattern coupling every pair of dofs that share an element.
    pub fn from_elements<I, E>(n: usize, elements: I) -> Self
    where
        I: IntoIterator<Item = E>,
        E: AsRef<[usize]>,
    {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in elements {
            let dofs = e.as_ref();
            for &i in dofs {
                rows[i].extend_from_slice(dofs);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.cols
    }

    /// Index into the value array of entry `(i, j)`, if present.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[lo..hi].binary_search(&j).ok().map(|p| lo + p)
    }

    /// Value positions of all `(dofs[a], dofs[b])` pairs, row-major per
    /// element.
    fn scatter_map<I, E>(&self, elements: I) -> Vec<usize>
    where
        I: IntoIterator<Item = E>,
        E: AsRef<[usize]>,
    {
        let mut map = Vec::new();
        for e in elements {
            let dofs = e.as_ref();
            for &i in dofs {
                for &j in dofs {
                    map.push(self.find(i, j).expect("element pair missing from pattern"));
                }
            }
        }
        map
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
                .iter()
                .all(|&j| self.find(j, i).is_some())
        })
    }
}

/// A square CSR matrix over a shared pattern.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    /// Builds a matrix from a dense array, keeping only non-zero entries.
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut values = Vec::new();
        for i in 0..n {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    cols.push(j);
                    values.push(a[(i, j)]);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            pattern: Arc::new(SparsityPattern { n, row_ptr, cols }),
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_dense(&DMatrix::identity(n, n))
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.find(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`; lengths must match the matrix dimension.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                s += self.values[k] * x[p.cols[k]];
            }
            *yi = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `a·self + b·other` for matrices over the same pattern.
    pub fn linear_combination(&self, a: f64, other: &SparseMatrix, b: f64) -> Result<SparseMatrix> {
        if !Arc::ptr_eq(&self.pattern, &other.pattern) && self.pattern != other.pattern {
            return Err(Error::Construction(
                "matrices have different sparsity patterns".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(SparseMatrix {
            pattern: self.pattern.clone(),
            values,
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        let p = &self.pattern;
        for i in 0..n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                a[(i, p.cols[k])] += self.values[k];
            }
        }
        a
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let p = &self.pattern;
        let mut worst = 0.0f64;
        for i in 0..self.dim() {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                worst = worst.max((self.values[k] - self.get(p.cols[k], i)).abs());
            }
        }
        worst
    }

    /// MatrixMarket coordinate dump.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.dim(), self.dim(), self.pattern.nnz())?;
        let p = &self.pattern;
        for i in 0..self.dim() {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                writeln!(w, "{} {} {:.17e}", i + 1, p.cols[k] + 1, self.values[k])?;
            }
        }
        Ok(())
    }
}

pub type DiffusionFn = Arc<dyn Fn(&Vec3, f64) -> Mat3 + Send + Sync>;
/// Advection field; surface problems receive the exact unit normal.
pub type AdvectionFn = Arc<dyn Fn(&Vec3, f64, Option<&Vec3>) -> Vec3 + Send + Sync>;
pub type ReactionFn = Arc<dyn Fn(&Vec3, f64) -> f64 + Send + Sync>;

/// Coefficients `A`, `b`, `c` of `a(η, φ) = ∫ A∇η·∇φ + bη·∇φ + cηφ`.
#[derive(Clone)]
pub struct CoefficientSet {
    pub diffusion: DiffusionFn,
    pub advection: AdvectionFn,
    pub reaction: ReactionFn,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CoefficientSet { .. }")
    }
}

impl CoefficientSet {
    /// `A = I`, `b = 0`, `c = 0`.
    pub fn laplacian() -> Self {
        Self {
            diffusion: Arc::new(|_, _| Mat3::identity()),
            advection: Arc::new(|_, _, _| Vec3::zeros()),
            reaction: Arc::new(|_, _| 0.0),
        }
    }
}

/// Exact solution and coefficients for one sub-domain.
#[derive(Debug, Clone)]
pub struct ManufacturedData {
    pub coefficients: CoefficientSet,
    /// `None` gives a zero right-hand side.
    pub exact: Option<Arc<dyn AmbientField>>,
}

impl ManufacturedData {
    pub fn new(coefficients: CoefficientSet, exact: Arc<dyn AmbientField>) -> Self {
        Self {
            coefficients,
            exact: Some(exact),
        }
    }

    pub fn homogeneous(coefficients: CoefficientSet) -> Self {
        Self {
            coefficients,
            exact: None,
        }
    }
}

/// Data of the bulk-surface system with coupling constants `α`, `β`.
#[derive(Debug, Clone)]
pub struct CoupledData {
    pub bulk: ManufacturedData,
    pub surface: ManufacturedData,
    pub alpha: f64,
    pub beta: f64,
}

/// The assembled system at one time level.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
    pub rhs: Vec<f64>,
}

/// Element matrices and load vector, row index = test function.
#[derive(Debug, Clone, Default)]
struct LocalBlocks {
    mass: Vec<f64>,
    stiffness: Vec<f64>,
    rhs: Vec<f64>,
}

/// What a pass over one space computes.
#[derive(Clone, Copy)]
struct Terms<'d> {
    stiffness: Option<&'d CoefficientSet>,
    rhs: Option<&'d ManufacturedData>,
}

struct SpaceKernel<'a> {
    space: &'a EvolvingSpace,
    tab: Tabulation,
}

impl<'a> SpaceKernel<'a> {
    fn new(space: &'a EvolvingSpace, quad_degree: usize) -> Result<Self> {
        let rule = make_quadrature(space.reference().dim(), quad_degree)?;
        Ok(Self {
            space,
            tab: space.reference().tabulate(&rule),
        })
    }

    fn local_blocks(
        &self,
        t: f64,
        positions: &[Vec3],
        terms: Terms<'_>,
    ) -> Result<Vec<LocalBlocks>> {
        (0..self.space.element_count())
            .into_par_iter()
            .map_init(ElementGeometry::default, |geo, e| {
                self.space.fill_geometry(e, positions, &self.tab, geo)?;
                Ok(self.element(geo, t, terms))
            })
            .collect()
    }

    fn element(&self, geo: &ElementGeometry, t: f64, terms: Terms<'_>) -> LocalBlocks {
        let n = self.tab.basis_count();
        let evolution = self.space.evolution();
        let surface = self.space.kind() == SpaceKind::Surface;
        let mut out = LocalBlocks {
            mass: vec![0.0; n * n],
            stiffness: if terms.stiffness.is_some() {
                vec![0.0; n * n]
            } else {
                Vec::new()
            },
            rhs: vec![0.0; n],
        };
        for q in 0..self.tab.point_count() {
            let chi = self.tab.values(q);
            let grads = geo.gradients_at(q);
            let dx = self.tab.weights()[q] * geo.sqrt_g[q];
            let x = &geo.points[q];
            for i in 0..n {
                let ci = chi[i] * dx;
                for j in 0..n {
                    out.mass[i * n + j] += ci * chi[j];
                }
            }
            let nu = surface.then(|| evolution.normal_at(x, t));
            if let Some(coeffs) = terms.stiffness {
                let a = (coeffs.diffusion)(x, t);
                let b = (coeffs.advection)(x, t, nu.as_ref());
                let c = (coeffs.reaction)(x, t);
                for i in 0..n {
                    let bi = b.dot(&grads[i]);
                    for j in 0..n {
                        out.stiffness[i * n + j] += dx
                            * ((a * grads[j]).dot(&grads[i]) + chi[j] * bi + c * chi[j] * chi[i]);
                    }
                }
            }
            if let Some(data) = terms.rhs {
                let Some(u) = data.exact.as_deref() else {
                    continue;
                };
                let coeffs = &data.coefficients;
                let value = u.value(x, t);
                let (grad, div_w) = match &nu {
                    Some(nu) => (
                        project_tangential(nu, &u.gradient(x, t)),
                        evolution.tangential_divergence_velocity_with(nu, x, t),
                    ),
                    None => (u.gradient(x, t), evolution.bulk_divergence_velocity(x, t)),
                };
                let transport = evolution.material_derivative(u, x, t) + value * div_w;
                let flux =
                    (coeffs.diffusion)(x, t) * grad + (coeffs.advection)(x, t, nu.as_ref()) * value;
                let zeroth = transport + (coeffs.reaction)(x, t) * value;
                for i in 0..n {
                    out.rhs[i] += dx * (zeroth * chi[i] + flux.dot(&grads[i]));
                }
            }
        }
        out
    }

    /// `∫_Γh (αu − βv) φ_i` and the element mass for the coupling term.
    fn coupling_blocks(
        &self,
        t: f64,
        positions: &[Vec3],
        bulk_exact: Option<&dyn AmbientField>,
        surface_exact: Option<&dyn AmbientField>,
        alpha: f64,
        beta: f64,
    ) -> Result<Vec<LocalBlocks>> {
        let n = self.tab.basis_count();
        (0..self.space.element_count())
            .into_par_iter()
            .map_init(ElementGeometry::default, |geo, e| {
                self.space.fill_geometry(e, positions, &self.tab, geo)?;
                let mut out = LocalBlocks {
                    mass: vec![0.0; n * n],
                    stiffness: Vec::new(),
                    rhs: vec![0.0; n],
                };
                for q in 0..self.tab.point_count() {
                    let chi = self.tab.values(q);
                    let dx = self.tab.weights()[q] * geo.sqrt_g[q];
                    for i in 0..n {
                        for j in 0..n {
                            out.mass[i * n + j] += dx * chi[i] * chi[j];
                        }
                    }
                    let x = &geo.points[q];
                    let jump = alpha * bulk_exact.map_or(0.0, |u| u.value(x, t))
                        - beta * surface_exact.map_or(0.0, |v| v.value(x, t));
                    for i in 0..n {
                        out.rhs[i] += dx * jump * chi[i];
                    }
                }
                Ok(out)
            })
            .collect()
    }
}

enum Layout<'a> {
    Single {
        kernel: SpaceKernel<'a>,
        data: ManufacturedData,
        scatter: Vec<usize>,
    },
    Coupled {
        bulk: SpaceKernel<'a>,
        surface: SpaceKernel<'a>,
        trace: &'a TraceMap,
        data: CoupledData,
        bulk_scatter: Vec<usize>,
        surface_scatter: Vec<usize>,
        coupling_scatter: Vec<usize>,
    },
}

/// Reusable assembler for `M(t)`, `S(t)` and `r(t)` over a fixed pattern.
///
/// Coupled systems use the block dof layout `[bulk | surface]`.
pub struct SystemAssembler<'a> {
    layout: Layout<'a>,
    pattern: Arc<SparsityPattern>,
    quad_degree: usize,
}

impl<'a> SystemAssembler<'a> {
    /// Default quadrature degree `2k + 2`.
    pub fn default_degree(order: usize) -> usize {
        2 * order + 2
    }

    pub fn single(
        space: &'a EvolvingSpace,
        data: ManufacturedData,
        quad_degree: Option<usize>,
    ) -> Result<Self> {
        let quad_degree = quad_degree.unwrap_or(Self::default_degree(space.order()));
        let pattern = Arc::new(SparsityPattern::from_elements(
            space.dof_count(),
            space.elements(),
        ));
        let scatter = pattern.scatter_map(space.elements());
        let kernel = SpaceKernel::new(space, quad_degree)?;
        Ok(Self {
            layout: Layout::Single {
                kernel,
                data,
                scatter,
            },
            pattern,
            quad_degree,
        })
    }

    pub fn coupled(
        bulk: &'a EvolvingSpace,
        surface: &'a EvolvingSpace,
        trace: &'a TraceMap,
        data: CoupledData,
        quad_degree: Option<usize>,
    ) -> Result<Self> {
        if trace.surface_to_bulk.len() != surface.dof_count()
            || trace.surface_to_bulk.iter().any(|&b| b >= bulk.dof_count())
            || bulk.order() != surface.order()
        {
            return Err(Error::Construction(
                "trace map does not match the bulk and surface spaces".into(),
            ));
        }
        let quad_degree = quad_degree.unwrap_or(Self::default_degree(bulk.order()));
        let nb = bulk.dof_count();
        let shifted: Vec<Vec<usize>> = surface
            .elements()
            .map(|d| d.iter().map(|&i| nb + i).collect())
            .collect();
        let coupling: Vec<Vec<usize>> = surface
            .elements()
            .map(|d| {
                d.iter()
                    .map(|&i| trace.surface_to_bulk[i])
                    .chain(d.iter().map(|&i| nb + i))
                    .collect()
            })
            .collect();
        let pattern = Arc::new(SparsityPattern::from_elements(
            nb + surface.dof_count(),
            bulk.elements()
                .map(<[usize]>::to_vec)
                .chain(coupling.iter().cloned()),
        ));
        Ok(Self {
            layout: Layout::Coupled {
                bulk: SpaceKernel::new(bulk, quad_degree)?,
                surface: SpaceKernel::new(surface, quad_degree)?,
                trace,
                data,
                bulk_scatter: pattern.scatter_map(bulk.elements()),
                surface_scatter: pattern.scatter_map(&shifted),
                coupling_scatter: pattern.scatter_map(&coupling),
            },
            pattern,
            quad_degree,
        })
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn quad_degree(&self) -> usize {
        self.quad_degree
    }

    /// `M(t)` only.
    pub fn mass(&self, t: f64) -> Result<SparseMatrix> {
        Ok(self.run(t, false, false)?.mass)
    }

    /// `M(t)`, `S(t)` and `r(t)`.
    pub fn assemble(&self, t: f64) -> Result<AssembledSystem> {
        self.run(t, true, true)
    }

    fn run(&self, t: f64, with_stiffness: bool, with_rhs: bool) -> Result<AssembledSystem> {
        let n = self.dim();
        let mut mass = SparseMatrix::zeros(self.pattern.clone());
        let mut stiffness = SparseMatrix::zeros(self.pattern.clone());
        let mut rhs = vec![0.0; n];
        match &self.layout {
            Layout::Single {
                kernel,
                data,
                scatter,
            } => {
                let terms = Terms {
                    stiffness: with_stiffness.then_some(&data.coefficients),
                    rhs: with_rhs.then_some(data),
                };
                let positions = kernel.space.node_positions_at(t);
                let blocks = kernel.local_blocks(t, &positions, terms)?;
                scatter_blocks(
                    kernel.space.elements(),
                    &blocks,
                    scatter,
                    1.0,
                    0,
                    &mut mass,
                    &mut stiffness,
                    &mut rhs,
                );
            }
            Layout::Coupled {
                bulk,
                surface,
                trace,
                data,
                bulk_scatter,
                surface_scatter,
                coupling_scatter,
            } => {
                let (alpha, beta) = (data.alpha, data.beta);
                let nb = bulk.space.dof_count();
                let bpos = bulk.space.node_positions_at(t);
                let spos = surface.space.node_positions_at(t);
                fn terms(d: &ManufacturedData, stiffness: bool, rhs: bool) -> Terms<'_> {
                    Terms {
                        stiffness: stiffness.then_some(&d.coefficients),
                        rhs: rhs.then_some(d),
                    }
                }
                let b = bulk.local_blocks(t, &bpos, terms(&data.bulk, with_stiffness, with_rhs))?;
                scatter_blocks(
                    bulk.space.elements(),
                    &b,
                    bulk_scatter,
                    alpha,
                    0,
                    &mut mass,
                    &mut stiffness,
                    &mut rhs,
                );
                let s = surface.local_blocks(
                    t,
                    &spos,
                    terms(&data.surface, with_stiffness, with_rhs),
                )?;
                scatter_blocks(
                    surface.space.elements(),
                    &s,
                    surface_scatter,
                    beta,
                    nb,
                    &mut mass,
                    &mut stiffness,
                    &mut rhs,
                );
                if with_stiffness {
                    let c = surface.coupling_blocks(
                        t,
                        &spos,
                        data.bulk.exact.as_deref(),
                        data.surface.exact.as_deref(),
                        alpha,
                        beta,
                    )?;
                    let m = surface.tab.basis_count();
                    let weights = [alpha * alpha, -alpha * beta, -alpha * beta, beta * beta];
                    let mut pos = coupling_scatter.iter();
                    for (dofs, block) in surface.space.elements().zip(&c) {
                        // local layout of the coupling element: [trace dofs | surface dofs]
                        for bi in 0..2 {
                            for i in 0..m {
                                for bj in 0..2 {
                                    let w = weights[2 * bi + bj];
                                    for j in 0..m {
                                        let p = *pos.next().expect("coupling scatter exhausted");
                                        stiffness.values[p] += w * block.mass[i * m + j];
                                    }
                                }
                            }
                        }
                        if with_rhs {
                            for (i, &d) in dofs.iter().enumerate() {
                                rhs[trace.surface_to_bulk[d]] += alpha * block.rhs[i];
                                rhs[nb + d] -= beta * block.rhs[i];
                            }
                        }
                    }
                }
            }
        }
        Ok(AssembledSystem {
            mass,
            stiffness,
            rhs,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn scatter_blocks<'e>(
    elements: impl Iterator<Item = &'e [usize]>,
    blocks: &[LocalBlocks],
    scatter: &[usize],
    weight: f64,
    offset: usize,
    mass: &mut SparseMatrix,
    stiffness: &mut SparseMatrix,
    rhs: &mut [f64],
) {
    let mut pos = scatter.iter();
    for (dofs, block) in elements.zip(blocks) {
        let nn = block.mass.len();
        for (k, &p) in pos.by_ref().take(nn).enumerate() {
            mass.values[p] += weight * block.mass[k];
            if !block.stiffness.is_empty() {
                stiffness.values[p] += weight * block.stiffness[k];
            }
        }
        for (&d, r) in dofs.iter().zip(&block.rhs) {
            rhs[offset + d] += weight * r;
        }
    }
}

/// `M_ij = weight · ∫ χ_j χ_i`.
pub fn assemble_mass(space: &EvolvingSpace, t: f64, weight: f64) -> Result<SparseMatrix> {
    let asm = SystemAssembler::single(
        space,
        ManufacturedData::homogeneous(CoefficientSet::laplacian()),
        None,
    )?;
    let mut m = asm.mass(t)?;
    m.values.iter_mut().for_each(|v| *v *= weight);
    Ok(m)
}

/// `S_ij = weight · ∫ A∇χ_j·∇χ_i + χ_j b·∇χ_i + c χ_j χ_i`.
pub fn assemble_stiffness(
    space: &EvolvingSpace,
    t: f64,
    coefficients: &CoefficientSet,
    weight: f64,
) -> Result<SparseMatrix> {
    let asm = SystemAssembler::single(
        space,
        ManufacturedData::homogeneous(coefficients.clone()),
        None,
    )?;
    let mut s = asm.run(t, true, false)?.stiffness;
    s.values.iter_mut().for_each(|v| *v *= weight);
    Ok(s)
}

/// Weak residual of the exact solution tested against every basis function.
pub fn assemble_manufactured_rhs(
    space: &EvolvingSpace,
    t: f64,
    data: &ManufacturedData,
    weight: f64,
) -> Result<Vec<f64>> {
    let asm = SystemAssembler::single(space, data.clone(), None)?;
    let mut r = asm.run(t, false, true)?.rhs;
    r.iter_mut().for_each(|v| *v *= weight);
    Ok(r)
}

/// Block mass, stiffness and right-hand side of the coupled system.
pub fn assemble_coupled(
    bulk: &EvolvingSpace,
    surface: &EvolvingSpace,
    trace: &TraceMap,
    t: f64,
    data: &CoupledData,
) -> Result<AssembledSystem> {
    SystemAssembler::coupled(bulk, surface, trace, data.clone(), None)?.assemble(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::{build_bulk_space, build_surface_space, build_trace_map, NodePlacement};
    use crate::geometry::fields::{Constant, SinTimeBilinear};
    use crate::geometry::{DomainEvolution, EllipsoidFlow, Stationary};
    use crate::mesh::{
        macro_ball_bulk, macro_sphere_surface, sphere_surface_level, SimplicialMesh,
    };

    fn flow() -> Arc<dyn DomainEvolution> {
        Arc::new(EllipsoidFlow)
    }

    fn unit_triangle() -> EvolvingSpace {
        let mesh = SimplicialMesh::new(
            2,
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![vec![0, 1, 2]],
            None,
        )
        .unwrap();
        EvolvingSpace::new(mesh, 1, Arc::new(Stationary), NodePlacement::Affine).unwrap()
    }

    fn variable() -> CoefficientSet {
        CoefficientSet {
            diffusion: Arc::new(|x, _| Mat3::identity() * (1.0 + x.x * x.x)),
            advection: Arc::new(|_, _, nu| {
                let b = Vec3::new(1.0, 2.0, 0.0);
                nu.map_or(b, |n| project_tangential(n, &b))
            }),
            reaction: Arc::new(|x, _| (x.x * x.y).sin()),
        }
    }

    #[test]
    fn csr_basics() {
        let a = SparseMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]));
        assert_eq!(a.mul_vec(&[1.0, 1.0]), vec![3.0, 3.0]);
        assert_eq!(
            SparseMatrix::identity(3).mul_vec(&[1.0, 2.0, 3.0]),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(a.get(1, 0), 0.0);
        let mut buf = Vec::new();
        a.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("%%MatrixMarket"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn reference_p1_matrices() {
        let s = unit_triangle();
        let m = assemble_mass(&s, 0.0, 1.0).unwrap().to_dense();
        let mexact =
            DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0]) / 24.0;
        assert!((m - mexact).amax() < 1e-15);
        let k = assemble_stiffness(&s, 0.0, &CoefficientSet::laplacian(), 1.0)
            .unwrap()
            .to_dense();
        let kexact =
            DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 1.0, 0.0, -1.0, 0.0, 1.0]) / 2.0;
        assert!((k - kexact).amax() < 1e-15);
        assert!(assemble_mass(&s, 0.0, 0.0)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    /// Straightforward dense loop over elements and quadrature points.
    fn brute_force(
        space: &EvolvingSpace,
        t: f64,
        coeffs: &CoefficientSet,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = space.dof_count();
        let rule = make_quadrature(space.reference().dim(), 2 * space.order() + 2).unwrap();
        let mut m = DMatrix::zeros(n, n);
        let mut s = DMatrix::zeros(n, n);
        for e in 0..space.element_count() {
            let geo = space.element_geometry(e, t, &rule).unwrap();
            let dofs = space.element_dofs(e);
            for (q, (p, w)) in rule.points().iter().zip(rule.weights()).enumerate() {
                let chi = space.reference().eval_basis(p);
                let x = geo.points[q];
                let nu = (space.kind() == SpaceKind::Surface)
                    .then(|| space.evolution().normal_at(&x, t));
                let a = (coeffs.diffusion)(&x, t);
                let b = (coeffs.advection)(&x, t, nu.as_ref());
                let c = (coeffs.reaction)(&x, t);
                let g = geo.gradients_at(q);
                let dx = w * geo.sqrt_g[q];
                for i in 0..dofs.len() {
                    for j in 0..dofs.len() {
                        m[(dofs[i], dofs[j])] += dx * chi[i] * chi[j];
                        s[(dofs[i], dofs[j])] += dx
                            * ((a * g[j]).dot(&g[i]) + chi[j] * b.dot(&g[i]) + c * chi[i] * chi[j]);
                    }
                }
            }
        }
        (m, s)
    }

    #[test]
    fn csr_matches_dense_oracle() {
        let cases = [
            build_surface_space(macro_sphere_surface(), 1, flow()).unwrap(),
            build_surface_space(macro_sphere_surface(), 2, flow()).unwrap(),
            build_bulk_space(macro_ball_bulk(), 1, flow()).unwrap(),
            build_bulk_space(macro_ball_bulk(), 2, flow()).unwrap(),
        ];
        for space in &cases {
            for t in [0.0, 0.7] {
                let (m, s) = brute_force(space, t, &variable());
                let mc = assemble_mass(space, t, 1.0).unwrap().to_dense();
                let sc = assemble_stiffness(space, t, &variable(), 1.0)
                    .unwrap()
                    .to_dense();
                assert!((mc - m).amax() < 1e-13);
                assert!((sc - s).amax() < 1e-13);
            }
        }
    }

    #[test]
    fn mass_and_stiffness_invariants() {
        let space = build_surface_space(sphere_surface_level(1), 2, flow()).unwrap();
        let t = 0.4;
        let m = assemble_mass(&space, t, 1.0).unwrap();
        assert!(m.pattern().is_symmetric());
        assert!(m.asymmetry() < 1e-15);
        let total: f64 = m.values().iter().sum();
        assert!((total - space.discrete_measure(t).unwrap()).abs() < 1e-12);
        let s = assemble_stiffness(&space, t, &CoefficientSet::laplacian(), 1.0).unwrap();
        assert!(s
            .mul_vec(&vec![1.0; space.dof_count()])
            .iter()
            .all(|v| v.abs() < 1e-12));
        assert!(s.asymmetry() < 1e-13);
        let eig = s.to_dense().symmetric_eigen();
        assert!(eig.eigenvalues.min() > -1e-10);
        let meig = m.to_dense().symmetric_eigen();
        assert!(meig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn quadrature_refinement_is_stable() {
        // coarser curved levels under-integrate √g by more than 1e-8
        let space = build_surface_space(sphere_surface_level(4), 2, flow()).unwrap();
        let data = ManufacturedData::homogeneous(variable());
        let lo = SystemAssembler::single(&space, data.clone(), Some(6))
            .unwrap()
            .assemble(0.5)
            .unwrap();
        let hi = SystemAssembler::single(&space, data, Some(8))
            .unwrap()
            .assemble(0.5)
            .unwrap();
        for (a, b) in [(&lo.mass, &hi.mass), (&lo.stiffness, &hi.stiffness)] {
            let scale = b.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let diff = a
                .values()
                .iter()
                .zip(b.values())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(diff <= 1e-8 * scale, "{diff}");
        }
    }

    #[test]
    fn mass_is_time_continuous() {
        let space = build_surface_space(sphere_surface_level(1), 2, flow()).unwrap();
        let t = 0.3;
        let m0 = assemble_mass(&space, t, 1.0).unwrap();
        let gap = |d: f64| {
            let m1 = assemble_mass(&space, t + d, 1.0).unwrap();
            m1.values()
                .iter()
                .zip(m0.values())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        };
        let (g2, g3) = (gap(1e-2), gap(1e-3));
        assert!(g3 < g2);
        let ratio = g2 / g3;
        assert!((8.0..12.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn manufactured_rhs_cases() {
        let space = build_surface_space(macro_sphere_surface(), 2, flow()).unwrap();
        let zero = ManufacturedData::new(variable(), Arc::new(Constant(0.0)));
        assert!(assemble_manufactured_rhs(&space, 0.3, &zero, 1.0)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let frozen = build_surface_space(macro_sphere_surface(), 2, Arc::new(Stationary)).unwrap();
        let constant = ManufacturedData::new(CoefficientSet::laplacian(), Arc::new(Constant(3.0)));
        assert!(assemble_manufactured_rhs(&frozen, 0.3, &constant, 1.0)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-15));

        // at t = 0 the exact solution vanishes and only ∂•u = x₂x₃ remains
        let u = ManufacturedData::new(variable(), Arc::new(SinTimeBilinear { i: 1, j: 2 }));
        let r = assemble_manufactured_rhs(&space, 0.0, &u, 1.0).unwrap();
        let oracle = |degree: usize| {
            let rule = make_quadrature(2, degree).unwrap();
            let mut out = vec![0.0; space.dof_count()];
            for e in 0..space.element_count() {
                let geo = space.element_geometry(e, 0.0, &rule).unwrap();
                for (q, (p, w)) in rule.points().iter().zip(rule.weights()).enumerate() {
                    let chi = space.reference().eval_basis(p);
                    let x = geo.points[q];
                    for (i, &d) in space.element_dofs(e).iter().enumerate() {
                        out[d] += w * geo.sqrt_g[q] * x.y * x.z * chi[i];
                    }
                }
            }
            out
        };
        let gap = |o: Vec<f64>| {
            r.iter()
                .zip(&o)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        };
        assert!(gap(oracle(6)) < 1e-15);
        assert!(gap(oracle(12)) < 1e-5);
    }

    fn coupled_setup(k: usize) -> (EvolvingSpace, EvolvingSpace, TraceMap) {
        let mesh = macro_ball_bulk();
        let boundary = mesh.boundary_surface().unwrap();
        let bulk = build_bulk_space(mesh, k, flow()).unwrap();
        let surf = build_surface_space(boundary.mesh.clone(), k, flow()).unwrap();
        let trace = build_trace_map(&bulk, &surf, &boundary).unwrap();
        (bulk, surf, trace)
    }

    fn coupled_data(alpha: f64, beta: f64) -> CoupledData {
        CoupledData {
            bulk: ManufacturedData::new(
                CoefficientSet::laplacian(),
                Arc::new(SinTimeBilinear { i: 0, j: 1 }),
            ),
            surface: ManufacturedData::new(
                CoefficientSet::laplacian(),
                Arc::new(SinTimeBilinear { i: 1, j: 2 }),
            ),
            alpha,
            beta,
        }
    }

    #[test]
    fn coupled_blocks() {
        let (bulk, surf, trace) = coupled_setup(2);
        let nb = bulk.dof_count();
        let t = 0.5;
        let sys = assemble_coupled(&bulk, &surf, &trace, t, &coupled_data(1.0, 1.0)).unwrap();
        assert_eq!(sys.mass.dim(), nb + surf.dof_count());
        assert!(sys.mass.asymmetry() < 1e-15);
        assert!(sys.stiffness.asymmetry() < 1e-13);

        let mb = assemble_mass(&bulk, t, 1.0).unwrap();
        let ms = assemble_mass(&surf, t, 1.0).unwrap();
        let dense = sys.mass.to_dense();
        for i in 0..nb {
            for j in 0..nb {
                assert!((dense[(i, j)] - mb.get(i, j)).abs() < 1e-15);
            }
        }
        for i in 0..surf.dof_count() {
            for j in 0..surf.dof_count() {
                assert!((dense[(nb + i, nb + j)] - ms.get(i, j)).abs() < 1e-15);
            }
        }

        // the coupling matrix is the Gram matrix of (trace φ − ρ) on Γh
        let sb = assemble_stiffness(&bulk, t, &CoefficientSet::laplacian(), 1.0)
            .unwrap()
            .to_dense();
        let ss = assemble_stiffness(&surf, t, &CoefficientSet::laplacian(), 1.0)
            .unwrap()
            .to_dense();
        let mut c = sys.stiffness.to_dense();
        c.view_mut((0, 0), (nb, nb)).zip_apply(&sb, |a, b| *a -= b);
        c.view_mut((nb, nb), (surf.dof_count(), surf.dof_count()))
            .zip_apply(&ss, |a, b| *a -= b);
        assert!(c.clone().symmetric_eigen().eigenvalues.min() > -1e-12);
        let mut ones = vec![1.0; c.nrows()];
        ones[nb..].iter_mut().for_each(|v| *v = 1.0);
        let cv = &c * DMatrix::from_column_slice(c.nrows(), 1, &ones);
        assert!(cv.amax() < 1e-12);
        for (s, &b) in trace.surface_to_bulk.iter().enumerate() {
            for (s2, &b2) in trace.surface_to_bulk.iter().enumerate() {
                assert!((c[(b, nb + s2)] + ms.get(s, s2)).abs() < 1e-14);
                assert!((c[(b, b2)] - ms.get(s, s2)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn coupled_beta_zero_decouples() {
        let (bulk, surf, trace) = coupled_setup(1);
        let nb = bulk.dof_count();
        let t = 0.2;
        let mut data = coupled_data(1.0, 0.0);
        data.surface.exact = None;
        let sys = assemble_coupled(&bulk, &surf, &trace, t, &data).unwrap();
        let bulk_only = SystemAssembler::single(&bulk, data.bulk.clone(), None)
            .unwrap()
            .assemble(t)
            .unwrap();
        let ms = assemble_mass(&surf, t, 1.0).unwrap();
        let dense = sys.stiffness.to_dense();
        let sb = bulk_only.stiffness.to_dense();
        for i in 0..nb {
            for j in 0..nb {
                let mut expected = sb[(i, j)];
                // α² ∫ trace φ_i φ_j remains with α = 1
                for (s, &b) in trace.surface_to_bulk.iter().enumerate() {
                    for (s2, &b2) in trace.surface_to_bulk.iter().enumerate() {
                        if (b, b2) == (i, j) {
                            expected += ms.get(s, s2);
                        }
                    }
                }
                assert!((dense[(i, j)] - expected).abs() < 1e-14);
            }
        }
        for i in 0..surf.dof_count() {
            assert!(sys.mass.get(nb + i, nb + i) == 0.0);
            for j in 0..nb {
                assert_eq!(dense[(nb + i, j)], 0.0);
            }
        }
    }

    #[test]
    fn coupled_rhs_vanishes_when_traces_agree() {
        let (bulk, surf, trace) = coupled_setup(2);
        let data = CoupledData {
            bulk: ManufacturedData::new(CoefficientSet::laplacian(), Arc::new(Constant(2.0))),
            surface: ManufacturedData::new(CoefficientSet::laplacian(), Arc::new(Constant(2.0))),
            alpha: 1.0,
            beta: 1.0,
        };
        let frozen_bulk = EvolvingSpace::new(
            bulk.mesh().clone(),
            2,
            Arc::new(Stationary),
            NodePlacement::BallBlending,
        )
        .unwrap();
        let frozen_surf = EvolvingSpace::new(
            surf.mesh().clone(),
            2,
            Arc::new(Stationary),
            NodePlacement::SphereProjection,
        )
        .unwrap();
        let sys = assemble_coupled(&frozen_bulk, &frozen_surf, &trace, 0.4, &data).unwrap();
        assert!(sys.rhs.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn mismatched_trace_rejected() {
        let (bulk, surf, mut trace) = coupled_setup(1);
        trace.surface_to_bulk.pop();
        assert!(matches!(
            assemble_coupled(&bulk, &surf, &trace, 0.0, &coupled_data(1.0, 1.0)),
            Err(Error::Construction(_))
        ));
    }
}
