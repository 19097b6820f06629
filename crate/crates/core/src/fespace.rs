//! Evolving isoparametric Lagrange spaces.
//!
//! A space couples fixed connectivity with Lagrange nodes whose positions
//! follow the flow: `a_i(t) = Φ_t(a_i(0))`. Basis functions are transported
//! with the nodes, so the degree-of-freedom layout never changes in time.
//!
//! Global nodes are identified by their barycentric multi-index over global
//! vertex ids, so two elements sharing a sub-simplex produce the same key
//! and the same initial position for every shared lattice point.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::geometry::{initial_surface_projection, AmbientField, DomainEvolution};
use crate::mesh::{measure_size, write_vtk, BoundarySurface, MeshSize, SimplicialMesh};
use crate::refelem::{make_quadrature, QuadratureRule, ReferenceElement, Tabulation};
use crate::{Error, Mat3, Result, Vec3};

/// Smallest admissible measure factor `√g` or `|det J|`.
pub const DEGENERATE_MEASURE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Surface,
    Bulk,
}

/// How initial Lagrange nodes are placed from the affine lattice points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodePlacement {
    /// Keep the affine lattice points (flat elements).
    Affine,
    /// Radially project every lattice point onto the unit sphere.
    SphereProjection,
    /// Blend boundary elements of a ball mesh towards the unit sphere with
    /// weight `(λ*)^{k+2}`; interior elements stay affine.
    BallBlending,
}

type NodeKey = Vec<(usize, usize)>;

/// An isoparametric Lagrange space on an evolving surface or bulk domain.
#[derive(Debug, Clone)]
pub struct EvolvingSpace {
    kind: SpaceKind,
    reference: ReferenceElement,
    mesh: SimplicialMesh,
    element_dofs: Vec<usize>,
    key_index: HashMap<NodeKey, usize>,
    initial_nodes: Vec<Vec3>,
    boundary_nodes: Vec<bool>,
    evolution: Arc<dyn DomainEvolution>,
}

/// Per-element geometry of the isoparametric map at one time instant.
#[derive(Debug, Clone, Default)]
pub struct ElementGeometry {
    /// Node positions of the element at time `t`.
    pub node_positions: Vec<Vec3>,
    /// Physical quadrature points `F_K(x̂_q)`.
    pub points: Vec<Vec3>,
    /// `∇F_K(x̂_q)` in the leading `dim` columns. For surfaces the third
    /// column holds the unit element normal.
    pub jacobians: Vec<Mat3>,
    /// `√det G` (surface) or `|det ∇F|` (bulk) at each quadrature point.
    pub sqrt_g: Vec<f64>,
    /// Physical (tangential for surfaces) basis gradients, `nq × N` row-major.
    pub gradients: Vec<Vec3>,
    /// Unit element normals (surface only, empty otherwise).
    pub normals: Vec<Vec3>,
    basis_count: usize,
    dim: usize,
}

impl ElementGeometry {
    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    /// Physical basis gradients at quadrature point `q`.
    pub fn gradients_at(&self, q: usize) -> &[Vec3] {
        &self.gradients[q * self.basis_count..(q + 1) * self.basis_count]
    }

    /// First fundamental form `G = ∇F^T ∇F` at quadrature point `q`.
    pub fn gram(&self, q: usize) -> DMatrix<f64> {
        let j = &self.jacobians[q];
        DMatrix::from_fn(self.dim, self.dim, |a, b| j.column(a).dot(&j.column(b)))
    }
}

/// Bulk degrees of freedom matching the surface degrees of freedom of the
/// boundary space.
#[derive(Debug, Clone)]
pub struct TraceMap {
    /// Bulk dof for every surface dof.
    pub surface_to_bulk: Vec<usize>,
    /// `(tetrahedron, local face)` of every surface element.
    pub face_elements: Vec<(usize, usize)>,
}

impl EvolvingSpace {
    /// Builds a space on `mesh` with the given node placement. The kind
    /// follows the simplex dimension of the mesh.
    pub fn new(
        mesh: SimplicialMesh,
        order: usize,
        evolution: Arc<dyn DomainEvolution>,
        placement: NodePlacement,
    ) -> Result<Self> {
        let dim = mesh.simplex_dim();
        let kind = if dim == 2 {
            SpaceKind::Surface
        } else {
            SpaceKind::Bulk
        };
        let reference = ReferenceElement::new(dim, order)?;

        let mut node_keys: Vec<NodeKey> =
            (0..mesh.vertex_count()).map(|v| vec![(v, order)]).collect();
        let mut key_index: HashMap<NodeKey, usize> = node_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        let nloc = reference.basis_count();
        let mut element_dofs = Vec::with_capacity(mesh.simplex_count() * nloc);
        for s in mesh.simplices() {
            for alpha in reference.multi_indices() {
                let key = node_key(s, alpha);
                let next = node_keys.len();
                let id = *key_index.entry(key.clone()).or_insert_with(|| {
                    node_keys.push(key);
                    next
                });
                element_dofs.push(id);
            }
        }

        let placer = Placer::new(&mesh, order, placement)?;
        let mut initial_nodes = Vec::with_capacity(node_keys.len());
        let mut boundary_nodes = Vec::with_capacity(node_keys.len());
        for key in &node_keys {
            let (x, on_boundary) = placer.place(&mesh, key)?;
            initial_nodes.push(x);
            boundary_nodes.push(on_boundary);
        }

        let space = Self {
            kind,
            reference,
            mesh,
            element_dofs,
            key_index,
            initial_nodes,
            boundary_nodes,
            evolution,
        };
        space.check_initial_nodes(placement)?;
        Ok(space)
    }

    fn check_initial_nodes(&self, placement: NodePlacement) -> Result<()> {
        let psi = |x: &Vec3| self.evolution.level_set(x, 0.0);
        match placement {
            NodePlacement::Affine => Ok(()),
            NodePlacement::SphereProjection => {
                match self.initial_nodes.iter().position(|x| psi(x).abs() > 1e-12) {
                    Some(i) => Err(Error::Construction(format!("surface node {i} is off Γ₀"))),
                    None => Ok(()),
                }
            }
            NodePlacement::BallBlending => {
                for (i, (x, &b)) in self
                    .initial_nodes
                    .iter()
                    .zip(&self.boundary_nodes)
                    .enumerate()
                {
                    let p = psi(x);
                    if (b && p.abs() > 1e-12) || (!b && p >= 0.0) {
                        return Err(Error::Construction(format!(
                            "bulk node {i} misplaced (boundary {b}, ψ = {p:e})"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn reference(&self) -> &ReferenceElement {
        &self.reference
    }

    pub fn order(&self) -> usize {
        self.reference.order()
    }

    pub fn mesh(&self) -> &SimplicialMesh {
        &self.mesh
    }

    pub fn evolution(&self) -> &Arc<dyn DomainEvolution> {
        &self.evolution
    }

    pub fn dof_count(&self) -> usize {
        self.initial_nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.mesh.simplex_count()
    }

    pub fn element_dofs(&self, element: usize) -> &[usize] {
        let n = self.reference.basis_count();
        &self.element_dofs[element * n..(element + 1) * n]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.element_dofs.chunks(self.reference.basis_count())
    }

    pub fn initial_nodes(&self) -> &[Vec3] {
        &self.initial_nodes
    }

    /// Whether each node lies on the boundary sphere (bulk spaces).
    pub fn boundary_nodes(&self) -> &[bool] {
        &self.boundary_nodes
    }

    /// Global dof with the given barycentric key over global vertices.
    fn dof_of_key(&self, key: &NodeKey) -> Option<usize> {
        self.key_index.get(key).copied()
    }

    /// Node positions at time `t`: the flow applied to the initial nodes.
    pub fn node_positions_at(&self, t: f64) -> Vec<Vec3> {
        self.initial_nodes
            .iter()
            .map(|x| self.evolution.flow(x, t))
            .collect()
    }

    /// Nodal values of the discrete velocity, `w(a_i(t), t)`.
    pub fn nodal_velocity(&self, t: f64) -> Vec<Vec3> {
        self.node_positions_at(t)
            .iter()
            .map(|x| self.evolution.velocity(x, t))
            .collect()
    }

    /// Nodal interpolation of an ambient field at time `t`.
    pub fn interpolate(&self, field: &dyn AmbientField, t: f64) -> Vec<f64> {
        self.node_positions_at(t)
            .iter()
            .map(|x| field.value(x, t))
            .collect()
    }

    /// Element geometry at time `t` for a fresh quadrature rule.
    pub fn element_geometry(
        &self,
        element: usize,
        t: f64,
        rule: &QuadratureRule,
    ) -> Result<ElementGeometry> {
        let tab = self.reference.tabulate(rule);
        let positions = self.node_positions_at(t);
        let mut geo = ElementGeometry::default();
        self.fill_geometry(element, &positions, &tab, &mut geo)?;
        Ok(geo)
    }

    /// Fills `geo` for `element` from node positions at some time and a
    /// tabulation of the reference basis.
    pub fn fill_geometry(
        &self,
        element: usize,
        positions: &[Vec3],
        tab: &Tabulation,
        geo: &mut ElementGeometry,
    ) -> Result<()> {
        let dofs = self.element_dofs(element);
        let n = dofs.len();
        let nq = tab.point_count();
        let dim = self.reference.dim();
        geo.basis_count = n;
        geo.dim = dim;
        geo.node_positions.clear();
        geo.node_positions
            .extend(dofs.iter().map(|&d| positions[d]));
        geo.points.clear();
        geo.jacobians.clear();
        geo.sqrt_g.clear();
        geo.gradients.clear();
        geo.normals.clear();

        for q in 0..nq {
            let vals = tab.values(q);
            let rg = tab.grads(q);
            let mut x = Vec3::zeros();
            let mut jac = Mat3::zeros();
            for (i, p) in geo.node_positions.iter().enumerate() {
                x += p * vals[i];
                for d in 0..dim {
                    let mut col = jac.column_mut(d);
                    col += p * rg[i][d];
                }
            }
            let measure = if dim == 2 {
                let normal = jac.column(0).cross(&jac.column(1));
                let sqrt_g = normal.norm();
                if sqrt_g < DEGENERATE_MEASURE {
                    return Err(Error::DegenerateElement {
                        element,
                        measure: sqrt_g,
                    });
                }
                let unit = normal / sqrt_g;
                jac.set_column(2, &unit);
                geo.normals.push(unit);
                sqrt_g
            } else {
                let det = jac.determinant().abs();
                if det < DEGENERATE_MEASURE {
                    return Err(Error::DegenerateElement {
                        element,
                        measure: det,
                    });
                }
                det
            };
            // For surfaces the augmented Jacobian [t1 t2 ν] satisfies
            // J^{-T}(ĝ, 0) = ∇F G^{-1} ĝ, the tangential gradient.
            let inv_t = jac
                .try_inverse()
                .ok_or(Error::DegenerateElement { element, measure })?
                .transpose();
            for g in rg.iter().take(n) {
                geo.gradients.push(inv_t * Vec3::new(g[0], g[1], g[2]));
            }
            geo.points.push(x);
            geo.jacobians.push(jac);
            geo.sqrt_g.push(measure);
        }
        Ok(())
    }

    /// Total area (surface) or volume (bulk) of the discrete domain at `t`.
    pub fn discrete_measure(&self, t: f64) -> Result<f64> {
        let rule = make_quadrature(self.reference.dim(), 2 * self.order() + 2)?;
        let tab = self.reference.tabulate(&rule);
        let positions = self.node_positions_at(t);
        let mut geo = ElementGeometry::default();
        let mut total = 0.0;
        for e in 0..self.element_count() {
            self.fill_geometry(e, &positions, &tab, &mut geo)?;
            total += geo
                .sqrt_g
                .iter()
                .zip(tab.weights())
                .map(|(g, w)| g * w)
                .sum::<f64>();
        }
        Ok(total)
    }

    /// Element sizes measured on the Lagrange nodes at time `t`.
    pub fn mesh_size(&self, t: f64) -> MeshSize {
        let positions = self.node_positions_at(t);
        let slots: Vec<usize> = (0..=self.reference.dim())
            .map(|v| self.reference.vertex_node(v))
            .collect();
        measure_size(self.reference.dim(), self.elements(), &positions, &slots)
    }

    /// Flat sub-simplices of the Lagrange lattice of every element, in global
    /// node numbering (`k²` triangles per triangle; tetrahedra are split into
    /// 1 or 8 pieces for `k = 1, 2`).
    pub fn linearized_cells(&self) -> Vec<Vec<usize>> {
        let k = self.order();
        let local = lattice_subcells(&self.reference);
        let mut cells = Vec::with_capacity(self.element_count() * local.len());
        for dofs in self.elements() {
            for c in &local {
                cells.push(c.iter().map(|&i| dofs[i]).collect());
            }
        }
        debug_assert!(self.kind == SpaceKind::Surface || k <= 2);
        cells
    }

    /// Writes the node cloud at time `t` with a linearised sub-triangulation
    /// and optional nodal values as legacy VTK.
    pub fn write_vtk<W: Write>(&self, w: W, t: f64, values: Option<(&str, &[f64])>) -> Result<()> {
        let positions = self.node_positions_at(t);
        let cells = self.linearized_cells();
        write_vtk(
            w,
            &format!("evolfem t={t}"),
            &positions,
            self.reference.dim(),
            cells.iter().map(Vec::as_slice),
            values,
        )
    }
}

/// Builds the surface space: lattice points projected radially onto Γ₀.
pub fn build_surface_space(
    mesh: SimplicialMesh,
    order: usize,
    evolution: Arc<dyn DomainEvolution>,
) -> Result<EvolvingSpace> {
    if mesh.simplex_dim() != 2 {
        return Err(Error::InvalidMesh(
            "surface space needs a triangle mesh".into(),
        ));
    }
    EvolvingSpace::new(mesh, order, evolution, NodePlacement::SphereProjection)
}

/// Builds the bulk space: interior elements affine, boundary elements
/// blended onto the sphere.
pub fn build_bulk_space(
    mesh: SimplicialMesh,
    order: usize,
    evolution: Arc<dyn DomainEvolution>,
) -> Result<EvolvingSpace> {
    if mesh.simplex_dim() != 3 {
        return Err(Error::InvalidMesh(
            "bulk space needs a tetrahedral mesh".into(),
        ));
    }
    EvolvingSpace::new(mesh, order, evolution, NodePlacement::BallBlending)
}

/// Matches the dofs of a surface space built on `boundary.mesh` with the
/// bulk dofs of `bulk` on the boundary.
pub fn build_trace_map(
    bulk: &EvolvingSpace,
    surface: &EvolvingSpace,
    boundary: &BoundarySurface,
) -> Result<TraceMap> {
    if bulk.order() != surface.order() {
        return Err(Error::Construction("bulk and surface orders differ".into()));
    }
    if surface.element_count() != boundary.faces.len() {
        return Err(Error::Construction(
            "surface space is not built on the boundary mesh".into(),
        ));
    }
    let mut surface_to_bulk = vec![usize::MAX; surface.dof_count()];
    for e in 0..surface.element_count() {
        let verts = surface.mesh().simplex(e);
        let bulk_verts: Vec<usize> = verts.iter().map(|&v| boundary.bulk_vertex[v]).collect();
        for (alpha, &sdof) in surface
            .reference()
            .multi_indices()
            .iter()
            .zip(surface.element_dofs(e))
        {
            let key = node_key(&bulk_verts, alpha);
            let bdof = bulk.dof_of_key(&key).ok_or_else(|| {
                Error::Construction(format!("surface dof {sdof} has no bulk partner"))
            })?;
            match surface_to_bulk[sdof] {
                usize::MAX => surface_to_bulk[sdof] = bdof,
                prev if prev != bdof => {
                    return Err(Error::Construction(format!(
                        "surface dof {sdof} matched twice"
                    )));
                }
                _ => {}
            }
            let gap = (surface.initial_nodes()[sdof] - bulk.initial_nodes()[bdof]).norm();
            if gap > 1e-12 {
                return Err(Error::Construction(format!(
                    "surface dof {sdof} and bulk dof {bdof} differ by {gap:e}"
                )));
            }
        }
    }
    if let Some(s) = surface_to_bulk.iter().position(|&b| b == usize::MAX) {
        return Err(Error::Construction(format!("surface dof {s} unmatched")));
    }
    Ok(TraceMap {
        surface_to_bulk,
        face_elements: boundary.faces.clone(),
    })
}

/// Sorted `(vertex, multiplicity)` pairs with non-zero multiplicity.
fn node_key(vertices: &[usize], alpha: &[usize]) -> NodeKey {
    let mut key: NodeKey = vertices
        .iter()
        .zip(alpha)
        .filter(|(_, &a)| a > 0)
        .map(|(&v, &a)| (v, a))
        .collect();
    key.sort_unstable();
    key
}

/// Initial node placement rules.
struct Placer {
    order: usize,
    placement: NodePlacement,
    boundary_edges: HashSet<[usize; 2]>,
    boundary_faces: HashSet<[usize; 3]>,
}

impl Placer {
    fn new(mesh: &SimplicialMesh, order: usize, placement: NodePlacement) -> Result<Self> {
        let mut boundary_edges = HashSet::new();
        let mut boundary_faces = HashSet::new();
        match placement {
            NodePlacement::Affine => {}
            NodePlacement::SphereProjection => {
                if let Some(v) = mesh
                    .vertices()
                    .iter()
                    .position(|v| (v.norm() - 1.0).abs() > 1e-10)
                {
                    return Err(Error::InvalidMesh(format!(
                        "vertex {v} is off the unit sphere"
                    )));
                }
            }
            NodePlacement::BallBlending => {
                let flags = mesh.boundary_flags();
                for (v, p) in mesh.vertices().iter().enumerate() {
                    if flags[v] && (p.norm() - 1.0).abs() > 1e-10 {
                        return Err(Error::InvalidMesh(format!(
                            "boundary vertex {v} is off the unit sphere"
                        )));
                    }
                }
                let surface = mesh.boundary_surface()?;
                for tri in surface.mesh.simplices() {
                    let mut f = [0usize; 3];
                    for (slot, &v) in f.iter_mut().zip(tri) {
                        *slot = surface.bulk_vertex[v];
                    }
                    f.sort_unstable();
                    boundary_edges.insert([f[0], f[1]]);
                    boundary_edges.insert([f[1], f[2]]);
                    boundary_edges.insert([f[0], f[2]]);
                    boundary_faces.insert(f);
                }
            }
        }
        Ok(Self {
            order,
            placement,
            boundary_edges,
            boundary_faces,
        })
    }

    /// Initial position of the node with `key` and whether it lies on the
    /// boundary of the domain.
    fn place(&self, mesh: &SimplicialMesh, key: &NodeKey) -> Result<(Vec3, bool)> {
        let k = self.order as f64;
        let affine: Vec3 = key
            .iter()
            .map(|&(v, a)| mesh.vertices()[v] * (a as f64 / k))
            .sum();
        match self.placement {
            NodePlacement::Affine => Ok((affine, false)),
            NodePlacement::SphereProjection => Ok((initial_surface_projection(&affine)?, true)),
            NodePlacement::BallBlending => {
                let flags = mesh.boundary_flags();
                let on_boundary: Vec<(usize, usize)> =
                    key.iter().copied().filter(|&(v, _)| flags[v]).collect();
                let verts: Vec<usize> = on_boundary.iter().map(|&(v, _)| v).collect();
                let spans_boundary = match verts.len() {
                    0 | 1 => true,
                    2 => self.boundary_edges.contains(&[verts[0], verts[1]]),
                    3 => self
                        .boundary_faces
                        .contains(&[verts[0], verts[1], verts[2]]),
                    _ => false,
                };
                if !spans_boundary {
                    return Err(Error::InvalidMesh(format!(
                        "boundary vertices {verts:?} of one element do not span a boundary simplex"
                    )));
                }
                // a single boundary vertex already lies on the sphere
                if on_boundary.len() <= 1 {
                    return Ok((affine, !on_boundary.is_empty() && key.len() == 1));
                }
                let lambda: f64 = on_boundary.iter().map(|&(_, a)| a as f64 / k).sum();
                let y: Vec3 = on_boundary
                    .iter()
                    .map(|&(v, a)| mesh.vertices()[v] * (a as f64 / k / lambda))
                    .sum();
                let py = initial_surface_projection(&y)?;
                let x = affine + (py - y) * lambda.powi(self.order as i32 + 2);
                Ok((x, on_boundary.len() == key.len()))
            }
        }
    }
}

/// Flat sub-simplices of the reference Lagrange lattice, as local node
/// indices.
fn lattice_subcells(reference: &ReferenceElement) -> Vec<Vec<usize>> {
    let k = reference.order();
    let idx: HashMap<&[usize], usize> = reference
        .multi_indices()
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_slice(), i))
        .collect();
    let find = |a: &[usize]| idx[a];
    match reference.dim() {
        2 => {
            let mut cells = Vec::with_capacity(k * k);
            for i in 0..k {
                for j in 0..k - i {
                    let p = |a: usize, b: usize| find(&[k - a - b, a, b]);
                    cells.push(vec![p(i, j), p(i + 1, j), p(i, j + 1)]);
                    if i + j + 1 < k {
                        cells.push(vec![p(i + 1, j), p(i + 1, j + 1), p(i, j + 1)]);
                    }
                }
            }
            cells
        }
        _ => {
            let vertex = |v: usize| reference.vertex_node(v);
            if k == 1 {
                return vec![(0..4).map(vertex).collect()];
            }
            // k = 2: red split through the edge nodes
            let mid = |a: usize, b: usize| {
                let mut m = vec![0; 4];
                m[a] = 1;
                m[b] = 1;
                find(&m)
            };
            let x = |v: usize| vertex(v);
            vec![
                vec![x(0), mid(0, 1), mid(0, 2), mid(0, 3)],
                vec![mid(0, 1), x(1), mid(1, 2), mid(1, 3)],
                vec![mid(0, 2), mid(1, 2), x(2), mid(2, 3)],
                vec![mid(0, 3), mid(1, 3), mid(2, 3), x(3)],
                vec![mid(0, 1), mid(0, 2), mid(0, 3), mid(1, 3)],
                vec![mid(0, 1), mid(0, 2), mid(1, 2), mid(1, 3)],
                vec![mid(0, 2), mid(0, 3), mid(1, 3), mid(2, 3)],
                vec![mid(0, 2), mid(1, 2), mid(1, 3), mid(2, 3)],
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{EllipsoidFlow, Stationary};
    use crate::mesh::{
        ball_bulk_level, macro_ball_bulk, macro_sphere_surface, sphere_surface_level,
    };
    use std::f64::consts::{FRAC_PI_2, PI};

    fn flow() -> Arc<dyn DomainEvolution> {
        Arc::new(EllipsoidFlow)
    }

    #[test]
    fn p1_surface_nodes_are_vertices() {
        let mesh = macro_sphere_surface();
        let s = build_surface_space(mesh.clone(), 1, flow()).unwrap();
        assert_eq!(s.dof_count(), 12);
        for (a, b) in s.initial_nodes().iter().zip(mesh.vertices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn p2_surface_dof_count_and_unit_nodes() {
        let s = build_surface_space(macro_sphere_surface(), 2, flow()).unwrap();
        assert_eq!(s.dof_count(), 42);
        assert!(s
            .initial_nodes()
            .iter()
            .all(|x| (x.norm() - 1.0).abs() < 1e-15));
        let s3 = build_surface_space(macro_sphere_surface(), 3, flow()).unwrap();
        // vertices + 2 per edge + 1 per face
        assert_eq!(s3.dof_count(), 12 + 60 + 20);
    }

    #[test]
    fn shared_nodes_have_one_index() {
        let s = build_surface_space(sphere_surface_level(1), 3, flow()).unwrap();
        let mut count = vec![0usize; s.dof_count()];
        for dofs in s.elements() {
            for &d in dofs {
                count[d] += 1;
            }
        }
        // vertices are shared by 5 or 6 triangles, edge nodes by 2, face nodes by 1
        assert!(count.iter().all(|&c| c >= 1));
        let edge_nodes = count.iter().filter(|&&c| c == 2).count();
        assert_eq!(edge_nodes, 2 * sphere_surface_level(1).edges().len());
    }

    #[test]
    fn off_sphere_mesh_rejected() {
        let flat = crate::mesh::refine_uniform(&macro_sphere_surface());
        assert!(matches!(
            build_surface_space(flat, 2, flow()),
            Err(Error::InvalidMesh(_))
        ));
    }

    #[test]
    fn node_motion() {
        let s = build_surface_space(sphere_surface_level(1), 2, flow()).unwrap();
        assert_eq!(s.node_positions_at(0.0), s.initial_nodes());
        for t in [0.0, 0.5, 1.0] {
            for x in s.node_positions_at(t) {
                assert!(s.evolution().level_set(&x, t).abs() <= 1e-10);
            }
        }
        let s = build_surface_space(macro_sphere_surface(), 1, flow()).unwrap();
        let moved = s.node_positions_at(FRAC_PI_2);
        for (x0, x) in s.initial_nodes().iter().zip(&moved) {
            if x0.x == 0.0 {
                assert_eq!(x0, x);
            }
        }
        let e1 = crate::mesh::macro_ball_bulk();
        let b = build_bulk_space(e1, 1, flow()).unwrap();
        let p = b.node_positions_at(FRAC_PI_2)[0];
        assert!((p - Vec3::new(1.25f64.sqrt(), 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn flat_right_triangle_geometry() {
        let mesh = SimplicialMesh::new(
            2,
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![vec![0, 1, 2]],
            None,
        )
        .unwrap();
        let s = EvolvingSpace::new(mesh, 1, Arc::new(Stationary), NodePlacement::Affine).unwrap();
        let rule = make_quadrature(2, 2).unwrap();
        let g = s.element_geometry(0, 0.0, &rule).unwrap();
        let expected = [Vec3::new(-1.0, -1.0, 0.0), Vec3::x(), Vec3::y()];
        for q in 0..g.point_count() {
            assert!((g.sqrt_g[q] - 1.0).abs() < 1e-15);
            for (a, b) in g.gradients_at(q).iter().zip(&expected) {
                assert!((a - b).norm() < 1e-15);
            }
            let gram = g.gram(q);
            assert!((gram[(0, 0)] - 1.0).abs() < 1e-15 && gram[(0, 1)].abs() < 1e-15);
        }
    }

    #[test]
    fn reference_tet_volume() {
        let mesh = SimplicialMesh::new(
            3,
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()],
            vec![vec![0, 1, 2, 3]],
            None,
        )
        .unwrap();
        let s = EvolvingSpace::new(mesh, 1, Arc::new(Stationary), NodePlacement::Affine).unwrap();
        let rule = make_quadrature(3, 2).unwrap();
        let g = s.element_geometry(0, 0.0, &rule).unwrap();
        assert!(g.sqrt_g.iter().all(|&m| (m - 1.0).abs() < 1e-15));
        assert!((s.discrete_measure(0.0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn surface_gradients_tangent_and_sum_to_zero() {
        let s = build_surface_space(sphere_surface_level(1), 3, flow()).unwrap();
        let rule = make_quadrature(2, 8).unwrap();
        for e in (0..s.element_count()).step_by(7) {
            let g = s.element_geometry(e, 0.7, &rule).unwrap();
            for q in 0..g.point_count() {
                let nu = g.normals[q];
                let mut sum = Vec3::zeros();
                for grad in g.gradients_at(q) {
                    assert!(grad.dot(&nu).abs() < 1e-12);
                    sum += grad;
                }
                assert!(sum.norm() < 1e-12);
                assert!(g.sqrt_g[q] > 0.0);
            }
        }
    }

    #[test]
    fn isoparametric_map_interpolates_nodes() {
        let s = build_bulk_space(ball_bulk_level(1), 2, flow()).unwrap();
        let pos = s.node_positions_at(0.3);
        let reference = s.reference();
        for e in 0..s.element_count() {
            for (i, node) in reference.nodes().iter().enumerate() {
                let vals = reference.eval_basis(node);
                let dofs = s.element_dofs(e);
                let x: Vec3 = dofs.iter().zip(&vals).map(|(&d, v)| pos[d] * *v).sum();
                assert!((x - pos[dofs[i]]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn icosahedron_area() {
        let s = build_surface_space(macro_sphere_surface(), 1, flow()).unwrap();
        let a = 4.0 / (10.0 + 2.0 * 5f64.sqrt()).sqrt();
        let exact = 20.0 * 3f64.sqrt() / 4.0 * a * a;
        let area = s.discrete_measure(0.0).unwrap();
        assert!((area - exact).abs() < 1e-13);
        assert!((area - 9.5746).abs() < 1e-4);
    }

    #[test]
    fn areas_and_volumes_approach_exact() {
        let mut prev = f64::INFINITY;
        for level in 0..3 {
            let s = build_surface_space(sphere_surface_level(level), 2, flow()).unwrap();
            let err = (s.discrete_measure(0.0).unwrap() - 4.0 * PI).abs();
            assert!(err < prev);
            prev = err;
        }
        let mut prev = f64::INFINITY;
        for level in 0..3 {
            let s = build_bulk_space(ball_bulk_level(level), 2, flow()).unwrap();
            let err = (s.discrete_measure(0.0).unwrap() - 4.0 * PI / 3.0).abs();
            assert!(err < prev, "level {level}: {err}");
            prev = err;
        }
    }

    #[test]
    fn bulk_blending_rules() {
        let mesh = ball_bulk_level(1);
        let s = build_bulk_space(mesh.clone(), 2, flow()).unwrap();
        let flags = mesh.boundary_flags();
        for (key, &id) in &s.key_index {
            let x = &s.initial_nodes()[id];
            let affine: Vec3 = key
                .iter()
                .map(|&(v, a)| mesh.vertices()[v] * (a as f64 / 2.0))
                .sum();
            let nb = key.iter().filter(|&&(v, _)| flags[v]).count();
            if nb == 0 {
                assert_eq!(*x, affine);
            }
            if nb == key.len() && key.len() == 1 {
                assert_eq!(*x, affine);
            }
        }
        // boundary-face edge midpoints are radial projections of the midpoint
        let b = mesh.boundary_surface().unwrap();
        let tri = b.mesh.simplex(0);
        let (u, v) = (b.bulk_vertex[tri[0]], b.bulk_vertex[tri[1]]);
        let key = node_key(&[u, v], &[1, 1]);
        let d = s.dof_of_key(&key).unwrap();
        let mid = 0.5 * (mesh.vertices()[u] + mesh.vertices()[v]);
        assert!((s.initial_nodes()[d] - mid.normalize()).norm() < 1e-15);
        assert!(s.boundary_nodes()[d]);
    }

    #[test]
    fn trace_map_counts() {
        let mesh = macro_ball_bulk();
        let boundary = mesh.boundary_surface().unwrap();
        for (k, expected) in [(1, 6), (2, 18)] {
            let bulk = build_bulk_space(mesh.clone(), k, flow()).unwrap();
            let surf = build_surface_space(boundary.mesh.clone(), k, flow()).unwrap();
            let trace = build_trace_map(&bulk, &surf, &boundary).unwrap();
            assert_eq!(trace.surface_to_bulk.len(), expected);
            for (s, &b) in trace.surface_to_bulk.iter().enumerate() {
                assert!((surf.initial_nodes()[s] - bulk.initial_nodes()[b]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_geometry_matches_boundary_faces() {
        let mesh = ball_bulk_level(1);
        let boundary = mesh.boundary_surface().unwrap();
        let k = 2;
        let bulk = build_bulk_space(mesh.clone(), k, flow()).unwrap();
        let surf = build_surface_space(boundary.mesh.clone(), k, flow()).unwrap();
        let trace = build_trace_map(&bulk, &surf, &boundary).unwrap();
        let t = 0.6;
        let bpos = bulk.node_positions_at(t);
        let spos = surf.node_positions_at(t);
        let rule = make_quadrature(2, 6).unwrap();
        let tab = surf.reference().tabulate(&rule);
        for e in 0..surf.element_count() {
            let mut geo = ElementGeometry::default();
            surf.fill_geometry(e, &spos, &tab, &mut geo).unwrap();
            // evaluate the same surface parametrisation through bulk nodes
            for q in 0..tab.point_count() {
                let x: Vec3 = surf
                    .element_dofs(e)
                    .iter()
                    .zip(tab.values(q))
                    .map(|(&d, v)| bpos[trace.surface_to_bulk[d]] * *v)
                    .sum();
                assert!((x - geo.points[q]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn linearized_cells_counts() {
        let s = build_surface_space(macro_sphere_surface(), 3, flow()).unwrap();
        assert_eq!(s.linearized_cells().len(), 20 * 9);
        let b = build_bulk_space(macro_ball_bulk(), 2, flow()).unwrap();
        assert_eq!(b.linearized_cells().len(), 64);
        let mut buf = Vec::new();
        s.write_vtk(&mut buf, 0.5, None).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("CELLS 180 720"));
    }
}
