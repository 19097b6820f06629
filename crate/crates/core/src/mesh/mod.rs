//! Simplicial meshes: triangle surfaces and tetrahedral volumes in R³.

mod io;

pub use io::{read_ascii, write_ascii, write_vtk, ASCII_MAGIC};

use std::collections::{BTreeMap, HashMap};

use crate::{Error, Result, Vec3};

/// Relative measure below which a simplex counts as degenerate.
const DEGENERATE_TOL: f64 = 1e-14;

/// A conforming simplicial mesh embedded in R³.
///
/// `simplex_dim` is 2 for surface meshes and 3 for tetrahedral meshes.
/// Boundary flags are meaningful for tetrahedral meshes only and are all
/// `false` on surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplicialMesh {
    simplex_dim: usize,
    vertices: Vec<Vec3>,
    cells: Vec<usize>,
    boundary: Vec<bool>,
}

/// Element size statistics of a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSize {
    pub h_max: f64,
    pub h_min: f64,
    pub rho_min: f64,
    pub quasi_uniformity: f64,
}

/// Boundary of a tetrahedral mesh as an outward oriented triangle mesh.
#[derive(Debug, Clone)]
pub struct BoundarySurface {
    /// Closed triangle mesh; its vertices are renumbered compactly.
    pub mesh: SimplicialMesh,
    /// Bulk vertex index of every surface vertex.
    pub bulk_vertex: Vec<usize>,
    /// `(tetrahedron, local face)` for every boundary triangle; local face
    /// `i` is the face opposite local vertex `i`.
    pub faces: Vec<(usize, usize)>,
}

impl SimplicialMesh {
    /// Builds a mesh, checking indices and non-degeneracy.
    pub fn new(
        simplex_dim: usize,
        vertices: Vec<Vec3>,
        simplices: Vec<Vec<usize>>,
        boundary: Option<Vec<bool>>,
    ) -> Result<Self> {
        if !(2..=3).contains(&simplex_dim) {
            return Err(Error::InvalidMesh(format!(
                "unsupported simplex dimension {simplex_dim}"
            )));
        }
        let nv = vertices.len();
        let boundary = boundary.unwrap_or_else(|| vec![false; nv]);
        if boundary.len() != nv {
            return Err(Error::Dimension {
                expected: nv,
                got: boundary.len(),
            });
        }
        let mut cells = Vec::with_capacity(simplices.len() * (simplex_dim + 1));
        for s in &simplices {
            if s.len() != simplex_dim + 1 {
                return Err(Error::Dimension {
                    expected: simplex_dim + 1,
                    got: s.len(),
                });
            }
            if let Some(&bad) = s.iter().find(|&&v| v >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "vertex index {bad} out of range"
                )));
            }
            cells.extend_from_slice(s);
        }
        let mesh = Self {
            simplex_dim,
            vertices,
            cells,
            boundary,
        };
        for i in 0..mesh.simplex_count() {
            let m = mesh.measure(i);
            let h = mesh.diameter(i);
            if !(m > DEGENERATE_TOL * h.powi(simplex_dim as i32)) {
                return Err(Error::InvalidMesh(format!(
                    "simplex {i} is degenerate (measure {m:e})"
                )));
            }
        }
        Ok(mesh)
    }

    pub fn simplex_dim(&self) -> usize {
        self.simplex_dim
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn simplex_count(&self) -> usize {
        self.cells.len() / (self.simplex_dim + 1)
    }

    pub fn simplex(&self, i: usize) -> &[usize] {
        let n = self.simplex_dim + 1;
        &self.cells[i * n..(i + 1) * n]
    }

    pub fn simplices(&self) -> impl Iterator<Item = &[usize]> {
        self.cells.chunks(self.simplex_dim + 1)
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    /// Replaces every vertex by `f(vertex)`, keeping connectivity.
    pub fn map_vertices<F: Fn(&Vec3) -> Vec3>(&self, f: F) -> Result<Self> {
        let vertices = self.vertices.iter().map(f).collect();
        let simplices = self.simplices().map(<[usize]>::to_vec).collect();
        Self::new(
            self.simplex_dim,
            vertices,
            simplices,
            Some(self.boundary.clone()),
        )
    }

    /// Signed volume (tetrahedra) or area (triangles, always ≥ 0).
    pub fn signed_measure(&self, i: usize) -> f64 {
        let s = self.simplex(i);
        let p = |j: usize| self.vertices[s[j]];
        match self.simplex_dim {
            2 => 0.5 * (p(1) - p(0)).cross(&(p(2) - p(0))).norm(),
            _ => (p(1) - p(0)).dot(&(p(2) - p(0)).cross(&(p(3) - p(0)))) / 6.0,
        }
    }

    pub fn measure(&self, i: usize) -> f64 {
        self.signed_measure(i).abs()
    }

    /// Largest edge length of simplex `i`.
    pub fn diameter(&self, i: usize) -> f64 {
        let s = self.simplex(i);
        let mut h: f64 = 0.0;
        for a in 0..s.len() {
            for b in a + 1..s.len() {
                h = h.max((self.vertices[s[a]] - self.vertices[s[b]]).norm());
            }
        }
        h
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .simplices()
            .flat_map(|s| {
                let n = s.len();
                (0..n).flat_map(move |a| (a + 1..n).map(move |b| sorted2(s[a], s[b])))
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// `V - E + F` for surface meshes.
    pub fn euler_characteristic(&self) -> i64 {
        let v = self.vertex_count() as i64;
        let e = self.edges().len() as i64;
        let f = self.simplex_count() as i64;
        match self.simplex_dim {
            2 => v - e + f,
            _ => {
                let faces = self.facet_incidence().len() as i64;
                v - e + faces - f
            }
        }
    }

    /// Facets (sorted vertex tuples) mapped to their incident simplices
    /// and local facet indices.
    fn facet_incidence(&self) -> BTreeMap<Vec<usize>, Vec<(usize, usize)>> {
        let mut map: BTreeMap<Vec<usize>, Vec<(usize, usize)>> = BTreeMap::new();
        for (i, s) in self.simplices().enumerate() {
            for local in 0..s.len() {
                let mut facet: Vec<usize> = s
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != local)
                    .map(|(_, &v)| v)
                    .collect();
                facet.sort_unstable();
                map.entry(facet).or_default().push((i, local));
            }
        }
        map
    }

    /// Checks conformity by facet hashing: no repeated vertex inside a
    /// simplex, no duplicated simplices, every facet shared by at most two
    /// simplices.
    pub fn check_conforming(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, s) in self.simplices().enumerate() {
            let mut key = s.to_vec();
            key.sort_unstable();
            if key.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidMesh(format!("simplex {i} repeats a vertex")));
            }
            if let Some(j) = seen.insert(key, i) {
                return Err(Error::InvalidMesh(format!(
                    "simplices {j} and {i} coincide"
                )));
            }
        }
        for (facet, inc) in self.facet_incidence() {
            if inc.len() > 2 {
                return Err(Error::InvalidMesh(format!(
                    "facet {facet:?} shared by {} simplices",
                    inc.len()
                )));
            }
        }
        Ok(())
    }

    /// Checks that a triangle mesh is closed and consistently oriented:
    /// every undirected edge occurs exactly once in each direction.
    pub fn check_closed_oriented_surface(&self) -> Result<()> {
        if self.simplex_dim != 2 {
            return Err(Error::InvalidMesh("not a surface mesh".into()));
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for s in self.simplices() {
            for a in 0..3 {
                *directed.entry((s[a], s[(a + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 || directed.get(&(b, a)) != Some(&1) {
                return Err(Error::InvalidMesh(format!(
                    "edge ({a},{b}) is not manifold/oriented"
                )));
            }
        }
        Ok(())
    }

    /// Checks that the orientations induced by the tetrahedra (vertex order
    /// corrected by the sign of the volume) traverse every interior face in
    /// opposite directions from its two tetrahedra.
    pub fn check_consistent_orientation(&self) -> Result<()> {
        if self.simplex_dim != 3 {
            return Err(Error::InvalidMesh("not a tetrahedral mesh".into()));
        }
        for (facet, inc) in self.facet_incidence() {
            if inc.len() != 2 {
                continue;
            }
            let a = self.outward_face(inc[0].0, inc[0].1);
            let b = self.outward_face(inc[1].0, inc[1].1);
            let reversed = [a[0], a[2], a[1]];
            let opposite = (0..3).any(|r| (0..3).all(|i| b[i] == reversed[(i + r) % 3]));
            if !opposite {
                return Err(Error::InvalidMesh(format!(
                    "face {facet:?} has the same orientation in tetrahedra {} and {}",
                    inc[0].0, inc[1].0
                )));
            }
        }
        Ok(())
    }

    /// Face `local` of tetrahedron `tet`, ordered with its normal pointing
    /// out of the tetrahedron.
    pub fn outward_face(&self, tet: usize, local: usize) -> [usize; 3] {
        let s = self.simplex(tet);
        let [a, b, c] = OUTWARD_FACES[local];
        let mut tri = [s[a], s[b], s[c]];
        if self.signed_measure(tet) < 0.0 {
            tri.swap(1, 2);
        }
        tri
    }

    /// Sum of all simplex measures.
    pub fn total_measure(&self) -> f64 {
        (0..self.simplex_count()).map(|i| self.measure(i)).sum()
    }

    /// Extracts the boundary of a tetrahedral mesh.
    pub fn boundary_surface(&self) -> Result<BoundarySurface> {
        if self.simplex_dim != 3 {
            return Err(Error::InvalidMesh(
                "boundary extraction needs a tetrahedral mesh".into(),
            ));
        }
        let mut faces = Vec::new();
        let mut tris = Vec::new();
        for (_, inc) in self.facet_incidence() {
            if inc.len() != 1 {
                continue;
            }
            let (tet, local) = inc[0];
            tris.push(self.outward_face(tet, local));
            faces.push((tet, local));
        }
        // deterministic order: by owning tetrahedron, then local face
        let mut order: Vec<usize> = (0..faces.len()).collect();
        order.sort_by_key(|&i| faces[i]);
        let faces: Vec<(usize, usize)> = order.iter().map(|&i| faces[i]).collect();
        let tris: Vec<[usize; 3]> = order.iter().map(|&i| tris[i]).collect();

        let mut used: Vec<usize> = tris.iter().flatten().copied().collect();
        used.sort_unstable();
        used.dedup();
        let mut local_of = vec![usize::MAX; self.vertex_count()];
        for (i, &v) in used.iter().enumerate() {
            local_of[v] = i;
        }
        let vertices = used.iter().map(|&v| self.vertices[v]).collect();
        let simplices = tris
            .iter()
            .map(|t| t.iter().map(|&v| local_of[v]).collect())
            .collect();
        let mesh = SimplicialMesh::new(2, vertices, simplices, None)?;
        mesh.check_closed_oriented_surface()
            .map_err(|e| Error::InvalidMesh(format!("non-manifold boundary: {e}")))?;
        Ok(BoundarySurface {
            mesh,
            bulk_vertex: used,
            faces,
        })
    }

    /// Element sizes using the vertex positions of the mesh itself.
    pub fn size(&self) -> MeshSize {
        let vertex_slots: Vec<usize> = (0..=self.simplex_dim).collect();
        measure_size(
            self.simplex_dim,
            self.simplices(),
            &self.vertices,
            &vertex_slots,
        )
    }
}

/// Faces opposite each local vertex of a positively oriented tetrahedron,
/// ordered so that their normals point outward.
const OUTWARD_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

fn sorted2(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

/// Element size statistics for elements given as lists of node indices into
/// `positions`. `h_K` is the largest distance between any two nodes of the
/// element, `ρ_K` the inradius of the simplex spanned by the nodes in
/// `vertex_slots`.
pub fn measure_size<'a, I>(
    simplex_dim: usize,
    elements: I,
    positions: &[Vec3],
    vertex_slots: &[usize],
) -> MeshSize
where
    I: IntoIterator<Item = &'a [usize]>,
{
    let mut h_max: f64 = 0.0;
    let mut h_min = f64::INFINITY;
    let mut rho_min = f64::INFINITY;
    for nodes in elements {
        let mut h: f64 = 0.0;
        for a in 0..nodes.len() {
            for b in a + 1..nodes.len() {
                h = h.max((positions[nodes[a]] - positions[nodes[b]]).norm());
            }
        }
        h_max = h_max.max(h);
        h_min = h_min.min(h);
        let v: Vec<Vec3> = vertex_slots.iter().map(|&s| positions[nodes[s]]).collect();
        rho_min = rho_min.min(inradius(simplex_dim, &v));
    }
    MeshSize {
        h_max,
        h_min,
        rho_min,
        quasi_uniformity: h_max / rho_min,
    }
}

fn inradius(simplex_dim: usize, v: &[Vec3]) -> f64 {
    let tri_area = |a: &Vec3, b: &Vec3, c: &Vec3| 0.5 * (b - a).cross(&(c - a)).norm();
    match simplex_dim {
        2 => {
            let perimeter = (v[1] - v[0]).norm() + (v[2] - v[1]).norm() + (v[0] - v[2]).norm();
            2.0 * tri_area(&v[0], &v[1], &v[2]) / perimeter
        }
        _ => {
            let vol = (v[1] - v[0])
                .dot(&(v[2] - v[0]).cross(&(v[3] - v[0])))
                .abs()
                / 6.0;
            let faces = tri_area(&v[1], &v[2], &v[3])
                + tri_area(&v[0], &v[2], &v[3])
                + tri_area(&v[0], &v[1], &v[3])
                + tri_area(&v[0], &v[1], &v[2]);
            3.0 * vol / faces
        }
    }
}

/// Element sizes of a mesh at the given vertex positions.
pub fn mesh_size(mesh: &SimplicialMesh, positions: &[Vec3]) -> MeshSize {
    let vertex_slots: Vec<usize> = (0..=mesh.simplex_dim()).collect();
    measure_size(
        mesh.simplex_dim(),
        mesh.simplices(),
        positions,
        &vertex_slots,
    )
}

/// Regular icosahedron with circumradius 1, outward oriented.
pub fn macro_sphere_surface() -> SimplicialMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let vertices: Vec<Vec3> = raw
        .iter()
        .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
        .collect();
    let edge = (vertices[0] - vertices[1]).norm();
    let adjacent = |a: usize, b: usize| ((vertices[a] - vertices[b]).norm() - edge).abs() < 1e-9;
    let mut tris = Vec::new();
    for a in 0..12 {
        for b in a + 1..12 {
            for c in b + 1..12 {
                if adjacent(a, b) && adjacent(b, c) && adjacent(a, c) {
                    let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
                    if n.dot(&(vertices[a] + vertices[b] + vertices[c])) > 0.0 {
                        tris.push(vec![a, b, c]);
                    } else {
                        tris.push(vec![a, c, b]);
                    }
                }
            }
        }
    }
    SimplicialMesh::new(2, vertices, tris, None).expect("icosahedron is valid")
}

/// Octahedron fan of the unit ball: the six points `±e_i` and the centre
/// (last vertex), eight positively oriented tetrahedra.
pub fn macro_ball_bulk() -> SimplicialMesh {
    let mut vertices = Vec::with_capacity(7);
    for i in 0..3 {
        let mut e = Vec3::zeros();
        e[i] = 1.0;
        vertices.push(e);
        vertices.push(-e);
    }
    vertices.push(Vec3::zeros());
    let center = 6;
    let mut tets = Vec::with_capacity(8);
    for sx in [0, 1] {
        for sy in [2, 3] {
            for sz in [4, 5] {
                let mut t = vec![center, sx, sy, sz];
                let p = |j: usize| vertices[t[j]];
                let det = (p(1) - p(0)).dot(&(p(2) - p(0)).cross(&(p(3) - p(0))));
                if det < 0.0 {
                    t.swap(2, 3);
                }
                tets.push(t);
            }
        }
    }
    let mut boundary = vec![true; 7];
    boundary[center] = false;
    SimplicialMesh::new(3, vertices, tets, Some(boundary)).expect("octahedron fan is valid")
}

/// Uniform red refinement.
///
/// Triangles split into four through their edge midpoints. Tetrahedra split
/// into eight: four corner children and four children around the interior
/// diagonal joining the midpoints of edges (0,2) and (1,3). Children keep
/// Bey's vertex ordering, which bounds the number of similarity classes, so
/// two of the eight children have reversed orientation. New vertices are
/// appended in order of first encounter; a midpoint is flagged as boundary
/// iff its edge lies on a boundary face.
pub fn refine_uniform(mesh: &SimplicialMesh) -> SimplicialMesh {
    let mut vertices = mesh.vertices.clone();
    let mut boundary = mesh.boundary.clone();

    let boundary_edges: std::collections::HashSet<[usize; 2]> = if mesh.simplex_dim == 3 {
        mesh.facet_incidence()
            .into_iter()
            .filter(|(_, inc)| inc.len() == 1)
            .flat_map(|(f, _)| {
                [
                    sorted2(f[0], f[1]),
                    sorted2(f[1], f[2]),
                    sorted2(f[0], f[2]),
                ]
            })
            .collect()
    } else {
        Default::default()
    };

    let mut midpoint: HashMap<[usize; 2], usize> = HashMap::new();
    let mut mid =
        |a: usize, b: usize, vertices: &mut Vec<Vec3>, boundary: &mut Vec<bool>| -> usize {
            let key = sorted2(a, b);
            *midpoint.entry(key).or_insert_with(|| {
                vertices.push(0.5 * (vertices[key[0]] + vertices[key[1]]));
                boundary.push(boundary_edges.contains(&key));
                vertices.len() - 1
            })
        };

    let mut children: Vec<Vec<usize>> = Vec::with_capacity(mesh.simplex_count() * 8);
    for s in mesh.simplices() {
        match mesh.simplex_dim {
            2 => {
                let (v0, v1, v2) = (s[0], s[1], s[2]);
                let m01 = mid(v0, v1, &mut vertices, &mut boundary);
                let m12 = mid(v1, v2, &mut vertices, &mut boundary);
                let m02 = mid(v0, v2, &mut vertices, &mut boundary);
                children.push(vec![v0, m01, m02]);
                children.push(vec![m01, v1, m12]);
                children.push(vec![m02, m12, v2]);
                children.push(vec![m01, m12, m02]);
            }
            _ => {
                let x = [s[0], s[1], s[2], s[3]];
                let mut m = [[0usize; 4]; 4];
                for a in 0..4 {
                    for b in a + 1..4 {
                        let v = mid(x[a], x[b], &mut vertices, &mut boundary);
                        m[a][b] = v;
                        m[b][a] = v;
                    }
                }
                let kids = [
                    [x[0], m[0][1], m[0][2], m[0][3]],
                    [m[0][1], x[1], m[1][2], m[1][3]],
                    [m[0][2], m[1][2], x[2], m[2][3]],
                    [m[0][3], m[1][3], m[2][3], x[3]],
                    [m[0][1], m[0][2], m[0][3], m[1][3]],
                    [m[0][1], m[0][2], m[1][2], m[1][3]],
                    [m[0][2], m[0][3], m[1][3], m[2][3]],
                    [m[0][2], m[1][2], m[1][3], m[2][3]],
                ];
                for k in kids {
                    children.push(k.to_vec());
                }
            }
        }
    }
    SimplicialMesh::new(mesh.simplex_dim, vertices, children, Some(boundary))
        .expect("refinement of a valid mesh is valid")
}

/// Radially projects every vertex onto the unit sphere.
pub fn project_to_unit_sphere(mesh: &SimplicialMesh) -> Result<SimplicialMesh> {
    mesh.map_vertices(|v| v.normalize())
}

/// Radially projects the boundary-flagged vertices onto the unit sphere.
pub fn project_boundary_to_unit_sphere(mesh: &SimplicialMesh) -> Result<SimplicialMesh> {
    let flags = mesh.boundary_flags().to_vec();
    let vertices = mesh
        .vertices()
        .iter()
        .zip(&flags)
        .map(|(v, &b)| if b { v.normalize() } else { *v })
        .collect();
    SimplicialMesh::new(
        mesh.simplex_dim(),
        vertices,
        mesh.simplices().map(<[usize]>::to_vec).collect(),
        Some(flags),
    )
}

/// The icosahedral sphere mesh after `level` refinements, projected onto the
/// sphere after every refinement.
pub fn sphere_surface_level(level: usize) -> SimplicialMesh {
    let mut mesh = macro_sphere_surface();
    for _ in 0..level {
        mesh = project_to_unit_sphere(&refine_uniform(&mesh))
            .expect("projection keeps triangles valid");
    }
    mesh
}

/// The octahedral ball mesh after `level` refinements, with new boundary
/// vertices projected onto the sphere after every refinement.
pub fn ball_bulk_level(level: usize) -> SimplicialMesh {
    let mut mesh = macro_ball_bulk();
    for _ in 0..level {
        mesh = project_boundary_to_unit_sphere(&refine_uniform(&mesh))
            .expect("projection keeps tetrahedra valid");
    }
    mesh
}
