//! Structured tetrahedral meshes of axis-aligned boxes.
//!
//! Every hexahedral cell is split into six tetrahedra sharing the cell's
//! main diagonal (Kuhn subdivision). Because the diagonal direction is the
//! same in every cell, neighbouring cells induce identical face diagonals and
//! the resulting triangulation is conforming.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Local edge numbering inside a tetrahedron, as pairs of local vertices.
pub const LOCAL_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Relative tolerance used for geometric containment tests.
const GEOM_TOL: f64 = 1e-12;

/// Closed axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn unit() -> Self {
        Self::new([0.0; 3], [1.0; 3])
    }

    pub fn extent(&self) -> Point {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1] * e[2]
    }

    pub fn diameter(&self) -> f64 {
        norm3(&self.extent())
    }

    fn is_finite(&self) -> bool {
        self.min.iter().chain(self.max.iter()).all(|v| v.is_finite())
    }

    /// Closed containment with a small absolute slack scaled by `scale`.
    pub fn contains_with(&self, p: &Point, scale: f64) -> bool {
        let tol = GEOM_TOL * scale.max(1.0);
        (0..3).all(|a| p[a] >= self.min[a] - tol && p[a] <= self.max[a] + tol)
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.contains_with(p, self.diameter())
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|a| self.min[a] <= other.max[a] && other.min[a] <= self.max[a])
    }
}

impl fmt::Display for Aabb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}]×[{}, {}]×[{}, {}]",
            self.min[0], self.max[0], self.min[1], self.max[1], self.min[2], self.max[2]
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionKind {
    /// A volumetric subregion (target, shielded or observation region).
    Volume,
    /// A patch of the boundary carrying the control data.
    BoundaryPatch,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionSpec {
    pub bounds: Aabb,
    pub kind: RegionKind,
}

impl RegionSpec {
    pub fn volume(min: Point, max: Point) -> Self {
        Self {
            bounds: Aabb::new(min, max),
            kind: RegionKind::Volume,
        }
    }

    pub fn boundary_patch(min: Point, max: Point) -> Self {
        Self {
            bounds: Aabb::new(min, max),
            kind: RegionKind::BoundaryPatch,
        }
    }

    /// Volumetric regions need positive extent in every axis; boundary
    /// patches may be flat in one axis.
    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if !b.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite region bounds {b}")));
        }
        let e = b.extent();
        if e.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!("inverted region bounds {b}")));
        }
        let flat = e.iter().filter(|&&v| v == 0.0).count();
        match self.kind {
            RegionKind::Volume if flat > 0 => Err(Error::InvalidArgument(format!(
                "degenerate volumetric region {b}"
            ))),
            RegionKind::BoundaryPatch if flat > 1 => Err(Error::InvalidArgument(format!(
                "degenerate boundary patch {b}"
            ))),
            _ => Ok(()),
        }
    }
}

/// A boundary triangle, stored with sorted vertex indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryFace {
    pub vertices: [usize; 3],
    pub normal: Point,
    /// Box side the face lies on: 0 = x-min, 1 = x-max, 2 = y-min, ..., 5 = z-max.
    pub side: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub bounds: Aabb,
    pub divisions: [usize; 3],
    pub vertices: Vec<Point>,
    /// Tetrahedra with positive signed volume.
    pub tets: Vec<[usize; 4]>,
    /// Global edges `(i, j)` with `i < j`, sorted lexicographically. The
    /// global orientation of an edge runs from `i` to `j`.
    pub edges: Vec<[usize; 2]>,
    /// Per tet, for each local edge in [`LOCAL_EDGES`] order: global edge
    /// index and the sign relating local to global orientation.
    pub tet_edges: Vec<[(usize, f64); 6]>,
    pub boundary_faces: Vec<BoundaryFace>,
    /// Number of interior faces (shared by two tets).
    pub interior_face_count: usize,
}

/// Result of [`Mesh::tag_boundary_patch`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryPatch {
    /// Indices into `Mesh::boundary_faces`.
    pub faces: Vec<usize>,
    /// Boundary edges all of whose adjacent boundary faces are tagged.
    pub control_edges: Vec<usize>,
}

pub fn build_box_mesh(bounds: Aabb, divisions: [usize; 3]) -> Result<Mesh> {
    if divisions.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "division counts must be positive, got {divisions:?}"
        )));
    }
    if !bounds.is_finite() || bounds.extent().iter().any(|&e| e <= 0.0) {
        return Err(Error::InvalidArgument(format!("degenerate box {bounds}")));
    }
    let [nx, ny, nz] = divisions;
    let ext = bounds.extent();
    let coord = |a: usize, i: usize, n: usize| {
        if i == n {
            bounds.max[a]
        } else {
            bounds.min[a] + ext[a] * (i as f64) / (n as f64)
        }
    };

    let vid = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([coord(0, i, nx), coord(1, j, ny), coord(2, k, nz)]);
            }
        }
    }

    // The six monotone lattice paths from corner 000 to corner 111.
    const PATHS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for path in PATHS {
                    let mut c = [i, j, k];
                    let mut tet = [vid(c[0], c[1], c[2]); 4];
                    for (step, &axis) in path.iter().enumerate() {
                        c[axis] += 1;
                        tet[step + 1] = vid(c[0], c[1], c[2]);
                    }
                    if signed_volume(&vertices, &tet) < 0.0 {
                        tet.swap(2, 3);
                    }
                    tets.push(tet);
                }
            }
        }
    }

    let mut edges: Vec<[usize; 2]> = tets
        .iter()
        .flat_map(|t| LOCAL_EDGES.iter().map(move |&(a, b)| sorted2(t[a], t[b])))
        .collect();
    edges.sort_unstable();
    edges.dedup();

    let tet_edges = tets
        .iter()
        .map(|t| {
            let mut out = [(0usize, 0.0f64); 6];
            for (slot, &(a, b)) in out.iter_mut().zip(LOCAL_EDGES.iter()) {
                let key = sorted2(t[a], t[b]);
                let idx = edges.binary_search(&key).expect("edge enumerated above");
                *slot = (idx, if t[a] < t[b] { 1.0 } else { -1.0 });
            }
            out
        })
        .collect();

    let mut face_count: HashMap<[usize; 3], usize> = HashMap::new();
    for t in &tets {
        for skip in 0..4 {
            let mut f = [0usize; 3];
            let mut n = 0;
            for (l, &v) in t.iter().enumerate() {
                if l != skip {
                    f[n] = v;
                    n += 1;
                }
            }
            f.sort_unstable();
            *face_count.entry(f).or_insert(0) += 1;
        }
    }
    let mut bfaces: Vec<[usize; 3]> = face_count
        .iter()
        .filter(|(_, &c)| c == 1)
        .map(|(f, _)| *f)
        .collect();
    bfaces.sort_unstable();
    let interior_face_count = face_count.values().filter(|&&c| c == 2).count();

    let diam = bounds.diameter();
    let boundary_faces = bfaces
        .into_iter()
        .map(|f| {
            let side = face_side(&vertices, &f, &bounds, diam)
                .expect("boundary face of a box mesh lies on a box side");
            let axis = (side / 2) as usize;
            let mut normal = [0.0; 3];
            normal[axis] = if side.is_multiple_of(2) { -1.0 } else { 1.0 };
            BoundaryFace {
                vertices: f,
                normal,
                side,
            }
        })
        .collect();

    Ok(Mesh {
        bounds,
        divisions,
        vertices,
        tets,
        edges,
        tet_edges,
        boundary_faces,
        interior_face_count,
    })
}

fn face_side(vertices: &[Point], f: &[usize; 3], bounds: &Aabb, diam: f64) -> Option<u8> {
    let tol = GEOM_TOL * diam.max(1.0);
    for axis in 0..3 {
        for (s, target) in [(0u8, bounds.min[axis]), (1u8, bounds.max[axis])] {
            if f.iter().all(|&v| (vertices[v][axis] - target).abs() <= tol) {
                return Some(axis as u8 * 2 + s);
            }
        }
    }
    None
}

fn sorted2(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

pub(crate) fn norm3(v: &Point) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn signed_volume(vertices: &[Point], tet: &[usize; 4]) -> f64 {
    let p0 = vertices[tet[0]];
    let d = |v: usize| {
        let p = vertices[tet[v]];
        [p[0] - p0[0], p[1] - p0[1], p[2] - p0[2]]
    };
    let (a, b, c) = (d(1), d(2), d(3));
    (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0]))
        / 6.0
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn n_faces(&self) -> usize {
        self.interior_face_count + self.boundary_faces.len()
    }

    /// V − E + F − T; equals 1 for a triangulated ball.
    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices() as i64 - self.n_edges() as i64 + self.n_faces() as i64
            - self.n_tets() as i64
    }

    pub fn tet_vertices(&self, t: usize) -> [Point; 4] {
        let tet = &self.tets[t];
        [
            self.vertices[tet[0]],
            self.vertices[tet[1]],
            self.vertices[tet[2]],
            self.vertices[tet[3]],
        ]
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        signed_volume(&self.vertices, &self.tets[t])
    }

    pub fn barycenter(&self, t: usize) -> Point {
        let v = self.tet_vertices(t);
        let mut c = [0.0; 3];
        for p in &v {
            for a in 0..3 {
                c[a] += 0.25 * p[a];
            }
        }
        c
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.binary_search(&sorted2(a, b)).ok()
    }

    /// Edges lying on some boundary face, sorted.
    pub fn boundary_edges(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .boundary_faces
            .iter()
            .flat_map(|f| {
                let [a, b, c] = f.vertices;
                [(a, b), (a, c), (b, c)]
            })
            .map(|(a, b)| self.edge_index(a, b).expect("face edges are mesh edges"))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn boundary_vertices(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .boundary_faces
            .iter()
            .flat_map(|f| f.vertices)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Tags the boundary faces inside the patch box and returns the control
    /// edges: boundary edges all of whose boundary faces are tagged.
    pub fn tag_boundary_patch(&self, gamma: &RegionSpec) -> Result<BoundaryPatch> {
        if gamma.kind != RegionKind::BoundaryPatch {
            return Err(Error::InvalidArgument(
                "Γ must be a boundary-patch region".into(),
            ));
        }
        gamma.validate()?;
        let scale = self.bounds.diameter();
        let faces: Vec<usize> = self
            .boundary_faces
            .iter()
            .enumerate()
            .filter(|(_, f)| {
                f.vertices
                    .iter()
                    .all(|&v| gamma.bounds.contains_with(&self.vertices[v], scale))
            })
            .map(|(i, _)| i)
            .collect();
        if faces.is_empty() {
            return Err(Error::EmptyGamma(gamma.bounds.to_string()));
        }

        // For each boundary edge: (number of boundary faces, number tagged).
        let mut counts: HashMap<usize, (usize, usize)> = HashMap::new();
        let mut tagged = vec![false; self.boundary_faces.len()];
        for &f in &faces {
            tagged[f] = true;
        }
        for (fi, f) in self.boundary_faces.iter().enumerate() {
            let [a, b, c] = f.vertices;
            for (p, q) in [(a, b), (a, c), (b, c)] {
                let e = self.edge_index(p, q).expect("face edges are mesh edges");
                let entry = counts.entry(e).or_insert((0, 0));
                entry.0 += 1;
                if tagged[fi] {
                    entry.1 += 1;
                }
            }
        }
        let mut control_edges: Vec<usize> = counts
            .into_iter()
            .filter(|(_, (n, t))| n == t)
            .map(|(e, _)| e)
            .collect();
        control_edges.sort_unstable();
        Ok(BoundaryPatch {
            faces,
            control_edges,
        })
    }

    /// Tets whose barycenter lies in the (closed) region box.
    pub fn select_region(&self, region: &RegionSpec) -> Result<Vec<usize>> {
        if region.kind != RegionKind::Volume {
            return Err(Error::InvalidArgument(
                "region selection needs a volumetric region".into(),
            ));
        }
        region.validate()?;
        let scale = self.bounds.diameter();
        let tets: Vec<usize> = (0..self.n_tets())
            .filter(|&t| region.bounds.contains_with(&self.barycenter(t), scale))
            .collect();
        if tets.is_empty() {
            return Err(Error::EmptyRegion(region.bounds.to_string()));
        }
        Ok(tets)
    }

    /// Vertices not on the boundary.
    pub fn interior_vertices(&self) -> Vec<usize> {
        let boundary = self.boundary_vertices();
        (0..self.n_vertices())
            .filter(|v| boundary.binary_search(v).is_err())
            .collect()
    }
}
