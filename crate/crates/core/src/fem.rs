//! Lowest-order Nédélec (Whitney) edge elements.
//!
//! The basis function of the local edge `(a, b)` is
//! `w = λ_a ∇λ_b − λ_b ∇λ_a`, with constant curl `2 ∇λ_a × ∇λ_b`. Degrees of
//! freedom are circulations along globally oriented edges (lower to higher
//! vertex index), so local contributions are scattered with the sign stored
//! in [`Mesh::tet_edges`].

use std::sync::Arc;

use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{Matrix3, Matrix6, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::materials::Materials;
use crate::mesh::{BoundaryPatch, Mesh, Point, LOCAL_EDGES};
use crate::quadrature::{SegmentRule, TetRule};

pub type C64 = Complex64;
pub type CVec3 = Vector3<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn to_complex(v: &Vector3<f64>) -> CVec3 {
    v.map(C64::from)
}

pub fn mat_apply(m: &Matrix3<f64>, v: &CVec3) -> CVec3 {
    m.map(C64::from) * v
}

/// Affine geometry of a single tetrahedron.
#[derive(Clone, Debug)]
pub struct TetGeometry {
    pub vertices: [Point; 4],
    pub volume: f64,
    /// Gradients of the barycentric coordinates.
    pub grad: [Vector3<f64>; 4],
}

impl TetGeometry {
    pub fn new(vertices: [Point; 4]) -> Result<Self> {
        let p = |i: usize| Vector3::from(vertices[i]);
        let jac = Matrix3::from_columns(&[p(1) - p(0), p(2) - p(0), p(3) - p(0)]);
        let det = jac.determinant();
        let scale = (p(1) - p(0)).norm().max((p(2) - p(0)).norm()).max((p(3) - p(0)).norm());
        if !(det > 1e-14 * scale.powi(3)) {
            return Err(Error::DegenerateTet { volume: det / 6.0 });
        }
        let inv = jac.try_inverse().ok_or(Error::DegenerateTet { volume: det / 6.0 })?;
        let g1: Vector3<f64> = inv.row(0).transpose();
        let g2: Vector3<f64> = inv.row(1).transpose();
        let g3: Vector3<f64> = inv.row(2).transpose();
        Ok(Self {
            vertices,
            volume: det / 6.0,
            grad: [-(g1 + g2 + g3), g1, g2, g3],
        })
    }

    pub fn point(&self, bary: &[f64; 4]) -> Point {
        let mut x = [0.0; 3];
        for (l, v) in bary.iter().zip(self.vertices.iter()) {
            for a in 0..3 {
                x[a] += l * v[a];
            }
        }
        x
    }

    /// Local Whitney function `l` at a barycentric point.
    pub fn whitney(&self, l: usize, bary: &[f64; 4]) -> Vector3<f64> {
        let (a, b) = LOCAL_EDGES[l];
        self.grad[b] * bary[a] - self.grad[a] * bary[b]
    }

    pub fn whitney_curl(&self, l: usize) -> Vector3<f64> {
        let (a, b) = LOCAL_EDGES[l];
        self.grad[a].cross(&self.grad[b]) * 2.0
    }

    /// ∫_T w_l dx.
    pub fn whitney_integral(&self, l: usize) -> Vector3<f64> {
        let (a, b) = LOCAL_EDGES[l];
        (self.grad[b] - self.grad[a]) * (self.volume / 4.0)
    }

    /// Local edge vectors `x_b − x_a`; the circulations of a constant field.
    pub fn edge_vector(&self, l: usize) -> Vector3<f64> {
        let (a, b) = LOCAL_EDGES[l];
        Vector3::from(self.vertices[b]) - Vector3::from(self.vertices[a])
    }
}

/// Element matrices in local edge orientation.
#[derive(Clone, Debug)]
pub struct LocalMatrices {
    /// ∫ μ⁻¹ curl w_a · curl w_b
    pub curl_curl: Matrix6<f64>,
    /// ∫ ε w_a · w_b
    pub mass: Matrix6<f64>,
}

pub fn local_matrices(
    vertices: &[Point; 4],
    eps: &Matrix3<f64>,
    mu: &Matrix3<f64>,
) -> Result<LocalMatrices> {
    let geom = TetGeometry::new(*vertices)?;
    let mu_inv = mu
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular μ".into()))?;
    Ok(local_matrices_from(&geom, eps, &mu_inv))
}

fn local_matrices_from(geom: &TetGeometry, eps: &Matrix3<f64>, mu_inv: &Matrix3<f64>) -> LocalMatrices {
    let v = geom.volume;
    let g = &geom.grad;
    // ∫ λ_p λ_q = V (1 + δ_pq) / 20
    let lam = |p: usize, q: usize| v * if p == q { 2.0 } else { 1.0 } / 20.0;
    let eg = |p: usize, q: usize| g[p].dot(&(eps * g[q]));
    let curls: Vec<Vector3<f64>> = (0..6).map(|l| geom.whitney_curl(l)).collect();
    let mut curl_curl = Matrix6::zeros();
    let mut mass = Matrix6::zeros();
    for (a, &(i, j)) in LOCAL_EDGES.iter().enumerate() {
        for (b, &(k, l)) in LOCAL_EDGES.iter().enumerate() {
            curl_curl[(a, b)] = v * curls[a].dot(&(mu_inv * curls[b]));
            mass[(a, b)] = eg(j, l) * lam(i, k) - eg(j, k) * lam(i, l) - eg(i, l) * lam(j, k)
                + eg(i, k) * lam(j, l);
        }
    }
    LocalMatrices { curl_curl, mass }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DofKind {
    /// Interior edge; unknown of the discrete problem.
    Free,
    /// Γ-interior boundary edge carrying boundary data.
    Control,
    /// Boundary edge outside Γ, fixed to zero.
    Constrained,
}

/// Partition of edge degrees of freedom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DofMap {
    pub kinds: Vec<DofKind>,
    pub free: Vec<usize>,
    pub control: Vec<usize>,
    pub constrained: Vec<usize>,
    free_pos: Vec<usize>,
    control_pos: Vec<usize>,
}

impl DofMap {
    /// With `patch = None` every boundary edge is constrained (cavity).
    pub fn new(mesh: &Mesh, patch: Option<&BoundaryPatch>) -> Self {
        let n = mesh.n_edges();
        let mut kinds = vec![DofKind::Free; n];
        for e in mesh.boundary_edges() {
            kinds[e] = DofKind::Constrained;
        }
        if let Some(p) = patch {
            for &e in &p.control_edges {
                kinds[e] = DofKind::Control;
            }
        }
        let mut free = Vec::new();
        let mut control = Vec::new();
        let mut constrained = Vec::new();
        let mut free_pos = vec![usize::MAX; n];
        let mut control_pos = vec![usize::MAX; n];
        for (e, kind) in kinds.iter().enumerate() {
            match kind {
                DofKind::Free => {
                    free_pos[e] = free.len();
                    free.push(e);
                }
                DofKind::Control => {
                    control_pos[e] = control.len();
                    control.push(e);
                }
                DofKind::Constrained => constrained.push(e),
            }
        }
        Self {
            kinds,
            free,
            control,
            constrained,
            free_pos,
            control_pos,
        }
    }

    pub fn cavity(mesh: &Mesh) -> Self {
        Self::new(mesh, None)
    }

    pub fn n_dofs(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn n_control(&self) -> usize {
        self.control.len()
    }

    pub fn free_index(&self, edge: usize) -> Option<usize> {
        Some(self.free_pos[edge]).filter(|&p| p != usize::MAX)
    }

    pub fn control_index(&self, edge: usize) -> Option<usize> {
        Some(self.control_pos[edge]).filter(|&p| p != usize::MAX)
    }

    pub fn restrict_to_control(&self, full: &[C64]) -> Vec<C64> {
        self.control.iter().map(|&e| full[e]).collect()
    }

    pub fn restrict_to_free(&self, full: &[C64]) -> Vec<C64> {
        self.free.iter().map(|&e| full[e]).collect()
    }
}

/// Control DOFs set to `f`, everything else zero.
pub fn trace_lift(dofmap: &DofMap, f: &[C64]) -> Result<Vec<C64>> {
    if f.len() != dofmap.n_control() {
        return Err(Error::DimensionMismatch {
            expected: dofmap.n_control(),
            got: f.len(),
        });
    }
    let mut out = vec![C64::new(0.0, 0.0); dofmap.n_dofs()];
    for (&e, &v) in dofmap.control.iter().zip(f) {
        out[e] = v;
    }
    Ok(out)
}

/// Per-tet element data sampled at the barycenter.
#[derive(Clone, Debug)]
pub struct TetData {
    pub geom: TetGeometry,
    pub eps: Matrix3<f64>,
    pub mu: Matrix3<f64>,
    pub mu_inv: Matrix3<f64>,
    pub local: LocalMatrices,
    /// Vacuum mass matrix, used for field energies.
    pub unit_mass: Matrix6<f64>,
    pub dofs: [usize; 6],
    pub signs: [f64; 6],
}

impl TetData {
    /// Signed local coefficients of a global DOF vector.
    pub fn gather(&self, e: &[C64]) -> [C64; 6] {
        std::array::from_fn(|l| e[self.dofs[l]] * self.signs[l])
    }

    pub fn curl(&self, e: &[C64]) -> CVec3 {
        let c = self.gather(e);
        (0..6).fold(CVec3::zeros(), |acc, l| acc + to_complex(&self.geom.whitney_curl(l)) * c[l])
    }

    pub fn eval(&self, e: &[C64], bary: &[f64; 4]) -> CVec3 {
        let c = self.gather(e);
        (0..6).fold(CVec3::zeros(), |acc, l| acc + to_complex(&self.geom.whitney(l, bary)) * c[l])
    }
}

/// Discrete electric field on all edges plus per-tet constant magnetic field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPair {
    pub e: Vec<C64>,
    pub h: Vec<CVec3>,
}

impl FieldPair {
    pub fn zeros(n_edges: usize, n_tets: usize) -> Self {
        Self {
            e: vec![C64::new(0.0, 0.0); n_edges],
            h: vec![CVec3::zeros(); n_tets],
        }
    }
}

/// Curl-curl and mass matrices over all edge DOFs, with per-tet data.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub mesh: Arc<Mesh>,
    pub dofmap: DofMap,
    pub k: f64,
    pub tets: Vec<TetData>,
    pub curl_curl: SparseColMat<usize, f64>,
    pub mass: SparseColMat<usize, f64>,
}

pub fn assemble(
    mesh: Arc<Mesh>,
    materials: &Materials,
    k: f64,
    dofmap: DofMap,
) -> Result<AssembledSystem> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("wavenumber must be positive, got {k}")));
    }
    if dofmap.n_dofs() != mesh.n_edges() {
        return Err(Error::DimensionMismatch {
            expected: mesh.n_edges(),
            got: dofmap.n_dofs(),
        });
    }
    materials.check()?;
    let identity = Matrix3::identity();
    let tets = (0..mesh.n_tets())
        .map(|t| {
            let geom = TetGeometry::new(mesh.tet_vertices(t))?;
            let x = mesh.barycenter(t);
            let eps = materials.eps.eval(&x);
            let mu = materials.mu.eval(&x);
            let mu_inv = mu
                .try_inverse()
                .ok_or_else(|| Error::InvalidArgument("singular μ".into()))?;
            let local = local_matrices_from(&geom, &eps, &mu_inv);
            let unit_mass = local_matrices_from(&geom, &identity, &identity).mass;
            let te = &mesh.tet_edges[t];
            Ok(TetData {
                geom,
                eps,
                mu,
                mu_inv,
                local,
                unit_mass,
                dofs: std::array::from_fn(|l| te[l].0),
                signs: std::array::from_fn(|l| te[l].1),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = mesh.n_edges();
    let scatter = |pick: fn(&LocalMatrices) -> &Matrix6<f64>| {
        let mut trip = Vec::with_capacity(36 * tets.len());
        for td in &tets {
            let m = pick(&td.local);
            for a in 0..6 {
                for b in 0..6 {
                    trip.push(Triplet::new(
                        td.dofs[a],
                        td.dofs[b],
                        td.signs[a] * td.signs[b] * m[(a, b)],
                    ));
                }
            }
        }
        SparseColMat::try_new_from_triplets(n, n, &trip)
            .map_err(|e| Error::Linalg(format!("sparse assembly: {e:?}")))
    };
    let curl_curl = scatter(|l| &l.curl_curl)?;
    let mass = scatter(|l| &l.mass)?;
    Ok(AssembledSystem {
        mesh,
        dofmap,
        k,
        tets,
        curl_curl,
        mass,
    })
}

/// y = A x for a real sparse matrix and a complex vector.
pub fn spmv(a: &SparseColMat<usize, f64>, x: &[C64]) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); a.nrows()];
    let cp = a.col_ptr();
    let ri = a.row_idx();
    let vals = a.val();
    for (j, xj) in x.iter().enumerate() {
        for p in cp[j]..cp[j + 1] {
            y[ri[p]] += *xj * vals[p];
        }
    }
    y
}

/// Hermitian form `uᴴ A v`.
pub fn sesquilinear(a: &SparseColMat<usize, f64>, u: &[C64], v: &[C64]) -> C64 {
    spmv(a, v).iter().zip(u).map(|(av, uu)| uu.conj() * av).sum()
}

impl AssembledSystem {
    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn with_k(&self, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidArgument(format!("wavenumber must be positive, got {k}")));
        }
        Ok(Self { k, ..self.clone() })
    }

    fn check_tet_len<T>(&self, v: &[T]) -> Result<()> {
        if v.len() != self.n_tets() {
            return Err(Error::DimensionMismatch {
                expected: self.n_tets(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Load vector `c_J ∫ J·w_e + ∫ (μ⁻¹K)·curl w_e` for piecewise-constant
    /// sources. The forward problem uses `c_J = ik`; the adjoint uses `−ik`.
    pub fn load_vector(&self, j_coef: C64, j: &[CVec3], kk: &[CVec3]) -> Result<Vec<C64>> {
        self.check_tet_len(j)?;
        self.check_tet_len(kk)?;
        let mut out = vec![C64::new(0.0, 0.0); self.dofmap.n_dofs()];
        for (t, td) in self.tets.iter().enumerate() {
            let mk = mat_apply(&td.mu_inv, &kk[t]);
            for l in 0..6 {
                let wint = to_complex(&td.geom.whitney_integral(l));
                let curl = to_complex(&td.geom.whitney_curl(l));
                let val = j_coef * j[t].dot(&wint) + mk.dot(&curl) * td.geom.volume;
                out[td.dofs[l]] += val * td.signs[l];
            }
        }
        Ok(out)
    }

    /// Right-hand side of the variational problem for sources (J, K).
    pub fn assemble_rhs(&self, j: &[CVec3], kk: &[CVec3]) -> Result<Vec<C64>> {
        self.load_vector(I * self.k, j, kk)
    }

    /// `H = −(i/k) μ⁻¹ (curl E − K)` per tet.
    pub fn recover_h(&self, e: &[C64], kk: Option<&[CVec3]>) -> Result<Vec<CVec3>> {
        if e.len() != self.dofmap.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: self.dofmap.n_dofs(),
                got: e.len(),
            });
        }
        if let Some(kk) = kk {
            self.check_tet_len(kk)?;
        }
        let factor = -I / self.k;
        Ok(self
            .tets
            .iter()
            .enumerate()
            .map(|(t, td)| {
                let mut c = td.curl(e);
                if let Some(kk) = kk {
                    c -= kk[t];
                }
                mat_apply(&td.mu_inv, &c) * factor
            })
            .collect())
    }

    /// ∫ over the tet set of |E|² + |H|².
    pub fn region_energy(&self, tets: &[usize], fields: &FieldPair) -> Result<f64> {
        if tets.is_empty() {
            return Err(Error::EmptyRegion("empty tet set".into()));
        }
        Ok(tets.iter().map(|&t| self.tet_energy(t, fields)).sum())
    }

    pub fn tet_energy(&self, t: usize, fields: &FieldPair) -> f64 {
        let td = &self.tets[t];
        let c = td.gather(&fields.e);
        let mut e2 = 0.0;
        for a in 0..6 {
            for b in 0..6 {
                e2 += (c[a].conj() * c[b]).re * td.unit_mass[(a, b)];
            }
        }
        e2 + td.geom.volume * fields.h[t].norm_squared()
    }

    /// Edge circulations of a continuous field (Gauss rule along each edge).
    pub fn interpolate<F: Fn(&Point) -> CVec3>(&self, field: F) -> Vec<C64> {
        interpolate_edges(&self.mesh, field)
    }

    /// (‖E_h − E‖_{L²}, ‖E‖_{L²}) over Ω.
    pub fn l2_error<F: Fn(&Point) -> CVec3>(&self, e: &[C64], exact: F) -> (f64, f64) {
        let rule = TetRule::collapsed(5);
        let mut err = 0.0;
        let mut norm = 0.0;
        for td in &self.tets {
            for (bary, w) in &rule.points {
                let x = td.geom.point(bary);
                let ex = exact(&x);
                let d = td.eval(e, bary) - ex;
                err += w * td.geom.volume * d.norm_squared();
                norm += w * td.geom.volume * ex.norm_squared();
            }
        }
        (err.sqrt(), norm.sqrt())
    }
}

pub fn interpolate_edges<F: Fn(&Point) -> CVec3>(mesh: &Mesh, field: F) -> Vec<C64> {
    let rule = SegmentRule::gauss(8);
    mesh.edges
        .iter()
        .map(|&[i, j]| {
            let a = Vector3::from(mesh.vertices[i]);
            let b = Vector3::from(mesh.vertices[j]);
            let t = to_complex(&(b - a));
            rule.points
                .iter()
                .map(|&(s, w)| {
                    let x = a + (b - a) * s;
                    field(&[x[0], x[1], x[2]]).dot(&t) * w
                })
                .sum()
        })
        .collect()
}

/// Edge-difference gradient of the hat function of `vertex`.
pub fn gradient_dofs(mesh: &Mesh, vertex: usize) -> Vec<f64> {
    mesh.edges
        .iter()
        .map(|&[i, j]| {
            if j == vertex {
                1.0
            } else if i == vertex {
                -1.0
            } else {
                0.0
            }
        })
        .collect()
}
