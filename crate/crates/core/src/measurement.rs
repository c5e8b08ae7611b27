//! Virtual measurements: boundary data to interior fields on a region, the
//! adjoint map, and the dense measurement matrix.
//!
//! Observations are weighted so that the plain ℓ² norm of an observation
//! vector equals the L² energy `∫ |E|² + |H|²` over the region. Per tet, the
//! six E rows are `Lᵀ c` with `L Lᵀ` the tet's unit mass matrix and `c` the
//! signed local edge coefficients; the three H rows are `√V H`.

use std::sync::{Arc, OnceLock};

use faer::Mat;
use nalgebra::{Cholesky, Matrix6, Vector3, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{assemble, to_complex, AssembledSystem, CVec3, DofMap, FieldPair, C64, I};
use crate::materials::Materials;
use crate::mesh::{Mesh, Point, RegionSpec, LOCAL_EDGES};
use crate::quadrature::{SegmentRule, TetRule};
use crate::solver::{ForwardSolver, SolverOptions};

/// Rows per tet in an observation vector.
pub const ROWS_PER_TET: usize = 9;

/// A forward problem with partial boundary control on Γ, plus cached
/// responses to the unit boundary data.
#[derive(Debug)]
pub struct Problem {
    pub solver: ForwardSolver,
    pub materials: Materials,
    factors: Vec<Matrix6<C64>>,
    responses: OnceLock<Vec<Vec<C64>>>,
}

/// Fields restricted to a tet set: signed local edge coefficients of E and
/// the constant H, in the order of `tets`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionFields {
    pub tets: Vec<usize>,
    pub e: Vec<[C64; 6]>,
    pub h: Vec<CVec3>,
}

impl Problem {
    pub fn new(
        mesh: Arc<Mesh>,
        materials: &Materials,
        k: f64,
        gamma: &RegionSpec,
        options: SolverOptions,
    ) -> Result<Self> {
        materials.check()?;
        let patch = mesh.tag_boundary_patch(gamma)?;
        let dofmap = DofMap::new(&mesh, Some(&patch));
        let system = assemble(mesh, materials, k, dofmap)?;
        Self::from_solver(ForwardSolver::new(system, options)?, materials.clone())
    }

    /// `materials` must be the ones `solver` was assembled with.
    pub fn from_solver(solver: ForwardSolver, materials: Materials) -> Result<Self> {
        if solver.n_control() == 0 {
            return Err(Error::EmptyGamma("no control edges".into()));
        }
        let factors = solver
            .system
            .tets
            .iter()
            .map(|td| {
                let chol = Cholesky::new(td.unit_mass)
                    .ok_or_else(|| Error::Linalg("tet mass matrix not positive definite".into()))?;
                Ok(chol.l().transpose().map(C64::from))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            solver,
            materials,
            factors,
            responses: OnceLock::new(),
        })
    }

    pub fn system(&self) -> &AssembledSystem {
        &self.solver.system
    }

    pub fn mesh(&self) -> &Mesh {
        &self.solver.system.mesh
    }

    pub fn k(&self) -> f64 {
        self.solver.system.k
    }

    pub fn n_control(&self) -> usize {
        self.solver.n_control()
    }

    /// Electric fields for every unit control vector, computed once.
    pub fn control_responses(&self) -> Result<&[Vec<C64>]> {
        if let Some(r) = self.responses.get() {
            return Ok(r);
        }
        let n = self.n_control();
        let units: Vec<Vec<C64>> = (0..n)
            .map(|j| {
                let mut f = vec![C64::new(0.0, 0.0); n];
                f[j] = C64::new(1.0, 0.0);
                f
            })
            .collect();
        let sols = self.solver.solve_boundary_many(&units)?;
        Ok(self.responses.get_or_init(|| sols))
    }

    fn check_region(&self, tets: &[usize]) -> Result<()> {
        if tets.is_empty() {
            return Err(Error::EmptyRegion("empty tet set".into()));
        }
        let nt = self.system().n_tets();
        if let Some(&bad) = tets.iter().find(|&&t| t >= nt) {
            return Err(Error::InvalidArgument(format!("tet index {bad} out of range ({nt} tets)")));
        }
        Ok(())
    }

    /// Solves with boundary data `f` and no sources.
    pub fn solve(&self, f: &[C64]) -> Result<FieldPair> {
        self.solver.solve(f, None, None)
    }

    pub fn restrict(&self, tets: &[usize], fields: &FieldPair) -> RegionFields {
        let sys = self.system();
        RegionFields {
            tets: tets.to_vec(),
            e: tets.iter().map(|&t| sys.tets[t].gather(&fields.e)).collect(),
            h: tets.iter().map(|&t| fields.h[t]).collect(),
        }
    }

    pub fn apply_l(&self, tets: &[usize], f: &[C64]) -> Result<RegionFields> {
        self.check_region(tets)?;
        Ok(self.restrict(tets, &self.solve(f)?))
    }

    /// Weighted observation vector of `fields` on `tets`.
    pub fn observe(&self, tets: &[usize], fields: &FieldPair) -> Vec<C64> {
        let mut out = Vec::with_capacity(ROWS_PER_TET * tets.len());
        for &t in tets {
            let td = &self.system().tets[t];
            let c = Vector6::from(td.gather(&fields.e));
            out.extend((self.factors[t] * c).iter());
            let s = td.geom.volume.sqrt();
            out.extend(fields.h[t].iter().map(|v| v * s));
        }
        out
    }

    /// Weighted observation vector of fields given per region tet.
    pub fn observe_region(&self, fields: &RegionFields) -> Vec<C64> {
        let mut out = Vec::with_capacity(ROWS_PER_TET * fields.tets.len());
        for (i, &t) in fields.tets.iter().enumerate() {
            let c = Vector6::from(fields.e[i]);
            out.extend((self.factors[t] * c).iter());
            let s = self.system().tets[t].geom.volume.sqrt();
            out.extend(fields.h[i].iter().map(|v| v * s));
        }
        out
    }

    /// Region fields of a continuous `(E, H)`: local edge circulations of
    /// `E` and tet averages of `H`.
    pub fn sample_region<FE, FH>(&self, tets: &[usize], e: FE, h: FH) -> RegionFields
    where
        FE: Fn(&Point) -> CVec3,
        FH: Fn(&Point) -> CVec3,
    {
        let rule = TetRule::collapsed(4);
        let seg = SegmentRule::gauss(6);
        let sys = self.system();
        let mut out = RegionFields {
            tets: tets.to_vec(),
            e: Vec::with_capacity(tets.len()),
            h: Vec::with_capacity(tets.len()),
        };
        for &t in tets {
            let g = &sys.tets[t].geom;
            out.e.push(std::array::from_fn(|l| {
                let (a, b) = LOCAL_EDGES[l];
                let (xa, xb) = (Vector3::from(g.vertices[a]), Vector3::from(g.vertices[b]));
                let dir = to_complex(&(xb - xa));
                seg.points
                    .iter()
                    .map(|&(s, w)| {
                        let x = xa + (xb - xa) * s;
                        e(&[x[0], x[1], x[2]]).dot(&dir) * w
                    })
                    .sum()
            }));
            out.h.push(
                rule.points
                    .iter()
                    .fold(CVec3::zeros(), |acc, (bary, w)| acc + h(&g.point(bary)) * C64::from(*w)),
            );
        }
        out
    }

    /// Weighted observation vector of piecewise-constant fields `(J, K)`
    /// given per region tet. Lowest-order edge elements reproduce constants,
    /// so `⟨observe(E, H), w⟩ = ∫ E·J̄ + H·K̄` over the region.
    pub fn observe_piecewise_constant(&self, tets: &[usize], j: &[CVec3], kk: &[CVec3]) -> Result<Vec<C64>> {
        for v in [j, kk] {
            if v.len() != tets.len() {
                return Err(Error::DimensionMismatch {
                    expected: tets.len(),
                    got: v.len(),
                });
            }
        }
        let mut out = Vec::with_capacity(ROWS_PER_TET * tets.len());
        for (i, &t) in tets.iter().enumerate() {
            let td = &self.system().tets[t];
            let c = Vector6::from_fn(|l, _| j[i].dot(&to_complex(&td.geom.edge_vector(l))));
            out.extend((self.factors[t] * c).iter());
            let s = td.geom.volume.sqrt();
            out.extend(kk[i].iter().map(|v| v * s));
        }
        Ok(out)
    }

    /// Dense measurement matrix: column `j` observes the response to the
    /// `j`-th unit control vector.
    pub fn measurement_matrix(&self, tets: &[usize]) -> Result<MeasurementOperator> {
        self.check_region(tets)?;
        let responses = self.control_responses()?;
        let sys = self.system();
        let cols: Vec<Vec<C64>> = responses
            .par_iter()
            .map(|e| {
                let h = sys.recover_h(e, None)?;
                Ok(self.observe(tets, &FieldPair { e: e.clone(), h }))
            })
            .collect::<Result<_>>()?;
        let rows = ROWS_PER_TET * tets.len();
        Ok(MeasurementOperator {
            tets: tets.to_vec(),
            k: self.k(),
            matrix: Mat::from_fn(rows, cols.len(), |r, c| cols[c][r]),
        })
    }

    /// Adjoint of the measurement map by the adjoint Maxwell solve with
    /// sources `(J, K)` on the region (per region tet), returning the
    /// control-space representative `g` with `⟨L f, (J, K)⟩ = ⟨f, g⟩`.
    pub fn apply_l_adjoint(&self, tets: &[usize], j: &[CVec3], kk: &[CVec3]) -> Result<Vec<C64>> {
        self.check_region(tets)?;
        if j.len() != tets.len() || kk.len() != tets.len() {
            return Err(Error::DimensionMismatch {
                expected: tets.len(),
                got: j.len().min(kk.len()),
            });
        }
        let sys = self.system();
        let nt = sys.n_tets();
        let mut jf = vec![CVec3::zeros(); nt];
        let mut kf = vec![CVec3::zeros(); nt];
        for (i, &t) in tets.iter().enumerate() {
            jf[t] = j[i];
            kf[t] = kk[i];
        }
        let adjoint = self.solver.solve_adjoint(&jf, &kf)?;
        let dm = &sys.dofmap;
        let k = self.k();
        let load = sys.load_vector(-I * k, &jf, &kf)?;
        let e_free = dm.restrict_to_free(&adjoint.e);
        let coupled = self.solver.factorization.coupling_transpose(&e_free);
        let load_c = dm.restrict_to_control(&load);
        let factor = I / k;
        Ok(load_c
            .iter()
            .zip(coupled)
            .map(|(l, b)| (l - b) * factor)
            .collect())
    }

    /// Energy `∫ |E|² + |H|²` over `tets`.
    pub fn region_energy(&self, tets: &[usize], fields: &FieldPair) -> Result<f64> {
        self.system().region_energy(tets, fields)
    }
}

/// Dense discrete measurement operator on a tet set.
#[derive(Clone, Debug)]
pub struct MeasurementOperator {
    pub tets: Vec<usize>,
    pub k: f64,
    pub matrix: Mat<C64>,
}

impl MeasurementOperator {
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, f: &[C64]) -> Vec<C64> {
        matvec(&self.matrix, f)
    }

    /// `Mᴴ w`.
    pub fn apply_adjoint(&self, w: &[C64]) -> Vec<C64> {
        (0..self.n_cols())
            .map(|c| (0..self.n_rows()).map(|r| self.matrix[(r, c)].conj() * w[r]).sum())
            .collect()
    }

    /// `G = Mᴴ M`.
    pub fn gram(&self) -> Mat<C64> {
        self.matrix.adjoint() * &self.matrix
    }

    pub fn energy(&self, f: &[C64]) -> f64 {
        norm_sqr(&self.apply(f))
    }
}

/// `A x` with compensated accumulation, so the result is as accurate as if
/// computed in twice the working precision. Localized data cancel to many
/// digits on the shielded region, where naive sums lose the 1/ℓ² law.
pub fn matvec(a: &Mat<C64>, x: &[C64]) -> Vec<C64> {
    (0..a.nrows())
        .map(|r| {
            let mut re = Acc::default();
            let mut im = Acc::default();
            for (c, xc) in x.iter().enumerate() {
                let m = a[(r, c)];
                re.add_product(m.re, xc.re);
                re.add_product(-m.im, xc.im);
                im.add_product(m.re, xc.im);
                im.add_product(m.im, xc.re);
            }
            C64::new(re.value(), im.value())
        })
        .collect()
}

#[derive(Default)]
struct Acc {
    sum: f64,
    err: f64,
}

impl Acc {
    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let pe = a.mul_add(b, -p);
        let s = self.sum + p;
        let bb = s - self.sum;
        let se = (self.sum - (s - bb)) + (p - bb);
        self.sum = s;
        self.err += pe + se;
    }

    fn value(&self) -> f64 {
        self.sum + self.err
    }
}

/// `Σ a_i · conj(b_i)`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, Aabb};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(n: usize) -> Problem {
        let mesh = Arc::new(build_box_mesh(Aabb::unit(), [n, n, n]).unwrap());
        let gamma = RegionSpec::boundary_patch([0.0; 3], [1.0, 1.0, 0.0]);
        Problem::new(mesh, &Materials::vacuum(), 1.0, &gamma, SolverOptions::default()).unwrap()
    }

    fn region(p: &Problem, min: [f64; 3], max: [f64; 3]) -> Vec<usize> {
        p.mesh().select_region(&RegionSpec::volume(min, max)).unwrap()
    }

    fn rc(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    }

    fn rvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n).map(|_| rc(rng)).collect()
    }

    fn rfield(rng: &mut ChaCha8Rng, n: usize) -> Vec<CVec3> {
        (0..n).map(|_| CVec3::new(rc(rng), rc(rng), rc(rng))).collect()
    }

    #[test]
    fn zero_data_and_zero_sources() {
        let p = problem(2);
        let o = region(&p, [0.0; 3], [1.0, 1.0, 0.5]);
        let zero = vec![C64::new(0.0, 0.0); p.n_control()];
        let rf = p.apply_l(&o, &zero).unwrap();
        assert!(rf.e.iter().flatten().all(|v| v.norm() == 0.0));
        let z = vec![CVec3::zeros(); o.len()];
        let g = p.apply_l_adjoint(&o, &z, &z).unwrap();
        assert!(g.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn observation_norm_is_region_energy() {
        let p = problem(3);
        let o = region(&p, [0.0; 3], [0.5, 1.0, 0.5]);
        let m = p.measurement_matrix(&o).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let f = rvec(&mut rng, p.n_control());
            let fields = p.solve(&f).unwrap();
            let energy = p.region_energy(&o, &fields).unwrap();
            assert!((m.energy(&f) - energy).abs() <= 1e-10 * energy);
            let direct = p.observe(&o, &fields);
            let via = m.apply(&f);
            let diff: Vec<C64> = direct.iter().zip(&via).map(|(a, b)| a - b).collect();
            assert!(norm_sqr(&diff).sqrt() <= 1e-10 * norm_sqr(&direct).sqrt());
        }
    }

    #[test]
    fn piecewise_constant_observation_pairs_as_l2() {
        let p = problem(2);
        let o = region(&p, [0.0; 3], [1.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = rvec(&mut rng, p.n_control());
        let fields = p.solve(&f).unwrap();
        let j = rfield(&mut rng, o.len());
        let kk = rfield(&mut rng, o.len());
        let w = p.observe_piecewise_constant(&o, &j, &kk).unwrap();
        let lhs = inner(&p.observe(&o, &fields), &w);
        // quadrature reference: E is linear, so a degree-2 rule is exact
        let rule = crate::quadrature::TetRule::collapsed(3);
        let mut rhs = C64::new(0.0, 0.0);
        for (i, &t) in o.iter().enumerate() {
            let td = &p.system().tets[t];
            for (bary, wt) in &rule.points {
                let e = td.eval(&fields.e, bary);
                rhs += e.dot(&j[i].map(|v| v.conj())) * (wt * td.geom.volume);
            }
            rhs += fields.h[t].dot(&kk[i].map(|v| v.conj())) * td.geom.volume;
        }
        assert!((lhs - rhs).norm() <= 1e-12 * rhs.norm());
    }

    #[test]
    fn adjoint_identity_and_routes_agree() {
        let p = problem(3);
        let o = region(&p, [0.0, 0.0, 0.0], [1.0, 0.5, 0.5]);
        let m = p.measurement_matrix(&o).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..4 {
            let f = rvec(&mut rng, p.n_control());
            let j = rfield(&mut rng, o.len());
            let kk = rfield(&mut rng, o.len());
            let w = p.observe_piecewise_constant(&o, &j, &kk).unwrap();
            let g_pde = p.apply_l_adjoint(&o, &j, &kk).unwrap();
            let g_mat = m.apply_adjoint(&w);
            let lhs = inner(&m.apply(&f), &w);
            let rhs = inner(&f, &g_pde);
            assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm(), "{lhs} vs {rhs}");
            let diff: Vec<C64> = g_pde.iter().zip(&g_mat).map(|(a, b)| a - b).collect();
            assert!(norm_sqr(&diff).sqrt() <= 1e-8 * norm_sqr(&g_mat).sqrt());
        }
    }

    #[test]
    fn gram_is_hermitian_psd() {
        let p = problem(2);
        let o = region(&p, [0.0; 3], [1.0, 1.0, 0.5]);
        let g = p.measurement_matrix(&o).unwrap().gram();
        let n = g.nrows();
        for i in 0..n {
            for j in 0..n {
                assert!((g[(i, j)] - g[(j, i)].conj()).norm() <= 1e-12 * g[(i, i)].norm().max(1.0));
            }
        }
        let eig = g.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        let top = eig.iter().cloned().fold(0.0, f64::max);
        assert!(eig.iter().all(|&v| v >= -1e-12 * top));
    }

    #[test]
    fn nested_regions_are_monotone() {
        let p = problem(3);
        let small = region(&p, [0.0; 3], [0.5, 0.5, 0.5]);
        let big = region(&p, [0.0; 3], [1.0, 1.0, 0.5]);
        assert!(small.iter().all(|t| big.contains(t)));
        let ms = p.measurement_matrix(&small).unwrap();
        let mb = p.measurement_matrix(&big).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let f = rvec(&mut rng, p.n_control());
            assert!(ms.energy(&f) <= mb.energy(&f) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn region_checks() {
        let p = problem(2);
        assert!(p.measurement_matrix(&[]).is_err());
        assert!(p.apply_l(&[10_000], &vec![C64::new(0.0, 0.0); p.n_control()]).is_err());
    }
}
