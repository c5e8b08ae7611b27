//! Forward and adjoint solves of the discrete Maxwell system, cavity
//! resonances and non-resonance certification.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use log::debug;

use crate::error::{Error, Result};
use crate::fem::{assemble, trace_lift, AssembledSystem, CVec3, DofKind, DofMap, FieldPair, C64, I};
use crate::materials::Materials;
use crate::mesh::Mesh;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Accepted relative residual of every solve.
    pub residual_tol: f64,
    /// Minimum accepted smallest-singular-value estimate of the system
    /// matrix, relative to its 1-norm.
    pub min_relative_sigma: f64,
    /// Minimum accepted relative distance `|k − k_res| / k` to a resonance.
    pub min_resonance_margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-10,
            min_relative_sigma: 1e-8,
            min_resonance_margin: 1e-3,
        }
    }
}

/// Sparse LU of the free-DOF block of `S − k² M_ε`, together with the
/// coupling block to the control DOFs.
pub struct Factorization {
    lu: Lu<usize, f64>,
    b_ff: SparseColMat<usize, f64>,
    /// Rows: free DOFs, columns: control DOFs.
    b_fc: SparseColMat<usize, f64>,
    /// Smallest-singular-value estimate relative to ‖B_ff‖₁.
    pub relative_sigma_min: f64,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("n_free", &self.b_ff.nrows())
            .field("relative_sigma_min", &self.relative_sigma_min)
            .finish()
    }
}

fn operator_blocks(
    system: &AssembledSystem,
) -> Result<(SparseColMat<usize, f64>, SparseColMat<usize, f64>)> {
    let dm = &system.dofmap;
    let k2 = system.k * system.k;
    let mut ff = Vec::new();
    let mut fc = Vec::new();
    for (mat, scale) in [(&system.curl_curl, 1.0), (&system.mass, -k2)] {
        let cp = mat.col_ptr();
        let ri = mat.row_idx();
        let vals = mat.val();
        for col in 0..mat.ncols() {
            let col_kind = dm.kinds[col];
            if col_kind == DofKind::Constrained {
                continue;
            }
            for p in cp[col]..cp[col + 1] {
                let Some(r) = dm.free_index(ri[p]) else {
                    continue;
                };
                let v = scale * vals[p];
                match col_kind {
                    DofKind::Free => ff.push(Triplet::new(r, dm.free_index(col).unwrap(), v)),
                    DofKind::Control => fc.push(Triplet::new(r, dm.control_index(col).unwrap(), v)),
                    DofKind::Constrained => unreachable!(),
                }
            }
        }
    }
    let sparse_err = |e| Error::Linalg(format!("sparse block: {e:?}"));
    let b_ff = SparseColMat::try_new_from_triplets(dm.n_free(), dm.n_free(), &ff).map_err(sparse_err)?;
    let b_fc =
        SparseColMat::try_new_from_triplets(dm.n_free(), dm.n_control(), &fc).map_err(sparse_err)?;
    Ok((b_ff, b_fc))
}

fn real_spmv(a: &SparseColMat<usize, f64>, x: &[f64], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    let cp = a.col_ptr();
    let ri = a.row_idx();
    let vals = a.val();
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for p in cp[j]..cp[j + 1] {
            y[ri[p]] += vals[p] * xj;
        }
    }
}

fn one_norm(a: &SparseColMat<usize, f64>) -> f64 {
    let cp = a.col_ptr();
    let vals = a.val();
    (0..a.ncols())
        .map(|j| vals[cp[j]..cp[j + 1]].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Factorization {
    pub fn new(system: &AssembledSystem) -> Result<Self> {
        let (b_ff, b_fc) = operator_blocks(system)?;
        let n = b_ff.nrows();
        let lu = match b_ff.sp_lu() {
            Ok(lu) => lu,
            Err(_) => {
                return Err(Error::Resonant {
                    k: system.k,
                    sigma_min: 0.0,
                })
            }
        };
        let mut fact = Self {
            lu,
            b_ff,
            b_fc,
            relative_sigma_min: 0.0,
        };
        fact.relative_sigma_min = if n == 0 { 1.0 } else { fact.estimate_sigma_min() };
        Ok(fact)
    }

    pub fn n_free(&self) -> usize {
        self.b_ff.nrows()
    }

    /// Inverse power iteration on the symmetric matrix `B_ff`.
    fn estimate_sigma_min(&self) -> f64 {
        let n = self.n_free();
        let mut x: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.618_033_988_7 + 0.1).sin()).collect();
        let nx = norm2(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let mut growth = 0.0;
        for _ in 0..40 {
            let mut y = Mat::<f64>::from_fn(n, 1, |i, _| x[i]);
            self.lu.solve_in_place(y.as_mut());
            let yv: Vec<f64> = (0..n).map(|i| y[(i, 0)]).collect();
            let ny = norm2(&yv);
            if !ny.is_finite() {
                return 0.0;
            }
            growth = ny;
            x = yv.into_iter().map(|v| v / ny).collect();
        }
        let norm = one_norm(&self.b_ff);
        if growth == 0.0 || norm == 0.0 {
            return 0.0;
        }
        (1.0 / growth) / norm
    }

    /// Solves `B_ff x = rhs` for each complex column, with one step of
    /// iterative refinement. Returns the solutions and the worst relative
    /// residual.
    pub fn solve_columns(&self, rhs: &[Vec<C64>]) -> (Vec<Vec<C64>>, f64) {
        let n = self.n_free();
        let m = rhs.len();
        let mut b = Mat::<f64>::zeros(n, 2 * m);
        for (c, col) in rhs.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                b[(i, 2 * c)] = v.re;
                b[(i, 2 * c + 1)] = v.im;
            }
        }
        let mut x = b.clone();
        self.lu.solve_in_place(x.as_mut());

        let mut worst = 0.0f64;
        let mut corr = Mat::<f64>::zeros(n, 2 * m);
        let mut residual_norms = vec![0.0; 2 * m];
        let mut xcol = vec![0.0; n];
        let mut ax = vec![0.0; n];
        for c in 0..2 * m {
            for i in 0..n {
                xcol[i] = x[(i, c)];
            }
            real_spmv(&self.b_ff, &xcol, &mut ax);
            for i in 0..n {
                corr[(i, c)] = b[(i, c)] - ax[i];
            }
            residual_norms[c] = (0..n).map(|i| corr[(i, c)].powi(2)).sum::<f64>();
        }
        if residual_norms.iter().any(|&r| r > 0.0) {
            self.lu.solve_in_place(corr.as_mut());
            x += &corr;
        }
        for c in 0..m {
            let rhs_norm: f64 = (0..n)
                .map(|i| b[(i, 2 * c)].powi(2) + b[(i, 2 * c + 1)].powi(2))
                .sum::<f64>()
                .sqrt();
            if rhs_norm == 0.0 {
                continue;
            }
            let mut r2 = 0.0;
            for part in 0..2 {
                for i in 0..n {
                    xcol[i] = x[(i, 2 * c + part)];
                }
                real_spmv(&self.b_ff, &xcol, &mut ax);
                r2 += (0..n).map(|i| (b[(i, 2 * c + part)] - ax[i]).powi(2)).sum::<f64>();
            }
            worst = worst.max(r2.sqrt() / rhs_norm);
        }
        let out = (0..m)
            .map(|c| (0..n).map(|i| C64::new(x[(i, 2 * c)], x[(i, 2 * c + 1)])).collect())
            .collect();
        (out, worst)
    }

    /// `B_fc f` for a control vector `f`.
    pub fn coupling(&self, f: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.n_free()];
        let cp = self.b_fc.col_ptr();
        let ri = self.b_fc.row_idx();
        let vals = self.b_fc.val();
        for (j, fj) in f.iter().enumerate() {
            for p in cp[j]..cp[j + 1] {
                y[ri[p]] += *fj * vals[p];
            }
        }
        y
    }

    /// `B_cf x = B_fcᵀ x` for a free vector `x`.
    pub fn coupling_transpose(&self, x: &[C64]) -> Vec<C64> {
        let cp = self.b_fc.col_ptr();
        let ri = self.b_fc.row_idx();
        let vals = self.b_fc.val();
        (0..self.b_fc.ncols())
            .map(|j| (cp[j]..cp[j + 1]).map(|p| x[ri[p]] * vals[p]).sum())
            .collect()
    }
}

/// An assembled system with its factorization, ready for many solves.
#[derive(Debug)]
pub struct ForwardSolver {
    pub system: AssembledSystem,
    pub factorization: Factorization,
    pub options: SolverOptions,
}

impl ForwardSolver {
    /// Factorizes the system; fails when `k` is resonant or near-resonant
    /// according to the conditioning estimate.
    pub fn new(system: AssembledSystem, options: SolverOptions) -> Result<Self> {
        let factorization = Factorization::new(&system)?;
        debug!(
            "factorized {} free DOFs, relative sigma_min ≈ {:e}",
            factorization.n_free(),
            factorization.relative_sigma_min
        );
        if factorization.relative_sigma_min < options.min_relative_sigma {
            return Err(Error::Resonant {
                k: system.k,
                sigma_min: factorization.relative_sigma_min,
            });
        }
        Ok(Self {
            system,
            factorization,
            options,
        })
    }

    pub fn n_control(&self) -> usize {
        self.system.dofmap.n_control()
    }

    fn zeros_tet(&self) -> Vec<CVec3> {
        vec![CVec3::zeros(); self.system.n_tets()]
    }

    fn check_residual(&self, residual: f64) -> Result<()> {
        if residual > self.options.residual_tol || !residual.is_finite() {
            return Err(Error::Residual {
                residual,
                tolerance: self.options.residual_tol,
            });
        }
        Ok(())
    }

    /// Electric fields (all edges) for several boundary data with zero
    /// sources, sharing one factorization.
    pub fn solve_boundary_many(&self, data: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
        let dm = &self.system.dofmap;
        let rhs: Vec<Vec<C64>> = data
            .iter()
            .map(|f| {
                if f.len() != dm.n_control() {
                    return Err(Error::DimensionMismatch {
                        expected: dm.n_control(),
                        got: f.len(),
                    });
                }
                Ok(self.factorization.coupling(f).into_iter().map(|v| -v).collect())
            })
            .collect::<Result<_>>()?;
        let (sols, residual) = self.factorization.solve_columns(&rhs);
        self.check_residual(residual)?;
        data.iter()
            .zip(sols)
            .map(|(f, x)| {
                let mut e = trace_lift(dm, f)?;
                for (&edge, v) in dm.free.iter().zip(x) {
                    e[edge] = v;
                }
                Ok(e)
            })
            .collect()
    }

    /// Solves the inhomogeneous system with tangential data `f` on Γ and
    /// piecewise-constant sources `J`, `K` (zero when `None`).
    pub fn solve(
        &self,
        f: &[C64],
        j: Option<&[CVec3]>,
        kk: Option<&[CVec3]>,
    ) -> Result<FieldPair> {
        let dm = &self.system.dofmap;
        let zeros = self.zeros_tet();
        let j = j.unwrap_or(&zeros);
        let kk = kk.unwrap_or(&zeros);
        let load = self.system.assemble_rhs(j, kk)?;
        let lifted = trace_lift(dm, f)?;
        let coupling = self.factorization.coupling(f);
        let rhs: Vec<C64> = dm
            .free
            .iter()
            .zip(coupling)
            .map(|(&e, c)| load[e] - c)
            .collect();
        let (mut sols, residual) = self.factorization.solve_columns(&[rhs]);
        self.check_residual(residual)?;
        let mut e = lifted;
        for (&edge, v) in dm.free.iter().zip(sols.pop().unwrap()) {
            e[edge] = v;
        }
        let h = self.system.recover_h(&e, Some(kk))?;
        Ok(FieldPair { e, h })
    }

    /// Solves the adjoint system
    /// `curl Ẽ + ikμH̃ = K`, `curl H̃ − ikεẼ = J`, `ν×Ẽ = 0` on ∂Ω,
    /// returning `(Ẽ, H̃)` with `H̃ = −(i/k) μ⁻¹ (K − curl Ẽ)`.
    pub fn solve_adjoint(&self, j: &[CVec3], kk: &[CVec3]) -> Result<FieldPair> {
        let dm = &self.system.dofmap;
        let k = self.system.k;
        let load = self.system.load_vector(-I * k, j, kk)?;
        let rhs = dm.restrict_to_free(&load);
        let (mut sols, residual) = self.factorization.solve_columns(&[rhs]);
        self.check_residual(residual)?;
        let mut e = vec![C64::new(0.0, 0.0); dm.n_dofs()];
        for (&edge, v) in dm.free.iter().zip(sols.pop().unwrap()) {
            e[edge] = v;
        }
        let factor = -I / k;
        let h = self
            .system
            .tets
            .iter()
            .enumerate()
            .map(|(t, td)| crate::fem::mat_apply(&td.mu_inv, &(kk[t] - td.curl(&e))) * factor)
            .collect();
        Ok(FieldPair { e, h })
    }
}

/// Discrete cavity spectrum: `S x = k² M_ε x` on interior edges.
#[derive(Clone, Debug, PartialEq)]
pub struct ResonanceSpectrum {
    /// Resonant wavenumbers up to `k_max`, ascending.
    pub resonances: Vec<f64>,
    /// Number of discarded near-zero eigenvalues (discrete gradients).
    pub kernel_dim: usize,
    pub k_max: f64,
}

/// Generalized eigenvalues `k²` of the cavity problem, ascending.
pub fn cavity_eigenvalues(system: &AssembledSystem) -> Result<Vec<f64>> {
    let dm = &system.dofmap;
    let n = dm.n_free();
    if n == 0 {
        return Ok(Vec::new());
    }
    let dense = |mat: &SparseColMat<usize, f64>| {
        let mut d = Mat::<f64>::zeros(n, n);
        let cp = mat.col_ptr();
        let ri = mat.row_idx();
        let vals = mat.val();
        for col in 0..mat.ncols() {
            let Some(c) = dm.free_index(col) else { continue };
            for p in cp[col]..cp[col + 1] {
                if let Some(r) = dm.free_index(ri[p]) {
                    d[(r, c)] += vals[p];
                }
            }
        }
        d
    };
    let s = dense(&system.curl_curl);
    let m = dense(&system.mass);
    let llt = m
        .llt(Side::Lower)
        .map_err(|e| Error::Linalg(format!("mass matrix not positive definite: {e:?}")))?;
    let l = llt.L();
    // C = L⁻¹ S L⁻ᵀ
    let mut c = s;
    l.solve_lower_triangular_in_place(c.as_mut());
    let mut c = c.transpose().to_owned();
    l.solve_lower_triangular_in_place(c.as_mut());
    let sym = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let mut eig = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Linalg(format!("eigensolver: {e:?}")))?;
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Resonant wavenumbers of the perfectly conducting cavity up to `k_max`.
/// Eigenvalues below `1e-8 · k_max²` belong to the gradient kernel and are
/// discarded.
pub fn find_resonances(mesh: Arc<Mesh>, materials: &Materials, k_max: f64) -> Result<ResonanceSpectrum> {
    if !(k_max > 0.0 && k_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("k_max must be positive, got {k_max}")));
    }
    let dofmap = DofMap::cavity(&mesh);
    let system = assemble(mesh, materials, k_max, dofmap)?;
    spectrum_from(&system, k_max)
}

fn spectrum_from(system: &AssembledSystem, k_max: f64) -> Result<ResonanceSpectrum> {
    let eig = cavity_eigenvalues(system)?;
    let threshold = 1e-8 * k_max * k_max;
    let kernel_dim = eig.iter().filter(|&&v| v <= threshold).count();
    let resonances = eig
        .iter()
        .filter(|&&v| v > threshold && v <= k_max * k_max)
        .map(|v| v.sqrt())
        .collect();
    Ok(ResonanceSpectrum {
        resonances,
        kernel_dim,
        k_max,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonresonanceReport {
    pub k: f64,
    pub nearest_resonance: Option<f64>,
    /// `min |k − k_res| / k` over resonances up to `2k`; 1 when none.
    pub relative_margin: f64,
    /// Smallest singular value estimate of `B_ff` relative to ‖B_ff‖₁.
    pub relative_sigma_min: f64,
    pub passed: bool,
}

/// Compares `k` with the discrete cavity resonances of `system`'s mesh and
/// materials and estimates the conditioning of `S − k² M_ε`.
pub fn check_nonresonance(system: &AssembledSystem, k: f64, options: &SolverOptions) -> Result<NonresonanceReport> {
    let at_k = system.with_k(k)?;
    let spectrum = spectrum_from(&at_k, 2.0 * k)?;
    let nearest = spectrum
        .resonances
        .iter()
        .copied()
        .min_by(|a, b| (a - k).abs().total_cmp(&(b - k).abs()));
    let relative_margin = nearest.map_or(1.0, |r| (r - k).abs() / k);
    let relative_sigma_min = match Factorization::new(&at_k) {
        Ok(f) => f.relative_sigma_min,
        Err(_) => 0.0,
    };
    let passed = relative_margin >= options.min_resonance_margin
        && relative_sigma_min >= options.min_relative_sigma;
    Ok(NonresonanceReport {
        k,
        nearest_resonance: nearest,
        relative_margin,
        relative_sigma_min,
        passed,
    })
}
