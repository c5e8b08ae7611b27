//! Runge approximation with partial boundary data: Tikhonov fits of
//! boundary inputs whose interior fields match a local solution on a region.

use faer::Mat;
use log::debug;
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::fem::{assemble, CVec3, DofMap, C64};
use crate::localization::{default_shift, max_ratio};
use crate::measurement::{matvec, norm_sqr, MeasurementOperator, Problem, RegionFields};
use crate::mesh::{RegionKind, RegionSpec};
use crate::oracles::MediumPlaneWave;
use crate::solver::ForwardSolver;

#[derive(Clone, Debug, PartialEq)]
pub struct RungeFit {
    pub alpha: f64,
    pub f: Vec<C64>,
    /// `‖M f − t‖ / ‖t‖` (0 for a zero target).
    pub residual: f64,
    pub f_norm: f64,
}

/// Thin SVD of a measurement matrix, reused across regularization weights.
/// The Tikhonov minimizer is `f_α = V diag(σ/(σ² + α)) Uᴴ t`, identical to
/// the solution of `(MᴴM + αI) f = Mᴴ t`.
#[derive(Clone, Debug)]
pub struct TikhonovSolver {
    u: Mat<C64>,
    s: Vec<f64>,
    v: Mat<C64>,
    m: Mat<C64>,
}

impl TikhonovSolver {
    pub fn new(op: &MeasurementOperator) -> Result<Self> {
        let svd = op
            .matrix
            .thin_svd()
            .map_err(|e| Error::Linalg(format!("svd: {e:?}")))?;
        Ok(Self {
            u: svd.U().to_owned(),
            s: svd.S().column_vector().iter().map(|v| v.re).collect(),
            v: svd.V().to_owned(),
            m: op.matrix.clone(),
        })
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.s
    }

    pub fn fit(&self, target: &[C64], alpha: f64) -> Result<RungeFit> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("α must be positive, got {alpha}")));
        }
        if target.len() != self.m.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.m.nrows(),
                got: target.len(),
            });
        }
        let r = self.s.len();
        let coef: Vec<C64> = (0..r)
            .map(|j| {
                let ut: C64 = (0..self.u.nrows()).map(|i| self.u[(i, j)].conj() * target[i]).sum();
                ut * (self.s[j] / (self.s[j] * self.s[j] + alpha))
            })
            .collect();
        let f: Vec<C64> = (0..self.v.nrows())
            .map(|i| (0..r).map(|j| self.v[(i, j)] * coef[j]).sum())
            .collect();
        let t_norm = norm_sqr(target).sqrt();
        let residual = if t_norm == 0.0 {
            0.0
        } else {
            let mf = matvec(&self.m, &f);
            let diff: Vec<C64> = mf.iter().zip(target).map(|(a, b)| a - b).collect();
            norm_sqr(&diff).sqrt() / t_norm
        };
        Ok(RungeFit {
            alpha,
            f_norm: norm_sqr(&f).sqrt(),
            f,
            residual,
        })
    }
}

/// Minimizer of `‖M f − t‖² + α ‖f‖²`.
pub fn runge_fit(op: &MeasurementOperator, target: &[C64], alpha: f64) -> Result<RungeFit> {
    TikhonovSolver::new(op)?.fit(target, alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RungeSweep {
    pub fits: Vec<RungeFit>,
    /// Index into `fits` of the selected weight.
    pub selected: usize,
}

impl RungeSweep {
    pub fn best(&self) -> &RungeFit {
        &self.fits[self.selected]
    }
}

/// Fits for a strictly decreasing list of weights. The selected weight is
/// the smallest one whose residual improves on its predecessor's by at
/// least 1%.
pub fn runge_sweep(op: &MeasurementOperator, target: &[C64], alphas: &[f64]) -> Result<RungeSweep> {
    if alphas.is_empty() {
        return Err(Error::InvalidArgument("empty α list".into()));
    }
    if alphas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("α list must be strictly decreasing".into()));
    }
    let solver = TikhonovSolver::new(op)?;
    let fits = alphas
        .iter()
        .map(|&a| solver.fit(target, a))
        .collect::<Result<Vec<_>>>()?;
    let selected = (1..fits.len()).rfind(|&i| fits[i].residual <= 0.99 * fits[i - 1].residual)
        .unwrap_or(0);
    debug!("runge sweep selected α = {:e}", fits[selected].alpha);
    Ok(RungeSweep { fits, selected })
}

/// `n` weights from `hi` down to `lo`, evenly spaced in log scale.
pub fn geometric_alphas(hi: f64, lo: f64, n: usize) -> Result<Vec<f64>> {
    if !(hi > lo && lo > 0.0 && n >= 2) {
        return Err(Error::InvalidArgument(format!("bad α range {hi}..{lo} with {n} steps")));
    }
    let r = (lo / hi).ln() / (n - 1) as f64;
    Ok((0..n).map(|i| hi * (r * i as f64).exp()).collect())
}

/// Local solution on `tets`: a plane wave when the material there is one
/// isotropic constant, otherwise the restriction of the global field driven
/// by the vacuum plane-wave trace on the whole boundary.
pub fn local_solution(problem: &Problem, tets: &[usize], d: Vector3<f64>, p: CVec3) -> Result<RegionFields> {
    let sys = problem.system();
    let first = &sys.tets[tets[0]];
    let isotropic = |m: &Matrix3<f64>| {
        let s = m[(0, 0)];
        (m - Matrix3::identity() * s).norm() <= 1e-14 * s
    };
    let homogeneous = tets.iter().all(|&t| {
        let td = &sys.tets[t];
        isotropic(&td.eps) && isotropic(&td.mu) && td.eps == first.eps && td.mu == first.mu
    });
    if homogeneous {
        let w = MediumPlaneWave::new(problem.k(), first.eps[(0, 0)], first.mu[(0, 0)], d, p)?;
        return Ok(problem.sample_region(tets, |x| w.e(x), |x| w.h(x)));
    }
    let mesh = sys.mesh.clone();
    let everywhere = RegionSpec {
        bounds: mesh.bounds,
        kind: RegionKind::BoundaryPatch,
    };
    let cavity = DofMap::new(&mesh, Some(&mesh.tag_boundary_patch(&everywhere)?));
    let whole = ForwardSolver::new(
        assemble(mesh.clone(), &problem.materials, problem.k(), cavity)?,
        problem.solver.options,
    )?;
    let w = MediumPlaneWave::new(problem.k(), 1.0, 1.0, d, p)?;
    let full = whole.system.interpolate(|x| w.e(x));
    let f = whole.system.dofmap.restrict_to_control(&full);
    let fields = whole.solve(&f, None, None)?;
    Ok(problem.restrict(tets, &fields))
}

/// Fields that vanish on `tets`.
pub fn zero_region(tets: &[usize]) -> RegionFields {
    RegionFields {
        tets: tets.to_vec(),
        e: vec![[C64::new(0.0, 0.0); 6]; tets.len()],
        h: vec![CVec3::zeros(); tets.len()],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RungeLocalizationTerm {
    pub ell: usize,
    pub energy_m: f64,
    pub energy_d: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RungeLocalization {
    pub sweep: RungeSweep,
    /// `‖M_M f‖² / ‖M_D f‖²` for the selected fit.
    pub ratio: f64,
    pub terms: Vec<RungeLocalizationTerm>,
    /// Eigen-based maximal ratio on the same regions, for comparison.
    pub eigen_lambda: f64,
}

/// Fits a local solution on `m` extended by zero on `d`, then rescales the
/// selected fit so the shielded energies are `1/ℓ²`.
pub fn runge_implies_localization(
    problem: &Problem,
    m: &[usize],
    d: &[usize],
    target_m: &RegionFields,
    alphas: &[f64],
    len: usize,
) -> Result<RungeLocalization> {
    if target_m.tets != m {
        return Err(Error::InvalidArgument("target must be given on the M tets".into()));
    }
    let o: Vec<usize> = m.iter().chain(d).copied().collect();
    let op_o = problem.measurement_matrix(&o)?;
    let mut t = problem.observe_region(target_m);
    t.extend(problem.observe_region(&zero_region(d)));
    let sweep = runge_sweep(&op_o, &t, alphas)?;
    let op_m = problem.measurement_matrix(m)?;
    let op_d = problem.measurement_matrix(d)?;
    let best = &sweep.best().f;
    let em = op_m.energy(best);
    let ed = op_d.energy(best);
    let (ratio, terms) = if ed > 0.0 {
        let terms = (1..=len)
            .map(|ell| {
                let s = 1.0 / (ell as f64 * ed.sqrt());
                let f: Vec<C64> = best.iter().map(|v| v * s).collect();
                RungeLocalizationTerm {
                    ell,
                    energy_m: op_m.energy(&f),
                    energy_d: op_d.energy(&f),
                }
            })
            .collect();
        (em / ed, terms)
    } else {
        (if em > 0.0 { f64::INFINITY } else { 0.0 }, Vec::new())
    };
    let g_d = op_d.gram();
    let (eigen_lambda_reg, f) = max_ratio(&op_m.gram(), &g_d, default_shift(&g_d))?;
    let eigen_lambda = {
        let d_e = op_d.energy(&f);
        if d_e > 0.0 {
            op_m.energy(&f) / d_e
        } else {
            eigen_lambda_reg
        }
    };
    Ok(RungeLocalization {
        sweep,
        ratio,
        terms,
        eigen_lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::Materials;
    use crate::mesh::{build_box_mesh, Aabb};
    use crate::solver::SolverOptions;
    use std::sync::Arc;

    fn setup() -> (Problem, MeasurementOperator) {
        let mesh = Arc::new(build_box_mesh(Aabb::unit(), [2, 2, 2]).unwrap());
        let gamma = RegionSpec::boundary_patch([0.0; 3], [1.0, 1.0, 0.0]);
        let p = Problem::new(mesh, &Materials::vacuum(), 1.0, &gamma, SolverOptions::default()).unwrap();
        let o = p.mesh().select_region(&RegionSpec::volume([0.0; 3], [1.0, 1.0, 0.5])).unwrap();
        let op = p.measurement_matrix(&o).unwrap();
        (p, op)
    }

    fn in_range_target(op: &MeasurementOperator) -> (Vec<C64>, Vec<C64>) {
        let f0: Vec<C64> = (0..op.n_cols()).map(|i| C64::new(1.0 / (1.0 + i as f64), 0.5)).collect();
        (op.apply(&f0), f0)
    }

    #[test]
    fn zero_target_gives_zero_fit() {
        let (_, op) = setup();
        let t = vec![C64::new(0.0, 0.0); op.n_rows()];
        for a in [1.0, 1e-6] {
            let fit = runge_fit(&op, &t, a).unwrap();
            assert_eq!(fit.f_norm, 0.0);
            assert_eq!(fit.residual, 0.0);
        }
    }

    #[test]
    fn invalid_weights() {
        let (_, op) = setup();
        let t = vec![C64::new(1.0, 0.0); op.n_rows()];
        assert!(runge_fit(&op, &t, 0.0).is_err());
        assert!(runge_fit(&op, &t, -1.0).is_err());
        assert!(runge_sweep(&op, &t, &[]).is_err());
        assert!(runge_sweep(&op, &t, &[1e-3, 1e-2]).is_err());
    }

    #[test]
    fn single_weight_sweep() {
        let (_, op) = setup();
        let (t, _) = in_range_target(&op);
        let s = runge_sweep(&op, &t, &[1e-4]).unwrap();
        assert_eq!(s.fits.len(), 1);
        assert_eq!(s.selected, 0);
    }

    #[test]
    fn normal_equations_hold() {
        let (_, op) = setup();
        let (t, _) = in_range_target(&op);
        let g = op.gram();
        let g_norm = g.singular_values().unwrap()[0];
        for a in [1e-2, 1e-6] {
            let fit = runge_fit(&op, &t, a).unwrap();
            let mht = op.apply_adjoint(&t);
            let gf = matvec(&g, &fit.f);
            let grad: Vec<C64> = gf.iter().zip(&fit.f).zip(&mht).map(|((x, y), z)| x + y * a - z).collect();
            let bound = 1e-10 * (g_norm * fit.f_norm + norm_sqr(&mht).sqrt());
            assert!(norm_sqr(&grad).sqrt() <= bound);
        }
    }

    #[test]
    fn in_range_sweep_is_monotone_and_converges() {
        let (_, op) = setup();
        let (t, f0) = in_range_target(&op);
        let alphas = geometric_alphas(1e-2, 1e-12, 11).unwrap();
        let s = runge_sweep(&op, &t, &alphas).unwrap();
        for w in s.fits.windows(2) {
            assert!(w[1].residual <= w[0].residual + 1e-12);
            assert!(w[1].f_norm >= w[0].f_norm - 1e-12);
        }
        assert!(s.fits.last().unwrap().residual <= 1e-6);
        // f0 has a nonzero component in the null space only if M is not
        // injective; the fit never exceeds it in norm
        assert!(s.fits.last().unwrap().f_norm <= norm_sqr(&f0).sqrt() * (1.0 + 1e-8));
    }

    #[test]
    fn geometric_alphas_endpoints() {
        let a = geometric_alphas(1e-2, 1e-10, 9).unwrap();
        assert!((a[0] - 1e-2).abs() < 1e-18 && (a[8] - 1e-10).abs() < 1e-20);
        assert!((a[1] - 1e-3).abs() < 1e-15);
        assert!(geometric_alphas(1.0, 2.0, 3).is_err());
    }
}
