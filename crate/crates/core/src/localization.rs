//! Localized boundary data: maximize the energy on a target region M
//! against a shielded region D, then emit the scaled sequence
//! `f⁽ˡ⁾ = f̃ / (ℓ ‖M_D f̃‖)`.

use std::collections::HashSet;

use faer::{Mat, Side};
use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::C64;
use crate::measurement::{inner, matvec, norm_sqr, MeasurementOperator, Problem};

/// Default shift `δ = 1e-12 · trace(G_D) / n`.
pub fn default_shift(g_d: &Mat<C64>) -> f64 {
    let n = g_d.nrows().max(1);
    let trace: f64 = (0..g_d.nrows()).map(|i| g_d[(i, i)].re).sum();
    1e-12 * trace / n as f64
}

fn frobenius(a: &Mat<C64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

fn check_hermitian(a: &Mat<C64>, name: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidArgument(format!("{name} is not square")));
    }
    let scale = frobenius(a);
    let mut asym = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..=j {
            asym = asym.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    if asym > 1e-10 * scale || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("{name} is not Hermitian (deviation {asym:e})")));
    }
    Ok(())
}

/// Multiplies by a unit phase so the largest-magnitude entry (first on
/// ties) is real and positive.
pub fn fix_phase(f: &mut [C64]) {
    let mut best = 0;
    for (i, v) in f.iter().enumerate() {
        if v.norm() > f[best].norm() {
            best = i;
        }
    }
    if let Some(p) = f.get(best).copied() {
        if p.norm() > 0.0 {
            let rot = p.conj() / p.norm();
            f.iter_mut().for_each(|v| *v *= rot);
        }
    }
}

fn quad_form(g: &Mat<C64>, f: &[C64]) -> f64 {
    inner(&matvec(g, f), f).re
}

/// Top generalized eigenpair of `G_M f = λ (G_D + δI) f`. Returns `λ` as
/// the Rayleigh quotient of the returned unit vector.
pub fn max_ratio(g_m: &Mat<C64>, g_d: &Mat<C64>, delta: f64) -> Result<(f64, Vec<C64>)> {
    check_hermitian(g_m, "G_M")?;
    check_hermitian(g_d, "G_D")?;
    let n = g_m.nrows();
    if g_d.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: g_d.nrows(),
        });
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("shift must be finite and ≥ 0, got {delta}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty Gram matrices".into()));
    }
    let b = Mat::from_fn(n, n, |i, j| g_d[(i, j)] + if i == j { C64::from(delta) } else { C64::from(0.0) });
    let llt = b.llt(Side::Lower).map_err(|e| {
        Error::Linalg(format!("G_D + δI is not positive definite ({e:?}); increase δ"))
    })?;
    let l = llt.L().to_owned();
    let mut x = g_m.clone();
    l.solve_lower_triangular_in_place(x.as_mut());
    let mut c = x.adjoint().to_owned();
    l.solve_lower_triangular_in_place(c.as_mut());
    let c = Mat::from_fn(n, n, |i, j| (c[(i, j)] + c[(j, i)].conj()) * 0.5);
    let eig = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Linalg(format!("eigensolver: {e:?}")))?;
    let s = eig.S().column_vector();
    let top = s[n - 1].re;
    let idx = (0..n)
        .find(|&i| s[i].re >= top - 1e-12 * top.abs())
        .unwrap_or(n - 1);
    let mut y = Mat::from_fn(n, 1, |i, _| eig.U()[(i, idx)]);
    l.adjoint().solve_upper_triangular_in_place(y.as_mut());
    let mut f: Vec<C64> = (0..n).map(|i| y[(i, 0)]).collect();
    let nf = norm_sqr(&f).sqrt();
    f.iter_mut().for_each(|v| *v /= nf);
    fix_phase(&mut f);
    let lambda = quad_form(g_m, &f) / (quad_form(g_d, &f) + delta);
    Ok((lambda, f))
}

/// The scaled sequence for `ℓ = 1..=len`. When `M_D f̃ = 0` the sequence is
/// `ℓ f̃` and the flag is set.
pub fn localized_sequence(f_tilde: &[C64], m_d: &MeasurementOperator, len: usize) -> Result<(Vec<Vec<C64>>, bool)> {
    if f_tilde.len() != m_d.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: m_d.n_cols(),
            got: f_tilde.len(),
        });
    }
    let d = m_d.energy(f_tilde).sqrt();
    let degenerate = d == 0.0;
    let seq = (1..=len)
        .map(|ell| {
            let s = if degenerate { ell as f64 } else { 1.0 / (ell as f64 * d) };
            f_tilde.iter().map(|v| v * s).collect()
        })
        .collect();
    Ok((seq, degenerate))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceTerm {
    pub ell: usize,
    pub f: Vec<C64>,
    /// `‖M_M f‖²`, `‖M_D f‖²`.
    pub energy_m: f64,
    pub energy_d: f64,
    /// The same energies from a full forward solve.
    pub solved_energy_m: f64,
    pub solved_energy_d: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationResult {
    /// `‖M_M f̃‖² / ‖M_D f̃‖²` (infinite in the degenerate case).
    pub lambda: f64,
    /// Generalized eigenvalue with the shift in the denominator.
    pub lambda_regularized: f64,
    pub delta: f64,
    /// Unit-norm optimizer.
    pub optimizer: Vec<C64>,
    pub degenerate: bool,
    pub terms: Vec<SequenceTerm>,
}

/// Builds the measurement matrices on `m` and `d`, maximizes the energy
/// ratio and evaluates the scaled sequence by matrices and by full solves.
pub fn run_localization(
    problem: &Problem,
    m: &[usize],
    d: &[usize],
    len: usize,
    delta: Option<f64>,
) -> Result<LocalizationResult> {
    let ms: HashSet<usize> = m.iter().copied().collect();
    if d.iter().any(|t| ms.contains(t)) {
        warn!("target and shielded regions overlap");
    }
    let op_m = problem.measurement_matrix(m)?;
    let op_d = problem.measurement_matrix(d)?;
    let g_m = op_m.gram();
    let g_d = op_d.gram();
    let delta = delta.unwrap_or_else(|| default_shift(&g_d));
    let (lambda_regularized, optimizer) = max_ratio(&g_m, &g_d, delta)?;
    let em = op_m.energy(&optimizer);
    let ed = op_d.energy(&optimizer);
    let lambda = if ed > 0.0 { em / ed } else { f64::INFINITY };
    debug!("λ = {lambda:e} (regularized {lambda_regularized:e}, δ = {delta:e})");
    let (seq, degenerate) = localized_sequence(&optimizer, &op_d, len)?;
    let terms = seq
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let fields = problem.solve(&f)?;
            Ok(SequenceTerm {
                ell: i + 1,
                energy_m: op_m.energy(&f),
                energy_d: op_d.energy(&f),
                solved_energy_m: problem.region_energy(m, &fields)?,
                solved_energy_d: problem.region_energy(d, &fields)?,
                f,
            })
        })
        .collect::<Result<_>>()?;
    Ok(LocalizationResult {
        lambda,
        lambda_regularized,
        delta,
        optimizer,
        degenerate,
        terms,
    })
}

/// Outcome of the range test `ran(A1ᴴ) ⊆ ran(A2ᴴ)`, which holds exactly when
/// `‖A1 x‖ ≤ C ‖A2 x‖` for some `C` and all `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeLemmaReport {
    pub bounded: bool,
    pub rank_a2: usize,
    pub rank_stacked: usize,
    /// Smallest feasible `C = ‖A1 A2⁺‖` when bounded.
    pub constant: Option<f64>,
    /// `x` with `‖A1 x‖ = 1` and `A2 x ≈ 0` when unbounded.
    pub witness: Option<Vec<C64>>,
    /// Largest `‖A1 x‖ / ‖A2 x‖` over random trial vectors.
    pub max_sampled_ratio: f64,
}

fn rank(s: &[f64], threshold: f64) -> usize {
    s.iter().filter(|&&v| v > threshold).count()
}

/// Ranks use the threshold `1e-10 · σ_max([A2; A1])`.
pub fn verify_range_lemma(a1: &Mat<C64>, a2: &Mat<C64>, trials: usize, seed: u64) -> Result<RangeLemmaReport> {
    let n = a1.ncols();
    if a2.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a2.ncols(),
        });
    }
    let (m1, m2) = (a1.nrows(), a2.nrows());
    let stacked = Mat::from_fn(m1 + m2, n, |i, j| if i < m2 { a2[(i, j)] } else { a1[(i - m2, j)] });
    let svd_err = |e| Error::Linalg(format!("svd: {e:?}"));
    let s_stacked = stacked.singular_values().map_err(svd_err)?;
    let threshold = 1e-10 * s_stacked.first().copied().unwrap_or(0.0);
    let rank_stacked = rank(&s_stacked, threshold);

    let svd2 = a2.svd().map_err(svd_err)?;
    let s2: Vec<f64> = svd2.S().column_vector().iter().map(|v| v.re).collect();
    let rank_a2 = rank(&s2, threshold);
    let v2 = svd2.V();
    let bounded = rank_stacked == rank_a2;

    let (constant, witness) = if bounded {
        // ‖A1 A2⁺‖ = ‖A1 V_r Σ_r⁻¹‖
        let b = Mat::from_fn(m1, rank_a2, |i, j| {
            (0..n).map(|p| a1[(i, p)] * v2[(p, j)]).sum::<C64>() / s2[j]
        });
        let c = if rank_a2 == 0 || m1 == 0 {
            0.0
        } else {
            b.singular_values().map_err(svd_err)?[0]
        };
        (Some(c), None)
    } else {
        let null = Mat::from_fn(n, n - rank_a2, |i, j| v2[(i, rank_a2 + j)]);
        let a1n = a1 * &null;
        let svd = a1n.svd().map_err(svd_err)?;
        let z = svd.V().col(0);
        let mut x: Vec<C64> = (0..n).map(|i| (0..null.ncols()).map(|j| null[(i, j)] * z[j]).sum()).collect();
        let a1x = norm_sqr(&matvec(a1, &x)).sqrt();
        x.iter_mut().for_each(|v| *v /= a1x);
        (None, Some(x))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_sampled_ratio = 0.0f64;
    for _ in 0..trials {
        let x: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let num = norm_sqr(&matvec(a1, &x)).sqrt();
        let den = norm_sqr(&matvec(a2, &x)).sqrt();
        let r = if den > 0.0 { num / den } else if num > 0.0 { f64::INFINITY } else { 0.0 };
        max_sampled_ratio = max_sampled_ratio.max(r);
    }

    Ok(RangeLemmaReport {
        bounded,
        rank_a2,
        rank_stacked,
        constant,
        witness,
        max_sampled_ratio,
    })
}
