//! Closed-form reference fields used to verify the solver.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::fem::{mat_apply, to_complex, AssembledSystem, CVec3, C64, I};
use crate::mesh::Point;

/// A complex vector field with a closed-form curl.
pub trait AnalyticField: Sync {
    fn value(&self, x: &Point) -> CVec3;
    fn curl(&self, x: &Point) -> CVec3;
}

/// `E = p e^{ik d·x}`, `H = (d × p) e^{ik d·x}` in vacuum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneWave {
    pub k: f64,
    pub d: Vector3<f64>,
    pub p: CVec3,
}

impl PlaneWave {
    pub fn new(k: f64, d: Vector3<f64>, p: CVec3) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::InvalidArgument(format!("plane wave needs k > 0, got {k}")));
        }
        if (d.norm() - 1.0).abs() > 1e-14 {
            return Err(Error::InvalidArgument("propagation direction must be a unit vector".into()));
        }
        if p.dot(&to_complex(&d)).norm() > 1e-14 * p.norm() {
            return Err(Error::InvalidArgument("polarization must be orthogonal to d".into()));
        }
        Ok(Self { k, d, p })
    }

    fn phase(&self, x: &Point) -> C64 {
        (I * (self.k * self.d.dot(&Vector3::from(*x)))).exp()
    }

    pub fn fields(&self, x: &Point) -> (CVec3, CVec3) {
        let ph = self.phase(x);
        (self.p * ph, to_complex(&self.d).cross(&self.p) * ph)
    }

    pub fn e(&self, x: &Point) -> CVec3 {
        self.fields(x).0
    }

    pub fn h(&self, x: &Point) -> CVec3 {
        self.fields(x).1
    }

    /// Exact circulation ∫ E · dx along the straight segment a → b.
    pub fn edge_circulation(&self, a: &Point, b: &Point) -> C64 {
        let av = Vector3::from(*a);
        let delta = Vector3::from(*b) - av;
        let phi = self.k * self.d.dot(&delta);
        let avg = if phi.abs() < 1e-8 {
            C64::new(1.0, 0.0) + I * phi * 0.5 - phi * phi / 6.0
        } else {
            ((I * phi).exp() - 1.0) / (I * phi)
        };
        self.p.dot(&to_complex(&delta)) * self.phase(a) * avg
    }
}

impl AnalyticField for PlaneWave {
    fn value(&self, x: &Point) -> CVec3 {
        self.e(x)
    }

    fn curl(&self, x: &Point) -> CVec3 {
        self.h(x) * (I * self.k)
    }
}

/// Plane wave in a homogeneous isotropic medium `ε = e·I`, `μ = m·I`:
/// wavenumber `k √(e m)`, `H = √(e/m) (d × p) e^{ik√(em) d·x}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MediumPlaneWave {
    pub wave: PlaneWave,
    pub eps: f64,
    pub mu: f64,
}

impl MediumPlaneWave {
    pub fn new(k: f64, eps: f64, mu: f64, d: Vector3<f64>, p: CVec3) -> Result<Self> {
        if !(eps > 0.0 && mu > 0.0) {
            return Err(Error::InvalidArgument("medium parameters must be positive".into()));
        }
        Ok(Self {
            wave: PlaneWave::new(k * (eps * mu).sqrt(), d, p)?,
            eps,
            mu,
        })
    }

    pub fn e(&self, x: &Point) -> CVec3 {
        self.wave.e(x)
    }

    pub fn h(&self, x: &Point) -> CVec3 {
        self.wave.h(x) * C64::from((self.eps / self.mu).sqrt())
    }
}

/// Central-difference curl with step `h`.
pub fn fd_curl<F: Fn(&Point) -> CVec3>(f: F, x: &Point, h: f64) -> CVec3 {
    let d = |axis: usize| {
        let mut xp = *x;
        let mut xm = *x;
        xp[axis] += h;
        xm[axis] -= h;
        (f(&xp) - f(&xm)) / C64::from(2.0 * h)
    };
    let (dx, dy, dz) = (d(0), d(1), d(2));
    CVec3::new(dy[2] - dz[1], dz[0] - dx[2], dx[1] - dy[0])
}

/// `J = curl H + ik ε E` at `x` for `H = −(i/k) μ⁻¹ curl E`, with the curl
/// of `H` taken by central differences of step `h`.
pub fn manufactured_current(
    field: &dyn AnalyticField,
    eps: &Matrix3<f64>,
    mu_inv: &Matrix3<f64>,
    k: f64,
    x: &Point,
    h: f64,
) -> CVec3 {
    let h_field = |y: &Point| mat_apply(mu_inv, &field.curl(y)) * (-I / k);
    fd_curl(h_field, x, h) + mat_apply(eps, &field.value(x)) * (I * k)
}

/// Sources and boundary datum that make `field` the exact solution.
#[derive(Clone, Debug)]
pub struct ManufacturedSources {
    pub j: Vec<CVec3>,
    pub k: Vec<CVec3>,
    /// Edge circulations on the control DOFs.
    pub f: Vec<C64>,
}

/// Per-tet sources at barycenters with `K = 0`; finite-difference step is
/// `1e-5` times the domain diameter.
pub fn manufactured_sources(system: &AssembledSystem, field: &dyn AnalyticField) -> ManufacturedSources {
    let h = 1e-5 * system.mesh.bounds.diameter();
    let j = system
        .tets
        .iter()
        .enumerate()
        .map(|(t, td)| {
            manufactured_current(field, &td.eps, &td.mu_inv, system.k, &system.mesh.barycenter(t), h)
        })
        .collect();
    let full = system.interpolate(|x| field.value(x));
    ManufacturedSources {
        j,
        k: vec![CVec3::zeros(); system.n_tets()],
        f: system.dofmap.restrict_to_control(&full),
    }
}

/// A smooth field with closed-form curl, used for manufactured-solution
/// tests on anisotropic media:
/// `E = (sin(πy) e^{z}, cos(πx) z², x y)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SmoothField;

impl AnalyticField for SmoothField {
    fn value(&self, x: &Point) -> CVec3 {
        let [x0, y, z] = *x;
        let pi = std::f64::consts::PI;
        to_complex(&Vector3::new((pi * y).sin() * z.exp(), (pi * x0).cos() * z * z, x0 * y))
    }

    fn curl(&self, x: &Point) -> CVec3 {
        let [x0, y, z] = *x;
        let pi = std::f64::consts::PI;
        // E = (a, b, c): curl = (c_y − b_z, a_z − c_x, b_x − a_y)
        let c_y = x0;
        let b_z = 2.0 * (pi * x0).cos() * z;
        let a_z = (pi * y).sin() * z.exp();
        let c_x = y;
        let b_x = -pi * (pi * x0).sin() * z * z;
        let a_y = pi * (pi * y).cos() * z.exp();
        to_complex(&Vector3::new(c_y - b_z, a_z - c_x, b_x - a_y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave() -> PlaneWave {
        let d = Vector3::new(1.0, 2.0, 2.0) / 3.0;
        let p = CVec3::new(C64::new(2.0, 0.0), C64::new(-1.0, 0.5), C64::new(0.0, -0.25));
        // make p orthogonal to d
        let dc = to_complex(&d);
        let p = p - dc * p.dot(&dc);
        PlaneWave::new(1.7, d, p).unwrap()
    }

    #[test]
    fn axis_aligned_values() {
        let pw = PlaneWave::new(
            2.0,
            Vector3::new(0.0, 0.0, 1.0),
            CVec3::new(C64::new(1.0, 0.0), C64::from(0.0), C64::from(0.0)),
        )
        .unwrap();
        let (e, h) = pw.fields(&[0.0; 3]);
        assert_eq!(e, CVec3::new(C64::from(1.0), C64::from(0.0), C64::from(0.0)));
        assert_eq!(h, CVec3::new(C64::from(0.0), C64::from(1.0), C64::from(0.0)));
    }

    #[test]
    fn invalid_plane_waves() {
        let p = CVec3::new(C64::from(1.0), C64::from(0.0), C64::from(0.0));
        assert!(PlaneWave::new(1.0, Vector3::new(0.0, 0.0, 2.0), p).is_err());
        assert!(PlaneWave::new(1.0, Vector3::new(1.0, 0.0, 0.0), p).is_err());
    }

    #[test]
    fn maxwell_equations_by_finite_differences() {
        let pw = wave();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let curl_e = fd_curl(|y| pw.e(y), &x, 1e-5);
            let curl_h = fd_curl(|y| pw.h(y), &x, 1e-5);
            assert!((curl_e - pw.h(&x) * (I * pw.k)).norm() <= 1e-6);
            assert!((curl_h + pw.e(&x) * (I * pw.k)).norm() <= 1e-6);
        }
    }

    #[test]
    fn phase_periodicity() {
        let pw = wave();
        let x = [0.3, -0.2, 0.9];
        let shift = pw.d * (2.0 * std::f64::consts::PI / pw.k);
        let y = [x[0] + shift[0], x[1] + shift[1], x[2] + shift[2]];
        assert!((pw.e(&x) - pw.e(&y)).norm() < 1e-12);
        assert!((pw.h(&x) - pw.h(&y)).norm() < 1e-12);
    }

    #[test]
    fn closed_form_circulation_matches_quadrature() {
        let pw = wave();
        let a = [0.1, 0.2, 0.3];
        let b = [0.6, -0.1, 0.9];
        let rule = crate::quadrature::SegmentRule::gauss(12);
        let t = to_complex(&(Vector3::from(b) - Vector3::from(a)));
        let q: C64 = rule
            .points
            .iter()
            .map(|&(s, w)| {
                let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])];
                pw.e(&x).dot(&t) * w
            })
            .sum();
        assert!((q - pw.edge_circulation(&a, &b)).norm() < 1e-13);
    }

    #[test]
    fn plane_wave_has_zero_source() {
        let pw = wave();
        let j = manufactured_current(&pw, &Matrix3::identity(), &Matrix3::identity(), pw.k, &[0.4, 0.5, 0.6], 1e-5);
        assert!(j.norm() <= 1e-8 * 100.0, "{}", j.norm());
    }

    struct Quadratic;
    impl AnalyticField for Quadratic {
        fn value(&self, x: &Point) -> CVec3 {
            CVec3::new(C64::from(x[2] * x[2]), C64::from(0.0), C64::from(0.0))
        }
        fn curl(&self, x: &Point) -> CVec3 {
            CVec3::new(C64::from(0.0), C64::from(2.0 * x[2]), C64::from(0.0))
        }
    }

    #[test]
    fn quadratic_field_current() {
        // H = −(i/k)(0, 2z, 0), curl H = (2i/k, 0, 0), J = curl H + ik E
        let k = 1.5;
        let x = [0.2, 0.7, 0.4];
        let j = manufactured_current(&Quadratic, &Matrix3::identity(), &Matrix3::identity(), k, &x, 1e-5);
        let expect = CVec3::new(I * (2.0 / k) + I * k * x[2] * x[2], C64::from(0.0), C64::from(0.0));
        assert!((j - expect).norm() <= 1e-6);
    }

    struct Sum<'a>(&'a dyn AnalyticField, &'a dyn AnalyticField);
    impl AnalyticField for Sum<'_> {
        fn value(&self, x: &Point) -> CVec3 {
            self.0.value(x) + self.1.value(x)
        }
        fn curl(&self, x: &Point) -> CVec3 {
            self.0.curl(x) + self.1.curl(x)
        }
    }

    #[test]
    fn sources_are_linear() {
        let eps = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        let mu_inv = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0 / 3.0, 1.0));
        let pw = wave();
        let sum = Sum(&pw, &SmoothField);
        let x = [0.3, 0.3, 0.6];
        let a = manufactured_current(&pw, &eps, &mu_inv, 1.0, &x, 1e-5);
        let b = manufactured_current(&SmoothField, &eps, &mu_inv, 1.0, &x, 1e-5);
        let s = manufactured_current(&sum, &eps, &mu_inv, 1.0, &x, 1e-5);
        assert!((s - a - b).norm() <= 1e-12 * s.norm().max(1.0));
    }

    #[test]
    fn smooth_field_curl_matches_finite_differences() {
        let x = [0.3, 0.8, 0.45];
        let fd = fd_curl(|y| SmoothField.value(y), &x, 1e-5);
        assert!((fd - SmoothField.curl(&x)).norm() < 1e-8);
    }

    #[test]
    fn medium_plane_wave_solves_maxwell() {
        let w = MediumPlaneWave::new(
            1.2,
            2.0,
            0.5,
            Vector3::new(0.0, 1.0, 0.0),
            CVec3::new(C64::from(1.0), C64::from(0.0), C64::from(0.0)),
        )
        .unwrap();
        let x = [0.1, 0.2, 0.3];
        let curl_e = fd_curl(|y| w.e(y), &x, 1e-5);
        let curl_h = fd_curl(|y| w.h(y), &x, 1e-5);
        assert!((curl_e - w.h(&x) * (I * 1.2 * 0.5)).norm() < 1e-8);
        assert!((curl_h + w.e(&x) * (I * 1.2 * 2.0)).norm() < 1e-8);
    }
}
