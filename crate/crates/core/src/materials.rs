//! Piecewise-constant anisotropic material tensors.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mesh::{Aabb, Point};

/// Real symmetric 3×3 tensor field, constant over boxes. The first box
/// containing a point decides its value; points in no box get `default`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialField {
    pub regions: Vec<(Aabb, Matrix3<f64>)>,
    pub default: Matrix3<f64>,
}

/// Spectral bounds over every tensor of a field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipticityBounds {
    pub lower: f64,
    pub upper: f64,
}

impl MaterialField {
    pub fn uniform(m: Matrix3<f64>) -> Self {
        Self {
            regions: Vec::new(),
            default: m,
        }
    }

    pub fn vacuum() -> Self {
        Self::uniform(Matrix3::identity())
    }

    pub fn with_region(mut self, bounds: Aabb, m: Matrix3<f64>) -> Self {
        self.regions.push((bounds, m));
        self
    }

    pub fn eval(&self, p: &Point) -> Matrix3<f64> {
        self.regions
            .iter()
            .find(|(b, _)| b.contains(p))
            .map(|(_, m)| *m)
            .unwrap_or(self.default)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            regions: self.regions.iter().map(|(b, m)| (*b, m * s)).collect(),
            default: self.default * s,
        }
    }

    pub fn check_ellipticity(&self) -> Result<EllipticityBounds> {
        let mut lower = f64::INFINITY;
        let mut upper = f64::NEG_INFINITY;
        let named = std::iter::once(("default".to_string(), &self.default)).chain(
            self.regions
                .iter()
                .enumerate()
                .map(|(i, (b, m))| (format!("region {i} {b}"), m)),
        );
        for (name, m) in named {
            let (lo, hi) = spectral_bounds(m).map_err(|detail| Error::EllipticityViolated {
                region: name.clone(),
                detail,
            })?;
            lower = lower.min(lo);
            upper = upper.max(hi);
        }
        Ok(EllipticityBounds { lower, upper })
    }
}

fn spectral_bounds(m: &Matrix3<f64>) -> std::result::Result<(f64, f64), String> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err("non-finite entry".into());
    }
    let asym = (m - m.transpose()).norm();
    if asym > 1e-14 * m.norm() {
        return Err(format!("not symmetric (‖A − Aᵀ‖ = {asym:e})"));
    }
    let eig = SymmetricEigen::new(*m).eigenvalues;
    let lo = eig.min();
    let hi = eig.max();
    if lo <= 0.0 {
        return Err(format!("not positive definite (smallest eigenvalue {lo})"));
    }
    Ok((lo, hi))
}

/// Permittivity and permeability.
#[derive(Clone, Debug, PartialEq)]
pub struct Materials {
    pub eps: MaterialField,
    pub mu: MaterialField,
}

impl Materials {
    pub fn vacuum() -> Self {
        Self {
            eps: MaterialField::vacuum(),
            mu: MaterialField::vacuum(),
        }
    }

    pub fn check(&self) -> Result<(EllipticityBounds, EllipticityBounds)> {
        let e = self.eps.check_ellipticity().map_err(|err| prefix(err, "ε"))?;
        let m = self.mu.check_ellipticity().map_err(|err| prefix(err, "μ"))?;
        Ok((e, m))
    }
}

fn prefix(err: Error, what: &str) -> Error {
    match err {
        Error::EllipticityViolated { region, detail } => Error::EllipticityViolated {
            region: format!("{what} {region}"),
            detail,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_everywhere() {
        let f = MaterialField::vacuum();
        assert_eq!(f.eval(&[0.3, 0.1, 0.9]), Matrix3::identity());
    }

    #[test]
    fn first_match_wins() {
        let two = Matrix3::from_diagonal_element(2.0);
        let f = MaterialField::vacuum()
            .with_region(Aabb::new([0.0; 3], [0.5; 3]), two)
            .with_region(Aabb::new([0.0; 3], [1.0; 3]), Matrix3::from_diagonal_element(3.0));
        assert_eq!(f.eval(&[0.25; 3]), two);
        assert_eq!(f.eval(&[0.75; 3]), Matrix3::from_diagonal_element(3.0));
        assert_eq!(f.eval(&[1.5; 3]), Matrix3::identity());
    }

    #[test]
    fn bounds_identity_and_diagonal() {
        let b = MaterialField::vacuum().check_ellipticity().unwrap();
        assert_eq!((b.lower, b.upper), (1.0, 1.0));
        let d = MaterialField::uniform(Matrix3::from_diagonal(&Vector3::new(2.0, 3.0, 4.0)));
        let b = d.check_ellipticity().unwrap();
        assert!((b.lower - 2.0).abs() < 1e-14 && (b.upper - 4.0).abs() < 1e-14);
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        let f = MaterialField::vacuum().with_region(
            Aabb::unit(),
            Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0)),
        );
        match f.check_ellipticity() {
            Err(Error::EllipticityViolated { region, .. }) => assert!(region.contains("region 0")),
            other => panic!("expected ellipticity error, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 0.1;
        assert!(MaterialField::uniform(m).check_ellipticity().is_err());
    }

    #[test]
    fn quadratic_form_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Matrix3::new(3.0, 0.5, 0.1, 0.5, 2.0, -0.3, 0.1, -0.3, 1.5);
        let f = MaterialField::uniform(Matrix3::from_diagonal_element(1.2))
            .with_region(Aabb::new([0.0; 3], [0.5, 1.0, 1.0]), a);
        let b = f.check_ellipticity().unwrap();
        for _ in 0..100 {
            let x = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let xi = Vector3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            )
            .normalize();
            let q = xi.dot(&(f.eval(&x) * xi));
            assert!(q >= b.lower - 1e-12 && q <= b.upper + 1e-12);
        }
    }
}
