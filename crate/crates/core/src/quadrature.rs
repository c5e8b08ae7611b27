//! Gauss rules on segments and tetrahedra.

use gauss_quad::GaussLegendre;

/// Points as parameters in [0, 1] with weights summing to 1.
#[derive(Clone, Debug)]
pub struct SegmentRule {
    pub points: Vec<(f64, f64)>,
}

impl SegmentRule {
    pub fn gauss(n: usize) -> Self {
        let rule = GaussLegendre::new(n.max(1).try_into().expect("nonzero"));
        let points = rule
            .iter()
            .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect();
        Self { points }
    }
}

/// Barycentric points with weights summing to 1 (multiply by the volume).
#[derive(Clone, Debug)]
pub struct TetRule {
    pub points: Vec<([f64; 4], f64)>,
}

impl TetRule {
    /// Collapsed (Duffy) tensor-product rule with `n` Gauss points per axis,
    /// exact for polynomials of degree ≤ 2n − 3.
    pub fn collapsed(n: usize) -> Self {
        let g = SegmentRule::gauss(n);
        let mut points = Vec::with_capacity(n * n * n);
        for &(u, wu) in &g.points {
            for &(v, wv) in &g.points {
                for &(w, ww) in &g.points {
                    let x = u;
                    let y = v * (1.0 - u);
                    let z = w * (1.0 - u) * (1.0 - v);
                    let jac = (1.0 - u) * (1.0 - u) * (1.0 - v);
                    // reference tet volume 1/6
                    let weight = 6.0 * wu * wv * ww * jac;
                    points.push(([1.0 - x - y - z, x, y, z], weight));
                }
            }
        }
        Self { points }
    }
}
