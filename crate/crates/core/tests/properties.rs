use std::sync::{Arc, OnceLock};

use emloc::config::{parse_config, ExperimentConfig, ExperimentKind, MaterialRegion, VerifyCase};
use emloc::fem::{assemble, gradient_dofs, local_matrices, spmv, DofMap, CVec3, C64};
use emloc::localization::{default_shift, localized_sequence, max_ratio};
use emloc::materials::Materials;
use emloc::measurement::{MeasurementOperator, Problem};
use emloc::mesh::{build_box_mesh, signed_volume, Aabb, RegionSpec};
use emloc::oracles::{fd_curl, PlaneWave};
use emloc::runge::runge_fit;
use emloc::solver::SolverOptions;
use faer::Mat;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn complex_matrix(rows: usize, cols: usize, v: &[f64]) -> Mat<C64> {
    Mat::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        C64::new(v[k], v[k + 1])
    })
}

fn gram(m: &Mat<C64>) -> Mat<C64> {
    m.adjoint() * m
}

fn dist_up_to_phase(a: &[C64], b: &[C64]) -> f64 {
    let p: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let phase = if p.norm() > 0.0 { p / p.norm() } else { C64::new(1.0, 0.0) };
    a.iter().zip(b).map(|(x, y)| (x * phase - y).norm_sqr()).sum::<f64>().sqrt()
}

fn shared_problem() -> &'static Problem {
    static P: OnceLock<Problem> = OnceLock::new();
    P.get_or_init(|| {
        let mesh = Arc::new(build_box_mesh(Aabb::unit(), [2, 2, 2]).unwrap());
        let gamma = RegionSpec::boundary_patch([0.0; 3], [1.0, 1.0, 0.0]);
        Problem::new(mesh, &Materials::vacuum(), 1.0, &gamma, SolverOptions::default()).unwrap()
    })
}

fn unit_vector() -> impl Strategy<Value = Vector3<f64>> {
    (0.0..std::f64::consts::PI, 0.0..std::f64::consts::TAU)
        .prop_map(|(t, p)| Vector3::new(t.sin() * p.cos(), t.sin() * p.sin(), t.cos()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mesh_counts_and_topology(a in 1usize..5, b in 1usize..5, c in 1usize..5, sx in 0.2f64..3.0, sy in 0.2f64..3.0) {
        let bounds = Aabb::new([-1.0, 0.5, 0.0], [-1.0 + sx, 0.5 + sy, 1.0]);
        let mesh = build_box_mesh(bounds, [a, b, c]).unwrap();
        prop_assert_eq!(mesh.n_vertices(), (a + 1) * (b + 1) * (c + 1));
        prop_assert_eq!(mesh.n_tets(), 6 * a * b * c);
        prop_assert_eq!(mesh.euler_characteristic(), 1);
        prop_assert_eq!(mesh.boundary_faces.len(), 4 * (a * b + b * c + a * c));
        let total: f64 = mesh.tets.iter().map(|t| {
            let v = signed_volume(&mesh.vertices, t);
            assert!(v > 0.0);
            v
        }).sum();
        prop_assert!((total - bounds.volume()).abs() <= 1e-12 * bounds.volume());
        for e in &mesh.edges {
            prop_assert!(e[0] < e[1]);
        }
    }

    #[test]
    fn local_matrices_symmetric_and_gradient_free(
        v in proptest::collection::vec(-1.0f64..1.0, 12),
        d in proptest::collection::vec(0.5f64..3.0, 6),
    ) {
        let verts = [
            [0.0, 0.0, 0.0],
            [1.0 + 0.2 * v[0], 0.2 * v[1], 0.2 * v[2]],
            [0.2 * v[3], 1.0 + 0.2 * v[4], 0.2 * v[5]],
            [0.2 * v[6], 0.2 * v[7], 1.0 + 0.2 * v[8]],
        ];
        let eps = Matrix3::from_diagonal(&Vector3::new(d[0], d[1], d[2]));
        let mu = Matrix3::from_diagonal(&Vector3::new(d[3], d[4], d[5]));
        let lm = local_matrices(&verts, &eps, &mu).unwrap();
        prop_assert!((lm.curl_curl - lm.curl_curl.transpose()).norm() <= 1e-12 * lm.curl_curl.norm());
        prop_assert!((lm.mass - lm.mass.transpose()).norm() <= 1e-12 * lm.mass.norm());
        prop_assert!(lm.mass.symmetric_eigenvalues().min() > 0.0);
        // Local gradient of a vertex hat function: edge (a, b) gets +1 at b, −1 at a.
        const EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        for p in 0..4 {
            let g = nalgebra::Vector6::from_fn(|l, _| {
                let (a, b) = EDGES[l];
                (b == p) as i32 as f64 - (a == p) as i32 as f64
            });
            prop_assert!((lm.curl_curl * g).norm() <= 1e-10 * lm.curl_curl.norm());
        }
    }

    #[test]
    fn global_gradients_in_curl_kernel(n in 1usize..4, vertex_pick in 0usize..1000) {
        let mesh = Arc::new(build_box_mesh(Aabb::unit(), [n, n, n]).unwrap());
        let sys = assemble(mesh.clone(), &Materials::vacuum(), 1.0, DofMap::cavity(&mesh)).unwrap();
        let v = vertex_pick % mesh.n_vertices();
        let g: Vec<C64> = gradient_dofs(&mesh, v).into_iter().map(C64::from).collect();
        let sg = spmv(&sys.curl_curl, &g);
        prop_assert!(sg.iter().all(|x| x.norm() <= 1e-10));
    }

    #[test]
    fn max_ratio_scale_invariant(v in proptest::collection::vec(-1.0f64..1.0, 2 * 2 * 6 * 6), alpha in 1e-3f64..1e3) {
        let n = 6;
        let g_m = gram(&complex_matrix(n, n, &v[..2 * n * n]));
        let g_d = gram(&complex_matrix(n, n, &v[2 * n * n..]));
        let delta = default_shift(&g_d);
        let (l1, f1) = max_ratio(&g_m, &g_d, delta).unwrap();
        let scale = faer::Scale(C64::from(alpha));
        let (l2, f2) = max_ratio(&(&g_m * scale), &(&g_d * scale), alpha * delta).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-10 * l1.abs().max(1.0), "{} vs {}", l1, l2);
        prop_assert!(dist_up_to_phase(&f1, &f2) <= 1e-8);
    }

    #[test]
    fn max_ratio_decreases_with_shift(v in proptest::collection::vec(-1.0f64..1.0, 2 * 2 * 5 * 5), d1 in 1e-8f64..1.0, factor in 1.01f64..100.0) {
        let n = 5;
        let g_m = gram(&complex_matrix(n, n, &v[..2 * n * n]));
        let g_d = gram(&complex_matrix(n, n, &v[2 * n * n..]));
        let (a, _) = max_ratio(&g_m, &g_d, d1).unwrap();
        let (b, _) = max_ratio(&g_m, &g_d, d1 * factor).unwrap();
        prop_assert!(a >= b * (1.0 - 1e-10), "{} < {}", a, b);
    }

    #[test]
    fn sequence_energy_laws(v in proptest::collection::vec(-1.0f64..1.0, 2 * 7 * 4 + 8), len in 1usize..12) {
        let op = MeasurementOperator { tets: vec![0], k: 1.0, matrix: complex_matrix(7, 4, &v[..56]) };
        let f: Vec<C64> = (0..4).map(|i| C64::new(v[56 + 2 * i], v[57 + 2 * i])).collect();
        prop_assume!(op.energy(&f) > 1e-6);
        let (seq, degenerate) = localized_sequence(&f, &op, len).unwrap();
        prop_assert!(!degenerate);
        prop_assert_eq!(seq.len(), len);
        for (i, g) in seq.iter().enumerate() {
            let l = (i + 1) as f64;
            prop_assert!((op.energy(g) * l * l - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn tikhonov_normal_equations(v in proptest::collection::vec(-1.0f64..1.0, 2 * 9 * 5 + 18), alpha in 1e-6f64..1.0) {
        let op = MeasurementOperator { tets: vec![0], k: 1.0, matrix: complex_matrix(9, 5, &v[..90]) };
        let t: Vec<C64> = (0..9).map(|i| C64::new(v[90 + 2 * i], v[91 + 2 * i])).collect();
        let fit = runge_fit(&op, &t, alpha).unwrap();
        let r: Vec<C64> = op.apply(&fit.f).iter().zip(&t).map(|(a, b)| a - b).collect();
        let grad: Vec<C64> = op.apply_adjoint(&r).iter().zip(&fit.f).map(|(g, f)| g + f * alpha).collect();
        let gn = grad.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let mt = op.apply_adjoint(&t).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let g_norm = op.gram().norm_l2();
        prop_assert!(gn <= 1e-10 * (g_norm * fit.f_norm + mt));
    }

    #[test]
    fn plane_wave_solves_maxwell(d in unit_vector(), k in 0.2f64..5.0, x in proptest::array::uniform3(-1.0f64..1.0), re in -1.0f64..1.0, im in -1.0f64..1.0) {
        let helper = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let p1 = d.cross(&helper).normalize();
        let p2 = d.cross(&p1);
        let p = p1.map(|c| C64::new(c, 0.0)) * C64::new(1.0, 0.0) + p2.map(|c| C64::new(c, 0.0)) * C64::new(re, im);
        let w = PlaneWave::new(k, d, p).unwrap();
        let curl_e = fd_curl(|y| w.e(y), &x, 1e-5);
        let curl_h = fd_curl(|y| w.h(y), &x, 1e-5);
        let ik = C64::new(0.0, k);
        let scale = 1.0 + p.norm() * k;
        prop_assert!((curl_e - w.h(&x) * ik).norm() <= 1e-6 * scale);
        prop_assert!((curl_h + w.e(&x) * ik).norm() <= 1e-6 * scale);
        let shifted = [x[0] + std::f64::consts::TAU / k * d.x, x[1] + std::f64::consts::TAU / k * d.y, x[2] + std::f64::consts::TAU / k * d.z];
        prop_assert!((w.e(&shifted) - w.e(&x)).norm() <= 1e-12 * scale * (1.0 + 1.0 / k));
    }

    #[test]
    fn solve_is_linear(v in proptest::collection::vec(-1.0f64..1.0, 2 * 64), s in -3.0f64..3.0) {
        let p = shared_problem();
        let n = p.n_control();
        let f: Vec<C64> = (0..n).map(|i| C64::new(v[2 * i % v.len()], v[(2 * i + 1) % v.len()])).collect();
        let g: Vec<C64> = f.iter().map(|x| x * s).collect();
        let a = p.solve(&f).unwrap();
        let b = p.solve(&g).unwrap();
        let norm = a.e.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
        let diff = a.e.iter().zip(&b.e).map(|(x, y)| (x * s - y).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-12 * norm * s.abs().max(1.0));
        for (ha, hb) in a.h.iter().zip(&b.h) {
            prop_assert!((ha * C64::from(s) - hb).norm() <= 1e-10 * (ha.norm() * s.abs()).max(1e-12));
        }
    }

    #[test]
    fn config_round_trip(
        k in 0.01f64..20.0,
        divs in proptest::array::uniform3(1usize..9),
        m_hi in 0.1f64..0.9,
        eps in 0.5f64..4.0,
        len in 1usize..20,
        steps in 2usize..15,
        kind_idx in 0usize..5,
        delta in proptest::option::of(0.0f64..1e-3),
        pol_im in -1.0f64..1.0,
    ) {
        let cfg = ExperimentConfig {
            kind: ExperimentKind::ALL[kind_idx],
            k,
            divisions: divs,
            region_m: Aabb::new([0.0; 3], [m_hi; 3]),
            materials: vec![MaterialRegion {
                name: "slab".into(),
                bounds: Aabb::new([0.0; 3], [1.0, m_hi, 1.0]),
                eps: Matrix3::from_diagonal(&Vector3::new(eps, 1.0, eps)),
                mu: Matrix3::identity() * 2.0,
            }],
            length: len,
            alpha_steps: steps,
            delta,
            polarization: [C64::new(1.0, 0.0), C64::new(0.0, pol_im), C64::new(0.0, 0.0)],
            verify_case: if kind_idx % 2 == 0 { VerifyCase::PlaneWave } else { VerifyCase::Manufactured },
            ..ExperimentConfig::default()
        };
        let text = cfg.to_toml();
        let parsed = parse_config(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parsed.to_toml(), text);
    }
}

#[test]
fn rotating_the_polarization_keeps_transversality() {
    let d = Vector3::new(0.0, 0.0, 1.0);
    let p = CVec3::new(C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0));
    assert!(PlaneWave::new(1.0, d, p).is_ok());
    let bad = CVec3::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.1, 0.0));
    assert!(PlaneWave::new(1.0, d, bad).is_err());
}
