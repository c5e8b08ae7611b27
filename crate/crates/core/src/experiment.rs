//! Experiment drivers: run a configured pipeline and write CSV reports.
//!
//! CSV schemas (version 1, first row is the header):
//!
//! | file | columns |
//! |---|---|
//! | `verify.csv` | `divisions,rel_error,ratio` |
//! | `resonances.csv` | `index,k` |
//! | `localize.csv` | `ell,energy_M,energy_D,ratio,solved_energy_M,solved_energy_D` |
//! | `runge.csv` | `alpha,residual,f_norm,selected` |
//! | `runge-localize.csv` | `ell,energy_M,energy_D,ratio` |
//! | `<kind>_summary.csv` | `key,value` |
//!
//! Every run also writes `<kind>_checks.csv` (`check,passed,detail`).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use nalgebra::{Matrix3, Vector3};

use crate::config::{ExperimentConfig, ExperimentKind, VerifyCase};
use crate::error::{Error, Result};
use crate::fem::{CVec3, FieldPair};
use crate::localization::run_localization;
use crate::measurement::Problem;
use crate::mesh::{build_box_mesh, Mesh, RegionSpec};
use crate::oracles::{manufactured_sources, AnalyticField, MediumPlaneWave, SmoothField};
use crate::runge::{local_solution, runge_implies_localization, runge_sweep};
use crate::solver::find_resonances;
use crate::vtk;

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const VERIFY_HEADER: [&str; 3] = ["divisions", "rel_error", "ratio"];
pub const RESONANCES_HEADER: [&str; 2] = ["index", "k"];
pub const LOCALIZE_HEADER: [&str; 6] = ["ell", "energy_M", "energy_D", "ratio", "solved_energy_M", "solved_energy_D"];
pub const RUNGE_HEADER: [&str; 4] = ["alpha", "residual", "f_norm", "selected"];
pub const RUNGE_LOCALIZE_HEADER: [&str; 4] = ["ell", "energy_M", "energy_D", "ratio"];

/// Successive error ratio accepted by the refinement study.
const MAX_REFINEMENT_RATIO: f64 = 0.6;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub checks: Vec<Check>,
    pub summary: Vec<(String, String)>,
}

impl Report {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        if passed {
            info!("check {name}: ok ({detail})");
        } else {
            warn!("check {name}: FAILED ({detail})");
        }
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// `Err(CheckFailed)` naming every failed check.
    pub fn ensure_passed(&self) -> Result<()> {
        let failed: Vec<&str> = self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Error::CheckFailed(failed.join(", ")))
        }
    }
}

/// Shortest round-trip text; exponent form outside a readable range.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

struct Csv {
    path: PathBuf,
    writer: csv::Writer<std::fs::File>,
}

impl Csv {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        writer.write_record(header).map_err(|e| csv_error(&path, e))?;
        Ok(Self { path, writer })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| csv_error(&self.path, e))
    }

    fn finish(mut self, report: &mut Report) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        report.files.push(self.path);
        Ok(())
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn build_mesh(cfg: &ExperimentConfig, divisions: [usize; 3]) -> Result<Arc<Mesh>> {
    Ok(Arc::new(build_box_mesh(cfg.mesh, divisions)?))
}

fn whole_boundary(cfg: &ExperimentConfig) -> RegionSpec {
    RegionSpec::boundary_patch(cfg.mesh.min, cfg.mesh.max)
}

fn direction(cfg: &ExperimentConfig) -> Vector3<f64> {
    let d = Vector3::from(cfg.direction);
    d / d.norm()
}

fn polarization(cfg: &ExperimentConfig) -> CVec3 {
    CVec3::from(cfg.polarization)
}

/// `(ε, μ)` when the configured medium is one isotropic constant.
fn homogeneous_medium(cfg: &ExperimentConfig) -> Option<(f64, f64)> {
    let scalar = |m: &Matrix3<f64>| {
        let s = m[(0, 0)];
        (m - Matrix3::identity() * s).norm() == 0.0
    };
    let (e, m) = (&cfg.background_eps, &cfg.background_mu);
    let uniform = cfg.materials.iter().all(|r| r.eps == *e && r.mu == *m);
    (uniform && scalar(e) && scalar(m)).then(|| (e[(0, 0)], m[(0, 0)]))
}

fn region_tags(n_tets: usize, regions: &[(&[usize], f64)]) -> Vec<f64> {
    let mut tags = vec![0.0; n_tets];
    for (tets, tag) in regions {
        for &t in *tets {
            tags[t] = *tag;
        }
    }
    tags
}

/// Runs the configured experiment, writing reports into `out`. Failed
/// internal checks are recorded in the report, not returned as errors.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    cfg.validate().map_err(Error::Config)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut report = Report::default();
    report.note("kind", cfg.kind);
    report.note("schema_version", CSV_SCHEMA_VERSION);
    report.note("k", fmt_f64(cfg.k));
    match cfg.kind {
        ExperimentKind::Verify => verify(cfg, out, &mut report)?,
        ExperimentKind::Resonances => resonances(cfg, out, &mut report)?,
        ExperimentKind::Localize => localize(cfg, out, &mut report)?,
        ExperimentKind::Runge => runge(cfg, out, &mut report)?,
        ExperimentKind::RungeLocalize => runge_localize(cfg, out, &mut report)?,
    }

    let stem = cfg.kind.as_str();
    let mut summary = Csv::create(out.join(format!("{stem}_summary.csv")), &["key", "value"])?;
    for (k, v) in report.summary.clone() {
        summary.row([k, v])?;
    }
    summary.finish(&mut report)?;
    let mut checks = Csv::create(out.join(format!("{stem}_checks.csv")), &["check", "passed", "detail"])?;
    for c in report.checks.clone() {
        checks.row([c.name, c.passed.to_string(), c.detail])?;
    }
    checks.finish(&mut report)?;
    Ok(report)
}

fn verify(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let materials = cfg.materials();
    let mut csv = Csv::create(out.join("verify.csv"), &VERIFY_HEADER)?;
    let mut previous: Option<f64> = None;
    let mut last: Option<(Problem, FieldPair)> = None;
    report.note("case", cfg.verify_case.as_str());
    for &n in &cfg.verify_divisions {
        let mesh = build_mesh(cfg, [n; 3])?;
        let p = Problem::new(mesh, &materials, cfg.k, &whole_boundary(cfg), cfg.solver)?;
        let (fields, err, norm) = match cfg.verify_case {
            VerifyCase::PlaneWave => {
                let (eps, mu) = homogeneous_medium(cfg).ok_or_else(|| {
                    Error::InvalidArgument("plane-wave verification needs one isotropic constant medium".into())
                })?;
                let w = MediumPlaneWave::new(cfg.k, eps, mu, direction(cfg), polarization(cfg))?;
                let full = p.system().interpolate(|x| w.e(x));
                let f = p.system().dofmap.restrict_to_control(&full);
                let fields = p.solve(&f)?;
                let (err, norm) = p.system().l2_error(&fields.e, |x| w.e(x));
                (fields, err, norm)
            }
            VerifyCase::Manufactured => {
                let src = manufactured_sources(p.system(), &SmoothField);
                let fields = p.solver.solve(&src.f, Some(&src.j), Some(&src.k))?;
                let (err, norm) = p.system().l2_error(&fields.e, |x| SmoothField.value(x));
                (fields, err, norm)
            }
        };
        let rel = err / norm;
        let ratio = previous.map(|prev| rel / prev);
        info!("verify divisions {n}: relative L2 error {rel:e}");
        csv.row([n.to_string(), fmt_f64(rel), ratio.map(fmt_f64).unwrap_or_default()])?;
        if let Some(r) = ratio {
            report.check(
                &format!("refinement_ratio_{n}"),
                r <= MAX_REFINEMENT_RATIO,
                format!("ratio {} (limit {MAX_REFINEMENT_RATIO})", fmt_f64(r)),
            );
        }
        previous = Some(rel);
        last = Some((p, fields));
    }
    csv.finish(report)?;
    if let (true, Some((p, fields))) = (cfg.export_vtk, last) {
        let path = out.join("verify.vtk");
        vtk::write(&path, p.system(), &fields, "emloc verify", &[])?;
        report.files.push(path);
    }
    Ok(())
}

fn resonances(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let mesh = build_mesh(cfg, cfg.divisions)?;
    let interior = mesh.interior_vertices().len();
    let spectrum = find_resonances(mesh, &cfg.materials(), cfg.k_max)?;
    let mut csv = Csv::create(out.join("resonances.csv"), &RESONANCES_HEADER)?;
    for (i, k) in spectrum.resonances.iter().enumerate() {
        csv.row([(i + 1).to_string(), fmt_f64(*k)])?;
    }
    csv.finish(report)?;
    report.note("k_max", fmt_f64(cfg.k_max));
    report.note("count", spectrum.resonances.len());
    report.note("kernel_dim", spectrum.kernel_dim);
    report.check(
        "gradient_kernel",
        spectrum.kernel_dim == interior,
        format!("{} discarded eigenvalues, {interior} interior vertices", spectrum.kernel_dim),
    );
    if let Some(nearest) = spectrum.resonances.iter().map(|r| (r - cfg.k).abs()).reduce(f64::min) {
        report.note("margin_to_k", fmt_f64(nearest / cfg.k));
    }
    Ok(())
}

fn localize(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let mesh = build_mesh(cfg, cfg.divisions)?;
    let p = Problem::new(mesh, &cfg.materials(), cfg.k, &cfg.gamma_spec(), cfg.solver)?;
    let m = p.mesh().select_region(&ExperimentConfig::volume_spec(cfg.region_m))?;
    let d = p.mesh().select_region(&ExperimentConfig::volume_spec(cfg.region_d))?;
    let r = run_localization(&p, &m, &d, cfg.length, cfg.delta)?;

    let mut csv = Csv::create(out.join("localize.csv"), &LOCALIZE_HEADER)?;
    let (mut d_law, mut m_law, mut routes) = (0.0f64, 0.0f64, 0.0f64);
    for t in &r.terms {
        let l2 = (t.ell * t.ell) as f64;
        let ratio = t.energy_m / t.energy_d;
        csv.row([
            t.ell.to_string(),
            fmt_f64(t.energy_m),
            fmt_f64(t.energy_d),
            fmt_f64(ratio),
            fmt_f64(t.solved_energy_m),
            fmt_f64(t.solved_energy_d),
        ])?;
        if !r.degenerate {
            d_law = d_law.max((t.energy_d * l2 - 1.0).abs());
            m_law = m_law.max((t.energy_m * l2 / r.lambda - 1.0).abs());
        }
        // Solve roundoff scales with the whole field, so the small D energy is
        // compared against the cross term sqrt(E_M E_D).
        let cross = (t.energy_m * t.energy_d).sqrt();
        routes = routes
            .max((t.solved_energy_m - t.energy_m).abs() / t.energy_m.max(cross).max(f64::MIN_POSITIVE))
            .max((t.solved_energy_d - t.energy_d).abs() / t.energy_d.max(cross).max(f64::MIN_POSITIVE));
    }
    csv.finish(report)?;

    report.note("n_control", p.n_control());
    report.note("tets_M", m.len());
    report.note("tets_D", d.len());
    report.note("lambda", fmt_f64(r.lambda));
    report.note("lambda_regularized", fmt_f64(r.lambda_regularized));
    report.note("delta", fmt_f64(r.delta));
    report.note("degenerate", r.degenerate);
    if !r.degenerate {
        report.check("shielded_energy_law", d_law <= 1e-10, format!("max relative deviation {d_law:e}"));
        report.check("target_energy_law", m_law <= 1e-8, format!("max relative deviation {m_law:e}"));
    }
    report.check("solve_vs_matrix_energies", routes <= 1e-8, format!("max relative difference {routes:e}"));

    if cfg.export_vtk {
        if let Some(first) = r.terms.first() {
            let fields = p.solve(&first.f)?;
            let tags = region_tags(p.mesh().n_tets(), &[(&m, 1.0), (&d, 2.0)]);
            let path = out.join("localize.vtk");
            vtk::write(&path, p.system(), &fields, "emloc localize ell=1", &[("region", &tags)])?;
            report.files.push(path);
        }
    }
    Ok(())
}

fn non_increasing(values: impl Iterator<Item = f64>) -> bool {
    let v: Vec<f64> = values.collect();
    v.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0))
}

fn runge(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let mesh = build_mesh(cfg, cfg.divisions)?;
    let p = Problem::new(mesh, &cfg.materials(), cfg.k, &cfg.gamma_spec(), cfg.solver)?;
    let o = p.mesh().select_region(&ExperimentConfig::volume_spec(cfg.region_o))?;
    let target = local_solution(&p, &o, direction(cfg), polarization(cfg))?;
    let t = p.observe_region(&target);
    let op = p.measurement_matrix(&o)?;
    let sweep = runge_sweep(&op, &t, &cfg.alphas())?;

    let mut csv = Csv::create(out.join("runge.csv"), &RUNGE_HEADER)?;
    for (i, fit) in sweep.fits.iter().enumerate() {
        csv.row([
            fmt_f64(fit.alpha),
            fmt_f64(fit.residual),
            fmt_f64(fit.f_norm),
            u8::from(i == sweep.selected).to_string(),
        ])?;
    }
    csv.finish(report)?;

    let best = sweep.best();
    let last = sweep.fits.last().expect("nonempty sweep");
    report.note("tets_O", o.len());
    report.note("selected_alpha", fmt_f64(best.alpha));
    report.note("selected_residual", fmt_f64(best.residual));
    report.note("final_residual", fmt_f64(last.residual));
    report.check(
        "residual_monotone",
        non_increasing(sweep.fits.iter().map(|f| f.residual)),
        "residual non-increasing as alpha decreases".into(),
    );
    report.check(
        "norm_monotone",
        non_increasing(sweep.fits.iter().rev().map(|f| f.f_norm)),
        "boundary norm non-decreasing as alpha decreases".into(),
    );

    if cfg.export_vtk {
        let fields = p.solve(&best.f)?;
        let tags = region_tags(p.mesh().n_tets(), &[(&o, 1.0)]);
        let path = out.join("runge.vtk");
        vtk::write(&path, p.system(), &fields, "emloc runge selected fit", &[("region", &tags)])?;
        report.files.push(path);
    }
    Ok(())
}

fn runge_localize(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let mesh = build_mesh(cfg, cfg.divisions)?;
    let p = Problem::new(mesh, &cfg.materials(), cfg.k, &cfg.gamma_spec(), cfg.solver)?;
    let m = p.mesh().select_region(&ExperimentConfig::volume_spec(cfg.region_m))?;
    let d = p.mesh().select_region(&ExperimentConfig::volume_spec(cfg.region_d))?;
    let target = local_solution(&p, &m, direction(cfg), polarization(cfg))?;
    let r = runge_implies_localization(&p, &m, &d, &target, &cfg.alphas(), cfg.length)?;

    let mut csv = Csv::create(out.join("runge-localize.csv"), &RUNGE_LOCALIZE_HEADER)?;
    let mut d_law = 0.0f64;
    for t in &r.terms {
        csv.row([
            t.ell.to_string(),
            fmt_f64(t.energy_m),
            fmt_f64(t.energy_d),
            fmt_f64(t.energy_m / t.energy_d),
        ])?;
        d_law = d_law.max((t.energy_d * (t.ell * t.ell) as f64 - 1.0).abs());
    }
    csv.finish(report)?;

    let factor = r.eigen_lambda / r.ratio;
    report.note("selected_alpha", fmt_f64(r.sweep.best().alpha));
    report.note("selected_residual", fmt_f64(r.sweep.best().residual));
    report.note("runge_ratio", fmt_f64(r.ratio));
    report.note("eigen_lambda", fmt_f64(r.eigen_lambda));
    report.note("eigen_over_runge", fmt_f64(factor));
    report.note("within_factor_10", (0.1..=10.0).contains(&factor));
    if !(0.1..=10.0).contains(&factor) {
        warn!(
            "Runge ratio {} differs from the eigen ratio {} by more than a factor 10",
            fmt_f64(r.ratio),
            fmt_f64(r.eigen_lambda)
        );
    }
    if r.terms.is_empty() {
        report.note("degenerate", true);
    } else {
        report.check("shielded_energy_law", d_law <= 1e-10, format!("max relative deviation {d_law:e}"));
    }
    Ok(())
}
