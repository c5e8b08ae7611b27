//! Experiment configuration: a TOML document with fixed sections, validated
//! into [`ExperimentConfig`] with line-numbered errors.
//!
//! ```toml
//! k = 1.0                      # required
//! seed = 0
//!
//! [mesh]
//! min = [0.0, 0.0, 0.0]
//! max = [1.0, 1.0, 1.0]
//! divisions = [6, 6, 6]
//!
//! [regions]                    # boxes; gamma is flat on the boundary
//! gamma = { min = [0, 0, 0], max = [1, 1, 0] }
//!
//! [materials.lower]            # first matching box wins
//! min = [0.0, 0.0, 0.0]
//! max = [1.0, 0.5, 1.0]
//! eps = [2.0, 1.0, 1.0]        # 1 (scalar), 3 (diagonal) or 9 entries
//! mu = [1.0, 3.0, 1.0]
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nalgebra::Matrix3;
use toml_edit::{Array, DocumentMut, InlineTable, Item, Table, Value};

use crate::error::{Error, Result};
use crate::fem::C64;
use crate::materials::{MaterialField, Materials};
use crate::mesh::{Aabb, Point, RegionSpec};
use crate::solver::SolverOptions;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based source line; 0 when the error has no location.
    pub line: usize,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Verify,
    Resonances,
    Localize,
    Runge,
    RungeLocalize,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        Self::Verify,
        Self::Resonances,
        Self::Localize,
        Self::Runge,
        Self::RungeLocalize,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Verify => "verify",
            Self::Resonances => "resonances",
            Self::Localize => "localize",
            Self::Runge => "runge",
            Self::RungeLocalize => "runge-localize",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerifyCase {
    /// Vacuum plane wave with data on the whole boundary.
    PlaneWave,
    /// Smooth manufactured field in the configured materials.
    Manufactured,
}

impl VerifyCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::PlaneWave => "plane-wave",
            Self::Manufactured => "manufactured",
        }
    }
}

impl FromStr for VerifyCase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plane-wave" => Ok(Self::PlaneWave),
            "manufactured" => Ok(Self::Manufactured),
            _ => Err(format!("unknown verify case `{s}` (plane-wave, manufactured)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialRegion {
    pub name: String,
    pub bounds: Aabb,
    pub eps: Matrix3<f64>,
    pub mu: Matrix3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub k: f64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub mesh: Aabb,
    pub divisions: [usize; 3],
    pub gamma: Aabb,
    pub region_m: Aabb,
    pub region_d: Aabb,
    pub region_o: Aabb,
    pub background_eps: Matrix3<f64>,
    pub background_mu: Matrix3<f64>,
    pub materials: Vec<MaterialRegion>,
    pub solver: SolverOptions,
    pub export_vtk: bool,
    /// Sequence length for localized data.
    pub length: usize,
    /// Shift for the ratio maximization; `None` uses the default.
    pub delta: Option<f64>,
    pub alpha_max: f64,
    pub alpha_min: f64,
    pub alpha_steps: usize,
    /// Plane-wave direction and polarization for Runge targets.
    pub direction: [f64; 3],
    pub polarization: [C64; 3],
    pub verify_case: VerifyCase,
    pub verify_divisions: Vec<usize>,
    pub k_max: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Localize,
            k: 1.0,
            seed: 0,
            output: None,
            mesh: Aabb::unit(),
            divisions: [6, 6, 6],
            gamma: Aabb::new([0.0; 3], [1.0, 1.0, 0.0]),
            region_m: Aabb::new([0.0; 3], [0.5; 3]),
            region_d: Aabb::new([0.5; 3], [1.0; 3]),
            region_o: Aabb::new([0.25; 3], [0.75; 3]),
            background_eps: Matrix3::identity(),
            background_mu: Matrix3::identity(),
            materials: Vec::new(),
            solver: SolverOptions::default(),
            export_vtk: false,
            length: 10,
            delta: None,
            alpha_max: 1e-2,
            alpha_min: 1e-10,
            alpha_steps: 9,
            direction: [0.0, 0.0, 1.0],
            polarization: [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
            verify_case: VerifyCase::PlaneWave,
            verify_divisions: vec![2, 4, 8],
            k_max: 5.0,
        }
    }
}

/// Byte offset to 1-based line.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

struct Reader<'a> {
    text: &'a str,
    errors: Vec<ConfigError>,
}

impl Reader<'_> {
    fn line(&self, span: Option<std::ops::Range<usize>>) -> usize {
        span.map_or(0, |s| line_of(self.text, s.start))
    }

    fn err(&mut self, line: usize, msg: impl Into<String>) {
        self.errors.push(ConfigError::at(line, msg));
    }

    fn float(&mut self, name: &str, item: &Item, line: usize) -> Option<f64> {
        let v = item.as_float().or_else(|| item.as_integer().map(|i| i as f64));
        match v {
            Some(v) if v.is_finite() => Some(v),
            Some(_) => {
                self.err(line, format!("`{name}` must be finite"));
                None
            }
            None => {
                self.err(line, format!("`{name}` must be a number, found {}", item.type_name()));
                None
            }
        }
    }

    fn uint(&mut self, name: &str, item: &Item, line: usize) -> Option<usize> {
        match item.as_integer() {
            Some(v) if v >= 0 => Some(v as usize),
            _ => {
                self.err(line, format!("`{name}` must be a non-negative integer"));
                None
            }
        }
    }

    fn string(&mut self, name: &str, item: &Item, line: usize) -> Option<String> {
        match item.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                self.err(line, format!("`{name}` must be a string"));
                None
            }
        }
    }

    fn floats(&mut self, name: &str, item: &Item, line: usize) -> Option<Vec<f64>> {
        let Some(arr) = item.as_array() else {
            self.err(line, format!("`{name}` must be an array of numbers"));
            return None;
        };
        let mut out = Vec::with_capacity(arr.len());
        for v in arr.iter() {
            let x = v.as_float().or_else(|| v.as_integer().map(|i| i as f64));
            match x {
                Some(x) if x.is_finite() => out.push(x),
                Some(_) => {
                    self.err(line, format!("`{name}` entries must be finite"));
                    return None;
                }
                None => {
                    self.err(line, format!("`{name}` entries must be numbers"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn point(&mut self, name: &str, item: &Item, line: usize) -> Option<Point> {
        let v = self.floats(name, item, line)?;
        if v.len() != 3 {
            self.err(line, format!("`{name}` needs 3 entries, found {}", v.len()));
            return None;
        }
        Some([v[0], v[1], v[2]])
    }

    fn uints(&mut self, name: &str, item: &Item, line: usize) -> Option<Vec<usize>> {
        let Some(arr) = item.as_array() else {
            self.err(line, format!("`{name}` must be an array of integers"));
            return None;
        };
        let v: Option<Vec<usize>> = arr
            .iter()
            .map(|v| v.as_integer().filter(|&i| i >= 0).map(|i| i as usize))
            .collect();
        if v.is_none() {
            self.err(line, format!("`{name}` entries must be non-negative integers"));
        }
        v
    }

    fn tensor(&mut self, name: &str, item: &Item, line: usize) -> Option<Matrix3<f64>> {
        if item.as_array().is_none() {
            return self.float(name, item, line).map(|s| Matrix3::identity() * s);
        }
        let v = self.floats(name, item, line)?;
        match v.len() {
            1 => Some(Matrix3::identity() * v[0]),
            3 => Some(Matrix3::from_diagonal(&[v[0], v[1], v[2]].into())),
            9 => Some(Matrix3::from_row_slice(&v)),
            n => {
                self.err(line, format!("`{name}` needs 1, 3 or 9 entries, found {n}"));
                None
            }
        }
    }

    fn table<'t>(&mut self, name: &str, item: &'t Item, line: usize) -> Option<TableLike<'t>> {
        if let Some(t) = item.as_table() {
            return Some(TableLike::Table(t));
        }
        if let Some(t) = item.as_inline_table() {
            return Some(TableLike::Inline(t));
        }
        self.err(line, format!("`{name}` must be a table"));
        None
    }
}

#[derive(Clone, Copy)]
enum TableLike<'t> {
    Table(&'t Table),
    Inline(&'t InlineTable),
}

impl<'t> TableLike<'t> {
    /// Entries with their key spans, in document order.
    fn entries(&self) -> Vec<(String, Item, Option<std::ops::Range<usize>>)> {
        match self {
            TableLike::Table(t) => t
                .iter()
                .map(|(k, v)| {
                    let span = t.get_key_value(k).and_then(|(key, _)| key.span());
                    (k.to_string(), v.clone(), span)
                })
                .collect(),
            TableLike::Inline(t) => t
                .iter()
                .map(|(k, v)| {
                    let span = t.get_key_value(k).and_then(|(key, _)| key.span());
                    (k.to_string(), Item::Value(v.clone()), span)
                })
                .collect(),
        }
    }
}

const SECTIONS: [&str; 8] = [
    "mesh",
    "regions",
    "background",
    "materials",
    "solver",
    "localize",
    "runge",
    "verify",
];

impl ExperimentConfig {
    fn apply_root(&mut self, r: &mut Reader, root: TableLike) {
        for (key, item, span) in root.entries() {
            let line = r.line(span);
            match key.as_str() {
                "kind" => {
                    if let Some(s) = r.string("kind", &item, line) {
                        match s.parse() {
                            Ok(k) => self.kind = k,
                            Err(e) => r.err(line, e),
                        }
                    }
                }
                "k" => {
                    if let Some(v) = r.float("k", &item, line) {
                        self.k = v;
                    }
                }
                "seed" => {
                    if let Some(v) = r.uint("seed", &item, line) {
                        self.seed = v as u64;
                    }
                }
                "output" => {
                    if let Some(s) = r.string("output", &item, line) {
                        self.output = Some(PathBuf::from(s));
                    }
                }
                "resonances" => {
                    if let Some(t) = r.table("resonances", &item, line) {
                        self.apply_resonances(r, t);
                    }
                }
                section if SECTIONS.contains(&section) => {
                    if let Some(t) = r.table(section, &item, line) {
                        match section {
                            "mesh" => self.apply_mesh(r, t),
                            "regions" => self.apply_regions(r, t),
                            "background" => self.apply_background(r, t),
                            "materials" => self.apply_materials(r, t),
                            "solver" => self.apply_solver(r, t),
                            "localize" => self.apply_localize(r, t),
                            "runge" => self.apply_runge(r, t),
                            _ => self.apply_verify(r, t),
                        }
                    }
                }
                other => r.err(line, format!("unknown key `{other}`")),
            }
        }
    }

    fn apply_mesh(&mut self, r: &mut Reader, t: TableLike) {
        for (key, item, span) in t.entries() {
            let line = r.line(span);
            match key.as_str() {
                "min" => {
                    if let Some(p) = r.point("mesh.min", &item, line) {
                        self.mesh.min = p;
                    }
                }
                "max" => {
                    if let Some(p) = r.point("mesh.max", &item, line) {
                        self.mesh.max = p;
                    }
                }
                "divisions" => {
                    if let Some(v) = r.uints("mesh.divisions", &item, line) {
                        if v.len() == 3 {
                            self.divisions = [v[0], v[1], v[2]];
                        } else {
                            r.err(line, "`mesh.divisions` needs 3 entries");
                        }
                    }
                }
                other => r.err(line, format!("unknown key `mesh.{other}`")),
            }
        }
    }

    fn read_box(r: &mut Reader, name: &str, t: TableLike, target: &mut Aabb) {
        for (key, item, span) in t.entries() {
            let line = r.line(span);
            match key.as_str() {
                "min" => {
                    if let Some(p) = r.point(&format!("{name}.min"), &item, line) {
                        target.min = p;
                    }
                }
                "max" => {
                    if let Some(p) = r.point(&format!("{name}.max"), &item, line) {
                        target.max = p;
                    }
                }
                other => r.err(line, format!("unknown key `{name}.{other}`")),
            }
        }
    }

    fn apply_regions(&mut self, r: &mut Reader, t: TableLike) {
        for (key, item, span) in t.entries() {
            let line = r.line(span);
            let name = format!("regions.{key}");
            let target = match key.as_str() {
                "gamma" => &mut self.gamma,
                "M" => &mut self.region_m,
                "D" => &mut self.region_d,
                "O" => &mut self.region_o,
                _ => {
                    r.err(line, format!("unknown region `{key}` (gamma, M, D, O)"));
                    continue;
                }
            };
            if let Some(sub) = r.table(&name, &item, line) {
                Self::read_box(r, &name, sub, target);
            }
        }
    }

    fn apply_background(&mut self, r: &mut Reader, t: TableLike) {
        for (key, item, span) in t.entries() {
            let line = r.line(span);
            match key.as_str() {
                "eps" => {
                    if let Some(m) = r.tensor("background.eps", &item, line) {
                        self.background_eps = m;
                    }
                }
                "mu" => {
                    if let Some(m) = r.tensor("background.mu", &item, line) {
                        self.background_mu = m;
                    }
                }
                other => r.err(line, format!("unknown key `background.{other}`")),
            }
        }
    }

    fn apply_materials(&mut self, r: &mut Reader, t: TableLike) {
        for (name, item, span) in t.entries() {
            let line = r.line(span);
            let full = format!("materials.{name}");
            let Some(sub) = r.table(&full, &item, line) else { continue };
            let idx = match self.materials.iter().position(|m| m.name == name) {
                Some(i) => i,
                None => {
                    self.materials.push(MaterialRegion {
                        name: name.clone(),
                        bounds: self.mesh,
                        eps: Matrix3::identity(),
                        mu: Matrix3::identity(),
                    });
                    self.materials.len() - 1
                }
            };
            for (key, item, span) in sub.entries() {
                let line = r.line(span);
                let region = &mut self.materials[idx];
                match key.as_str() {
                    "min" => {
                        if let Some(p) = r.point(&format!("{full}.min"), &item, line) {
                            region.bounds.min = p;
                        }
                    }
                    "max" => {
                        if let Some(p) = r.point(&format!("{full}.max"), &item, line) {
                            region.bounds.max = p;
                        }
                    }
                    "eps" => {
                        if let Some(m) = r.tensor(&format!("{full}.eps"), &item, line) {
                            region.eps = m;
                        }
                    }
                    "mu" => {
                        if let Some(m) = r.tensor(&format!("{full}.mu"), &item, line) {
                            region.mu = m;
                        }
                    }
                    other => r.err(line, format!("unknown key `{full}.{other}`")),
                }
            }
        }
    }

    fn apply_solver(&mut self, r: &mut Reader, t: TableLike) {
        for (key, item, span) in t.entries() {
            let line = r.line(span);
            let name = format!("solver.{key}");
            match key.as_str() {
                "residual_tol" => {
                    if let Some(v) = r.float(&name, &item, line) {
                        self.solver.residual_tol = v;
                    }
                }
                "min_relative_sigma" => {
                    if let Some(v) = r.float(&name, &item, line) {
                        self.solver.min_relative_sigma = v;
                    }
                }
                "min_resonance_margin" => {
                    if let Some(v) = r.float(&name, &item, line) {
                        self.solver.min_resonance_margin = v;
                    }
                }
                "export_vtk" => match item.as_bool() {
                    Some(b) => self.export_vtk = b,
                    None => r.err(line, "`solver.export_vtk` must be a boolean"),
                },
                _ => r.err(line, format!("unknown key `{name}`")),
            }
        }
    }

    fn apply_localize(&mut self, r: &mut Reader, t: TableLike) {
        for (key, item, span) in t.entries() {
            let line = r.line(span);
            let name = format!("localize.{key}");
            match key.as_str() {
                "length" => {
                    if let Some(v) = r.uint(&name, &item, line) {
                        self.length = v;
                    }
                }
                "delta" => {
                    if let Some(v) = r.float(&name, &item, line) {
                        self.delta = Some(v);
                    }
                }
                _ => r.err(line, format!("unknown key `{name}`")),
            }
        }
    }

    fn apply_runge(&mut self, r: &mut Reader, t: TableLike) {
        let mut pol_re: Option<Point> = None;
        let mut pol_im: Option<Point> = None;
        for (key, item, span) in t.entries() {
            let line = r.line(span);
            let name = format!("runge.{key}");
            match key.as_str() {
                "alpha_max" => {
                    if let Some(v) = r.float(&name, &item, line) {
                        self.alpha_max = v;
                    }
                }
                "alpha_min" => {
                    if let Some(v) = r.float(&name, &item, line) {
                        self.alpha_min = v;
                    }
                }
                "alpha_steps" => {
                    if let Some(v) = r.uint(&name, &item, line) {
                        self.alpha_steps = v;
                    }
                }
                "direction" => {
                    if let Some(p) = r.point(&name, &item, line) {
                        self.direction = p;
                    }
                }
                "polarization" => pol_re = r.point(&name, &item, line),
                "polarization_im" => pol_im = r.point(&name, &item, line),
                _ => r.err(line, format!("unknown key `{name}`")),
            }
        }
        if pol_re.is_some() || pol_im.is_some() {
            let re = pol_re.unwrap_or_else(|| self.polarization.map(|c| c.re));
            let im = pol_im.unwrap_or_else(|| self.polarization.map(|c| c.im));
            self.polarization = [0, 1, 2].map(|a| C64::new(re[a], im[a]));
        }
    }

    fn apply_verify(&mut self, r: &mut Reader, t: TableLike) {
        for (key, item, span) in t.entries() {
            let line = r.line(span);
            let name = format!("verify.{key}");
            match key.as_str() {
                "case" => {
                    if let Some(s) = r.string(&name, &item, line) {
                        match s.parse() {
                            Ok(c) => self.verify_case = c,
                            Err(e) => r.err(line, e),
                        }
                    }
                }
                "divisions" => {
                    if let Some(v) = r.uints(&name, &item, line) {
                        self.verify_divisions = v;
                    }
                }
                _ => r.err(line, format!("unknown key `{name}`")),
            }
        }
    }

    fn apply_resonances(&mut self, r: &mut Reader, t: TableLike) {
        for (key, item, span) in t.entries() {
            let line = r.line(span);
            let name = format!("resonances.{key}");
            match key.as_str() {
                "k_max" => {
                    if let Some(v) = r.float(&name, &item, line) {
                        self.k_max = v;
                    }
                }
                _ => r.err(line, format!("unknown key `{name}`")),
            }
        }
    }

    /// Semantic checks on a fully populated configuration.
    pub fn validate(&self) -> std::result::Result<(), Vec<ConfigError>> {
        let mut errors = Vec::new();
        let mut bad = |m: String| errors.push(ConfigError::at(0, m));
        if !(self.k > 0.0 && self.k.is_finite()) {
            bad(format!("k must be positive, got {}", self.k));
        }
        if (0..3).any(|a| !(self.mesh.max[a] > self.mesh.min[a])) {
            bad(format!("mesh box {} must have positive extent", self.mesh));
        }
        if self.divisions.contains(&0) {
            bad("mesh.divisions must be positive".into());
        }
        let regions = [
            ("regions.gamma", self.gamma_spec()),
            ("regions.M", Self::volume_spec(self.region_m)),
            ("regions.D", Self::volume_spec(self.region_d)),
            ("regions.O", Self::volume_spec(self.region_o)),
        ];
        for (name, spec) in regions {
            if let Err(e) = spec.validate() {
                bad(format!("{name}: {e}"));
            }
        }
        if let Err(e) = self.materials().check() {
            bad(e.to_string());
        }
        let s = &self.solver;
        if !(s.residual_tol > 0.0) || !(s.min_relative_sigma >= 0.0) || !(s.min_resonance_margin >= 0.0) {
            bad("solver tolerances must be positive".into());
        }
        if self.length == 0 {
            bad("localize.length must be at least 1".into());
        }
        if let Some(d) = self.delta {
            if d < 0.0 {
                bad(format!("localize.delta must be ≥ 0, got {d}"));
            }
        }
        if !(self.alpha_min > 0.0) || self.alpha_steps == 0 || (self.alpha_steps > 1 && !(self.alpha_max > self.alpha_min)) {
            bad("runge needs alpha_max > alpha_min > 0 and alpha_steps ≥ 1".into());
        }
        let dn = self.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(dn > 0.0) {
            bad("runge.direction must be nonzero".into());
        }
        if self.polarization.iter().all(|c| c.norm() == 0.0) {
            bad("runge.polarization must be nonzero".into());
        }
        if self.verify_divisions.len() < 2
            || self.verify_divisions.contains(&0)
            || self.verify_divisions.windows(2).any(|w| w[1] <= w[0])
        {
            bad("verify.divisions needs at least two increasing positive entries".into());
        }
        if !(self.k_max > 0.0) {
            bad(format!("resonances.k_max must be positive, got {}", self.k_max));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    pub fn materials(&self) -> Materials {
        let mut eps = MaterialField::uniform(self.background_eps);
        let mut mu = MaterialField::uniform(self.background_mu);
        for m in &self.materials {
            eps = eps.with_region(m.bounds, m.eps);
            mu = mu.with_region(m.bounds, m.mu);
        }
        Materials { eps, mu }
    }

    pub fn gamma_spec(&self) -> RegionSpec {
RegionSpec::boundary_patch(self.gamma.min, self.gamma.max)
    }

    pub fn volume_spec(bounds: Aabb) -> RegionSpec {
RegionSpec::volume(bounds.min, bounds.max)
    }

    /// Regularization weights from `alpha_max` down to `alpha_min`.
    pub fn alphas(&self) -> Vec<f64> {
        if self.alpha_steps == 1 {
            return vec![self.alpha_max];
        }
        let r = (self.alpha_min / self.alpha_max).ln() / (self.alpha_steps - 1) as f64;
        (0..self.alpha_steps).map(|i| self.alpha_max * (r * i as f64).exp()).collect()
    }

    /// Applies a `key=value` override, where `key` is a dotted path such as
    /// `mesh.divisions` or `regions.M.max` and `value` is a TOML value.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let fail = |m: String| Error::Config(vec![ConfigError::at(0, format!("--set {assignment}: {m}"))]);
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| fail("expected key=value".into()))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(fail("empty key segment".into()));
        }
        let mut parsed: Value = value
            .trim()
            .parse()
            .or_else(|_| format!("\"{}\"", value.trim()).parse())
            .map_err(|e: toml_edit::TomlError| fail(e.message().to_string()))?;
        parsed.decor_mut().clear();
        let mut doc = DocumentMut::new();
        let mut table = doc.as_table_mut();
        for seg in &path[..path.len() - 1] {
            let entry = table.entry(seg).or_insert(Item::Table(Table::new()));
            table = entry.as_table_mut().ok_or_else(|| fail("bad path".into()))?;
        }
        table.insert(path[path.len() - 1], Item::Value(parsed));
        let text = doc.to_string();
        let mut reader = Reader {
            text: &text,
            errors: Vec::new(),
        };
        let mut next = self.clone();
        next.apply_root(&mut reader, TableLike::Table(doc.as_table()));
        if !reader.errors.is_empty() {
            let msgs: Vec<String> = reader.errors.iter().map(|e| e.message.clone()).collect();
            return Err(fail(msgs.join("; ")));
        }
        next.validate().map_err(|errs| {
            Error::Config(
                errs.into_iter()
                    .map(|e| ConfigError::at(0, format!("--set {assignment}: {}", e.message)))
                    .collect(),
            )
        })?;
        *self = next;
        Ok(())
    }

    /// Canonical TOML text; parsing it yields an equal configuration.
    pub fn to_toml(&self) -> String {
        fn arr<T: Into<Value> + Copy>(v: &[T]) -> Value {
            Value::Array(v.iter().copied().collect::<Array>())
        }
        fn boxed(b: &Aabb) -> Value {
            let mut t = InlineTable::new();
            t.insert("min", arr(&b.min));
            t.insert("max", arr(&b.max));
            Value::InlineTable(t)
        }
        fn tensor(m: &Matrix3<f64>) -> Value {
            let diag = (0..3).all(|i| (0..3).all(|j| i == j || m[(i, j)] == 0.0));
            if diag {
                arr(&[m[(0, 0)], m[(1, 1)], m[(2, 2)]])
            } else {
                let rows: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| m[(i, j)])).collect();
                arr(&rows)
            }
        }
        let ints = |v: &[usize]| arr(&v.iter().map(|&x| x as i64).collect::<Vec<_>>());

        let mut doc = DocumentMut::new();
        doc["kind"] = toml_edit::value(self.kind.as_str());
        doc["k"] = toml_edit::value(self.k);
        doc["seed"] = toml_edit::value(self.seed as i64);
        if let Some(out) = &self.output {
            doc["output"] = toml_edit::value(out.to_string_lossy().as_ref());
        }

        let mut mesh = Table::new();
        mesh["min"] = Item::Value(arr(&self.mesh.min));
        mesh["max"] = Item::Value(arr(&self.mesh.max));
        mesh["divisions"] = Item::Value(ints(&self.divisions));
        doc["mesh"] = Item::Table(mesh);

        let mut regions = Table::new();
        regions["gamma"] = Item::Value(boxed(&self.gamma));
        regions["M"] = Item::Value(boxed(&self.region_m));
        regions["D"] = Item::Value(boxed(&self.region_d));
        regions["O"] = Item::Value(boxed(&self.region_o));
        doc["regions"] = Item::Table(regions);

        let mut bg = Table::new();
        bg["eps"] = Item::Value(tensor(&self.background_eps));
        bg["mu"] = Item::Value(tensor(&self.background_mu));
        doc["background"] = Item::Table(bg);

        if !self.materials.is_empty() {
            let mut mats = Table::new();
            mats.set_implicit(true);
            for m in &self.materials {
                let mut t = Table::new();
                t["min"] = Item::Value(arr(&m.bounds.min));
                t["max"] = Item::Value(arr(&m.bounds.max));
                t["eps"] = Item::Value(tensor(&m.eps));
                t["mu"] = Item::Value(tensor(&m.mu));
                mats[m.name.as_str()] = Item::Table(t);
            }
            doc["materials"] = Item::Table(mats);
        }

        let mut solver = Table::new();
        solver["residual_tol"] = toml_edit::value(self.solver.residual_tol);
        solver["min_relative_sigma"] = toml_edit::value(self.solver.min_relative_sigma);
        solver["min_resonance_margin"] = toml_edit::value(self.solver.min_resonance_margin);
        solver["export_vtk"] = toml_edit::value(self.export_vtk);
        doc["solver"] = Item::Table(solver);

        let mut loc = Table::new();
        loc["length"] = toml_edit::value(self.length as i64);
        if let Some(d) = self.delta {
            loc["delta"] = toml_edit::value(d);
        }
        doc["localize"] = Item::Table(loc);

        let mut runge = Table::new();
        runge["alpha_max"] = toml_edit::value(self.alpha_max);
        runge["alpha_min"] = toml_edit::value(self.alpha_min);
        runge["alpha_steps"] = toml_edit::value(self.alpha_steps as i64);
        runge["direction"] = Item::Value(arr(&self.direction));
        runge["polarization"] = Item::Value(arr(&self.polarization.map(|c| c.re)));
        runge["polarization_im"] = Item::Value(arr(&self.polarization.map(|c| c.im)));
        doc["runge"] = Item::Table(runge);

        let mut verify = Table::new();
        verify["case"] = toml_edit::value(self.verify_case.as_str());
        verify["divisions"] = Item::Value(ints(&self.verify_divisions));
        doc["verify"] = Item::Table(verify);

        let mut res = Table::new();
        res["k_max"] = toml_edit::value(self.k_max);
        doc["resonances"] = Item::Table(res);

        doc.to_string()
    }
}

/// Reports every repeated `[section]` header with both line numbers.
fn duplicate_sections(text: &str) -> Vec<ConfigError> {
    let mut seen: Vec<(String, usize)> = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if !line.starts_with('[') || line.starts_with("[[") {
            continue;
        }
        let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) else { continue };
        let name: String = name.split('.').map(|s| s.trim().trim_matches('"')).collect::<Vec<_>>().join(".");
        match seen.iter().find(|(n, _)| *n == name) {
            Some((_, first)) => errors.push(ConfigError::at(
                i + 1,
                format!("duplicate section [{name}] (first defined on line {first}, again on line {})", i + 1),
            )),
            None => seen.push((name, i + 1)),
        }
    }
    errors
}

/// Parses and validates configuration text. `k` is required; everything
/// else has a default.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let dups = duplicate_sections(text);
    if !dups.is_empty() {
        return Err(Error::Config(dups));
    }
    let doc = toml_edit::Document::parse(text).map_err(|e| {
        let line = e.span().map_or(0, |s| line_of(text, s.start));
        Error::Config(vec![ConfigError::at(line, e.message().trim().to_string())])
    })?;
    let root = doc.as_table();
    let mut reader = Reader {
        text,
        errors: Vec::new(),
    };
    let mut cfg = ExperimentConfig::default();
    if !root.contains_key("k") {
        reader.err(0, "missing required key `k`");
    }
    cfg.apply_root(&mut reader, TableLike::Table(root));
    if !reader.errors.is_empty() {
        return Err(Error::Config(reader.errors));
    }
    cfg.validate().map_err(Error::Config)?;
    Ok(cfg)
}
