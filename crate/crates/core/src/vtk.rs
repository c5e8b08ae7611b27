//! Legacy ASCII VTK (version 2.0) export of tetrahedral fields.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::{AssembledSystem, CVec3, FieldPair};

const VTK_TETRA: u8 = 10;

fn num(out: &mut String, v: f64) {
    // 17 significant digits round-trip every finite double.
    let _ = write!(out, "{v:.16e}");
}

fn vectors(out: &mut String, name: &str, values: impl Iterator<Item = [f64; 3]>) {
    let _ = writeln!(out, "VECTORS {name} double");
    for v in values {
        num(out, v[0]);
        out.push(' ');
        num(out, v[1]);
        out.push(' ');
        num(out, v[2]);
        out.push('\n');
    }
}

/// Renders the mesh with the electric field sampled at each barycenter, the
/// magnetic field, and optional extra per-cell scalars.
pub fn render(system: &AssembledSystem, fields: &FieldPair, title: &str, scalars: &[(&str, &[f64])]) -> Result<String> {
    let mesh = &system.mesh;
    let nt = mesh.n_tets();
    if fields.e.len() != mesh.n_edges() {
        return Err(Error::DimensionMismatch {
            expected: mesh.n_edges(),
            got: fields.e.len(),
        });
    }
    if fields.h.len() != nt {
        return Err(Error::DimensionMismatch {
            expected: nt,
            got: fields.h.len(),
        });
    }
    if let Some((_, s)) = scalars.iter().find(|(_, s)| s.len() != nt) {
        return Err(Error::DimensionMismatch { expected: nt, got: s.len() });
    }
    let title: String = title.chars().filter(|c| *c != '\n' && *c != '\r').take(255).collect();

    let mut out = String::with_capacity(256 * nt);
    out.push_str("# vtk DataFile Version 2.0\n");
    out.push_str(&title);
    out.push_str("\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", mesh.n_vertices());
    for p in &mesh.vertices {
        num(&mut out, p[0]);
        out.push(' ');
        num(&mut out, p[1]);
        out.push(' ');
        num(&mut out, p[2]);
        out.push('\n');
    }
    let _ = writeln!(out, "CELLS {} {}", nt, 5 * nt);
    for t in &mesh.tets {
        let _ = writeln!(out, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(out, "{VTK_TETRA}");
    }

    let bary = [0.25; 4];
    let e: Vec<CVec3> = system.tets.iter().map(|td| td.eval(&fields.e, &bary)).collect();
    let _ = writeln!(out, "CELL_DATA {nt}");
    vectors(&mut out, "E_re", e.iter().map(|v| [v[0].re, v[1].re, v[2].re]));
    vectors(&mut out, "E_im", e.iter().map(|v| [v[0].im, v[1].im, v[2].im]));
    vectors(&mut out, "H_re", fields.h.iter().map(|v| [v[0].re, v[1].re, v[2].re]));
    vectors(&mut out, "H_im", fields.h.iter().map(|v| [v[0].im, v[1].im, v[2].im]));
    for (name, values) in scalars {
        let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for &v in values.iter() {
            num(&mut out, v);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write(
    path: &Path,
    system: &AssembledSystem,
    fields: &FieldPair,
    title: &str,
    scalars: &[(&str, &[f64])],
) -> Result<()> {
    let text = render(system, fields, title, scalars)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
