//! Legacy VTK (ASCII, UNSTRUCTURED_GRID) snapshots.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::Mesh;
use crate::error::{Error, Result};

/// Writes `mesh` with nodal scalar fields as a legacy VTK file.
pub fn write_vtk(path: &Path, mesh: &Mesh, title: &str, fields: &[(&str, &[f64])]) -> Result<()> {
    for (name, values) in fields {
        if values.len() != mesh.vertex_count() {
            return Err(Error::Structure(format!(
                "field {name} has {} values for {} vertices",
                values.len(),
                mesh.vertex_count()
            )));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Input(format!("invalid VTK field name {name:?}")));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_to(&mut out, mesh, title, fields).map_err(|e| Error::io(path, e))
}

fn write_to<W: Write>(out: &mut W, mesh: &Mesh, title: &str, fields: &[(&str, &[f64])]) -> std::io::Result<()> {
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{title}")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.vertex_count())?;
    for p in mesh.vertices() {
        writeln!(out, "{:.17e} {:.17e} 0", p[0], p[1])?;
    }
    let ne = mesh.element_count();
    writeln!(out, "CELLS {} {}", ne, 4 * ne)?;
    for t in mesh.elements() {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(out, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(out, "5")?;
    }
    if !fields.is_empty() {
        writeln!(out, "POINT_DATA {}", mesh.vertex_count())?;
        for (name, values) in fields {
            writeln!(out, "SCALARS {name} double 1")?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for v in values.iter() {
                writeln!(out, "{v:.17e}")?;
            }
        }
    }
    out.flush()
}
