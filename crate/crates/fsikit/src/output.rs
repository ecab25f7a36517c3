//! Simulation outputs: legacy ASCII VTK snapshots of the full tagged mesh and
//! CSV convergence logs.
//!
//! CSV schemas (fixed):
//!
//! ```text
//! step,dn_iter,interface_residual,aitken_omega
//! step,dn_iter,field,newton_iter,outer_norm,inner_tol,inner_iters
//! ```

use crate::coupling::DnReport;
use crate::error::{FsiError, Result};
use crate::mesh::Mesh;
use std::io::Write;
use std::path::{Path, PathBuf};

/// C-style `%.9e` formatting (9 fractional digits, sign and two exponent
/// digits), byte-stable across runs.
pub fn format_e9(v: f64) -> String {
    let s = format!("{v:.9e}");
    // Rust prints 1.234e5 / 1.234e-5; normalize to 1.234e+05
    match s.split_once('e') {
        Some((m, e)) => {
            let (sign, digits) = match e.strip_prefix('-') {
                Some(d) => ('-', d),
                None => ('+', e),
            };
            format!("{m}e{sign}{digits:0>2}")
        }
        None => s,
    }
}

/// A named nodal field for VTK output.
pub enum VtkField<'a> {
    Scalar(&'a str, &'a [f64]),
    /// interleaved xyz, length 3 * n_vertices
    Vector(&'a str, &'a [f64]),
}

/// Writes a legacy ASCII unstructured-grid file: POINTS, CELLS (4-node tets),
/// CELL_TYPES (10), then POINT_DATA arrays. Decimal formatting is `%.9e`.
pub fn write_vtk(path: &Path, mesh: &Mesh, fields: &[VtkField]) -> Result<()> {
    let n = mesh.vertices.len();
    for f in fields {
        let (name, len, expect) = match f {
            VtkField::Scalar(name, data) => (*name, data.len(), n),
            VtkField::Vector(name, data) => (*name, data.len(), 3 * n),
        };
        if len != expect {
            return Err(FsiError::Config(format!(
                "field '{name}' has length {len}, expected {expect}"
            )));
        }
    }
    let wrap = |source| FsiError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("fsikit snapshot\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    out.push_str(&format!("POINTS {n} double\n"));
    for v in &mesh.vertices {
        out.push_str(&format!(
            "{} {} {}\n",
            format_e9(v.x),
            format_e9(v.y),
            format_e9(v.z)
        ));
    }
    let m = mesh.tets.len();
    out.push_str(&format!("CELLS {m} {}\n", 5 * m));
    for t in &mesh.tets {
        out.push_str(&format!(
            "4 {} {} {} {}\n",
            t.vertices[0], t.vertices[1], t.vertices[2], t.vertices[3]
        ));
    }
    out.push_str(&format!("CELL_TYPES {m}\n"));
    for _ in 0..m {
        out.push_str("10\n");
    }
    if !fields.is_empty() {
        out.push_str(&format!("POINT_DATA {n}\n"));
        for f in fields {
            match f {
                VtkField::Scalar(name, data) => {
                    out.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
                    for v in *data {
                        out.push_str(&format_e9(*v));
                        out.push('\n');
                    }
                }
                VtkField::Vector(name, data) => {
                    out.push_str(&format!("VECTORS {name} double\n"));
                    for i in 0..n {
                        out.push_str(&format!(
                            "{} {} {}\n",
                            format_e9(data[3 * i]),
                            format_e9(data[3 * i + 1]),
                            format_e9(data[3 * i + 2])
                        ));
                    }
                }
            }
        }
    }
    let file = std::fs::File::create(path).map_err(wrap)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(out.as_bytes()).map_err(wrap)?;
    Ok(())
}

/// Append-only CSV convergence logs for one run.
pub struct RunLog {
    dn_path: PathBuf,
    newton_path: PathBuf,
}

pub const DN_LOG_HEADER: &str = "step,dn_iter,interface_residual,aitken_omega";
pub const NEWTON_LOG_HEADER: &str = "step,dn_iter,field,newton_iter,outer_norm,inner_tol,inner_iters";

impl RunLog {
    pub fn create(dir: &Path) -> Result<RunLog> {
        std::fs::create_dir_all(dir).map_err(|source| FsiError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let dn_path = dir.join("dn_iterations.csv");
        let newton_path = dir.join("newton_iterations.csv");
        for (path, header) in [(&dn_path, DN_LOG_HEADER), (&newton_path, NEWTON_LOG_HEADER)] {
            std::fs::write(path, format!("{header}\n")).map_err(|source| FsiError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(RunLog { dn_path, newton_path })
    }

    fn append(path: &Path, text: &str) -> Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|source| FsiError::Io {
                path: path.display().to_string(),
                source,
            })?;
        f.write_all(text.as_bytes()).map_err(|source| FsiError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Appends every DN iteration and nested Newton iteration of one step.
    pub fn record_step(&self, step: usize, report: &DnReport) -> Result<()> {
        let mut dn = String::new();
        let mut newton = String::new();
        for k in 0..report.iterations() {
            dn.push_str(&format!(
                "{step},{},{:.12e},{:.12e}\n",
                k + 1,
                report.interface_residuals[k],
                report.omegas[k]
            ));
            for (field, rep) in [
                ("fluid", &report.fluid_newton[k]),
                ("structure", &report.structure_newton[k]),
            ] {
                for (i, norm) in rep.increment_norms.iter().enumerate() {
                    newton.push_str(&format!(
                        "{step},{},{field},{},{:.12e},{:.6e},{}\n",
                        k + 1,
                        i + 1,
                        norm,
                        rep.inner_tolerances[i],
                        rep.inner_iterations[i]
                    ));
                }
            }
        }
        Self::append(&self.dn_path, &dn)?;
        Self::append(&self.newton_path, &newton)
    }
}
