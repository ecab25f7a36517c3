//! ASCII mesh format.
//!
//! ```text
//! fsimesh 1
//! vertices N
//! x y z            (N lines; shortest round-trip decimal)
//! tets M
//! v0 v1 v2 v3 region
//! btris K
//! v0 v1 v2 tag
//! ```
//!
//! Ids are zero-based; region/tag keywords are lowercase.

use super::{BoundaryTag, BoundaryTri, Mesh, Region, Tet};
use crate::error::{FsiError, Result};
use nalgebra::Vector3;
use std::io::{BufRead, Write};
use std::path::Path;

pub fn save_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    let wrap = |source| FsiError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(wrap)?;
    let mut w = std::io::BufWriter::new(file);
    let mut out = String::new();
    out.push_str("fsimesh 1\n");
    out.push_str(&format!("vertices {}\n", mesh.vertices.len()));
    for v in &mesh.vertices {
        out.push_str(&format!("{} {} {}\n", v.x, v.y, v.z));
    }
    out.push_str(&format!("tets {}\n", mesh.tets.len()));
    for t in &mesh.tets {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            t.vertices[0],
            t.vertices[1],
            t.vertices[2],
            t.vertices[3],
            t.region.keyword()
        ));
    }
    out.push_str(&format!("btris {}\n", mesh.boundary_tris.len()));
    for t in &mesh.boundary_tris {
        out.push_str(&format!(
            "{} {} {} {}\n",
            t.vertices[0],
            t.vertices[1],
            t.vertices[2],
            t.tag.keyword()
        ));
    }
    w.write_all(out.as_bytes()).map_err(wrap)?;
    Ok(())
}

struct LineReader<I> {
    lines: I,
    line_no: usize,
}

impl<I: Iterator<Item = std::io::Result<String>>> LineReader<I> {
    fn next_line(&mut self) -> Result<String> {
        loop {
            self.line_no += 1;
            match self.lines.next() {
                Some(Ok(l)) => {
                    let t = l.trim();
                    if !t.is_empty() {
                        return Ok(t.to_string());
                    }
                }
                Some(Err(e)) => {
                    return Err(FsiError::Parse {
                        line: self.line_no,
                        msg: e.to_string(),
                    })
                }
                None => {
                    return Err(FsiError::Parse {
                        line: self.line_no,
                        msg: "unexpected end of file".into(),
                    })
                }
            }
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(FsiError::Parse {
            line: self.line_no,
            msg: msg.into(),
        })
    }
}

pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let file = std::fs::File::open(path).map_err(|source| FsiError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = LineReader {
        lines: std::io::BufReader::new(file).lines(),
        line_no: 0,
    };

    let header = r.next_line()?;
    if header != "fsimesh 1" {
        return r.err(format!("expected header 'fsimesh 1', found '{header}'"));
    }

    let count_after = |r: &mut LineReader<_>, kw: &str| -> Result<usize> {
        let l = r.next_line()?;
        let mut it = l.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(k), Some(n), None) if k == kw => n
                .parse()
                .map_err(|_| FsiError::Parse {
                    line: r.line_no,
                    msg: format!("bad count '{n}'"),
                }),
            _ => r.err(format!("expected '{kw} N'")),
        }
    };

    let nv = count_after(&mut r, "vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let l = r.next_line()?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 3 {
            return r.err("expected 'x y z'");
        }
        let mut c = [0.0f64; 3];
        for (k, p) in parts.iter().enumerate() {
            c[k] = p.parse().map_err(|_| FsiError::Parse {
                line: r.line_no,
                msg: format!("bad coordinate '{p}'"),
            })?;
        }
        vertices.push(Vector3::new(c[0], c[1], c[2]));
    }

    let nt = count_after(&mut r, "tets")?;
    let mut tets = Vec::with_capacity(nt);
    for _ in 0..nt {
        let l = r.next_line()?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 5 {
            return r.err("expected 'v0 v1 v2 v3 region'");
        }
        let mut ids = [0usize; 4];
        for (k, p) in parts[..4].iter().enumerate() {
            ids[k] = p.parse().map_err(|_| FsiError::Parse {
                line: r.line_no,
                msg: format!("bad vertex id '{p}'"),
            })?;
            if ids[k] >= nv {
                return r.err(format!("vertex id {} out of range (< {nv})", ids[k]));
            }
        }
        let region = Region::from_keyword(parts[4])
            .ok_or_else(|| FsiError::Parse {
                line: r.line_no,
                msg: format!("unknown region '{}'", parts[4]),
            })?;
        tets.push(Tet { vertices: ids, region });
    }

    let nb = count_after(&mut r, "btris")?;
    let mut boundary_tris = Vec::with_capacity(nb);
    for _ in 0..nb {
        let l = r.next_line()?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 4 {
            return r.err("expected 'v0 v1 v2 tag'");
        }
        let mut ids = [0usize; 3];
        for (k, p) in parts[..3].iter().enumerate() {
            ids[k] = p.parse().map_err(|_| FsiError::Parse {
                line: r.line_no,
                msg: format!("bad vertex id '{p}'"),
            })?;
            if ids[k] >= nv {
                return r.err(format!("vertex id {} out of range (< {nv})", ids[k]));
            }
        }
        let tag = BoundaryTag::from_keyword(parts[3]).ok_or_else(|| FsiError::Parse {
            line: r.line_no,
            msg: format!("unknown boundary tag '{}'", parts[3]),
        })?;
        boundary_tris.push(BoundaryTri { vertices: ids, tag });
    }

    let mesh = Mesh {
        vertices,
        tets,
        boundary_tris,
    };
    mesh.validate()?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_tube_mesh, TubeParams};

    fn meshes_equal(a: &Mesh, b: &Mesh) -> bool {
        a.vertices == b.vertices
            && a.tets.len() == b.tets.len()
            && a.tets
                .iter()
                .zip(&b.tets)
                .all(|(x, y)| x.vertices == y.vertices && x.region == y.region)
            && a.boundary_tris.len() == b.boundary_tris.len()
            && a.boundary_tris
                .iter()
                .zip(&b.boundary_tris)
                .all(|(x, y)| x.vertices == y.vertices && x.tag == y.tag)
    }

    #[test]
    fn round_trip_minimal_tube() {
        let m = generate_tube_mesh(&TubeParams::benchmark(4, 8, 1, 1)).unwrap();
        let dir = std::env::temp_dir().join("fsikit_mesh_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tube.fsimesh");
        save_mesh(&m, &path).unwrap();
        let m2 = load_mesh(&path).unwrap();
        assert!(meshes_equal(&m, &m2));
    }

    #[test]
    fn out_of_range_tet_id_reports_line() {
        let dir = std::env::temp_dir().join("fsikit_mesh_badid");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.fsimesh");
        std::fs::write(
            &path,
            "fsimesh 1\nvertices 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\ntets 1\n0 1 2 9 fluid\nbtris 0\n",
        )
        .unwrap();
        match load_mesh(&path) {
            Err(FsiError::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn hand_written_single_tet_loads_with_expected_volume() {
        let dir = std::env::temp_dir().join("fsikit_mesh_singletet");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("one.fsimesh");
        std::fs::write(
            &path,
            "fsimesh 1\nvertices 4\n0 0 0\n2 0 0\n0 3 0\n0 0 4\ntets 1\n0 1 2 3 fluid\n\
             btris 4\n0 2 1 inlet\n0 1 3 outlet\n0 3 2 interface\n1 2 3 interface\n",
        )
        .unwrap();
        let m = load_mesh(&path).unwrap();
        // volume = |det[e1 e2 e3]| / 6 = (2*3*4)/6 = 4
        let vol = crate::mesh::tet_signed_volume(&m.vertices, &m.tets[0].vertices);
        assert!((vol - 4.0).abs() < 1e-14);
    }
}
