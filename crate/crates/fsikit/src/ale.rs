//! Harmonic extension of the interface displacement into the fluid reference
//! domain, and the mesh update it drives.
//!
//! The extension solves `-lap d_f = 0` componentwise on the reference fluid
//! mesh with `d_f = d_s` on the interface and `d_f = 0` on the inlet and
//! outlet disks. The lateral wall of the fluid domain *is* the interface, so
//! those are the only boundary pieces.

use crate::amg::point::{PointAmg, PointAmgOptions};
use crate::error::{FsiError, Result};
use crate::fem::{scalar_laplacian, CsrMatrix};
use crate::mesh::{tet_signed_volume, BoundaryTag, SubMesh};
use nalgebra::Vector3;

/// Reusable harmonic-extension solver for a fixed reference fluid mesh.
///
/// The stiffness matrix and its AMG hierarchy are built once; only the
/// interface data changes between calls.
pub struct HarmonicExtension {
    /// unconstrained Laplacian (used for the rhs correction)
    full: CsrMatrix,
    /// Dirichlet-eliminated SPD matrix
    constrained: CsrMatrix,
    amg: PointAmg,
    /// vertex -> position in `interface` if it is an interface vertex
    interface: Vec<usize>,
    dirichlet: Vec<bool>,
    n: usize,
    tol: f64,
}

impl HarmonicExtension {
    pub fn new(sub: &SubMesh) -> Result<HarmonicExtension> {
        let n = sub.n_vertices();
        let full = scalar_laplacian(n, &sub.tets, &sub.vertices)?;
        let interface = sub.tagged_vertices(BoundaryTag::Interface);
        let mut dirichlet = vec![false; n];
        for &v in &interface {
            dirichlet[v] = true;
        }
        for tag in [BoundaryTag::Inlet, BoundaryTag::Outlet] {
            for v in sub.tagged_vertices(tag) {
                dirichlet[v] = true;
            }
        }
        let mut constrained = full.clone();
        for (v, d) in dirichlet.iter().enumerate() {
            if *d {
                constrained.set_identity_row(v);
            }
        }
        {
            let (rp, ci) = (constrained.row_ptr().to_vec(), constrained.col_idx().to_vec());
            let vals = constrained.values_mut();
            for i in 0..n {
                if !dirichlet[i] {
                    for k in rp[i]..rp[i + 1] {
                        if dirichlet[ci[k]] {
                            vals[k] = 0.0;
                        }
                    }
                }
            }
        }
        let amg = PointAmg::build(&constrained, 1, &PointAmgOptions::default())?;
        Ok(HarmonicExtension {
            full,
            constrained,
            amg,
            interface,
            dirichlet,
            n,
            tol: 1e-10,
        })
    }

    pub fn interface_vertices(&self) -> &[usize] {
        &self.interface
    }

    /// Solves the three scalar extension problems for the given interface
    /// displacement (one vector per interface vertex, in the order of
    /// `interface_vertices`). Returns the interleaved nodal displacement.
    pub fn solve(&self, interface_data: &[Vector3<f64>]) -> Result<Vec<f64>> {
        if interface_data.len() != self.interface.len() {
            return Err(FsiError::Mesh(format!(
                "interface data length {} != interface vertex count {}",
                interface_data.len(),
                self.interface.len()
            )));
        }
        let mut d = vec![0.0; 3 * self.n];
        let mut g = vec![0.0; self.n];
        for comp in 0..3 {
            g.iter_mut().for_each(|x| *x = 0.0);
            for (k, &v) in self.interface.iter().enumerate() {
                g[v] = interface_data[k][comp];
            }
            // rhs = -K g on free rows, g on constrained rows
            let mut rhs = vec![0.0; self.n];
            self.full.mul_vec(&g, &mut rhs);
            for i in 0..self.n {
                rhs[i] = if self.dirichlet[i] { g[i] } else { -rhs[i] };
            }
            let (x, _) = self
                .amg
                .solve_pcg(&self.constrained, &rhs, self.tol, 2000)
                .map_err(|e| {
                    FsiError::LinearSolve(format!("harmonic extension breakdown: {e}"))
                })?;
            for i in 0..self.n {
                // boundary data reproduced exactly at boundary nodes
                d[3 * i + comp] = if self.dirichlet[i] { g[i] } else { x[i] };
            }
        }
        Ok(d)
    }
}

/// Element volume statistics of a moved mesh relative to the reference.
#[derive(Debug, Clone, Copy)]
pub struct MeshQualityReport {
    pub min_volume_ratio: f64,
    pub max_volume_ratio: f64,
}

/// Applies `x = x0 + d_f` and checks for inverted elements.
pub fn move_mesh(sub: &SubMesh, d_f: &[f64]) -> Result<(Vec<Vector3<f64>>, MeshQualityReport)> {
    assert_eq!(d_f.len(), 3 * sub.n_vertices());
    let current: Vec<Vector3<f64>> = sub
        .vertices
        .iter()
        .enumerate()
        .map(|(i, p)| p + Vector3::new(d_f[3 * i], d_f[3 * i + 1], d_f[3 * i + 2]))
        .collect();
    let mut report = MeshQualityReport {
        min_volume_ratio: f64::INFINITY,
        max_volume_ratio: 0.0,
    };
    for (e, tet) in sub.tets.iter().enumerate() {
        let v_now = tet_signed_volume(&current, tet);
        if v_now <= 0.0 {
            return Err(FsiError::ElementInversion {
                element: e,
                j: v_now,
            });
        }
        let v_ref = tet_signed_volume(&sub.vertices, tet);
        let ratio = v_now / v_ref;
        report.min_volume_ratio = report.min_volume_ratio.min(ratio);
        report.max_volume_ratio = report.max_volume_ratio.max(ratio);
    }
    Ok((current, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_tube_mesh, TubeParams};
    use approx::assert_relative_eq;

    fn fluid_sub() -> SubMesh {
        generate_tube_mesh(&TubeParams::benchmark(6, 8, 2, 1))
            .unwrap()
            .extract(true)
    }

    #[test]
    fn zero_boundary_data_gives_zero_extension() {
        let sub = fluid_sub();
        let ext = HarmonicExtension::new(&sub).unwrap();
        let zeros = vec![Vector3::zeros(); ext.interface_vertices().len()];
        let d = ext.solve(&zeros).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extension_is_discretely_harmonic_and_linear_in_the_data() {
        let sub = fluid_sub();
        let ext = HarmonicExtension::new(&sub).unwrap();
        let b = nalgebra::Matrix3::new(0.02, -0.01, 0.0, 0.01, 0.03, -0.02, 0.0, 0.01, 0.015);
        let a = Vector3::new(0.1, -0.2, 0.05);
        let data: Vec<Vector3<f64>> = ext
            .interface_vertices()
            .iter()
            .map(|&v| a + b * sub.vertices[v])
            .collect();
        let mut d = ext.solve(&data).unwrap();
        // interior rows of the (unconstrained) Laplacian applied to the full
        // solution vanish: discrete harmonicity
        let n = sub.n_vertices();
        for comp in 0..3 {
            let x: Vec<f64> = (0..n).map(|i| d[3 * i + comp]).collect();
            let mut r = vec![0.0; n];
            ext.full.mul_vec(&x, &mut r);
            for i in 0..n {
                if !ext.dirichlet[i] {
                    assert!(r[i].abs() < 1e-8, "row {i} residual {}", r[i]);
                }
            }
        }
        // ext(2 g) = 2 ext(g) to solver tolerance
        let data2: Vec<Vector3<f64>> = data.iter().map(|v| 2.0 * v).collect();
        let d2 = ext.solve(&data2).unwrap();
        for i in 0..d.len() {
            d[i] *= 2.0;
            assert_relative_eq!(d2[i], d[i], epsilon = 1e-7, max_relative = 1e-6);
        }
    }

    #[test]
    fn interior_affine_exactness() {
        // impose an affine field on every Dirichlet vertex by assembling the
        // raw system; P1 Laplace reproduces affine fields exactly
        let sub = fluid_sub();
        let ext = HarmonicExtension::new(&sub).unwrap();
        let field = |p: &Vector3<f64>| 0.3 * p.x - 0.2 * p.y + 0.1 * p.z + 0.05;
        let n = sub.n_vertices();
        let mut g = vec![0.0; n];
        for i in 0..n {
            if ext.dirichlet[i] {
                g[i] = field(&sub.vertices[i]);
            }
        }
        let mut rhs = vec![0.0; n];
        ext.full.mul_vec(&g, &mut rhs);
        for i in 0..n {
            rhs[i] = if ext.dirichlet[i] { g[i] } else { -rhs[i] };
        }
        let (x, _) = ext.amg.solve_pcg(&ext.constrained, &rhs, 1e-12, 2000).unwrap();
        for i in 0..n {
            let expect = field(&sub.vertices[i]);
            let got = if ext.dirichlet[i] { g[i] } else { x[i] };
            assert!(
                (got - expect).abs() < 1e-9,
                "vertex {i}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn radial_inflation_respects_maximum_principle() {
        let sub = fluid_sub();
        let ext = HarmonicExtension::new(&sub).unwrap();
        let data: Vec<Vector3<f64>> = ext
            .interface_vertices()
            .iter()
            .map(|&v| {
                let p = sub.vertices[v];
                let r = (p.x * p.x + p.y * p.y).sqrt();
                0.01 * Vector3::new(p.x / r, p.y / r, 0.0)
            })
            .collect();
        let d = ext.solve(&data).unwrap();
        for i in 0..sub.n_vertices() {
            let mag = Vector3::new(d[3 * i], d[3 * i + 1], d[3 * i + 2]).norm();
            assert!(mag <= 0.01 + 1e-9, "vertex {i} moved {mag}");
        }
        // and the moved mesh stays valid
        let (_, report) = move_mesh(&sub, &d).unwrap();
        assert!(report.min_volume_ratio > 0.0);
    }

    #[test]
    fn move_mesh_identity_and_rigid_translation() {
        let sub = fluid_sub();
        let zeros = vec![0.0; 3 * sub.n_vertices()];
        let (coords, report) = move_mesh(&sub, &zeros).unwrap();
        assert_eq!(coords, sub.vertices);
        assert_relative_eq!(report.min_volume_ratio, 1.0, epsilon = 1e-12);
        assert_relative_eq!(report.max_volume_ratio, 1.0, epsilon = 1e-12);
        let mut shift = vec![0.0; 3 * sub.n_vertices()];
        for i in 0..sub.n_vertices() {
            shift[3 * i] = 0.7;
            shift[3 * i + 1] = -0.3;
            shift[3 * i + 2] = 1.1;
        }
        let (_, report) = move_mesh(&sub, &shift).unwrap();
        assert_relative_eq!(report.min_volume_ratio, 1.0, epsilon = 1e-12);
        assert_relative_eq!(report.max_volume_ratio, 1.0, epsilon = 1e-12);
    }
}
