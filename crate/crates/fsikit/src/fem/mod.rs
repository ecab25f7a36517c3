//! P1 tetrahedral finite element infrastructure: element geometry, quadrature,
//! degree-of-freedom maps, block saddle-point assembly, and mass matrices.
//!
//! Degrees of freedom are vertex-colocated: vertex `v` owns vector dofs
//! `3v..3v+3` (velocity or displacement) and pressure dof `v`.

pub mod sparse;

use crate::error::{FsiError, Result};
use nalgebra::Vector3;
pub use sparse::CsrMatrix;

/// Constant P1 data of one tetrahedron.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    /// shape-function gradients (1/mm), one per vertex; they sum to zero
    pub grad: [Vector3<f64>; 4],
    /// volume (mm^3)
    pub volume: f64,
    /// characteristic element length h_T = (6 V)^(1/3) (mm)
    pub h: f64,
}

impl ElementGeometry {
    pub fn new(coords: &[Vector3<f64>], tet: &[usize; 4]) -> Result<ElementGeometry> {
        Self::from_points([
            coords[tet[0]],
            coords[tet[1]],
            coords[tet[2]],
            coords[tet[3]],
        ])
    }

    pub fn from_points(p: [Vector3<f64>; 4]) -> Result<ElementGeometry> {
        let e = nalgebra::Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
        let det = e.determinant();
        if det <= 0.0 {
            return Err(FsiError::Mesh(format!(
                "inverted element (6V = {det:.6e})"
            )));
        }
        let einv = e.try_inverse().ok_or_else(|| {
            FsiError::Mesh("singular element edge matrix".into())
        })?;
        let g1 = einv.row(0).transpose();
        let g2 = einv.row(1).transpose();
        let g3 = einv.row(2).transpose();
        let g0 = -(g1 + g2 + g3);
        let volume = det / 6.0;
        Ok(ElementGeometry {
            grad: [g0, g1, g2, g3],
            volume,
            h: det.cbrt(),
        })
    }
}

/// Symmetric 4-point degree-2 quadrature on the reference tet, as barycentric
/// coordinates; each point carries weight V/4.
pub const QUAD4_BARY: [[f64; 4]; 4] = {
    const A: f64 = 0.585_410_196_624_968_5; // (5 + 3 sqrt 5)/20
    const B: f64 = 0.138_196_601_125_010_5; // (5 - sqrt 5)/20
    [
        [A, B, B, B],
        [B, A, B, B],
        [B, B, A, B],
        [B, B, B, A],
    ]
};

/// Vertex-colocated dof map with a Dirichlet mask.
///
/// `dirichlet_vel[3v+c] = Some(g)` prescribes the *increment* of that vector
/// dof for the next linear solve (zero once the guess satisfies the boundary
/// condition). Pressure dofs carry no Dirichlet data in this artifact but the
/// mask exists for completeness.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub n_vertices: usize,
    pub dirichlet_vel: Vec<Option<f64>>,
    pub dirichlet_pres: Vec<Option<f64>>,
}

impl DofMap {
    pub fn new(n_vertices: usize) -> DofMap {
        DofMap {
            n_vertices,
            dirichlet_vel: vec![None; 3 * n_vertices],
            dirichlet_pres: vec![None; n_vertices],
        }
    }

    pub fn n_vel(&self) -> usize {
        3 * self.n_vertices
    }

    pub fn vel_dof(&self, vertex: usize, comp: usize) -> usize {
        3 * vertex + comp
    }

    /// Fixes all three components of a vertex to the given increments.
    pub fn fix_vertex(&mut self, vertex: usize, value: Vector3<f64>) {
        for c in 0..3 {
            self.dirichlet_vel[3 * vertex + c] = Some(value[c]);
        }
    }

    pub fn is_dirichlet_vel(&self, dof: usize) -> bool {
        self.dirichlet_vel[dof].is_some()
    }
}

/// The 2x2-block linearized system
///
/// ```text
/// [ A   B1^T ] [dw]   [r1]
/// [ B2  -C   ] [dp] = [r2]   (Newton solves K d = -r)
/// ```
///
/// `r1`, `r2` hold the assembled residuals, so the Newton right-hand side is
/// their negative. Dirichlet rows are identity with `r = -increment`.
#[derive(Debug, Clone)]
pub struct BlockSaddleSystem {
    pub a: CsrMatrix,
    pub b1: CsrMatrix,
    pub b2: CsrMatrix,
    pub c: CsrMatrix,
    /// cached transpose of `b1` (the system applies B1^T, not B1)
    pub b1t: CsrMatrix,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
}

impl BlockSaddleSystem {
    pub fn n_vel(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_pres(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_total(&self) -> usize {
        self.n_vel() + self.n_pres()
    }

    /// y = K x on the concatenated [vel; pres] vector.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nv = self.n_vel();
        let (x1, x2) = x.split_at(nv);
        let (y1, y2) = y.split_at_mut(nv);
        self.a.mul_vec(x1, y1);
        self.b1t.mul_vec_add(1.0, x2, y1);
        self.b2.mul_vec(x1, y2);
        self.c.mul_vec_add(-1.0, x2, y2);
    }

    /// Concatenated residual vector [r1; r2].
    pub fn rhs(&self) -> Vec<f64> {
        let mut r = Vec::with_capacity(self.n_total());
        r.extend_from_slice(&self.r1);
        r.extend_from_slice(&self.r2);
        r
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let (nv, np) = (self.n_vel(), self.n_pres());
        let mut k = nalgebra::DMatrix::zeros(nv + np, nv + np);
        k.view_mut((0, 0), (nv, nv)).copy_from(&self.a.to_dense());
        k.view_mut((0, nv), (nv, np)).copy_from(&self.b1t.to_dense());
        k.view_mut((nv, 0), (np, nv)).copy_from(&self.b2.to_dense());
        k.view_mut((nv, nv), (np, np)).copy_from(&(-self.c.to_dense()));
        k
    }
}

/// Zeroed block matrices over the vertex-adjacency pattern of a tet list,
/// reusable across numeric assemblies.
#[derive(Debug, Clone)]
pub struct BlockPattern {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub c: CsrMatrix,
}

impl BlockPattern {
    pub fn build(n_vertices: usize, tets: &[[usize; 4]]) -> BlockPattern {
        let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(tets.len() * 16);
        for t in tets {
            for &i in t {
                for &j in t {
                    pairs.push((i, j, 0.0));
                }
            }
        }
        let c = CsrMatrix::from_triplets(n_vertices, n_vertices, &mut pairs);
        // expand the vertex pattern to 3x3 vector blocks / 1x3 rows
        let mut ta = Vec::with_capacity(c.nnz() * 9);
        let mut tb = Vec::with_capacity(c.nnz() * 3);
        for i in 0..n_vertices {
            let (cols, _) = c.row(i);
            for &j in cols {
                for a in 0..3 {
                    for b in 0..3 {
                        ta.push((3 * i + a, 3 * j + b, 0.0));
                    }
                    tb.push((i, 3 * j + a, 0.0));
                }
            }
        }
        BlockPattern {
            a: CsrMatrix::from_triplets(3 * n_vertices, 3 * n_vertices, &mut ta),
            b: CsrMatrix::from_triplets(n_vertices, 3 * n_vertices, &mut tb),
            c,
        }
    }
}

/// Local contribution of one element: a 16x16 Jacobian and 16 residual
/// entries over the local dofs `[v0x v0y v0z ... v3z | p0 p1 p2 p3]`.
#[derive(Clone)]
pub struct LocalSystem {
    pub k: [[f64; 16]; 16],
    pub r: [f64; 16],
}

impl LocalSystem {
    pub fn zero() -> LocalSystem {
        LocalSystem {
            k: [[0.0; 16]; 16],
            r: [0.0; 16],
        }
    }
}

/// Assembles element contributions into the global block system and applies
/// symmetric-consistent Dirichlet elimination from the dof map.
pub fn assemble_system<F>(
    n_vertices: usize,
    tets: &[[usize; 4]],
    coords: &[Vector3<f64>],
    dofs: &DofMap,
    pattern: &BlockPattern,
    mut kernel: F,
) -> Result<BlockSaddleSystem>
where
    F: FnMut(usize, &ElementGeometry, &[usize; 4]) -> Result<LocalSystem>,
{
    let mut a = pattern.a.clone();
    let mut b1 = pattern.b.clone();
    let mut b2 = pattern.b.clone();
    let mut c = pattern.c.clone();
    let mut r1 = vec![0.0; 3 * n_vertices];
    let mut r2 = vec![0.0; n_vertices];

    for (e, tet) in tets.iter().enumerate() {
        let geom = ElementGeometry::new(coords, tet).map_err(|_| FsiError::ElementInversion {
            element: e,
            j: 0.0,
        })?;
        let local = kernel(e, &geom, tet)?;
        if local
            .k
            .iter()
            .flatten()
            .chain(local.r.iter())
            .any(|v| !v.is_finite())
        {
            return Err(FsiError::NonFinite { element: e });
        }
        // local dof l -> (block, global index)
        let gvel = |l: usize| 3 * tet[l / 3] + l % 3;
        let gpres = |l: usize| tet[l - 12];
        for li in 0..16 {
            for lj in 0..16 {
                let v = local.k[li][lj];
                if v == 0.0 {
                    continue;
                }
                match (li < 12, lj < 12) {
                    (true, true) => a.add_at(gvel(li), gvel(lj), v),
                    (true, false) => b1.add_at(gpres(lj), gvel(li), v), // B1^T entry
                    (false, true) => b2.add_at(gpres(li), gvel(lj), v),
                    (false, false) => c.add_at(gpres(li), gpres(lj), -v),
                }
            }
        }
        for li in 0..12 {
            r1[gvel(li)] += local.r[li];
        }
        for li in 12..16 {
            r2[gpres(li)] += local.r[li];
        }
    }

    eliminate_dirichlet(&mut a, &mut b1, &mut b2, &mut r1, &mut r2, dofs);

    let b1t = b1.transpose();
    Ok(BlockSaddleSystem {
        a,
        b1,
        b2,
        c,
        b1t,
        r1,
        r2,
    })
}

/// Row/column elimination with rhs correction. Constrained rows become
/// identity with residual `-increment`; constrained columns are moved to the
/// right-hand side.
fn eliminate_dirichlet(
    a: &mut CsrMatrix,
    b1: &mut CsrMatrix,
    b2: &mut CsrMatrix,
    r1: &mut [f64],
    r2: &mut [f64],
    dofs: &DofMap,
) {
    let any = dofs.dirichlet_vel.iter().any(|d| d.is_some());
    if !any {
        return;
    }
    let inc: Vec<f64> = dofs
        .dirichlet_vel
        .iter()
        .map(|d| d.unwrap_or(0.0))
        .collect();
    let mask: Vec<bool> = dofs.dirichlet_vel.iter().map(|d| d.is_some()).collect();

    // move constrained columns of A and B2 to the rhs, then zero them
    {
        let (rp, ci) = (a.row_ptr().to_vec(), a.col_idx().to_vec());
        let vals = a.values_mut();
        for i in 0..rp.len() - 1 {
            for k in rp[i]..rp[i + 1] {
                let j = ci[k];
                if mask[j] {
                    if !mask[i] {
                        r1[i] += vals[k] * inc[j];
                    }
                    vals[k] = 0.0;
                }
            }
        }
    }
    {
        let (rp, ci) = (b2.row_ptr().to_vec(), b2.col_idx().to_vec());
        let vals = b2.values_mut();
        for i in 0..rp.len() - 1 {
            for k in rp[i]..rp[i + 1] {
                let j = ci[k];
                if mask[j] {
                    r2[i] += vals[k] * inc[j];
                    vals[k] = 0.0;
                }
            }
        }
    }
    // constrained rows of [A | B1^T]: identity row with r = -increment
    for (dof, m) in mask.iter().enumerate() {
        if *m {
            a.set_identity_row(dof);
            r1[dof] = -inc[dof];
        }
    }
    // B1^T rows live in B1 columns
    {
        let (rp, ci) = (b1.row_ptr().to_vec(), b1.col_idx().to_vec());
        let vals = b1.values_mut();
        for i in 0..rp.len() - 1 {
            for k in rp[i]..rp[i + 1] {
                if mask[ci[k]] {
                    vals[k] = 0.0;
                }
            }
        }
    }
}

/// Consistent P1 mass matrices: `M1` on vector dofs (3m x 3m) and `M2` on
/// pressure dofs (m x m). `M = diag[M1, M2]` is the norm matrix of the Newton
/// stopping rule.
pub fn mass_matrices(
    n_vertices: usize,
    tets: &[[usize; 4]],
    coords: &[Vector3<f64>],
) -> Result<(CsrMatrix, CsrMatrix)> {
    let mut t1 = Vec::with_capacity(tets.len() * 48);
    let mut t2 = Vec::with_capacity(tets.len() * 16);
    for tet in tets {
        let geom = ElementGeometry::new(coords, tet)?;
        let v20 = geom.volume / 20.0;
        for i in 0..4 {
            for j in 0..4 {
                let m = if i == j { 2.0 * v20 } else { v20 };
                t2.push((tet[i], tet[j], m));
                for c in 0..3 {
                    t1.push((3 * tet[i] + c, 3 * tet[j] + c, m));
                }
            }
        }
    }
    Ok((
        CsrMatrix::from_triplets(3 * n_vertices, 3 * n_vertices, &mut t1),
        CsrMatrix::from_triplets(n_vertices, n_vertices, &mut t2),
    ))
}

/// sqrt(x^T M x) for SPD `M`; a negative quadratic form signals an assembly
/// bug and is reported as an error.
pub fn weighted_norm(m: &CsrMatrix, x: &[f64]) -> Result<f64> {
    let mut mx = vec![0.0; x.len()];
    m.mul_vec(x, &mut mx);
    let q = sparse::dot(x, &mx);
    if q < -1e-12 * sparse::dot(x, x).max(1e-300) {
        return Err(FsiError::LinearSolve(format!(
            "negative quadratic form {q:.3e} in weighted norm"
        )));
    }
    Ok(q.max(0.0).sqrt())
}

/// Combined M-weighted norm of a [vel; pres] increment.
pub fn increment_norm(m1: &CsrMatrix, m2: &CsrMatrix, dw: &[f64], dp: &[f64]) -> Result<f64> {
    let a = weighted_norm(m1, dw)?;
    let b = weighted_norm(m2, dp)?;
    Ok((a * a + b * b).sqrt())
}

/// Scalar P1 stiffness (Laplacian) over the given tets.
pub fn scalar_laplacian(
    n_vertices: usize,
    tets: &[[usize; 4]],
    coords: &[Vector3<f64>],
) -> Result<CsrMatrix> {
    let mut t = Vec::with_capacity(tets.len() * 16);
    for tet in tets {
        let geom = ElementGeometry::new(coords, tet)?;
        for i in 0..4 {
            for j in 0..4 {
                t.push((tet[i], tet[j], geom.volume * geom.grad[i].dot(&geom.grad[j])));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(n_vertices, n_vertices, &mut t))
}

/// Scalar P1 convection matrix (adv . grad phi_j, phi_i) with a P1 advective
/// field given at vertices.
pub fn scalar_convection(
    n_vertices: usize,
    tets: &[[usize; 4]],
    coords: &[Vector3<f64>],
    adv: &[Vector3<f64>],
) -> Result<CsrMatrix> {
    let mut t = Vec::with_capacity(tets.len() * 16);
    for tet in tets {
        let geom = ElementGeometry::new(coords, tet)?;
        // integrand (adv . g_j) phi_i is linear: integrate by the 4-pt rule
        for q in QUAD4_BARY.iter() {
            let wq = geom.volume / 4.0;
            let mut aq = Vector3::zeros();
            for k in 0..4 {
                aq += q[k] * adv[tet[k]];
            }
            for i in 0..4 {
                for j in 0..4 {
                    t.push((tet[i], tet[j], wq * q[i] * aq.dot(&geom.grad[j])));
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(n_vertices, n_vertices, &mut t))
}
