//! Algebraic multigrid for the stabilized P1-P1 saddle systems.
//!
//! Coarsening aggregates mesh vertices (shared by the three vector dofs and
//! the pressure dof of each vertex, keeping the colocated layout on every
//! level), prolongation is piecewise constant per aggregate and field, coarse
//! operators are Galerkin triple products, and the coarse stabilization block
//! C is rescaled by 4 per level to mimic the h^2 growth of the PSPG term on
//! coarser "meshes". Smoothing is Braess-Sarazin (inexact symmetric Uzawa;
//! the default for the fluid) or multiplicative Vanka (local saddle patches
//! in Gauss-Seidel order; the default for the structure). The coarsest level
//! is solved by dense LU.

pub mod point;

use crate::error::{FsiError, Result};
use crate::fem::sparse::norm2;
use crate::fem::{BlockSaddleSystem, CsrMatrix};
use crate::linsolve::SolveReport;
use nalgebra::{DMatrix, DVector};
use point::{aggregate_nodes, PointAmg, PointAmgOptions};
use std::time::Instant;

/// Saddle-point smoother selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmootherKind {
    BraessSarazin { steps: usize },
    Vanka { steps: usize, omega: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct SaddleAmgOptions {
    /// stop coarsening once a level has at most this many dofs
    pub coarse_max_dofs: usize,
    pub max_levels: usize,
    /// cap on aggregate size (vertices)
    pub aggregate_cap: usize,
    /// multiplicative rescaling of the Galerkin-projected C per level
    pub c_scale_per_level: f64,
    /// never coarsen below this many vertices: the aggregated divergence
    /// blocks of a handful-of-vertices saddle system cancel toward
    /// singularity and poison the coarse solve
    pub min_coarse_vertices: usize,
}

impl Default for SaddleAmgOptions {
    fn default() -> Self {
        SaddleAmgOptions {
            coarse_max_dofs: 300,
            max_levels: 20,
            aggregate_cap: 12,
            c_scale_per_level: 4.0,
            min_coarse_vertices: 8,
        }
    }
}

struct VankaPatch {
    vel: Vec<usize>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

enum Smoother {
    BraessSarazin {
        /// 1/(2 diag A), the relaxed-Jacobi velocity approximation
        ainv: Vec<f64>,
        s_tilde: CsrMatrix,
        s_amg: PointAmg,
        steps: usize,
    },
    Vanka {
        patches: Vec<VankaPatch>,
        /// velocity dofs eliminated to identity rows; no patch contains them,
        /// so each sweep resets them to their right-hand side directly
        frozen: Vec<usize>,
        steps: usize,
        omega: f64,
    },
}

struct Level {
    a: CsrMatrix,
    b1t: CsrMatrix,
    b2: CsrMatrix,
    c: CsrMatrix,
    n_vert: usize,
    /// vertex -> coarse vertex
    agg: Vec<usize>,
    n_coarse: usize,
    smoother: Smoother,
}

/// The level hierarchy plus the dense coarsest-level factorization.
pub struct SaddleAmg {
    levels: Vec<Level>,
    coarse: BlockParts,
    coarse_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    kind: SmootherKind,
    c_scale: f64,
}

/// Plain block-matrix container for coarse levels (no residuals).
struct BlockParts {
    a: CsrMatrix,
    b1t: CsrMatrix,
    b2: CsrMatrix,
    c: CsrMatrix,
    n_vert: usize,
}

impl BlockParts {
    fn n_dofs(&self) -> usize {
        4 * self.n_vert
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let nv = 3 * self.n_vert;
        let np = self.n_vert;
        let mut k = DMatrix::zeros(nv + np, nv + np);
        k.view_mut((0, 0), (nv, nv)).copy_from(&self.a.to_dense());
        k.view_mut((0, nv), (nv, np)).copy_from(&self.b1t.to_dense());
        k.view_mut((nv, 0), (np, nv)).copy_from(&self.b2.to_dense());
        k.view_mut((nv, nv), (np, np)).copy_from(&(-self.c.to_dense()));
        k
    }
}

/// Vertex adjacency from the A-block pattern unioned with the C pattern
/// (C keeps interface vertices connected even when their velocity rows were
/// eliminated to identity).
fn vertex_graph(a: &CsrMatrix, c: &CsrMatrix, n_vert: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n_vert];
    for i in 0..a.nrows() {
        let vi = i / 3;
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if v != 0.0 && j / 3 != vi {
                adj[vi].push(j / 3);
            }
        }
    }
    for i in 0..c.nrows() {
        let (cols, vals) = c.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if v != 0.0 && j != i {
                adj[i].push(j);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    adj
}

/// Galerkin projection of one block under piecewise-constant aggregation.
/// `row_block`/`col_block` are 3 for velocity and 1 for pressure indices.
fn project_block(
    m: &CsrMatrix,
    agg: &[usize],
    n_coarse: usize,
    row_block: usize,
    col_block: usize,
) -> CsrMatrix {
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(m.nnz());
    for i in 0..m.nrows() {
        let ic = agg[i / row_block] * row_block + i % row_block;
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if v != 0.0 {
                t.push((ic, agg[j / col_block] * col_block + j % col_block, v));
            }
        }
    }
    CsrMatrix::from_triplets(n_coarse * row_block, n_coarse * col_block, &mut t)
}

fn build_smoother(
    kind: SmootherKind,
    a: &CsrMatrix,
    b1t: &CsrMatrix,
    b2: &CsrMatrix,
    c: &CsrMatrix,
) -> Result<Smoother> {
    match kind {
        SmootherKind::BraessSarazin { steps } => {
            let diag = a.diagonal();
            let ainv: Vec<f64> = diag
                .iter()
                .map(|&d| {
                    if d == 0.0 {
                        0.0
                    } else {
                        1.0 / (2.0 * d)
                    }
                })
                .collect();
            // S_tilde = B2 Ainv B1^T + C, with Ainv = diag(1/(2 a_ii))
            let mut b2s = b2.clone();
            b2s.scale_cols(&ainv);
            let bab = b2s.matmul(b1t);
            let s_tilde = add_sparse(&bab, c);
            let s_amg = PointAmg::build(&s_tilde, 1, &PointAmgOptions::default())?;
            Ok(Smoother::BraessSarazin {
                ainv,
                s_tilde,
                s_amg,
                steps,
            })
        }
        SmootherKind::Vanka { steps, omega } => {
            // identity rows: diagonal exactly 1, every other stored value 0,
            // and no pressure coupling
            let mut frozen = Vec::new();
            for i in 0..a.nrows() {
                let (cols, vals) = a.row(i);
                let identity = cols
                    .iter()
                    .zip(vals)
                    .all(|(&j, &v)| if j == i { v == 1.0 } else { v == 0.0 })
                    && cols.contains(&i);
                if identity && b1t.row(i).1.iter().all(|&v| v == 0.0) {
                    frozen.push(i);
                }
            }
            let mut patches = Vec::with_capacity(b2.nrows());
            for i in 0..b2.nrows() {
                let (cols, vals) = b2.row(i);
                let vel: Vec<usize> = cols
                    .iter()
                    .zip(vals)
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(&j, _)| j)
                    .collect();
                let n = vel.len() + 1;
                let mut k = DMatrix::zeros(n, n);
                for (r, &vr) in vel.iter().enumerate() {
                    for (s, &vs) in vel.iter().enumerate() {
                        k[(r, s)] = a.get(vr, vs);
                    }
                    k[(r, n - 1)] = b1t.get(vr, i);
                    k[(n - 1, r)] = b2.get(i, vr);
                }
                k[(n - 1, n - 1)] = -c.get(i, i);
                let lu = k.lu();
                if lu.determinant().abs() < 1e-300 {
                    return Err(FsiError::LinearSolve(format!(
                        "singular Vanka patch at pressure dof {i} (missing stabilization?)"
                    )));
                }
                patches.push(VankaPatch { vel, lu });
            }
            Ok(Smoother::Vanka {
                patches,
                frozen,
                steps,
                omega,
            })
        }
    }
}

/// Entrywise sparse sum (pattern union).
fn add_sparse(a: &CsrMatrix, b: &CsrMatrix) -> CsrMatrix {
    assert_eq!(a.nrows(), b.nrows());
    assert_eq!(a.ncols(), b.ncols());
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(a.nnz() + b.nnz());
    for m in [a, b] {
        for i in 0..m.nrows() {
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                t.push((i, j, v));
            }
        }
    }
    CsrMatrix::from_triplets(a.nrows(), a.ncols(), &mut t)
}

impl SaddleAmg {
    /// Builds aggregates, Galerkin operators, smoother data, and the coarse
    /// factorization for the given system.
    pub fn build(sys: &BlockSaddleSystem, kind: SmootherKind, opts: &SaddleAmgOptions) -> Result<SaddleAmg> {
        let n_vert = sys.n_pres();
        assert_eq!(sys.n_vel(), 3 * n_vert, "colocated P1-P1 layout expected");
        let mut current = BlockParts {
            a: sys.a.clone(),
            b1t: sys.b1t.clone(),
            b2: sys.b2.clone(),
            c: sys.c.clone(),
            n_vert,
        };
        let mut levels: Vec<Level> = Vec::new();
        for _ in 0..opts.max_levels {
            if current.n_dofs() <= opts.coarse_max_dofs {
                break;
            }
            let adj = vertex_graph(&current.a, &current.c, current.n_vert);
            let agg = aggregate_nodes(&adj, opts.aggregate_cap);
            let n_coarse = agg.iter().max().map_or(0, |m| m + 1);
            if n_coarse < opts.min_coarse_vertices {
                break; // solve the current level directly instead
            }
            let ratio = current.n_vert as f64 / n_coarse.max(1) as f64;
            if ratio < 1.5 {
                return Err(FsiError::LinearSolve(format!(
                    "AMG coarsening stagnated (vertex ratio {ratio:.2}); \
                     adjust the aggregation strength/cap"
                )));
            }
            let coarse = BlockParts {
                a: project_block(&current.a, &agg, n_coarse, 3, 3),
                b1t: project_block(&current.b1t, &agg, n_coarse, 3, 1),
                b2: project_block(&current.b2, &agg, n_coarse, 1, 3),
                c: {
                    let mut cc = project_block(&current.c, &agg, n_coarse, 1, 1);
                    cc.scale(opts.c_scale_per_level);
                    cc
                },
                n_vert: n_coarse,
            };
            let smoother = build_smoother(kind, &current.a, &current.b1t, &current.b2, &current.c)?;
            levels.push(Level {
                a: current.a,
                b1t: current.b1t,
                b2: current.b2,
                c: current.c,
                n_vert: current.n_vert,
                agg,
                n_coarse,
                smoother,
            });
            current = coarse;
        }
        let coarse_lu = current.to_dense().lu();
        Ok(SaddleAmg {
            levels,
            coarse: current,
            coarse_lu,
            kind,
            c_scale: opts.c_scale_per_level,
        })
    }

    /// Re-projects the hierarchy for a new matrix with the same sparsity and
    /// aggregation (per-Newton-iteration refresh within a time step).
    pub fn refresh(&mut self, sys: &BlockSaddleSystem) -> Result<()> {
        let mut a = sys.a.clone();
        let mut b1t = sys.b1t.clone();
        let mut b2 = sys.b2.clone();
        let mut c = sys.c.clone();
        let kind = self.kind;
        let scale = self.c_scale;
        for level in self.levels.iter_mut() {
            level.smoother = build_smoother(kind, &a, &b1t, &b2, &c)?;
            let next_a = project_block(&a, &level.agg, level.n_coarse, 3, 3);
            let next_b1t = project_block(&b1t, &level.agg, level.n_coarse, 3, 1);
            let next_b2 = project_block(&b2, &level.agg, level.n_coarse, 1, 3);
            let mut next_c = project_block(&c, &level.agg, level.n_coarse, 1, 1);
            next_c.scale(scale);
            level.a = a;
            level.b1t = b1t;
            level.b2 = b2;
            level.c = c;
            a = next_a;
            b1t = next_b1t;
            b2 = next_b2;
            c = next_c;
        }
        self.coarse = BlockParts {
            n_vert: c.nrows(),
            a,
            b1t,
            b2,
            c,
        };
        self.coarse_lu = self.coarse.to_dense().lu();
        Ok(())
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len() + 1
    }

    /// The Braess-Sarazin Schur matrix of a level, when that smoother is
    /// active (for the dense Richardson-equivalence oracle).
    pub fn bs_schur(&self, level: usize) -> Option<&CsrMatrix> {
        match &self.levels[level].smoother {
            Smoother::BraessSarazin { s_tilde, .. } => Some(s_tilde),
            _ => None,
        }
    }

    /// Dof counts per level, finest first.
    pub fn level_dofs(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.levels.iter().map(|l| 4 * l.n_vert).collect();
        v.push(self.coarse.n_dofs());
        v
    }

    /// Reconstructs the Galerkin identity defect level by level: the coarse
    /// operator minus the triple product of the declared parts (with the
    /// declared C rescaling); zero by construction.
    pub fn galerkin_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (l, level) in self.levels.iter().enumerate() {
            let (next_a, next_b1t, next_b2, next_c) = if l + 1 < self.levels.len() {
                let n = &self.levels[l + 1];
                (&n.a, &n.b1t, &n.b2, &n.c)
            } else {
                (&self.coarse.a, &self.coarse.b1t, &self.coarse.b2, &self.coarse.c)
            };
            let pa = project_block(&level.a, &level.agg, level.n_coarse, 3, 3);
            let pb1t = project_block(&level.b1t, &level.agg, level.n_coarse, 3, 1);
            let pb2 = project_block(&level.b2, &level.agg, level.n_coarse, 1, 3);
            let mut pc = project_block(&level.c, &level.agg, level.n_coarse, 1, 1);
            pc.scale(self.c_scale);
            for (m, p) in [(next_a, &pa), (next_b1t, &pb1t), (next_b2, &pb2), (next_c, &pc)] {
                let d = (m.to_dense() - p.to_dense()).abs().max();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Probe hook: exposes one smoothing application (examples/diagnostics).
    pub fn smooth_for_probe(&self, l: usize, x: &mut [f64], rhs: &[f64]) {
        self.smooth(l, x, rhs);
    }

    /// Probe hook: a level's block system as a standalone problem.
    pub fn level_system_for_probe(&self, l: usize) -> BlockSaddleSystem {
        let (a, b1t, b2, c, nv) = if l < self.levels.len() {
            let lv = &self.levels[l];
            (lv.a.clone(), lv.b1t.clone(), lv.b2.clone(), lv.c.clone(), lv.n_vert)
        } else {
            (
                self.coarse.a.clone(),
                self.coarse.b1t.clone(),
                self.coarse.b2.clone(),
                self.coarse.c.clone(),
                self.coarse.n_vert,
            )
        };
        BlockSaddleSystem {
            b1: b1t.transpose(),
            r1: vec![0.0; 3 * nv],
            r2: vec![0.0; nv],
            a,
            b1t,
            b2,
            c,
        }
    }

    /// Probe hook: the raw two-grid coarse correction P K_c^{-1} P^T r.
    pub fn coarse_correction_for_probe(&self, r: &[f64]) -> Vec<f64> {
        let rc = self.restrict(0, r);
        let mut ec = vec![0.0; rc.len()];
        self.vcycle_level(1, &mut ec, &rc, 0, 0);
        let mut out = vec![0.0; r.len()];
        self.prolong_add(0, &ec, &mut out);
        out
    }

    fn smooth(&self, l: usize, x: &mut [f64], rhs: &[f64]) {
        let level = &self.levels[l];
        let nv = 3 * level.n_vert;
        match &level.smoother {
            Smoother::BraessSarazin {
                ainv,
                s_tilde: _,
                s_amg,
                steps,
            } => {
                for _ in 0..*steps {
                    let (x1, x2) = x.split_at_mut(nv);
                    let (r1, r2) = rhs.split_at(nv);
                    // velocity half-step with the relaxed Jacobi approximation
                    let mut rho1 = r1.to_vec();
                    level.a.mul_vec_add(-1.0, x1, &mut rho1);
                    level.b1t.mul_vec_add(-1.0, x2, &mut rho1);
                    for i in 0..nv {
                        x1[i] += ainv[i] * rho1[i];
                    }
                    // pressure half-step through the approximate Schur solve
                    let mut rho2 = r2.to_vec();
                    level.b2.mul_vec_add(-1.0, x1, &mut rho2);
                    level.c.mul_vec_add(1.0, x2, &mut rho2);
                    let rp = s_amg.apply_cycles(&rho2, 2);
                    for i in 0..level.n_vert {
                        x2[i] -= rp[i];
                    }
                    // velocity correction
                    let mut b1rp = vec![0.0; nv];
                    level.b1t.mul_vec_add(1.0, &rp, &mut b1rp);
                    for i in 0..nv {
                        x1[i] += ainv[i] * b1rp[i];
                    }
                }
            }
            Smoother::Vanka {
                patches,
                frozen,
                steps,
                omega,
            } => {
                for _ in 0..*steps {
                    for &d in frozen {
                        x[d] = rhs[d];
                    }
                    for (i, patch) in patches.iter().enumerate() {
                        let n = patch.vel.len() + 1;
                        let mut r = DVector::zeros(n);
                        {
                            let (x1, x2) = x.split_at(nv);
                            for (row, &v) in patch.vel.iter().enumerate() {
                                r[row] = rhs[v]
                                    - level.a.row_dot(v, x1)
                                    - level.b1t.row_dot(v, x2);
                            }
                            r[n - 1] = rhs[nv + i] - level.b2.row_dot(i, x1)
                                + level.c.row_dot(i, x2);
                        }
                        if let Some(delta) = patch.lu.solve(&r) {
                            for (row, &v) in patch.vel.iter().enumerate() {
                                x[v] += omega * delta[row];
                            }
                            x[nv + i] += omega * delta[n - 1];
                        }
                    }
                }
            }
        }
    }

    fn level_apply(&self, l: usize, x: &[f64], y: &mut [f64]) {
        let level = &self.levels[l];
        let nv = 3 * level.n_vert;
        let (x1, x2) = x.split_at(nv);
        let (y1, y2) = y.split_at_mut(nv);
        level.a.mul_vec(x1, y1);
        level.b1t.mul_vec_add(1.0, x2, y1);
        level.b2.mul_vec(x1, y2);
        level.c.mul_vec_add(-1.0, x2, y2);
    }

    fn restrict(&self, l: usize, fine: &[f64]) -> Vec<f64> {
        let level = &self.levels[l];
        let nv = 3 * level.n_vert;
        let nc = level.n_coarse;
        let mut out = vec![0.0; 4 * nc];
        for v in 0..level.n_vert {
            let a = level.agg[v];
            for c in 0..3 {
                out[3 * a + c] += fine[3 * v + c];
            }
            out[3 * nc + a] += fine[nv + v];
        }
        out
    }

    fn prolong_add(&self, l: usize, coarse: &[f64], fine: &mut [f64]) {
        let level = &self.levels[l];
        let nv = 3 * level.n_vert;
        let nc = level.n_coarse;
        for v in 0..level.n_vert {
            let a = level.agg[v];
            for c in 0..3 {
                fine[3 * v + c] += coarse[3 * a + c];
            }
            fine[nv + v] += coarse[3 * nc + a];
        }
    }

    fn vcycle_level(&self, l: usize, x: &mut [f64], rhs: &[f64], pre: usize, post: usize) {
        if l == self.levels.len() {
            let sol = self.coarse_lu.solve(&DVector::from_column_slice(rhs));
            if let Some(sol) = sol {
                x.copy_from_slice(sol.as_slice());
            }
            return;
        }
        for _ in 0..pre {
            self.smooth(l, x, rhs);
        }
        let mut r = vec![0.0; rhs.len()];
        self.level_apply(l, x, &mut r);
        for (ri, bi) in r.iter_mut().zip(rhs) {
            *ri = bi - *ri;
        }
        let rc = self.restrict(l, &r);
        let mut ec = vec![0.0; rc.len()];
        self.vcycle_level(l + 1, &mut ec, &rc, pre, post);
        self.prolong_add(l, &ec, x);
        for _ in 0..post {
            self.smooth(l, x, rhs);
        }
    }

    /// One V-cycle with equal pre- and post-smoothing step counts taken from
    /// the smoother kind.
    pub fn vcycle(&self, x: &mut [f64], rhs: &[f64]) {
        self.vcycle_level(0, x, rhs, 1, 1);
    }
}

/// Stationary V-cycle iteration on `K x = rhs` until the relative l2 residual
/// drops below `tol`.
pub fn amg_solve(
    amg: &SaddleAmg,
    sys: &BlockSaddleSystem,
    rhs: &[f64],
    tol: f64,
    max_cycles: usize,
) -> (Vec<f64>, SolveReport) {
    let start = Instant::now();
    let mut x = vec![0.0; rhs.len()];
    let nb = norm2(rhs);
    let mut report = SolveReport {
        iterations: 0,
        residual_norms: vec![nb],
        achieved_reduction: 1.0,
        wall_ms: 0.0,
        converged: nb == 0.0,
    };
    if nb == 0.0 {
        return (x, report);
    }
    let mut r = vec![0.0; rhs.len()];
    let mut rnorm = nb;
    for cycle in 1..=max_cycles {
        amg.vcycle(&mut x, rhs);
        sys.apply(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(rhs) {
            *ri = bi - *ri;
        }
        rnorm = norm2(&r);
        report.iterations = cycle;
        report.residual_norms.push(rnorm);
        if rnorm <= tol * nb {
            break;
        }
    }
    report.achieved_reduction = rnorm / nb;
    report.converged = rnorm <= tol * nb;
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    (x, report)
}
