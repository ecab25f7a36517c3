//! Aggregation AMG for point-blocked systems: block size 1 (pressure
//! Laplacians, Schur matrices) or 3 (velocity/displacement blocks with the
//! three components of a vertex aggregated together).
//!
//! Unsmoothed aggregation, Galerkin coarse operators, symmetric Gauss-Seidel
//! smoothing, dense LU on the coarsest level. Deterministic by construction.

use crate::error::{FsiError, Result};
use crate::fem::sparse::{axpy, dot, norm2};
use crate::fem::CsrMatrix;
use nalgebra::DVector;

#[derive(Debug, Clone, Copy)]
pub struct PointAmgOptions {
    /// stop coarsening once a level has at most this many dofs
    pub coarse_max_dofs: usize,
    pub max_levels: usize,
    /// cap on aggregate size (nodes)
    pub aggregate_cap: usize,
}

impl Default for PointAmgOptions {
    fn default() -> Self {
        PointAmgOptions {
            coarse_max_dofs: 200,
            max_levels: 25,
            aggregate_cap: 12,
        }
    }
}

struct PointLevel {
    a: CsrMatrix,
    /// node -> coarse node
    agg: Vec<usize>,
    n_coarse_nodes: usize,
}

pub struct PointAmg {
    block: usize,
    levels: Vec<PointLevel>,
    coarse: CsrMatrix,
    coarse_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Greedy two-pass aggregation over a node graph. Pass one roots an aggregate
/// at every node whose neighbors are all free and absorbs them (up to the
/// cap); pass two attaches leftovers to the most-connected neighbor aggregate.
pub fn aggregate_nodes(adj: &[Vec<usize>], cap: usize) -> Vec<usize> {
    let n = adj.len();
    let mut agg = vec![usize::MAX; n];
    let mut next = 0usize;
    for v in 0..n {
        if agg[v] != usize::MAX {
            continue;
        }
        if adj[v].iter().any(|&u| agg[u] != usize::MAX) {
            continue;
        }
        agg[v] = next;
        let mut size = 1;
        for &u in &adj[v] {
            if size >= cap {
                break;
            }
            if agg[u] == usize::MAX {
                agg[u] = next;
                size += 1;
            }
        }
        next += 1;
    }
    // leftovers join the most-connected neighboring aggregate that still has
    // room (the cap bounds the coarsening ratio)
    let mut sizes = vec![0usize; next];
    for &a in agg.iter().filter(|&&a| a != usize::MAX) {
        sizes[a] += 1;
    }
    for v in 0..n {
        if agg[v] != usize::MAX {
            continue;
        }
        let mut counts: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
        for &u in &adj[v] {
            if agg[u] != usize::MAX && agg[u] < sizes.len() && sizes[agg[u]] < cap {
                *counts.entry(agg[u]).or_insert(0) += 1;
            }
        }
        match counts.into_iter().max_by_key(|&(a, c)| (c, usize::MAX - a)) {
            Some((a, _)) => {
                agg[v] = a;
                sizes[a] += 1;
            }
            None => {
                agg[v] = next;
                sizes.push(1);
                next += 1;
            }
        }
    }
    agg
}

/// Node adjacency from the block pattern of a point-blocked matrix. Pattern
/// positions count even when the stored value is zero: Dirichlet rows are
/// eliminated to identity but must still aggregate with their geometric
/// neighbors, or the coarsening stagnates on a sea of singletons.
fn node_graph(a: &CsrMatrix, block: usize) -> Vec<Vec<usize>> {
    let n = a.nrows() / block;
    let mut adj = vec![Vec::new(); n];
    for i in 0..a.nrows() {
        let node = i / block;
        let (cols, _) = a.row(i);
        for &j in cols {
            let nj = j / block;
            if nj != node {
                adj[node].push(nj);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    adj
}

fn galerkin_point(a: &CsrMatrix, agg: &[usize], n_coarse_nodes: usize, block: usize) -> CsrMatrix {
    let nc = n_coarse_nodes * block;
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(a.nnz());
    for i in 0..a.nrows() {
        let ic = agg[i / block] * block + i % block;
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if v != 0.0 {
                t.push((ic, agg[j / block] * block + j % block, v));
            }
        }
    }
    CsrMatrix::from_triplets(nc, nc, &mut t)
}

fn sgs_sweep(a: &CsrMatrix, x: &mut [f64], b: &[f64]) {
    let n = a.nrows();
    for i in 0..n {
        let d = a.get(i, i);
        if d != 0.0 {
            let r = b[i] - a.row_dot(i, x);
            x[i] += r / d;
        }
    }
    for i in (0..n).rev() {
        let d = a.get(i, i);
        if d != 0.0 {
            let r = b[i] - a.row_dot(i, x);
            x[i] += r / d;
        }
    }
}

impl PointAmg {
    pub fn build(a: &CsrMatrix, block: usize, opts: &PointAmgOptions) -> Result<PointAmg> {
        assert_eq!(a.nrows(), a.ncols());
        assert_eq!(a.nrows() % block, 0);
        let mut levels = Vec::new();
        let mut current = a.clone();
        for _ in 0..opts.max_levels {
            if current.nrows() <= opts.coarse_max_dofs {
                break;
            }
            let adj = node_graph(&current, block);
            let agg = aggregate_nodes(&adj, opts.aggregate_cap);
            let n_coarse_nodes = agg.iter().max().map_or(0, |m| m + 1);
            let n_nodes = adj.len();
            if n_coarse_nodes == 0 || (n_nodes as f64) / (n_coarse_nodes as f64) < 1.2 {
                break; // stagnation: stop and solve this level directly
            }
            let coarse = galerkin_point(&current, &agg, n_coarse_nodes, block);
            levels.push(PointLevel {
                a: current,
                agg,
                n_coarse_nodes,
            });
            current = coarse;
        }
        let dense = current.to_dense();
        let coarse_lu = dense.lu();
        Ok(PointAmg {
            block,
            levels,
            coarse: current,
            coarse_lu,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len() + 1
    }

    fn restrict(&self, level: usize, fine: &[f64]) -> Vec<f64> {
        let l = &self.levels[level];
        let mut out = vec![0.0; l.n_coarse_nodes * self.block];
        for (i, &v) in fine.iter().enumerate() {
            out[l.agg[i / self.block] * self.block + i % self.block] += v;
        }
        out
    }

    fn prolong_add(&self, level: usize, coarse: &[f64], fine: &mut [f64]) {
        let l = &self.levels[level];
        for (i, v) in fine.iter_mut().enumerate() {
            *v += coarse[l.agg[i / self.block] * self.block + i % self.block];
        }
    }

    fn vcycle_level(&self, level: usize, x: &mut [f64], b: &[f64], pre: usize, post: usize) {
        if level == self.levels.len() {
            let rhs = DVector::from_column_slice(b);
            if let Some(sol) = self.coarse_lu.solve(&rhs) {
                x.copy_from_slice(sol.as_slice());
            } else {
                // singular coarse operator: fall back to smoothing
                for _ in 0..10 {
                    sgs_sweep(&self.coarse, x, b);
                }
            }
            return;
        }
        let a = &self.levels[level].a;
        for _ in 0..pre {
            sgs_sweep(a, x, b);
        }
        let mut r = vec![0.0; b.len()];
        a.mul_vec(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let rc = self.restrict(level, &r);
        let mut ec = vec![0.0; rc.len()];
        self.vcycle_level(level + 1, &mut ec, &rc, pre, post);
        self.prolong_add(level, &ec, x);
        for _ in 0..post {
            sgs_sweep(a, x, b);
        }
    }

    /// One V(1,1) cycle applied to the residual equation, starting from x.
    pub fn vcycle(&self, x: &mut [f64], b: &[f64]) {
        self.vcycle_level(0, x, b, 1, 1);
    }

    /// Fixed number of V-cycles from a zero initial guess (a linear operator,
    /// which the preconditioner contracts rely on).
    pub fn apply_cycles(&self, b: &[f64], cycles: usize) -> Vec<f64> {
        let mut x = vec![0.0; b.len()];
        for _ in 0..cycles {
            self.vcycle_level(0, &mut x, b, 1, 1);
        }
        x
    }

    /// Stationary V-cycle iteration to a relative residual.
    pub fn solve_stationary(&self, a: &CsrMatrix, b: &[f64], tol: f64, max_cycles: usize) -> (Vec<f64>, usize) {
        let mut x = vec![0.0; b.len()];
        let nb = norm2(b);
        if nb == 0.0 {
            return (x, 0);
        }
        let mut r = vec![0.0; b.len()];
        for cycle in 1..=max_cycles {
            self.vcycle(&mut x, b);
            a.mul_vec(&x, &mut r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            if norm2(&r) <= tol * nb {
                return (x, cycle);
            }
        }
        (x, max_cycles)
    }

    /// Conjugate gradients preconditioned by one V-cycle; for SPD systems.
    pub fn solve_pcg(&self, a: &CsrMatrix, b: &[f64], tol: f64, max_it: usize) -> Result<(Vec<f64>, usize)> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let nb = norm2(b);
        if nb == 0.0 {
            return Ok((x, 0));
        }
        let mut r = b.to_vec();
        let mut z = self.apply_cycles(&r, 1);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        for it in 1..=max_it {
            a.mul_vec(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(FsiError::LinearSolve(format!(
                    "PCG breakdown: p^T A p = {pap:.3e} (matrix not SPD?)"
                )));
            }
            let alpha = rz / pap;
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &ap, &mut r);
            if norm2(&r) <= tol * nb {
                return Ok((x, it));
            }
            z = self.apply_cycles(&r, 1);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
            rz = rz_new;
        }
        Err(FsiError::LinearSolve(format!(
            "PCG did not reach tol {tol:.1e} in {max_it} iterations"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::scalar_laplacian;
    use crate::mesh::{generate_tube_mesh, TubeParams};

    fn dirichlet_laplacian() -> (CsrMatrix, usize) {
        let mesh = generate_tube_mesh(&TubeParams::benchmark(16, 12, 3, 1)).unwrap();
        let sub = mesh.extract(true);
        let mut k = scalar_laplacian(sub.n_vertices(), &sub.tets, &sub.vertices).unwrap();
        let mut boundary = vec![false; sub.n_vertices()];
        for tri in &sub.boundary {
            for &v in &tri.vertices {
                boundary[v] = true;
            }
        }
        // eliminate boundary rows/cols to make it SPD
        let n = k.nrows();
        for i in 0..n {
            if boundary[i] {
                k.set_identity_row(i);
            }
        }
        let (rp, ci) = (k.row_ptr().to_vec(), k.col_idx().to_vec());
        let vals = k.values_mut();
        for i in 0..n {
            if !boundary[i] {
                for kk in rp[i]..rp[i + 1] {
                    if boundary[ci[kk]] {
                        vals[kk] = 0.0;
                    }
                }
            }
        }
        (k, n)
    }

    #[test]
    fn pcg_with_amg_reaches_tight_tolerance() {
        let (k, n) = dirichlet_laplacian();
        let amg = PointAmg::build(&k, 1, &PointAmgOptions::default()).unwrap();
        assert!(amg.n_levels() >= 2);
        let b: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let (x, _iters) = amg.solve_pcg(&k, &b, 1e-12, 500).unwrap();
        let mut r = vec![0.0; n];
        k.mul_vec(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(&b) {
            *ri = bi - *ri;
        }
        assert!(norm2(&r) <= 1e-10 * norm2(&b));
    }

    #[test]
    fn stationary_vcycles_converge_on_spd_laplacian() {
        let (k, n) = dirichlet_laplacian();
        let amg = PointAmg::build(&k, 1, &PointAmgOptions::default()).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
        let (_, cycles) = amg.solve_stationary(&k, &b, 1e-8, 200);
        assert!(cycles < 200, "stationary AMG did not converge");
    }

    #[test]
    fn aggregation_covers_all_nodes() {
        let adj = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
        let agg = aggregate_nodes(&adj, 12);
        assert!(agg.iter().all(|&a| a != usize::MAX));
        let n_agg = agg.iter().max().unwrap() + 1;
        assert!(n_agg >= 1 && n_agg <= 2);
    }
}
