//! Mixed displacement-pressure hyperelastic dynamics of the vessel wall:
//! Newmark-beta time discretization, PSPG-stabilized P1-P1 assembly, and a
//! Newton solve per time step driven by the interface Neumann load.
//!
//! Residuals (reference configuration; v a displacement test function, q a
//! pressure test function):
//!
//! ```text
//! R1 = (rho/(beta dt^2) d, v) + (S', F^T grad v) - (p J F^{-T}, grad v)
//!      - (r_s, v) - <g_n, v>
//! R2 = -(J - 1, q) - (1/kappa)(p, q) + W_s
//! W_s = sum_T tau (r_s - rho/(beta dt^2) d - J F^{-T} grad p, F^{-T} grad q)_T
//! ```
//!
//! with `tau = h_T^2 / (4 mu_l)` per layer. Under P1 every integrand is
//! affine, so nodal means and the analytic element mass matrix integrate the
//! forms exactly. The Jacobian linearizes everything, including the
//! geometry-dependent factors inside `W_s`; the finite-difference oracle in
//! the tests keeps it honest.

use crate::coupling::ToleranceController;
use crate::error::{FsiError, Result};
use crate::fem::{
    assemble_system, increment_norm, BlockPattern, BlockSaddleSystem, CsrMatrix, DofMap,
    ElementGeometry, LocalSystem,
};
use crate::linsolve::{self, NewtonReport, SaddleSolver};
use crate::materials::{
    fiber_frame, kinematics, material_tangent, ArteryLayerParams, FiberDirections, Model,
    MooneyRivlinParams,
};
use crate::mesh::{BoundaryTag, Region, SubMesh};
use nalgebra::{Matrix3, Vector3};

/// Newmark-beta history of one time level.
#[derive(Debug, Clone)]
pub struct NewmarkState {
    pub d: Vec<f64>,
    pub d_dot: Vec<f64>,
    pub d_ddot: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub dt: f64,
}

impl NewmarkState {
    pub fn at_rest(n_vel: usize, beta: f64, gamma: f64, dt: f64) -> NewmarkState {
        NewmarkState {
            d: vec![0.0; n_vel],
            d_dot: vec![0.0; n_vel],
            d_ddot: vec![0.0; n_vel],
            beta,
            gamma,
            dt,
        }
    }
}

/// Advances the Newmark history to a new converged displacement:
///
/// ```text
/// a_new = (d_new - d)/(beta dt^2) - v/(beta dt) - (1-2 beta)/(2 beta) a
/// v_new = v + gamma dt a_new + (1-gamma) dt a
/// ```
pub fn newmark_advance(state: &NewmarkState, d_new: &[f64]) -> NewmarkState {
    let (beta, gamma, dt) = (state.beta, state.gamma, state.dt);
    let n = state.d.len();
    assert_eq!(d_new.len(), n);
    let mut a_new = vec![0.0; n];
    let mut v_new = vec![0.0; n];
    for i in 0..n {
        a_new[i] = (d_new[i] - state.d[i]) / (beta * dt * dt)
            - state.d_dot[i] / (beta * dt)
            - (1.0 - 2.0 * beta) / (2.0 * beta) * state.d_ddot[i];
        v_new[i] = state.d_dot[i] + gamma * dt * a_new[i] + (1.0 - gamma) * dt * state.d_ddot[i];
    }
    NewmarkState {
        d: d_new.to_vec(),
        d_dot: v_new,
        d_ddot: a_new,
        beta,
        gamma,
        dt,
    }
}

/// Nodal displacement and pressure of the wall.
#[derive(Debug, Clone)]
pub struct StructureState {
    pub d: Vec<f64>,
    pub p: Vec<f64>,
}

impl StructureState {
    pub fn at_rest(n_vertices: usize) -> StructureState {
        StructureState {
            d: vec![0.0; 3 * n_vertices],
            p: vec![0.0; n_vertices],
        }
    }
}

/// Interface Neumann load in assembled nodal-force form (kPa mm^2), nonzero
/// only on interface vertices.
#[derive(Debug, Clone)]
pub struct StructureLoad {
    pub nodal_force: Vec<f64>,
}

impl StructureLoad {
    pub fn zero(n_vertices: usize) -> StructureLoad {
        StructureLoad {
            nodal_force: vec![0.0; 3 * n_vertices],
        }
    }
}

/// Wall constitutive choice.
#[derive(Debug, Clone)]
pub enum WallModel {
    MooneyRivlin {
        c10: f64,
        c01: f64,
    },
    Artery {
        media: ArteryLayer,
        adventitia: ArteryLayer,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct ArteryLayer {
    pub c10: f64,
    pub k1: f64,
    pub k2: f64,
    pub alpha_deg: f64,
}

enum ElementMaterial {
    MooneyRivlin(MooneyRivlinParams),
    Artery {
        params: ArteryLayerParams,
        fibers: FiberDirections,
    },
}

/// The structure sub-problem on its extracted mesh, with per-element material
/// data, the Dirichlet map (fixed ends), and a cached assembly pattern.
pub struct StructureProblem {
    pub sub: SubMesh,
    pub rho_s: f64,
    pub kappa: f64,
    pub beta: f64,
    pub gamma: f64,
    pub dt: f64,
    /// Schur parameter of the Krylov preconditioner, theta = O(c10)
    pub theta: f64,
    pub dofs: DofMap,
    pub m1: CsrMatrix,
    pub m2: CsrMatrix,
    pattern: BlockPattern,
    elements: Vec<ElementMaterial>,
    taus: Vec<f64>,
}

impl StructureProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sub: SubMesh,
        model: &WallModel,
        rho_s: f64,
        kappa: f64,
        beta: f64,
        gamma: f64,
        dt: f64,
        theta: f64,
    ) -> Result<StructureProblem> {
        let n = sub.n_vertices();
        let mut dofs = DofMap::new(n);
        for v in sub.tagged_vertices(BoundaryTag::SolidEnds) {
            dofs.fix_vertex(v, Vector3::zeros());
        }
        let (m1, m2) = crate::fem::mass_matrices(n, &sub.tets, &sub.vertices)?;
        let pattern = BlockPattern::build(n, &sub.tets);
        let mut elements = Vec::with_capacity(sub.n_tets());
        let mut taus = Vec::with_capacity(sub.n_tets());
        for (e, tet) in sub.tets.iter().enumerate() {
            let geom = ElementGeometry::new(&sub.vertices, tet)?;
            let (mat, mu_l) = match model {
                WallModel::MooneyRivlin { c10, c01 } => {
                    let params = MooneyRivlinParams {
                        c10: *c10,
                        c01: *c01,
                        kappa,
                    };
                    (ElementMaterial::MooneyRivlin(params), params.mu_linear())
                }
                WallModel::Artery { media, adventitia } => {
                    let layer = match sub.regions[e] {
                        Region::Media => media,
                        Region::Adventitia => adventitia,
                        Region::Fluid => {
                            return Err(FsiError::Mesh(
                                "fluid element in the structure sub-mesh".into(),
                            ))
                        }
                    };
                    let centroid = (sub.vertices[tet[0]]
                        + sub.vertices[tet[1]]
                        + sub.vertices[tet[2]]
                        + sub.vertices[tet[3]])
                        / 4.0;
                    let params = ArteryLayerParams {
                        c10: layer.c10,
                        k1: layer.k1,
                        k2: layer.k2,
                        alpha_deg: layer.alpha_deg,
                        kappa,
                        frame: fiber_frame(centroid)?,
                    };
                    let fibers = params.fiber_directions();
                    let mu_l = params.mu_linear();
                    (ElementMaterial::Artery { params, fibers }, mu_l)
                }
            };
            taus.push(geom.h * geom.h / (4.0 * mu_l));
            elements.push(mat);
        }
        Ok(StructureProblem {
            sub,
            rho_s,
            kappa,
            beta,
            gamma,
            dt,
            theta,
            dofs,
            m1,
            m2,
            pattern,
            elements,
            taus,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.sub.n_vertices()
    }

    /// Nodal history force `r_s = rho/(beta dt^2) d + rho/(beta dt) v +
    /// rho (1-2 beta)/(2 beta) a` as a P1 field.
    fn history_field(&self, h: &NewmarkState) -> Vec<f64> {
        let cm = self.rho_s / (self.beta * self.dt * self.dt);
        let cv = self.rho_s / (self.beta * self.dt);
        let ca = self.rho_s * (1.0 - 2.0 * self.beta) / (2.0 * self.beta);
        (0..h.d.len())
            .map(|i| cm * h.d[i] + cv * h.d_dot[i] + ca * h.d_ddot[i])
            .collect()
    }

    fn element_kernel(
        &self,
        e: usize,
        geom: &ElementGeometry,
        tet: &[usize; 4],
        d: &[f64],
        p: &[f64],
        rs: &[f64],
    ) -> Result<LocalSystem> {
        let cm = self.rho_s / (self.beta * self.dt * self.dt);
        let tau = self.taus[e];
        let vol = geom.volume;
        let g = &geom.grad;

        let dn: [Vector3<f64>; 4] = std::array::from_fn(|i| {
            Vector3::new(d[3 * tet[i]], d[3 * tet[i] + 1], d[3 * tet[i] + 2])
        });
        let rn: [Vector3<f64>; 4] = std::array::from_fn(|i| {
            Vector3::new(rs[3 * tet[i]], rs[3 * tet[i] + 1], rs[3 * tet[i] + 2])
        });
        let pn: [f64; 4] = std::array::from_fn(|i| p[tet[i]]);

        // constant displacement gradient and kinematics
        let mut grad_d = Matrix3::zeros();
        for i in 0..4 {
            grad_d += dn[i] * g[i].transpose();
        }
        let relabel = |err: FsiError| match err {
            FsiError::ElementInversion { j, .. } => FsiError::ElementInversion { element: e, j },
            FsiError::FiberOverflow { exponent, .. } => FsiError::FiberOverflow {
                element: e,
                exponent,
            },
            other => other,
        };
        let (kin, model) = match &self.elements[e] {
            ElementMaterial::MooneyRivlin(m) => {
                (kinematics(&grad_d, None).map_err(relabel)?, Model::MooneyRivlin(m))
            }
            ElementMaterial::Artery { params, fibers } => (
                kinematics(&grad_d, Some(fibers)).map_err(relabel)?,
                Model::Artery(params),
            ),
        };
        let p_bar = 0.25 * (pn[0] + pn[1] + pn[2] + pn[3]);
        let stress = model.stress(&kin, p_bar).map_err(relabel)?;
        let tangent = material_tangent(&model, &kin, p_bar)?;

        let f = kin.f;
        let f_inv = kin.f_inv;
        let f_inv_t = f_inv.transpose();
        let j = kin.j;
        let grad_p: Vector3<f64> = (0..4).map(|i| pn[i] * g[i]).sum();
        let d_bar: Vector3<f64> = 0.25 * (dn[0] + dn[1] + dn[2] + dn[3]);
        let r_bar: Vector3<f64> = 0.25 * (rn[0] + rn[1] + rn[2] + rn[3]);
        // stabilization argument w = r_s - cm d - J F^{-T} grad p at the centroid
        let w_bar = r_bar - cm * d_bar - j * f_inv_t * grad_p;
        let ft_g: [Vector3<f64>; 4] = std::array::from_fn(|i| f_inv_t * g[i]);
        let m_el = |i: usize, jj: usize| if i == jj { vol / 10.0 } else { vol / 20.0 };

        let mut local = LocalSystem::zero();

        // residuals
        let fs = f * stress.s; // first Piola-Kirchhoff P = F S
        for i in 0..4 {
            let elastic = vol * (fs * g[i]);
            for a in 0..3 {
                let mut r = elastic[a];
                for jj in 0..4 {
                    r += m_el(i, jj) * (cm * dn[jj][a] - rn[jj][a]);
                }
                local.r[3 * i + a] = r;
            }
            let mut r2 = -(j - 1.0) * vol / 4.0;
            for jj in 0..4 {
                r2 -= m_el(i, jj) * pn[jj] / self.kappa;
            }
            r2 += tau * vol * w_bar.dot(&ft_g[i]);
            local.r[12 + i] = r2;
        }

        // Jacobian: displacement directions (jj, b) have dF = e_b g_j^T
        let mut t_mat = [[Matrix3::zeros(); 3]; 4]; // dF S + F dS
        let mut d_jfinvt = [[Matrix3::zeros(); 3]; 4]; // d(J F^{-T})
        let mut d_j_scalar = [[0.0f64; 3]; 4];
        for jj in 0..4 {
            for b in 0..3 {
                let mut e_b = Vector3::zeros();
                e_b[b] = 1.0;
                let df = e_b * g[jj].transpose();
                let f_row_b = f.transpose() * e_b;
                let dc = g[jj] * f_row_b.transpose() + f_row_b * g[jj].transpose();
                let ds = tangent.apply(&dc); // includes the -p_bar d(J C^{-1}) part
                t_mat[jj][b] = df * stress.s + f * ds;
                let dj = j * ft_g[jj][b];
                d_j_scalar[jj][b] = dj;
                let finv_eb = f_inv * e_b;
                d_jfinvt[jj][b] = dj * f_inv_t - j * (ft_g[jj] * finv_eb.transpose());
            }
        }
        for i in 0..4 {
            for a in 0..3 {
                let row = 3 * i + a;
                for jj in 0..4 {
                    for b in 0..3 {
                        let mut k = vol * (t_mat[jj][b] * g[i])[a];
                        if a == b {
                            k += cm * m_el(i, jj);
                        }
                        local.k[row][3 * jj + b] = k;
                    }
                    local.k[row][12 + jj] = -(vol / 4.0) * j * ft_g[i][a];
                }
            }
            for jj in 0..4 {
                for b in 0..3 {
                    let mut e_b = Vector3::zeros();
                    e_b[b] = 1.0;
                    let mut k = -(vol / 4.0) * d_j_scalar[jj][b];
                    let dw = -cm * 0.25 * e_b - d_jfinvt[jj][b] * grad_p;
                    let finv_eb = f_inv * e_b;
                    let d_finvt_gi = -ft_g[jj] * finv_eb.dot(&g[i]);
                    k += tau * vol * (dw.dot(&ft_g[i]) + w_bar.dot(&d_finvt_gi));
                    local.k[12 + i][3 * jj + b] = k;
                }
                local.k[12 + i][12 + jj] =
                    -m_el(i, jj) / self.kappa - tau * vol * j * ft_g[jj].dot(&ft_g[i]);
            }
        }
        Ok(local)
    }

    /// Assembles the Newton system at the given state. The guess must satisfy
    /// the Dirichlet constraints (fixed ends).
    pub fn assemble(
        &self,
        guess: &StructureState,
        history: &NewmarkState,
        load: &StructureLoad,
    ) -> Result<BlockSaddleSystem> {
        let rs = self.history_field(history);
        let mut sys = assemble_system(
            self.sub.n_vertices(),
            &self.sub.tets,
            &self.sub.vertices,
            &self.dofs,
            &self.pattern,
            |e, geom, tet| self.element_kernel(e, geom, tet, &guess.d, &guess.p, &rs),
        )?;
        // interface Neumann load: R1 -= g_n (constrained rows stay identity)
        for (dof, f) in load.nodal_force.iter().enumerate() {
            if !self.dofs.is_dirichlet_vel(dof) {
                sys.r1[dof] -= f;
            }
        }
        Ok(sys)
    }
}

/// Newton solve of one time step from a warm-start guess, with step halving
/// on element inversion (up to 5 times).
pub fn solve_structure_step(
    problem: &StructureProblem,
    history: &NewmarkState,
    load: &StructureLoad,
    initial: &StructureState,
    solver: &SaddleSolver,
    tols: &ToleranceController,
    cache: &mut linsolve::SaddleSolveCache,
) -> Result<(StructureState, NewtonReport)> {
    let mut state = initial.clone();
    for (dof, val) in problem.dofs.dirichlet_vel.iter().enumerate() {
        if let Some(v) = val {
            state.d[dof] = *v;
        }
    }
    let mut report = NewtonReport::default();
    let t0 = std::time::Instant::now();
    let mut sys = problem.assemble(&state, history, load)?;
    if std::env::var_os("FSIKIT_TIMING").is_some() {
        eprintln!("[timing] structure assemble: {:.0}ms", t0.elapsed().as_secs_f64() * 1e3);
    }
    let mut base_norm: Option<f64> = None;
    // machine-precision floor: increments at round-off scale cannot shrink
    // further relative to an already-converged warm start
    let state_scale = increment_norm(&problem.m1, &problem.m2, &state.d, &state.p)?;
    let floor = 1e-13 * state_scale.max(1.0);

    for k in 1..=tols.max_newton {
        let eps1 = tols.inner_tolerance(k, &report.reductions());
        let rhs: Vec<f64> = sys.rhs().iter().map(|r| -r).collect();
        let (delta, inner_iters) = linsolve::solve_saddle(
            &sys,
            &rhs,
            solver,
            linsolve::SaddleKind::Structure {
                theta: problem.theta,
                kappa: problem.kappa,
                mp_diag: problem.m2.diagonal(),
            },
            eps1,
            cache,
        )?;
        let nv = sys.n_vel();
        let mut scale = 1.0;
        let mut attempt = 0usize;
        let (next_state, next_sys) = loop {
            let mut trial = state.clone();
            for i in 0..nv {
                trial.d[i] += scale * delta[i];
            }
            for i in 0..problem.n_vertices() {
                trial.p[i] += scale * delta[nv + i];
            }
            match problem.assemble(&trial, history, load) {
                Ok(s) => break (trial, s),
                Err(e @ FsiError::ElementInversion { .. })
                | Err(e @ FsiError::FiberOverflow { .. }) => {
                    if attempt >= 5 {
                        return Err(e);
                    }
                    attempt += 1;
                    scale *= 0.5;
                }
                Err(e) => return Err(e),
            }
        };
        let dwn: Vec<f64> = delta[..nv].iter().map(|v| v * scale).collect();
        let dpn: Vec<f64> = delta[nv..].iter().map(|v| v * scale).collect();
        let norm = increment_norm(&problem.m1, &problem.m2, &dwn, &dpn)?;
        report.increment_norms.push(norm);
        report.inner_iterations.push(inner_iters);
        report.inner_tolerances.push(eps1);
        if std::env::var_os("FSIKIT_TRACE").is_some() {
            eprintln!("[fsikit]   structure newton {k}: |d|_M={norm:.3e} eps1={eps1:.1e} inner={inner_iters} scale={scale}");
        }
        state = next_state;
        sys = next_sys;

        let base = *base_norm.get_or_insert(norm);
        let stop = match tols.absolute_newton_base {
            Some(b) => norm <= tols.eps2 * b,
            None => norm <= tols.eps2 * base,
        };
        if stop || base == 0.0 || norm <= floor {
            report.converged = true;
            return Ok((state, report));
        }
        // fail fast when the iteration explodes or stops making progress
        // (a convergent tail at least halves the increment every three
        // iterations; wandering far from the tolerance is divergence)
        let n = &report.increment_norms;
        let l = n.len();
        let stalled = l >= 5 && n[l - 1] > 0.5 * n[l - 4];
        if norm > 1e3 * base || (stalled && norm > 1e3 * tols.eps2 * base) {
            return Err(FsiError::NewtonDiverged {
                iterations: l,
                history: report.increment_norms,
            });
        }
        let _ = k;
    }
    Err(FsiError::NewtonDiverged {
        iterations: tols.max_newton,
        history: report.increment_norms,
    })
}

/// Interface displacement trace (one vector per interface vertex).
pub fn interface_trace(d: &[f64], interface_vertices: &[usize]) -> Vec<Vector3<f64>> {
    interface_vertices
        .iter()
        .map(|&v| Vector3::new(d[3 * v], d[3 * v + 1], d[3 * v + 2]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::ToleranceController;
    use crate::linsolve::SaddleSolveCache;
    use crate::mesh::{generate_tube_mesh, TubeParams};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tube_problem(model: WallModel) -> StructureProblem {
        let mesh = generate_tube_mesh(&TubeParams::benchmark(6, 8, 1, 1)).unwrap();
        let sub = mesh.extract(false);
        StructureProblem::new(sub, &model, 1.2, 1e5, 0.625, 1.0, 0.125, 6.0).unwrap()
    }

    pub(crate) fn mr_model() -> WallModel {
        WallModel::MooneyRivlin { c10: 3.0, c01: 0.3 }
    }

    pub(crate) fn artery_model() -> WallModel {
        WallModel::Artery {
            media: ArteryLayer {
                c10: 3.0,
                k1: 2.3632,
                k2: 0.8393,
                alpha_deg: 29.0,
            },
            adventitia: ArteryLayer {
                c10: 0.3,
                k1: 0.562,
                k2: 0.7112,
                alpha_deg: 62.0,
            },
        }
    }

    #[test]
    fn newmark_arithmetic() {
        let mut h = NewmarkState::at_rest(1, 0.625, 1.0, 0.125);
        h = newmark_advance(&h, &[1.0]);
        assert_relative_eq!(h.d_ddot[0], 102.4, epsilon = 1e-12);
        assert_relative_eq!(h.d_dot[0], 12.8, epsilon = 1e-12);
        let h0 = NewmarkState::at_rest(2, 0.625, 1.0, 0.125);
        let h1 = newmark_advance(&h0, &[0.0, 0.0]);
        assert!(h1.d_ddot.iter().all(|&v| v == 0.0));
        assert!(h1.d_dot.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn newmark_exact_for_quadratic_motion() {
        // with beta = 1/2 the update reproduces constant acceleration exactly
        let dt = 0.2;
        let h = NewmarkState {
            d: vec![1.0],
            d_dot: vec![2.0],
            d_ddot: vec![3.0],
            beta: 0.5,
            gamma: 0.5,
            dt,
        };
        let d_new = [1.0 + dt * 2.0 + 0.5 * dt * dt * 3.0];
        let h1 = newmark_advance(&h, &d_new);
        assert_relative_eq!(h1.d_ddot[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rest_state_has_zero_residual() {
        for model in [mr_model(), artery_model()] {
            let p = tube_problem(model);
            let h = NewmarkState::at_rest(3 * p.n_vertices(), 0.625, 1.0, 0.125);
            let sys = p
                .assemble(
                    &StructureState::at_rest(p.n_vertices()),
                    &h,
                    &StructureLoad::zero(p.n_vertices()),
                )
                .unwrap();
            let r = sys.rhs();
            let n = crate::fem::sparse::norm2(&r);
            assert!(n <= 1e-12, "rest residual {n}");
        }
    }

    #[test]
    fn a_block_is_symmetric() {
        let p = tube_problem(mr_model());
        let n = p.n_vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = StructureState::at_rest(n);
        for v in 0..n {
            if !p.dofs.is_dirichlet_vel(3 * v) {
                for c in 0..3 {
                    state.d[3 * v + c] = rng.gen_range(-0.01..0.01);
                }
            }
            state.p[v] = rng.gen_range(-0.5..0.5);
        }
        let h = NewmarkState::at_rest(3 * n, 0.625, 1.0, 0.125);
        let sys = p.assemble(&state, &h, &StructureLoad::zero(n)).unwrap();
        let a = sys.a.to_dense();
        let asym = (&a - &a.transpose()).abs().max();
        let scale = a.abs().max();
        assert!(
            asym <= 1e-10 * scale,
            "A asymmetry {asym:.3e} vs scale {scale:.3e}"
        );
    }

    #[test]
    fn jacobian_matches_fd_of_residual() {
        for model in [mr_model(), artery_model()] {
            let p = tube_problem(model);
            let n = p.n_vertices();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut state = StructureState::at_rest(n);
            for v in 0..n {
                if !p.dofs.is_dirichlet_vel(3 * v) {
                    for c in 0..3 {
                        state.d[3 * v + c] = rng.gen_range(-0.008..0.008);
                    }
                }
                state.p[v] = rng.gen_range(-0.5..0.5);
            }
            let mut h = NewmarkState::at_rest(3 * n, 0.625, 1.0, 0.125);
            for i in 0..3 * n {
                h.d_dot[i] = 0.01 * ((i % 5) as f64 - 2.0);
            }
            let load = StructureLoad::zero(n);
            let sys = p.assemble(&state, &h, &load).unwrap();
            let nv = 3 * n;
            let ntot = nv + n;
            for dir_trial in 0..20u64 {
                let mut dir = vec![0.0; ntot];
                let mut rng_d = ChaCha8Rng::seed_from_u64(100 + dir_trial);
                for v in dir.iter_mut() {
                    *v = rng_d.gen_range(-1.0..1.0);
                }
                for dof in 0..nv {
                    if p.dofs.is_dirichlet_vel(dof) {
                        dir[dof] = 0.0;
                    }
                }
                let hstep = 1e-6;
                let perturb = |s: f64| {
                    let mut st = state.clone();
                    for i in 0..nv {
                        st.d[i] += s * dir[i];
                    }
                    for i in 0..n {
                        st.p[i] += s * dir[nv + i];
                    }
                    p.assemble(&st, &h, &load).unwrap().rhs()
                };
                let rp = perturb(hstep);
                let rm = perturb(-hstep);
                let fd: Vec<f64> = rp
                    .iter()
                    .zip(&rm)
                    .map(|(a, b)| (a - b) / (2.0 * hstep))
                    .collect();
                let mut jd = vec![0.0; ntot];
                sys.apply(&dir, &mut jd);
                let num: f64 = fd
                    .iter()
                    .zip(&jd)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let den: f64 = jd.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(
                    num <= 1e-5 * den,
                    "FD mismatch: |J d - fd| = {num:.3e}, |J d| = {den:.3e}"
                );
            }
        }
    }

    #[test]
    fn zero_load_from_rest_converges_in_one_iteration() {
        let p = tube_problem(mr_model());
        let h = NewmarkState::at_rest(3 * p.n_vertices(), 0.625, 1.0, 0.125);
        let tols = ToleranceController::fixed_defaults();
        let mut cache = SaddleSolveCache::default();
        let (state, report) = solve_structure_step(
            &p,
            &h,
            &StructureLoad::zero(p.n_vertices()),
            &StructureState::at_rest(p.n_vertices()),
            &SaddleSolver::krylov_default(),
            &tols,
            &mut cache,
        )
        .unwrap();
        assert!(report.converged);
        assert_eq!(report.increment_norms.len(), 1);
        assert!(state.d.iter().all(|&v| v == 0.0));
    }
}
