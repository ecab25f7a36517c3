//! Block preconditioners from the approximate LU factorization of the saddle
//! system `K = [A B1^T; B2 -C]` with Schur complement `S = B2 A^{-1} B1^T + C`.
//!
//! Fluid (right, for GCR):
//!
//! ```text
//! P_R^{-1} = [ A~^{-1}  A~^{-1} B1^T S~^{-1} ]      S~^{-1} = (rho/dt) Dp^{-1}
//!            [ 0        -S~^{-1}             ]              + mu diag(Mp)^{-1}
//!                                                           + rho diag(Mp)^{-1} Cp Dp^{-1}
//! ```
//!
//! with `Dp` the pressure Laplacian (pinned Neumann), `Cp` the pressure
//! convection matrix, and `A~^{-1}` one AMG cycle on the velocity block.
//!
//! Structure (left, for BiCGStab):
//!
//! ```text
//! P_L^{-1} = [ A~^{-1}            0        ]     S~ = (1/theta + 1/kappa) diag(Mp)
//!            [ S~^{-1} B2 A~^{-1} -S~^{-1} ]
//! ```
//!
//! Inner applications are fixed cycle counts, which keeps the preconditioner
//! a fixed linear operator.

use crate::amg::point::{PointAmg, PointAmgOptions};
use crate::error::Result;
use crate::fem::{BlockSaddleSystem, CsrMatrix};
use crate::linsolve::Preconditioner;

/// State-dependent ingredients of the fluid preconditioner, assembled on the
/// current configuration by the fluid solver.
#[derive(Debug, Clone)]
pub struct FluidPrecondData {
    pub rho_over_dt: f64,
    pub mu: f64,
    pub rho: f64,
    /// pressure Laplacian with homogeneous Neumann data and dof 0 pinned
    pub dp: CsrMatrix,
    /// pressure convection matrix with the current advective velocity u - w
    pub cp: CsrMatrix,
    pub mp_diag: Vec<f64>,
}

pub struct FluidPreconditioner<'s> {
    sys: &'s BlockSaddleSystem,
    data: FluidPrecondData,
    a_amg: PointAmg,
    dp_amg: PointAmg,
    /// fixed inner cycle counts
    a_cycles: usize,
    dp_cycles: usize,
}

impl<'s> FluidPreconditioner<'s> {
    pub fn build(sys: &'s BlockSaddleSystem, data: FluidPrecondData) -> Result<Self> {
        let a_amg = PointAmg::build(&sys.a, 3, &PointAmgOptions::default())?;
        let dp_amg = PointAmg::build(&data.dp, 1, &PointAmgOptions::default())?;
        Ok(FluidPreconditioner {
            sys,
            data,
            a_amg,
            dp_amg,
            a_cycles: 1,
            dp_cycles: 2,
        })
    }

    /// z = S~^{-1} y per the operator-splitting sum.
    fn schur_inv(&self, y: &[f64]) -> Vec<f64> {
        let np = y.len();
        let dp_inv_y = self.dp_amg.apply_cycles(y, self.dp_cycles);
        let mut cp_dp = vec![0.0; np];
        self.data.cp.mul_vec(&dp_inv_y, &mut cp_dp);
        (0..np)
            .map(|i| {
                self.data.rho_over_dt * dp_inv_y[i]
                    + (self.data.mu * y[i] + self.data.rho * cp_dp[i]) / self.data.mp_diag[i]
            })
            .collect()
    }
}

impl<'s> Preconditioner for FluidPreconditioner<'s> {
    fn apply_inv(&self, r: &[f64]) -> Vec<f64> {
        let nv = self.sys.n_vel();
        let np = self.sys.n_pres();
        let (r1, r2) = r.split_at(nv);
        // pressure solve first, then velocity
        let z2 = self.schur_inv(r2);
        let mut rhs1 = r1.to_vec();
        self.sys.b1t.mul_vec_add(1.0, &z2, &mut rhs1);
        let x1 = self.a_amg.apply_cycles(&rhs1, self.a_cycles);
        let mut out = Vec::with_capacity(nv + np);
        out.extend_from_slice(&x1);
        out.extend(z2.iter().map(|v| -v));
        out
    }
}

pub struct StructurePreconditioner<'s> {
    sys: &'s BlockSaddleSystem,
    a_amg: PointAmg,
    /// entrywise inverse of S~ = (1/theta + 1/kappa) diag(Mp)
    s_inv: Vec<f64>,
    a_cycles: usize,
}

impl<'s> StructurePreconditioner<'s> {
    pub fn build(
        sys: &'s BlockSaddleSystem,
        theta: f64,
        kappa: f64,
        mp_diag: &[f64],
    ) -> Result<Self> {
        let a_amg = PointAmg::build(&sys.a, 3, &PointAmgOptions::default())?;
        let coef = 1.0 / theta + 1.0 / kappa;
        let s_inv = mp_diag.iter().map(|&m| 1.0 / (coef * m)).collect();
        Ok(StructurePreconditioner {
            sys,
            a_amg,
            s_inv,
            a_cycles: 1,
        })
    }
}

impl<'s> Preconditioner for StructurePreconditioner<'s> {
    fn apply_inv(&self, r: &[f64]) -> Vec<f64> {
        let nv = self.sys.n_vel();
        let np = self.sys.n_pres();
        let (r1, r2) = r.split_at(nv);
        // velocity solve first, then the diagonal Schur update
        let x1 = self.a_amg.apply_cycles(r1, self.a_cycles);
        let mut b2x = vec![0.0; np];
        self.sys.b2.mul_vec(&x1, &mut b2x);
        let mut out = Vec::with_capacity(nv + np);
        out.extend_from_slice(&x1);
        out.extend((0..np).map(|i| self.s_inv[i] * (b2x[i] - r2[i])));
        out
    }
}
