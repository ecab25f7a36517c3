//! Partitioned fluid-structure interaction for a pressurized elastic tube.
//!
//! The solver couples an ALE Navier-Stokes fluid with a mixed
//! displacement-pressure hyperelastic wall (isotropic Mooney-Rivlin or a
//! two-layer fiber-reinforced artery), both discretized with stabilized
//! equal-order P1-P1 tetrahedral elements. The sub-problems are linearized by
//! Newton's method and coupled by Dirichlet-Neumann iteration with Aitken
//! relaxation. Linearized saddle systems are solved either by preconditioned
//! Krylov methods (GCR / BiCGStab with block-LU preconditioners) or by a
//! saddle-point algebraic multigrid with Braess-Sarazin or Vanka smoothing.
//!
//! Units: mm, ms, mg, kPa (1 kPa = 1 mg/(mm ms^2), so no conversion factors
//! appear in the kernels).

pub mod ale;
pub mod amg;
pub mod config;
pub mod coupling;
pub mod error;
pub mod fem;
pub mod fluid;
pub mod linsolve;
pub mod materials;
pub mod mesh;
pub mod output;
pub mod structure;

pub use error::{FsiError, Result};
