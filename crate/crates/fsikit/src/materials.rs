//! Hyperelastic constitutive evaluation in the mixed displacement-pressure
//! setting: kinematics, the two stored-energy models, second Piola-Kirchhoff
//! stresses `S = S' - p J C^{-1}`, and consistent analytic tangents.
//!
//! Both models are defined through isochorically modified invariants
//!
//! ```text
//! J1 = I1 I3^(-1/3)   J2 = I2 I3^(-2/3)   J4 = I3^(-1/3) A1:C   J6 = I3^(-1/3) A2:C
//! ```
//!
//! and their stresses are `2 dPsi/dC` of the respective energies, so the
//! analytic tangents match central finite differences of the energy (the
//! finite-difference oracle lives in the tests).

use crate::error::{FsiError, Result};
use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

/// Per-quadrature-point deformation state.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub f: Matrix3<f64>,
    pub c: Matrix3<f64>,
    pub c_inv: Matrix3<f64>,
    pub f_inv: Matrix3<f64>,
    pub j: f64,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub j1: f64,
    pub j2: f64,
    /// fiber invariants and structure tensors, present iff fibers were given
    pub fibers: Option<FiberState>,
}

#[derive(Debug, Clone)]
pub struct FiberState {
    pub a1: Matrix3<f64>,
    pub a2: Matrix3<f64>,
    pub j4: f64,
    pub j6: f64,
}

/// Unit fiber directions of the two collagen families in global coordinates.
#[derive(Debug, Clone, Copy)]
pub struct FiberDirections {
    pub a01: Vector3<f64>,
    pub a02: Vector3<f64>,
}

/// Modified Mooney-Rivlin material constants (kPa).
#[derive(Debug, Clone, Copy)]
pub struct MooneyRivlinParams {
    pub c10: f64,
    pub c01: f64,
    pub kappa: f64,
}

impl MooneyRivlinParams {
    /// Small-strain shear modulus, used in the stabilization parameter.
    pub fn mu_linear(&self) -> f64 {
        2.0 * (self.c10 + self.c01)
    }
}

/// One layer of the two-layer artery model: neo-Hookean matrix plus two
/// exponential collagen-fiber families at +/- alpha from the circumferential
/// direction, expressed in the element's local (radial, circumferential,
/// axial) frame.
#[derive(Debug, Clone, Copy)]
pub struct ArteryLayerParams {
    pub c10: f64,
    /// stress-like fiber parameter (kPa)
    pub k1: f64,
    /// dimensionless fiber exponent
    pub k2: f64,
    /// fiber angle from the circumferential direction (degrees)
    pub alpha_deg: f64,
    pub kappa: f64,
    /// orthonormal local triad (radial, circumferential, axial)
    pub frame: [Vector3<f64>; 3],
}

impl ArteryLayerParams {
    pub fn mu_linear(&self) -> f64 {
        2.0 * (self.c10 + self.k1 / (2.0 * self.k2))
    }

    /// a01 = (0, cos a, sin a), a02 = (0, cos a, -sin a) in the local
    /// (radial, circumferential, axial) basis.
    pub fn fiber_directions(&self) -> FiberDirections {
        let a = self.alpha_deg.to_radians();
        let (s, c) = (a.sin(), a.cos());
        FiberDirections {
            a01: c * self.frame[1] + s * self.frame[2],
            a02: c * self.frame[1] - s * self.frame[2],
        }
    }
}

/// Element-local orthonormal triad for an annular tube element: radial
/// through the centroid, circumferential tangent, axial along z.
pub fn fiber_frame(centroid: Vector3<f64>) -> Result<[Vector3<f64>; 3]> {
    let r = (centroid.x * centroid.x + centroid.y * centroid.y).sqrt();
    if r < 1e-12 {
        return Err(FsiError::Mesh(
            "fiber frame undefined on the tube axis (zero radius)".into(),
        ));
    }
    let e_rad = Vector3::new(centroid.x / r, centroid.y / r, 0.0);
    let e_ax = Vector3::z();
    let e_circ = Vector3::new(-centroid.y / r, centroid.x / r, 0.0);
    Ok([e_rad, e_circ, e_ax])
}

/// Mixed-pressure stress pair: `s = s_prime - p J C^{-1}`.
#[derive(Debug, Clone)]
pub struct StressState {
    pub s: Matrix3<f64>,
    pub s_prime: Matrix3<f64>,
}

/// Builds the deformation state from a displacement gradient.
pub fn kinematics(grad_d: &Matrix3<f64>, fibers: Option<&FiberDirections>) -> Result<Kinematics> {
    let f = Matrix3::identity() + grad_d;
    let j = f.determinant();
    if j <= 0.0 {
        return Err(FsiError::ElementInversion { element: 0, j });
    }
    let c = f.transpose() * f;
    let i1 = c.trace();
    let i2 = 0.5 * (i1 * i1 - (c * c).trace());
    let i3 = j * j;
    let c_inv = c
        .try_inverse()
        .ok_or(FsiError::ElementInversion { element: 0, j })?;
    let f_inv = f
        .try_inverse()
        .ok_or(FsiError::ElementInversion { element: 0, j })?;
    let b1 = i3.powf(-1.0 / 3.0);
    let fibers = fibers.map(|d| {
        let a1 = d.a01 * d.a01.transpose();
        let a2 = d.a02 * d.a02.transpose();
        FiberState {
            j4: b1 * (a1 * c).trace(),
            j6: b1 * (a2 * c).trace(),
            a1,
            a2,
        }
    });
    Ok(Kinematics {
        f,
        c,
        c_inv,
        f_inv,
        j,
        i1,
        i2,
        i3,
        j1: i1 * b1,
        j2: i2 * i3.powf(-2.0 / 3.0),
        fibers,
    })
}

/// dJ1/dC = I3^(-1/3) (I - (I1/3) C^{-1})
fn d_j1_dc(k: &Kinematics) -> Matrix3<f64> {
    k.i3.powf(-1.0 / 3.0) * (Matrix3::identity() - (k.i1 / 3.0) * k.c_inv)
}

/// dJ2/dC = I3^(-2/3) (I1 I - C - (2 I2/3) C^{-1})
fn d_j2_dc(k: &Kinematics) -> Matrix3<f64> {
    k.i3.powf(-2.0 / 3.0) * (k.i1 * Matrix3::identity() - k.c - (2.0 * k.i2 / 3.0) * k.c_inv)
}

/// dJi/dC = I3^(-1/3) Ai - (Ji/3) C^{-1} for the fiber invariants
fn d_jf_dc(k: &Kinematics, a: &Matrix3<f64>, jf: f64) -> Matrix3<f64> {
    k.i3.powf(-1.0 / 3.0) * a - (jf / 3.0) * k.c_inv
}

/// Scalar fiber stress coefficient q(Ji) with 2 dPsi_aniso/dJi = 2 k1 q(Ji);
/// fibers carry load only in extension (Ji > 1).
fn fiber_q(k1: f64, k2: f64, ji: f64) -> f64 {
    if ji <= 1.0 {
        return 0.0;
    }
    let e = ji - 1.0;
    2.0 * k1 * (k2 * e * e).exp() * e
}

fn fiber_q_deriv(k1: f64, k2: f64, ji: f64) -> f64 {
    if ji <= 1.0 {
        return 0.0;
    }
    let e = ji - 1.0;
    2.0 * k1 * (k2 * e * e).exp() * (1.0 + 2.0 * k2 * e * e)
}

fn check_fiber_exponent(k2: f64, ji: f64, element: usize) -> Result<()> {
    let e = ji - 1.0;
    let exponent = k2 * e * e;
    if exponent > 50.0 {
        return Err(FsiError::FiberOverflow { element, exponent });
    }
    Ok(())
}

/// Isochoric Mooney-Rivlin stress `S' = c10 dJ1/dC + c01 dJ2/dC` and the
/// mixed total `S = S' - p J C^{-1}`.
pub fn pk2_mooney_rivlin(k: &Kinematics, p: f64, m: &MooneyRivlinParams) -> StressState {
    let s_prime = m.c10 * d_j1_dc(k) + m.c01 * d_j2_dc(k);
    StressState {
        s: s_prime - p * k.j * k.c_inv,
        s_prime,
    }
}

/// Artery-layer stress: neo-Hookean matrix plus tension-only exponential
/// fiber terms, `S = S' - p J C^{-1}`.
pub fn pk2_artery(k: &Kinematics, p: f64, m: &ArteryLayerParams) -> Result<StressState> {
    let fib = k.fibers.as_ref().ok_or_else(|| {
        FsiError::Mesh("artery stress requires fiber invariants in the kinematics".into())
    })?;
    check_fiber_exponent(m.k2, fib.j4, 0)?;
    check_fiber_exponent(m.k2, fib.j6, 0)?;
    let mut s_prime = m.c10 * d_j1_dc(k);
    s_prime += fiber_q(m.k1, m.k2, fib.j4) * d_jf_dc(k, &fib.a1, fib.j4);
    s_prime += fiber_q(m.k1, m.k2, fib.j6) * d_jf_dc(k, &fib.a2, fib.j6);
    Ok(StressState {
        s: s_prime - p * k.j * k.c_inv,
        s_prime,
    })
}

/// Material model selector for tangent evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    MooneyRivlin(&'a MooneyRivlinParams),
    Artery(&'a ArteryLayerParams),
}

impl<'a> Model<'a> {
    pub fn mu_linear(&self) -> f64 {
        match self {
            Model::MooneyRivlin(m) => m.mu_linear(),
            Model::Artery(m) => m.mu_linear(),
        }
    }

    pub fn stress(&self, k: &Kinematics, p: f64) -> Result<StressState> {
        match self {
            Model::MooneyRivlin(m) => Ok(pk2_mooney_rivlin(k, p, m)),
            Model::Artery(m) => pk2_artery(k, p, m),
        }
    }
}

/// Consistent tangent: the 6x6 matrix of `dS/dC` in the orthonormal symmetric
/// (Mandel) basis, plus the exact pressure block `dS/dp = -J C^{-1}`.
#[derive(Debug, Clone)]
pub struct MaterialTangent {
    /// dS/dC in the orthonormal basis E_ii = e_i x e_i,
    /// E_ij = (e_i x e_j + e_j x e_i)/sqrt(2); symmetric for energy-derived
    /// stresses at fixed p
    pub dsdc: Matrix6<f64>,
    /// dS/dp = -J C^{-1}
    pub dsdp: Matrix3<f64>,
}

const MANDEL_IDX: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)];
const SQRT2: f64 = std::f64::consts::SQRT_2;

pub fn mandel_vec(m: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(
        m[(0, 0)],
        m[(1, 1)],
        m[(2, 2)],
        SQRT2 * 0.5 * (m[(0, 1)] + m[(1, 0)]),
        SQRT2 * 0.5 * (m[(1, 2)] + m[(2, 1)]),
        SQRT2 * 0.5 * (m[(0, 2)] + m[(2, 0)]),
    )
}

pub fn mandel_mat(v: &Vector6<f64>) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for (k, &(i, j)) in MANDEL_IDX.iter().enumerate() {
        if i == j {
            m[(i, j)] = v[k];
        } else {
            m[(i, j)] = v[k] / SQRT2;
            m[(j, i)] = v[k] / SQRT2;
        }
    }
    m
}

/// Directional derivative of the total stress `S(C, p)` in direction `dc`
/// (symmetric), at fixed p.
pub fn stress_directional_derivative(
    model: &Model,
    k: &Kinematics,
    p: f64,
    dc: &Matrix3<f64>,
) -> Result<Matrix3<f64>> {
    let cinv_dc = k.c_inv.dot(dc); // C^{-1} : dC
    let d_cinv = -k.c_inv * dc * k.c_inv;
    let b1 = k.i3.powf(-1.0 / 3.0);
    let d_b1 = -(b1 / 3.0) * cinv_dc;
    let d_i1 = dc.trace();

    let mut ds = Matrix3::zeros();
    match model {
        Model::MooneyRivlin(m) => {
            // d(c10 H1): H1 = b1 (I - I1/3 C^{-1})
            let h1_core = Matrix3::identity() - (k.i1 / 3.0) * k.c_inv;
            ds += m.c10
                * (d_b1 * h1_core + b1 * (-(d_i1 / 3.0) * k.c_inv - (k.i1 / 3.0) * d_cinv));
            // d(c01 H2): H2 = b2 (I1 I - C - 2 I2/3 C^{-1})
            let b2 = k.i3.powf(-2.0 / 3.0);
            let d_b2 = -(2.0 * b2 / 3.0) * cinv_dc;
            let d_i2 = k.i1 * d_i1 - k.c.dot(dc);
            let h2_core = k.i1 * Matrix3::identity() - k.c - (2.0 * k.i2 / 3.0) * k.c_inv;
            ds += m.c01
                * (d_b2 * h2_core
                    + b2 * (d_i1 * Matrix3::identity()
                        - dc
                        - (2.0 * d_i2 / 3.0) * k.c_inv
                        - (2.0 * k.i2 / 3.0) * d_cinv));
        }
        Model::Artery(m) => {
            let fib = k.fibers.as_ref().ok_or_else(|| {
                FsiError::Mesh("artery tangent requires fiber invariants".into())
            })?;
            let h1_core = Matrix3::identity() - (k.i1 / 3.0) * k.c_inv;
            ds += m.c10
                * (d_b1 * h1_core + b1 * (-(d_i1 / 3.0) * k.c_inv - (k.i1 / 3.0) * d_cinv));
            for (a, jf) in [(&fib.a1, fib.j4), (&fib.a2, fib.j6)] {
                let q = fiber_q(m.k1, m.k2, jf);
                let dq = fiber_q_deriv(m.k1, m.k2, jf);
                if q == 0.0 && dq == 0.0 {
                    continue;
                }
                let hf = d_jf_dc(k, a, jf);
                let d_jf = hf.dot(dc); // dJi = dJi/dC : dC
                let d_hf = d_b1 * a - (d_jf / 3.0) * k.c_inv - (jf / 3.0) * d_cinv;
                ds += dq * d_jf * hf + q * d_hf;
            }
        }
    }
    // pressure part: d(-p J C^{-1}) with dJ = (J/2) C^{-1}:dC
    let d_j = 0.5 * k.j * cinv_dc;
    ds += -p * (d_j * k.c_inv + k.j * d_cinv);
    Ok(ds)
}

/// Assembles the full Mandel-basis tangent by applying the directional
/// derivative to the six basis directions.
pub fn material_tangent(model: &Model, k: &Kinematics, p: f64) -> Result<MaterialTangent> {
    let mut dsdc = Matrix6::zeros();
    for (col, &(i, j)) in MANDEL_IDX.iter().enumerate() {
        let mut e = Matrix3::zeros();
        if i == j {
            e[(i, j)] = 1.0;
        } else {
            e[(i, j)] = 1.0 / SQRT2;
            e[(j, i)] = 1.0 / SQRT2;
        }
        let ds = stress_directional_derivative(model, k, p, &e)?;
        dsdc.set_column(col, &mandel_vec(&ds));
    }
    Ok(MaterialTangent {
        dsdc,
        dsdp: -k.j * k.c_inv,
    })
}

impl MaterialTangent {
    /// dS for a given symmetric dC (at fixed p).
    pub fn apply(&self, dc: &Matrix3<f64>) -> Matrix3<f64> {
        mandel_mat(&(self.dsdc * mandel_vec(dc)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grad(rng: &mut ChaCha8Rng, scale: f64) -> Matrix3<f64> {
        Matrix3::from_fn(|_, _| rng.gen_range(-scale..scale))
    }

    /// Energies evaluated from C directly; the independent oracle for the
    /// stress and tangent checks.
    fn energy_iso_mr(c: &Matrix3<f64>, m: &MooneyRivlinParams) -> f64 {
        let i1 = c.trace();
        let i2 = 0.5 * (i1 * i1 - (c * c).trace());
        let i3 = c.determinant();
        let j1 = i1 * i3.powf(-1.0 / 3.0);
        let j2 = i2 * i3.powf(-2.0 / 3.0);
        0.5 * m.c10 * (j1 - 3.0) + 0.5 * m.c01 * (j2 - 3.0)
    }

    fn energy_iso_artery(c: &Matrix3<f64>, m: &ArteryLayerParams, d: &FiberDirections) -> f64 {
        let i1 = c.trace();
        let i3 = c.determinant();
        let b1 = i3.powf(-1.0 / 3.0);
        let j1 = i1 * b1;
        let a1 = d.a01 * d.a01.transpose();
        let a2 = d.a02 * d.a02.transpose();
        let mut e = 0.5 * m.c10 * (j1 - 3.0);
        for a in [a1, a2] {
            let jf = b1 * (a * c).trace();
            if jf > 1.0 {
                e += m.k1 / (2.0 * m.k2) * (((m.k2) * (jf - 1.0) * (jf - 1.0)).exp() - 1.0);
            }
        }
        e
    }

    /// S' = 2 dPsi/dC by central differences on the C components.
    fn fd_stress<F: Fn(&Matrix3<f64>) -> f64>(c: &Matrix3<f64>, psi: F) -> Matrix3<f64> {
        let h = 1e-6 * c.norm();
        let mut s = Matrix3::zeros();
        for i in 0..3 {
            for j in i..3 {
                let mut cp = *c;
                let mut cm = *c;
                cp[(i, j)] += h;
                cp[(j, i)] = cp[(i, j)];
                cm[(i, j)] -= h;
                cm[(j, i)] = cm[(i, j)];
                // perturbing the symmetric pair (i,j),(j,i) together doubles
                // the off-diagonal sensitivity; S_ij = 2 dPsi/dC_ij treats
                // C_ij and C_ji as independent
                let d = (psi(&cp) - psi(&cm)) / (2.0 * h);
                let val = if i == j { 2.0 * d } else { d };
                s[(i, j)] = val;
                s[(j, i)] = val;
            }
        }
        s
    }

    fn mr_params() -> MooneyRivlinParams {
        MooneyRivlinParams {
            c10: 3.0,
            c01: 0.3,
            kappa: 1e5,
        }
    }

    fn artery_params() -> ArteryLayerParams {
        ArteryLayerParams {
            c10: 3.0,
            k1: 2.3632,
            k2: 0.8393,
            alpha_deg: 29.0,
            kappa: 1e5,
            frame: [Vector3::x(), Vector3::y(), Vector3::z()],
        }
    }

    #[test]
    fn reference_state_kinematics() {
        let d = artery_params().fiber_directions();
        let k = kinematics(&Matrix3::zeros(), Some(&d)).unwrap();
        assert_relative_eq!(k.j, 1.0, epsilon = 1e-15);
        assert_relative_eq!(k.i1, 3.0, epsilon = 1e-15);
        assert_relative_eq!(k.i2, 3.0, epsilon = 1e-15);
        assert_relative_eq!(k.i3, 1.0, epsilon = 1e-15);
        assert_relative_eq!(k.j1, 3.0, epsilon = 1e-14);
        assert_relative_eq!(k.j2, 3.0, epsilon = 1e-14);
        let f = k.fibers.as_ref().unwrap();
        assert_relative_eq!(f.j4, 1.0, epsilon = 1e-14);
        assert_relative_eq!(f.j6, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn uniaxial_kinematics_values() {
        let mut g = Matrix3::zeros();
        g[(0, 0)] = 0.1;
        let k = kinematics(&g, None).unwrap();
        assert_relative_eq!(k.j, 1.1, epsilon = 1e-14);
        assert_relative_eq!(k.i1, 3.21, epsilon = 1e-14);
        assert_relative_eq!(k.i3, 1.21, epsilon = 1e-14);
    }

    #[test]
    fn determinant_identity_i3_equals_j_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let g = random_grad(&mut rng, 0.3 / 3.0);
            if let Ok(k) = kinematics(&g, None) {
                assert_relative_eq!(k.i3, k.j * k.j, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn stress_free_reference_both_models() {
        let m = mr_params();
        let k = kinematics(&Matrix3::zeros(), None).unwrap();
        let s = pk2_mooney_rivlin(&k, 0.0, &m);
        assert!(s.s.norm() <= 1e-12, "MR reference stress {}", s.s.norm());

        let am = artery_params();
        let d = am.fiber_directions();
        let k = kinematics(&Matrix3::zeros(), Some(&d)).unwrap();
        let s = pk2_artery(&k, 0.0, &am).unwrap();
        assert!(s.s.norm() <= 1e-12, "artery reference stress {}", s.s.norm());
    }

    #[test]
    fn hydrostatic_pressure_at_reference() {
        let m = mr_params();
        let k = kinematics(&Matrix3::zeros(), None).unwrap();
        let p0 = 2.5;
        let s = pk2_mooney_rivlin(&k, p0, &m);
        assert_relative_eq!(s.s, -p0 * Matrix3::identity(), epsilon = 1e-13);
    }

    #[test]
    fn mooney_rivlin_stress_matches_energy_fd() {
        let m = mr_params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g = random_grad(&mut rng, 0.05);
            let k = kinematics(&g, None).unwrap();
            let s = pk2_mooney_rivlin(&k, 0.0, &m);
            let fd = fd_stress(&k.c, |c| energy_iso_mr(c, &m));
            assert_relative_eq!(s.s_prime, fd, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn artery_stress_matches_energy_fd() {
        let m = artery_params();
        let d = m.fiber_directions();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut checked = 0;
        while checked < 20 {
            // bias toward extension so the fiber terms are active
            let mut g = random_grad(&mut rng, 0.04);
            g[(1, 1)] += 0.06;
            g[(2, 2)] += 0.06;
            let k = kinematics(&g, Some(&d)).unwrap();
            let fib = k.fibers.as_ref().unwrap();
            if fib.j4 <= 1.0 + 1e-3 || fib.j6 <= 1.0 + 1e-3 {
                continue;
            }
            let s = pk2_artery(&k, 0.0, &m).unwrap();
            let fd = fd_stress(&k.c, |c| energy_iso_artery(c, &m, &d));
            assert_relative_eq!(s.s_prime, fd, max_relative = 1e-6, epsilon = 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn fiber_aligned_stretch_is_stiffer_than_perpendicular() {
        let mut m = artery_params();
        m.alpha_deg = 0.0; // fibers along the circumferential (y) direction
        let d = m.fiber_directions();
        let stretch = |dir: usize| {
            let mut g = Matrix3::zeros();
            g[(dir, dir)] = 0.05;
            let k = kinematics(&g, Some(&d)).unwrap();
            pk2_artery(&k, 0.0, &m).unwrap().s[(dir, dir)]
        };
        let along = stretch(1);
        let perp = stretch(0);
        assert!(
            along > perp,
            "fiber-aligned stress {along} should exceed perpendicular {perp}"
        );
    }

    #[test]
    fn tangent_matches_fd_mooney_rivlin_100_states() {
        let m = mr_params();
        let model = Model::MooneyRivlin(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let g = random_grad(&mut rng, 0.2 / 3.0);
            let k = kinematics(&g, None).unwrap();
            let p = rng.gen_range(-2.0..2.0);
            let tan = material_tangent(&model, &k, p).unwrap();
            // random symmetric direction
            let raw = random_grad(&mut rng, 1.0);
            let dir = 0.5 * (raw + raw.transpose());
            let h = 1e-6 * k.c.norm();
            let sp = pk2_mooney_rivlin(&kin_from_c(&(k.c + h * dir)), p, &m).s;
            let sm = pk2_mooney_rivlin(&kin_from_c(&(k.c - h * dir)), p, &m).s;
            let fd = (sp - sm) / (2.0 * h);
            let an = tan.apply(&dir);
            assert_relative_eq!(an, fd, max_relative = 1e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn tangent_matches_fd_artery_100_states() {
        let m = artery_params();
        let d = m.fiber_directions();
        let model = Model::Artery(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut checked = 0;
        while checked < 100 {
            let mut g = random_grad(&mut rng, 0.2 / 3.0);
            g[(1, 1)] += 0.08;
            g[(2, 2)] += 0.08;
            let k = kinematics(&g, Some(&d)).unwrap();
            let fib = k.fibers.as_ref().unwrap();
            // keep a margin from the tension switch so FD does not straddle it
            if fib.j4 <= 1.005 || fib.j6 <= 1.005 {
                continue;
            }
            let p = rng.gen_range(-2.0..2.0);
            let tan = material_tangent(&model, &k, p).unwrap();
            let raw = random_grad(&mut rng, 1.0);
            let dir = 0.5 * (raw + raw.transpose());
            let h = 1e-6 * k.c.norm();
            let kp = kin_from_c_with_fibers(&(k.c + h * dir), &d);
            let km = kin_from_c_with_fibers(&(k.c - h * dir), &d);
            let fd = (pk2_artery(&kp, p, &m).unwrap().s - pk2_artery(&km, p, &m).unwrap().s)
                / (2.0 * h);
            let an = tan.apply(&dir);
            assert_relative_eq!(an, fd, max_relative = 1e-6, epsilon = 1e-8);
            checked += 1;
        }
    }

    #[test]
    fn pressure_block_is_minus_j_cinv() {
        let m = mr_params();
        let model = Model::MooneyRivlin(&m);
        let k = kinematics(&Matrix3::zeros(), None).unwrap();
        let tan = material_tangent(&model, &k, 0.7).unwrap();
        assert_relative_eq!(tan.dsdp, -Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn inactive_fibers_zero_the_fiber_tangent() {
        let m = artery_params();
        let d = m.fiber_directions();
        // compression along both fiber-plane axes puts J4, J6 below 1
        let mut g = Matrix3::zeros();
        g[(1, 1)] = -0.05;
        g[(2, 2)] = -0.05;
        let k = kinematics(&g, Some(&d)).unwrap();
        let fib = k.fibers.as_ref().unwrap();
        assert!(fib.j4 < 1.0 && fib.j6 < 1.0);
        // the artery tangent must then equal the pure neo-Hookean part
        let nh = ArteryLayerParams { k1: 0.0, k2: 1.0, ..m };
        let t_full = material_tangent(&Model::Artery(&m), &k, 0.3).unwrap();
        let t_nh = material_tangent(&Model::Artery(&nh), &k, 0.3).unwrap();
        assert_relative_eq!(t_full.dsdc, t_nh.dsdc, epsilon = 1e-12);
    }

    #[test]
    fn fiber_overflow_guard_triggers() {
        let m = ArteryLayerParams {
            k2: 200.0,
            ..artery_params()
        };
        let d = m.fiber_directions();
        let mut g = Matrix3::zeros();
        g[(1, 1)] = 1.0;
        g[(2, 2)] = 1.0;
        let k = kinematics(&g, Some(&d)).unwrap();
        assert!(matches!(
            pk2_artery(&k, 0.0, &m),
            Err(FsiError::FiberOverflow { .. })
        ));
    }

    #[test]
    fn tangent_voigt_block_is_symmetric() {
        let m = mr_params();
        let model = Model::MooneyRivlin(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let g = random_grad(&mut rng, 0.05);
            let k = kinematics(&g, None).unwrap();
            // S' part only: evaluate at p = 0
            let tan = material_tangent(&model, &k, 0.0).unwrap();
            let asym = (tan.dsdc - tan.dsdc.transpose()).norm();
            assert!(
                asym <= 1e-10 * tan.dsdc.norm(),
                "tangent asymmetry {asym:.3e}"
            );
        }
    }

    #[test]
    fn mixed_consistency_recovers_pure_displacement_stress() {
        // with p = -kappa (J-1), S = S' + kappa (J-1) J C^{-1}, the
        // pure-displacement form
        let m = mr_params();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let g = random_grad(&mut rng, 0.03);
            let k = kinematics(&g, None).unwrap();
            let p = -m.kappa * (k.j - 1.0);
            let s = pk2_mooney_rivlin(&k, p, &m);
            let pure = s.s_prime + m.kappa * (k.j - 1.0) * k.j * k.c_inv;
            let err = (s.s - pure).norm();
            assert!(err <= 1e-12 * s.s.norm().max(1.0), "mixed consistency {err:.3e}");
        }
    }

    #[test]
    fn objectivity_of_isotropic_stress() {
        // S built from F and from Q F agree after pull-back: S(QF) = S(F)
        // because C = F^T Q^T Q F = F^T F
        let m = mr_params();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let g = random_grad(&mut rng, 0.05);
            let k = kinematics(&g, None).unwrap();
            let axis = nalgebra::Unit::new_normalize(Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ));
            let q = nalgebra::Rotation3::from_axis_angle(&axis, rng.gen_range(0.0..3.0))
                .matrix()
                .clone_owned();
            let f_rot = q * k.f;
            let g_rot = f_rot - Matrix3::identity();
            let k_rot = kinematics(&g_rot, None).unwrap();
            let s = pk2_mooney_rivlin(&k, 0.4, &m).s;
            let s_rot = pk2_mooney_rivlin(&k_rot, 0.4, &m).s;
            assert_relative_eq!(s, s_rot, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn fiber_frame_alignment_and_angles() {
        let frame = fiber_frame(Vector3::new(1.43, 0.0, 5.0)).unwrap();
        assert_relative_eq!(frame[0], Vector3::x(), epsilon = 1e-12);
        assert_relative_eq!(frame[1], Vector3::y(), epsilon = 1e-12);
        assert_relative_eq!(frame[2], Vector3::z(), epsilon = 1e-12);
        for v in frame {
            assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-12);
        }
        // alpha = 0: fibers along the circumferential direction
        let m0 = ArteryLayerParams { alpha_deg: 0.0, frame, ..artery_params() };
        let d0 = m0.fiber_directions();
        assert_relative_eq!(d0.a01, Vector3::y(), epsilon = 1e-12);
        assert_relative_eq!(d0.a02, Vector3::y(), epsilon = 1e-12);
        // alpha = 29 degrees at this centroid
        let m29 = ArteryLayerParams { alpha_deg: 29.0, frame, ..artery_params() };
        let d29 = m29.fiber_directions();
        let a = 29.0f64.to_radians();
        assert_relative_eq!(d29.a01, Vector3::new(0.0, a.cos(), a.sin()), epsilon = 1e-12);
        assert_relative_eq!(d29.a02, Vector3::new(0.0, a.cos(), -a.sin()), epsilon = 1e-12);
        assert!(fiber_frame(Vector3::new(0.0, 0.0, 1.0)).is_err());
    }

    /// Kinematics rebuilt from a given C (the FD oracle perturbs C, not F).
    fn kin_from_c(c: &Matrix3<f64>) -> Kinematics {
        kin_from_c_impl(c, None)
    }

    fn kin_from_c_with_fibers(c: &Matrix3<f64>, d: &FiberDirections) -> Kinematics {
        kin_from_c_impl(c, Some(d))
    }

    fn kin_from_c_impl(c: &Matrix3<f64>, d: Option<&FiberDirections>) -> Kinematics {
        let i1 = c.trace();
        let i2 = 0.5 * (i1 * i1 - (c * c).trace());
        let i3 = c.determinant();
        let j = i3.sqrt();
        let c_inv = c.try_inverse().unwrap();
        let b1 = i3.powf(-1.0 / 3.0);
        // F is irrelevant for S(C, p); use the symmetric square root stand-in
        let f = Matrix3::identity();
        Kinematics {
            f,
            f_inv: f,
            c: *c,
            c_inv,
            j,
            i1,
            i2,
            i3,
            j1: i1 * b1,
            j2: i2 * i3.powf(-2.0 / 3.0),
            fibers: d.map(|d| {
                let a1 = d.a01 * d.a01.transpose();
                let a2 = d.a02 * d.a02.transpose();
                FiberState {
                    j4: b1 * (a1 * c).trace(),
                    j6: b1 * (a2 * c).trace(),
                    a1,
                    a2,
                }
            }),
        }
    }
}
