//! SO(3) and SE₂(3) group operations.
//!
//! Rotations are stored as 3×3 matrices; extended poses (rotation, velocity,
//! position) are stored as an explicit triple and rendered to the 5×5 matrix
//!
//! ```text
//! | R  v  p |
//! | 0  1  0 |
//! | 0  0  1 |
//! ```
//!
//! only when needed. Tangent vectors of SE₂(3) are ordered
//! `[ξ_R; ξ_v; ξ_p]`.

use nalgebra::{Matrix3, Matrix5, SMatrix, SVector, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vector9 = SVector<f64, 9>;
pub type Matrix9 = SMatrix<f64, 9, 9>;

/// Below this angle the Rodrigues coefficients are replaced by their Taylor
/// expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Orthogonality residual (Frobenius) above which a rotation is re-projected.
pub const ORTHO_TOLERANCE: f64 = 1e-9;

/// Rotation matrices handed to [`Rotation::from_matrix`] must be at least this
/// close to orthonormal.
const ORTHO_ACCEPT: f64 = 1e-6;

/// Skew-symmetric cross-product matrix: `hat3(v) * y == v.cross(&y)`.
pub fn hat3(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat3`]; reads the skew part of `m`.
pub fn vee3(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues formula for the SO(3) exponential.
pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat3(phi);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k2;
    }
    let half = 0.5 * theta;
    let a = theta.sin() / theta;
    // 1 - cos θ written without cancellation
    let b = 2.0 * (half.sin() / theta).powi(2);
    Matrix3::identity() + a * k + b * k2
}

/// SO(3) logarithm. Returns a rotation vector of norm at most π.
///
/// Rejects matrices that are not orthonormal within `1e-6`. Rotations close
/// to π read the axis from the symmetric part, where the skew part carries no
/// usable direction.
pub fn log_so3(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    check_orthonormal(r)?;
    let skew = vee3(r);
    let s = skew.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        // θ/sin θ ≈ 1 + θ²/6
        return Ok(skew * (1.0 + theta * theta / 6.0));
    }
    if std::f64::consts::PI - theta > 1e-3 {
        return Ok(skew * (theta / s));
    }
    // near π: (R + Rᵀ)/2 − cos θ I = (1 − cos θ) n nᵀ
    let sym = 0.5 * (r + r.transpose()) - c * Matrix3::identity();
    let col = (0..3)
        .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = sym.column(col).into_owned();
    axis.normalize_mut();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Left Jacobian of SO(3).
pub fn left_jacobian_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat3(phi);
    let k2 = k * k;
    if theta < 1e-4 {
        let t2 = theta * theta;
        return Matrix3::identity() + (0.5 - t2 / 24.0) * k + (1.0 / 6.0 - t2 / 120.0) * k2;
    }
    let t2 = theta * theta;
    let half = 0.5 * theta;
    let a = 2.0 * half.sin().powi(2) / t2;
    let b = (theta - theta.sin()) / (t2 * theta);
    Matrix3::identity() + a * k + b * k2
}

/// Inverse of [`left_jacobian_so3`].
pub fn left_jacobian_so3_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat3(phi);
    let k2 = k * k;
    let coeff = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        1.0 / (theta * theta) - half.cos() / (2.0 * theta * half.sin())
    };
    Matrix3::identity() - 0.5 * k + coeff * k2
}

fn orthogonality_residual(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

fn check_orthonormal(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("rotation matrix"));
    }
    let residual = orthogonality_residual(r);
    if residual > ORTHO_ACCEPT || (r.determinant() - 1.0).abs() > ORTHO_ACCEPT {
        return Err(Error::NotARotation { residual });
    }
    Ok(())
}

/// Nearest rotation in the Frobenius sense (polar factor).
pub fn polar_project(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

/// An element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality and projects away residual drift.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        check_orthonormal(&m)?;
        Ok(Rotation(m).renormalized())
    }

    pub fn exp(phi: &Vector3<f64>) -> Self {
        Rotation(exp_so3(phi))
    }

    pub fn log(&self) -> Vector3<f64> {
        // invariants hold by construction
        log_so3(&self.0).expect("Rotation holds an orthonormal matrix")
    }

    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = nalgebra::Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::NonFinite("quaternion"));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(Rotation(*uq.to_rotation_matrix().matrix()))
    }

    /// Unit quaternion `[w, x, y, z]` with non-negative `w`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn orthogonality_residual(&self) -> f64 {
        orthogonality_residual(&self.0)
    }

    /// Re-projects onto SO(3) when the orthogonality residual exceeds
    /// [`ORTHO_TOLERANCE`].
    pub fn renormalized(self) -> Self {
        if orthogonality_residual(&self.0) > ORTHO_TOLERANCE {
            Rotation(polar_project(&self.0))
        } else {
            self
        }
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0).renormalized()
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// 5×5 Lie-algebra element of a 9-vector `[ξ_R; ξ_v; ξ_p]`.
pub fn hat9(xi: &Vector9) -> Matrix5<f64> {
    let mut m = Matrix5::zeros();
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&hat3(&xi.fixed_rows::<3>(0).into_owned()));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.fixed_rows::<3>(3));
    m.fixed_view_mut::<3, 1>(0, 4).copy_from(&xi.fixed_rows::<3>(6));
    m
}

/// Inverse of [`hat9`].
pub fn vee9(m: &Matrix5<f64>) -> Vector9 {
    let mut xi = Vector9::zeros();
    xi.fixed_rows_mut::<3>(0)
        .copy_from(&vee3(&m.fixed_view::<3, 3>(0, 0).into_owned()));
    xi.fixed_rows_mut::<3>(3).copy_from(&m.fixed_view::<3, 1>(0, 3));
    xi.fixed_rows_mut::<3>(6).copy_from(&m.fixed_view::<3, 1>(0, 4));
    xi
}

/// An element of SE₂(3): orientation, velocity and position.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Se23 {
    pub rotation: Rotation,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
}

impl Se23 {
    pub fn identity() -> Self {
        Se23 {
            rotation: Rotation::identity(),
            velocity: Vector3::zeros(),
            position: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, velocity: Vector3<f64>, position: Vector3<f64>) -> Self {
        Se23 {
            rotation,
            velocity,
            position,
        }
    }

    /// Closed-form exponential: Rodrigues for the rotation block and the left
    /// Jacobian applied to the velocity and position components.
    pub fn exp(xi: &Vector9) -> Self {
        let phi: Vector3<f64> = xi.fixed_rows::<3>(0).into_owned();
        let jl = left_jacobian_so3(&phi);
        Se23 {
            rotation: Rotation::exp(&phi),
            velocity: jl * xi.fixed_rows::<3>(3),
            position: jl * xi.fixed_rows::<3>(6),
        }
    }

    pub fn log(&self) -> Vector9 {
        let phi = self.rotation.log();
        let jinv = left_jacobian_so3_inv(&phi);
        let mut xi = Vector9::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&phi);
        xi.fixed_rows_mut::<3>(3).copy_from(&(jinv * self.velocity));
        xi.fixed_rows_mut::<3>(6).copy_from(&(jinv * self.position));
        xi
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Se23 {
            rotation: rt,
            velocity: -(rt * self.velocity),
            position: -(rt * self.position),
        }
    }

    pub fn to_matrix(&self) -> Matrix5<f64> {
        let mut m = Matrix5::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.velocity);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.position);
        m
    }

    /// Reads an extended pose out of a 5×5 matrix, checking the constant rows.
    pub fn from_matrix(m: &Matrix5<f64>) -> Result<Self> {
        let bottom = m.fixed_view::<2, 5>(3, 0);
        let expected = Matrix5::<f64>::identity().fixed_view::<2, 5>(3, 0).into_owned();
        if (bottom - expected).norm() > ORTHO_ACCEPT {
            return Err(Error::NotAGroupElement);
        }
        Ok(Se23 {
            rotation: Rotation::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?,
            velocity: m.fixed_view::<3, 1>(0, 3).into_owned(),
            position: m.fixed_view::<3, 1>(0, 4).into_owned(),
        })
    }

    /// Adjoint `[[R,0,0],[v^×R,R,0],[p^×R,0,R]]`, so that
    /// `χ ξ^∧ χ⁻¹ = (Ad_χ ξ)^∧`.
    pub fn adjoint(&self) -> Matrix9 {
        let r = self.rotation.matrix();
        let mut ad = Matrix9::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        ad.fixed_view_mut::<3, 3>(6, 6).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(hat3(&self.velocity) * r));
        ad.fixed_view_mut::<3, 3>(6, 0)
            .copy_from(&(hat3(&self.position) * r));
        ad
    }
}

impl std::ops::Mul for Se23 {
    type Output = Se23;
    fn mul(self, rhs: Se23) -> Se23 {
        let r = self.rotation;
        Se23 {
            rotation: r * rhs.rotation,
            velocity: r * rhs.velocity + self.velocity,
            position: r * rhs.position + self.position,
        }
    }
}

/// Exponential of a 9-vector (free-function form of [`Se23::exp`]).
pub fn exp_se23(xi: &Vector9) -> Se23 {
    Se23::exp(xi)
}

/// Adjoint of an extended pose (free-function form of [`Se23::adjoint`]).
pub fn adjoint_se23(chi: &Se23) -> Matrix9 {
    chi.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn series_exp3(m: &Matrix3<f64>, terms: usize) -> Matrix3<f64> {
        let mut acc = Matrix3::identity();
        let mut term = Matrix3::identity();
        for k in 1..terms {
            term = term * m / k as f64;
            acc += term;
        }
        acc
    }

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    fn vec9(scale: f64) -> impl Strategy<Value = Vector9> {
        proptest::collection::vec(-scale..scale, 9).prop_map(|v| Vector9::from_column_slice(&v))
    }

    #[test]
    fn hat_of_unit_z() {
        let m = hat3(&Vector3::z());
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(m, expected);
        assert_eq!(hat3(&Vector3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn quarter_turn_about_x() {
        let r = exp_so3(&Vector3::new(PI / 2.0, 0.0, 0.0));
        assert_abs_diff_eq!(r * Vector3::y(), Vector3::z(), epsilon = 1e-15);
        assert_eq!(exp_so3(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn exp_matches_power_series() {
        let mut rng = crate::sim::rng::seeded(11);
        for _ in 0..200 {
            let dir = crate::sim::rng::unit_vector(&mut rng);
            let theta = 3.0 * crate::sim::rng::uniform(&mut rng);
            let phi = dir * theta;
            // 20 terms leave a 3^20/20! ≈ 1.4e-9 tail; go further for the check
            let oracle = series_exp3(&hat3(&phi), 40);
            assert_abs_diff_eq!(exp_so3(&phi), oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_roundtrip_fixed_vector() {
        let phi = Vector3::new(0.3, -0.2, 0.1);
        assert_abs_diff_eq!(log_so3(&exp_so3(&phi)).unwrap(), phi, epsilon = 1e-10);
        assert_eq!(log_so3(&Matrix3::identity()).unwrap(), Vector3::zeros());
    }

    #[test]
    fn log_near_pi() {
        let angle = PI - 1e-4;
        let r = exp_so3(&(Vector3::z() * angle));
        let phi = log_so3(&r).unwrap();
        assert_abs_diff_eq!(phi, Vector3::z() * angle, epsilon = 1e-6);
        // exactly π about a skew axis
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        let r = exp_so3(&(axis * PI));
        let phi = log_so3(&r).unwrap();
        assert_abs_diff_eq!(phi.norm(), PI, epsilon = 1e-9);
        assert_abs_diff_eq!(exp_so3(&phi), r, epsilon = 1e-9);
    }

    #[test]
    fn log_rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(log_so3(&m), Err(Error::NotARotation { .. })));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(log_so3(&reflection).is_err());
    }

    #[test]
    fn pure_translation_exp() {
        let mut xi = Vector9::zeros();
        xi.fixed_rows_mut::<3>(3).copy_from(&Vector3::new(1.0, 2.0, 3.0));
        xi.fixed_rows_mut::<3>(6).copy_from(&Vector3::new(-1.0, 0.5, 0.0));
        let g = Se23::exp(&xi);
        assert_eq!(g.rotation, Rotation::identity());
        assert_eq!(g.velocity, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(g.position, Vector3::new(-1.0, 0.5, 0.0));
        assert_eq!(Se23::exp(&Vector9::zeros()), Se23::identity());
    }

    #[test]
    fn adjoint_of_pure_velocity() {
        let g = Se23::new(Rotation::identity(), Vector3::x(), Vector3::zeros());
        let ad = g.adjoint();
        let mut expected = Matrix9::identity();
        expected.fixed_view_mut::<3, 3>(3, 0).copy_from(&hat3(&Vector3::x()));
        assert_eq!(ad, expected);
        assert_eq!(Se23::identity().adjoint(), Matrix9::identity());
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        for &t in &[1e-9, 1e-8, 1.0000001e-8, 1e-7, 1e-5] {
            let phi = Vector3::new(0.6, -0.8, 0.0) * t;
            let r = exp_so3(&phi);
            let oracle = series_exp3(&hat3(&phi), 6);
            assert_abs_diff_eq!(r, oracle, epsilon = 1e-16);
            assert_abs_diff_eq!(log_so3(&r).unwrap(), phi, epsilon = 1e-16);
        }
    }

    #[test]
    fn first_order_consistency_constant() {
        let xi = Vector9::from_column_slice(&[0.3, -0.1, 0.2, 0.5, 0.1, -0.4, 0.2, 0.3, 0.1]);
        let ratios: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&eps| {
                let exact = Se23::exp(&(xi * eps)).to_matrix();
                let linear = Matrix5::identity() + hat9(&(xi * eps));
                (exact - linear).norm() / (eps * eps)
            })
            .collect();
        let c = ratios[0];
        for r in &ratios {
            assert!((r - c).abs() / c < 0.05, "ratios {ratios:?}");
        }
    }

    #[test]
    fn polar_projection_repairs_drift() {
        let mut m = exp_so3(&Vector3::new(0.2, 0.1, -0.3));
        m[(0, 1)] += 1e-7;
        let r = Rotation::from_matrix(m).unwrap();
        assert!(r.orthogonality_residual() < 1e-12);
        assert_abs_diff_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn quaternion_roundtrip() {
        let r = Rotation::exp(&Vector3::new(0.4, -1.2, 2.0));
        let [w, x, y, z] = r.to_quaternion();
        assert!(w >= 0.0);
        let back = Rotation::from_quaternion(w, x, y, z).unwrap();
        assert_abs_diff_eq!(back.matrix(), r.matrix(), epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn hat_anticommutes(a in vec3(), b in vec3()) {
            let lhs = hat3(&a) * b;
            prop_assert!((lhs + hat3(&b) * a).norm() < 1e-15);
            prop_assert!((lhs - a.cross(&b)).norm() < 1e-15);
            prop_assert!((hat3(&a) + hat3(&a).transpose()).norm() == 0.0);
        }

        #[test]
        fn exp_log_roundtrip(dir in vec3(), t in 0.0..(PI - 0.1)) {
            prop_assume!(dir.norm() > 1e-3);
            let phi = dir.normalize() * t;
            let back = log_so3(&exp_so3(&phi)).unwrap();
            prop_assert!((back - phi).norm() < 1e-9);
            prop_assert!(back.norm() <= PI);
        }

        #[test]
        fn exp_se23_matches_matrix_exponential(xi in vec9(1.5)) {
            let closed = Se23::exp(&xi).to_matrix();
            let hat = hat9(&xi);
            let oracle = expm(&DMatrix::from_column_slice(5, 5, hat.as_slice()));
            let diff = (DMatrix::from_column_slice(5, 5, closed.as_slice()) - oracle).amax();
            prop_assert!(diff < 1e-10, "diff {diff}");
        }

        #[test]
        fn adjoint_conjugation(g in vec9(1.5), xi in vec9(1.0)) {
            let chi = Se23::exp(&g);
            let lhs = chi.to_matrix() * hat9(&xi) * chi.inverse().to_matrix();
            let rhs = hat9(&(chi.adjoint() * xi));
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }

        #[test]
        fn adjoint_homomorphism(a in vec9(1.5), b in vec9(1.5)) {
            let (x, y) = (Se23::exp(&a), Se23::exp(&b));
            let diff = ((x * y).adjoint() - x.adjoint() * y.adjoint()).amax();
            prop_assert!(diff < 1e-10);
        }

        #[test]
        fn group_closure(a in vec9(2.0), b in vec9(2.0)) {
            let m = (Se23::exp(&a) * Se23::exp(&b)).to_matrix();
            prop_assert!(Se23::from_matrix(&m).is_ok());
            let r = m.fixed_view::<3, 3>(0, 0).into_owned();
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn se23_log_inverts_exp(xi in vec9(1.0)) {
            prop_assume!(xi.fixed_rows::<3>(0).norm() < PI - 0.1);
            let back = Se23::exp(&xi).log();
            prop_assert!((back - xi).amax() < 1e-9);
        }
    }
}
