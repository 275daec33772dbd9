//! Measurement linearizations and the shared gain / Joseph-form update.
//!
//! Both updates use the same convention: the innovation `z` satisfies
//! `z ≈ Hξ` where `ξ` is the error of the estimate (estimate =
//! `retract(truth, ξ)`), the error estimate is `ξ̂ = Kz`, and the state is
//! corrected by `retract(state, −ξ̂)`.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::error::Result;
use crate::kinematics::KinematicObservation;
use crate::lie::hat3;
use crate::linalg::{spd_inverse3, symmetrize};
use crate::state::{idx, retract, CovarianceMatrix, ErrorState, RobotState};

pub type Jacobian = SMatrix<f64, 3, 21>;
type Gain = SMatrix<f64, 21, 3>;

/// A 3×21 Jacobian with at most three nonzero 3×3 column blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseJacobian {
    blocks: [(usize, Matrix3<f64>); 3],
    len: usize,
}

impl SparseJacobian {
    pub fn new(blocks: &[(usize, Matrix3<f64>)]) -> Self {
        assert!(blocks.len() <= 3, "at most three blocks");
        let mut out = SparseJacobian {
            blocks: [(0, Matrix3::zeros()); 3],
            len: blocks.len(),
        };
        out.blocks[..blocks.len()].copy_from_slice(blocks);
        out
    }

    fn iter(&self) -> impl Iterator<Item = &(usize, Matrix3<f64>)> {
        self.blocks[..self.len].iter()
    }

    pub fn dense(&self) -> Jacobian {
        let mut h = Jacobian::zeros();
        for (at, b) in self.iter() {
            h.fixed_view_mut::<3, 3>(0, *at).copy_from(b);
        }
        h
    }

    /// `H X`
    fn left(&self, x: &CovarianceMatrix) -> Jacobian {
        let mut out = Jacobian::zeros();
        for (at, b) in self.iter() {
            out += b * x.fixed_rows::<3>(*at);
        }
        out
    }

    /// `X Hᵀ` for a 21-column `X`
    fn right(&self, x: &CovarianceMatrix) -> Gain {
        let mut out = Gain::zeros();
        for (at, b) in self.iter() {
            out += x.fixed_columns::<3>(*at) * b.transpose();
        }
        out
    }

    /// `Y Hᵀ` for a 3×21 `Y`
    fn right3(&self, y: &Jacobian) -> Matrix3<f64> {
        let mut out = Matrix3::zeros();
        for (at, b) in self.iter() {
            out += y.fixed_columns::<3>(*at) * b.transpose();
        }
        out
    }
}

/// Result of one gain computation, before deciding to apply it.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Correction {
    pub chi2: f64,
    pub state: RobotState,
    pub covariance: CovarianceMatrix,
}

/// Innovation covariance `S = HPHᵀ + N` and `HP`.
pub(crate) fn innovation_covariance(
    p: &CovarianceMatrix,
    h: &SparseJacobian,
    n: &Matrix3<f64>,
) -> (Jacobian, Matrix3<f64>) {
    let hp = h.left(p);
    let s = h.right3(&hp) + n;
    (hp, symmetrize(&s))
}

/// Gated EKF correction with a Joseph-form covariance update.
///
/// Returns `Ok(Err(chi2))` when the gate rejects the measurement.
pub(crate) fn correct(
    state: &RobotState,
    p: &CovarianceMatrix,
    z: &Vector3<f64>,
    h: &SparseJacobian,
    n: &Matrix3<f64>,
    gate: Option<f64>,
) -> Result<std::result::Result<Correction, f64>> {
    let (hp, s) = innovation_covariance(p, h, n);
    let s_inv = spd_inverse3(&s)?;
    let chi2 = z.dot(&(s_inv * z));
    if let Some(rho) = gate {
        if chi2 > rho {
            return Ok(Err(chi2));
        }
    }
    let k: Gain = hp.transpose() * s_inv;
    let xi: ErrorState = k * z;
    let posterior = retract(state, &(-xi));

    // (I − KH) P (I − KH)ᵀ + K N Kᵀ
    let lp = p - k * hp;
    let lplt = lp - h.right(&lp) * k.transpose();
    let cov = symmetrize(&(lplt + k * n * k.transpose()));
    Ok(Ok(Correction {
        chi2,
        state: posterior,
        covariance: cov,
    }))
}

/// Right-invariant kinematic innovation `Π(χ̂y − b) = R̂ y_vel − v̂`,
/// formed through the 5×5 product.
pub fn kinematic_innovation(state: &RobotState, obs: &KinematicObservation) -> Vector3<f64> {
    let lifted = state.pose.to_matrix() * obs.full() - KinematicObservation::b();
    Vector3::new(lifted[0], lifted[1], lifted[2])
}

/// `H = [0, −I, 0]` for the kinematic observation.
pub fn kinematic_jacobian() -> SparseJacobian {
    SparseJacobian::new(&[(idx::VEL, -Matrix3::identity())])
}

/// `N = R̂ Cov(n_f) R̂ᵀ`.
pub fn kinematic_noise(state: &RobotState, contact: &Matrix3<f64>) -> Matrix3<f64> {
    let r = state.rotation();
    r * contact * r.transpose()
}

/// Predicted camera velocity `h(x̂) = R̂_cᵀR̂ᵀv̂ + ω̃_c^× R̂_cᵀp̂_c`.
pub fn camera_prediction(state: &RobotState, omega_c: &Vector3<f64>) -> Vector3<f64> {
    let rct = state.cam_rotation.matrix().transpose();
    rct * state.body_velocity() + omega_c.cross(&(rct * state.cam_position))
}

/// Jacobian of [`camera_prediction`] with respect to the error state.
///
/// Blocks: velocity `R̂_cᵀR̂ᵀ`; camera rotation
/// `ω̃_c^× R̂_cᵀ p̂_c^× + R̂_cᵀ (R̂ᵀv̂)^×`; camera position `ω̃_c^× R̂_cᵀ`.
pub fn camera_jacobian(state: &RobotState, omega_c: &Vector3<f64>) -> SparseJacobian {
    let rct = state.cam_rotation.matrix().transpose();
    let rt = state.rotation().transpose();
    let w = hat3(omega_c);
    SparseJacobian::new(&[
        (idx::VEL, rct * rt),
        (
            idx::CAM_ROT,
            w * rct * hat3(&state.cam_position) + rct * hat3(&state.body_velocity()),
        ),
        (idx::CAM_POS, w * rct),
    ])
}

/// Camera-frame velocity noise `Cov(n_vc) + a^× Cov(n_ωc) a^×ᵀ`,
/// `a = R̂_cᵀp̂_c`.
pub fn camera_noise(state: &RobotState, cam_velocity: &Matrix3<f64>, cam_rate: &Matrix3<f64>) -> Matrix3<f64> {
    let a = hat3(&(state.cam_rotation.matrix().transpose() * state.cam_position));
    cam_velocity + a * cam_rate * a.transpose()
}
