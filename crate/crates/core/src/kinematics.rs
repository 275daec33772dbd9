//! Contact-velocity observation from joint encoders.
//!
//! With a stance foot fixed in the world, the robot-frame velocity follows
//! from the joint rates and the gyro:
//!
//! ```text
//! y = −(J(α) α̇ + ω̃ × r(α)) = Rᵀ v + n_f
//! ```
//!
//! The raw gyro (bias included) is used; its bias is absorbed by `n_f`.

use nalgebra::{Matrix3, Vector3, Vector5};

use crate::error::{Error, Result};
use crate::lie::hat3;

/// Leg forward kinematics: contact point in the robot frame and its joint
/// Jacobian. Implementations must be stateless.
pub trait LegModel: Send + Sync {
    fn joint_count(&self) -> usize;

    /// Contact point `r(α)` in the robot frame, m.
    fn forward(&self, alpha: &[f64]) -> Result<Vector3<f64>>;

    /// `∂r/∂α`, one column per joint.
    fn jacobian(&self, alpha: &[f64]) -> Result<nalgebra::Matrix3xX<f64>>;
}

/// One encoder reading for one contact.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactKinematicSample {
    pub t: f64,
    pub contact_id: u32,
    pub active: bool,
    pub alpha: Vec<f64>,
    pub alpha_dot: Vec<f64>,
    /// Gyro reading at the same instant.
    pub omega_tilde: Vector3<f64>,
}

/// The right-invariant observation `y = [y_vel; −1; 0]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicObservation {
    pub y_vel: Vector3<f64>,
}

impl KinematicObservation {
    pub fn full(&self) -> Vector5<f64> {
        Vector5::new(self.y_vel.x, self.y_vel.y, self.y_vel.z, -1.0, 0.0)
    }

    /// The constant vector `b` with `y = χ⁻¹ b + s`.
    pub fn b() -> Vector5<f64> {
        Vector5::new(0.0, 0.0, 0.0, -1.0, 0.0)
    }
}

/// Builds the contact-velocity observation for an active contact.
pub fn contact_velocity_obs(
    sample: &ContactKinematicSample,
    model: &dyn LegModel,
) -> Result<KinematicObservation> {
    if !sample.active {
        return Err(Error::InactiveContact(sample.contact_id));
    }
    let finite = sample
        .alpha
        .iter()
        .chain(&sample.alpha_dot)
        .chain(sample.omega_tilde.iter())
        .all(|x| x.is_finite());
    if !finite {
        return Err(Error::NonFinite("encoder sample"));
    }
    if sample.alpha.len() != model.joint_count() || sample.alpha_dot.len() != model.joint_count() {
        return Err(Error::DimensionMismatch(format!(
            "leg has {} joints, sample carries {}/{}",
            model.joint_count(),
            sample.alpha.len(),
            sample.alpha_dot.len()
        )));
    }
    let r = model.forward(&sample.alpha)?;
    let j = model.jacobian(&sample.alpha)?;
    let joint_term = j * nalgebra::DVector::from_column_slice(&sample.alpha_dot);
    let y_vel = -(joint_term + sample.omega_tilde.cross(&r));
    Ok(KinematicObservation { y_vel })
}

/// Three-joint serial leg: hip yaw, hip pitch, knee pitch.
///
/// The hip yaw carries a horizontal mount link; thigh and shin hang from it.
/// At zero angles the foot is straight below the mount at
/// `(mount, 0, −(thigh + shin))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyLeg {
    pub mount: f64,
    pub thigh: f64,
    pub shin: f64,
    pub joint_limit: f64,
}

impl Default for ToyLeg {
    fn default() -> Self {
        ToyLeg {
            mount: 0.2,
            thigh: 0.4,
            shin: 0.4,
            joint_limit: std::f64::consts::FRAC_PI_2,
        }
    }
}

impl ToyLeg {
    fn check(&self, alpha: &[f64]) -> Result<[f64; 3]> {
        if alpha.len() != 3 {
            return Err(Error::DimensionMismatch(format!(
                "toy leg has 3 joints, got {}",
                alpha.len()
            )));
        }
        for (joint, &angle) in alpha.iter().enumerate() {
            if !angle.is_finite() {
                return Err(Error::NonFinite("joint angle"));
            }
            if angle.abs() > self.joint_limit {
                return Err(Error::JointLimit { joint, angle });
            }
        }
        Ok([alpha[0], alpha[1], alpha[2]])
    }

    /// Closed-form inverse kinematics with the knee bent backwards
    /// (non-positive knee angle).
    pub fn inverse(&self, r: &Vector3<f64>) -> Result<[f64; 3]> {
        let yaw = r.y.atan2(r.x);
        let x = r.x.hypot(r.y) - self.mount;
        let down = -r.z;
        let d2 = x * x + down * down;
        let (l1, l2) = (self.thigh, self.shin);
        let c = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if !(-1.0..=1.0).contains(&c) {
            return Err(Error::OutOfReach);
        }
        let knee = -c.acos();
        let hip = x.atan2(down) - (l2 * knee.sin()).atan2(l1 + l2 * knee.cos());
        let alpha = [yaw, hip, knee];
        self.check(&alpha)?;
        Ok(alpha)
    }
}

impl LegModel for ToyLeg {
    fn joint_count(&self) -> usize {
        3
    }

    fn forward(&self, alpha: &[f64]) -> Result<Vector3<f64>> {
        let [yaw, hip, knee] = self.check(alpha)?;
        let reach = self.mount + self.thigh * hip.sin() + self.shin * (hip + knee).sin();
        let z = -self.thigh * hip.cos() - self.shin * (hip + knee).cos();
        Ok(Vector3::new(yaw.cos() * reach, yaw.sin() * reach, z))
    }

    fn jacobian(&self, alpha: &[f64]) -> Result<nalgebra::Matrix3xX<f64>> {
        let [yaw, hip, knee] = self.check(alpha)?;
        let (s0, c0) = yaw.sin_cos();
        let reach = self.mount + self.thigh * hip.sin() + self.shin * (hip + knee).sin();
        let d_reach_hip = self.thigh * hip.cos() + self.shin * (hip + knee).cos();
        let d_z_hip = self.thigh * hip.sin() + self.shin * (hip + knee).sin();
        let d_reach_knee = self.shin * (hip + knee).cos();
        let d_z_knee = self.shin * (hip + knee).sin();
        let m = Matrix3::new(
            -s0 * reach,
            c0 * d_reach_hip,
            c0 * d_reach_knee,
            c0 * reach,
            s0 * d_reach_hip,
            s0 * d_reach_knee,
            0.0,
            d_z_hip,
            d_z_knee,
        );
        Ok(nalgebra::Matrix3xX::from_column_slice(m.as_slice()))
    }
}

/// Joint rates that produce the contact-point velocity `r_dot` (robot frame).
pub fn joint_rates_for(model: &dyn LegModel, alpha: &[f64], r_dot: &Vector3<f64>) -> Result<Vec<f64>> {
    let j = model.jacobian(alpha)?;
    if j.ncols() != 3 {
        return Err(Error::DimensionMismatch("joint_rates_for needs a 3-joint leg".into()));
    }
    let square = Matrix3::from_column_slice(j.as_slice());
    let inv = square.try_inverse().ok_or(Error::OutOfReach)?;
    Ok((inv * r_dot).iter().copied().collect())
}

/// Cross-product matrix of the gyro reading, for callers assembling the
/// observation by hand.
pub fn gyro_lever(omega_tilde: &Vector3<f64>, r: &Vector3<f64>) -> Vector3<f64> {
    hat3(omega_tilde) * r
}
