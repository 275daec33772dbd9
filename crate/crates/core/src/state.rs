//! Filter state, error-state layout, noise and filter configuration.
//!
//! Every 21-dim vector and 21×21 matrix in the crate uses the column layout
//! `[ξ_R; ξ_v; ξ_p; e_bω; e_ba; ξ_Rc; e_pc]`, with offsets in [`idx`].

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{Rotation, Se23, Vector9};

/// Offsets of each 3-block inside the 21-dim error state.
pub mod idx {
    pub const ROT: usize = 0;
    pub const VEL: usize = 3;
    pub const POS: usize = 6;
    pub const GYRO_BIAS: usize = 9;
    pub const ACCEL_BIAS: usize = 12;
    pub const CAM_ROT: usize = 15;
    pub const CAM_POS: usize = 18;
    pub const DIM: usize = 21;
}

pub type ErrorState = SVector<f64, 21>;
pub type CovarianceMatrix = SMatrix<f64, 21, 21>;

/// `(R, v, p, b_ω, b_a, R_c, p_c)`: IMU pose in the world frame, IMU biases,
/// and the camera pose relative to the robot frame.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RobotState {
    pub pose: Se23,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub cam_rotation: Rotation,
    pub cam_position: Vector3<f64>,
}

impl RobotState {
    pub fn rotation(&self) -> &Matrix3<f64> {
        self.pose.rotation.matrix()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.pose.velocity
    }

    pub fn position(&self) -> Vector3<f64> {
        self.pose.position
    }

    /// Velocity expressed in the robot frame, `Rᵀv`.
    pub fn body_velocity(&self) -> Vector3<f64> {
        self.rotation().transpose() * self.pose.velocity
    }

    pub fn is_finite(&self) -> bool {
        let vecs = [
            self.pose.velocity,
            self.pose.position,
            self.gyro_bias,
            self.accel_bias,
            self.cam_position,
        ];
        vecs.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotation().iter().all(|x| x.is_finite())
            && self.cam_rotation.matrix().iter().all(|x| x.is_finite())
    }
}

fn block(v: &ErrorState, at: usize) -> Vector3<f64> {
    v.fixed_rows::<3>(at).into_owned()
}

/// Applies a correction: left-multiplies the pose by `exp(δ_IMU)` and the
/// camera rotation by `exp(δ_Rc)`; biases and camera position add.
pub fn retract(state: &RobotState, delta: &ErrorState) -> RobotState {
    let imu: Vector9 = delta.fixed_rows::<9>(idx::ROT).into_owned();
    RobotState {
        pose: Se23::exp(&imu) * state.pose,
        gyro_bias: state.gyro_bias + block(delta, idx::GYRO_BIAS),
        accel_bias: state.accel_bias + block(delta, idx::ACCEL_BIAS),
        cam_rotation: Rotation::exp(&block(delta, idx::CAM_ROT)) * state.cam_rotation,
        cam_position: state.cam_position + block(delta, idx::CAM_POS),
    }
}

/// Right-invariant error of the pose, `log(χ̂ χ⁻¹)`, the camera rotation
/// error `log(R̂_c R_cᵀ)`, and plain differences for the rest.
pub fn error_between(estimate: &RobotState, truth: &RobotState) -> ErrorState {
    let mut e = ErrorState::zeros();
    let eta = estimate.pose * truth.pose.inverse();
    e.fixed_rows_mut::<9>(idx::ROT).copy_from(&eta.log());
    e.fixed_rows_mut::<3>(idx::GYRO_BIAS)
        .copy_from(&(estimate.gyro_bias - truth.gyro_bias));
    e.fixed_rows_mut::<3>(idx::ACCEL_BIAS)
        .copy_from(&(estimate.accel_bias - truth.accel_bias));
    let cam = estimate.cam_rotation * truth.cam_rotation.transpose();
    e.fixed_rows_mut::<3>(idx::CAM_ROT).copy_from(&cam.log());
    e.fixed_rows_mut::<3>(idx::CAM_POS)
        .copy_from(&(estimate.cam_position - truth.cam_position));
    e
}

/// Covariances of every white-noise term, plus gravity.
///
/// Continuous-time process densities for the IMU, bias and extrinsic random
/// walks; discrete per-sample covariances for the measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(with = "mat3")]
    pub gyro: Matrix3<f64>,
    #[serde(with = "mat3")]
    pub accel: Matrix3<f64>,
    #[serde(with = "mat3")]
    pub gyro_bias: Matrix3<f64>,
    #[serde(with = "mat3")]
    pub accel_bias: Matrix3<f64>,
    #[serde(with = "mat3")]
    pub cam_rotation: Matrix3<f64>,
    #[serde(with = "mat3")]
    pub cam_position: Matrix3<f64>,
    /// Contact-velocity noise `n_f` (robot frame).
    #[serde(with = "mat3")]
    pub contact: Matrix3<f64>,
    /// Camera velocity noise `n_vc` (camera frame).
    #[serde(with = "mat3")]
    pub cam_velocity: Matrix3<f64>,
    /// Camera rotation-rate noise `n_ωc` (camera frame).
    #[serde(with = "mat3")]
    pub cam_rate: Matrix3<f64>,
    pub gravity: [f64; 3],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let iso = |sigma: f64| Matrix3::identity() * sigma * sigma;
        NoiseConfig {
            gyro: iso(2e-3),
            accel: iso(0.02),
            gyro_bias: iso(1e-4),
            accel_bias: iso(1e-3),
            cam_rotation: iso(1e-4),
            cam_position: iso(1e-4),
            contact: iso(0.1),
            cam_velocity: iso(0.01),
            cam_rate: iso(0.005),
            gravity: [0.0, 0.0, -9.81],
        }
    }
}

impl NoiseConfig {
    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    pub fn validate(&self) -> Result<()> {
        let blocks = [
            ("gyro", &self.gyro),
            ("accel", &self.accel),
            ("gyro_bias", &self.gyro_bias),
            ("accel_bias", &self.accel_bias),
            ("cam_rotation", &self.cam_rotation),
            ("cam_position", &self.cam_position),
            ("contact", &self.contact),
            ("cam_velocity", &self.cam_velocity),
            ("cam_rate", &self.cam_rate),
        ];
        for (name, m) in blocks {
            if !m.iter().all(|x| x.is_finite()) || (*m - m.transpose()).amax() > 1e-12 {
                return Err(Error::InvalidConfig(format!("noise.{name} must be symmetric")));
            }
            if m.symmetric_eigen().eigenvalues.min() < -1e-12 {
                return Err(Error::InvalidConfig(format!("noise.{name} must be PSD")));
            }
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::InvalidConfig("gravity must be finite".into()));
        }
        Ok(())
    }

    /// Copy with every covariance set to zero (gravity kept).
    pub fn zero(gravity: [f64; 3]) -> Self {
        let z = Matrix3::zeros();
        NoiseConfig {
            gyro: z,
            accel: z,
            gyro_bias: z,
            accel_bias: z,
            cam_rotation: z,
            cam_position: z,
            contact: z,
            cam_velocity: z,
            cam_rate: z,
            gravity,
        }
    }
}

/// Variances of the initial covariance blocks (each block is `σ² I₃`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialCovariance {
    pub rotation: f64,
    pub velocity: f64,
    pub position: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
    pub cam_rotation: f64,
    pub cam_position: f64,
}

impl Default for InitialCovariance {
    fn default() -> Self {
        InitialCovariance {
            rotation: 0.03 * 0.03,
            velocity: 0.01 * 0.01,
            position: 1e-6,
            gyro_bias: 1e-6,
            accel_bias: 1e-4,
            cam_rotation: 0.1 * 0.1,
            cam_position: 0.05 * 0.05,
        }
    }
}

impl InitialCovariance {
    pub fn to_matrix(&self) -> CovarianceMatrix {
        let mut p = CovarianceMatrix::zeros();
        let blocks = [
            (idx::ROT, self.rotation),
            (idx::VEL, self.velocity),
            (idx::POS, self.position),
            (idx::GYRO_BIAS, self.gyro_bias),
            (idx::ACCEL_BIAS, self.accel_bias),
            (idx::CAM_ROT, self.cam_rotation),
            (idx::CAM_POS, self.cam_position),
        ];
        for (at, var) in blocks {
            for i in 0..3 {
                p[(at + i, at + i)] = var;
            }
        }
        p
    }
}

/// Filter settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Mahalanobis gate on kinematic updates.
    pub gate_threshold: f64,
    /// Optional gate on camera updates; off by default.
    pub camera_gate: Option<f64>,
    /// Camera noise tuner window length.
    pub tuner_window: usize,
    /// Diagonal floor added to the tuned covariance.
    pub tuner_floor: f64,
    /// Largest single propagation step, s.
    pub dt_max: f64,
    /// Trace of P above which the filter is declared divergent.
    pub divergence_trace: f64,
    pub initial_covariance: InitialCovariance,
    pub initial_state: StateRepr,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            gate_threshold: 30.1,
            camera_gate: None,
            tuner_window: 5,
            tuner_floor: 1e-8,
            dt_max: 0.05,
            divergence_trace: 1e4,
            initial_covariance: InitialCovariance::default(),
            initial_state: StateRepr::from(&RobotState::default()),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_threshold > 0.0) {
            return Err(Error::InvalidConfig("gate_threshold must be > 0".into()));
        }
        if let Some(g) = self.camera_gate {
            if !(g > 0.0) {
                return Err(Error::InvalidConfig("camera_gate must be > 0".into()));
            }
        }
        if self.tuner_window < 2 {
            return Err(Error::InvalidConfig("tuner_window must be >= 2".into()));
        }
        if !(self.dt_max > 0.0) {
            return Err(Error::InvalidConfig("dt_max must be > 0".into()));
        }
        if !(self.tuner_floor >= 0.0) {
            return Err(Error::InvalidConfig("tuner_floor must be >= 0".into()));
        }
        self.initial_state.to_state()?;
        Ok(())
    }
}

/// Serialized form of [`RobotState`]: rotations as `[w, x, y, z]`
/// quaternions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRepr {
    pub orientation: [f64; 4],
    pub velocity: [f64; 3],
    pub position: [f64; 3],
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
    pub cam_orientation: [f64; 4],
    pub cam_position: [f64; 3],
}

impl From<&RobotState> for StateRepr {
    fn from(s: &RobotState) -> Self {
        StateRepr {
            orientation: s.pose.rotation.to_quaternion(),
            velocity: s.pose.velocity.into(),
            position: s.pose.position.into(),
            gyro_bias: s.gyro_bias.into(),
            accel_bias: s.accel_bias.into(),
            cam_orientation: s.cam_rotation.to_quaternion(),
            cam_position: s.cam_position.into(),
        }
    }
}

impl StateRepr {
    pub fn to_state(&self) -> Result<RobotState> {
        let [w, x, y, z] = self.orientation;
        let [cw, cx, cy, cz] = self.cam_orientation;
        let state = RobotState {
            pose: Se23::new(
                Rotation::from_quaternion(w, x, y, z)?,
                self.velocity.into(),
                self.position.into(),
            ),
            gyro_bias: self.gyro_bias.into(),
            accel_bias: self.accel_bias.into(),
            cam_rotation: Rotation::from_quaternion(cw, cx, cy, cz)?,
            cam_position: self.cam_position.into(),
        };
        if !state.is_finite() {
            return Err(Error::NonFinite("initial state"));
        }
        Ok(state)
    }
}

/// 3×3 matrices as row-major nested arrays.
mod mat3 {
    use nalgebra::Matrix3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix3<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix3<f64>, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Ok(Matrix3::from_fn(|i, j| rows[i][j]))
    }
}
