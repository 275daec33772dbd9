//! Error dynamics, process noise and discrete propagation.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::lie::{hat3, Rotation};
use crate::state::{idx, CovarianceMatrix, NoiseConfig, RobotState};

use super::ImuSample;

type Matrix9x15 = SMatrix<f64, 9, 15>;

fn put(m: &mut CovarianceMatrix, row: usize, col: usize, b: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(row, col).copy_from(b);
}

/// Continuous error-dynamics matrix `A` (`ξ̇ = Aξ + Bw`).
///
/// Only the IMU rows are populated; bias and extrinsic errors are pure
/// random walks.
pub fn build_a(state: &RobotState, gravity: &Vector3<f64>) -> CovarianceMatrix {
    let r = state.rotation();
    let mut a = CovarianceMatrix::zeros();
    put(&mut a, idx::VEL, idx::ROT, &hat3(gravity));
    put(&mut a, idx::POS, idx::VEL, &Matrix3::identity());
    put(&mut a, idx::ROT, idx::GYRO_BIAS, &(-r));
    put(&mut a, idx::VEL, idx::GYRO_BIAS, &(-hat3(&state.velocity()) * r));
    put(&mut a, idx::POS, idx::GYRO_BIAS, &(-hat3(&state.position()) * r));
    put(&mut a, idx::VEL, idx::ACCEL_BIAS, &(-r));
    a
}

/// Continuous process noise `Q = B Cov(w) Bᵀ` with
/// `B = blockdiag(Ad_χ̂, I₁₂)`.
///
/// `Cov(w)` is laid out in error-state order: gyro, accel, a zero block for
/// the position row, then the four random-walk densities.
pub fn build_q(state: &RobotState, noise: &NoiseConfig) -> CovarianceMatrix {
    let mut b = CovarianceMatrix::identity();
    b.fixed_view_mut::<9, 9>(0, 0).copy_from(&state.pose.adjoint());
    let mut cov = CovarianceMatrix::zeros();
    put(&mut cov, idx::ROT, idx::ROT, &noise.gyro);
    put(&mut cov, idx::VEL, idx::VEL, &noise.accel);
    put(&mut cov, idx::GYRO_BIAS, idx::GYRO_BIAS, &noise.gyro_bias);
    put(&mut cov, idx::ACCEL_BIAS, idx::ACCEL_BIAS, &noise.accel_bias);
    put(&mut cov, idx::CAM_ROT, idx::CAM_ROT, &noise.cam_rotation);
    put(&mut cov, idx::CAM_POS, idx::CAM_POS, &noise.cam_position);
    b * cov * b.transpose()
}

/// Top nine rows of `Φ − I` restricted to the first fifteen columns.
///
/// `A` is nilpotent (`A⁴ = 0`: gyro bias → rotation → velocity → position),
/// so the series `I + AΔt + A²Δt²/2 + A³Δt³/6` is the exact exponential.
fn transition_rows(state: &RobotState, gravity: &Vector3<f64>, dt: f64) -> Matrix9x15 {
    let r = state.rotation();
    let g = hat3(gravity);
    let rb = -r;
    let vb = -hat3(&state.velocity()) * r;
    let pb = -hat3(&state.position()) * r;
    let gr = g * rb;
    let (t, t2, t3) = (dt, dt * dt / 2.0, dt * dt * dt / 6.0);
    let mut n = Matrix9x15::zeros();
    let mut set = |row: usize, col: usize, m: Matrix3<f64>| {
        n.fixed_view_mut::<3, 3>(row, col).copy_from(&m);
    };
    set(idx::VEL, idx::ROT, g * t);
    set(idx::POS, idx::ROT, g * t2);
    set(idx::POS, idx::VEL, Matrix3::identity() * t);
    set(idx::ROT, idx::GYRO_BIAS, rb * t);
    set(idx::VEL, idx::GYRO_BIAS, vb * t + gr * t2);
    set(idx::POS, idx::GYRO_BIAS, pb * t + vb * t2 + gr * t3);
    set(idx::VEL, idx::ACCEL_BIAS, -r * t);
    set(idx::POS, idx::ACCEL_BIAS, -r * t2);
    n
}

/// State-transition matrix `Φ = exp(AΔt)` in closed form.
pub fn transition(state: &RobotState, gravity: &Vector3<f64>, dt: f64) -> CovarianceMatrix {
    let mut phi = CovarianceMatrix::identity();
    let n = transition_rows(state, gravity, dt);
    let mut top = phi.fixed_view_mut::<9, 15>(0, 0);
    top += n;
    phi
}

/// Discrete mean propagation under a zero-order-held IMU sample.
pub fn propagate_mean(state: &RobotState, imu: &ImuSample, dt: f64, gravity: &Vector3<f64>) -> RobotState {
    let r = *state.rotation();
    let omega = imu.omega - state.gyro_bias;
    let acc = r * (imu.accel - state.accel_bias) + gravity;
    let v = state.velocity();
    let mut out = *state;
    out.pose.rotation = state.pose.rotation * Rotation::exp(&(omega * dt));
    out.pose.velocity = v + acc * dt;
    out.pose.position = state.position() + v * dt + acc * (0.5 * dt * dt);
    out
}

/// `P ← Φ(P + QΔt)Φᵀ`, i.e. `ΦPΦᵀ + Q_k` with `Q_k = ΦQΦᵀΔt`.
///
/// `Φ − I` lives in a 9×15 block, which the product exploits; the result is
/// identical to the dense formula up to rounding.
pub fn propagate_covariance(
    p: &CovarianceMatrix,
    state: &RobotState,
    noise: &NoiseConfig,
    dt: f64,
) -> CovarianceMatrix {
    let gravity = noise.gravity();
    let n = transition_rows(state, &gravity, dt);

    let mut x = *p;
    let ad = state.pose.adjoint();
    let r = state.rotation();
    // Ad · blockdiag(gyro, accel, 0) · Adᵀ without forming the 9×9 product
    let col_r = SMatrix::<f64, 9, 3>::from_fn(|i, j| ad[(i, j)]);
    let q9 = col_r * noise.gyro * col_r.transpose();
    let mut top = x.fixed_view_mut::<9, 9>(0, 0);
    top += q9 * dt;
    let qa = r * noise.accel * r.transpose() * dt;
    let mut vv = x.fixed_view_mut::<3, 3>(idx::VEL, idx::VEL);
    vv += qa;
    let diag = [
        (idx::GYRO_BIAS, &noise.gyro_bias),
        (idx::ACCEL_BIAS, &noise.accel_bias),
        (idx::CAM_ROT, &noise.cam_rotation),
        (idx::CAM_POS, &noise.cam_position),
    ];
    for (at, q) in diag {
        let mut b = x.fixed_view_mut::<3, 3>(at, at);
        b += *q * dt;
    }

    // Φ X Φᵀ = X + N X + (N X)ᵀ + N X Nᵀ with N = Φ − I (rows 0..9, cols 0..15)
    let nx: SMatrix<f64, 9, 21> = n * x.fixed_rows::<15>(0);
    let nxn: SMatrix<f64, 9, 9> = n * nx.fixed_columns::<15>(0).transpose();
    let mut out = x;
    {
        let mut rows = out.fixed_rows_mut::<9>(0);
        rows += nx;
    }
    {
        let mut cols = out.fixed_columns_mut::<9>(0);
        cols += nx.transpose();
    }
    {
        let mut tl = out.fixed_view_mut::<9, 9>(0, 0);
        tl += nxn;
    }
    crate::linalg::symmetrize(&out)
}

pub(crate) fn check_dt(dt: f64, dt_max: f64) -> Result<()> {
    if !(dt > 0.0 && dt <= dt_max) {
        return Err(Error::InvalidTimestep { dt, max: dt_max });
    }
    Ok(())
}
