//! Scoring an estimate against truth.

use nalgebra::{DMatrix, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::inekf::{UpdateKind, UpdateOutcome};
use crate::lie::Se23;
use crate::linalg::nullspace_basis;
use crate::state::{error_between, idx, CovarianceMatrix, ErrorState, RobotState};

/// Dimension of the error subspace used for NEES: everything except yaw
/// about gravity and absolute position.
pub const OBSERVABLE_DIM: usize = 17;

type Projector = SMatrix<f64, 21, OBSERVABLE_DIM>;

/// Orthonormal basis of the complement of `span{[g; 0], position block}`.
pub fn observable_basis(gravity: &Vector3<f64>) -> Projector {
    let mut m = DMatrix::zeros(4, 21);
    let g = gravity.normalize();
    for i in 0..3 {
        m[(0, idx::ROT + i)] = g[i];
        m[(1 + i, idx::POS + i)] = 1.0;
    }
    let basis = nullspace_basis(&m, 1e-9);
    Projector::from_column_slice(basis.as_slice())
}

/// Extrinsic calibration error at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicSample {
    pub t: f64,
    pub rotation_deg: f64,
    pub position_m: f64,
    /// All six extrinsic error components within three reported standard
    /// deviations.
    pub within_3sigma: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// RMSE of the robot-frame velocity `Rᵀv` per axis, m/s.
    pub velocity_rmse: [f64; 3],
    /// RMSE of `log(R̂Rᵀ)` per axis, rad.
    pub orientation_rmse: [f64; 3],
    /// Final horizontal position error over the horizontal path length.
    pub horizontal_drift_fraction: f64,
    /// Final vertical position error, m.
    pub vertical_drift: f64,
    pub path_length: f64,
    pub final_extrinsic_rotation_deg: Option<f64>,
    pub final_extrinsic_position_m: Option<f64>,
    pub extrinsic_history: Vec<ExtrinsicSample>,
    /// Fraction of post-transient samples with the extrinsic truth inside
    /// the 3σ envelope.
    pub extrinsic_envelope_fraction: Option<f64>,
    /// Average NEES on the observable subspace (expected value 17).
    pub nees_mean: Option<f64>,
    pub max_kinematic_innovation: f64,
    pub max_camera_innovation: f64,
    pub kinematic_updates: usize,
    pub kinematic_rejected: usize,
    pub camera_updates: usize,
    pub scored_samples: usize,
    pub diverged: Option<String>,
}

impl MetricsReport {
    pub fn max_velocity_rmse(&self) -> f64 {
        self.velocity_rmse.iter().copied().fold(0.0, f64::max)
    }
}

/// Streaming accumulator for [`MetricsReport`].
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    basis: Projector,
    transient: f64,
    history_period: f64,
    next_history: f64,
    vel_sq: Vector3<f64>,
    rot_sq: Vector3<f64>,
    pose_samples: usize,
    path: f64,
    last_truth_pos: Option<Vector3<f64>>,
    last_error_pos: Vector3<f64>,
    nees_sum: f64,
    nees_n: usize,
    envelope_in: usize,
    envelope_n: usize,
    history: Vec<ExtrinsicSample>,
    last_extrinsic: Option<(f64, f64)>,
    max_kin: f64,
    max_cam: f64,
    kin: usize,
    kin_rejected: usize,
    cam: usize,
}

impl MetricsAccumulator {
    /// `transient`: seconds excluded from the envelope statistic;
    /// `history_rate`: Hz of the extrinsic history.
    pub fn new(gravity: &Vector3<f64>, transient: f64, history_rate: f64) -> Self {
        MetricsAccumulator {
            basis: observable_basis(gravity),
            transient,
            history_period: if history_rate > 0.0 { 1.0 / history_rate } else { f64::INFINITY },
            next_history: 0.0,
            vel_sq: Vector3::zeros(),
            rot_sq: Vector3::zeros(),
            pose_samples: 0,
            path: 0.0,
            last_truth_pos: None,
            last_error_pos: Vector3::zeros(),
            nees_sum: 0.0,
            nees_n: 0,
            envelope_in: 0,
            envelope_n: 0,
            history: Vec::new(),
            last_extrinsic: None,
            max_kin: 0.0,
            max_cam: 0.0,
            kin: 0,
            kin_rejected: 0,
            cam: 0,
        }
    }

    pub fn record_outcome(&mut self, o: &UpdateOutcome) {
        let norm = o.innovation.norm();
        match o.kind {
            UpdateKind::Kinematic { .. } => {
                self.kin += 1;
                if !o.accepted {
                    self.kin_rejected += 1;
                }
                self.max_kin = self.max_kin.max(norm);
            }
            UpdateKind::Camera => {
                self.cam += 1;
                self.max_cam = self.max_cam.max(norm);
            }
        }
    }

    /// Velocity, orientation and drift statistics.
    pub fn record_pose(&mut self, estimate: &RobotState, truth: &Se23) {
        let r_true = truth.rotation.matrix();
        let dv = estimate.body_velocity() - r_true.transpose() * truth.velocity;
        let dr = (estimate.pose.rotation * truth.rotation.transpose()).log();
        self.vel_sq += dv.component_mul(&dv);
        self.rot_sq += dr.component_mul(&dr);
        self.pose_samples += 1;
        if let Some(prev) = self.last_truth_pos {
            let d = truth.position - prev;
            self.path += d.x.hypot(d.y);
        }
        self.last_truth_pos = Some(truth.position);
        self.last_error_pos = estimate.position() - truth.position;
    }

    /// NEES and extrinsic statistics (needs the full truth state).
    pub fn record_full(&mut self, t: f64, estimate: &RobotState, p: &CovarianceMatrix, truth: &RobotState) {
        let e: ErrorState = error_between(estimate, truth);
        let x: SVector<f64, OBSERVABLE_DIM> = self.basis.transpose() * e;
        let s = self.basis.transpose() * p * self.basis;
        if let Some(chol) = s.cholesky() {
            self.nees_sum += x.dot(&chol.solve(&x));
            self.nees_n += 1;
        }

        let rot_err = e.fixed_rows::<3>(idx::CAM_ROT).norm().to_degrees();
        let pos_err = e.fixed_rows::<3>(idx::CAM_POS).norm();
        let within = (0..6).all(|i| {
            let k = idx::CAM_ROT + i;
            e[k].abs() <= 3.0 * p[(k, k)].max(0.0).sqrt()
        });
        if t >= self.transient {
            self.envelope_n += 1;
            if within {
                self.envelope_in += 1;
            }
        }
        if t + 1e-12 >= self.next_history {
            self.history.push(ExtrinsicSample {
                t,
                rotation_deg: rot_err,
                position_m: pos_err,
                within_3sigma: within,
            });
            self.next_history += self.history_period;
        }
        self.last_extrinsic = Some((rot_err, pos_err));
    }

    pub fn finish(self, diverged: Option<String>) -> MetricsReport {
        let n = self.pose_samples.max(1) as f64;
        let rms = |v: Vector3<f64>| [(v.x / n).sqrt(), (v.y / n).sqrt(), (v.z / n).sqrt()];
        let horiz = self.last_error_pos.x.hypot(self.last_error_pos.y);
        MetricsReport {
            velocity_rmse: rms(self.vel_sq),
            orientation_rmse: rms(self.rot_sq),
            horizontal_drift_fraction: if self.path > 0.0 { horiz / self.path } else { 0.0 },
            vertical_drift: self.last_error_pos.z.abs(),
            path_length: self.path,
            final_extrinsic_rotation_deg: self.last_extrinsic.map(|e| e.0),
            final_extrinsic_position_m: self.last_extrinsic.map(|e| e.1),
            extrinsic_history: self.history,
            extrinsic_envelope_fraction: (self.envelope_n > 0)
                .then(|| self.envelope_in as f64 / self.envelope_n as f64),
            nees_mean: (self.nees_n > 0).then(|| self.nees_sum / self.nees_n as f64),
            max_kinematic_innovation: self.max_kin,
            max_camera_innovation: self.max_cam,
            kinematic_updates: self.kin,
            kinematic_rejected: self.kin_rejected,
            camera_updates: self.cam,
            scored_samples: self.pose_samples,
            diverged,
        }
    }
}
