//! The filter: propagation, kinematic and camera updates, camera-noise
//! tuning and the event-ordered driver.

pub mod dynamics;
pub mod tuner;
pub mod update;

use std::sync::Arc;

use nalgebra::{Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::kinematics::{contact_velocity_obs, ContactKinematicSample, KinematicObservation, LegModel, ToyLeg};
use crate::state::{CovarianceMatrix, FilterConfig, NoiseConfig, RobotState};

pub use dynamics::{build_a, build_q, propagate_covariance, propagate_mean, transition};
pub use tuner::NoiseTuner;
pub use update::{
    camera_jacobian, camera_noise, camera_prediction, kinematic_innovation, kinematic_jacobian,
    kinematic_noise, SparseJacobian,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Gyro reading `ω̃`, rad/s.
    pub omega: Vector3<f64>,
    /// Accelerometer reading `ã`, m/s².
    pub accel: Vector3<f64>,
}

/// Tracking-camera output: its own velocity and rotation rate, both in the
/// camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraVelocitySample {
    pub t: f64,
    pub velocity: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl CameraVelocitySample {
    /// `[ω̃_c; ṽ_c]`, the vector fed to the noise tuner.
    pub fn stacked(&self) -> Vector6<f64> {
        Vector6::new(
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateKind {
    Kinematic { contact_id: u32 },
    Camera,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateOutcome {
    pub t: f64,
    pub kind: UpdateKind,
    /// False when gated out or skipped.
    pub accepted: bool,
    pub chi2: f64,
    pub innovation: Vector3<f64>,
    /// The innovation covariance could not be inverted; nothing was applied.
    pub singular: bool,
}

/// One timestamped input.
#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Imu(ImuSample),
    Contact(ContactKinematicSample),
    Camera(CameraVelocitySample),
}

impl Event {
    pub fn t(&self) -> f64 {
        match self {
            Event::Imu(s) => s.t,
            Event::Contact(s) => s.t,
            Event::Camera(s) => s.t,
        }
    }

    /// Processing order at equal timestamps: IMU, then contacts (ascending
    /// id), then camera.
    pub fn order_key(&self) -> (u8, u32) {
        match self {
            Event::Imu(_) => (0, 0),
            Event::Contact(s) => (1, s.contact_id),
            Event::Camera(_) => (2, 0),
        }
    }
}

/// A running filter.
#[derive(Clone)]
pub struct FilterInstance {
    state: RobotState,
    covariance: CovarianceMatrix,
    noise: NoiseConfig,
    config: FilterConfig,
    tuner: NoiseTuner,
    leg: Arc<dyn LegModel>,
    time: Option<f64>,
    last_imu: Option<ImuSample>,
}

impl std::fmt::Debug for FilterInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FilterInstance")
            .field("state", &self.state)
            .field("time", &self.time)
            .field("tuner_len", &self.tuner.len())
            .finish_non_exhaustive()
    }
}

impl FilterInstance {
    /// Filter with the configured initial state and covariance and the toy
    /// leg model.
    pub fn new(config: FilterConfig, noise: NoiseConfig) -> Result<Self> {
        Self::with_leg(config, noise, Arc::new(ToyLeg::default()))
    }

    pub fn with_leg(config: FilterConfig, noise: NoiseConfig, leg: Arc<dyn LegModel>) -> Result<Self> {
        config.validate()?;
        noise.validate()?;
        let state = config.initial_state.to_state()?;
        Ok(FilterInstance {
            state,
            covariance: config.initial_covariance.to_matrix(),
            tuner: NoiseTuner::new(config.tuner_window, config.tuner_floor),
            noise,
            config,
            leg,
            time: None,
            last_imu: None,
        })
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn covariance(&self) -> &CovarianceMatrix {
        &self.covariance
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.noise
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn time(&self) -> Option<f64> {
        self.time
    }

    pub fn tuner(&self) -> &NoiseTuner {
        &self.tuner
    }

    /// Overrides the current estimate; used for tests and re-initialization.
    pub fn reset(&mut self, state: RobotState, covariance: CovarianceMatrix) {
        self.state = state;
        self.covariance = covariance;
    }

    fn check_health(&self) -> Result<()> {
        let trace = self.covariance.trace();
        if !trace.is_finite() || trace > self.config.divergence_trace || !self.state.is_finite() {
            return Err(Error::Diverged {
                t: self.time.unwrap_or(0.0),
                trace,
            });
        }
        Ok(())
    }

    /// One propagation step of length `dt` with the IMU sample held.
    pub fn propagate(&mut self, imu: &ImuSample, dt: f64) -> Result<()> {
        dynamics::check_dt(dt, self.config.dt_max)?;
        if !(imu.omega.iter().chain(imu.accel.iter()).all(|x| x.is_finite())) {
            return Err(Error::NonFinite("IMU sample"));
        }
        let gravity = self.noise.gravity();
        // covariance first: A and Q are evaluated at the prior estimate
        self.covariance = propagate_covariance(&self.covariance, &self.state, &self.noise, dt);
        self.state = propagate_mean(&self.state, imu, dt, &gravity);
        self.check_health()
    }

    /// Gated right-invariant update from a contact-velocity observation.
    pub fn kinematic_update(&mut self, obs: &KinematicObservation) -> Result<UpdateOutcome> {
        self.kinematic_update_with_id(obs, 0)
    }

    fn kinematic_update_with_id(&mut self, obs: &KinematicObservation, contact_id: u32) -> Result<UpdateOutcome> {
        if !obs.y_vel.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("kinematic observation"));
        }
        let z = kinematic_innovation(&self.state, obs);
        let n = kinematic_noise(&self.state, &self.noise.contact);
        let h = kinematic_jacobian();
        let kind = UpdateKind::Kinematic { contact_id };
        self.apply(z, &h, &n, Some(self.config.gate_threshold), kind)
    }

    /// Builds the observation from encoder data and applies it. Inactive
    /// contacts are skipped (`None`).
    pub fn contact_update(&mut self, sample: &ContactKinematicSample) -> Result<Option<UpdateOutcome>> {
        if !sample.active {
            return Ok(None);
        }
        let obs = contact_velocity_obs(sample, self.leg.as_ref())?;
        self.kinematic_update_with_id(&obs, sample.contact_id).map(Some)
    }

    /// Pushes the sample into the tuner window and returns the empirical
    /// covariance of `[ω̃_c; ṽ_c]`.
    pub fn tune_noise(&mut self, cam: &CameraVelocitySample) -> Matrix6<f64> {
        self.tuner.push(cam.stacked());
        self.tuner.covariance()
    }

    /// Linearized camera-velocity update; the noise comes from the tuner
    /// window (including this sample) once it holds two samples.
    pub fn camera_update(&mut self, cam: &CameraVelocitySample) -> Result<UpdateOutcome> {
        if !cam.velocity.iter().chain(cam.omega.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("camera sample"));
        }
        self.tune_noise(cam);
        let (cov_rate, cov_vel) = self
            .tuner
            .camera_blocks()
            .unwrap_or((self.noise.cam_rate, self.noise.cam_velocity));
        let z = camera_prediction(&self.state, &cam.omega) - cam.velocity;
        let h = camera_jacobian(&self.state, &cam.omega);
        let n = camera_noise(&self.state, &cov_vel, &cov_rate);
        self.apply(z, &h, &n, self.config.camera_gate, UpdateKind::Camera)
    }

    fn apply(
        &mut self,
        z: Vector3<f64>,
        h: &SparseJacobian,
        n: &nalgebra::Matrix3<f64>,
        gate: Option<f64>,
        kind: UpdateKind,
    ) -> Result<UpdateOutcome> {
        let mut outcome = UpdateOutcome {
            t: self.time.unwrap_or(0.0),
            kind,
            accepted: false,
            chi2: f64::NAN,
            innovation: z,
            singular: false,
        };
        match update::correct(&self.state, &self.covariance, &z, h, n, gate) {
            Err(Error::SingularInnovation { .. }) => {
                outcome.singular = true;
            }
            Err(e) => return Err(e),
            Ok(Err(chi2)) => outcome.chi2 = chi2,
            Ok(Ok(c)) => {
                outcome.chi2 = c.chi2;
                outcome.accepted = true;
                self.state = c.state;
                self.covariance = c.covariance;
                self.check_health()?;
            }
        }
        Ok(outcome)
    }

    /// Propagates to `t` with the latest IMU sample held, in steps no longer
    /// than `dt_max`. Before the first IMU sample the state is held.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::NonFinite("timestamp"));
        }
        let Some(now) = self.time else {
            self.time = Some(t);
            return Ok(());
        };
        if t < now {
            return Err(Error::NonMonotonicTimestamp { t, previous: now });
        }
        if t > now {
            if let Some(imu) = self.last_imu {
                let span = t - now;
                let steps = (span / self.config.dt_max).ceil().max(1.0) as usize;
                let dt = span / steps as f64;
                for _ in 0..steps {
                    self.propagate(&imu, dt)?;
                }
            }
            self.time = Some(t);
        }
        Ok(())
    }

    /// Handles one event at its timestamp. Events with equal timestamps must
    /// be fed in [`Event::order_key`] order; [`FilterInstance::step`] does
    /// that sorting.
    pub fn process(&mut self, event: &Event) -> Result<Option<UpdateOutcome>> {
        self.advance_to(event.t())?;
        match event {
            Event::Imu(s) => {
                if !(s.omega.iter().chain(s.accel.iter()).all(|x| x.is_finite())) {
                    return Err(Error::NonFinite("IMU sample"));
                }
                self.last_imu = Some(*s);
                Ok(None)
            }
            Event::Contact(s) => self.contact_update(s),
            Event::Camera(s) => self.camera_update(s).map(Some),
        }
    }

    /// Runs a timestamp-sorted batch. Ties are reordered IMU → contacts →
    /// camera; a timestamp earlier than its predecessor is rejected before
    /// anything is applied.
    pub fn step(&mut self, events: &[Event]) -> Result<Vec<UpdateOutcome>> {
        let mut previous = self.time.unwrap_or(f64::NEG_INFINITY);
        for e in events {
            let t = e.t();
            if !(t >= previous) {
                return Err(Error::NonMonotonicTimestamp { t, previous });
            }
            previous = t;
        }
        let mut order: Vec<usize> = (0..events.len()).collect();
        order.sort_by(|&a, &b| {
            events[a]
                .t()
                .total_cmp(&events[b].t())
                .then(events[a].order_key().cmp(&events[b].order_key()))
                .then(a.cmp(&b))
        });
        let mut outcomes = Vec::new();
        for i in order {
            if let Some(o) = self.process(&events[i])? {
                outcomes.push(o);
            }
        }
        Ok(outcomes)
    }
}
