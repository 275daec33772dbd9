//! Ground-truth generation.
//!
//! The truth is integrated with the filter's own discrete recursion on the
//! event grid, driven by bias-corrupted but noise-free IMU readings held
//! between samples. A noiseless filter started at the truth therefore
//! reproduces it to rounding. The IMU readings are chosen by feedback so
//! that the truth hits the smooth reference orientation and velocity at
//! every IMU sample.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::inekf::{propagate_mean, ImuSample};
use crate::kinematics::ToyLeg;
use crate::lie::{log_so3, Rotation, Se23};
use crate::state::RobotState;

use super::rng;
use super::scenario::{ScenarioConfig, Schedule};

/// World position and velocity of one foot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FootState {
    pub stance: bool,
    pub d: Vector3<f64>,
    pub d_dot: Vector3<f64>,
}

/// Truth at one event tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthTick {
    pub k: u64,
    pub t: f64,
    pub state: RobotState,
    /// Noise-free IMU reading held from this tick on (bias included).
    pub input: ImuSample,
    /// True body rate held from this tick on.
    pub omega: Vector3<f64>,
    pub feet: [FootState; 2],
}

#[derive(Clone, Debug)]
pub struct TruthTimeline {
    pub schedule: Schedule,
    pub ticks: Vec<TruthTick>,
}

impl TruthTimeline {
    pub fn initial(&self) -> &RobotState {
        &self.ticks[0].state
    }

    /// Horizontal distance travelled by the truth.
    pub fn path_length(&self) -> f64 {
        self.ticks
            .windows(2)
            .map(|w| {
                let d = w[1].state.position() - w[0].state.position();
                d.x.hypot(d.y)
            })
            .sum()
    }
}

/// Initial truth state: reference pose at `t = 0`, hip at `hip_height`.
pub fn initial_state(cfg: &ScenarioConfig) -> Result<RobotState> {
    Ok(RobotState {
        pose: Se23::new(
            Rotation::from_matrix(cfg.reference_rotation(0.0))?,
            cfg.reference_velocity(0.0),
            Vector3::new(0.0, 0.0, cfg.hip_height),
        ),
        gyro_bias: cfg.gyro_bias.into(),
        accel_bias: cfg.accel_bias.into(),
        cam_rotation: cfg.cam_rotation()?,
        cam_position: cfg.cam_position.into(),
    })
}

/// IMU inputs over `[t_k, t_next]` that carry `state` onto the reference
/// rotation and velocity at the next IMU sample.
fn tracking_inputs(cfg: &ScenarioConfig, sched: &Schedule, state: &RobotState, k: u64) -> (Vector3<f64>, Vector3<f64>) {
    let t = sched.time(k);
    let next = k + sched.imu_every;
    let t_next = sched.time(next);
    let span = t_next - t;
    let r = *state.rotation();
    let r_target = cfg.reference_rotation(t_next);
    let rel = r.transpose() * r_target;
    let omega = log_so3(&crate::lie::polar_project(&rel)).expect("projected rotation") / span;

    // velocity after the sub-steps is v + M a + g·span with M = Σ R(τ_s) δ_s
    let mut m = Matrix3::zeros();
    let mut prev = t;
    for kk in sched.ticks_between(k, next) {
        let ts = sched.time(kk);
        let rs = r * Rotation::exp(&(omega * (prev - t))).matrix();
        m += rs * (ts - prev);
        prev = ts;
    }
    let v_target = cfg.reference_velocity(t_next);
    let rhs = v_target - state.velocity() - cfg.gravity() * span;
    let accel = m.try_inverse().expect("rotation-weighted span is invertible") * rhs;
    (omega, accel)
}

/// Generates the truth timeline on the event grid.
pub fn generate_truth(cfg: &ScenarioConfig) -> Result<TruthTimeline> {
    cfg.validate()?;
    let sched = Schedule::new(&cfg.rates, cfg.duration);
    let ticks = sched.event_ticks();
    let gravity = cfg.gravity();
    let leg = ToyLeg::default();
    let mut bias_rng = rng::substream(cfg.seed, 1);
    let imu_dt = sched.imu_every as f64 / sched.base as f64;
    let gyro_walk = rng::sqrt_psd(&(cfg.noise.gyro_bias * imu_dt));
    let accel_walk = rng::sqrt_psd(&(cfg.noise.accel_bias * imu_dt));

    let mut state = initial_state(cfg)?;
    let mut feet = [FootState {
        stance: false,
        d: Vector3::zeros(),
        d_dot: Vector3::zeros(),
    }; 2];
    let mut stance: Option<usize> = None;
    let mut input = ImuSample {
        t: 0.0,
        omega: Vector3::zeros(),
        accel: Vector3::zeros(),
    };
    let mut omega = Vector3::zeros();
    let mut out = Vec::with_capacity(ticks.len());

    for (i, &k) in ticks.iter().enumerate() {
        let t = sched.time(k);
        let leg_now = cfg.stance_leg(t);
        if stance != Some(leg_now) {
            let r_td = cfg.touchdown_point(leg_now, t);
            leg.inverse(&r_td).map_err(|e| {
                Error::InfeasibleScenario(format!("touchdown at t = {t} s unreachable: {e}"))
            })?;
            feet[leg_now].d = state.position() + state.rotation() * r_td;
            feet[leg_now].stance = true;
            feet[1 - leg_now].stance = false;
            feet[1 - leg_now].d_dot = Vector3::zeros();
            stance = Some(leg_now);
        }
        feet[leg_now].d_dot = cfg.slip_at(t);

        if sched.is_imu(k) {
            if k > 0 {
                state.gyro_bias += gyro_walk * rng::normal3(&mut bias_rng);
                state.accel_bias += accel_walk * rng::normal3(&mut bias_rng);
            }
            let (w, a) = tracking_inputs(cfg, &sched, &state, k);
            omega = w;
            input = ImuSample {
                t,
                omega: w + state.gyro_bias,
                accel: a + state.accel_bias,
            };
        }

        out.push(TruthTick {
            k,
            t,
            state,
            input,
            omega,
            feet,
        });

        if let Some(&k_next) = ticks.get(i + 1) {
            let dt = sched.time(k_next) - t;
            state = propagate_mean(&state, &input, dt, &gravity);
            for f in feet.iter_mut().filter(|f| f.stance) {
                f.d += f.d_dot * dt;
            }
        }
    }
    Ok(TruthTimeline {
        schedule: sched,
        ticks: out,
    })
}
