//! Sensor synthesis from a truth timeline.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::inekf::{CameraVelocitySample, Event, ImuSample};
use crate::kinematics::{joint_rates_for, ContactKinematicSample, LegModel, ToyLeg};

use super::rng;
use super::scenario::ScenarioConfig;
use super::truth::TruthTimeline;

/// The three sensor streams of a run, each in time order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SensorStreams {
    pub imu: Vec<ImuSample>,
    pub contacts: Vec<ContactKinematicSample>,
    pub camera: Vec<CameraVelocitySample>,
}

impl SensorStreams {
    /// All samples merged in processing order.
    pub fn events(&self, with_camera: bool) -> Vec<Event> {
        let mut out: Vec<Event> = Vec::with_capacity(self.imu.len() + self.contacts.len() + self.camera.len());
        out.extend(self.imu.iter().copied().map(Event::Imu));
        out.extend(self.contacts.iter().cloned().map(Event::Contact));
        if with_camera {
            out.extend(self.camera.iter().copied().map(Event::Camera));
        }
        out.sort_by(|a, b| a.t().total_cmp(&b.t()).then(a.order_key().cmp(&b.order_key())));
        out
    }
}

/// Synthesizes IMU, contact-encoder and camera samples.
///
/// - IMU: `ω̃ = ω + b_ω + w_ω`, `ã = a + b_a + w_a` with white-noise
///   variance `density / Δt_imu`.
/// - Contacts: the stance foot's joint rates are solved so that the encoder
///   observation equals `Rᵀ(v − ḋ) + n_f`, using the latest gyro reading in
///   the lever-arm term. The swing leg is logged inactive.
/// - Camera: `ω̃_c = R_cᵀω + n_ωc`,
///   `ṽ_c = R_cᵀRᵀv + ω_c^× R_cᵀ p_c + n_vc` (true `ω_c` in the lever term).
pub fn synthesize_sensors(truth: &TruthTimeline, cfg: &ScenarioConfig) -> Result<SensorStreams> {
    let sched = &truth.schedule;
    let leg = ToyLeg::default();
    let mut r = rng::substream(cfg.seed, 2);
    let imu_dt = sched.imu_every as f64 / sched.base as f64;
    let noise = &cfg.noise;
    let gyro = rng::sqrt_psd(&(noise.gyro / imu_dt));
    let accel = rng::sqrt_psd(&(noise.accel / imu_dt));
    let contact = rng::sqrt_psd(&noise.contact);
    let cam_v = rng::sqrt_psd(&noise.cam_velocity);
    let cam_w = rng::sqrt_psd(&noise.cam_rate);
    let draw = |m: &Matrix3<f64>, r: &mut rng::SimRng| m * rng::normal3(r);

    let swing: [Vec<f64>; 2] = [0, 1].map(|l| {
        let mut p = cfg.touchdown_point(l, 0.0);
        p.x -= cfg.forward_speed.abs() * cfg.gait_period / 4.0;
        p.z += 0.08;
        leg.inverse(&p).map(|a| a.to_vec()).unwrap_or_else(|_| vec![0.0; 3])
    });

    let mut out = SensorStreams::default();
    let mut gyro_latest = Vector3::zeros();
    for tick in &truth.ticks {
        let k = tick.k;
        let s = &tick.state;
        if sched.is_imu(k) {
            let sample = ImuSample {
                t: tick.t,
                omega: tick.input.omega + draw(&gyro, &mut r),
                accel: tick.input.accel + draw(&accel, &mut r),
            };
            gyro_latest = sample.omega;
            out.imu.push(sample);
        }
        if sched.is_contact(k) {
            for (id, foot) in tick.feet.iter().enumerate() {
                if !foot.stance {
                    out.contacts.push(ContactKinematicSample {
                        t: tick.t,
                        contact_id: id as u32,
                        active: false,
                        alpha: swing[id].clone(),
                        alpha_dot: vec![0.0; 3],
                        omega_tilde: gyro_latest,
                    });
                    continue;
                }
                let rt = s.rotation().transpose();
                let r_foot = rt * (foot.d - s.position());
                let alpha = leg.inverse(&r_foot).map_err(|e| {
                    Error::InfeasibleScenario(format!("stance foot {id} at t = {} s: {e}", tick.t))
                })?;
                let y = rt * (s.velocity() - foot.d_dot) + draw(&contact, &mut r);
                let rate_target = -y - gyro_latest.cross(&leg.forward(&alpha)?);
                let alpha_dot = joint_rates_for(&leg, &alpha, &rate_target)?;
                out.contacts.push(ContactKinematicSample {
                    t: tick.t,
                    contact_id: id as u32,
                    active: true,
                    alpha: alpha.to_vec(),
                    alpha_dot,
                    omega_tilde: gyro_latest,
                });
            }
        }
        if sched.is_camera(k) {
            let rct = s.cam_rotation.matrix().transpose();
            let omega_c = rct * tick.omega;
            let v_c = rct * s.body_velocity() + omega_c.cross(&(rct * s.cam_position));
            out.camera.push(CameraVelocitySample {
                t: tick.t,
                velocity: v_c + draw(&cam_v, &mut r),
                omega: omega_c + draw(&cam_w, &mut r),
            });
        }
    }
    Ok(out)
}
