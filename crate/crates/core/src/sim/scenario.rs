//! Scenario description and the event-time grid.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Rotation;
use crate::state::NoiseConfig;

/// Sensor rates in Hz. All event times lie on a common grid of
/// `lcm(rates)` ticks per second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub imu: u64,
    pub contact: u64,
    pub camera: u64,
}

impl Default for Rates {
    fn default() -> Self {
        Rates {
            imu: 800,
            contact: 2000,
            camera: 200,
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

impl Rates {
    pub fn validate(&self) -> Result<()> {
        if self.imu == 0 || self.contact == 0 || self.camera == 0 {
            return Err(Error::InvalidConfig("rates must be positive".into()));
        }
        if self.base() > 1_000_000 {
            return Err(Error::InvalidConfig("rates need a common grid finer than 1 MHz".into()));
        }
        Ok(())
    }

    pub fn base(&self) -> u64 {
        lcm(lcm(self.imu, self.contact), self.camera)
    }

    /// Parses `imu,contact,camera` (Hz).
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::InvalidConfig(format!("rates must be `imu,contact,camera`, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n: Vec<u64> = parts.iter().map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let rates = Rates {
            imu: n[0],
            contact: n[1],
            camera: n[2],
        };
        rates.validate()?;
        Ok(rates)
    }
}

/// Timestamp of grid tick `k`, rounded to nanoseconds so that it survives
/// a 9-decimal text round trip unchanged.
pub fn tick_time(k: u64, base: u64) -> f64 {
    let t = k as f64 / base as f64;
    format!("{t:.9}").parse().expect("formatted float parses")
}

/// Which streams fire on which grid ticks.
#[derive(Clone, Copy, Debug)]
pub struct Schedule {
    pub base: u64,
    pub imu_every: u64,
    pub contact_every: u64,
    pub camera_every: u64,
    pub last_tick: u64,
}

impl Schedule {
    pub fn new(rates: &Rates, duration: f64) -> Self {
        let base = rates.base();
        Schedule {
            base,
            imu_every: base / rates.imu,
            contact_every: base / rates.contact,
            camera_every: base / rates.camera,
            last_tick: (duration * base as f64).round() as u64,
        }
    }

    pub fn is_imu(&self, k: u64) -> bool {
        k % self.imu_every == 0
    }

    pub fn is_contact(&self, k: u64) -> bool {
        k % self.contact_every == 0
    }

    pub fn is_camera(&self, k: u64) -> bool {
        k % self.camera_every == 0
    }

    pub fn is_event(&self, k: u64) -> bool {
        self.is_imu(k) || self.is_contact(k) || self.is_camera(k)
    }

    pub fn time(&self, k: u64) -> f64 {
        tick_time(k, self.base)
    }

    /// Event ticks in `(from, to]`, not limited to the scenario duration.
    pub fn ticks_between(&self, from: u64, to: u64) -> Vec<u64> {
        (from + 1..=to).filter(|&k| self.is_event(k)).collect()
    }

    pub fn event_ticks(&self) -> Vec<u64> {
        (0..=self.last_tick).filter(|&k| self.is_event(k)).collect()
    }
}

/// A time window during which the stance foot slides at a constant world
/// velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlipWindow {
    pub start: f64,
    pub end: f64,
    pub velocity: [f64; 3],
}

/// Everything needed to generate a run.
///
/// The pelvis follows a smooth reference: forward walking at
/// `forward_speed` along a heading `ψ(t) = yaw_rate·t + yaw_amplitude·
/// sin(2πt/yaw_period)`, lateral sway once per gait cycle, vertical bobbing
/// twice per cycle, and roll/pitch oscillation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration: f64,
    pub gait_period: f64,
    pub forward_speed: f64,
    /// Time to ramp up to `forward_speed` from rest (cosine ramp).
    pub speed_ramp: f64,
    pub yaw_rate: f64,
    pub yaw_amplitude: f64,
    pub yaw_period: f64,
    pub bob_amplitude: f64,
    pub sway_amplitude: f64,
    pub roll_amplitude: f64,
    pub pitch_amplitude: f64,
    pub hip_height: f64,
    /// Hip-yaw angle of the nominal stance foot (± for left/right).
    pub stance_yaw: f64,
    /// Horizontal distance of the nominal stance foot from the hip axis.
    pub foot_reach: f64,
    pub slip_windows: Vec<SlipWindow>,
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
    /// Camera-to-robot rotation `R_c` as a `[w, x, y, z]` quaternion.
    pub cam_orientation: [f64; 4],
    pub cam_position: [f64; 3],
    /// Sensor noise. The IMU and bias entries are continuous densities, the
    /// rest per-sample covariances; the extrinsic random walks are unused
    /// (the true mounting is rigid).
    pub noise: NoiseConfig,
    pub rates: Rates,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let q = nalgebra::UnitQuaternion::from_scaled_axis(Vector3::new(0.05, -0.1, 0.15));
        ScenarioConfig {
            duration: 35.0,
            gait_period: 0.8,
            forward_speed: 0.1,
            speed_ramp: 1.0,
            yaw_rate: 0.0,
            yaw_amplitude: 0.3,
            yaw_period: 10.0,
            bob_amplitude: 0.02,
            sway_amplitude: 0.01,
            roll_amplitude: 0.05,
            pitch_amplitude: 0.05,
            hip_height: 0.7,
            stance_yaw: 0.5,
            foot_reach: 0.3,
            slip_windows: Vec::new(),
            gyro_bias: [0.003, -0.002, 0.001],
            accel_bias: [0.05, -0.03, 0.02],
            cam_orientation: [q.w, q.i, q.j, q.k],
            cam_position: [0.15, 0.0, 0.2],
            noise: NoiseConfig::default(),
            rates: Rates::default(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be > 0");
        }
        if !(self.gait_period > 0.0) {
            return bad("gait_period must be > 0");
        }
        if !(self.yaw_period > 0.0) {
            return bad("yaw_period must be > 0");
        }
        if !(self.speed_ramp >= 0.0) || !(self.hip_height > 0.0) {
            return bad("speed_ramp must be >= 0 and hip_height > 0");
        }
        for w in &self.slip_windows {
            if !(w.start >= 0.0 && w.end > w.start && w.end <= self.duration) {
                return bad("slip windows must lie inside the run");
            }
        }
        self.rates.validate()?;
        self.noise.validate()?;
        self.cam_rotation()?;
        // a stance lasts half a gait period; the foot must stay within a
        // conservative horizontal reach of the toy leg
        let stride = self.forward_speed.abs() * self.gait_period / 2.0;
        let max_slip = self
            .slip_windows
            .iter()
            .map(|w| Vector3::from(w.velocity).norm())
            .fold(0.0, f64::max);
        if stride + max_slip * self.gait_period / 2.0 > 0.3 {
            return Err(Error::InfeasibleScenario(format!(
                "stance travel {:.3} m exceeds the toy leg's reach",
                stride + max_slip * self.gait_period / 2.0
            )));
        }
        Ok(())
    }

    pub fn cam_rotation(&self) -> Result<Rotation> {
        let [w, x, y, z] = self.cam_orientation;
        Rotation::from_quaternion(w, x, y, z)
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.noise.gravity()
    }

    /// Slip velocity active at `t`, if any.
    pub fn slip_at(&self, t: f64) -> Vector3<f64> {
        self.slip_windows
            .iter()
            .find(|w| t >= w.start && t < w.end)
            .map(|w| Vector3::from(w.velocity))
            .unwrap_or_else(Vector3::zeros)
    }

    fn gait_rate(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.gait_period
    }

    fn speed(&self, t: f64) -> f64 {
        if self.speed_ramp > 0.0 && t < self.speed_ramp {
            self.forward_speed * 0.5 * (1.0 - (std::f64::consts::PI * t / self.speed_ramp).cos())
        } else {
            self.forward_speed
        }
    }

    fn heading(&self, t: f64) -> f64 {
        self.yaw_rate * t + self.yaw_amplitude * (2.0 * std::f64::consts::PI * t / self.yaw_period).sin()
    }

    /// Reference orientation `Rz(ψ) Ry(θ) Rx(φ)`.
    pub fn reference_rotation(&self, t: f64) -> Matrix3<f64> {
        let w = self.gait_rate();
        let pitch = self.pitch_amplitude * (2.0 * w * t + 0.3).sin();
        let roll = self.roll_amplitude * (w * t).sin();
        let rz = Rotation::exp(&Vector3::new(0.0, 0.0, self.heading(t)));
        let ry = Rotation::exp(&Vector3::new(0.0, pitch, 0.0));
        let rx = Rotation::exp(&Vector3::new(roll, 0.0, 0.0));
        rz.matrix() * ry.matrix() * rx.matrix()
    }

    /// Reference world velocity.
    pub fn reference_velocity(&self, t: f64) -> Vector3<f64> {
        let w = self.gait_rate();
        let (s, c) = self.heading(t).sin_cos();
        let fwd = self.speed(t);
        let lateral = self.sway_amplitude * w * (w * t).cos();
        let vertical = self.bob_amplitude * 2.0 * w * (2.0 * w * t).cos();
        Vector3::new(c * fwd - s * lateral, s * fwd + c * lateral, vertical)
    }

    /// Nominal robot-frame stance-foot position of `leg` at touchdown,
    /// shifted forward by half the stance travel.
    pub fn touchdown_point(&self, leg: usize, t: f64) -> Vector3<f64> {
        let side = if leg == 0 { 1.0 } else { -1.0 };
        let yaw = side * self.stance_yaw;
        let forward = self.speed(t) * self.gait_period / 4.0;
        Vector3::new(
            yaw.cos() * self.foot_reach + forward,
            yaw.sin() * self.foot_reach,
            -self.hip_height,
        )
    }

    /// Index of the stance leg at `t`: left during the first half of each
    /// gait cycle, right during the second.
    pub fn stance_leg(&self, t: f64) -> usize {
        ((t / (self.gait_period / 2.0)).floor() as i64).rem_euclid(2) as usize
    }
}
