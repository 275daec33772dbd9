//! Closed-loop runs: simulate, filter, score.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inekf::{Event, FilterInstance, UpdateKind, UpdateOutcome};
use crate::lie::{Rotation, Se23};
use crate::state::{idx, FilterConfig, NoiseConfig, RobotState, StateRepr};

use super::metrics::{MetricsAccumulator, MetricsReport};
use super::scenario::ScenarioConfig;
use super::sensors::{synthesize_sensors, SensorStreams};
use super::truth::{generate_truth, initial_state, TruthTimeline};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterVariant {
    CameraOn,
    CameraOff,
}

impl FilterVariant {
    pub fn name(self) -> &'static str {
        match self {
            FilterVariant::CameraOn => "camera_on",
            FilterVariant::CameraOff => "camera_off",
        }
    }
}

/// A full experiment: scenario, filter settings and initial extrinsic error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    /// `initial_state` is ignored here: the filter starts at the true
    /// initial state with the extrinsic offsets below applied.
    pub filter: FilterConfig,
    /// Noise assumed by the filter; the scenario noise when absent.
    pub filter_noise: Option<NoiseConfig>,
    /// Rotation vector (rad) applied to the initial `R_c` estimate.
    pub cam_rotation_offset: [f64; 3],
    /// Added to the initial `p_c` estimate, m.
    pub cam_position_offset: [f64; 3],
    /// Seconds excluded from the extrinsic envelope statistic.
    pub transient: f64,
    /// Rate of the extrinsic error history, Hz.
    pub history_rate: f64,
    pub variants: Vec<FilterVariant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let rot = 5f64.to_radians() / 3f64.sqrt();
        let pos = 0.05 / 3f64.sqrt();
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            filter: FilterConfig::default(),
            filter_noise: None,
            cam_rotation_offset: [rot, -rot, rot],
            cam_position_offset: [pos, pos, -pos],
            transient: 20.0,
            history_rate: 10.0,
            variants: vec![FilterVariant::CameraOn, FilterVariant::CameraOff],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.filter.validate()?;
        if let Some(n) = &self.filter_noise {
            n.validate()?;
        }
        let finite = self.cam_rotation_offset.iter().chain(&self.cam_position_offset).all(|x| x.is_finite());
        if !finite || !(self.transient >= 0.0) || !(self.history_rate >= 0.0) {
            return Err(Error::InvalidConfig("offsets, transient and history_rate must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn noise(&self) -> NoiseConfig {
        self.filter_noise.clone().unwrap_or_else(|| self.scenario.noise.clone())
    }

    /// Initial filter estimate. Depends only on the configuration, so a
    /// replay of logged data starts from the same point.
    pub fn initial_estimate(&self) -> Result<RobotState> {
        let mut s = initial_state(&self.scenario)?;
        s.cam_rotation = Rotation::exp(&Vector3::from(self.cam_rotation_offset)) * s.cam_rotation;
        s.cam_position += Vector3::from(self.cam_position_offset);
        Ok(s)
    }

    pub fn new_filter(&self) -> Result<FilterInstance> {
        let mut filter = self.filter.clone();
        filter.initial_state = StateRepr::from(&self.initial_estimate()?);
        FilterInstance::new(filter, self.noise())
    }
}

/// The estimate after one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateRecord {
    pub t: f64,
    pub kind: UpdateKind,
    pub accepted: bool,
    pub chi2: f64,
    pub state: RobotState,
    pub p_diag: [f64; idx::DIM],
}

pub struct RunOutput {
    pub metrics: MetricsReport,
    pub records: Vec<EstimateRecord>,
}

/// Truth to score against. `poses` are scored for velocity, orientation and
/// drift, `full` additionally for NEES and extrinsics. Both time-sorted.
#[derive(Clone, Copy, Debug, Default)]
pub struct TruthRef<'a> {
    pub poses: &'a [(f64, Se23)],
    pub full: &'a [(f64, RobotState)],
}

/// Runs `filter` over time-sorted `events` and scores it. Divergence ends
/// the run and is reported in the metrics; other errors are returned.
pub fn run_events(
    filter: &mut FilterInstance,
    events: &[Event],
    truth: TruthRef<'_>,
    acc: MetricsAccumulator,
    record: bool,
) -> Result<RunOutput> {
    let mut acc = acc;
    let mut records = Vec::new();
    let (mut ip, mut iff) = (0, 0);
    let mut diverged = None;
    let mut i = 0;
    'outer: while i < events.len() {
        let t = events[i].t();
        let mut j = i;
        while j < events.len() && events[j].t() == t {
            j += 1;
        }
        let outcomes = match filter.step(&events[i..j]) {
            Ok(o) => o,
            Err(e @ Error::Diverged { .. }) => {
                diverged = Some(e.to_string());
                break 'outer;
            }
            Err(e) => return Err(e),
        };
        for o in &outcomes {
            acc.record_outcome(o);
            if record {
                records.push(snapshot(filter, o));
            }
        }
        while ip < truth.poses.len() && truth.poses[ip].0 <= t {
            acc.record_pose(filter.state(), &truth.poses[ip].1);
            ip += 1;
        }
        while iff < truth.full.len() && truth.full[iff].0 <= t {
            let (tt, s) = &truth.full[iff];
            acc.record_full(*tt, filter.state(), filter.covariance(), s);
            iff += 1;
        }
        i = j;
    }
    Ok(RunOutput {
        metrics: acc.finish(diverged),
        records,
    })
}

fn snapshot(filter: &FilterInstance, o: &UpdateOutcome) -> EstimateRecord {
    let p = filter.covariance();
    EstimateRecord {
        t: o.t,
        kind: o.kind,
        accepted: o.accepted,
        chi2: o.chi2,
        state: *filter.state(),
        p_diag: std::array::from_fn(|k| p[(k, k)]),
    }
}

/// Truth rows at the IMU ticks (poses) and camera ticks (full states).
pub fn truth_rows(truth: &TruthTimeline) -> (Vec<(f64, Se23)>, Vec<(f64, RobotState)>) {
    let sched = &truth.schedule;
    let poses = truth
        .ticks
        .iter()
        .filter(|t| sched.is_imu(t.k))
        .map(|t| (t.t, t.state.pose))
        .collect();
    let full = truth
        .ticks
        .iter()
        .filter(|t| sched.is_camera(t.k))
        .map(|t| (t.t, t.state))
        .collect();
    (poses, full)
}

/// Filters simulated streams with one variant.
pub fn run_variant(
    cfg: &ExperimentConfig,
    truth: &TruthTimeline,
    streams: &SensorStreams,
    variant: FilterVariant,
    record: bool,
) -> Result<RunOutput> {
    let mut filter = cfg.new_filter()?;
    let events = streams.events(variant == FilterVariant::CameraOn);
    let (poses, full) = truth_rows(truth);
    let acc = MetricsAccumulator::new(&filter.noise().gravity(), cfg.transient, cfg.history_rate);
    run_events(&mut filter, &events, TruthRef { poses: &poses, full: &full }, acc, record)
}

/// Simulates the scenario and filters it with one variant.
pub fn run_experiment(cfg: &ExperimentConfig, variant: FilterVariant) -> Result<MetricsReport> {
    cfg.validate()?;
    let truth = generate_truth(&cfg.scenario)?;
    let streams = synthesize_sensors(&truth, &cfg.scenario)?;
    Ok(run_variant(cfg, &truth, &streams, variant, false)?.metrics)
}
