//! The three subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use legged_inekf::observability::{
    analyze_discrete, classify_case, discrete_obs_matrix, walk_rows, DiscreteReport, ObsInput, ObservabilityReport,
    RobotCentricState, DEFAULT_TOLERANCE,
};
use legged_inekf::sim::experiment::{run_events, run_variant, truth_rows, TruthRef};
use legged_inekf::sim::metrics::MetricsAccumulator;
use legged_inekf::sim::{
    generate_truth, synthesize_sensors, ExperimentConfig, FilterVariant, MetricsReport, Rates, SensorStreams,
    TruthTimeline,
};
use legged_inekf::FilterInstance;
use nalgebra::Vector3;
use serde::Serialize;

use crate::error::CliError;
use crate::logs::{self, LogBundle};

/// Flags shared by every command; each overrides the config when given.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rates: Option<Rates>,
    pub gate_rho: Option<f64>,
    pub tuner_window: Option<usize>,
}

/// Reads an experiment config (defaults when `path` is `None`) and applies
/// the overrides.
pub fn load_config(path: Option<&Path>, ov: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        None => ExperimentConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Schema {
                path: p.to_path_buf(),
                line: e.line() as u64,
                msg: format!("column {}: {e}", e.column()),
            })?
        }
    };
    if let Some(s) = ov.seed {
        cfg.scenario.seed = s;
    }
    if let Some(r) = ov.rates {
        cfg.scenario.rates = r;
    }
    if let Some(g) = ov.gate_rho {
        cfg.filter.gate_threshold = g;
    }
    if let Some(n) = ov.tuner_window {
        cfg.filter.tuner_window = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// File name of a variant's estimates: the first variant gets
/// `estimates.csv`, later ones `estimates_<variant>.csv`.
pub fn estimates_name(i: usize, v: FilterVariant) -> String {
    if i == 0 {
        "estimates.csv".into()
    } else {
        format!("estimates_{}.csv", v.name())
    }
}

fn divergence(metrics: &BTreeMap<String, MetricsReport>) -> Option<CliError> {
    metrics
        .iter()
        .find_map(|(k, m)| m.diverged.as_ref().map(|d| CliError::Diverged(format!("{k}: {d}"))))
}

/// Writes the sensor logs and the truth of a simulated run.
pub fn write_bundle(dir: &Path, truth: &TruthTimeline, streams: &SensorStreams) -> Result<(), CliError> {
    logs::write_imu(&dir.join("imu.csv"), &streams.imu)?;
    logs::write_contacts(&dir.join("contacts.csv"), &streams.contacts)?;
    logs::write_camera(&dir.join("camera.csv"), &streams.camera)?;
    let (poses, _) = truth_rows(truth);
    logs::write_truth(&dir.join("truth.csv"), &poses)
}

/// `sim`: simulate, write the log bundle, filter every requested variant,
/// write estimates and metrics.json. Divergence is reported after all
/// outputs are written.
pub fn cmd_sim(cfg: &ExperimentConfig, out: &Path) -> Result<BTreeMap<String, MetricsReport>, CliError> {
    ensure_dir(out)?;
    let truth = generate_truth(&cfg.scenario)?;
    let streams = synthesize_sensors(&truth, &cfg.scenario)?;
    write_bundle(out, &truth, &streams)?;
    let mut metrics = BTreeMap::new();
    for (i, &v) in cfg.variants.iter().enumerate() {
        let run = run_variant(cfg, &truth, &streams, v, true)?;
        logs::write_estimates(&out.join(estimates_name(i, v)), &run.records)?;
        metrics.insert(v.name().to_string(), run.metrics);
    }
    write_json(&out.join("metrics.json"), &metrics)?;
    match divergence(&metrics) {
        Some(e) => Err(e),
        None => Ok(metrics),
    }
}

/// Result of a replay.
#[derive(Clone, Debug)]
pub struct ReplaySummary {
    pub variant: FilterVariant,
    /// Set when the camera stream is missing or stops early.
    pub degraded: Option<String>,
    pub metrics: Option<MetricsReport>,
    pub updates: usize,
}

/// `replay`: filter a log directory and write estimates.csv (and
/// metrics.json when truth.csv is present) into `out`.
///
/// The filter starts from the config's initial estimate, the same one
/// `sim` uses, unless `filter_initial_state` selects
/// `filter.initial_state` from the config.
pub fn cmd_replay(
    cfg: &ExperimentConfig,
    logs_dir: &Path,
    out: &Path,
    filter_initial_state: bool,
) -> Result<ReplaySummary, CliError> {
    let bundle = LogBundle::read(logs_dir)?;
    if bundle.imu.is_empty() {
        return Err(CliError::schema(&logs_dir.join("imu.csv"), 2, "no IMU rows".into()));
    }
    let end = bundle.imu.last().map_or(0.0, |s| s.t);
    let (variant, degraded) = match bundle.camera.last() {
        None => (
            FilterVariant::CameraOff,
            Some("camera.csv missing or without rows: kinematics-only".to_string()),
        ),
        Some(last) if end - last.t > 0.1 => (
            FilterVariant::CameraOn,
            Some(format!("camera stream ends at {} s of {} s: kinematics-only afterwards", logs::fmt_time(last.t), logs::fmt_time(end))),
        ),
        Some(_) => (FilterVariant::CameraOn, None),
    };

    let mut filter = if filter_initial_state {
        FilterInstance::new(cfg.filter.clone(), cfg.noise())?
    } else {
        cfg.new_filter()?
    };
    let streams = SensorStreams {
        imu: bundle.imu,
        contacts: bundle.contacts,
        camera: bundle.camera,
    };
    let events = streams.events(variant == FilterVariant::CameraOn);
    let poses = bundle.truth.clone().unwrap_or_default();
    let acc = MetricsAccumulator::new(&filter.noise().gravity(), cfg.transient, cfg.history_rate);
    let run = run_events(&mut filter, &events, TruthRef { poses: &poses, full: &[] }, acc, true)?;

    ensure_dir(out)?;
    logs::write_estimates(&out.join("estimates.csv"), &run.records)?;
    let metrics = bundle.truth.is_some().then_some(run.metrics.clone());
    if let Some(m) = &metrics {
        let mut map = BTreeMap::new();
        map.insert(variant.name().to_string(), m.clone());
        write_json(&out.join("metrics.json"), &map)?;
    }
    if let Some(d) = &run.metrics.diverged {
        return Err(CliError::Diverged(d.clone()));
    }
    Ok(ReplaySummary {
        variant,
        degraded,
        metrics,
        updates: run.records.len(),
    })
}

/// Which configuration the continuous analysis is evaluated at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CaseArg {
    /// The scenario's truth with its time-varying IMU input.
    Dynamic,
    /// `ω̄ = 0`, `v = 0`, specific force balancing gravity.
    Static,
    /// `ω̄ = 0`, constant nonzero velocity.
    ZeroOmegaMoving,
}

#[derive(Clone, Debug, Serialize)]
pub struct ObservabilityOutput {
    pub time: f64,
    #[serde(flatten)]
    pub continuous: ObservabilityReport,
    /// Over a window of camera ticks of the simulated walk (dynamic only).
    pub discrete: Option<DiscreteReport>,
}

/// Input Taylor coefficients from the noise-free IMU readings of the truth,
/// by central differences over `span` seconds.
fn input_jets(truth: &TruthTimeline, i: usize, span: f64) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let t0 = truth.ticks[i].t;
    let near = |t: f64| {
        let j = truth.ticks.partition_point(|k| k.t < t).min(truth.ticks.len() - 1);
        truth.ticks[j].input
    };
    let (m, c, p) = (near(t0 - span), truth.ticks[i].input, near(t0 + span));
    let d1 = |a: Vector3<f64>, b: Vector3<f64>| (b - a) / (2.0 * span);
    let d2 = |a: Vector3<f64>, c: Vector3<f64>, b: Vector3<f64>| (a - 2.0 * c + b) / (2.0 * span * span);
    (
        vec![c.omega, d1(m.omega, p.omega), d2(m.omega, c.omega, p.omega)],
        vec![c.accel, d1(m.accel, p.accel), d2(m.accel, c.accel, p.accel)],
    )
}

/// `observability`: continuous analysis at the truth state at `time`
/// (modified for the singular cases); for the dynamic case also the
/// discrete matrix over `steps` camera ticks from `time` on.
pub fn cmd_observability(
    cfg: &ExperimentConfig,
    case: CaseArg,
    time: f64,
    steps: usize,
) -> Result<ObservabilityOutput, CliError> {
    if !(time > 0.1) || !time.is_finite() {
        return Err(CliError::Config(format!("--time must be > 0.1 s, got {time}")));
    }
    if steps == 0 {
        return Err(CliError::Config("--steps must be positive".into()));
    }
    let mut scenario = cfg.scenario.clone();
    let needed = time + (steps + 2) as f64 / scenario.rates.camera as f64 + 0.2;
    scenario.duration = scenario.duration.max(needed);
    let truth = generate_truth(&scenario)?;
    let i = truth.ticks.partition_point(|k| k.t < time).min(truth.ticks.len() - 1);
    let tick = &truth.ticks[i];
    let g = scenario.gravity();
    let mut state = RobotCentricState::from(&tick.state);
    let input = match case {
        CaseArg::Dynamic => {
            let (w, a) = input_jets(&truth, i, 0.05);
            ObsInput::with_jets(&state, w, a)
        }
        CaseArg::Static | CaseArg::ZeroOmegaMoving => {
            if case == CaseArg::Static {
                state.velocity = Vector3::zeros();
            } else if state.velocity.norm() < 1e-3 {
                state.velocity = Vector3::new(scenario.forward_speed.abs().max(0.1), 0.0, 0.0);
            }
            let accel = state.accel_bias - state.rotation.matrix().transpose() * g;
            ObsInput::constant(&state, state.gyro_bias, accel)
        }
    };
    let continuous = classify_case(&state, &input, &g)?;
    let discrete = match case {
        CaseArg::Dynamic => {
            let rows = walk_rows(&truth, &g, time, steps)?;
            Some(analyze_discrete(&discrete_obs_matrix(&rows)?, &g, DEFAULT_TOLERANCE))
        }
        _ => None,
    };
    Ok(ObservabilityOutput {
        time: tick.t,
        continuous,
        discrete,
    })
}

pub fn write_observability(out: Option<&PathBuf>, report: &ObservabilityOutput) -> Result<(), CliError> {
    match out {
        Some(p) => write_json(p, report),
        None => {
            let text = serde_json::to_string_pretty(report).map_err(|e| CliError::Config(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}
