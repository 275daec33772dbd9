//! Synthetic walking scenarios with slip, sensor synthesis and scoring.

pub mod experiment;
pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod sensors;
pub mod truth;

pub use experiment::{run_experiment, EstimateRecord, ExperimentConfig, FilterVariant, RunOutput};
pub use metrics::MetricsReport;
pub use scenario::{Rates, ScenarioConfig, SlipWindow};
pub use sensors::{synthesize_sensors, SensorStreams};
pub use truth::{generate_truth, TruthTimeline};
