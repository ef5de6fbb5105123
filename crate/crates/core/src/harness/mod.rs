//! Scenario-driven closed-loop trial harness: configuration, the
//! deterministic trial runner with its safety aborts, sweep statistics, and
//! artifact emission (CSV, JSON summary, PGM frames).

mod output;
mod scenario;
mod trial;

pub use output::{
    emit_outputs, trial_csv_bytes, write_pgm, write_summary_json, write_trial_csv, OutputError,
    TRIAL_CSV_HEADER,
};
pub use scenario::{
    Axis, InitialOffset, LaserRig, RigMode, Scenario, ScenarioError, SegmenterChoice,
};
pub use trial::{
    laser_readings, run_sweep, run_trial, AbortReason, HarnessError, MetricTrend, SimilarityTrend,
    Stat, StepRecord, SummaryReport, SweepOutcome, TrialDigest, TrialLog, TrialStatus,
    SENSOR_FAULT_ABORT_S, STEADY_STATE_START_S,
};
