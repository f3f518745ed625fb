//! Monte-Carlo experiment driver.

pub mod calibrate;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod receiver;
pub mod sweep;

pub use calibrate::{calibrate_thresholds, validate_thresholds, Calibration, HoldoutReport};
pub use config::{derive_seed, ExperimentConfig, ReceiverKind, ReceiverSettings, Stream};
pub use metrics::{compute_metrics, ReceiverEstimate, TrialMetrics};
pub use plot::emit_plotdata;
pub use receiver::{run_receiver, Thresholds};
pub use sweep::{run_sweep, CellContext, CellResult, CsvSink};
