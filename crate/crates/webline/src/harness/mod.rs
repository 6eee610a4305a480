//! Benchmark harness: scenarios, the closed control loop, metrics, and
//! result files.

pub mod calibrate;
pub mod emit;
pub mod metrics;
pub mod runner;
pub mod scenario;

pub use calibrate::{calibrate_r_scale, CalibrationReport};
pub use emit::emit_results;
pub use metrics::{compute_metrics, convergence_time, max_deviation_pct, RunMetrics};
pub use runner::{run_closed_loop, Controller, FeedforwardController, TrajectoryLog};
pub use scenario::{PiecewiseSchedule, Scenario};
