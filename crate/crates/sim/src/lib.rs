//! In-process simulation of many clients against one deployment, with
//! byte accounting, an analytic DP5 baseline and scaling fits.

pub mod baseline;
pub mod config;
pub mod fit;
pub mod metrics;
pub mod run;

pub use baseline::{dp5_baseline, Dp5Baseline};
pub use config::{Absence, ScheduledRevocation, SimConfig, SimConfigError};
pub use fit::{fit_scaling, ScalingFit};
pub use metrics::MetricsRow;
pub use run::{run_sim, sweep, Checks, SimError, SimOutcome};
