//! File formats, configuration, run logging, batch preparation and the
//! evaluation drivers behind the `tp3` command.

pub mod batches;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod log;
pub mod queue;
pub mod synthetic;

pub use config::{RunConfig, Task};
pub use error::{PipelineError, Result};
pub use eval::MetricReport;
