//! Full-reference and mechanism metrics, the robustness sweep, the
//! ablation harness and throughput profiling.

mod diagnostics;
mod harness;
mod metrics;

pub use diagnostics::*;
pub use harness::*;
pub use metrics::*;
