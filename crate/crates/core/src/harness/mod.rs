//! Scenario files, the episode loop, logs, metrics, comparison, replay and
//! the interactive session protocol.

pub mod compare;
pub mod episode;
pub mod log;
pub mod metrics;
pub mod replay;
pub mod scenario;
pub mod session;

pub use compare::{compare_modes, compare_variants, ComparisonReport, ComparisonRow, StageSummary};
pub use episode::{run_episode, EndReason, Episode, EpisodeRun, HumanAct};
pub use log::{EpisodeLog, LogError, LogHeader, LogRecord};
pub use metrics::{compute_metrics, Metrics, TaskMetrics};
pub use replay::{replay, Mismatch, ReplayReport};
pub use scenario::{FieldProblem, Scenario, ScenarioLoadError, ValidationError};
pub use session::{error_frame, state_frame, Session};
