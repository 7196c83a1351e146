//! Episode runner, scenario presets, metrics aggregation and result files.

pub mod config;
pub mod episode;
pub mod metrics;
pub mod output;
pub mod scenario;

pub use config::{SceneConfig, SimConfig, TrackingFailureConfig};
pub use episode::{
    classify_outcome, run_episode, EpisodeConfig, EpisodeResult, Outcome, SceneKind, Terminal,
    TraceRecord,
};
pub use metrics::{aggregate, MetricsRow};
pub use output::{emit_results, parse_csv, render, render_csv, render_json, write_traces, Format};
pub use scenario::{plan_scenario, run_plan, run_scenario, ScenarioName, ScenarioOptions, ScenarioRun};
