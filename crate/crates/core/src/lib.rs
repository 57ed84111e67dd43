//! graphwatch learns a system's normal behavior from OS-level event
//! traces and detects failures online.
//!
//! Offline, it builds a process-interaction graph per run, embeds it as
//! a bag-of-nodes vector (instance count and summed degree per
//! executable name), fits a linear model per feature against the served
//! workload, and keeps the features whose fit is good. The selected
//! features are backtracked to a minimal set of event filters, and the
//! online monitor maintains just those counters incrementally, checking
//! them against the model's tolerance bands.

pub mod embed;
pub mod evaluate;
pub mod graph;
pub mod model;
pub mod monitor;
pub mod plan;
pub mod synth;
pub mod trace;

pub use embed::{build_registry, embed, Embedding, FeatureId, FeatureRegistry, Metric};
pub use evaluate::{classify_run, cross_validate, EvalConfig, EvalReport};
pub use graph::{build_graph, export_dot, SystemGraph};
pub use model::{fit_feature, load_model, save_model, train, BehaviorModel, LinearFit, R2};
pub use monitor::{run_monitor, Decision, MonitorMode, MonitorState, Verdict};
pub use plan::{apply_filter, derive_plan, MonitoringPlan, ProbeFilter};
pub use synth::{
    default_scenario, generate_dataset, generate_run, DatasetParams, FaultMode, FaultSpec,
    ScenarioSpec,
};
pub use trace::{parse_trace, write_trace, Event, EventBody, EventKind, Label, RunTrace};
