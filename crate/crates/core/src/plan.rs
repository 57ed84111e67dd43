//! Backtracks selected features to the event filters needed online.
//!
//! The bag-of-nodes backtracking rules, encoded once: a selected exe must
//! be observable wherever its nodes or edges originate, so it subscribes
//! to SPAWN (instance creation, plus discovery of instances never spawned
//! in-trace) and to IPC and NET (degree contributions and peer-side
//! discovery). A REQUEST filter is always present to count workload.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::embed::FeatureId;
use crate::model::BehaviorModel;
use crate::trace::{Event, EventKind, RunTrace};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("model has no selected features")]
    EmptySelection,
    #[error("plan file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("unsupported plan version: {0}")]
    Version(String),
}

/// One event-kind filter. An empty exe set captures every event of the kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeFilter {
    pub kind: EventKind,
    pub exe_set: BTreeSet<String>,
}

impl ProbeFilter {
    pub fn matches(&self, ev: &Event) -> bool {
        if ev.body.kind() != self.kind {
            return false;
        }
        if self.exe_set.is_empty() {
            return true;
        }
        ev.body
            .exe()
            .map_or(false, |e| self.exe_set.contains(e))
            || ev
                .body
                .peer_exe()
                .map_or(false, |e| self.exe_set.contains(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitoringPlan {
    pub filters: Vec<ProbeFilter>,
    pub selected: Vec<FeatureId>,
}

impl MonitoringPlan {
    pub fn event_passes(&self, ev: &Event) -> bool {
        self.filters.iter().any(|f| f.matches(ev))
    }
}

/// Derives the filter set serving exactly the selected features.
pub fn derive_plan(model: &BehaviorModel) -> Result<MonitoringPlan, PlanError> {
    let selected: Vec<FeatureId> = model
        .selected_features()
        .map(|(f, _)| f.clone())
        .collect();
    if selected.is_empty() {
        return Err(PlanError::EmptySelection);
    }
    let exes: BTreeSet<String> = selected.iter().map(|f| f.exe.clone()).collect();
    let filters = vec![
        ProbeFilter {
            kind: EventKind::Spawn,
            exe_set: exes.clone(),
        },
        ProbeFilter {
            kind: EventKind::Ipc,
            exe_set: exes.clone(),
        },
        ProbeFilter {
            kind: EventKind::Net,
            exe_set: exes,
        },
        ProbeFilter {
            kind: EventKind::Request,
            exe_set: BTreeSet::new(),
        },
    ];
    Ok(MonitoringPlan { filters, selected })
}

/// Keeps exactly the events matched by some filter, order preserved.
/// Simulates in-kernel filtering.
pub fn apply_filter(plan: &MonitoringPlan, trace: &RunTrace) -> RunTrace {
    RunTrace {
        run_id: trace.run_id.clone(),
        label: trace.label,
        workload: trace.workload,
        events: trace
            .events
            .iter()
            .filter(|ev| plan.event_passes(ev))
            .cloned()
            .collect(),
    }
}

const PLAN_MAGIC: &str = "graphwatch-plan";
const PLAN_VERSION: &str = "1";

pub fn format_plan(plan: &MonitoringPlan) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{PLAN_MAGIC} {PLAN_VERSION}");
    for f in &plan.filters {
        let exes = if f.exe_set.is_empty() {
            "*".to_string()
        } else {
            f.exe_set.iter().cloned().collect::<Vec<_>>().join(",")
        };
        let _ = writeln!(out, "filter\t{}\t{}", f.kind, exes);
    }
    for s in &plan.selected {
        let _ = writeln!(out, "selected\t{}\t{}", s.exe, s.metric);
    }
    out
}

pub fn parse_plan(text: &str) -> Result<MonitoringPlan, PlanError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(PlanError::Format {
        line: 1,
        msg: "empty plan".into(),
    })?;
    let mut hdr = header.split(' ');
    if hdr.next() != Some(PLAN_MAGIC) {
        return Err(PlanError::Format {
            line: 1,
            msg: "not a plan file".into(),
        });
    }
    let version = hdr.next().unwrap_or("");
    if version != PLAN_VERSION {
        return Err(PlanError::Version(version.to_string()));
    }
    let mut filters = Vec::new();
    let mut selected = Vec::new();
    for (i, l) in lines {
        if l.is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split('\t').collect();
        let bad = |msg: String| PlanError::Format { line: i + 1, msg };
        match fields.as_slice() {
            ["filter", kind, exes] => {
                let kind = EventKind::parse(kind)
                    .ok_or_else(|| bad(format!("unknown kind {kind:?}")))?;
                let exe_set = if *exes == "*" {
                    BTreeSet::new()
                } else {
                    exes.split(',').map(str::to_string).collect()
                };
                filters.push(ProbeFilter { kind, exe_set });
            }
            ["selected", exe, metric] => {
                let metric = crate::embed::Metric::parse(metric)
                    .ok_or_else(|| bad(format!("unknown metric {metric:?}")))?;
                selected.push(FeatureId {
                    exe: exe.to_string(),
                    metric,
                });
            }
            _ => return Err(bad(format!("unrecognized plan line: {l:?}"))),
        }
    }
    if selected.is_empty() {
        return Err(PlanError::EmptySelection);
    }
    Ok(MonitoringPlan { filters, selected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{embed, FeatureRegistry, Metric};
    use crate::graph::build_graph;
    use crate::model::{train, TrainingCorpus};
    use crate::trace::{EventBody, Label};

    fn model_selecting(exes: &[&str], all_exes: &[&str]) -> BehaviorModel {
        // builds a corpus where `exes` features are exactly linear and the
        // rest alternate so they are rejected
        let registry =
            FeatureRegistry::from_exes(all_exes.iter().map(|s| s.to_string())).unwrap();
        let pairs = (1..=6u64)
            .map(|w| {
                let values = registry
                    .features()
                    .iter()
                    .map(|f| {
                        if exes.contains(&f.exe.as_str()) {
                            2 * w
                        } else {
                            // workload-independent zigzag
                            if w % 2 == 0 {
                                9
                            } else {
                                1
                            }
                        }
                    })
                    .collect();
                (
                    w,
                    crate::embed::Embedding {
                        values,
                        unknown_exes: Default::default(),
                    },
                )
            })
            .collect();
        let corpus = TrainingCorpus::new(registry, pairs).unwrap();
        train(&corpus, 0.95, 1.0, 0.5).unwrap()
    }

    #[test]
    fn plan_for_single_count_feature() {
        let model = model_selecting(&["qemu-kvm"], &["qemu-kvm", "b", "c"]);
        let plan = derive_plan(&model).unwrap();
        assert_eq!(plan.filters.len(), 4);
        for f in &plan.filters {
            match f.kind {
                EventKind::Request => assert!(f.exe_set.is_empty()),
                _ => {
                    assert_eq!(
                        f.exe_set.iter().collect::<Vec<_>>(),
                        vec!["qemu-kvm"],
                        "distractor exes must not appear"
                    );
                }
            }
        }
        assert!(plan.filters.iter().any(|f| f.kind == EventKind::Request));
    }

    #[test]
    fn empty_selection_is_error() {
        let model = model_selecting(&["a"], &["a", "b"]);
        let mut model = model;
        model.selected.clear();
        assert!(matches!(derive_plan(&model), Err(PlanError::EmptySelection)));
    }

    fn sample_trace() -> RunTrace {
        RunTrace {
            run_id: "t".into(),
            label: Label::Normal,
            workload: 1,
            events: vec![
                Event {
                    ts: 0.0,
                    host: "h0".into(),
                    body: EventBody::Request {
                        endpoint: "api:1".into(),
                    },
                },
                Event {
                    ts: 0.1,
                    host: "h0".into(),
                    body: EventBody::Spawn {
                        pid: 10,
                        exe: "qemu-kvm".into(),
                        ppid: 1,
                        parent_exe: "libvirtd".into(),
                    },
                },
                Event {
                    ts: 0.2,
                    host: "h0".into(),
                    body: EventBody::Spawn {
                        pid: 11,
                        exe: "bystander".into(),
                        ppid: 9,
                        parent_exe: "other".into(),
                    },
                },
                Event {
                    ts: 0.3,
                    host: "h0".into(),
                    body: EventBody::Ipc {
                        pid: 11,
                        exe: "bystander".into(),
                        peer_pid: 9,
                        peer_exe: "other".into(),
                    },
                },
            ],
        }
    }

    #[test]
    fn filter_keeps_only_matching_events_plus_requests() {
        let model = model_selecting(&["qemu-kvm"], &["qemu-kvm", "bystander", "other", "libvirtd"]);
        let plan = derive_plan(&model).unwrap();
        let filtered = apply_filter(&plan, &sample_trace());
        for ev in &filtered.events {
            if ev.body.kind() == EventKind::Request {
                continue;
            }
            let touches = ev.body.exe() == Some("qemu-kvm") || ev.body.peer_exe() == Some("qemu-kvm");
            assert!(touches, "event must touch the selected exe: {ev:?}");
        }
        assert_eq!(filtered.count_requests(None), 1);
    }

    #[test]
    fn empty_exe_set_spawn_filter_keeps_all_spawns() {
        let plan = MonitoringPlan {
            filters: vec![ProbeFilter {
                kind: EventKind::Spawn,
                exe_set: BTreeSet::new(),
            }],
            selected: vec![FeatureId {
                exe: "x".into(),
                metric: Metric::Count,
            }],
        };
        let filtered = apply_filter(&plan, &sample_trace());
        assert_eq!(filtered.events.len(), 2);
        assert!(filtered
            .events
            .iter()
            .all(|e| e.body.kind() == EventKind::Spawn));
    }

    #[test]
    fn filtered_embedding_matches_on_selected_features() {
        let trace = sample_trace();
        let model = model_selecting(&["qemu-kvm"], &["qemu-kvm", "bystander", "other", "libvirtd"]);
        let plan = derive_plan(&model).unwrap();
        let full = embed(&build_graph(&trace).unwrap(), &model.registry);
        let filtered = embed(
            &build_graph(&apply_filter(&plan, &trace)).unwrap(),
            &model.registry,
        );
        for (f, _) in model.selected_features() {
            assert_eq!(
                full.value(&model.registry, &f.exe, f.metric),
                filtered.value(&model.registry, &f.exe, f.metric),
                "feature {f}"
            );
        }
    }

    #[test]
    fn plan_round_trip() {
        let model = model_selecting(&["a"], &["a", "b"]);
        let plan = derive_plan(&model).unwrap();
        let text = format_plan(&plan);
        let back = parse_plan(&text).unwrap();
        assert_eq!(back, plan);
    }
}
