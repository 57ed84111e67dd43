//! Cross-validated failure-detection evaluation: 10 folds over the
//! failure-free runs, with every fail-run always in the test set, never
//! in training. Reports Recall (true positive rate) and Selectivity
//! (true negative rate); Precision is deliberately omitted because the
//! datasets are highly imbalanced, but confusion counts are included so
//! any metric can be post-computed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::embed::embed;
use crate::graph::{build_graph, GraphError, SystemGraph};
use crate::model::{train, BehaviorModel, TrainError, TrainingCorpus};
use crate::monitor::{run_monitor, Decision, MonitorMode};
use crate::plan::{derive_plan, MonitoringPlan, PlanError};
use crate::synth::{read_manifest, SynthError};
use crate::trace::{parse_trace, Label, RunTrace, TraceError};

pub const FOLDS: u32 = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset has {0} failure-free runs; need at least 10")]
    TooFewNormalRuns(usize),
    #[error("manifest error: {0}")]
    Synth(#[from] SynthError),
    #[error("trace error: {0}")]
    Trace(#[from] TraceError),
    #[error("graph error in run {run_id}: {source}")]
    Graph {
        run_id: String,
        source: GraphError,
    },
    #[error("training error in fold {fold}: {source}")]
    Train { fold: u32, source: TrainError },
    #[error("embedding error in fold {fold}: {source}")]
    Embed {
        fold: u32,
        source: crate::embed::EmbedError,
    },
    #[error("plan error in fold {fold}: {source}")]
    Plan { fold: u32, source: PlanError },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confusion {
    pub tp: u32,
    pub fnr: u32,
    pub tn: u32,
    pub fp: u32,
}

impl Confusion {
    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fnr;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn selectivity(&self) -> Option<f64> {
        let d = self.tn + self.fp;
        (d > 0).then(|| self.tn as f64 / d as f64)
    }

    pub fn total(&self) -> u32 {
        self.tp + self.fnr + self.tn + self.fp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: u32,
    pub confusion: Confusion,
    pub selected_features: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub r2_threshold: f64,
    pub tolerance_factor: f64,
    pub absolute_slack: f64,
    pub mode: MonitorMode,
    pub flag_unknown: bool,
    pub endpoint_filter: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            r2_threshold: 0.95,
            tolerance_factor: 1.0,
            absolute_slack: 0.5,
            mode: MonitorMode::EndOfRun,
            flag_unknown: true,
            endpoint_filter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub folds: Vec<FoldReport>,
    pub mean_recall: f64,
    pub mean_selectivity: f64,
    pub config: EvalConfig,
    pub dataset_seed: u64,
}

/// Stable fold assignment: FNV-1a 64 of the run id, modulo the fold
/// count. Reproducible without storing split files.
pub fn fold_of(run_id: &str) -> u32 {
    (fnv1a64(run_id.as_bytes()) % FOLDS as u64) as u32
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// ANOMALOUS iff any verdict emitted over the run is anomalous.
pub fn classify_run(
    trace: &RunTrace,
    model: &BehaviorModel,
    plan: &MonitoringPlan,
    config: &EvalConfig,
) -> Decision {
    let verdicts = run_monitor(
        trace.events.iter().cloned(),
        model,
        plan,
        config.mode,
        config.endpoint_filter.clone(),
        config.flag_unknown,
    );
    if verdicts.iter().any(|v| v.decision == Decision::Anomalous) {
        Decision::Anomalous
    } else {
        Decision::Normal
    }
}

struct LoadedRun {
    trace: RunTrace,
    graph: SystemGraph,
    fold: u32,
}

/// Full protocol over a dataset directory: per fold, train on 9/10 of
/// the NORMAL runs, test on the held-out NORMAL runs plus all FAULT runs.
pub fn cross_validate(dataset_dir: &Path, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    let (dataset_seed, manifest) = read_manifest(dataset_dir)?;

    let mut normals: Vec<LoadedRun> = Vec::new();
    let mut faults: Vec<LoadedRun> = Vec::new();
    for entry in &manifest {
        let trace = parse_trace(&dataset_dir.join(format!("{}.trace", entry.run_id)))?;
        let graph = build_graph(&trace).map_err(|source| EvalError::Graph {
            run_id: entry.run_id.clone(),
            source,
        })?;
        let run = LoadedRun {
            fold: fold_of(&trace.run_id),
            trace,
            graph,
        };
        match entry.label {
            Label::Normal => normals.push(run),
            Label::Fault => faults.push(run),
            Label::Unknown => {}
        }
    }
    if normals.len() < FOLDS as usize {
        return Err(EvalError::TooFewNormalRuns(normals.len()));
    }

    let mut folds = Vec::new();
    for fold in 0..FOLDS {
        let train_graphs: Vec<&SystemGraph> = normals
            .iter()
            .filter(|r| r.fold != fold)
            .map(|r| &r.graph)
            .collect();
        let registry = crate::embed::FeatureRegistry::from_exes(
            train_graphs
                .iter()
                .flat_map(|g| g.nodes().map(|(_, exe)| exe.to_string())),
        )
        .map_err(|source| EvalError::Embed { fold, source })?;
        let pairs = normals
            .iter()
            .filter(|r| r.fold != fold)
            .map(|r| (r.trace.workload, embed(&r.graph, &registry)))
            .collect();
        let corpus = TrainingCorpus::new(registry, pairs)
            .map_err(|source| EvalError::Train { fold, source })?;
        let model = train(
            &corpus,
            config.r2_threshold,
            config.tolerance_factor,
            config.absolute_slack,
        )
        .map_err(|source| EvalError::Train { fold, source })?;
        let plan = derive_plan(&model).map_err(|source| EvalError::Plan { fold, source })?;

        let mut confusion = Confusion {
            tp: 0,
            fnr: 0,
            tn: 0,
            fp: 0,
        };
        for r in normals.iter().filter(|r| r.fold == fold) {
            match classify_run(&r.trace, &model, &plan, config) {
                Decision::Normal => confusion.tn += 1,
                Decision::Anomalous => confusion.fp += 1,
            }
        }
        for r in &faults {
            match classify_run(&r.trace, &model, &plan, config) {
                Decision::Anomalous => confusion.tp += 1,
                Decision::Normal => confusion.fnr += 1,
            }
        }
        folds.push(FoldReport {
            fold,
            confusion,
            selected_features: model.selected.len(),
        });
    }

    let mean = |vals: Vec<Option<f64>>| {
        let defined: Vec<f64> = vals.into_iter().flatten().collect();
        if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    };
    let mean_recall = mean(folds.iter().map(|f| f.confusion.recall()).collect());
    let mean_selectivity = mean(folds.iter().map(|f| f.confusion.selectivity()).collect());

    Ok(EvalReport {
        folds,
        mean_recall,
        mean_selectivity,
        config: config.clone(),
        dataset_seed,
    })
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "-".to_string(),
    }
}

/// Human-readable per-fold table plus means.
pub fn format_report_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} {:>4} {:>4} {:>4} {:>4} {:>10} {:>12} {:>9}",
        "fold", "TP", "FN", "TN", "FP", "recall", "selectivity", "features"
    );
    for f in &report.folds {
        let c = &f.confusion;
        let _ = writeln!(
            out,
            "{:<6} {:>4} {:>4} {:>4} {:>4} {:>10} {:>12} {:>9}",
            f.fold,
            c.tp,
            c.fnr,
            c.tn,
            c.fp,
            fmt_metric(c.recall()),
            fmt_metric(c.selectivity()),
            f.selected_features
        );
    }
    let _ = writeln!(
        out,
        "mean   {:>30} {:>12}",
        format!("{:.4}", report.mean_recall),
        format!("{:.4}", report.mean_selectivity)
    );
    out
}

const REPORT_MAGIC: &str = "graphwatch-report";
const REPORT_VERSION: &str = "1";

/// Machine-readable report record; regeneration from the same dataset and
/// config is bit-identical.
pub fn format_report_record(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{REPORT_MAGIC} {REPORT_VERSION}");
    let mode = match report.config.mode {
        MonitorMode::EndOfRun => "end-of-run".to_string(),
        MonitorMode::Periodic(p) => format!("periodic:{p}"),
    };
    let _ = writeln!(
        out,
        "config\tr2_threshold={}\ttolerance_factor={}\tabsolute_slack={}\tmode={}\tflag_unknown={}\tendpoint_filter={}\tdataset_seed={}",
        report.config.r2_threshold,
        report.config.tolerance_factor,
        report.config.absolute_slack,
        mode,
        report.config.flag_unknown,
        report.config.endpoint_filter.as_deref().unwrap_or("-"),
        report.dataset_seed,
    );
    for f in &report.folds {
        let c = &f.confusion;
        let _ = writeln!(
            out,
            "fold\t{}\ttp={}\tfn={}\ttn={}\tfp={}\trecall={}\tselectivity={}\tselected={}",
            f.fold,
            c.tp,
            c.fnr,
            c.tn,
            c.fp,
            fmt_metric(c.recall()),
            fmt_metric(c.selectivity()),
            f.selected_features
        );
    }
    let _ = writeln!(
        out,
        "mean\trecall={:.4}\tselectivity={:.4}",
        report.mean_recall, report.mean_selectivity
    );
    out
}

/// Per-fold confusion counts as CSV.
pub fn format_report_csv(report: &EvalReport) -> String {
    let mut out = String::from("fold,tp,fn,tn,fp\n");
    for f in &report.folds {
        let c = &f.confusion;
        let _ = writeln!(out, "{},{},{},{},{}", f.fold, c.tp, c.fnr, c.tn, c.fp);
    }
    out
}

/// Audit of the fold partition used by `cross_validate`: how many test
/// folds each run id lands in. NORMAL ids must map to exactly one fold.
pub fn fold_assignment(run_ids: &[String]) -> BTreeMap<String, u32> {
    run_ids
        .iter()
        .map(|id| (id.clone(), fold_of(id)))
        .collect()
}
