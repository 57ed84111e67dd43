//! Command-line entry point: generate, train, plan, monitor, evaluate,
//! export-dot.
//!
//! Exit codes: 0 success (an ANOMALOUS verdict is a result, not an
//! error), 1 usage error, 2 data or validation error.

use std::fs;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use graphwatch::evaluate::{
    cross_validate, format_report_csv, format_report_record, format_report_table, EvalConfig,
};
use graphwatch::model::{load_model, save_model, train, TrainingCorpus};
use graphwatch::monitor::{format_verdict, MonitorMode};
use graphwatch::plan::{derive_plan, format_plan};
use graphwatch::synth::{
    default_scenario, generate_dataset, parse_scenario, read_manifest, DatasetParams,
};
use graphwatch::trace::{parse_event_record, parse_trace, Label};
use graphwatch::{build_graph, export_dot, FeatureRegistry};

#[derive(Parser)]
#[command(
    name = "graphwatch",
    version,
    about = "Graph-based anomaly detection for OS-event traces",
    after_help = "File formats: traces are tab-separated (metadata line, then one \
event per line); model, plan, scenario, manifest and report files are \
versioned tab-separated text. See the README for the field layouts."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelParams {
    /// Minimum R^2 for a feature to be selected
    #[arg(long, default_value_t = 0.95)]
    r2_threshold: f64,
    /// Tolerance band scale on the training max residual
    #[arg(long, default_value_t = 1.0)]
    tolerance_factor: f64,
    /// Additive slack of the tolerance band, in feature units
    #[arg(long, default_value_t = 0.5)]
    absolute_slack: f64,
}

#[derive(Args, Clone)]
struct MonitorParams {
    /// Verdict timing: end-of-run or periodic
    #[arg(long, default_value = "end-of-run", value_parser = ["end-of-run", "periodic"])]
    mode: String,
    /// Period in seconds for periodic mode
    #[arg(long, default_value_t = 5.0)]
    period: f64,
    /// Do not treat executables unseen in training as anomaly evidence
    #[arg(long)]
    no_flag_unknown: bool,
    /// Count only REQUEST events on this endpoint as workload
    #[arg(long)]
    endpoint: Option<String>,
}

impl MonitorParams {
    fn mode(&self) -> MonitorMode {
        match self.mode.as_str() {
            "periodic" => MonitorMode::Periodic(self.period),
            _ => MonitorMode::EndOfRun,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of normal and fault-injected traces
    Generate {
        /// Scenario file; the built-in default scenario when omitted
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        normal: usize,
        #[arg(long, default_value_t = 120)]
        fault: usize,
        #[arg(long, default_value_t = 1)]
        workload_min: u64,
        #[arg(long, default_value_t = 5)]
        workload_max: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Write the effective scenario to this file
        #[arg(long)]
        dump_spec: Option<PathBuf>,
    },
    /// Fit the normal-behavior model on a dataset's failure-free runs
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Model output file
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        params: ModelParams,
    },
    /// Print (or save) the monitoring plan backtracked from a model
    Plan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stream a trace through the online monitor and emit verdicts
    Monitor {
        #[arg(long)]
        model: PathBuf,
        /// Trace file, or - for standard input
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        params: MonitorParams,
        /// Verdict output file (standard output when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 10-fold cross-validated Recall/Selectivity over a dataset
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        params: ModelParams,
        #[command(flatten)]
        monitor: MonitorParams,
        /// Machine-readable report file
        #[arg(long)]
        report_out: Option<PathBuf>,
        /// Per-fold confusion counts as CSV
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Render a trace's system graph as Graphviz DOT
    ExportDot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are success, anything else is usage
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Generate {
            spec,
            normal,
            fault,
            workload_min,
            workload_max,
            seed,
            out,
            dump_spec,
        } => {
            let scenario = match spec {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .map_err(|e| format!("cannot read scenario {}: {e}", path.display()))?;
                    parse_scenario(&text).map_err(|e| e.to_string())?
                }
                None => default_scenario(),
            };
            if workload_max < workload_min || workload_min == 0 {
                return Err("workload range must satisfy 1 <= min <= max".to_string());
            }
            let params = DatasetParams {
                n_normal: normal,
                n_fault: fault,
                workload_min,
                workload_max,
                seed,
            };
            let manifest =
                generate_dataset(&scenario, &params, &out).map_err(|e| e.to_string())?;
            if let Some(path) = dump_spec {
                fs::write(&path, graphwatch::synth::format_scenario(&scenario))
                    .map_err(|e| e.to_string())?;
            }
            println!(
                "generated {} runs ({normal} normal, {fault} fault) in {}",
                manifest.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            dataset,
            model: model_out,
            params,
        } => {
            let (_, manifest) = read_manifest(&dataset).map_err(|e| e.to_string())?;
            let mut graphs = Vec::new();
            let mut workloads = Vec::new();
            let mut skipped_faults = 0usize;
            for e in &manifest {
                if e.label != Label::Normal {
                    skipped_faults += 1;
                    continue;
                }
                let t = parse_trace(&dataset.join(format!("{}.trace", e.run_id)))
                    .map_err(|err| err.to_string())?;
                let g = build_graph(&t).map_err(|err| err.to_string())?;
                graphs.push(g);
                workloads.push(e.workload);
            }
            if skipped_faults > 0 {
                eprintln!("excluded {skipped_faults} non-failure-free runs from training");
            }
            let registry = FeatureRegistry::from_exes(
                graphs
                    .iter()
                    .flat_map(|g| g.nodes().map(|(_, exe)| exe.to_string())),
            )
            .map_err(|e| e.to_string())?;
            let pairs = graphs
                .iter()
                .zip(&workloads)
                .map(|(g, &w)| (w, graphwatch::embed(g, &registry)))
                .collect();
            let corpus = TrainingCorpus::new(registry, pairs).map_err(|e| e.to_string())?;
            let model = train(
                &corpus,
                params.r2_threshold,
                params.tolerance_factor,
                params.absolute_slack,
            )
            .map_err(|e| e.to_string())?;
            save_model(&model, &model_out).map_err(|e| e.to_string())?;
            println!(
                "trained on {} runs; selected {} of {} features:",
                workloads.len(),
                model.selected.len(),
                model.registry.len()
            );
            for (f, _) in model.selected_features() {
                println!("  {f}");
            }
            Ok(())
        }
        Command::Plan { model, out } => {
            let model = load_model(&model).map_err(|e| e.to_string())?;
            let plan = derive_plan(&model).map_err(|e| e.to_string())?;
            let text = format_plan(&plan);
            match out {
                Some(path) => fs::write(&path, text).map_err(|e| e.to_string())?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Monitor {
            model,
            trace,
            params,
            out,
        } => {
            let model = load_model(&model).map_err(|e| e.to_string())?;
            let plan = derive_plan(&model).map_err(|e| e.to_string())?;
            let events = read_events(&trace)?;
            let verdicts = graphwatch::run_monitor(
                events,
                &model,
                &plan,
                params.mode(),
                params.endpoint.clone(),
                !params.no_flag_unknown,
            );
            let mut text = String::new();
            for v in &verdicts {
                text.push_str(&format_verdict(v));
                text.push('\n');
            }
            match out {
                Some(path) => fs::write(&path, text).map_err(|e| e.to_string())?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Evaluate {
            dataset,
            params,
            monitor,
            report_out,
            csv_out,
        } => {
            let config = EvalConfig {
                r2_threshold: params.r2_threshold,
                tolerance_factor: params.tolerance_factor,
                absolute_slack: params.absolute_slack,
                mode: monitor.mode(),
                flag_unknown: !monitor.no_flag_unknown,
                endpoint_filter: monitor.endpoint.clone(),
            };
            let report = cross_validate(&dataset, &config).map_err(|e| e.to_string())?;
            print!("{}", format_report_table(&report));
            if let Some(path) = report_out {
                fs::write(&path, format_report_record(&report)).map_err(|e| e.to_string())?;
            }
            if let Some(path) = csv_out {
                fs::write(&path, format_report_csv(&report)).map_err(|e| e.to_string())?;
            }
            Ok(())
        }
        Command::ExportDot { trace, out } => {
            let t = parse_trace(&trace).map_err(|e| e.to_string())?;
            let g = build_graph(&t).map_err(|e| e.to_string())?;
            export_dot(&g, &out).map_err(|e| e.to_string())?;
            Ok(())
        }
    }
}

/// Reads a trace file, or an event-per-line stream from standard input
/// (no metadata line on stdin).
fn read_events(path: &PathBuf) -> Result<Vec<graphwatch::Event>, String> {
    if path.as_os_str() == "-" {
        let stdin = std::io::stdin();
        let mut events = Vec::new();
        for (i, line) in stdin.lock().lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.is_empty() {
                continue;
            }
            events.push(parse_event_record(&line, i + 1).map_err(|e| e.to_string())?);
        }
        // monitor output goes to stdout; flush any pending diagnostics
        std::io::stderr().flush().ok();
        Ok(events)
    } else {
        let t = parse_trace(path).map_err(|e| e.to_string())?;
        Ok(t.events)
    }
}
