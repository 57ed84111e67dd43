//! End-to-end acceptance suite. Each test prints one PASS line; run with
//! `cargo test --test acceptance -- --nocapture` to see them.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use graphwatch::embed::{build_registry, embed, Metric};
use graphwatch::evaluate::{
    classify_run, cross_validate, fold_of, format_report_record, EvalConfig, FOLDS,
};
use graphwatch::graph::build_graph;
use graphwatch::model::{fit_feature, format_model, train, TrainingCorpus};
use graphwatch::monitor::{Decision, MonitorState};
use graphwatch::plan::{apply_filter, derive_plan, MonitoringPlan};
use graphwatch::synth::{
    default_scenario, generate_dataset, generate_run, read_manifest, ComponentTemplate,
    DatasetParams, FaultMode, FaultSpec, ManifestEntry, NetPeer, ScenarioSpec,
};
use graphwatch::trace::{parse_trace, Label, RunTrace};
use graphwatch::BehaviorModel;

const DATASET_PARAMS: DatasetParams = DatasetParams {
    n_normal: 60,
    n_fault: 120,
    workload_min: 1,
    workload_max: 5,
    seed: 42,
};

fn default_dataset() -> &'static (TempDir, Vec<ManifestEntry>) {
    static DATASET: OnceLock<(TempDir, Vec<ManifestEntry>)> = OnceLock::new();
    DATASET.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let manifest = generate_dataset(&default_scenario(), &DATASET_PARAMS, dir.path()).unwrap();
        (dir, manifest)
    })
}

fn load_trace(dir: &Path, run_id: &str) -> RunTrace {
    parse_trace(&dir.join(format!("{run_id}.trace"))).unwrap()
}

/// Model trained on every NORMAL run of the default dataset.
fn full_model() -> &'static BehaviorModel {
    static MODEL: OnceLock<BehaviorModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let (dir, manifest) = default_dataset();
        let mut graphs = Vec::new();
        let mut workloads = Vec::new();
        for e in manifest.iter().filter(|e| e.label == Label::Normal) {
            let t = load_trace(dir.path(), &e.run_id);
            graphs.push(build_graph(&t).unwrap());
            workloads.push(e.workload);
        }
        let registry = build_registry(&graphs).unwrap();
        let pairs = graphs
            .iter()
            .zip(&workloads)
            .map(|(g, &w)| (w, embed(g, &registry)))
            .collect();
        let corpus = TrainingCorpus::new(registry, pairs).unwrap();
        train(&corpus, 0.95, 1.0, 0.5).unwrap()
    })
}

// ---------------------------------------------------------------------
// 1. Linear-regression oracle equivalence

/// Independent closed form via Cramer's rule on the normal equations.
fn normal_equations(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let det = n * sxx - sx * sx;
    ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

fn sse(xs: &[f64], ys: &[f64], slope: f64, intercept: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum()
}

#[test]
fn acceptance_01_lr_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..100 {
        let n = rng.gen_range(2..=20usize);
        let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        xs[0] += 1.0; // guarantee two distinct x values even for n == 2
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();

        let fit = fit_feature(&xs, &ys).unwrap();
        let (slope, intercept) = normal_equations(&xs, &ys);
        assert!(
            (fit.slope - slope).abs() < 1e-9,
            "case {case}: slope {} vs oracle {slope}",
            fit.slope
        );
        assert!(
            (fit.intercept - intercept).abs() < 1e-9,
            "case {case}: intercept {} vs oracle {intercept}",
            fit.intercept
        );

        // brute-force grid around the closed-form solution
        let fit_sse = sse(&xs, &ys, fit.slope, fit.intercept);
        for ds in -5i32..=5 {
            for di in -5i32..=5 {
                let s = slope + ds as f64 * 0.05;
                let i = intercept + di as f64 * 0.05;
                assert!(
                    fit_sse <= sse(&xs, &ys, s, i) + 1e-9,
                    "case {case}: grid point ({s}, {i}) beats the fit"
                );
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("PASS criterion 1: OLS matches the normal-equation oracle and beats the grid ({elapsed:?})");
}

// ---------------------------------------------------------------------
// 2. Embedding golden tests (VM-provisioning fixtures)

fn vm_scenario() -> ScenarioSpec {
    ScenarioSpec {
        endpoint: "api:8774".to_string(),
        seed: 7,
        components: vec![
            ComponentTemplate {
                exe: "qemu-kvm".to_string(),
                host: "h0".to_string(),
                baseline_instances: 0,
                per_request_spawn_count: 2,
                per_request_ipc_peers: vec!["libvirtd".to_string()],
                per_request_net_peers: vec![NetPeer {
                    exe: "mysqld".to_string(),
                    endpoint: "db:3306".to_string(),
                }],
            },
            ComponentTemplate {
                exe: "libvirtd".to_string(),
                host: "h0".to_string(),
                baseline_instances: 1,
                per_request_spawn_count: 0,
                per_request_ipc_peers: vec![],
                per_request_net_peers: vec![],
            },
            ComponentTemplate {
                exe: "mysqld".to_string(),
                host: "h1".to_string(),
                baseline_instances: 1,
                per_request_spawn_count: 0,
                per_request_ipc_peers: vec![],
                per_request_net_peers: vec![],
            },
        ],
        noise: vec![],
    }
}

#[test]
fn acceptance_02_embedding_golden() {
    let spec = vm_scenario();

    let one = generate_run(&spec, "one-vm", 1, None).unwrap();
    let three = generate_run(&spec, "three-vm", 3, None).unwrap();
    let g1 = build_graph(&one).unwrap();
    let g3 = build_graph(&three).unwrap();
    let registry = build_registry(std::slice::from_ref(&g1)).unwrap();
    assert_eq!(
        embed(&g1, &registry).value(&registry, "qemu-kvm", Metric::Count),
        Some(2)
    );
    assert_eq!(
        embed(&g3, &registry).value(&registry, "qemu-kvm", Metric::Count),
        Some(6)
    );

    // train across workloads, then one failed VM creation
    let mut spec_w = spec.clone();
    let mut graphs = Vec::new();
    let mut workloads = Vec::new();
    for w in 1..=5u64 {
        spec_w.seed = 7 + w;
        let t = generate_run(&spec_w, &format!("train-{w}"), w, None).unwrap();
        graphs.push(build_graph(&t).unwrap());
        workloads.push(w);
    }
    let registry = build_registry(&graphs).unwrap();
    let pairs = graphs
        .iter()
        .zip(&workloads)
        .map(|(g, &w)| (w, embed(g, &registry)))
        .collect();
    let model = train(&TrainingCorpus::new(registry, pairs).unwrap(), 0.95, 1.0, 0.5).unwrap();
    let plan = derive_plan(&model).unwrap();

    let fault = generate_run(
        &spec,
        "failed-vm",
        1,
        Some(&FaultSpec {
            mode: FaultMode::SuppressSpawn,
            target_exe: "qemu-kvm".to_string(),
            magnitude: 1,
        }),
    )
    .unwrap();
    let gf = build_graph(&fault).unwrap();
    assert_eq!(
        embed(&gf, &model.registry).value(&model.registry, "qemu-kvm", Metric::Count),
        Some(1)
    );
    assert_eq!(
        classify_run(&fault, &model, &plan, &EvalConfig::default()),
        Decision::Anomalous
    );
    println!("PASS criterion 2: fixtures give qemu-kvm counts 2 (w=1) and 6 (w=3); the 1-instance fault run is ANOMALOUS");
}

// ---------------------------------------------------------------------
// 3. Incremental/batch equivalence

#[test]
fn acceptance_03_incremental_batch_equivalence() {
    let model = full_model();
    let base = default_scenario();
    let fault_pool = [
        None,
        Some(FaultSpec {
            mode: FaultMode::SuppressSpawn,
            target_exe: "vmproc".to_string(),
            magnitude: 1,
        }),
        Some(FaultSpec {
            mode: FaultMode::DropEdge,
            target_exe: "vmproc".to_string(),
            magnitude: 1,
        }),
        Some(FaultSpec {
            mode: FaultMode::AlienProcess,
            target_exe: "intruder".to_string(),
            magnitude: 2,
        }),
    ];
    for i in 0..50u64 {
        let mut spec = base.clone();
        spec.seed = 1000 + i;
        let workload = 1 + i % 5;
        let fault = &fault_pool[(i % 4) as usize];
        let trace = generate_run(&spec, &format!("rt-{i}"), workload, fault.as_ref()).unwrap();

        let mut state = MonitorState::new(model, None, true);
        for ev in &trace.events {
            state.ingest(ev);
        }
        let batch = embed(&build_graph(&trace).unwrap(), &model.registry);
        for (f, _) in model.selected_features() {
            let incremental = state.feature_value(&f.exe, f.metric);
            let batch_value = batch.value(&model.registry, &f.exe, f.metric).unwrap();
            assert_eq!(incremental, batch_value, "trace rt-{i}, feature {f}");
        }
    }
    println!("PASS criterion 3: incremental counters equal the batch pipeline on 50 random traces");
}

// ---------------------------------------------------------------------
// 4. Filter equivalence and minimality

/// Equivalence contract: the filtered trace yields the same selected
/// feature values and the same request count as the full trace.
fn filter_equivalent(plan: &MonitoringPlan, model: &BehaviorModel, trace: &RunTrace) -> bool {
    let filtered = apply_filter(plan, trace);
    if filtered.count_requests(None) != trace.count_requests(None) {
        return false;
    }
    let full = embed(&build_graph(trace).unwrap(), &model.registry);
    let part = match build_graph(&filtered) {
        Ok(g) => embed(&g, &model.registry),
        Err(_) => return false,
    };
    model.selected_features().all(|(f, _)| {
        full.value(&model.registry, &f.exe, f.metric)
            == part.value(&model.registry, &f.exe, f.metric)
    })
}

#[test]
fn acceptance_04_filter_equivalence_and_minimality() {
    let (dir, manifest) = default_dataset();
    let model = full_model();
    let plan = derive_plan(model).unwrap();

    let traces: Vec<RunTrace> = manifest
        .iter()
        .map(|e| load_trace(dir.path(), &e.run_id))
        .collect();
    for t in &traces {
        assert!(
            filter_equivalent(&plan, model, t),
            "equivalence broken on {}",
            t.run_id
        );
    }

    for removed in 0..plan.filters.len() {
        let mut reduced = plan.clone();
        let gone = reduced.filters.remove(removed);
        let broken = traces
            .iter()
            .any(|t| !filter_equivalent(&reduced, model, t));
        assert!(
            broken,
            "removing the {} filter did not break equivalence on any trace",
            gone.kind
        );
    }
    println!(
        "PASS criterion 4: plan of {} filters is equivalence-preserving and minimal on {} traces",
        plan.filters.len(),
        traces.len()
    );
}

// ---------------------------------------------------------------------
// 5. Feature selection discrimination

/// R^2 computed independently: predictions from the Cramer's-rule solution.
fn r2_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let (slope, intercept) = normal_equations(xs, ys);
    let mean_y = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    1.0 - sse(xs, ys, slope, intercept) / ss_tot
}

#[test]
fn acceptance_05_feature_selection_discrimination() {
    let (dir, manifest) = default_dataset();
    let model = full_model();

    // by construction of the default scenario
    let affine_exes = ["vmproc", "volmk", "hyperd", "dbd", "syslogd", "initd"];
    let noise_features = [
        ("cron", Metric::Count),
        ("cron", Metric::Degree),
        ("noised", Metric::Degree),
    ];

    for exe in affine_exes {
        for metric in [Metric::Count, Metric::Degree] {
            assert!(model.is_selected(exe, metric), "{exe}:{metric} not selected");
        }
    }
    assert!(model.is_selected("noised", Metric::Count)); // constant 1

    // oracle first: the noise realizations really do have R^2 < 0.95
    let mut xs = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); noise_features.len()];
    for e in manifest.iter().filter(|e| e.label == Label::Normal) {
        let t = load_trace(dir.path(), &e.run_id);
        let g = build_graph(&t).unwrap();
        let emb = embed(&g, &model.registry);
        xs.push(e.workload as f64);
        for (slot, (exe, metric)) in values.iter_mut().zip(&noise_features) {
            slot.push(emb.value(&model.registry, exe, *metric).unwrap() as f64);
        }
    }
    for ((exe, metric), ys) in noise_features.iter().zip(&values) {
        let r2 = r2_oracle(&xs, ys);
        assert!(r2 < 0.95, "{exe}:{metric} oracle R^2 = {r2}, not noise-like");
        assert!(!model.is_selected(exe, *metric), "{exe}:{metric} selected");
    }
    println!(
        "PASS criterion 5: {} affine features selected, {} noise features rejected (oracle R^2 < 0.95)",
        affine_exes.len() * 2 + 1,
        noise_features.len()
    );
}

// ---------------------------------------------------------------------
// 6. End-to-end detection at desk scale

#[test]
fn acceptance_06_end_to_end_detection() {
    let started = Instant::now();
    let (dir, _) = default_dataset();
    let report = cross_validate(dir.path(), &EvalConfig::default()).unwrap();
    let elapsed = started.elapsed();
    assert!(
        report.mean_recall >= 0.95,
        "mean recall {} < 0.95",
        report.mean_recall
    );
    assert!(
        report.mean_selectivity >= 0.95,
        "mean selectivity {} < 0.95",
        report.mean_selectivity
    );
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "PASS criterion 6: 10-fold CV mean recall {:.4}, mean selectivity {:.4} ({elapsed:?})",
        report.mean_recall, report.mean_selectivity
    );
}

// ---------------------------------------------------------------------
// 7. Determinism

#[test]
fn acceptance_07_determinism() {
    let run_once = || {
        let dir = TempDir::new().unwrap();
        generate_dataset(&default_scenario(), &DATASET_PARAMS, dir.path()).unwrap();
        let (_, manifest) = read_manifest(dir.path()).unwrap();
        let mut graphs = Vec::new();
        let mut workloads = Vec::new();
        for e in manifest.iter().filter(|e| e.label == Label::Normal) {
            let t = load_trace(dir.path(), &e.run_id);
            graphs.push(build_graph(&t).unwrap());
            workloads.push(e.workload);
        }
        let registry = build_registry(&graphs).unwrap();
        let pairs = graphs
            .iter()
            .zip(&workloads)
            .map(|(g, &w)| (w, embed(g, &registry)))
            .collect();
        let model =
            train(&TrainingCorpus::new(registry, pairs).unwrap(), 0.95, 1.0, 0.5).unwrap();
        let report = cross_validate(dir.path(), &EvalConfig::default()).unwrap();
        let manifest_bytes = std::fs::read(dir.path().join("manifest.tsv")).unwrap();
        (
            manifest_bytes,
            format_model(&model),
            format_report_record(&report),
        )
    };
    let a = run_once();
    let b = run_once();
    assert_eq!(a.0, b.0, "manifests differ");
    assert_eq!(a.1, b.1, "model files differ");
    assert_eq!(a.2, b.2, "reports differ");
    println!("PASS criterion 7: generate+train+evaluate is bit-identical across runs");
}

// ---------------------------------------------------------------------
// 8. Evaluation protocol fold audit

#[test]
fn acceptance_08_fold_audit() {
    let (dir, manifest) = default_dataset();

    // every NORMAL run lands in exactly one test fold; FAULT runs are in
    // every test fold and never in training by the partition rule
    let mut normals_per_fold = vec![0u32; FOLDS as usize];
    for e in manifest {
        match e.label {
            Label::Normal => {
                let folds: BTreeSet<u32> = (0..1).map(|_| fold_of(&e.run_id)).collect();
                assert_eq!(folds.len(), 1);
                normals_per_fold[fold_of(&e.run_id) as usize] += 1;
            }
            Label::Fault | Label::Unknown => {}
        }
    }
    assert_eq!(normals_per_fold.iter().sum::<u32>(), 60);

    let report = cross_validate(dir.path(), &EvalConfig::default()).unwrap();
    let mut tested_normals = 0u32;
    for f in &report.folds {
        // test set = held-out normals + all 120 fault runs
        assert_eq!(
            f.confusion.tp + f.confusion.fnr,
            120,
            "fold {} did not test all fault runs",
            f.fold
        );
        assert_eq!(
            f.confusion.tn + f.confusion.fp,
            normals_per_fold[f.fold as usize],
            "fold {} tested the wrong normals",
            f.fold
        );
        assert_eq!(f.confusion.total(), 120 + normals_per_fold[f.fold as usize]);
        tested_normals += f.confusion.tn + f.confusion.fp;
    }
    assert_eq!(tested_normals, 60);
    println!("PASS criterion 8: folds partition the normals exactly once; all fault runs tested in every fold");
}
