//! Synthetic normal and fault-injected traces with known ground truth.
//!
//! A scenario describes component templates whose activity is an exact
//! affine function of the number of service requests (instances spawned
//! per request, IPC/NET edges per instance, constant baselines) plus
//! noise processes whose instance counts are workload-independent
//! uniform draws. Faults perturb the generated event plan at graph
//! level: suppressed or extra instances, dropped edges, or an alien
//! process.
//!
//! Generation is deterministic: the same spec and seed reproduce a
//! dataset bit for bit. The RNG is ChaCha8 (recorded in the manifest).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::trace::{Event, EventBody, Label, RunTrace, TraceError};

/// Executable name of the implicit per-host root process (pid 1) that
/// spawns baseline and per-request instances.
pub const ROOT_EXE: &str = "initd";
/// Executable name of the implicit parent (pid 2, primary host) of noise
/// process instances, keeping root's degree workload-affine.
pub const NOISE_PARENT_EXE: &str = "noised";

const ROOT_PID: u32 = 1;
const NOISE_PARENT_PID: u32 = 2;
const RNG_NAME: &str = "chacha8";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("scenario has no components")]
    NoComponents,
    #[error("duplicate or reserved exe name: {0}")]
    BadExeName(String),
    #[error("component {comp}: {kind} peer {peer:?} must be a component with baseline_instances >= 1{extra}")]
    BadPeer {
        comp: String,
        kind: &'static str,
        peer: String,
        extra: &'static str,
    },
    #[error("noise {0}: min must be <= max")]
    BadNoiseRange(String),
    #[error("workload must be >= 1")]
    ZeroWorkload,
    #[error("fault target {0:?} is not a component of the scenario")]
    UnknownFaultTarget(String),
    #[error("alien process name {0:?} collides with a scenario exe")]
    AlienCollision(String),
    #[error("fault magnitude {magnitude} exceeds available {what} ({available}) for {target}")]
    MagnitudeTooLarge {
        magnitude: u32,
        available: usize,
        what: &'static str,
        target: String,
    },
    #[error("magnitude must be >= 1")]
    ZeroMagnitude,
    #[error("need at least 10 failure-free runs for cross validation, got {0}")]
    TooFewNormalRuns(usize),
    #[error("no fault mode is applicable to this scenario")]
    NoApplicableFault,
    #[error("trace error: {0}")]
    Trace(#[from] TraceError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetPeer {
    pub exe: String,
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentTemplate {
    pub exe: String,
    pub host: String,
    pub baseline_instances: u32,
    pub per_request_spawn_count: u32,
    /// Same-host baseline components each new instance talks to.
    pub per_request_ipc_peers: Vec<String>,
    /// Cross-host baseline components each new instance connects to.
    pub per_request_net_peers: Vec<NetPeer>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseSpec {
    pub exe: String,
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub endpoint: String,
    pub seed: u64,
    pub components: Vec<ComponentTemplate>,
    pub noise: Vec<NoiseSpec>,
}

impl ScenarioSpec {
    pub fn primary_host(&self) -> &str {
        &self.components[0].host
    }

    pub fn component(&self, exe: &str) -> Option<&ComponentTemplate> {
        self.components.iter().find(|c| c.exe == exe)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.components.is_empty() {
            return Err(SynthError::NoComponents);
        }
        let mut seen = BTreeSet::from([ROOT_EXE.to_string(), NOISE_PARENT_EXE.to_string()]);
        for c in &self.components {
            if c.exe.is_empty() || !seen.insert(c.exe.clone()) {
                return Err(SynthError::BadExeName(c.exe.clone()));
            }
        }
        for n in &self.noise {
            if n.exe.is_empty() || !seen.insert(n.exe.clone()) {
                return Err(SynthError::BadExeName(n.exe.clone()));
            }
            if n.min > n.max {
                return Err(SynthError::BadNoiseRange(n.exe.clone()));
            }
        }
        for c in &self.components {
            for peer in &c.per_request_ipc_peers {
                match self.component(peer) {
                    Some(p) if p.baseline_instances >= 1 && p.host == c.host => {}
                    Some(p) if p.host != c.host => {
                        return Err(SynthError::BadPeer {
                            comp: c.exe.clone(),
                            kind: "ipc",
                            peer: peer.clone(),
                            extra: " on the same host",
                        })
                    }
                    _ => {
                        return Err(SynthError::BadPeer {
                            comp: c.exe.clone(),
                            kind: "ipc",
                            peer: peer.clone(),
                            extra: "",
                        })
                    }
                }
            }
            for peer in &c.per_request_net_peers {
                match self.component(&peer.exe) {
                    Some(p) if p.baseline_instances >= 1 => {}
                    _ => {
                        return Err(SynthError::BadPeer {
                            comp: c.exe.clone(),
                            kind: "net",
                            peer: peer.exe.clone(),
                            extra: "",
                        })
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultMode {
    SuppressSpawn,
    ExtraSpawn,
    DropEdge,
    AlienProcess,
}

impl FaultMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultMode::SuppressSpawn => "SUPPRESS_SPAWN",
            FaultMode::ExtraSpawn => "EXTRA_SPAWN",
            FaultMode::DropEdge => "DROP_EDGE",
            FaultMode::AlienProcess => "ALIEN_PROCESS",
        }
    }

    pub fn parse(s: &str) -> Option<FaultMode> {
        match s {
            "SUPPRESS_SPAWN" => Some(FaultMode::SuppressSpawn),
            "EXTRA_SPAWN" => Some(FaultMode::ExtraSpawn),
            "DROP_EDGE" => Some(FaultMode::DropEdge),
            "ALIEN_PROCESS" => Some(FaultMode::AlienProcess),
            _ => None,
        }
    }
}

impl fmt::Display for FaultMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultSpec {
    pub mode: FaultMode,
    pub target_exe: String,
    pub magnitude: u32,
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.mode, self.target_exe, self.magnitude)
    }
}

/// Allocates pids per host, above the reserved root/noise-parent ids.
struct PidAlloc {
    next: BTreeMap<String, u32>,
}

impl PidAlloc {
    fn new() -> Self {
        PidAlloc {
            next: BTreeMap::new(),
        }
    }

    fn alloc(&mut self, host: &str) -> u32 {
        let slot = self.next.entry(host.to_string()).or_insert(100);
        let pid = *slot;
        *slot += 1;
        pid
    }
}

const TICK: f64 = 0.01;

struct Builder<'a> {
    spec: &'a ScenarioSpec,
    events: Vec<Event>,
    pids: PidAlloc,
    /// First baseline pid per component exe, the peer target for edges.
    baseline_pid: BTreeMap<String, u32>,
    /// Spawned instance keys of each exe in spawn order, for fault targeting.
    instances: BTreeMap<String, Vec<(String, u32)>>,
    seq: usize,
}

impl<'a> Builder<'a> {
    fn tick(&mut self) -> f64 {
        let t = self.seq as f64 * TICK;
        self.seq += 1;
        t
    }

    fn spawn(&mut self, host: &str, exe: &str, ppid: u32, parent_exe: &str) -> u32 {
        let pid = self.pids.alloc(host);
        let ts = self.tick();
        self.events.push(Event {
            ts,
            host: host.to_string(),
            body: EventBody::Spawn {
                pid,
                exe: exe.to_string(),
                ppid,
                parent_exe: parent_exe.to_string(),
            },
        });
        self.instances
            .entry(exe.to_string())
            .or_default()
            .push((host.to_string(), pid));
        pid
    }
}

/// Generates one run. Same (spec, seed, workload, fault) always produces
/// an identical trace.
pub fn generate_run(
    spec: &ScenarioSpec,
    run_id: &str,
    workload: u64,
    fault: Option<&FaultSpec>,
) -> Result<RunTrace, SynthError> {
    spec.validate()?;
    if workload < 1 {
        return Err(SynthError::ZeroWorkload);
    }
    if let Some(f) = fault {
        if f.magnitude < 1 {
            return Err(SynthError::ZeroMagnitude);
        }
        match f.mode {
            FaultMode::AlienProcess => {
                let collides = f.target_exe == ROOT_EXE
                    || f.target_exe == NOISE_PARENT_EXE
                    || spec.component(&f.target_exe).is_some()
                    || spec.noise.iter().any(|n| n.exe == f.target_exe);
                if collides {
                    return Err(SynthError::AlienCollision(f.target_exe.clone()));
                }
            }
            _ => {
                if spec.component(&f.target_exe).is_none() {
                    return Err(SynthError::UnknownFaultTarget(f.target_exe.clone()));
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let primary = spec.primary_host().to_string();
    let mut b = Builder {
        spec,
        events: Vec::new(),
        pids: PidAlloc::new(),
        baseline_pid: BTreeMap::new(),
        instances: BTreeMap::new(),
        seq: 0,
    };

    // service interface comes up first
    let ts = b.tick();
    b.events.push(Event {
        ts,
        host: primary.clone(),
        body: EventBody::Listen {
            pid: ROOT_PID,
            exe: ROOT_EXE.to_string(),
            endpoint: spec.endpoint.clone(),
        },
    });

    // constant baselines
    for c in &spec.components {
        for _ in 0..c.baseline_instances {
            let pid = b.spawn(&c.host, &c.exe, ROOT_PID, ROOT_EXE);
            b.baseline_pid.entry(c.exe.clone()).or_insert(pid);
        }
    }

    // workload-driven activity
    for _ in 0..workload {
        let ts = b.tick();
        b.events.push(Event {
            ts,
            host: primary.clone(),
            body: EventBody::Request {
                endpoint: spec.endpoint.clone(),
            },
        });
        for ci in 0..spec.components.len() {
            let c = &b.spec.components[ci];
            let (exe, host, spawns, ipc_peers, net_peers) = (
                c.exe.clone(),
                c.host.clone(),
                c.per_request_spawn_count,
                c.per_request_ipc_peers.clone(),
                c.per_request_net_peers.clone(),
            );
            for _ in 0..spawns {
                let pid = b.spawn(&host, &exe, ROOT_PID, ROOT_EXE);
                for peer in &ipc_peers {
                    let peer_pid = b.baseline_pid[peer];
                    let ts = b.tick();
                    b.events.push(Event {
                        ts,
                        host: host.clone(),
                        body: EventBody::Ipc {
                            pid,
                            exe: exe.clone(),
                            peer_pid,
                            peer_exe: peer.clone(),
                        },
                    });
                }
                for peer in &net_peers {
                    let peer_comp = spec.component(&peer.exe).expect("validated");
                    let peer_pid = b.baseline_pid[&peer.exe];
                    let ts = b.tick();
                    b.events.push(Event {
                        ts,
                        host: host.clone(),
                        body: EventBody::Net {
                            pid,
                            exe: exe.clone(),
                            peer_pid,
                            peer_exe: peer.exe.clone(),
                            peer_host: peer_comp.host.clone(),
                            endpoint: peer.endpoint.clone(),
                        },
                    });
                }
            }
        }
    }

    let span = b.seq as f64 * TICK;

    // workload-independent noise, spawn times scattered over the run
    for n in &spec.noise {
        let k = rng.gen_range(n.min..=n.max);
        for _ in 0..k {
            let ts = rng.gen_range(0.0..span.max(TICK));
            let pid = b.pids.alloc(&primary);
            b.events.push(Event {
                ts,
                host: primary.clone(),
                body: EventBody::Spawn {
                    pid,
                    exe: n.exe.clone(),
                    ppid: NOISE_PARENT_PID,
                    parent_exe: NOISE_PARENT_EXE.to_string(),
                },
            });
            b.instances
                .entry(n.exe.clone())
                .or_default()
                .push((primary.clone(), pid));
        }
    }

    let mut events = b.events;
    let instances = b.instances;
    let mut next_seq = b.seq;

    if let Some(f) = fault {
        match f.mode {
            FaultMode::SuppressSpawn => {
                let insts = instances.get(&f.target_exe).map(Vec::as_slice).unwrap_or(&[]);
                if (f.magnitude as usize) > insts.len() {
                    return Err(SynthError::MagnitudeTooLarge {
                        magnitude: f.magnitude,
                        available: insts.len(),
                        what: "instances",
                        target: f.target_exe.clone(),
                    });
                }
                let doomed: BTreeSet<(String, u32)> =
                    insts[..f.magnitude as usize].iter().cloned().collect();
                events.retain(|ev| !event_touches(ev, &doomed));
            }
            FaultMode::ExtraSpawn => {
                let host = spec.component(&f.target_exe).expect("validated").host.clone();
                for k in 0..f.magnitude {
                    // pids above the generator's normal range
                    events.push(Event {
                        ts: next_seq as f64 * TICK,
                        host: host.clone(),
                        body: EventBody::Spawn {
                            pid: 90_000 + k,
                            exe: f.target_exe.clone(),
                            ppid: ROOT_PID,
                            parent_exe: ROOT_EXE.to_string(),
                        },
                    });
                    next_seq += 1;
                }
            }
            FaultMode::DropEdge => {
                let mut remaining = f.magnitude as usize;
                let available = events
                    .iter()
                    .filter(|ev| is_edge_from(ev, &f.target_exe))
                    .count();
                if remaining > available {
                    return Err(SynthError::MagnitudeTooLarge {
                        magnitude: f.magnitude,
                        available,
                        what: "edges",
                        target: f.target_exe.clone(),
                    });
                }
                events.retain(|ev| {
                    if remaining > 0 && is_edge_from(ev, &f.target_exe) {
                        remaining -= 1;
                        false
                    } else {
                        true
                    }
                });
            }
            FaultMode::AlienProcess => {
                for i in 0..f.magnitude {
                    events.push(Event {
                        ts: (next_seq + i as usize) as f64 * TICK,
                        host: primary.clone(),
                        body: EventBody::Spawn {
                            pid: 95_000 + i,
                            exe: f.target_exe.clone(),
                            ppid: ROOT_PID,
                            parent_exe: ROOT_EXE.to_string(),
                        },
                    });
                }
            }
        }
    }

    events.sort_by(|a, b| a.ts.partial_cmp(&b.ts).expect("finite ts"));

    let trace = RunTrace {
        run_id: run_id.to_string(),
        label: if fault.is_some() {
            Label::Fault
        } else {
            Label::Normal
        },
        workload,
        events,
    };
    trace.validate()?;
    Ok(trace)
}

fn event_touches(ev: &Event, keys: &BTreeSet<(String, u32)>) -> bool {
    let check = |host: &str, pid: u32| keys.contains(&(host.to_string(), pid));
    match &ev.body {
        EventBody::Spawn { pid, ppid, .. } => check(&ev.host, *pid) || check(&ev.host, *ppid),
        EventBody::Ipc { pid, peer_pid, .. } => check(&ev.host, *pid) || check(&ev.host, *peer_pid),
        EventBody::Net {
            pid,
            peer_pid,
            peer_host,
            ..
        } => check(&ev.host, *pid) || check(peer_host, *peer_pid),
        EventBody::Listen { pid, .. } => check(&ev.host, *pid),
        EventBody::Request { .. } => false,
    }
}

fn is_edge_from(ev: &Event, exe: &str) -> bool {
    match &ev.body {
        EventBody::Ipc { exe: e, .. } | EventBody::Net { exe: e, .. } => e == exe,
        _ => false,
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub run_id: String,
    pub label: Label,
    pub workload: u64,
    pub fault: Option<FaultSpec>,
}

pub struct DatasetParams {
    pub n_normal: usize,
    pub n_fault: usize,
    pub workload_min: u64,
    pub workload_max: u64,
    pub seed: u64,
}

/// Generates a dataset directory: one `<run_id>.trace` per run plus a
/// `manifest.tsv` recording run_id, label, workload and fault.
pub fn generate_dataset(
    spec: &ScenarioSpec,
    params: &DatasetParams,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>, SynthError> {
    spec.validate()?;
    if params.n_normal < 10 {
        return Err(SynthError::TooFewNormalRuns(params.n_normal));
    }
    let faults = fault_cycle(spec)?;
    fs::create_dir_all(out_dir)?;

    let span = params.workload_max.saturating_sub(params.workload_min) + 1;
    let workload_of = |i: usize| params.workload_min + (i as u64 % span);

    let mut manifest = Vec::new();
    for i in 0..params.n_normal {
        let run_id = format!("normal-{i:04}");
        let mut run_spec = spec.clone();
        run_spec.seed = params.seed.wrapping_add(i as u64);
        let workload = workload_of(i);
        let trace = generate_run(&run_spec, &run_id, workload, None)?;
        crate::trace::write_trace(&trace, &out_dir.join(format!("{run_id}.trace")))?;
        manifest.push(ManifestEntry {
            run_id,
            label: Label::Normal,
            workload,
            fault: None,
        });
    }
    for j in 0..params.n_fault {
        let run_id = format!("fault-{j:04}");
        let mut run_spec = spec.clone();
        run_spec.seed = params.seed.wrapping_add((params.n_normal + j) as u64);
        let workload = workload_of(j);
        let fault = faults[j % faults.len()].clone();
        let trace = generate_run(&run_spec, &run_id, workload, Some(&fault))?;
        crate::trace::write_trace(&trace, &out_dir.join(format!("{run_id}.trace")))?;
        manifest.push(ManifestEntry {
            run_id,
            label: Label::Fault,
            workload,
            fault: Some(fault),
        });
    }

    write_manifest(&manifest, params.seed, out_dir)?;
    Ok(manifest)
}

/// The fault modes applicable to a scenario, in rotation order.
pub fn fault_cycle(spec: &ScenarioSpec) -> Result<Vec<FaultSpec>, SynthError> {
    let mut out = Vec::new();
    if let Some(c) = spec
        .components
        .iter()
        .find(|c| c.per_request_spawn_count >= 1)
    {
        out.push(FaultSpec {
            mode: FaultMode::SuppressSpawn,
            target_exe: c.exe.clone(),
            magnitude: 1,
        });
        out.push(FaultSpec {
            mode: FaultMode::ExtraSpawn,
            target_exe: c.exe.clone(),
            magnitude: 1,
        });
    }
    if let Some(c) = spec.components.iter().find(|c| {
        c.per_request_spawn_count >= 1
            && (!c.per_request_ipc_peers.is_empty() || !c.per_request_net_peers.is_empty())
    }) {
        out.push(FaultSpec {
            mode: FaultMode::DropEdge,
            target_exe: c.exe.clone(),
            magnitude: 1,
        });
    }
    out.push(FaultSpec {
        mode: FaultMode::AlienProcess,
        target_exe: "intruder".to_string(),
        magnitude: 1,
    });
    if out.is_empty() {
        return Err(SynthError::NoApplicableFault);
    }
    Ok(out)
}

const MANIFEST_MAGIC: &str = "graphwatch-manifest";
const MANIFEST_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.tsv";

pub fn write_manifest(
    entries: &[ManifestEntry],
    seed: u64,
    dir: &Path,
) -> Result<(), SynthError> {
    let mut out = String::new();
    out.push_str(&format!("{MANIFEST_MAGIC} {MANIFEST_VERSION}\n"));
    out.push_str(&format!("rng\t{RNG_NAME}\n"));
    out.push_str(&format!("seed\t{seed}\n"));
    for e in entries {
        let fault = e
            .fault
            .as_ref()
            .map(|f| f.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.run_id,
            e.label.as_str(),
            e.workload,
            fault
        ));
    }
    fs::write(dir.join(MANIFEST_FILE), out)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<(u64, Vec<ManifestEntry>), SynthError> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(SynthError::Manifest {
        line: 1,
        msg: "empty manifest".into(),
    })?;
    if header != format!("{MANIFEST_MAGIC} {MANIFEST_VERSION}") {
        return Err(SynthError::Manifest {
            line: 1,
            msg: format!("unsupported manifest header: {header:?}"),
        });
    }
    let mut seed = 0u64;
    let mut entries = Vec::new();
    for (i, l) in lines {
        if l.is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split('\t').collect();
        let bad = |msg: String| SynthError::Manifest { line: i + 1, msg };
        match fields.as_slice() {
            ["rng", name] => {
                if *name != RNG_NAME {
                    return Err(bad(format!("unsupported rng {name:?}")));
                }
            }
            ["seed", s] => {
                seed = s.parse().map_err(|_| bad(format!("invalid seed {s:?}")))?;
            }
            [run_id, label, workload, fault] => {
                let label = Label::parse(label)
                    .ok_or_else(|| bad(format!("unknown label {label:?}")))?;
                let workload: u64 = workload
                    .parse()
                    .map_err(|_| bad(format!("invalid workload {workload:?}")))?;
                let fault = if fault.is_empty() {
                    None
                } else {
                    let parts: Vec<&str> = fault.split(':').collect();
                    let [mode, target, magnitude] = <[&str; 3]>::try_from(parts)
                        .map_err(|_| bad(format!("invalid fault field {fault:?}")))?;
                    Some(FaultSpec {
                        mode: FaultMode::parse(mode)
                            .ok_or_else(|| bad(format!("unknown fault mode {mode:?}")))?,
                        target_exe: target.to_string(),
                        magnitude: magnitude
                            .parse()
                            .map_err(|_| bad(format!("invalid magnitude {magnitude:?}")))?,
                    })
                };
                entries.push(ManifestEntry {
                    run_id: run_id.to_string(),
                    label,
                    workload,
                    fault,
                });
            }
            _ => return Err(bad(format!("unrecognized manifest line: {l:?}"))),
        }
    }
    Ok((seed, entries))
}

const SCENARIO_MAGIC: &str = "graphwatch-scenario";
const SCENARIO_VERSION: &str = "1";

/// Desk-scale default: count-linear, degree-linear and constant
/// components, one cross-host service, plus one noise process.
pub fn default_scenario() -> ScenarioSpec {
    ScenarioSpec {
        endpoint: "api:8774".to_string(),
        seed: 42,
        components: vec![
            ComponentTemplate {
                exe: "vmproc".to_string(),
                host: "h0".to_string(),
                baseline_instances: 0,
                per_request_spawn_count: 2,
                per_request_ipc_peers: vec!["hyperd".to_string()],
                per_request_net_peers: vec![NetPeer {
                    exe: "dbd".to_string(),
                    endpoint: "db:3306".to_string(),
                }],
            },
            ComponentTemplate {
                exe: "volmk".to_string(),
                host: "h0".to_string(),
                baseline_instances: 0,
                per_request_spawn_count: 1,
                per_request_ipc_peers: vec![],
                per_request_net_peers: vec![],
            },
            ComponentTemplate {
                exe: "hyperd".to_string(),
                host: "h0".to_string(),
                baseline_instances: 1,
                per_request_spawn_count: 0,
                per_request_ipc_peers: vec![],
                per_request_net_peers: vec![],
            },
            ComponentTemplate {
                exe: "dbd".to_string(),
                host: "h1".to_string(),
                baseline_instances: 1,
                per_request_spawn_count: 0,
                per_request_ipc_peers: vec![],
                per_request_net_peers: vec![],
            },
            ComponentTemplate {
                exe: "syslogd".to_string(),
                host: "h0".to_string(),
                baseline_instances: 2,
                per_request_spawn_count: 0,
                per_request_ipc_peers: vec![],
                per_request_net_peers: vec![],
            },
        ],
        noise: vec![NoiseSpec {
            exe: "cron".to_string(),
            min: 1,
            max: 8,
        }],
    }
}

pub fn format_scenario(spec: &ScenarioSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("{SCENARIO_MAGIC} {SCENARIO_VERSION}\n"));
    out.push_str(&format!("seed\t{}\n", spec.seed));
    out.push_str(&format!("endpoint\t{}\n", spec.endpoint));
    for c in &spec.components {
        let ipc = if c.per_request_ipc_peers.is_empty() {
            "-".to_string()
        } else {
            c.per_request_ipc_peers.join(",")
        };
        let net = if c.per_request_net_peers.is_empty() {
            "-".to_string()
        } else {
            c.per_request_net_peers
                .iter()
                .map(|p| format!("{}@{}", p.exe, p.endpoint))
                .collect::<Vec<_>>()
                .join(",")
        };
        out.push_str(&format!(
            "component\t{}\t{}\t{}\t{}\t{}\t{}\n",
            c.exe, c.host, c.baseline_instances, c.per_request_spawn_count, ipc, net
        ));
    }
    for n in &spec.noise {
        out.push_str(&format!("noise\t{}\t{}\t{}\n", n.exe, n.min, n.max));
    }
    out
}

pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, SynthError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(SynthError::Format {
        line: 1,
        msg: "empty scenario file".into(),
    })?;
    if header != format!("{SCENARIO_MAGIC} {SCENARIO_VERSION}") {
        return Err(SynthError::Format {
            line: 1,
            msg: format!("unsupported scenario header: {header:?}"),
        });
    }
    let mut spec = ScenarioSpec {
        endpoint: String::new(),
        seed: 0,
        components: Vec::new(),
        noise: Vec::new(),
    };
    for (i, l) in lines {
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = l.split('\t').collect();
        let bad = |msg: String| SynthError::Format { line: i + 1, msg };
        match fields.as_slice() {
            ["seed", s] => {
                spec.seed = s.parse().map_err(|_| bad(format!("invalid seed {s:?}")))?;
            }
            ["endpoint", e] => spec.endpoint = e.to_string(),
            ["component", exe, host, baseline, spawns, ipc, net] => {
                let per_request_ipc_peers = if *ipc == "-" {
                    vec![]
                } else {
                    ipc.split(',').map(str::to_string).collect()
                };
                let per_request_net_peers = if *net == "-" {
                    vec![]
                } else {
                    net.split(',')
                        .map(|p| {
                            p.split_once('@')
                                .map(|(exe, endpoint)| NetPeer {
                                    exe: exe.to_string(),
                                    endpoint: endpoint.to_string(),
                                })
                                .ok_or_else(|| bad(format!("invalid net peer {p:?}")))
                        })
                        .collect::<Result<_, _>>()?
                };
                spec.components.push(ComponentTemplate {
                    exe: exe.to_string(),
                    host: host.to_string(),
                    baseline_instances: baseline
                        .parse()
                        .map_err(|_| bad(format!("invalid baseline {baseline:?}")))?,
                    per_request_spawn_count: spawns
                        .parse()
                        .map_err(|_| bad(format!("invalid spawn count {spawns:?}")))?,
                    per_request_ipc_peers,
                    per_request_net_peers,
                });
            }
            ["noise", exe, min, max] => {
                spec.noise.push(NoiseSpec {
                    exe: exe.to_string(),
                    min: min.parse().map_err(|_| bad(format!("invalid min {min:?}")))?,
                    max: max.parse().map_err(|_| bad(format!("invalid max {max:?}")))?,
                });
            }
            _ => return Err(bad(format!("unrecognized scenario line: {l:?}"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}
