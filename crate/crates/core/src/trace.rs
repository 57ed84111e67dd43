//! Event vocabulary and the on-disk trace format.
//!
//! A trace file is UTF-8, one record per line, tab-separated fields.
//! Fields must not contain tabs or newlines; there is no quoting.
//! Line 1 is the run metadata: `run_id  label  workload`.
//! Every following line is one event with eleven fields in fixed order:
//! `ts kind host pid exe ppid parent_exe peer_pid peer_exe peer_host endpoint`,
//! with fields that do not apply to the event kind left empty.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: invariant violated: {invariant}")]
    Invariant { line: usize, invariant: &'static str },
    #[error("field {field} contains a tab or newline and cannot be encoded")]
    UnencodableField { field: &'static str },
}

/// The five observable event kinds. Also used by monitoring-plan filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Spawn,
    Ipc,
    Net,
    Listen,
    Request,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Spawn => "SPAWN",
            EventKind::Ipc => "IPC",
            EventKind::Net => "NET",
            EventKind::Listen => "LISTEN",
            EventKind::Request => "REQUEST",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        match s {
            "SPAWN" => Some(EventKind::Spawn),
            "IPC" => Some(EventKind::Ipc),
            "NET" => Some(EventKind::Net),
            "LISTEN" => Some(EventKind::Listen),
            "REQUEST" => Some(EventKind::Request),
            _ => None,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kind-specific payload of an event.
///
/// IPC is always intra-host, so the peer host is implied by the event's
/// `host`. REQUEST events come from an external client and carry no pid.
#[derive(Debug, Clone, PartialEq)]
pub enum EventBody {
    Spawn {
        pid: u32,
        exe: String,
        ppid: u32,
        parent_exe: String,
    },
    Ipc {
        pid: u32,
        exe: String,
        peer_pid: u32,
        peer_exe: String,
    },
    Net {
        pid: u32,
        exe: String,
        peer_pid: u32,
        peer_exe: String,
        peer_host: String,
        endpoint: String,
    },
    Listen {
        pid: u32,
        exe: String,
        endpoint: String,
    },
    Request {
        endpoint: String,
    },
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::Spawn { .. } => EventKind::Spawn,
            EventBody::Ipc { .. } => EventKind::Ipc,
            EventBody::Net { .. } => EventKind::Net,
            EventBody::Listen { .. } => EventKind::Listen,
            EventBody::Request { .. } => EventKind::Request,
        }
    }

    /// Executable name of the initiating process, if the kind has one.
    pub fn exe(&self) -> Option<&str> {
        match self {
            EventBody::Spawn { exe, .. }
            | EventBody::Ipc { exe, .. }
            | EventBody::Net { exe, .. }
            | EventBody::Listen { exe, .. } => Some(exe),
            EventBody::Request { .. } => None,
        }
    }

    /// Executable name on the other side of the interaction, if any.
    /// For SPAWN that is the parent, for IPC/NET the peer.
    pub fn peer_exe(&self) -> Option<&str> {
        match self {
            EventBody::Spawn { parent_exe, .. } => Some(parent_exe),
            EventBody::Ipc { peer_exe, .. } | EventBody::Net { peer_exe, .. } => Some(peer_exe),
            _ => None,
        }
    }
}

/// One OS-level occurrence with its run-relative timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub ts: f64,
    pub host: String,
    pub body: EventBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Normal,
    Fault,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "NORMAL",
            Label::Fault => "FAULT",
            Label::Unknown => "UNKNOWN",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "NORMAL" => Some(Label::Normal),
            "FAULT" => Some(Label::Fault),
            "UNKNOWN" => Some(Label::Unknown),
            _ => None,
        }
    }
}

/// A fully validated run trace: metadata plus timestamp-ordered events.
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub run_id: String,
    pub label: Label,
    pub workload: u64,
    pub events: Vec<Event>,
}

impl RunTrace {
    /// Validates the per-trace invariants on an assembled trace.
    pub fn validate(&self) -> Result<(), TraceError> {
        let mut prev = 0.0f64;
        for (i, ev) in self.events.iter().enumerate() {
            let line = i + 2; // metadata is line 1
            check_event(ev, prev, line)?;
            prev = ev.ts;
        }
        Ok(())
    }

    /// Number of REQUEST events, optionally restricted to one endpoint.
    pub fn count_requests(&self, endpoint_filter: Option<&str>) -> u64 {
        self.events
            .iter()
            .filter(|ev| match &ev.body {
                EventBody::Request { endpoint } => {
                    endpoint_filter.map_or(true, |f| f == endpoint)
                }
                _ => false,
            })
            .count() as u64
    }

    /// Distinct executable names referenced anywhere in the trace.
    pub fn exe_names(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        for ev in &self.events {
            if let Some(exe) = ev.body.exe() {
                out.insert(exe);
            }
            if let Some(peer) = ev.body.peer_exe() {
                out.insert(peer);
            }
        }
        out
    }
}

fn check_event(ev: &Event, prev_ts: f64, line: usize) -> Result<(), TraceError> {
    if !(ev.ts >= 0.0) || !ev.ts.is_finite() {
        return Err(TraceError::Invariant {
            line,
            invariant: "ts must be finite and non-negative",
        });
    }
    if ev.ts < prev_ts {
        return Err(TraceError::Invariant {
            line,
            invariant: "non-decreasing ts",
        });
    }
    match &ev.body {
        EventBody::Spawn { pid, ppid, .. } => {
            if pid == ppid {
                return Err(TraceError::Invariant {
                    line,
                    invariant: "SPAWN requires ppid != pid",
                });
            }
        }
        EventBody::Ipc { .. } => {}
        _ => {}
    }
    Ok(())
}

fn parse_pid(s: &str, line: usize, field: &str) -> Result<u32, TraceError> {
    let v: u32 = s.parse().map_err(|_| TraceError::Parse {
        line,
        msg: format!("invalid {field}: {s:?}"),
    })?;
    if v == 0 {
        return Err(TraceError::Parse {
            line,
            msg: format!("{field} must be positive"),
        });
    }
    Ok(v)
}

fn required<'a>(s: &'a str, line: usize, field: &str) -> Result<&'a str, TraceError> {
    if s.is_empty() {
        Err(TraceError::Parse {
            line,
            msg: format!("missing required field {field}"),
        })
    } else {
        Ok(s)
    }
}

fn expect_empty(s: &str, line: usize, field: &str, kind: EventKind) -> Result<(), TraceError> {
    if s.is_empty() {
        Ok(())
    } else {
        Err(TraceError::Parse {
            line,
            msg: format!("field {field} must be empty for {kind}"),
        })
    }
}

/// Parses one event line (fields already split on tabs).
fn parse_event_line(fields: &[&str], line: usize) -> Result<Event, TraceError> {
    if fields.len() != 11 {
        return Err(TraceError::Parse {
            line,
            msg: format!("expected 11 fields, got {}", fields.len()),
        });
    }
    let [ts, kind, host, pid, exe, ppid, parent_exe, peer_pid, peer_exe, peer_host, endpoint] =
        <[&str; 11]>::try_from(fields).unwrap();

    let ts: f64 = ts.parse().map_err(|_| TraceError::Parse {
        line,
        msg: format!("invalid ts: {ts:?}"),
    })?;
    let kind = EventKind::parse(kind).ok_or_else(|| TraceError::Parse {
        line,
        msg: format!("unknown event kind: {kind:?}"),
    })?;
    let host = required(host, line, "host")?.to_string();

    let body = match kind {
        EventKind::Spawn => {
            expect_empty(peer_pid, line, "peer_pid", kind)?;
            expect_empty(peer_exe, line, "peer_exe", kind)?;
            expect_empty(peer_host, line, "peer_host", kind)?;
            expect_empty(endpoint, line, "endpoint", kind)?;
            EventBody::Spawn {
                pid: parse_pid(pid, line, "pid")?,
                exe: required(exe, line, "exe")?.to_string(),
                ppid: parse_pid(ppid, line, "ppid")?,
                parent_exe: required(parent_exe, line, "parent_exe")?.to_string(),
            }
        }
        EventKind::Ipc => {
            expect_empty(ppid, line, "ppid", kind)?;
            expect_empty(parent_exe, line, "parent_exe", kind)?;
            expect_empty(endpoint, line, "endpoint", kind)?;
            // IPC is intra-host: peer_host may be omitted or must repeat host.
            if !peer_host.is_empty() && peer_host != host {
                return Err(TraceError::Invariant {
                    line,
                    invariant: "IPC requires host == peer_host",
                });
            }
            EventBody::Ipc {
                pid: parse_pid(pid, line, "pid")?,
                exe: required(exe, line, "exe")?.to_string(),
                peer_pid: parse_pid(peer_pid, line, "peer_pid")?,
                peer_exe: required(peer_exe, line, "peer_exe")?.to_string(),
            }
        }
        EventKind::Net => {
            expect_empty(ppid, line, "ppid", kind)?;
            expect_empty(parent_exe, line, "parent_exe", kind)?;
            EventBody::Net {
                pid: parse_pid(pid, line, "pid")?,
                exe: required(exe, line, "exe")?.to_string(),
                peer_pid: parse_pid(peer_pid, line, "peer_pid")?,
                peer_exe: required(peer_exe, line, "peer_exe")?.to_string(),
                peer_host: required(peer_host, line, "peer_host")?.to_string(),
                endpoint: required(endpoint, line, "endpoint")?.to_string(),
            }
        }
        EventKind::Listen => {
            expect_empty(ppid, line, "ppid", kind)?;
            expect_empty(parent_exe, line, "parent_exe", kind)?;
            expect_empty(peer_pid, line, "peer_pid", kind)?;
            expect_empty(peer_exe, line, "peer_exe", kind)?;
            expect_empty(peer_host, line, "peer_host", kind)?;
            EventBody::Listen {
                pid: parse_pid(pid, line, "pid")?,
                exe: required(exe, line, "exe")?.to_string(),
                endpoint: required(endpoint, line, "endpoint")?.to_string(),
            }
        }
        EventKind::Request => {
            expect_empty(pid, line, "pid", kind)?;
            expect_empty(exe, line, "exe", kind)?;
            expect_empty(ppid, line, "ppid", kind)?;
            expect_empty(parent_exe, line, "parent_exe", kind)?;
            expect_empty(peer_pid, line, "peer_pid", kind)?;
            expect_empty(peer_exe, line, "peer_exe", kind)?;
            expect_empty(peer_host, line, "peer_host", kind)?;
            EventBody::Request {
                endpoint: required(endpoint, line, "endpoint")?.to_string(),
            }
        }
    };

    Ok(Event {
        ts,
        host,
        body,
    })
}

/// Parses a single event record (without metadata context). Used by the
/// streaming monitor; validation of cross-event ordering is the caller's job.
pub fn parse_event_record(record: &str, line: usize) -> Result<Event, TraceError> {
    let fields: Vec<&str> = record.split('\t').collect();
    parse_event_line(&fields, line)
}

/// Reads and validates a trace file.
pub fn parse_trace(path: &Path) -> Result<RunTrace, TraceError> {
    let file = File::open(path)?;
    parse_trace_reader(BufReader::new(file))
}

pub fn parse_trace_reader<R: BufRead>(reader: R) -> Result<RunTrace, TraceError> {
    let mut lines = reader.lines();
    let meta = lines.next().ok_or(TraceError::Parse {
        line: 1,
        msg: "empty file: missing metadata line".into(),
    })??;
    let meta_fields: Vec<&str> = meta.split('\t').collect();
    if meta_fields.len() != 3 {
        return Err(TraceError::Parse {
            line: 1,
            msg: format!("metadata line must have 3 fields, got {}", meta_fields.len()),
        });
    }
    let run_id = required(meta_fields[0], 1, "run_id")?.to_string();
    let label = Label::parse(meta_fields[1]).ok_or_else(|| TraceError::Parse {
        line: 1,
        msg: format!("unknown label: {:?}", meta_fields[1]),
    })?;
    let workload: u64 = meta_fields[2].parse().map_err(|_| TraceError::Parse {
        line: 1,
        msg: format!("invalid workload: {:?}", meta_fields[2]),
    })?;

    let mut events = Vec::new();
    let mut prev_ts = 0.0f64;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let ev = parse_event_record(&line, line_no)?;
        check_event(&ev, prev_ts, line_no)?;
        prev_ts = ev.ts;
        events.push(ev);
    }

    Ok(RunTrace {
        run_id,
        label,
        workload,
        events,
    })
}

fn check_field(value: &str, field: &'static str) -> Result<(), TraceError> {
    if value.contains('\t') || value.contains('\n') || value.contains('\r') {
        Err(TraceError::UnencodableField { field })
    } else {
        Ok(())
    }
}

/// Encodes one event as a tab-separated record (no trailing newline).
pub fn format_event(ev: &Event) -> Result<String, TraceError> {
    check_field(&ev.host, "host")?;
    let empty = String::new();
    let (pid, exe, ppid, parent_exe, peer_pid, peer_exe, peer_host, endpoint);
    match &ev.body {
        EventBody::Spawn {
            pid: p,
            exe: e,
            ppid: pp,
            parent_exe: pe,
        } => {
            check_field(e, "exe")?;
            check_field(pe, "parent_exe")?;
            pid = p.to_string();
            exe = e.clone();
            ppid = pp.to_string();
            parent_exe = pe.clone();
            peer_pid = empty.clone();
            peer_exe = empty.clone();
            peer_host = empty.clone();
            endpoint = empty;
        }
        EventBody::Ipc {
            pid: p,
            exe: e,
            peer_pid: qp,
            peer_exe: qe,
        } => {
            check_field(e, "exe")?;
            check_field(qe, "peer_exe")?;
            pid = p.to_string();
            exe = e.clone();
            ppid = empty.clone();
            parent_exe = empty.clone();
            peer_pid = qp.to_string();
            peer_exe = qe.clone();
            peer_host = empty.clone();
            endpoint = empty;
        }
        EventBody::Net {
            pid: p,
            exe: e,
            peer_pid: qp,
            peer_exe: qe,
            peer_host: qh,
            endpoint: ep,
        } => {
            check_field(e, "exe")?;
            check_field(qe, "peer_exe")?;
            check_field(qh, "peer_host")?;
            check_field(ep, "endpoint")?;
            pid = p.to_string();
            exe = e.clone();
            ppid = empty.clone();
            parent_exe = empty.clone();
            peer_pid = qp.to_string();
            peer_exe = qe.clone();
            peer_host = qh.clone();
            endpoint = ep.clone();
        }
        EventBody::Listen {
            pid: p,
            exe: e,
            endpoint: ep,
        } => {
            check_field(e, "exe")?;
            check_field(ep, "endpoint")?;
            pid = p.to_string();
            exe = e.clone();
            ppid = empty.clone();
            parent_exe = empty.clone();
            peer_pid = empty.clone();
            peer_exe = empty.clone();
            peer_host = empty;
            endpoint = ep.clone();
        }
        EventBody::Request { endpoint: ep } => {
            check_field(ep, "endpoint")?;
            pid = empty.clone();
            exe = empty.clone();
            ppid = empty.clone();
            parent_exe = empty.clone();
            peer_pid = empty.clone();
            peer_exe = empty.clone();
            peer_host = empty;
            endpoint = ep.clone();
        }
    }
    Ok(format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        ev.ts,
        ev.body.kind(),
        ev.host,
        pid,
        exe,
        ppid,
        parent_exe,
        peer_pid,
        peer_exe,
        peer_host,
        endpoint
    ))
}

/// Writes a trace so that `parse_trace` reads back a field-for-field
/// equal value. Timestamps use Rust's shortest round-trip float encoding.
pub fn write_trace(trace: &RunTrace, path: &Path) -> Result<(), TraceError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_trace_writer(trace, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_trace_writer<W: Write>(trace: &RunTrace, w: &mut W) -> Result<(), TraceError> {
    check_field(&trace.run_id, "run_id")?;
    writeln!(w, "{}\t{}\t{}", trace.run_id, trace.label.as_str(), trace.workload)?;
    for ev in &trace.events {
        writeln!(w, "{}", format_event(ev)?)?;
    }
    Ok(())
}
