//! Typed process-interaction graph of one run.
//!
//! Nodes are processes keyed by (host, pid) and typed by executable name.
//! Edges are directed (spawner to spawned, initiator to peer) and
//! deduplicated per kind: repeated interactions between the same pid pair
//! collapse to one edge.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::trace::{Event, EventBody, RunTrace};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("conflicting exe for process ({host}, {pid}): {existing:?} vs {observed:?}")]
    ExeConflict {
        host: String,
        pid: u32,
        existing: String,
        observed: String,
    },
    #[error("unknown node key ({0}, {1})")]
    UnknownNode(String, u32),
}

/// Process identity within one run: (host, pid).
pub type NodeKey = (String, u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeKind {
    Spawn,
    Ipc,
    Net,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Spawn => "spawn",
            EdgeKind::Ipc => "ipc",
            EdgeKind::Net => "net",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SystemGraph {
    pub run_id: String,
    nodes: BTreeMap<NodeKey, String>,
    edges: BTreeSet<(NodeKey, NodeKey, EdgeKind)>,
}

impl SystemGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeKey, &str)> {
        self.nodes.iter().map(|(k, exe)| (k, exe.as_str()))
    }

    pub fn edges(&self) -> impl Iterator<Item = &(NodeKey, NodeKey, EdgeKind)> {
        self.edges.iter()
    }

    pub fn exe_of(&self, key: &NodeKey) -> Option<&str> {
        self.nodes.get(key).map(String::as_str)
    }

    /// Indegree plus outdegree across all edge kinds. A self-loop counts 2.
    pub fn node_degree(&self, key: &NodeKey) -> Result<u64, GraphError> {
        if !self.nodes.contains_key(key) {
            return Err(GraphError::UnknownNode(key.0.clone(), key.1));
        }
        let mut d = 0u64;
        for (src, dst, _) in &self.edges {
            if src == key {
                d += 1;
            }
            if dst == key {
                d += 1;
            }
        }
        Ok(d)
    }

    fn add_node(&mut self, key: NodeKey, exe: &str) -> Result<(), GraphError> {
        match self.nodes.get(&key) {
            Some(existing) if existing != exe => Err(GraphError::ExeConflict {
                host: key.0,
                pid: key.1,
                existing: existing.clone(),
                observed: exe.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                self.nodes.insert(key, exe.to_string());
                Ok(())
            }
        }
    }
}

/// Builds the graph of one run. LISTEN and REQUEST events contribute
/// nothing; PID reuse (same key, different exe) is an error.
pub fn build_graph(trace: &RunTrace) -> Result<SystemGraph, GraphError> {
    let mut g = SystemGraph {
        run_id: trace.run_id.clone(),
        ..Default::default()
    };
    for ev in &trace.events {
        apply_event(&mut g, ev)?;
    }
    Ok(g)
}

/// Adds one event's nodes and edges to the graph. Shared by the batch
/// builder and the incremental monitor.
pub fn apply_event(g: &mut SystemGraph, ev: &Event) -> Result<Option<(NodeKey, NodeKey, EdgeKind)>, GraphError> {
    let (src, src_exe, dst, dst_exe, kind) = match &ev.body {
        EventBody::Spawn {
            pid,
            exe,
            ppid,
            parent_exe,
        } => (
            (ev.host.clone(), *ppid),
            parent_exe.as_str(),
            (ev.host.clone(), *pid),
            exe.as_str(),
            EdgeKind::Spawn,
        ),
        EventBody::Ipc {
            pid,
            exe,
            peer_pid,
            peer_exe,
        } => (
            (ev.host.clone(), *pid),
            exe.as_str(),
            (ev.host.clone(), *peer_pid),
            peer_exe.as_str(),
            EdgeKind::Ipc,
        ),
        EventBody::Net {
            pid,
            exe,
            peer_pid,
            peer_exe,
            peer_host,
            ..
        } => (
            (ev.host.clone(), *pid),
            exe.as_str(),
            (peer_host.clone(), *peer_pid),
            peer_exe.as_str(),
            EdgeKind::Net,
        ),
        EventBody::Listen { .. } | EventBody::Request { .. } => return Ok(None),
    };
    g.add_node(src.clone(), src_exe)?;
    g.add_node(dst.clone(), dst_exe)?;
    let edge = (src, dst, kind);
    let inserted = g.edges.insert(edge.clone());
    Ok(if inserted { Some(edge) } else { None })
}

/// Writes a Graphviz DOT rendering: nodes labeled by exe, one edge style
/// per kind (spawn solid, ipc dashed, net dotted).
pub fn export_dot(graph: &SystemGraph, path: &Path) -> Result<(), GraphError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_dot(graph, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_dot<W: Write>(graph: &SystemGraph, w: &mut W) -> Result<(), GraphError> {
    writeln!(w, "digraph \"{}\" {{", escape(&graph.run_id))?;
    for ((host, pid), exe) in graph.nodes.iter() {
        writeln!(
            w,
            "  \"{}:{}\" [label=\"{}\"];",
            escape(host),
            pid,
            escape(exe)
        )?;
    }
    for ((sh, sp), (dh, dp), kind) in graph.edges.iter() {
        let style = match kind {
            EdgeKind::Spawn => "solid",
            EdgeKind::Ipc => "dashed",
            EdgeKind::Net => "dotted",
        };
        writeln!(
            w,
            "  \"{}:{}\" -> \"{}:{}\" [style={} label=\"{}\"];",
            escape(sh),
            sp,
            escape(dh),
            dp,
            style,
            kind.as_str()
        )?;
    }
    writeln!(w, "}}")?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
