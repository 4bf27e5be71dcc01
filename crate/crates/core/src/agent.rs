// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

//! Cluster agent: watches the service's replica state and pushes a control
//! payload to the router whenever the effective replica set changes.
//!
//! The state source is a TOML file:
//!
//! ```toml
//! service_name = "web"
//! virtual_addr = "192.0.2.10"
//! virtual_port = 80
//! nodeport_port = 30080
//!
//! [[replicas]]
//! pod_id = "web-0"
//! node_addr = "10.0.1.1"
//! phase = "Running"
//! ```

use std::collections::BTreeSet;
use std::io;
use std::net::{Ipv4Addr, SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::control::{encode_control, ControlError, ControlPayload, DEFAULT_CONTROL_PORT,
    DEFAULT_MAX_REPLICAS};

pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("state source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("cannot parse cluster state: {0}")]
    ParseError(String),
    #[error("no running replicas")]
    NoRunningReplicas,
    #[error("{count} running replicas exceeds the maximum of {max}")]
    TooManyReplicas { count: usize, max: usize },
    #[error(transparent)]
    Control(ControlError),
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("cannot send control packet: {0}")]
    Send(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PodPhase {
    Running,
    Pending,
    Terminating,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replica {
    pub pod_id: String,
    pub node_addr: Ipv4Addr,
    pub phase: PodPhase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterState {
    pub service_name: String,
    pub virtual_addr: Ipv4Addr,
    pub virtual_port: u16,
    pub nodeport_port: u16,
    #[serde(default)]
    pub replicas: Vec<Replica>,
}

impl ClusterState {
    pub fn from_toml(text: &str) -> Result<Self, AgentError> {
        let state: Self =
            toml::from_str(text).map_err(|e| AgentError::ParseError(e.to_string()))?;
        state.validate()?;
        Ok(state)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("cluster state serializes")
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let mut ids = BTreeSet::new();
        for r in &self.replicas {
            if !ids.insert(r.pod_id.as_str()) {
                return Err(AgentError::ParseError(format!(
                    "duplicate pod_id `{}`",
                    r.pod_id
                )));
            }
            let a = r.node_addr;
            if a.is_unspecified() || a.is_broadcast() || a.is_multicast() {
                return Err(AgentError::ParseError(format!(
                    "pod `{}` has non-unicast node_addr {a}",
                    r.pod_id
                )));
            }
        }
        Ok(())
    }

    /// Node addresses of Running pods, sorted, one entry per pod.
    pub fn running_addrs(&self) -> Vec<Ipv4Addr> {
        let mut v: Vec<Ipv4Addr> = self
            .replicas
            .iter()
            .filter(|r| r.phase == PodPhase::Running)
            .map(|r| r.node_addr)
            .collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeSet {
    Changed,
    Unchanged,
}

/// Compares what the router would see, not pod identities.
pub fn diff(prev: &ClusterState, curr: &ClusterState) -> ChangeSet {
    let same = prev.virtual_addr == curr.virtual_addr
        && prev.virtual_port == curr.virtual_port
        && prev.nodeport_port == curr.nodeport_port
        && prev.running_addrs() == curr.running_addrs();
    if same {
        ChangeSet::Unchanged
    } else {
        ChangeSet::Changed
    }
}

pub fn build_payload(state: &ClusterState, max_replicas: usize) -> Result<ControlPayload, AgentError> {
    let replica_addrs = state.running_addrs();
    if replica_addrs.is_empty() {
        return Err(AgentError::NoRunningReplicas);
    }
    if replica_addrs.len() > max_replicas {
        return Err(AgentError::TooManyReplicas {
            count: replica_addrs.len(),
            max: max_replicas,
        });
    }
    let payload = ControlPayload {
        nodeport_port: state.nodeport_port,
        virtual_addr: state.virtual_addr,
        virtual_port: state.virtual_port,
        replica_addrs,
    };
    payload.validate(max_replicas).map_err(AgentError::Control)?;
    Ok(payload)
}

pub trait StateSource {
    fn snapshot(&mut self) -> Result<ClusterState, AgentError>;
}

/// Reads the state file on every snapshot.
#[derive(Debug, Clone)]
pub struct FileSource {
    path: PathBuf,
}

impl FileSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl StateSource for FileSource {
    fn snapshot(&mut self) -> Result<ClusterState, AgentError> {
        let text = std::fs::read_to_string(&self.path).map_err(|e| {
            AgentError::SourceUnavailable(format!("{}: {e}", self.path.display()))
        })?;
        ClusterState::from_toml(&text)
    }
}

/// In-memory source, swapped by the owner (simulation, tests).
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    state: Option<ClusterState>,
}

impl MemorySource {
    pub fn new(state: ClusterState) -> Self {
        Self { state: Some(state) }
    }

    pub fn set(&mut self, state: Option<ClusterState>) {
        self.state = state;
    }
}

impl StateSource for MemorySource {
    fn snapshot(&mut self) -> Result<ClusterState, AgentError> {
        self.state
            .clone()
            .ok_or_else(|| AgentError::SourceUnavailable("no state set".into()))
    }
}

/// Where encoded control payloads go.
pub trait ControlSink {
    fn send(&mut self, payload: &[u8]) -> io::Result<()>;
}

/// Collects payloads in memory.
impl ControlSink for Vec<Vec<u8>> {
    fn send(&mut self, payload: &[u8]) -> io::Result<()> {
        self.push(payload.to_vec());
        Ok(())
    }
}

/// Sends each payload as one UDP datagram to the router's control port.
#[derive(Debug)]
pub struct UdpSink {
    socket: UdpSocket,
    endpoint: SocketAddr,
}

impl UdpSink {
    pub fn bind(endpoint: SocketAddr) -> io::Result<Self> {
        let socket = UdpSocket::bind(("0.0.0.0", 0))?;
        Ok(Self { socket, endpoint })
    }
}

impl ControlSink for UdpSink {
    fn send(&mut self, payload: &[u8]) -> io::Result<()> {
        self.socket.send_to(payload, self.endpoint).map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub state_source: PathBuf,
    pub poll_interval: Duration,
    pub control_port: u16,
    pub dataplane_addr: Ipv4Addr,
    pub max_replicas: usize,
}

impl AgentConfig {
    pub fn new(state_source: impl Into<PathBuf>) -> Self {
        Self {
            state_source: state_source.into(),
            poll_interval: DEFAULT_POLL_INTERVAL,
            control_port: DEFAULT_CONTROL_PORT,
            dataplane_addr: Ipv4Addr::LOCALHOST,
            max_replicas: DEFAULT_MAX_REPLICAS,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.poll_interval.is_zero() {
            return Err(AgentError::Config("poll interval must be positive".into()));
        }
        if self.control_port == 0 {
            return Err(AgentError::Config("control port must be nonzero".into()));
        }
        Ok(())
    }

    pub fn endpoint(&self) -> SocketAddr {
        SocketAddr::from((self.dataplane_addr, self.control_port))
    }
}

/// One control payload handed to the sink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emission {
    /// 1 for the startup packet, then one more per change.
    pub seq: u64,
    pub at: Duration,
    pub payload: ControlPayload,
    pub bytes: Vec<u8>,
}

/// Change detector plus sender, driven by an external clock.
#[derive(Debug)]
pub struct Agent<S, K> {
    source: S,
    sink: K,
    max_replicas: usize,
    last_sent: Option<ClusterState>,
    sent: u64,
}

impl<S: StateSource, K: ControlSink> Agent<S, K> {
    pub fn new(source: S, sink: K, max_replicas: usize) -> Self {
        Self {
            source,
            sink,
            max_replicas,
            last_sent: None,
            sent: 0,
        }
    }

    pub fn source_mut(&mut self) -> &mut S {
        &mut self.source
    }

    pub fn sink_mut(&mut self) -> &mut K {
        &mut self.sink
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    /// Initial snapshot and send. State errors are fatal here; a failed
    /// send is retried on the next poll.
    pub fn start(&mut self, now: Duration) -> Result<Option<Emission>, AgentError> {
        let state = self.source.snapshot()?;
        let payload = build_payload(&state, self.max_replicas)?;
        Ok(self.emit(state, payload, now))
    }

    /// Sends a fresh payload if the effective state differs from the last
    /// one delivered (or nothing was delivered yet).
    pub fn poll(&mut self, now: Duration) -> Result<Option<Emission>, AgentError> {
        let state = self.source.snapshot()?;
        if let Some(prev) = &self.last_sent {
            if diff(prev, &state) == ChangeSet::Unchanged {
                return Ok(None);
            }
        }
        let payload = build_payload(&state, self.max_replicas)?;
        Ok(self.emit(state, payload, now))
    }

    fn emit(&mut self, state: ClusterState, payload: ControlPayload, now: Duration) -> Option<Emission> {
        let bytes = encode_control(&payload, self.max_replicas).expect("payload validated");
        if let Err(e) = self.sink.send(&bytes) {
            warn!(error = %e, "control send failed; retrying next poll");
            return None;
        }
        self.sent += 1;
        self.last_sent = Some(state);
        info!(
            generation = self.sent,
            t_ms = now.as_millis() as u64,
            replicas = payload.replica_count(),
            bytes = bytes.len(),
            "control packet sent"
        );
        Some(Emission {
            seq: self.sent,
            at: now,
            payload,
            bytes,
        })
    }
}

/// Runs the agent against a state file, sending UDP datagrams to the
/// router. Returns only on a startup failure or after `max_polls` polls.
pub fn run_agent(config: &AgentConfig, max_polls: Option<u64>) -> Result<(), AgentError> {
    config.validate()?;
    let sink = UdpSink::bind(config.endpoint())?;
    let mut agent = Agent::new(
        FileSource::new(&config.state_source),
        sink,
        config.max_replicas,
    );
    let t0 = Instant::now();
    agent.start(t0.elapsed())?;
    let mut polls = 0u64;
    while max_polls.is_none_or(|m| polls < m) {
        std::thread::sleep(config.poll_interval);
        polls += 1;
        if let Err(e) = agent.poll(t0.elapsed()) {
            warn!(error = %e, "poll failed; retrying next interval");
        }
    }
    Ok(())
}
