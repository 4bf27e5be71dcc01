// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

use std::net::Ipv4Addr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{millis, SimError};
use crate::agent::{ClusterState, PodPhase, Replica, DEFAULT_POLL_INTERVAL};
use crate::control::{DEFAULT_CONTROL_PORT, DEFAULT_MAX_REPLICAS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Clients address the virtual IP; the router picks a replica.
    InNetwork,
    /// Clients address a NodePort on the control-plane node, which
    /// DNATs and SNATs to a worker.
    NodePort,
    /// Clients address an external proxying balancer beside the cluster.
    ExternalLb,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::InNetwork => "in_network",
            Mode::NodePort => "node_port",
            Mode::ExternalLb => "external_lb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSpec {
    pub name: String,
    pub virtual_addr: Ipv4Addr,
    pub virtual_port: u16,
    pub nodeport_port: u16,
}

impl Default for ServiceSpec {
    fn default() -> Self {
        Self {
            name: "web".into(),
            virtual_addr: Ipv4Addr::new(192, 0, 2, 10),
            virtual_port: 80,
            nodeport_port: 30080,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateChange {
    #[serde(rename = "at_ms", with = "millis")]
    pub at: Duration,
    /// Worker id per running pod after the change.
    pub pods: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub mode: Mode,
    pub seed: u64,
    /// Sessions open at the same time.
    pub concurrency: usize,
    pub total_requests: u64,
    pub requests_per_session: u32,
    /// Overrides every link latency when set.
    #[serde(
        rename = "per_hop_latency_ms",
        with = "millis::opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub per_hop_latency: Option<Duration>,
    #[serde(rename = "router_delay_ms", with = "millis")]
    pub router_delay: Duration,
    #[serde(rename = "control_plane_delay_ms", with = "millis")]
    pub control_plane_delay: Duration,
    #[serde(rename = "lb_delay_ms", with = "millis")]
    pub lb_delay: Duration,
    /// Extra cost paid by the external balancer on each new connection.
    #[serde(rename = "lb_setup_latency_ms", with = "millis")]
    pub lb_setup_latency: Duration,
    #[serde(rename = "service_time_ms", with = "millis")]
    pub service_time: Duration,
    #[serde(rename = "think_time_ms", with = "millis")]
    pub think_time: Duration,
    #[serde(rename = "request_timeout_ms", with = "millis")]
    pub request_timeout: Duration,
    #[serde(rename = "poll_interval_ms", with = "millis")]
    pub poll_interval: Duration,
    /// Virtual time of the agent's first snapshot.
    #[serde(rename = "agent_start_ms", with = "millis")]
    pub agent_start: Duration,
    /// The run is cut off at this virtual time.
    #[serde(rename = "horizon_ms", with = "millis")]
    pub horizon: Duration,
    pub control_port: u16,
    pub max_replicas: usize,
    pub service: ServiceSpec,
    /// Worker id per running pod. Empty means one pod on every worker.
    pub pods: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub change: Option<StateChange>,
}

pub const EVAL_HOP_LATENCY: Duration = Duration::from_micros(100);
pub const EVAL_NODE_DELAY: Duration = Duration::from_micros(500);
pub const EVAL_SERVICE_TIME: Duration = Duration::from_millis(2);
pub const EVAL_LB_SETUP: Duration = Duration::from_millis(45);

impl Default for Scenario {
    fn default() -> Self {
        Self {
            mode: Mode::InNetwork,
            seed: 1,
            concurrency: 10,
            total_requests: 100,
            requests_per_session: 1,
            per_hop_latency: None,
            router_delay: EVAL_NODE_DELAY,
            control_plane_delay: EVAL_NODE_DELAY,
            lb_delay: Duration::ZERO,
            lb_setup_latency: EVAL_LB_SETUP,
            service_time: EVAL_SERVICE_TIME,
            think_time: Duration::ZERO,
            request_timeout: Duration::from_secs(1),
            poll_interval: DEFAULT_POLL_INTERVAL,
            agent_start: Duration::ZERO,
            horizon: Duration::from_secs(3600),
            control_port: DEFAULT_CONTROL_PORT,
            max_replicas: DEFAULT_MAX_REPLICAS,
            service: ServiceSpec::default(),
            pods: Vec::new(),
            change: None,
        }
    }
}

impl Scenario {
    /// Evaluation defaults for `mode`: 0.1 ms per hop, 0.5 ms per forwarding
    /// node, 2 ms of service time.
    pub fn evaluation(mode: Mode) -> Self {
        Self {
            mode,
            per_hop_latency: Some(EVAL_HOP_LATENCY),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: Self = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.into()));
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1");
        }
        if self.total_requests > 0 && self.total_requests < self.concurrency as u64 {
            return bad("total_requests must be at least concurrency");
        }
        if self.requests_per_session == 0 {
            return bad("requests_per_session must be at least 1");
        }
        if self.poll_interval.is_zero() {
            return bad("poll_interval_ms must be positive");
        }
        if self.request_timeout.is_zero() {
            return bad("request_timeout_ms must be positive");
        }
        if self.control_port == 0 || self.service.virtual_port == 0 || self.service.nodeport_port == 0 {
            return bad("ports must be nonzero");
        }
        if self.max_replicas == 0 {
            return bad("max_replicas must be at least 1");
        }
        Ok(())
    }

    pub fn total_sessions(&self) -> u64 {
        self.total_requests.div_ceil(u64::from(self.requests_per_session))
    }

    /// Cluster state with one Running pod per entry of `pods`.
    pub(crate) fn cluster_state(&self, pod_addrs: &[Ipv4Addr]) -> ClusterState {
        ClusterState {
            service_name: self.service.name.clone(),
            virtual_addr: self.service.virtual_addr,
            virtual_port: self.service.virtual_port,
            nodeport_port: self.service.nodeport_port,
            replicas: pod_addrs
                .iter()
                .enumerate()
                .map(|(i, &node_addr)| Replica {
                    pod_id: format!("{}-{i}", self.service.name),
                    node_addr,
                    phase: PodPhase::Running,
                })
                .collect(),
        }
    }
}
