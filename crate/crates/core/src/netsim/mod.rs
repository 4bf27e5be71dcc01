// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

//! Discrete-event network simulator.
//!
//! Frames are real byte buffers. The router node runs the same pipeline as
//! [`crate::dataplane::Router`], and the control-plane node runs an
//! [`crate::agent::Agent`] against an in-memory cluster state. Time is
//! virtual and advances only through the event queue, so a run is a pure
//! function of the topology, the scenario and the seed.

mod engine;
mod report;
mod scenario;
mod topology;

use std::net::Ipv4Addr;

use thiserror::Error;

pub use engine::{run_scenario, run_state_change_experiment};
pub use report::{export_report, ReportFormat, SimReport, StateChangeReport};
pub use scenario::{Mode, Scenario, ServiceSpec, StateChange};
pub use topology::{
    Attachment, LinkSpec, Network, NodeSpec, Role, Topology, CLIENT_ADDR, CONTROL_PLANE_ADDR,
    EXTERNAL_LB_ADDR, ROUTER_ADDR,
};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("address {0} assigned to more than one node")]
    DuplicateAddress(Ipv4Addr),
    #[error("node id `{0}` used more than once")]
    DuplicateNodeId(String),
    #[error("link references unknown node `{0}`")]
    UnknownNode(String),
    #[error("port {port} used twice on node `{node}`")]
    DuplicatePort { node: String, port: u16 },
    #[error("node `{0}` cannot reach the router")]
    DisconnectedRouter(String),
    #[error("expected exactly one router, found {0}")]
    RouterCount(usize),
    #[error("scenario needs a {0:?} node")]
    MissingRole(Role),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unsupported report format `{0}`")]
    UnsupportedFormat(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Builds and validates a network from a topology description.
pub fn build_topology(spec: &Topology) -> Result<Network, SimError> {
    Network::build(spec)
}

/// `Duration` as a float number of milliseconds.
pub(crate) mod millis {
    use std::time::Duration;

    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        Int(i64),
        Float(f64),
    }

    pub(crate) fn from_ms<E: Error>(v: f64) -> Result<Duration, E> {
        if !v.is_finite() || v < 0.0 {
            return Err(E::custom(format!("duration must be a non-negative number of ms, got {v}")));
        }
        Ok(Duration::from_secs_f64(v / 1e3))
    }

    pub(crate) fn read<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(match Num::deserialize(d)? {
            Num::Int(i) => i as f64,
            Num::Float(f) => f,
        })
    }

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        from_ms(read(d)?)
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
            match d {
                Some(d) => super::serialize(d, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
            super::deserialize(d).map(Some)
        }
    }
}
