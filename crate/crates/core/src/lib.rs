// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

//! In-network L4 load balancer for an orchestrated cluster.
//!
//! A router pipeline parses each frame, recognises control datagrams from the
//! cluster agent and stores the replica list they carry in its registers,
//! then steers client flows addressed to the service's virtual address onto
//! worker nodes by CRC16 ECMP hashing, rewriting addresses and ports in both
//! directions. The crate also contains the agent that produces the control
//! datagrams and a discrete-event simulator used to evaluate the whole loop.
//!
//! - [`codec`]: Ethernet/IPv4/TCP/UDP parsing, serialization, checksums, CRC16.
//! - [`control`]: the agent-to-router control payload.
//! - [`dataplane`]: registers, classification, ECMP, rewriting, LPM forwarding.
//! - [`agent`]: cluster-state observation and control emission.
//! - [`netsim`]: topology, workloads and reports.

pub mod agent;
pub mod codec;
pub mod control;
pub mod dataplane;
pub mod netsim;

pub use codec::{deparse, parse_packet, PacketHeaders};
pub use control::{decode_control, encode_control, ControlPayload, DEFAULT_CONTROL_PORT,
    DEFAULT_MAX_REPLICAS};
pub use dataplane::{FlowKey, LpmTable, ReplicaRegistry, Router, TrafficClass};
pub use netsim::{build_topology, export_report, run_scenario, run_state_change_experiment,
    Scenario, SimReport, Topology};
