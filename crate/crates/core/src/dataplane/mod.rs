// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

//! Router pipeline.
//!
//! Each frame goes through parse, checksum verification, ingress (control
//! register load, classification, ECMP selection, rewriting, LPM), checksum
//! computation and deparse. Flow affinity comes from hashing fields that are
//! constant for the life of a TCP connection; no per-flow state is kept, so
//! a change of the replica list remaps flows whose `hash mod count` moves.

mod lpm;
mod registry;

use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

pub use lpm::{parse_routes, LpmTable, Route, RouteFileError};
pub use registry::ReplicaRegistry;

use crate::codec::{self, crc16, CodecError, PacketHeaders, Transport};
use crate::control::{self, ControlError, DEFAULT_CONTROL_PORT};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataplaneError {
    #[error("{count} replicas exceeds register capacity {max}")]
    TooManyReplicas { count: usize, max: usize },
    #[error("no replicas installed")]
    NoReplicas,
    #[error("invalid prefix {prefix}/{prefix_len}: {reason}")]
    InvalidPrefix {
        prefix: Ipv4Addr,
        prefix_len: u8,
        reason: &'static str,
    },
    #[error("no route to {0}")]
    NoRoute(Ipv4Addr),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Transport 5-tuple hashed for ECMP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub protocol: u8,
    pub src_port: u16,
    pub dst_port: u16,
}

impl FlowKey {
    pub const WIRE_LEN: usize = 13;

    pub fn from_headers(headers: &PacketHeaders) -> Option<Self> {
        let ip = headers.ipv4.as_ref()?;
        let (src_port, dst_port) = match headers.transport.as_ref()? {
            Transport::Tcp(t) => (t.src_port, t.dst_port),
            Transport::Udp(u) => (u.src_port, u.dst_port),
        };
        Some(Self {
            src_addr: ip.src_addr,
            dst_addr: ip.dst_addr,
            protocol: ip.protocol,
            src_port,
            dst_port,
        })
    }

    /// Big-endian src addr, dst addr, protocol, src port, dst port.
    pub fn to_bytes(&self) -> [u8; Self::WIRE_LEN] {
        let mut b = [0u8; Self::WIRE_LEN];
        b[0..4].copy_from_slice(&self.src_addr.octets());
        b[4..8].copy_from_slice(&self.dst_addr.octets());
        b[8] = self.protocol;
        b[9..11].copy_from_slice(&self.src_port.to_be_bytes());
        b[11..13].copy_from_slice(&self.dst_port.to_be_bytes());
        b
    }

    pub fn hash(&self) -> u16 {
        crc16(&self.to_bytes())
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{} -> {}:{} proto {}",
            self.src_addr, self.src_port, self.dst_addr, self.dst_port, self.protocol
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrafficClass {
    Control,
    /// Client to the service's virtual address and port.
    Incoming,
    /// Everything else that is IPv4: routed untouched.
    Internal,
    /// Worker reply from the NodePort port back to a client.
    Outgoing,
    NonIp,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 5] = [
        TrafficClass::Control,
        TrafficClass::Incoming,
        TrafficClass::Internal,
        TrafficClass::Outgoing,
        TrafficClass::NonIp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrafficClass::Control => "control",
            TrafficClass::Incoming => "incoming",
            TrafficClass::Internal => "internal",
            TrafficClass::Outgoing => "outgoing",
            TrafficClass::NonIp => "non_ip",
        }
    }
}

pub fn classify(headers: &PacketHeaders, registry: &ReplicaRegistry, control_port: u16) -> TrafficClass {
    if control::is_control(headers, control_port) {
        return TrafficClass::Control;
    }
    let Some(ip) = &headers.ipv4 else {
        return TrafficClass::NonIp;
    };
    if let (Some(vip), Some(tcp)) = (registry.virtual_addr(), headers.tcp_header()) {
        if ip.dst_addr == vip && tcp.dst_port == registry.virtual_port() {
            return TrafficClass::Incoming;
        }
        if tcp.src_port == registry.nodeport_port() && registry.is_known_worker(ip.src_addr) {
            return TrafficClass::Outgoing;
        }
    }
    TrafficClass::Internal
}

/// Picks the replica slot for `key`: `crc16(key) mod replica_count`.
pub fn ecmp_select(key: &FlowKey, registry: &ReplicaRegistry) -> Result<(usize, Ipv4Addr), DataplaneError> {
    let replicas = registry.replicas();
    if replicas.is_empty() {
        return Err(DataplaneError::NoReplicas);
    }
    let index = usize::from(key.hash()) % replicas.len();
    Ok((index, replicas[index]))
}

/// Destination NAT towards the selected node: virtual address becomes the
/// node address, virtual port becomes the NodePort port.
pub fn rewrite_incoming(headers: &PacketHeaders, node_addr: Ipv4Addr, registry: &ReplicaRegistry) -> PacketHeaders {
    let mut out = headers.clone();
    if let Some(ip) = out.ipv4.as_mut() {
        ip.dst_addr = node_addr;
    }
    if let Some(Transport::Tcp(tcp)) = out.transport.as_mut() {
        tcp.dst_port = registry.nodeport_port();
    }
    out.refresh_checksums();
    out
}

/// Source NAT on replies: the worker address and NodePort port are replaced
/// with the virtual address and port the client connected to.
pub fn rewrite_outgoing(headers: &PacketHeaders, registry: &ReplicaRegistry) -> PacketHeaders {
    let mut out = headers.clone();
    if let (Some(ip), Some(vip)) = (out.ipv4.as_mut(), registry.virtual_addr()) {
        ip.src_addr = vip;
    }
    if let Some(Transport::Tcp(tcp)) = out.transport.as_mut() {
        tcp.src_port = registry.virtual_port();
    }
    out.refresh_checksums();
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DropReason {
    Unparseable(CodecError),
    BadChecksum,
    NonIp,
    NoRoute,
    NoReplicas,
    TtlExpired,
    TooManyReplicas,
    BadControl(ControlError),
}

impl DropReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::Unparseable(_) => "unparseable",
            DropReason::BadChecksum => "bad_checksum",
            DropReason::NonIp => "non_ip",
            DropReason::NoRoute => "no_route",
            DropReason::NoReplicas => "no_replicas",
            DropReason::TtlExpired => "ttl_expired",
            DropReason::TooManyReplicas => "too_many_replicas",
            DropReason::BadControl(_) => "bad_control",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::Unparseable(e) => write!(f, "unparseable: {e}"),
            DropReason::BadControl(e) => write!(f, "bad control payload: {e}"),
            other => f.write_str(other.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Forward { egress_port: u16, next_hop: Ipv4Addr },
    Drop(DropReason),
    ConsumedControl { generation: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardingDecision {
    /// `None` when the packet was dropped before classification.
    pub class: Option<TrafficClass>,
    pub action: Action,
    /// Replica slot and node chosen for incoming traffic.
    pub selected: Option<(usize, Ipv4Addr)>,
    /// Outgoing headers, present exactly for `Forward`.
    pub rewritten: Option<PacketHeaders>,
}

impl ForwardingDecision {
    fn drop(class: Option<TrafficClass>, reason: DropReason) -> Self {
        Self {
            class,
            action: Action::Drop(reason),
            selected: None,
            rewritten: None,
        }
    }

    pub fn is_forward(&self) -> bool {
        matches!(self.action, Action::Forward { .. })
    }
}

/// Runs one parsed packet through the ingress pipeline.
///
/// Forwarded packets leave with TTL decremented and every checksum valid.
/// A packet arriving with TTL 0 or 1 is dropped.
pub fn process(
    headers: &PacketHeaders,
    registry: &mut ReplicaRegistry,
    table: &LpmTable,
    control_port: u16,
) -> ForwardingDecision {
    if !headers.checksums_valid() {
        return ForwardingDecision::drop(None, DropReason::BadChecksum);
    }
    let class = classify(headers, registry, control_port);
    let mut selected = None;
    let mut out = match class {
        TrafficClass::NonIp => return ForwardingDecision::drop(Some(class), DropReason::NonIp),
        TrafficClass::Control => {
            let result = control::decode_control(&headers.payload, registry.capacity())
                .map_err(DataplaneError::from)
                .and_then(|p| registry.apply_control(&p));
            return match result {
                Ok(generation) => ForwardingDecision {
                    class: Some(class),
                    action: Action::ConsumedControl { generation },
                    selected: None,
                    rewritten: None,
                },
                Err(
                    DataplaneError::TooManyReplicas { .. }
                    | DataplaneError::Control(ControlError::TooManyReplicas { .. }),
                ) => ForwardingDecision::drop(Some(class), DropReason::TooManyReplicas),
                Err(DataplaneError::Control(e)) => {
                    ForwardingDecision::drop(Some(class), DropReason::BadControl(e))
                }
                Err(e) => unreachable!("apply_control cannot fail with {e}"),
            };
        }
        TrafficClass::Incoming => {
            let key = FlowKey::from_headers(headers).expect("incoming packets are tcp over ipv4");
            match ecmp_select(&key, registry) {
                Ok(sel) => {
                    selected = Some(sel);
                    rewrite_incoming(headers, sel.1, registry)
                }
                Err(_) => return ForwardingDecision::drop(Some(class), DropReason::NoReplicas),
            }
        }
        TrafficClass::Outgoing => rewrite_outgoing(headers, registry),
        TrafficClass::Internal => headers.clone(),
    };

    let ip = out.ipv4.as_mut().expect("ip classes carry an ipv4 header");
    if ip.ttl <= 1 {
        return ForwardingDecision::drop(Some(class), DropReason::TtlExpired);
    }
    let route = match table.lookup(ip.dst_addr) {
        Ok(r) => r,
        Err(_) => return ForwardingDecision::drop(Some(class), DropReason::NoRoute),
    };
    ip.ttl -= 1;
    ip.header_checksum = codec::ipv4_checksum(ip);

    ForwardingDecision {
        class: Some(class),
        action: Action::Forward {
            egress_port: route.egress_port,
            next_hop: route.next_hop,
        },
        selected,
        rewritten: Some(out),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouterStats {
    pub by_class: [u64; 5],
    pub forwarded: u64,
    pub dropped: u64,
    pub control_applied: u64,
}

impl RouterStats {
    pub fn class_count(&self, class: TrafficClass) -> u64 {
        self.by_class[class as usize]
    }
}

/// A pipeline instance: registers, forwarding table and counters.
#[derive(Debug, Clone)]
pub struct Router {
    pub registry: ReplicaRegistry,
    pub routes: LpmTable,
    pub control_port: u16,
    stats: RouterStats,
}

impl Router {
    pub fn new(registry: ReplicaRegistry, routes: LpmTable, control_port: u16) -> Self {
        Self {
            registry,
            routes,
            control_port,
            stats: RouterStats::default(),
        }
    }

    pub fn with_routes(routes: LpmTable) -> Self {
        Self::new(ReplicaRegistry::default(), routes, DEFAULT_CONTROL_PORT)
    }

    pub fn stats(&self) -> &RouterStats {
        &self.stats
    }

    pub fn process(&mut self, headers: &PacketHeaders) -> ForwardingDecision {
        let d = process(headers, &mut self.registry, &self.routes, self.control_port);
        if let Some(c) = d.class {
            self.stats.by_class[c as usize] += 1;
        }
        match d.action {
            Action::Forward { .. } => self.stats.forwarded += 1,
            Action::Drop(_) => self.stats.dropped += 1,
            Action::ConsumedControl { .. } => self.stats.control_applied += 1,
        }
        d
    }

    /// Parses, processes and re-serializes one frame. The returned bytes are
    /// present exactly when the decision is `Forward`.
    pub fn process_frame(&mut self, frame: &[u8]) -> (ForwardingDecision, Option<Vec<u8>>) {
        let headers = match codec::parse_packet(frame) {
            Ok(h) => h,
            Err(e) => {
                self.stats.dropped += 1;
                return (ForwardingDecision::drop(None, DropReason::Unparseable(e)), None);
            }
        };
        let d = self.process(&headers);
        let bytes = d
            .rewritten
            .as_ref()
            .map(|h| codec::deparse(h).expect("pipeline preserves header consistency"));
        (d, bytes)
    }
}
