// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use serde::Serialize;

use super::DataplaneError;
use crate::control::{ControlPayload, DEFAULT_MAX_REPLICAS};

/// Router registers holding the current service state.
///
/// The first `replica_count()` slots form the active list used for ECMP.
/// `known_workers` only grows: it is the union of every replica list ever
/// installed, so replies from a node that was just scaled away are still
/// translated back to the virtual address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplicaRegistry {
    capacity: usize,
    generation: u64,
    nodeport_port: u16,
    virtual_addr: Option<Ipv4Addr>,
    virtual_port: u16,
    replica_addrs: Vec<Ipv4Addr>,
    known_workers: BTreeSet<Ipv4Addr>,
}

impl Default for ReplicaRegistry {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_REPLICAS)
    }
}

impl ReplicaRegistry {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            generation: 0,
            nodeport_port: 0,
            virtual_addr: None,
            virtual_port: 0,
            replica_addrs: Vec::with_capacity(capacity),
            known_workers: BTreeSet::new(),
        }
    }

    /// A registry that knows the service identity but has no replicas yet.
    /// Traffic to the virtual address is classified as incoming and dropped
    /// for lack of replicas until the first control payload arrives.
    pub fn with_service(
        capacity: usize,
        virtual_addr: Ipv4Addr,
        virtual_port: u16,
        nodeport_port: u16,
    ) -> Self {
        Self {
            virtual_addr: Some(virtual_addr),
            virtual_port,
            nodeport_port,
            ..Self::new(capacity)
        }
    }

    /// Overwrites the registers with `payload` and bumps the generation.
    /// Nothing is modified when the payload is rejected.
    pub fn apply_control(&mut self, payload: &ControlPayload) -> Result<u64, DataplaneError> {
        let count = payload.replica_addrs.len();
        if count > self.capacity {
            return Err(DataplaneError::TooManyReplicas {
                count,
                max: self.capacity,
            });
        }
        payload.validate(self.capacity)?;

        self.nodeport_port = payload.nodeport_port;
        self.virtual_addr = Some(payload.virtual_addr);
        self.virtual_port = payload.virtual_port;
        self.replica_addrs.clear();
        self.replica_addrs.extend_from_slice(&payload.replica_addrs);
        self.known_workers.extend(payload.replica_addrs.iter().copied());
        self.generation += 1;
        Ok(self.generation)
    }

    /// True once the service identity is known.
    pub fn is_initialized(&self) -> bool {
        self.virtual_addr.is_some()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn replica_count(&self) -> usize {
        self.replica_addrs.len()
    }

    pub fn replicas(&self) -> &[Ipv4Addr] {
        &self.replica_addrs
    }

    pub fn nodeport_port(&self) -> u16 {
        self.nodeport_port
    }

    pub fn virtual_addr(&self) -> Option<Ipv4Addr> {
        self.virtual_addr
    }

    pub fn virtual_port(&self) -> u16 {
        self.virtual_port
    }

    pub fn is_known_worker(&self, addr: Ipv4Addr) -> bool {
        self.known_workers.contains(&addr)
    }

    pub fn known_workers(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.known_workers.iter().copied()
    }

    /// Structured text dump of the registers.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("registry serializes")
    }
}
