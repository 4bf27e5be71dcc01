// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

//! Agent-to-router control payload.
//!
//! Carried as the payload of a UDP datagram addressed to the control port.
//! All multi-byte fields are big-endian:
//!
//! | offset | size | field                       |
//! |--------|------|-----------------------------|
//! | 0      | 2    | magic `0x5034`              |
//! | 2      | 1    | version `0x01`              |
//! | 3      | 1    | replica count `n`           |
//! | 4      | 2    | NodePort port               |
//! | 6      | 4    | virtual IPv4 address        |
//! | 10     | 2    | virtual TCP port            |
//! | 12     | 4·n  | replica node addresses      |
//!
//! A node hosting several replicas appears several times in the list, which
//! gives it a proportionally larger share of new flows.

use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::codec::{PacketHeaders, Transport};

pub const MAGIC: u16 = 0x5034;
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 12;
pub const DEFAULT_CONTROL_PORT: u16 = 7777;
pub const DEFAULT_MAX_REPLICAS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControlError {
    #[error("bad magic {found:#06x} at offset 0")]
    BadMagic { found: u16 },
    #[error("unsupported version {0} at offset 2")]
    UnsupportedVersion(u8),
    #[error("truncated control payload: need {needed} bytes, have {available}")]
    TruncatedControl { needed: usize, available: usize },
    #[error("{count} replicas exceeds the maximum of {max}")]
    TooManyReplicas { count: usize, max: usize },
    #[error("replica count {declared} disagrees with {actual} addresses present")]
    CountMismatch { declared: usize, actual: usize },
    #[error("invalid {field} at offset {offset}: {reason}")]
    InvalidField {
        field: &'static str,
        offset: usize,
        reason: &'static str,
    },
}

impl ControlError {
    /// Byte offset of the offending field.
    pub fn offset(&self) -> usize {
        match self {
            ControlError::BadMagic { .. } => 0,
            ControlError::UnsupportedVersion(_) => 2,
            ControlError::TooManyReplicas { .. } => 3,
            ControlError::TruncatedControl { available, .. } => *available,
            ControlError::CountMismatch { .. } => 3,
            ControlError::InvalidField { offset, .. } => *offset,
        }
    }

    /// Name of the offending field.
    pub fn field(&self) -> &'static str {
        match self {
            ControlError::BadMagic { .. } => "magic",
            ControlError::UnsupportedVersion(_) => "version",
            ControlError::TooManyReplicas { .. } | ControlError::CountMismatch { .. } => {
                "replica_count"
            }
            ControlError::TruncatedControl { .. } => "replica_addrs",
            ControlError::InvalidField { field, .. } => field,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ControlPayload {
    pub nodeport_port: u16,
    pub virtual_addr: Ipv4Addr,
    pub virtual_port: u16,
    /// One entry per replica, duplicates preserved in order.
    pub replica_addrs: Vec<Ipv4Addr>,
}

impl ControlPayload {
    pub fn replica_count(&self) -> usize {
        self.replica_addrs.len()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 4 * self.replica_addrs.len()
    }

    pub fn validate(&self, max_replicas: usize) -> Result<(), ControlError> {
        let count = self.replica_addrs.len();
        // The count travels in one byte, so the hard ceiling is 255.
        if count > max_replicas || count > usize::from(u8::MAX) {
            return Err(ControlError::TooManyReplicas {
                count,
                max: max_replicas.min(usize::from(u8::MAX)),
            });
        }
        if count == 0 {
            return Err(ControlError::InvalidField {
                field: "replica_count",
                offset: 3,
                reason: "must be at least 1",
            });
        }
        if self.nodeport_port == 0 {
            return Err(ControlError::InvalidField {
                field: "nodeport_port",
                offset: 4,
                reason: "must be nonzero",
            });
        }
        if self.virtual_port == 0 {
            return Err(ControlError::InvalidField {
                field: "virtual_port",
                offset: 10,
                reason: "must be nonzero",
            });
        }
        Ok(())
    }
}

impl fmt::Display for ControlPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {}", "nodeport_port", self.nodeport_port)?;
        writeln!(f, "{:<14} {}", "replica_count", self.replica_count())?;
        writeln!(f, "{:<14} {}", "virtual_addr", self.virtual_addr)?;
        writeln!(f, "{:<14} {}", "virtual_port", self.virtual_port)?;
        for (i, a) in self.replica_addrs.iter().enumerate() {
            writeln!(f, "{:<14} {}", format!("replica[{i}]"), a)?;
        }
        Ok(())
    }
}

pub fn encode_control(payload: &ControlPayload, max_replicas: usize) -> Result<Vec<u8>, ControlError> {
    payload.validate(max_replicas)?;
    let mut out = Vec::with_capacity(payload.encoded_len());
    out.extend_from_slice(&MAGIC.to_be_bytes());
    out.push(VERSION);
    out.push(payload.replica_addrs.len() as u8);
    out.extend_from_slice(&payload.nodeport_port.to_be_bytes());
    out.extend_from_slice(&payload.virtual_addr.octets());
    out.extend_from_slice(&payload.virtual_port.to_be_bytes());
    for a in &payload.replica_addrs {
        out.extend_from_slice(&a.octets());
    }
    Ok(out)
}

pub fn decode_control(bytes: &[u8], max_replicas: usize) -> Result<ControlPayload, ControlError> {
    if bytes.len() < 2 {
        return Err(ControlError::TruncatedControl {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let magic = u16::from_be_bytes([bytes[0], bytes[1]]);
    if magic != MAGIC {
        return Err(ControlError::BadMagic { found: magic });
    }
    if bytes.len() < HEADER_LEN {
        return Err(ControlError::TruncatedControl {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    if bytes[2] != VERSION {
        return Err(ControlError::UnsupportedVersion(bytes[2]));
    }
    let count = usize::from(bytes[3]);
    if count > max_replicas {
        return Err(ControlError::TooManyReplicas {
            count,
            max: max_replicas,
        });
    }
    let needed = HEADER_LEN + 4 * count;
    if bytes.len() < needed {
        return Err(ControlError::TruncatedControl {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        let extra = bytes.len() - HEADER_LEN;
        return Err(ControlError::CountMismatch {
            declared: count,
            actual: extra.div_ceil(4),
        });
    }
    let addr = |at: usize| Ipv4Addr::new(bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]);
    let payload = ControlPayload {
        nodeport_port: u16::from_be_bytes([bytes[4], bytes[5]]),
        virtual_addr: addr(6),
        virtual_port: u16::from_be_bytes([bytes[10], bytes[11]]),
        replica_addrs: (0..count).map(|i| addr(HEADER_LEN + 4 * i)).collect(),
    };
    payload.validate(max_replicas)?;
    Ok(payload)
}

/// True iff the packet is UDP addressed to `control_port`.
pub fn is_control(headers: &PacketHeaders, control_port: u16) -> bool {
    matches!(&headers.transport, Some(Transport::Udp(u)) if u.dst_port == control_port)
}

/// Wraps an encoded payload into a complete Ethernet/IPv4/UDP control frame
/// with valid checksums.
pub fn control_frame(
    payload: &[u8],
    src: Ipv4Addr,
    dst: Ipv4Addr,
    src_port: u16,
    control_port: u16,
) -> Vec<u8> {
    let h = PacketHeaders::udp((src, src_port), (dst, control_port), payload.to_vec());
    crate::codec::deparse(&h).expect("builder output is consistent")
}
