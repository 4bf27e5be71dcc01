// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

//! Classic libpcap capture files with Ethernet link type.

use thiserror::Error;

pub const MAGIC: u32 = 0xA1B2_C3D4;
pub const LINKTYPE_ETHERNET: u32 = 1;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PcapError {
    #[error("not a pcap file (magic {0:#010x})")]
    BadMagic(u32),
    #[error("unsupported link type {0}")]
    UnsupportedLinkType(u32),
    #[error("truncated capture at byte {0}")]
    Truncated(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub ts_sec: u32,
    pub ts_usec: u32,
    /// Original length on the wire; may exceed `data.len()` when snapped.
    pub orig_len: u32,
    pub data: Vec<u8>,
}

/// Reads every record. Both byte orders of the magic are accepted.
pub fn read(bytes: &[u8]) -> Result<Vec<Record>, PcapError> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(PcapError::Truncated(bytes.len()));
    }
    let magic_le = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let le = match magic_le {
        MAGIC => true,
        m if m.swap_bytes() == MAGIC => false,
        m => return Err(PcapError::BadMagic(m)),
    };
    let word = |at: usize| -> u32 {
        let b: [u8; 4] = bytes[at..at + 4].try_into().unwrap();
        if le {
            u32::from_le_bytes(b)
        } else {
            u32::from_be_bytes(b)
        }
    };
    let linktype = word(20);
    if linktype != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinkType(linktype));
    }

    let mut out = Vec::new();
    let mut at = GLOBAL_HEADER_LEN;
    while at < bytes.len() {
        if bytes.len() - at < RECORD_HEADER_LEN {
            return Err(PcapError::Truncated(at));
        }
        let incl = word(at + 8) as usize;
        let start = at + RECORD_HEADER_LEN;
        if bytes.len() - start < incl {
            return Err(PcapError::Truncated(at));
        }
        out.push(Record {
            ts_sec: word(at),
            ts_usec: word(at + 4),
            orig_len: word(at + 12),
            data: bytes[start..start + incl].to_vec(),
        });
        at = start + incl;
    }
    Ok(out)
}

/// Writes a little-endian capture with microsecond timestamps.
pub fn write(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&65535u32.to_le_bytes());
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.ts_sec.to_le_bytes());
        out.extend_from_slice(&r.ts_usec.to_le_bytes());
        out.extend_from_slice(&(r.data.len() as u32).to_le_bytes());
        out.extend_from_slice(&r.orig_len.to_le_bytes());
        out.extend_from_slice(&r.data);
    }
    out
}
