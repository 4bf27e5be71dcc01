// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

//! Independent oracles and generators shared by the integration tests.
//! Nothing here calls into the library's codec, checksum or hash code.

#![allow(dead_code)]

use std::net::Ipv4Addr;

use proptest::prelude::*;

/// CRC-16/ARC, one bit at a time over a shift register.
pub fn crc16_bitwise(data: &[u8]) -> u16 {
    let mut reg: u16 = 0;
    for &byte in data {
        for bit in 0..8 {
            let inbit = (byte >> bit) & 1;
            let top = (reg & 1) as u8;
            reg >>= 1;
            if top ^ inbit == 1 {
                reg ^= 0xA001;
            }
        }
    }
    reg
}

/// Plain 32-bit one's-complement sum over big-endian words.
pub fn ones_sum(data: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    let mut i = 0;
    while i < data.len() {
        let hi = u32::from(data[i]) << 8;
        let lo = data.get(i + 1).map_or(0, |&b| u32::from(b));
        sum += hi | lo;
        i += 2;
    }
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    sum as u16
}

pub fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

pub fn put16(b: &mut [u8], at: usize, v: u16) {
    b[at..at + 2].copy_from_slice(&v.to_be_bytes());
}

/// Recomputes the IPv4 header checksum of an Ethernet frame in place.
pub fn fix_ip_checksum(f: &mut [u8]) {
    let ihl = usize::from(f[14] & 0x0F) * 4;
    put16(f, 24, 0);
    let c = !ones_sum(&f[14..14 + ihl]);
    put16(f, 24, c);
}

/// Recomputes the TCP or UDP checksum of an Ethernet/IPv4 frame in place.
pub fn fix_l4_checksum(f: &mut [u8]) {
    let ihl = usize::from(f[14] & 0x0F) * 4;
    let total = usize::from(be16(f, 16));
    let l4 = 14 + ihl;
    let end = 14 + total;
    let proto = f[23];
    let off = if proto == 6 { 16 } else { 6 };
    put16(f, l4 + off, 0);
    let mut pseudo = Vec::new();
    pseudo.extend_from_slice(&f[26..34]);
    pseudo.push(0);
    pseudo.push(proto);
    pseudo.extend_from_slice(&((end - l4) as u16).to_be_bytes());
    pseudo.extend_from_slice(&f[l4..end]);
    let mut c = !ones_sum(&pseudo);
    if proto == 17 && c == 0 {
        c = 0xFFFF;
    }
    put16(f, l4 + off, c);
}

/// Builds an Ethernet/IPv4/TCP frame byte by byte with valid checksums.
#[allow(clippy::too_many_arguments)]
pub fn raw_tcp(
    src: Ipv4Addr,
    sport: u16,
    dst: Ipv4Addr,
    dport: u16,
    ttl: u8,
    flags: u8,
    ip_opts: &[u8],
    tcp_opts: &[u8],
    payload: &[u8],
) -> Vec<u8> {
    assert!(ip_opts.len() % 4 == 0 && tcp_opts.len() % 4 == 0);
    let mut f = vec![0x02, 0, 0, 0, 0, 1, 0x02, 0, 0, 0, 0, 2, 0x08, 0x00];
    let ihl = 20 + ip_opts.len();
    let thl = 20 + tcp_opts.len();
    let total = ihl + thl + payload.len();
    f.push(0x40 | (ihl / 4) as u8);
    f.push(0);
    f.extend_from_slice(&(total as u16).to_be_bytes());
    f.extend_from_slice(&[0x12, 0x34, 0x40, 0x00, ttl, 6, 0, 0]);
    f.extend_from_slice(&src.octets());
    f.extend_from_slice(&dst.octets());
    f.extend_from_slice(ip_opts);
    f.extend_from_slice(&sport.to_be_bytes());
    f.extend_from_slice(&dport.to_be_bytes());
    f.extend_from_slice(&[0, 0, 0, 1, 0, 0, 0, 0]);
    f.push(((thl / 4) as u8) << 4);
    f.push(flags);
    f.extend_from_slice(&[0xFF, 0xFF, 0, 0, 0, 0]);
    f.extend_from_slice(tcp_opts);
    f.extend_from_slice(payload);
    fix_ip_checksum(&mut f);
    fix_l4_checksum(&mut f);
    f
}

/// Builds an Ethernet/IPv4/UDP frame byte by byte with valid checksums.
pub fn raw_udp(src: Ipv4Addr, sport: u16, dst: Ipv4Addr, dport: u16, payload: &[u8]) -> Vec<u8> {
    let mut f = vec![0x02, 0, 0, 0, 0, 1, 0x02, 0, 0, 0, 0, 2, 0x08, 0x00];
    let total = 28 + payload.len();
    f.extend_from_slice(&[0x45, 0]);
    f.extend_from_slice(&(total as u16).to_be_bytes());
    f.extend_from_slice(&[0, 0, 0x40, 0, 64, 17, 0, 0]);
    f.extend_from_slice(&src.octets());
    f.extend_from_slice(&dst.octets());
    f.extend_from_slice(&sport.to_be_bytes());
    f.extend_from_slice(&dport.to_be_bytes());
    f.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
    f.extend_from_slice(&[0, 0]);
    f.extend_from_slice(payload);
    fix_ip_checksum(&mut f);
    fix_l4_checksum(&mut f);
    f
}

pub fn addr_strategy() -> impl Strategy<Value = Ipv4Addr> {
    any::<u32>().prop_map(Ipv4Addr::from)
}

fn opts() -> impl Strategy<Value = Vec<u8>> {
    (0usize..=3).prop_flat_map(|words| prop::collection::vec(any::<u8>(), words * 4))
}

/// Valid frames: TCP or UDP over IPv4 with options, optional Ethernet
/// padding, or an ARP-like non-IP frame.
pub fn frame_strategy() -> impl Strategy<Value = Vec<u8>> {
    let tcp = (
        addr_strategy(),
        any::<u16>(),
        addr_strategy(),
        any::<u16>(),
        2u8..=255,
        any::<u8>(),
        opts(),
        opts(),
        prop::collection::vec(any::<u8>(), 0..80),
        prop::collection::vec(Just(0u8), 0..8),
    )
        .prop_map(|(s, sp, d, dp, ttl, fl, io, to, pl, pad)| {
            let mut f = raw_tcp(s, sp, d, dp, ttl, fl, &io, &to, &pl);
            f.extend_from_slice(&pad);
            f
        });
    let udp = (
        addr_strategy(),
        any::<u16>(),
        addr_strategy(),
        any::<u16>(),
        prop::collection::vec(any::<u8>(), 0..80),
    )
        .prop_map(|(s, sp, d, dp, pl)| raw_udp(s, sp, d, dp, &pl));
    let arp = prop::collection::vec(any::<u8>(), 28..=28).prop_map(|body| {
        let mut f = vec![0xFF; 6];
        f.extend_from_slice(&[0x02, 0, 0, 0, 0, 9, 0x08, 0x06]);
        f.extend_from_slice(&body);
        f
    });
    prop_oneof![4 => tcp, 3 => udp, 1 => arp]
}

/// Pearson chi-square statistic against a uniform expectation.
pub fn chi_square(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

/// 0.001 critical value of the chi-square distribution with 9 d.o.f.
pub const CHI2_9DOF_P001: f64 = 27.877;

/// Service state as seen by the straight-line pipeline oracle.
pub struct OracleRegistry {
    pub vip: Ipv4Addr,
    pub vport: u16,
    pub nodeport: u16,
    pub replicas: Vec<Ipv4Addr>,
    pub known: Vec<Ipv4Addr>,
}

#[derive(Debug, PartialEq, Eq)]
pub struct OracleOut {
    pub class: &'static str,
    pub selected: Option<Ipv4Addr>,
    /// `Ok((egress port, bytes))` or `Err(drop reason)`.
    pub result: Result<(u16, Vec<u8>), &'static str>,
}

/// Route table used with the oracle: workers on port 2, default on port 1.
pub const ORACLE_ROUTES: &str = "0.0.0.0/0 192.0.2.254 1\n10.0.1.0/24 10.0.1.254 2\n";

fn oracle_route(dst: [u8; 4]) -> u16 {
    if dst[..3] == [10, 0, 1] {
        2
    } else {
        1
    }
}

/// Re-derives the pipeline for an Ethernet/IPv4/TCP frame without IP
/// options, working directly on byte offsets.
pub fn oracle_process(f: &[u8], reg: &OracleRegistry) -> OracleOut {
    let drop = |class, reason| OracleOut {
        class,
        selected: None,
        result: Err(reason),
    };
    assert_eq!(be16(f, 12), 0x0800);
    assert_eq!(f[14], 0x45);
    assert_eq!(f[23], 6);
    if ones_sum(&f[14..34]) != 0xFFFF {
        return drop("", "bad_checksum");
    }
    let src: [u8; 4] = f[26..30].try_into().unwrap();
    let dst: [u8; 4] = f[30..34].try_into().unwrap();
    let sport = be16(f, 34);
    let dport = be16(f, 36);
    let mut out = f.to_vec();
    let mut selected = None;
    let class;
    if dst == reg.vip.octets() && dport == reg.vport {
        class = "incoming";
        if reg.replicas.is_empty() {
            return drop(class, "no_replicas");
        }
        let mut key = Vec::with_capacity(13);
        key.extend_from_slice(&src);
        key.extend_from_slice(&dst);
        key.push(6);
        key.extend_from_slice(&sport.to_be_bytes());
        key.extend_from_slice(&dport.to_be_bytes());
        let node = reg.replicas[usize::from(crc16_bitwise(&key)) % reg.replicas.len()];
        selected = Some(node);
        out[30..34].copy_from_slice(&node.octets());
        put16(&mut out, 36, reg.nodeport);
    } else if sport == reg.nodeport && reg.known.contains(&Ipv4Addr::from(src)) {
        class = "outgoing";
        out[26..30].copy_from_slice(&reg.vip.octets());
        put16(&mut out, 34, reg.vport);
    } else {
        class = "internal";
    }
    if out[22] <= 1 {
        return drop(class, "ttl_expired");
    }
    out[22] -= 1;
    fix_ip_checksum(&mut out);
    fix_l4_checksum(&mut out);
    let port = oracle_route(out[30..34].try_into().unwrap());
    OracleOut {
        class,
        selected,
        result: Ok((port, out)),
    }
}
