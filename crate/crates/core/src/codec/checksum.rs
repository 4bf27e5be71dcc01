// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

//! RFC 1071 one's-complement arithmetic for the IPv4, TCP and UDP checksums.

use std::net::Ipv4Addr;

use super::{Ipv4Header, TcpHeader, UdpHeader, PROTO_TCP, PROTO_UDP};

/// Running one's-complement sum over big-endian 16-bit words.
///
/// Bytes may be fed in several chunks; an odd trailing byte is carried to
/// the next chunk so the result matches a single pass over the concatenation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Accumulator {
    sum: u32,
    pending: Option<u8>,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_bytes(&mut self, mut data: &[u8]) {
        if let Some(hi) = self.pending.take() {
            match data.split_first() {
                Some((&lo, rest)) => {
                    self.add_word(u16::from_be_bytes([hi, lo]));
                    data = rest;
                }
                None => {
                    self.pending = Some(hi);
                    return;
                }
            }
        }
        let mut chunks = data.chunks_exact(2);
        for c in &mut chunks {
            self.add_word(u16::from_be_bytes([c[0], c[1]]));
        }
        if let [last] = chunks.remainder() {
            self.pending = Some(*last);
        }
    }

    pub fn add_word(&mut self, word: u16) {
        self.sum += u32::from(word);
        // Fold eagerly so the sum never overflows however much is fed.
        if self.sum > 0xFFFF {
            self.sum = (self.sum & 0xFFFF) + (self.sum >> 16);
        }
    }

    pub fn add_addr(&mut self, addr: Ipv4Addr) {
        self.add_bytes(&addr.octets());
    }

    /// The folded 16-bit sum (not complemented). Odd input is zero padded.
    pub fn sum(&self) -> u16 {
        let mut sum = self.sum;
        if let Some(hi) = self.pending {
            sum += u32::from(hi) << 8;
        }
        while sum > 0xFFFF {
            sum = (sum & 0xFFFF) + (sum >> 16);
        }
        sum as u16
    }

    pub fn checksum(&self) -> u16 {
        !self.sum()
    }
}

/// Checksum over a byte slice, odd length padded with a zero byte.
pub fn internet_checksum(data: &[u8]) -> u16 {
    let mut acc = Accumulator::new();
    acc.add_bytes(data);
    acc.checksum()
}

/// Header checksum with the checksum field treated as zero.
pub fn ipv4_checksum(header: &Ipv4Header) -> u16 {
    let mut h = header.clone();
    h.header_checksum = 0;
    let mut buf = Vec::with_capacity(h.header_len());
    h.write(&mut buf);
    internet_checksum(&buf)
}

pub fn verify_ipv4(header: &Ipv4Header) -> bool {
    let mut buf = Vec::with_capacity(header.header_len());
    header.write(&mut buf);
    let mut acc = Accumulator::new();
    acc.add_bytes(&buf);
    acc.sum() == 0xFFFF
}

fn pseudo_header(acc: &mut Accumulator, ip: &Ipv4Header, protocol: u8, segment_len: usize) {
    acc.add_addr(ip.src_addr);
    acc.add_addr(ip.dst_addr);
    acc.add_word(u16::from(protocol));
    acc.add_word(segment_len as u16);
}

fn tcp_sum(ip: &Ipv4Header, tcp: &TcpHeader, payload: &[u8]) -> Accumulator {
    let mut buf = Vec::with_capacity(tcp.header_len());
    tcp.write(&mut buf);
    let mut acc = Accumulator::new();
    pseudo_header(&mut acc, ip, PROTO_TCP, buf.len() + payload.len());
    acc.add_bytes(&buf);
    acc.add_bytes(payload);
    acc
}

/// TCP checksum over the pseudo-header, the header with its checksum field
/// zeroed, and the payload.
pub fn tcp_checksum(ip: &Ipv4Header, tcp: &TcpHeader, payload: &[u8]) -> u16 {
    let mut zeroed = tcp.clone();
    zeroed.checksum = 0;
    tcp_sum(ip, &zeroed, payload).checksum()
}

pub fn verify_tcp(ip: &Ipv4Header, tcp: &TcpHeader, payload: &[u8]) -> bool {
    tcp_sum(ip, tcp, payload).sum() == 0xFFFF
}

fn udp_sum(ip: &Ipv4Header, udp: &UdpHeader, payload: &[u8]) -> Accumulator {
    let mut buf = Vec::with_capacity(8);
    udp.write(&mut buf);
    let mut acc = Accumulator::new();
    pseudo_header(&mut acc, ip, PROTO_UDP, buf.len() + payload.len());
    acc.add_bytes(&buf);
    acc.add_bytes(payload);
    acc
}

/// UDP checksum. A computed value of zero is transmitted as 0xFFFF since
/// zero on the wire means "no checksum".
pub fn udp_checksum(ip: &Ipv4Header, udp: &UdpHeader, payload: &[u8]) -> u16 {
    let mut zeroed = udp.clone();
    zeroed.checksum = 0;
    match udp_sum(ip, &zeroed, payload).checksum() {
        0 => 0xFFFF,
        c => c,
    }
}

pub fn verify_udp(ip: &Ipv4Header, udp: &UdpHeader, payload: &[u8]) -> bool {
    udp.checksum == 0 || udp_sum(ip, udp, payload).sum() == 0xFFFF
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight RFC 1071 reference: sum 16-bit words in a u64, fold, complement.
    fn naive(data: &[u8]) -> u16 {
        let mut sum: u64 = 0;
        let mut i = 0;
        while i < data.len() {
            let hi = u64::from(data[i]) << 8;
            let lo = data.get(i + 1).copied().map(u64::from).unwrap_or(0);
            sum += hi | lo;
            i += 2;
        }
        while sum > 0xFFFF {
            sum = (sum & 0xFFFF) + (sum >> 16);
        }
        !(sum as u16)
    }

    #[test]
    fn zero_header_is_all_ones() {
        assert_eq!(internet_checksum(&[0u8; 20]), 0xFFFF);
    }

    #[test]
    fn rfc1071_worked_example() {
        // RFC 1071 section 3: words 0001 f203 f4f5 f6f7 sum to ddf2 after folding.
        let data = [0x00, 0x01, 0xf2, 0x03, 0xf4, 0xf5, 0xf6, 0xf7];
        let mut acc = Accumulator::new();
        acc.add_bytes(&data);
        assert_eq!(acc.sum(), 0xddf2);
        assert_eq!(internet_checksum(&data), !0xddf2);
    }

    #[test]
    fn known_ipv4_header() {
        // Classic example header, checksum field 0xb861.
        let hdr = [
            0x45, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40, 0x00, 0x40, 0x11, 0x00, 0x00, 0xc0, 0xa8,
            0x00, 0x01, 0xc0, 0xa8, 0x00, 0xc7,
        ];
        assert_eq!(naive(&hdr), 0xb861);
        assert_eq!(internet_checksum(&hdr), 0xb861);
    }

    #[test]
    fn chunked_feeding_matches_single_pass() {
        let data: Vec<u8> = (0..=255u8).cycle().take(777).collect();
        for split in [0, 1, 2, 3, 100, 333, 776, 777] {
            let mut acc = Accumulator::new();
            acc.add_bytes(&data[..split]);
            acc.add_bytes(&data[split..]);
            assert_eq!(acc.checksum(), naive(&data), "split at {split}");
        }
    }

    #[test]
    fn odd_lengths_match_naive() {
        for len in 0..64usize {
            let data: Vec<u8> = (0..len).map(|i| (i * 37 + 11) as u8).collect();
            assert_eq!(internet_checksum(&data), naive(&data));
        }
    }
}
