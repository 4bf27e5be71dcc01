// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

//! Ethernet / IPv4 / TCP / UDP header stack.
//!
//! [`parse_packet`] splits a frame into owned headers and [`deparse`] writes
//! them back. Fields are carried verbatim: nothing is recomputed during
//! serialization, so `deparse(parse_packet(f)) == f` for every frame that
//! parses. Checksums are refreshed explicitly through
//! [`PacketHeaders::refresh_checksums`] after a rewrite.

pub mod checksum;
pub mod crc16;
pub mod pcap;

use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

pub use checksum::{ipv4_checksum, tcp_checksum, udp_checksum};
pub use crc16::crc16;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_ARP: u16 = 0x0806;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

pub const ETHERNET_HEADER_LEN: usize = 14;
pub const IPV4_MIN_HEADER_LEN: usize = 20;
pub const TCP_MIN_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncated packet: {layer} needs {needed} bytes, {available} available")]
    TruncatedPacket {
        layer: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("malformed {layer} header: {reason}")]
    MalformedHeader {
        layer: &'static str,
        reason: String,
    },
    #[error("inconsistent headers: {0}")]
    InconsistentHeaders(String),
}

fn truncated(layer: &'static str, needed: usize, available: usize) -> CodecError {
    CodecError::TruncatedPacket {
        layer,
        needed,
        available,
    }
}

fn malformed(layer: &'static str, reason: impl Into<String>) -> CodecError {
    CodecError::MalformedHeader {
        layer,
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            m[0], m[1], m[2], m[3], m[4], m[5]
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthernetHeader {
    pub dst_mac: MacAddr,
    pub src_mac: MacAddr,
    pub ethertype: u16,
}

impl EthernetHeader {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.dst_mac.0);
        out.extend_from_slice(&self.src_mac.0);
        out.extend_from_slice(&self.ethertype.to_be_bytes());
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ipv4Header {
    pub version: u8,
    /// Header length in 32-bit words.
    pub ihl: u8,
    pub dscp_ecn: u8,
    pub total_length: u16,
    pub identification: u16,
    pub flags_fragment: u16,
    pub ttl: u8,
    pub protocol: u8,
    pub header_checksum: u16,
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    /// Raw option bytes, re-emitted verbatim.
    pub options: Vec<u8>,
}

impl Ipv4Header {
    /// A 20-byte header with no options and a zero checksum.
    pub fn new(src: Ipv4Addr, dst: Ipv4Addr, protocol: u8, payload_len: usize) -> Self {
        Self {
            version: 4,
            ihl: 5,
            dscp_ecn: 0,
            total_length: (IPV4_MIN_HEADER_LEN + payload_len) as u16,
            identification: 0,
            flags_fragment: 0x4000,
            ttl: 64,
            protocol,
            header_checksum: 0,
            src_addr: src,
            dst_addr: dst,
            options: Vec::new(),
        }
    }

    pub fn header_len(&self) -> usize {
        usize::from(self.ihl) * 4
    }

    /// Fragment offset is nonzero: no transport header in this datagram.
    pub fn is_later_fragment(&self) -> bool {
        self.flags_fragment & 0x1FFF != 0
    }

    pub(crate) fn write(&self, out: &mut Vec<u8>) {
        out.push((self.version << 4) | (self.ihl & 0x0F));
        out.push(self.dscp_ecn);
        out.extend_from_slice(&self.total_length.to_be_bytes());
        out.extend_from_slice(&self.identification.to_be_bytes());
        out.extend_from_slice(&self.flags_fragment.to_be_bytes());
        out.push(self.ttl);
        out.push(self.protocol);
        out.extend_from_slice(&self.header_checksum.to_be_bytes());
        out.extend_from_slice(&self.src_addr.octets());
        out.extend_from_slice(&self.dst_addr.octets());
        out.extend_from_slice(&self.options);
    }

    fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < IPV4_MIN_HEADER_LEN {
            return Err(truncated("ipv4", IPV4_MIN_HEADER_LEN, bytes.len()));
        }
        let version = bytes[0] >> 4;
        let ihl = bytes[0] & 0x0F;
        if version != 4 {
            return Err(malformed("ipv4", format!("version {version}")));
        }
        if ihl < 5 {
            return Err(malformed("ipv4", format!("ihl {ihl} below 5")));
        }
        let hlen = usize::from(ihl) * 4;
        if bytes.len() < hlen {
            return Err(truncated("ipv4", hlen, bytes.len()));
        }
        let total_length = u16::from_be_bytes([bytes[2], bytes[3]]);
        if usize::from(total_length) < hlen {
            return Err(malformed(
                "ipv4",
                format!("total length {total_length} below header length {hlen}"),
            ));
        }
        Ok(Self {
            version,
            ihl,
            dscp_ecn: bytes[1],
            total_length,
            identification: u16::from_be_bytes([bytes[4], bytes[5]]),
            flags_fragment: u16::from_be_bytes([bytes[6], bytes[7]]),
            ttl: bytes[8],
            protocol: bytes[9],
            header_checksum: u16::from_be_bytes([bytes[10], bytes[11]]),
            src_addr: Ipv4Addr::new(bytes[12], bytes[13], bytes[14], bytes[15]),
            dst_addr: Ipv4Addr::new(bytes[16], bytes[17], bytes[18], bytes[19]),
            options: bytes[IPV4_MIN_HEADER_LEN..hlen].to_vec(),
        })
    }
}

pub mod tcp_flags {
    pub const FIN: u16 = 0x001;
    pub const SYN: u16 = 0x002;
    pub const RST: u16 = 0x004;
    pub const PSH: u16 = 0x008;
    pub const ACK: u16 = 0x010;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpHeader {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    /// Header length in 32-bit words.
    pub data_offset: u8,
    /// Low 12 bits: 3 reserved bits, then NS/CWR/ECE/URG/ACK/PSH/RST/SYN/FIN.
    pub flags: u16,
    pub window: u16,
    pub checksum: u16,
    pub urgent: u16,
    pub options: Vec<u8>,
}

impl TcpHeader {
    pub fn new(src_port: u16, dst_port: u16, flags: u16) -> Self {
        Self {
            src_port,
            dst_port,
            seq: 0,
            ack: 0,
            data_offset: 5,
            flags,
            window: 65535,
            checksum: 0,
            urgent: 0,
            options: Vec::new(),
        }
    }

    pub fn header_len(&self) -> usize {
        usize::from(self.data_offset) * 4
    }

    pub(crate) fn write(&self, out: &mut Vec<u8>) {
        let off_flags = (u16::from(self.data_offset) << 12) | (self.flags & 0x0FFF);
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.ack.to_be_bytes());
        out.extend_from_slice(&off_flags.to_be_bytes());
        out.extend_from_slice(&self.window.to_be_bytes());
        out.extend_from_slice(&self.checksum.to_be_bytes());
        out.extend_from_slice(&self.urgent.to_be_bytes());
        out.extend_from_slice(&self.options);
    }

    fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < TCP_MIN_HEADER_LEN {
            return Err(truncated("tcp", TCP_MIN_HEADER_LEN, bytes.len()));
        }
        let off_flags = u16::from_be_bytes([bytes[12], bytes[13]]);
        let data_offset = (off_flags >> 12) as u8;
        if data_offset < 5 {
            return Err(malformed(
                "tcp",
                format!("data offset {data_offset} below 5"),
            ));
        }
        let hlen = usize::from(data_offset) * 4;
        if bytes.len() < hlen {
            return Err(truncated("tcp", hlen, bytes.len()));
        }
        Ok(Self {
            src_port: u16::from_be_bytes([bytes[0], bytes[1]]),
            dst_port: u16::from_be_bytes([bytes[2], bytes[3]]),
            seq: u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
            ack: u32::from_be_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]),
            data_offset,
            flags: off_flags & 0x0FFF,
            window: u16::from_be_bytes([bytes[14], bytes[15]]),
            checksum: u16::from_be_bytes([bytes[16], bytes[17]]),
            urgent: u16::from_be_bytes([bytes[18], bytes[19]]),
            options: bytes[TCP_MIN_HEADER_LEN..hlen].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UdpHeader {
    pub src_port: u16,
    pub dst_port: u16,
    pub length: u16,
    /// Zero means the sender did not compute one.
    pub checksum: u16,
}

impl UdpHeader {
    pub fn new(src_port: u16, dst_port: u16, payload_len: usize) -> Self {
        Self {
            src_port,
            dst_port,
            length: (UDP_HEADER_LEN + payload_len) as u16,
            checksum: 0,
        }
    }

    pub(crate) fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&self.length.to_be_bytes());
        out.extend_from_slice(&self.checksum.to_be_bytes());
    }

    fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < UDP_HEADER_LEN {
            return Err(truncated("udp", UDP_HEADER_LEN, bytes.len()));
        }
        let length = u16::from_be_bytes([bytes[4], bytes[5]]);
        if usize::from(length) < UDP_HEADER_LEN {
            return Err(malformed("udp", format!("length {length} below 8")));
        }
        if usize::from(length) > bytes.len() {
            return Err(truncated("udp", usize::from(length), bytes.len()));
        }
        Ok(Self {
            src_port: u16::from_be_bytes([bytes[0], bytes[1]]),
            dst_port: u16::from_be_bytes([bytes[2], bytes[3]]),
            length,
            checksum: u16::from_be_bytes([bytes[6], bytes[7]]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    Tcp(TcpHeader),
    Udp(UdpHeader),
}

impl Transport {
    pub fn protocol(&self) -> u8 {
        match self {
            Transport::Tcp(_) => PROTO_TCP,
            Transport::Udp(_) => PROTO_UDP,
        }
    }

    pub fn header_len(&self) -> usize {
        match self {
            Transport::Tcp(t) => t.header_len(),
            Transport::Udp(_) => UDP_HEADER_LEN,
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            Transport::Tcp(t) => t.write(out),
            Transport::Udp(u) => u.write(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketHeaders {
    pub ethernet: EthernetHeader,
    pub ipv4: Option<Ipv4Header>,
    pub transport: Option<Transport>,
    /// Bytes after the last parsed header, up to the end of the IPv4
    /// datagram (or the end of the frame when there is no IPv4 header).
    pub payload: Vec<u8>,
    /// Link-layer padding found past the IPv4 total length.
    pub trailer: Vec<u8>,
}

impl PacketHeaders {
    /// Builds a consistent Ethernet/IPv4/TCP stack with valid checksums.
    pub fn tcp(
        src: (Ipv4Addr, u16),
        dst: (Ipv4Addr, u16),
        flags: u16,
        payload: Vec<u8>,
    ) -> Self {
        let tcp = TcpHeader::new(src.1, dst.1, flags);
        let ip = Ipv4Header::new(src.0, dst.0, PROTO_TCP, tcp.header_len() + payload.len());
        let mut h = Self {
            ethernet: EthernetHeader {
                dst_mac: MacAddr::default(),
                src_mac: MacAddr::default(),
                ethertype: ETHERTYPE_IPV4,
            },
            ipv4: Some(ip),
            transport: Some(Transport::Tcp(tcp)),
            payload,
            trailer: Vec::new(),
        };
        h.refresh_checksums();
        h
    }

    /// Builds a consistent Ethernet/IPv4/UDP stack with valid checksums.
    pub fn udp(src: (Ipv4Addr, u16), dst: (Ipv4Addr, u16), payload: Vec<u8>) -> Self {
        let mut udp = UdpHeader::new(src.1, dst.1, payload.len());
        let ip = Ipv4Header::new(src.0, dst.0, PROTO_UDP, UDP_HEADER_LEN + payload.len());
        udp.checksum = udp_checksum(&ip, &udp, &payload);
        let mut h = Self {
            ethernet: EthernetHeader {
                dst_mac: MacAddr::default(),
                src_mac: MacAddr::default(),
                ethertype: ETHERTYPE_IPV4,
            },
            ipv4: Some(ip),
            transport: Some(Transport::Udp(udp)),
            payload,
            trailer: Vec::new(),
        };
        h.refresh_checksums();
        h
    }

    pub fn tcp_header(&self) -> Option<&TcpHeader> {
        match &self.transport {
            Some(Transport::Tcp(t)) => Some(t),
            _ => None,
        }
    }

    pub fn udp_header(&self) -> Option<&UdpHeader> {
        match &self.transport {
            Some(Transport::Udp(u)) => Some(u),
            _ => None,
        }
    }

    /// Recomputes the IPv4 header checksum and the transport checksum.
    /// A UDP checksum of zero stays zero.
    pub fn refresh_checksums(&mut self) {
        let Some(ip) = self.ipv4.as_mut() else {
            return;
        };
        match self.transport.as_mut() {
            Some(Transport::Tcp(tcp)) => tcp.checksum = tcp_checksum(ip, tcp, &self.payload),
            Some(Transport::Udp(udp)) if udp.checksum != 0 => {
                udp.checksum = udp_checksum(ip, udp, &self.payload)
            }
            _ => {}
        }
        ip.header_checksum = ipv4_checksum(ip);
    }

    /// True when every checksum present in the stack verifies.
    pub fn checksums_valid(&self) -> bool {
        let Some(ip) = &self.ipv4 else {
            return true;
        };
        if !checksum::verify_ipv4(ip) {
            return false;
        }
        match &self.transport {
            Some(Transport::Tcp(tcp)) => checksum::verify_tcp(ip, tcp, &self.payload),
            Some(Transport::Udp(udp)) => checksum::verify_udp(ip, udp, &self.payload),
            None => true,
        }
    }

    /// Serialized size in bytes.
    pub fn wire_len(&self) -> usize {
        ETHERNET_HEADER_LEN
            + self.ipv4.as_ref().map_or(0, Ipv4Header::header_len)
            + self.transport.as_ref().map_or(0, Transport::header_len)
            + self.payload.len()
            + self.trailer.len()
    }

    fn check_consistent(&self) -> Result<(), CodecError> {
        let bad = |m: String| Err(CodecError::InconsistentHeaders(m));
        let Some(ip) = &self.ipv4 else {
            if self.transport.is_some() {
                return bad("transport header without ipv4".into());
            }
            if !self.trailer.is_empty() {
                return bad("trailer without ipv4".into());
            }
            return Ok(());
        };
        if self.ethernet.ethertype != ETHERTYPE_IPV4 {
            return bad(format!(
                "ipv4 header under ethertype {:#06x}",
                self.ethernet.ethertype
            ));
        }
        if ip.version != 4 || !(5..=15).contains(&ip.ihl) {
            return bad(format!("ipv4 version {} ihl {}", ip.version, ip.ihl));
        }
        if ip.header_len() != IPV4_MIN_HEADER_LEN + ip.options.len() {
            return bad(format!(
                "ihl {} does not cover {} option bytes",
                ip.ihl,
                ip.options.len()
            ));
        }
        if let Some(t) = &self.transport {
            if t.protocol() != ip.protocol {
                return bad(format!(
                    "ipv4 protocol {} but transport is {}",
                    ip.protocol,
                    t.protocol()
                ));
            }
            if ip.is_later_fragment() {
                return bad("transport header on a non-initial fragment".into());
            }
            match t {
                Transport::Tcp(tcp) => {
                    if !(5..=15).contains(&tcp.data_offset)
                        || tcp.header_len() != TCP_MIN_HEADER_LEN + tcp.options.len()
                    {
                        return bad(format!(
                            "tcp data offset {} with {} option bytes",
                            tcp.data_offset,
                            tcp.options.len()
                        ));
                    }
                }
                Transport::Udp(udp) => {
                    if usize::from(udp.length) < UDP_HEADER_LEN
                        || usize::from(udp.length) > UDP_HEADER_LEN + self.payload.len()
                    {
                        return bad(format!(
                            "udp length {} with {} payload bytes",
                            udp.length,
                            self.payload.len()
                        ));
                    }
                }
            }
        }
        let datagram = ip.header_len()
            + self.transport.as_ref().map_or(0, Transport::header_len)
            + self.payload.len();
        if datagram != usize::from(ip.total_length) {
            return bad(format!(
                "ipv4 total length {} but datagram is {datagram} bytes",
                ip.total_length
            ));
        }
        Ok(())
    }
}

/// Splits a frame into its header stack.
pub fn parse_packet(bytes: &[u8]) -> Result<PacketHeaders, CodecError> {
    if bytes.len() < ETHERNET_HEADER_LEN {
        return Err(truncated("ethernet", ETHERNET_HEADER_LEN, bytes.len()));
    }
    let mut dst_mac = [0u8; 6];
    let mut src_mac = [0u8; 6];
    dst_mac.copy_from_slice(&bytes[0..6]);
    src_mac.copy_from_slice(&bytes[6..12]);
    let ethernet = EthernetHeader {
        dst_mac: MacAddr(dst_mac),
        src_mac: MacAddr(src_mac),
        ethertype: u16::from_be_bytes([bytes[12], bytes[13]]),
    };
    let rest = &bytes[ETHERNET_HEADER_LEN..];
    if ethernet.ethertype != ETHERTYPE_IPV4 {
        return Ok(PacketHeaders {
            ethernet,
            ipv4: None,
            transport: None,
            payload: rest.to_vec(),
            trailer: Vec::new(),
        });
    }

    let ip = Ipv4Header::parse(rest)?;
    let total = usize::from(ip.total_length);
    if total > rest.len() {
        return Err(truncated("ipv4", total, rest.len()));
    }
    let segment = &rest[ip.header_len()..total];
    let trailer = rest[total..].to_vec();

    let (transport, payload) = if ip.is_later_fragment() {
        (None, segment)
    } else {
        match ip.protocol {
            PROTO_TCP => {
                let tcp = TcpHeader::parse(segment)?;
                let off = tcp.header_len();
                (Some(Transport::Tcp(tcp)), &segment[off..])
            }
            PROTO_UDP => {
                let udp = UdpHeader::parse(segment)?;
                (Some(Transport::Udp(udp)), &segment[UDP_HEADER_LEN..])
            }
            _ => (None, segment),
        }
    };

    Ok(PacketHeaders {
        ethernet,
        ipv4: Some(ip),
        transport,
        payload: payload.to_vec(),
        trailer,
    })
}

/// Writes the header stack back to wire bytes, fields verbatim.
pub fn deparse(headers: &PacketHeaders) -> Result<Vec<u8>, CodecError> {
    headers.check_consistent()?;
    let mut out = Vec::with_capacity(headers.wire_len());
    headers.ethernet.write(&mut out);
    if let Some(ip) = &headers.ipv4 {
        ip.write(&mut out);
    }
    if let Some(t) = &headers.transport {
        t.write(&mut out);
    }
    out.extend_from_slice(&headers.payload);
    out.extend_from_slice(&headers.trailer);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    /// Minimal Ethernet + IPv4 + TCP frame assembled byte by byte from the
    /// RFC 791 / RFC 793 offset tables.
    fn reference_frame() -> Vec<u8> {
        let mut f = vec![
            0x02, 0, 0, 0, 0, 0x01, // dst mac
            0x02, 0, 0, 0, 0, 0x02, // src mac
            0x08, 0x00, // ethertype
        ];
        f.extend_from_slice(&[
            0x45, 0x00, 0x00, 40, // version/ihl, tos, total length
            0x12, 0x34, 0x40, 0x00, // id, DF
            64, 6, 0x00, 0x00, // ttl, proto, checksum (filled below)
            10, 0, 0, 1, // src
            10, 0, 0, 2, // dst
        ]);
        let ip_sum = checksum::internet_checksum(&f[14..34]);
        f[24..26].copy_from_slice(&ip_sum.to_be_bytes());
        f.extend_from_slice(&[
            0x30, 0x39, 0x00, 0x50, // 12345 -> 80
            0, 0, 0, 1, // seq
            0, 0, 0, 0, // ack
            0x50, 0x02, // offset 5, SYN
            0xff, 0xff, // window
            0x00, 0x00, // checksum (filled below)
            0x00, 0x00, // urgent
        ]);
        let mut pseudo = vec![10, 0, 0, 1, 10, 0, 0, 2, 0, 6, 0, 20];
        pseudo.extend_from_slice(&f[34..54]);
        let tcp_sum = checksum::internet_checksum(&pseudo);
        f[50..52].copy_from_slice(&tcp_sum.to_be_bytes());
        f
    }

    #[test]
    fn parses_reference_frame() {
        let f = reference_frame();
        let h = parse_packet(&f).unwrap();
        let ip = h.ipv4.as_ref().unwrap();
        assert_eq!(ip.total_length, 40);
        assert_eq!(ip.identification, 0x1234);
        assert_eq!(ip.src_addr, addr("10.0.0.1"));
        assert_eq!(ip.dst_addr, addr("10.0.0.2"));
        let tcp = h.tcp_header().unwrap();
        assert_eq!((tcp.src_port, tcp.dst_port), (12345, 80));
        assert_eq!(tcp.seq, 1);
        assert_eq!(tcp.flags, tcp_flags::SYN);
        assert!(h.payload.is_empty());
        assert!(h.checksums_valid());
        assert_eq!(deparse(&h).unwrap(), f);
    }

    #[test]
    fn builder_matches_reference_checksums() {
        let f = reference_frame();
        let mut h = parse_packet(&f).unwrap();
        let (ip_sum, tcp_sum) = (
            h.ipv4.as_ref().unwrap().header_checksum,
            h.tcp_header().unwrap().checksum,
        );
        h.refresh_checksums();
        assert_eq!(h.ipv4.as_ref().unwrap().header_checksum, ip_sum);
        assert_eq!(h.tcp_header().unwrap().checksum, tcp_sum);
    }

    #[test]
    fn arp_is_passthrough() {
        let mut f = vec![0xff; 12];
        f.extend_from_slice(&ETHERTYPE_ARP.to_be_bytes());
        let h = parse_packet(&f).unwrap();
        assert!(h.ipv4.is_none());
        assert!(h.payload.is_empty());
        assert_eq!(deparse(&h).unwrap(), f);
    }

    #[test]
    fn short_ethernet_is_truncated() {
        assert!(matches!(
            parse_packet(&[0u8; 13]),
            Err(CodecError::TruncatedPacket { layer: "ethernet", .. })
        ));
    }

    #[test]
    fn ihl_four_is_malformed() {
        let mut f = reference_frame();
        f[14] = 0x44;
        assert!(matches!(
            parse_packet(&f),
            Err(CodecError::MalformedHeader { layer: "ipv4", .. })
        ));
    }

    #[test]
    fn data_offset_four_is_malformed() {
        let mut f = reference_frame();
        f[46] = 0x40;
        assert!(matches!(
            parse_packet(&f),
            Err(CodecError::MalformedHeader { layer: "tcp", .. })
        ));
    }

    #[test]
    fn total_length_past_end_is_truncated() {
        let mut f = reference_frame();
        f[17] = 60;
        assert!(matches!(
            parse_packet(&f),
            Err(CodecError::TruncatedPacket { layer: "ipv4", .. })
        ));
    }

    #[test]
    fn every_truncation_is_an_error() {
        let h = PacketHeaders::tcp(
            (addr("203.0.113.5"), 40000),
            (addr("192.0.2.10"), 80),
            tcp_flags::ACK | tcp_flags::PSH,
            b"GET / HTTP/1.1\r\n\r\n".to_vec(),
        );
        let f = deparse(&h).unwrap();
        for cut in 0..f.len() {
            match parse_packet(&f[..cut]) {
                Err(CodecError::TruncatedPacket { .. }) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn ethernet_padding_is_kept_as_trailer() {
        let h = PacketHeaders::tcp(
            (addr("10.0.0.1"), 1),
            (addr("10.0.0.2"), 2),
            tcp_flags::ACK,
            vec![],
        );
        let mut f = deparse(&h).unwrap();
        f.extend_from_slice(&[0u8; 6]);
        let p = parse_packet(&f).unwrap();
        assert_eq!(p.trailer, vec![0u8; 6]);
        assert!(p.payload.is_empty());
        assert!(p.checksums_valid());
        assert_eq!(deparse(&p).unwrap(), f);
    }

    #[test]
    fn unknown_protocol_has_no_transport() {
        let mut h = PacketHeaders::udp((addr("10.0.0.1"), 1), (addr("10.0.0.2"), 2), vec![1, 2]);
        h.transport = None;
        h.payload = vec![0xaa; 10];
        let ip = h.ipv4.as_mut().unwrap();
        ip.protocol = 47;
        ip.total_length = 30;
        let f = deparse(&h).unwrap();
        let p = parse_packet(&f).unwrap();
        assert!(p.transport.is_none());
        assert_eq!(p.payload, vec![0xaa; 10]);
    }

    #[test]
    fn later_fragment_carries_no_transport() {
        let mut h = PacketHeaders::udp((addr("10.0.0.1"), 1), (addr("10.0.0.2"), 2), vec![]);
        h.transport = None;
        h.payload = vec![0x55; 16];
        let ip = h.ipv4.as_mut().unwrap();
        ip.flags_fragment = 0x0010;
        ip.total_length = 36;
        let f = deparse(&h).unwrap();
        let p = parse_packet(&f).unwrap();
        assert!(p.transport.is_none());
        assert_eq!(p.payload.len(), 16);
    }

    #[test]
    fn deparse_rejects_protocol_mismatch() {
        let mut h = PacketHeaders::udp((addr("10.0.0.1"), 1), (addr("10.0.0.2"), 2), vec![]);
        h.ipv4.as_mut().unwrap().protocol = PROTO_TCP;
        assert!(matches!(
            deparse(&h),
            Err(CodecError::InconsistentHeaders(_))
        ));
    }

    #[test]
    fn deparse_rejects_wrong_total_length() {
        let mut h = PacketHeaders::udp((addr("10.0.0.1"), 1), (addr("10.0.0.2"), 2), vec![7]);
        h.ipv4.as_mut().unwrap().total_length += 1;
        assert!(deparse(&h).is_err());
    }

    #[test]
    fn deparse_without_ipv4_is_plain_ethernet() {
        let h = PacketHeaders {
            ethernet: EthernetHeader {
                dst_mac: MacAddr([1; 6]),
                src_mac: MacAddr([2; 6]),
                ethertype: ETHERTYPE_ARP,
            },
            ipv4: None,
            transport: None,
            payload: vec![9; 28],
            trailer: vec![],
        };
        assert_eq!(deparse(&h).unwrap().len(), 14 + 28);
    }

    #[test]
    fn dst_rewrite_touches_only_addr_and_checksums() {
        let h = PacketHeaders::tcp(
            (addr("203.0.113.5"), 40000),
            (addr("192.0.2.10"), 80),
            tcp_flags::ACK,
            b"hello".to_vec(),
        );
        let before = deparse(&h).unwrap();
        let mut r = h.clone();
        r.ipv4.as_mut().unwrap().dst_addr = addr("10.0.1.7");
        r.refresh_checksums();
        let after = deparse(&r).unwrap();
        assert!(r.checksums_valid());
        let diff: Vec<usize> = (0..before.len()).filter(|&i| before[i] != after[i]).collect();
        // ipv4 checksum 24..26, dst addr 30..34, tcp checksum 50..52
        let allowed = [24, 25, 30, 31, 32, 33, 50, 51];
        assert!(!diff.is_empty());
        assert!(diff.iter().all(|i| allowed.contains(i)), "{diff:?}");
    }

    #[test]
    fn tcp_checksum_odd_payload_matches_padded_oracle() {
        let h = PacketHeaders::tcp(
            (addr("1.2.3.4"), 1000),
            (addr("5.6.7.8"), 2000),
            tcp_flags::ACK,
            vec![0xAB],
        );
        let ip = h.ipv4.as_ref().unwrap();
        let tcp = h.tcp_header().unwrap();
        let mut seg = Vec::new();
        let mut zeroed = tcp.clone();
        zeroed.checksum = 0;
        zeroed.write(&mut seg);
        let mut oracle = vec![1, 2, 3, 4, 5, 6, 7, 8, 0, 6, 0, 21];
        oracle.extend_from_slice(&seg);
        oracle.extend_from_slice(&[0xAB, 0x00]);
        assert_eq!(
            tcp_checksum(ip, tcp, &h.payload),
            checksum::internet_checksum(&oracle)
        );
    }

    #[test]
    fn udp_zero_checksum_is_accepted() {
        let mut h = PacketHeaders::udp((addr("10.0.0.2"), 5000), (addr("10.0.0.1"), 7777), vec![1]);
        h.transport = Some(Transport::Udp(UdpHeader {
            checksum: 0,
            ..h.udp_header().unwrap().clone()
        }));
        assert!(h.checksums_valid());
    }
}
