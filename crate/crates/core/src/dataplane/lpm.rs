// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

//! Longest-prefix-match forwarding table.
//!
//! One exact-match map per prefix length, probed from /32 down to /0. A
//! 33-bit occupancy mask skips empty lengths, so a lookup costs one map
//! probe per populated length.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use super::DataplaneError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub prefix: Ipv4Addr,
    pub prefix_len: u8,
    pub next_hop: Ipv4Addr,
    pub egress_port: u16,
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} {} {}",
            self.prefix, self.prefix_len, self.next_hop, self.egress_port
        )
    }
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpmTable {
    by_len: Vec<BTreeMap<u32, (Ipv4Addr, u16)>>,
    occupied: u64,
}

impl Default for LpmTable {
    fn default() -> Self {
        Self::new()
    }
}

impl LpmTable {
    pub fn new() -> Self {
        Self {
            by_len: vec![BTreeMap::new(); 33],
            occupied: 0,
        }
    }

    /// Inserts or replaces the entry for `prefix/prefix_len`, returning the
    /// replaced route if there was one.
    pub fn insert(
        &mut self,
        prefix: Ipv4Addr,
        prefix_len: u8,
        next_hop: Ipv4Addr,
        egress_port: u16,
    ) -> Result<Option<Route>, DataplaneError> {
        if prefix_len > 32 {
            return Err(DataplaneError::InvalidPrefix {
                prefix,
                prefix_len,
                reason: "length above 32",
            });
        }
        let bits = u32::from(prefix);
        if bits & !mask(prefix_len) != 0 {
            return Err(DataplaneError::InvalidPrefix {
                prefix,
                prefix_len,
                reason: "host bits set",
            });
        }
        self.occupied |= 1 << prefix_len;
        Ok(self.by_len[usize::from(prefix_len)]
            .insert(bits, (next_hop, egress_port))
            .map(|(next_hop, egress_port)| Route {
                prefix,
                prefix_len,
                next_hop,
                egress_port,
            }))
    }

    pub fn remove(&mut self, prefix: Ipv4Addr, prefix_len: u8) -> Option<Route> {
        let level = self.by_len.get_mut(usize::from(prefix_len))?;
        let (next_hop, egress_port) = level.remove(&u32::from(prefix))?;
        if level.is_empty() {
            self.occupied &= !(1 << prefix_len);
        }
        Some(Route {
            prefix,
            prefix_len,
            next_hop,
            egress_port,
        })
    }

    pub fn lookup(&self, dst: Ipv4Addr) -> Result<Route, DataplaneError> {
        let bits = u32::from(dst);
        let mut pending = self.occupied;
        while pending != 0 {
            let len = 63 - pending.leading_zeros() as u8;
            pending &= !(1 << len);
            let key = bits & mask(len);
            if let Some(&(next_hop, egress_port)) = self.by_len[usize::from(len)].get(&key) {
                return Ok(Route {
                    prefix: Ipv4Addr::from(key),
                    prefix_len: len,
                    next_hop,
                    egress_port,
                });
            }
        }
        Err(DataplaneError::NoRoute(dst))
    }

    pub fn len(&self) -> usize {
        self.by_len.iter().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied == 0
    }

    /// Entries ordered by prefix length, then prefix.
    pub fn routes(&self) -> impl Iterator<Item = Route> + '_ {
        self.by_len.iter().enumerate().flat_map(|(len, level)| {
            level.iter().map(move |(&bits, &(next_hop, egress_port))| Route {
                prefix: Ipv4Addr::from(bits),
                prefix_len: len as u8,
                next_hop,
                egress_port,
            })
        })
    }

    /// Renders the table in route-file syntax.
    pub fn to_route_file(&self) -> String {
        self.routes().map(|r| format!("{r}\n")).collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct RouteFileError {
    pub line: usize,
    pub message: String,
}

/// Parses `prefix/len next_hop egress_port` lines. `#` starts a comment;
/// blank lines are ignored. A repeated prefix is an error.
pub fn parse_routes(text: &str) -> Result<LpmTable, RouteFileError> {
    let mut table = LpmTable::new();
    let mut seen: BTreeMap<(Ipv4Addr, u8), usize> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| RouteFileError { line, message };
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        let [cidr, hop, port] = fields[..] else {
            return Err(err(format!(
                "expected `prefix/len next_hop egress_port`, got {} fields",
                fields.len()
            )));
        };
        let (p, l) = cidr
            .split_once('/')
            .ok_or_else(|| err(format!("missing prefix length in `{cidr}`")))?;
        let prefix: Ipv4Addr = p
            .parse()
            .map_err(|_| err(format!("bad prefix address `{p}`")))?;
        let prefix_len: u8 = l
            .parse()
            .map_err(|_| err(format!("bad prefix length `{l}`")))?;
        let next_hop: Ipv4Addr = hop
            .parse()
            .map_err(|_| err(format!("bad next hop `{hop}`")))?;
        let egress_port: u16 = port
            .parse()
            .map_err(|_| err(format!("bad egress port `{port}`")))?;
        if let Some(first) = seen.insert((prefix, prefix_len), line) {
            return Err(err(format!(
                "duplicate route {prefix}/{prefix_len}, first defined on line {first}"
            )));
        }
        table
            .insert(prefix, prefix_len, next_hop, egress_port)
            .map_err(|e| err(e.to_string()))?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    #[test]
    fn replace_keeps_single_entry() {
        let mut t = LpmTable::new();
        assert_eq!(t.insert(a("10.0.0.0"), 8, a("1.1.1.1"), 1).unwrap(), None);
        let old = t.insert(a("10.0.0.0"), 8, a("2.2.2.2"), 2).unwrap().unwrap();
        assert_eq!(old.next_hop, a("1.1.1.1"));
        assert_eq!(t.len(), 1);
        assert_eq!(t.lookup(a("10.9.9.9")).unwrap().egress_port, 2);
    }

    #[test]
    fn host_bits_rejected() {
        let mut t = LpmTable::new();
        assert!(matches!(
            t.insert(a("10.0.0.1"), 8, a("1.1.1.1"), 1),
            Err(DataplaneError::InvalidPrefix { .. })
        ));
        assert!(matches!(
            t.insert(a("0.0.0.0"), 33, a("1.1.1.1"), 1),
            Err(DataplaneError::InvalidPrefix { .. })
        ));
        assert!(t.is_empty());
    }

    #[test]
    fn longest_prefix_wins_with_default_fallback() {
        let mut t = LpmTable::new();
        t.insert(a("0.0.0.0"), 0, a("9.9.9.9"), 1).unwrap();
        t.insert(a("10.0.0.0"), 24, a("10.0.0.254"), 2).unwrap();
        assert_eq!(t.lookup(a("10.0.0.7")).unwrap().egress_port, 2);
        assert_eq!(t.lookup(a("192.0.2.1")).unwrap().egress_port, 1);
        assert_eq!(t.lookup(a("192.0.2.1")).unwrap().prefix_len, 0);
    }

    #[test]
    fn empty_table_has_no_route() {
        assert_eq!(
            LpmTable::new().lookup(a("1.2.3.4")),
            Err(DataplaneError::NoRoute(a("1.2.3.4")))
        );
        assert_eq!(
            LpmTable::default().lookup(a("1.2.3.4")),
            Err(DataplaneError::NoRoute(a("1.2.3.4")))
        );
    }

    #[test]
    fn remove_clears_occupancy() {
        let mut t = LpmTable::new();
        t.insert(a("10.0.0.0"), 8, a("1.1.1.1"), 1).unwrap();
        assert!(t.remove(a("10.0.0.0"), 8).is_some());
        assert!(t.is_empty());
        assert!(t.lookup(a("10.0.0.1")).is_err());
    }

    #[test]
    fn route_file_roundtrip() {
        let text = "# uplink\n0.0.0.0/0 203.0.113.1 1\n\n10.0.1.0/24 10.0.1.1 3 # workers\n10.0.1.7/32 10.0.1.7 9\n";
        let t = parse_routes(text).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.lookup(a("10.0.1.7")).unwrap().egress_port, 9);
        assert_eq!(parse_routes(&t.to_route_file()).unwrap(), t);
    }

    #[test]
    fn route_file_errors_carry_line_numbers() {
        let e = parse_routes("0.0.0.0/0 1.1.1.1 1\n10.0.0.1/8 1.1.1.1 1\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("host bits"));
        let e = parse_routes("\n\n10.0.0.0/8 1.1.1.1\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse_routes("10.0.0.0/8 1.1.1.1 1\n10.0.0.0/8 2.2.2.2 2\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("duplicate"));
        assert_eq!(parse_routes("1.2.3.0/24 x 1").unwrap_err().line, 1);
        assert_eq!(parse_routes("1.2.3.0/24 1.1.1.1 70000").unwrap_err().line, 1);
    }
}
