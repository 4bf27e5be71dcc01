// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{millis, SimError};
use crate::dataplane::LpmTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Client,
    Router,
    ControlPlane,
    Worker,
    ExternalLb,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub role: Role,
    pub addr: Ipv4Addr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    #[serde(rename = "latency_ms", with = "millis")]
    pub latency: Duration,
    /// Port numbers on each side; assigned sequentially per node when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_port: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Topology {
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
}

pub const ROUTER_ADDR: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);
pub const CONTROL_PLANE_ADDR: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 2);
pub const CLIENT_ADDR: Ipv4Addr = Ipv4Addr::new(203, 0, 113, 10);
pub const EXTERNAL_LB_ADDR: Ipv4Addr = Ipv4Addr::new(198, 51, 100, 10);

impl Topology {
    /// The evaluation testbed: a router joining one client machine, one
    /// external load-balancer machine, the control-plane node and `workers`
    /// worker nodes. The control plane also has a direct cluster-network
    /// link to every worker, and the client a direct link to the balancer.
    pub fn evaluation(workers: usize, hop_latency: Duration) -> Self {
        let mut nodes = vec![
            NodeSpec {
                id: "router".into(),
                role: Role::Router,
                addr: ROUTER_ADDR,
            },
            NodeSpec {
                id: "cp".into(),
                role: Role::ControlPlane,
                addr: CONTROL_PLANE_ADDR,
            },
            NodeSpec {
                id: "client".into(),
                role: Role::Client,
                addr: CLIENT_ADDR,
            },
            NodeSpec {
                id: "lb".into(),
                role: Role::ExternalLb,
                addr: EXTERNAL_LB_ADDR,
            },
        ];
        let link = |a: &str, b: &str, a_port: u16, b_port: u16| LinkSpec {
            a: a.into(),
            b: b.into(),
            latency: hop_latency,
            a_port: Some(a_port),
            b_port: Some(b_port),
        };
        let mut links = vec![
            link("router", "client", 1, 1),
            link("router", "lb", 2, 1),
            link("router", "cp", 3, 1),
            link("client", "lb", 2, 2),
        ];
        for i in 1..=workers {
            let id = format!("worker{i}");
            nodes.push(NodeSpec {
                id: id.clone(),
                role: Role::Worker,
                addr: Ipv4Addr::new(10, 0, 1, i as u8),
            });
            links.push(link("router", &id, 10 + i as u16, 1));
            links.push(link("cp", &id, 1 + i as u16, 2));
        }
        Self { nodes, links }
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("topology serializes")
    }

    pub fn with_uniform_latency(mut self, latency: Duration) -> Self {
        for l in &mut self.links {
            l.latency = latency;
        }
        self
    }
}

/// A link as seen from one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attachment {
    pub port: u16,
    pub peer: usize,
    pub latency: Duration,
}

/// Validated topology with derived forwarding state.
#[derive(Debug, Clone)]
pub struct Network {
    pub nodes: Vec<NodeSpec>,
    /// Per node, its attachments keyed by local port.
    pub ports: Vec<BTreeMap<u16, Attachment>>,
    /// Per node, the port leading towards the router (None for the router).
    pub gateway: Vec<Option<u16>>,
    pub router: usize,
    /// Host routes for every other node, derived from shortest paths.
    pub router_routes: LpmTable,
    by_addr: BTreeMap<Ipv4Addr, usize>,
    by_id: BTreeMap<String, usize>,
}

impl Network {
    pub fn build(spec: &Topology) -> Result<Self, SimError> {
        let mut by_addr = BTreeMap::new();
        let mut by_id = BTreeMap::new();
        for (i, n) in spec.nodes.iter().enumerate() {
            if by_id.insert(n.id.clone(), i).is_some() {
                return Err(SimError::DuplicateNodeId(n.id.clone()));
            }
            if by_addr.insert(n.addr, i).is_some() {
                return Err(SimError::DuplicateAddress(n.addr));
            }
        }
        let routers: Vec<usize> = spec
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.role == Role::Router)
            .map(|(i, _)| i)
            .collect();
        let [router] = routers[..] else {
            return Err(SimError::RouterCount(routers.len()));
        };

        let mut ports: Vec<BTreeMap<u16, Attachment>> = vec![BTreeMap::new(); spec.nodes.len()];
        let mut next_port = vec![1u16; spec.nodes.len()];
        let mut alloc = |node: usize, want: Option<u16>, ports: &BTreeMap<u16, Attachment>| {
            want.unwrap_or_else(|| {
                while ports.contains_key(&next_port[node]) {
                    next_port[node] += 1;
                }
                next_port[node]
            })
        };
        for l in &spec.links {
            let a = *by_id
                .get(&l.a)
                .ok_or_else(|| SimError::UnknownNode(l.a.clone()))?;
            let b = *by_id
                .get(&l.b)
                .ok_or_else(|| SimError::UnknownNode(l.b.clone()))?;
            if a == b {
                return Err(SimError::Parse(format!("self link on {}", l.a)));
            }
            let pa = alloc(a, l.a_port, &ports[a]);
            let pb = alloc(b, l.b_port, &ports[b]);
            for (node, port, peer) in [(a, pa, b), (b, pb, a)] {
                let att = Attachment {
                    port,
                    peer,
                    latency: l.latency,
                };
                if ports[node].insert(port, att).is_some() {
                    return Err(SimError::DuplicatePort {
                        node: spec.nodes[node].id.clone(),
                        port,
                    });
                }
            }
        }

        // BFS from the router, visiting neighbours in port order so ties are
        // broken deterministically.
        let n = spec.nodes.len();
        let mut first_port: Vec<Option<u16>> = vec![None; n];
        let mut towards_router: Vec<Option<u16>> = vec![None; n];
        let mut seen = BTreeSet::from([router]);
        let mut queue = VecDeque::new();
        for att in ports[router].values() {
            if seen.insert(att.peer) {
                first_port[att.peer] = Some(att.port);
                queue.push_back(att.peer);
            }
        }
        while let Some(u) = queue.pop_front() {
            for att in ports[u].values() {
                let v = att.peer;
                if v == router {
                    towards_router[u] = towards_router[u].or(Some(att.port));
                    continue;
                }
                if seen.insert(v) {
                    first_port[v] = first_port[u];
                    queue.push_back(v);
                }
            }
        }
        // Non-adjacent nodes reach the router through the neighbour that is
        // one step closer to it.
        let mut dist = vec![usize::MAX; n];
        dist[router] = 0;
        let mut q = VecDeque::from([router]);
        while let Some(u) = q.pop_front() {
            for att in ports[u].values() {
                if dist[att.peer] == usize::MAX {
                    dist[att.peer] = dist[u] + 1;
                    q.push_back(att.peer);
                }
            }
        }
        for v in 0..n {
            if v == router {
                continue;
            }
            if dist[v] == usize::MAX {
                return Err(SimError::DisconnectedRouter(spec.nodes[v].id.clone()));
            }
            if towards_router[v].is_none() {
                towards_router[v] = ports[v]
                    .values()
                    .find(|att| dist[att.peer] + 1 == dist[v])
                    .map(|att| att.port);
            }
        }

        let mut router_routes = LpmTable::new();
        for v in 0..n {
            if v == router {
                continue;
            }
            let port = first_port[v].expect("reachable node has a first hop");
            let next_hop = spec.nodes[ports[router][&port].peer].addr;
            router_routes
                .insert(spec.nodes[v].addr, 32, next_hop, port)
                .expect("host routes are valid prefixes");
        }

        Ok(Self {
            nodes: spec.nodes.clone(),
            ports,
            gateway: towards_router,
            router,
            router_routes,
            by_addr,
            by_id,
        })
    }

    pub fn node_by_addr(&self, addr: Ipv4Addr) -> Option<usize> {
        self.by_addr.get(&addr).copied()
    }

    pub fn node_by_id(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn nodes_with_role(&self, role: Role) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.role == role)
            .map(|(i, _)| i)
    }

    /// Egress port an end host uses for `dst`: the direct link when `dst`
    /// is a neighbour, otherwise the way to the router.
    pub fn host_egress(&self, node: usize, dst: Ipv4Addr) -> Option<u16> {
        if let Some(target) = self.node_by_addr(dst) {
            if let Some(att) = self.ports[node].values().find(|a| a.peer == target) {
                return Some(att.port);
            }
        }
        self.gateway[node]
    }
}
