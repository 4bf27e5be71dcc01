// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::net::Ipv4Addr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracing::debug;

use super::report::{SimReport, StateChangeReport};
use super::scenario::{Mode, Scenario, StateChange};
use super::topology::{Network, Role};
use super::SimError;
use crate::agent::{Agent, ClusterState, MemorySource};
use crate::codec::{deparse, parse_packet, tcp_flags, PacketHeaders, Transport};
use crate::control::control_frame;
use crate::dataplane::{Action, ReplicaRegistry, Router};

const EPHEMERAL_LO: u16 = 32768;
const EPHEMERAL_HI: u16 = 60999;
const NAT_PORT_LO: u16 = 10000;
const AGENT_SRC_PORT: u16 = 40000;
const SERVED_BY: &str = "x-served-by: ";

type Ns = u64;

fn ns(d: Duration) -> Ns {
    d.as_nanos() as Ns
}

#[derive(Debug)]
enum Ev {
    Arrive { node: usize, frame: Vec<u8> },
    StartSession,
    SendRequest { session: usize },
    Timeout { session: usize, token: u64 },
    AgentTick { first: bool },
    Change,
}

#[derive(Debug)]
struct Queued {
    at: Ns,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Queued {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(o.at, o.seq))
    }
}

#[derive(Debug)]
struct Session {
    port: u16,
    requests: u32,
    done: u32,
    req_start: Ns,
    established: bool,
    token: u64,
    open: bool,
}

/// Stateful NAT proxy: used for the NodePort path on the control-plane node
/// and for the external balancer.
#[derive(Debug)]
struct NatBox {
    node: usize,
    addr: Ipv4Addr,
    listen_port: u16,
    backend_port: u16,
    backends: Vec<Ipv4Addr>,
    rr: usize,
    delay: Ns,
    setup: Ns,
    next_port: u16,
    fwd: HashMap<(Ipv4Addr, u16), (u16, Ipv4Addr)>,
    rev: HashMap<u16, (Ipv4Addr, u16)>,
}

impl NatBox {
    fn alloc_port(&mut self) -> Option<u16> {
        let span = u32::from(EPHEMERAL_HI - NAT_PORT_LO) + 1;
        for _ in 0..span {
            let p = self.next_port;
            self.next_port = if p == EPHEMERAL_HI { NAT_PORT_LO } else { p + 1 };
            if !self.rev.contains_key(&p) {
                return Some(p);
            }
        }
        None
    }
}

struct Sim<'a> {
    net: &'a Network,
    sc: &'a Scenario,
    now: Ns,
    seq: u64,
    queue: BinaryHeap<Reverse<Queued>>,
    rng: ChaCha8Rng,

    router: Router,
    agent: Option<Agent<MemorySource, Vec<Vec<u8>>>>,
    nat: Option<NatBox>,
    client: usize,
    cp: Option<usize>,
    target: (Ipv4Addr, u16),
    worker_ids: BTreeMap<usize, String>,
    change_state: Option<Vec<Ipv4Addr>>,

    sessions: Vec<Session>,
    by_port: HashMap<u16, usize>,
    total_sessions: u64,
    active: usize,
    started: bool,
    worker_seen: HashMap<(Ipv4Addr, u16), BTreeSet<usize>>,

    request_times: Vec<Ns>,
    per_node: BTreeMap<String, u64>,
    injected: u64,
    completed: u64,
    dropped: u64,
    sessions_completed: u64,
    sessions_failed: u64,
    affinity_violations: u64,
    misdirected: u64,
    drops: BTreeMap<String, u64>,
    agent_errors: Vec<String>,
    generations: Vec<(Ns, u64)>,
    selections: BTreeMap<(u64, Ipv4Addr), u64>,
    change_gen: Option<u64>,
}

/// Runs `scenario` over `net` to completion and summarises the outcome.
pub fn run_scenario(net: &Network, scenario: &Scenario) -> Result<SimReport, SimError> {
    scenario.validate()?;
    let sc = scenario;
    let first = |role| net.nodes_with_role(role).next();
    let client = first(Role::Client).ok_or(SimError::MissingRole(Role::Client))?;
    let cp = first(Role::ControlPlane);
    let lb = first(Role::ExternalLb);
    let worker_ids: BTreeMap<usize, String> = net
        .nodes_with_role(Role::Worker)
        .map(|i| (i, net.nodes[i].id.clone()))
        .collect();
    if worker_ids.is_empty() {
        return Err(SimError::MissingRole(Role::Worker));
    }

    let resolve = |pods: &[String]| -> Result<Vec<Ipv4Addr>, SimError> {
        if pods.is_empty() {
            return Ok(worker_ids.keys().map(|&i| net.nodes[i].addr).collect());
        }
        pods.iter()
            .map(|id| match net.node_by_id(id) {
                Some(i) if net.nodes[i].role == Role::Worker => Ok(net.nodes[i].addr),
                _ => Err(SimError::InvalidScenario(format!("pod placed on unknown worker `{id}`"))),
            })
            .collect()
    };
    let pods = resolve(&sc.pods)?;
    let change_state = sc.change.as_ref().map(|c| resolve(&c.pods)).transpose()?;

    if sc.total_requests == 0 {
        return Ok(SimReport::empty(sc.mode, sc.seed));
    }

    let svc = &sc.service;
    let mut agent = None;
    let mut nat = None;
    let target = match sc.mode {
        Mode::InNetwork => {
            cp.ok_or(SimError::MissingRole(Role::ControlPlane))?;
            agent = Some(Agent::new(
                MemorySource::new(sc.cluster_state(&pods)),
                Vec::new(),
                sc.max_replicas,
            ));
            (svc.virtual_addr, svc.virtual_port)
        }
        Mode::NodePort => {
            let cp = cp.ok_or(SimError::MissingRole(Role::ControlPlane))?;
            let addr = net.nodes[cp].addr;
            nat = Some(NatBox {
                node: cp,
                addr,
                listen_port: svc.nodeport_port,
                backend_port: svc.nodeport_port,
                backends: pods.clone(),
                rr: 0,
                delay: ns(sc.control_plane_delay),
                setup: 0,
                next_port: NAT_PORT_LO,
                fwd: HashMap::new(),
                rev: HashMap::new(),
            });
            (addr, svc.nodeport_port)
        }
        Mode::ExternalLb => {
            let lb = lb.ok_or(SimError::MissingRole(Role::ExternalLb))?;
            let addr = net.nodes[lb].addr;
            nat = Some(NatBox {
                node: lb,
                addr,
                listen_port: svc.virtual_port,
                backend_port: svc.nodeport_port,
                backends: pods.clone(),
                rr: 0,
                delay: ns(sc.lb_delay),
                setup: ns(sc.lb_setup_latency),
                next_port: NAT_PORT_LO,
                fwd: HashMap::new(),
                rev: HashMap::new(),
            });
            (addr, svc.virtual_port)
        }
    };

    let router = Router::new(
        ReplicaRegistry::new(sc.max_replicas),
        net.router_routes.clone(),
        sc.control_port,
    );
    let per_node = worker_ids.values().map(|id| (id.clone(), 0)).collect();
    let mut sim = Sim {
        net,
        sc,
        now: 0,
        seq: 0,
        queue: BinaryHeap::new(),
        rng: ChaCha8Rng::seed_from_u64(sc.seed),
        router,
        agent,
        nat,
        client,
        cp,
        target,
        worker_ids,
        change_state,
        sessions: Vec::new(),
        by_port: HashMap::new(),
        total_sessions: sc.total_sessions(),
        active: 0,
        started: false,
        worker_seen: HashMap::new(),
        request_times: Vec::new(),
        per_node,
        injected: 0,
        completed: 0,
        dropped: 0,
        sessions_completed: 0,
        sessions_failed: 0,
        affinity_violations: 0,
        misdirected: 0,
        drops: BTreeMap::new(),
        agent_errors: Vec::new(),
        generations: Vec::new(),
        selections: BTreeMap::new(),
        change_gen: None,
    };
    Ok(sim.run())
}

/// Runs `scenario` with the cluster switching to `change` at `change_at`.
/// Running pods of `change` must sit on worker nodes of `net`.
pub fn run_state_change_experiment(
    net: &Network,
    scenario: &Scenario,
    change_at: Duration,
    change: &ClusterState,
) -> Result<SimReport, SimError> {
    let pods = change
        .running_addrs()
        .into_iter()
        .map(|addr| match net.node_by_addr(addr) {
            Some(i) if net.nodes[i].role == Role::Worker => Ok(net.nodes[i].id.clone()),
            _ => Err(SimError::InvalidScenario(format!("no worker node at {addr}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let sc = Scenario {
        change: Some(StateChange { at: change_at, pods }),
        ..scenario.clone()
    };
    run_scenario(net, &sc)
}

impl Sim<'_> {
    fn schedule(&mut self, at: Ns, ev: Ev) {
        self.seq += 1;
        self.queue.push(Reverse(Queued {
            at,
            seq: self.seq,
            ev,
        }));
    }

    fn latency(&self, node: usize, port: u16) -> Option<(usize, Ns)> {
        let att = self.net.ports[node].get(&port)?;
        Some((att.peer, ns(self.sc.per_hop_latency.unwrap_or(att.latency))))
    }

    /// Puts `frame` on the link behind `port` after `delay` of local work.
    fn transmit(&mut self, node: usize, port: Option<u16>, frame: Vec<u8>, delay: Ns) {
        match port.and_then(|p| self.latency(node, p)) {
            Some((peer, lat)) => self.schedule(self.now + delay + lat, Ev::Arrive { node: peer, frame }),
            None => *self.drops.entry("no_link".into()).or_default() += 1,
        }
    }

    fn host_send(&mut self, node: usize, headers: &PacketHeaders, delay: Ns) {
        let dst = headers.ipv4.as_ref().expect("hosts send IPv4").dst_addr;
        let port = self.net.host_egress(node, dst);
        let frame = deparse(headers).expect("hosts build consistent headers");
        self.transmit(node, port, frame, delay);
    }

    fn finished(&self) -> bool {
        self.started && self.active == 0 && self.sessions.len() as u64 == self.total_sessions
    }

    fn run(&mut self) -> SimReport {
        match self.sc.mode {
            Mode::InNetwork => self.schedule(ns(self.sc.agent_start), Ev::AgentTick { first: true }),
            _ => {
                self.started = true;
                self.open_initial_sessions();
            }
        }
        if let Some(c) = &self.sc.change {
            self.schedule(ns(c.at), Ev::Change);
        }
        let horizon = ns(self.sc.horizon);
        while let Some(Reverse(q)) = self.queue.pop() {
            if q.at > horizon {
                break;
            }
            self.now = q.at;
            match q.ev {
                Ev::Arrive { node, frame } => self.arrive(node, frame),
                Ev::StartSession => self.start_session(),
                Ev::SendRequest { session } => self.send_request(session),
                Ev::Timeout { session, token } => self.timeout(session, token),
                Ev::AgentTick { first } => self.agent_tick(first),
                Ev::Change => self.apply_change(),
            }
            if self.finished() {
                break;
            }
        }
        // Anything still open when the run stops counts as dropped.
        for i in 0..self.sessions.len() {
            if self.sessions[i].open {
                self.fail_session(i);
            }
        }
        self.report()
    }

    fn open_initial_sessions(&mut self) {
        let n = (self.sc.concurrency as u64).min(self.total_sessions);
        for _ in 0..n {
            self.schedule(self.now, Ev::StartSession);
        }
    }

    // ---- client ----

    fn start_session(&mut self) {
        let id = self.sessions.len();
        if id as u64 >= self.total_sessions {
            return;
        }
        let k = u64::from(self.sc.requests_per_session);
        let requests = k.min(self.sc.total_requests - id as u64 * k) as u32;
        let port = loop {
            let p = self.rng.gen_range(EPHEMERAL_LO..=EPHEMERAL_HI);
            if !self.by_port.contains_key(&p) {
                break p;
            }
        };
        self.sessions.push(Session {
            port,
            requests,
            done: 0,
            req_start: self.now,
            established: false,
            token: 0,
            open: true,
        });
        self.by_port.insert(port, id);
        self.active += 1;
        self.injected += u64::from(requests);
        self.client_send(id, tcp_flags::SYN, Vec::new());
    }

    fn client_send(&mut self, id: usize, flags: u16, payload: Vec<u8>) {
        let caddr = self.net.nodes[self.client].addr;
        let s = &mut self.sessions[id];
        s.token += 1;
        let token = s.token;
        let mut h = PacketHeaders::tcp((caddr, s.port), self.target, flags, payload);
        if let Some(Transport::Tcp(t)) = h.transport.as_mut() {
            t.seq = s.done;
        }
        h.refresh_checksums();
        self.host_send(self.client, &h, 0);
        self.schedule(self.now + ns(self.sc.request_timeout), Ev::Timeout { session: id, token });
    }

    fn send_request(&mut self, id: usize) {
        if !self.sessions[id].open {
            return;
        }
        self.sessions[id].req_start = self.now;
        let body = format!("GET / HTTP/1.1\r\nhost: {}\r\n\r\n", self.sc.service.name).into_bytes();
        self.client_send(id, tcp_flags::PSH | tcp_flags::ACK, body);
    }

    fn timeout(&mut self, id: usize, token: u64) {
        let s = &self.sessions[id];
        if s.open && s.token == token {
            debug!(session = id, port = s.port, "request timed out");
            self.fail_session(id);
        }
    }

    fn client_receive(&mut self, h: PacketHeaders) {
        let Some(tcp) = h.tcp_header() else { return };
        let src = (h.ipv4.as_ref().unwrap().src_addr, tcp.src_port);
        let Some(&id) = self.by_port.get(&tcp.dst_port) else {
            return;
        };
        if src != self.target {
            self.misdirected += 1;
            return;
        }
        let flags = tcp.flags;
        if flags & tcp_flags::SYN != 0 {
            if !self.sessions[id].established {
                self.sessions[id].established = true;
                let start = self.sessions[id].req_start;
                self.send_request(id);
                // The first request is timed from the SYN.
                self.sessions[id].req_start = start;
            }
            return;
        }
        if h.payload.is_empty() {
            return;
        }
        let served = String::from_utf8_lossy(&h.payload)
            .lines()
            .find_map(|l| l.strip_prefix(SERVED_BY).map(str::to_string));
        let s = &mut self.sessions[id];
        if !s.open {
            return;
        }
        s.token += 1;
        s.done += 1;
        self.request_times.push(self.now - s.req_start);
        self.completed += 1;
        if let Some(node) = served {
            *self.per_node.entry(node).or_default() += 1;
        }
        if s.done == s.requests {
            self.end_session(id, true);
        } else {
            self.schedule(self.now + ns(self.sc.think_time), Ev::SendRequest { session: id });
        }
    }

    fn fail_session(&mut self, id: usize) {
        let s = &self.sessions[id];
        self.dropped += u64::from(s.requests - s.done);
        self.end_session(id, false);
    }

    fn end_session(&mut self, id: usize, ok: bool) {
        let caddr = self.net.nodes[self.client].addr;
        let s = &mut self.sessions[id];
        s.open = false;
        let port = s.port;
        self.by_port.remove(&port);
        self.active -= 1;
        if ok {
            self.sessions_completed += 1;
        } else {
            self.sessions_failed += 1;
        }
        if let Some(seen) = self.worker_seen.remove(&(caddr, port)) {
            if seen.len() > 1 {
                self.affinity_violations += 1;
            }
        }
        self.schedule(self.now + ns(self.sc.think_time), Ev::StartSession);
    }

    // ---- packet arrival ----

    fn arrive(&mut self, node: usize, frame: Vec<u8>) {
        if node == self.net.router {
            return self.router_receive(frame);
        }
        let h = match parse_packet(&frame) {
            Ok(h) if h.checksums_valid() => h,
            _ => {
                *self.drops.entry("host_rejected".into()).or_default() += 1;
                return;
            }
        };
        if h.ipv4.as_ref().map(|ip| ip.dst_addr) != Some(self.net.nodes[node].addr) {
            *self.drops.entry("wrong_host".into()).or_default() += 1;
            return;
        }
        match self.net.nodes[node].role {
            Role::Client => self.client_receive(h),
            Role::Worker => self.worker_receive(node, h),
            _ if self.nat.as_ref().is_some_and(|n| n.node == node) => self.nat_receive(h),
            _ => *self.drops.entry("no_listener".into()).or_default() += 1,
        }
    }

    fn router_receive(&mut self, frame: Vec<u8>) {
        let (d, bytes) = self.router.process_frame(&frame);
        match d.action {
            Action::Forward { egress_port, .. } => {
                if let Some((_, addr)) = d.selected {
                    let g = self.router.registry.generation();
                    *self.selections.entry((g, addr)).or_default() += 1;
                }
                let delay = ns(self.sc.router_delay);
                self.transmit(self.net.router, Some(egress_port), bytes.unwrap(), delay);
            }
            Action::ConsumedControl { generation } => {
                debug!(generation, t_ns = self.now, "registry updated");
                self.generations.push((self.now, generation));
                if !self.started {
                    self.started = true;
                    self.open_initial_sessions();
                }
            }
            Action::Drop(reason) => {
                *self.drops.entry(reason.as_str().into()).or_default() += 1;
            }
        }
    }

    fn worker_receive(&mut self, node: usize, h: PacketHeaders) {
        let Some(tcp) = h.tcp_header() else {
            *self.drops.entry("no_listener".into()).or_default() += 1;
            return;
        };
        if tcp.dst_port != self.sc.service.nodeport_port {
            *self.drops.entry("no_listener".into()).or_default() += 1;
            return;
        }
        let me = self.net.nodes[node].addr;
        let peer = (h.ipv4.as_ref().unwrap().src_addr, tcp.src_port);
        if self.sc.mode == Mode::InNetwork {
            self.worker_seen.entry(peer).or_default().insert(node);
        }
        let local = (me, tcp.dst_port);
        if tcp.flags & tcp_flags::SYN != 0 {
            let reply = PacketHeaders::tcp(local, peer, tcp_flags::SYN | tcp_flags::ACK, Vec::new());
            self.host_send(node, &reply, 0);
        } else if !h.payload.is_empty() {
            let body = format!(
                "HTTP/1.1 200 OK\r\n{SERVED_BY}{}\r\ncontent-length: 0\r\n\r\n",
                self.worker_ids[&node]
            );
            let reply = PacketHeaders::tcp(local, peer, tcp_flags::PSH | tcp_flags::ACK, body.into_bytes());
            self.host_send(node, &reply, ns(self.sc.service_time));
        }
    }

    fn nat_receive(&mut self, mut h: PacketHeaders) {
        let nat = self.nat.as_mut().expect("checked by caller");
        let Some(tcp) = h.tcp_header() else { return };
        let ip = h.ipv4.as_ref().unwrap();
        let (src, dst) = ((ip.src_addr, tcp.src_port), (ip.dst_addr, tcp.dst_port));
        let syn = tcp.flags & tcp_flags::SYN != 0;
        let (new_src, new_dst, delay) = if dst == (nat.addr, nat.listen_port) {
            let mut delay = nat.delay;
            let (port, backend) = match nat.fwd.get(&src) {
                Some(&e) => e,
                None if syn && !nat.backends.is_empty() => {
                    let Some(port) = nat.alloc_port() else {
                        *self.drops.entry("nat_exhausted".into()).or_default() += 1;
                        return;
                    };
                    let backend = nat.backends[nat.rr % nat.backends.len()];
                    nat.rr += 1;
                    nat.fwd.insert(src, (port, backend));
                    nat.rev.insert(port, src);
                    delay += nat.setup;
                    (port, backend)
                }
                None => {
                    *self.drops.entry("nat_no_entry".into()).or_default() += 1;
                    return;
                }
            };
            ((nat.addr, port), (backend, nat.backend_port), delay)
        } else if let Some(&client) = nat.rev.get(&dst.1) {
            ((nat.addr, nat.listen_port), client, nat.delay)
        } else {
            *self.drops.entry("nat_no_entry".into()).or_default() += 1;
            return;
        };
        let ip = h.ipv4.as_mut().unwrap();
        ip.src_addr = new_src.0;
        ip.dst_addr = new_dst.0;
        if let Some(Transport::Tcp(t)) = h.transport.as_mut() {
            t.src_port = new_src.1;
            t.dst_port = new_dst.1;
        }
        h.refresh_checksums();
        let node = nat.node;
        self.host_send(node, &h, delay);
    }

    // ---- control plane ----

    fn agent_tick(&mut self, first: bool) {
        let now = Duration::from_nanos(self.now);
        let Some(agent) = self.agent.as_mut() else { return };
        let result = if first { agent.start(now) } else { agent.poll(now) };
        let frames: Vec<Vec<u8>> = agent.sink_mut().drain(..).collect();
        if let Err(e) = result {
            self.agent_errors.push(e.to_string());
            if first {
                // Startup failures are fatal for the agent.
                self.agent = None;
                return;
            }
        }
        let cp = self.cp.expect("agent runs on the control plane");
        let cp_addr = self.net.nodes[cp].addr;
        let router_addr = self.net.nodes[self.net.router].addr;
        for bytes in frames {
            let frame = control_frame(&bytes, cp_addr, router_addr, AGENT_SRC_PORT, self.sc.control_port);
            let port = self.net.host_egress(cp, router_addr);
            self.transmit(cp, port, frame, 0);
        }
        self.schedule(self.now + ns(self.sc.poll_interval), Ev::AgentTick { first: false });
    }

    fn apply_change(&mut self) {
        let Some(pods) = self.change_state.clone() else { return };
        self.change_gen = Some(self.router.registry.generation());
        if let Some(agent) = self.agent.as_mut() {
            agent.source_mut().set(Some(self.sc.cluster_state(&pods)));
        }
        if let Some(nat) = self.nat.as_mut() {
            nat.backends = pods;
        }
    }

    // ---- summary ----

    fn report(&self) -> SimReport {
        let mut times = self.request_times.clone();
        times.sort_unstable();
        let pct = |p: f64| -> Duration {
            if times.is_empty() {
                return Duration::ZERO;
            }
            let rank = ((p * times.len() as f64).ceil() as usize).clamp(1, times.len());
            Duration::from_nanos(times[rank - 1])
        };
        let mean = if times.is_empty() {
            Duration::ZERO
        } else {
            let sum: u128 = times.iter().map(|&t| u128::from(t)).sum();
            Duration::from_nanos((sum / times.len() as u128) as u64)
        };
        let stats = self.router.stats();
        let started_requests: u64 = self.injected;
        SimReport {
            mode: self.sc.mode,
            seed: self.sc.seed,
            sessions_total: self.total_sessions,
            sessions_completed: self.sessions_completed,
            sessions_failed: self.sessions_failed,
            injected_requests: started_requests,
            completed_requests: self.completed,
            dropped_requests: self.dropped,
            unstarted_requests: self.sc.total_requests - started_requests,
            mean_request_time: mean,
            p50_request_time: pct(0.50),
            p95_request_time: pct(0.95),
            affinity_violations: (self.sc.mode == Mode::InNetwork).then_some(self.affinity_violations),
            registry_generation: self.router.registry.generation(),
            router_forwarded: stats.forwarded,
            router_dropped: stats.dropped,
            misdirected_responses: self.misdirected,
            sim_time: Duration::from_nanos(self.now),
            agent_errors: self.agent_errors.clone(),
            per_node_request_counts: self.per_node.clone(),
            drops_by_reason: self.drops.clone(),
            state_change: self.state_change_report(),
        }
    }

    fn state_change_report(&self) -> Option<StateChangeReport> {
        let change = self.sc.change.as_ref()?;
        let at = ns(change.at);
        let before = self.change_gen.unwrap_or(0);
        let update = self
            .generations
            .iter()
            .find(|&&(t, g)| t >= at && g > before)
            .copied();
        let new_set: BTreeSet<Ipv4Addr> = self.change_state.iter().flatten().copied().collect();
        let mut removed = 0;
        let mut after: BTreeMap<String, u64> =
            self.worker_ids.values().map(|id| (id.clone(), 0)).collect();
        if let Some((_, g)) = update {
            for (&(gen, addr), &n) in self.selections.range((g, Ipv4Addr::UNSPECIFIED)..) {
                debug_assert!(gen >= g);
                if !new_set.contains(&addr) {
                    removed += n;
                }
                if let Some(i) = self.net.node_by_addr(addr) {
                    *after.entry(self.net.nodes[i].id.clone()).or_default() += n;
                }
            }
        }
        Some(StateChangeReport {
            change_at: change.at,
            update_at: update.map(|(t, _)| Duration::from_nanos(t)),
            registry_update_latency: update.map(|(t, _)| Duration::from_nanos(t - at)),
            generation_before: before,
            generation_after: update.map_or(before, |(_, g)| g),
            removed_node_selections: removed,
            selections_after_update: after,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::Topology;

    fn net() -> Network {
        Network::build(&Topology::evaluation(10, Duration::from_micros(100))).unwrap()
    }

    fn base(mode: Mode) -> Scenario {
        Scenario {
            total_requests: 200,
            concurrency: 20,
            requests_per_session: 4,
            ..Scenario::evaluation(mode)
        }
    }

    #[test]
    fn every_mode_completes_cleanly() {
        let net = net();
        for mode in [Mode::InNetwork, Mode::NodePort, Mode::ExternalLb] {
            let r = run_scenario(&net, &base(mode)).unwrap();
            assert_eq!(r.completed_requests, 200, "{mode:?}: {r:?}");
            assert_eq!(r.misdirected_responses, 0, "{mode:?}");
            assert!(r.check_invariants().is_empty(), "{:?}", r.check_invariants());
            assert!(r.drops_by_reason.is_empty(), "{mode:?}: {:?}", r.drops_by_reason);
        }
    }

    #[test]
    fn in_network_timing_is_exact() {
        // One session of one request: SYN round trip plus request round
        // trip, each crossing two links and the router twice.
        let s = Scenario {
            total_requests: 1,
            concurrency: 1,
            ..Scenario::evaluation(Mode::InNetwork)
        };
        let r = run_scenario(&net(), &s).unwrap();
        let rtt = 2 * (2 * 100 + 500);
        assert_eq!(r.mean_request_time, Duration::from_micros(2 * rtt + 2000));
        assert_eq!(r.affinity_violations, Some(0));
        assert_eq!(r.registry_generation, 1);
    }

    #[test]
    fn same_seed_same_report() {
        let net = net();
        let s = base(Mode::InNetwork);
        assert_eq!(run_scenario(&net, &s).unwrap(), run_scenario(&net, &s).unwrap());
    }

    #[test]
    fn zero_requests_is_empty() {
        let s = Scenario {
            total_requests: 0,
            ..Scenario::default()
        };
        assert!(run_scenario(&net(), &s).unwrap().is_empty());
    }

    #[test]
    fn unknown_pod_worker_rejected() {
        let s = Scenario {
            pods: vec!["worker42".into()],
            ..Scenario::default()
        };
        assert!(matches!(run_scenario(&net(), &s), Err(SimError::InvalidScenario(_))));
    }

    #[test]
    fn too_many_pods_stops_agent() {
        let s = Scenario {
            pods: (1..=11).map(|i| format!("worker{}", 1 + i % 10)).collect(),
            ..Scenario::default()
        };
        let r = run_scenario(&net(), &s).unwrap();
        assert_eq!(r.registry_generation, 0);
        assert_eq!(r.agent_errors.len(), 1);
        assert_eq!(r.unstarted_requests, s.total_requests);
    }

    #[test]
    fn scale_down_observed() {
        let s = Scenario {
            total_requests: 2000,
            concurrency: 10,
            think_time: Duration::from_millis(20),
            change: Some(StateChange {
                at: Duration::from_millis(2500),
                pods: (1..=5).map(|i| format!("worker{i}")).collect(),
            }),
            ..Scenario::evaluation(Mode::InNetwork)
        };
        let r = run_scenario(&net(), &s).unwrap();
        let sc = r.state_change.unwrap();
        assert_eq!(sc.generation_before, 1);
        assert_eq!(sc.generation_after, 2);
        assert!(sc.registry_update_latency.unwrap() <= Duration::from_millis(2500));
        assert_eq!(sc.removed_node_selections, 0);
        assert!(sc.selections_after_update["worker5"] > 0);
        assert_eq!(sc.selections_after_update["worker6"], 0);
    }
}
