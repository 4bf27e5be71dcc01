// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

//! Python module `inlb`.

use std::net::Ipv4Addr;
use std::time::Duration;

use inlb_core::control::{decode_control, encode_control, ControlPayload, DEFAULT_CONTROL_PORT,
    DEFAULT_MAX_REPLICAS};
use inlb_core::dataplane::{parse_routes, Action, LpmTable, ReplicaRegistry, Router};
use inlb_core::netsim::{build_topology, export_report, ReportFormat, Scenario, SimReport, Topology};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn addr(s: &str) -> PyResult<Ipv4Addr> {
    s.parse().map_err(|_| value_err(format!("invalid IPv4 address `{s}`")))
}

#[pyclass(name = "ControlPayload", module = "inlb", eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyControlPayload {
    inner: ControlPayload,
}

#[pymethods]
impl PyControlPayload {
    #[new]
    fn new(nodeport_port: u16, virtual_addr: &str, virtual_port: u16, replica_addrs: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: ControlPayload {
                nodeport_port,
                virtual_addr: addr(virtual_addr)?,
                virtual_port,
                replica_addrs: replica_addrs.iter().map(|s| addr(s)).collect::<PyResult<_>>()?,
            },
        })
    }

    #[getter]
    fn nodeport_port(&self) -> u16 {
        self.inner.nodeport_port
    }

    #[getter]
    fn virtual_addr(&self) -> String {
        self.inner.virtual_addr.to_string()
    }

    #[getter]
    fn virtual_port(&self) -> u16 {
        self.inner.virtual_port
    }

    #[getter]
    fn replica_addrs(&self) -> Vec<String> {
        self.inner.replica_addrs.iter().map(Ipv4Addr::to_string).collect()
    }

    #[pyo3(signature = (max_replicas = DEFAULT_MAX_REPLICAS))]
    fn encode<'py>(&self, py: Python<'py>, max_replicas: usize) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = encode_control(&self.inner, max_replicas).map_err(value_err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[staticmethod]
    #[pyo3(signature = (data, max_replicas = DEFAULT_MAX_REPLICAS))]
    fn decode(data: &[u8], max_replicas: usize) -> PyResult<Self> {
        decode_control(data, max_replicas)
            .map(|inner| Self { inner })
            .map_err(|e| value_err(format!("{e} (field `{}` at byte offset {})", e.field(), e.offset())))
    }

    fn __len__(&self) -> usize {
        self.inner.encoded_len()
    }

    fn __repr__(&self) -> String {
        format!(
            "ControlPayload(nodeport_port={}, virtual_addr='{}', virtual_port={}, replica_addrs={:?})",
            self.inner.nodeport_port,
            self.inner.virtual_addr,
            self.inner.virtual_port,
            self.replica_addrs()
        )
    }
}

#[pyclass(name = "LpmTable", module = "inlb")]
struct PyLpmTable {
    inner: LpmTable,
}

#[pymethods]
impl PyLpmTable {
    #[new]
    fn new() -> Self {
        Self { inner: LpmTable::new() }
    }

    /// Parses route-file text (`prefix/len next_hop egress_port` per line).
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        parse_routes(text).map(|inner| Self { inner }).map_err(value_err)
    }

    /// Inserts `prefix` in CIDR notation.
    fn insert(&mut self, prefix: &str, next_hop: &str, egress_port: u16) -> PyResult<()> {
        let (p, l) = prefix
            .split_once('/')
            .ok_or_else(|| value_err(format!("`{prefix}` is not in CIDR notation")))?;
        let len: u8 = l.parse().map_err(|_| value_err(format!("bad prefix length `{l}`")))?;
        self.inner.insert(addr(p)?, len, addr(next_hop)?, egress_port).map_err(value_err)?;
        Ok(())
    }

    /// Returns `(prefix, next_hop, egress_port)` or raises KeyError.
    fn lookup(&self, dst: &str) -> PyResult<(String, String, u16)> {
        let r = self.inner.lookup(addr(dst)?).map_err(|e| PyKeyError::new_err(e.to_string()))?;
        Ok((format!("{}/{}", r.prefix, r.prefix_len), r.next_hop.to_string(), r.egress_port))
    }

    fn to_route_file(&self) -> String {
        self.inner.to_route_file()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Router", module = "inlb")]
struct PyRouter {
    inner: Router,
}

#[pymethods]
impl PyRouter {
    #[new]
    #[pyo3(signature = (routes = "", control_port = DEFAULT_CONTROL_PORT, max_replicas = DEFAULT_MAX_REPLICAS))]
    fn new(routes: &str, control_port: u16, max_replicas: usize) -> PyResult<Self> {
        let table = parse_routes(routes).map_err(value_err)?;
        Ok(Self {
            inner: Router::new(ReplicaRegistry::new(max_replicas), table, control_port),
        })
    }

    fn apply_control(&mut self, payload: PyRef<'_, PyControlPayload>) -> PyResult<u64> {
        self.inner.registry.apply_control(&payload.inner).map_err(value_err)
    }

    #[getter]
    fn generation(&self) -> u64 {
        self.inner.registry.generation()
    }

    #[getter]
    fn replicas(&self) -> Vec<String> {
        self.inner.registry.replicas().iter().map(Ipv4Addr::to_string).collect()
    }

    fn registry_snapshot(&self) -> String {
        self.inner.registry.snapshot()
    }

    /// Runs one Ethernet frame through the pipeline. Returns a dict with
    /// `action` ("forward", "drop" or "control"), `class`, and the
    /// action-specific keys `egress_port`, `next_hop`, `frame`, `selected`,
    /// `reason` and `generation`.
    fn process_frame<'py>(&mut self, py: Python<'py>, frame: &[u8]) -> PyResult<Bound<'py, PyDict>> {
        let (d, bytes) = self.inner.process_frame(frame);
        let out = PyDict::new(py);
        out.set_item("class", d.class.map(|c| c.as_str()))?;
        out.set_item("selected", d.selected.map(|(i, a)| (i, a.to_string())))?;
        match d.action {
            Action::Forward { egress_port, next_hop } => {
                out.set_item("action", "forward")?;
                out.set_item("egress_port", egress_port)?;
                out.set_item("next_hop", next_hop.to_string())?;
                out.set_item("frame", PyBytes::new(py, &bytes.unwrap_or_default()))?;
            }
            Action::Drop(reason) => {
                out.set_item("action", "drop")?;
                out.set_item("reason", reason.to_string())?;
            }
            Action::ConsumedControl { generation } => {
                out.set_item("action", "control")?;
                out.set_item("generation", generation)?;
            }
        }
        Ok(out)
    }
}

#[pyfunction]
fn crc16(data: &[u8]) -> u16 {
    inlb_core::codec::crc16(data)
}

fn simulate(scenario: &str, topology: Option<&str>, seed: Option<u64>) -> PyResult<SimReport> {
    let mut sc = Scenario::from_toml(scenario).map_err(value_err)?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    let topo = match topology {
        Some(t) => Topology::from_toml(t).map_err(value_err)?,
        None => Topology::evaluation(10, Duration::from_micros(100)),
    };
    let net = build_topology(&topo).map_err(value_err)?;
    inlb_core::netsim::run_scenario(&net, &sc).map_err(value_err)
}

/// Runs a scenario given as TOML text. Returns a dict of headline metrics
/// plus `per_node_request_counts`.
#[pyfunction]
#[pyo3(signature = (scenario, topology = None, seed = None))]
fn run_scenario<'py>(
    py: Python<'py>,
    scenario: &str,
    topology: Option<&str>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = simulate(scenario, topology, seed)?;
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let out = PyDict::new(py);
    out.set_item("mode", r.mode.as_str())?;
    out.set_item("seed", r.seed)?;
    out.set_item("injected_requests", r.injected_requests)?;
    out.set_item("completed_requests", r.completed_requests)?;
    out.set_item("dropped_requests", r.dropped_requests)?;
    out.set_item("mean_request_time_ms", ms(r.mean_request_time))?;
    out.set_item("p50_request_time_ms", ms(r.p50_request_time))?;
    out.set_item("p95_request_time_ms", ms(r.p95_request_time))?;
    out.set_item("affinity_violations", r.affinity_violations)?;
    out.set_item("registry_generation", r.registry_generation)?;
    out.set_item(
        "registry_update_latency_ms",
        r.state_change.as_ref().and_then(|s| s.registry_update_latency).map(ms),
    )?;
    out.set_item("per_node_request_counts", r.per_node_request_counts.clone())?;
    out.set_item("invariant_violations", r.check_invariants())?;
    Ok(out)
}

/// Runs a scenario and renders the report as "csv", "metrics" or "text".
#[pyfunction]
#[pyo3(signature = (scenario, format = "csv", topology = None, seed = None))]
fn export_scenario(scenario: &str, format: &str, topology: Option<&str>, seed: Option<u64>) -> PyResult<String> {
    let f: ReportFormat = format.parse().map_err(value_err)?;
    Ok(export_report(&simulate(scenario, topology, seed)?, f))
}

#[pymodule]
fn inlb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyControlPayload>()?;
    m.add_class::<PyLpmTable>()?;
    m.add_class::<PyRouter>()?;
    m.add_function(wrap_pyfunction!(crc16, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(export_scenario, m)?)?;
    m.add("DEFAULT_CONTROL_PORT", DEFAULT_CONTROL_PORT)?;
    m.add("DEFAULT_MAX_REPLICAS", DEFAULT_MAX_REPLICAS)?;
    Ok(())
}
