// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

use std::fs;
use std::io::{self, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use inlb_core::agent::{build_payload, run_agent, AgentConfig, ClusterState};
use inlb_core::control::{decode_control, encode_control, DEFAULT_CONTROL_PORT, DEFAULT_MAX_REPLICAS};
use inlb_core::dataplane::parse_routes;
use inlb_core::netsim::{
    build_topology, export_report, run_scenario, ReportFormat, Scenario, SimReport, Topology,
};
use tracing::{error, info};
use tracing_subscriber::EnvFilter;

/// Exit status when a simulation breaks one of its own invariants.
const EXIT_INVARIANT: u8 = 3;

/// Writes to stdout; a closed pipe ends the process quietly.
fn emit(args: std::fmt::Arguments) {
    if let Err(e) = io::stdout().lock().write_fmt(args) {
        if e.kind() == io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: stdout: {e}");
        std::process::exit(1);
    }
}

macro_rules! out {
    ($($t:tt)*) => { emit(format_args!($($t)*)) };
}

macro_rules! outln {
    ($($t:tt)*) => { emit(format_args!("{}\n", format_args!($($t)*))) };
}

#[derive(Parser)]
#[command(name = "inlb", version, about = "In-network L4 load balancer tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation scenario and report per-node counts and timings.
    Simulate(SimulateArgs),
    /// Watch a cluster state file and push control packets to the dataplane.
    Agent(AgentArgs),
    /// Build the control payload for a cluster state file and print it as hex.
    ControlEncode(EncodeArgs),
    /// Decode a hex control payload and print its fields.
    ControlDecode(DecodeArgs),
    /// Validate a route file and optionally look up addresses.
    RoutesCheck(RoutesArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, env = "INLB_SCENARIO")]
    scenario: PathBuf,
    /// Topology file; defaults to the ten-worker testbed.
    #[arg(long, env = "INLB_TOPOLOGY")]
    topology: Option<PathBuf>,
    /// Overrides the scenario's seed.
    #[arg(long, env = "INLB_SEED")]
    seed: Option<u64>,
    /// Report file; nothing is written without it.
    #[arg(long, env = "INLB_OUT")]
    out: Option<PathBuf>,
    /// csv (node_id,requests), metrics (metric,value) or text.
    #[arg(long, env = "INLB_FORMAT", default_value = "csv")]
    format: String,
    /// Overrides the scenario's poll interval, in seconds.
    #[arg(long, env = "INLB_POLL_INTERVAL")]
    poll_interval: Option<f64>,
    #[arg(long, env = "INLB_CONTROL_PORT")]
    control_port: Option<u16>,
    #[arg(long, env = "INLB_MAX_REPLICAS")]
    max_replicas: Option<usize>,
}

#[derive(Args)]
struct AgentArgs {
    #[arg(long, env = "INLB_STATE")]
    state: PathBuf,
    /// Dataplane address receiving control packets.
    #[arg(long, env = "INLB_DATAPLANE", default_value = "127.0.0.1")]
    dataplane: Ipv4Addr,
    /// Seconds between state file polls.
    #[arg(long, env = "INLB_POLL_INTERVAL", default_value_t = 2.0)]
    poll_interval: f64,
    #[arg(long, env = "INLB_CONTROL_PORT", default_value_t = DEFAULT_CONTROL_PORT)]
    control_port: u16,
    #[arg(long, env = "INLB_MAX_REPLICAS", default_value_t = DEFAULT_MAX_REPLICAS)]
    max_replicas: usize,
    /// Stop after this many polls instead of running forever.
    #[arg(long, env = "INLB_MAX_POLLS")]
    max_polls: Option<u64>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long, env = "INLB_STATE")]
    state: PathBuf,
    #[arg(long, env = "INLB_MAX_REPLICAS", default_value_t = DEFAULT_MAX_REPLICAS)]
    max_replicas: usize,
    /// Also write the hex dump to this file.
    #[arg(long, env = "INLB_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Hex bytes; whitespace allowed.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    hex: Option<String>,
    /// File holding a hex dump; lines starting with `#` are ignored.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, env = "INLB_MAX_REPLICAS", default_value_t = DEFAULT_MAX_REPLICAS)]
    max_replicas: usize,
}

#[derive(Args)]
struct RoutesArgs {
    #[arg(long, env = "INLB_ROUTES")]
    routes: PathBuf,
    /// Addresses to resolve against the table.
    #[arg(long)]
    lookup: Vec<Ipv4Addr>,
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn seconds(v: f64, flag: &str) -> Result<Duration, String> {
    if v.is_finite() && v > 0.0 {
        Ok(Duration::from_secs_f64(v))
    } else {
        Err(format!("--{flag} must be a positive number of seconds"))
    }
}

fn hex_dump(bytes: &[u8]) -> String {
    bytes
        .chunks(16)
        .map(|c| {
            let words: Vec<String> = c.iter().map(|b| format!("{b:02x}")).collect();
            words.join(" ") + "\n"
        })
        .collect()
}

fn summary(r: &SimReport) -> String {
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let mut s = format!(
        "mode {}  seed {}\nrequests  injected {}  completed {}  dropped {}  unstarted {}\n\
         request time  mean {:.3} ms  p50 {:.3} ms  p95 {:.3} ms\n",
        r.mode.as_str(),
        r.seed,
        r.injected_requests,
        r.completed_requests,
        r.dropped_requests,
        r.unstarted_requests,
        ms(r.mean_request_time),
        ms(r.p50_request_time),
        ms(r.p95_request_time),
    );
    if let Some(v) = r.affinity_violations {
        s += &format!("affinity violations {v}\n");
    }
    if let Some(sc) = &r.state_change {
        match sc.registry_update_latency {
            Some(l) => s += &format!("registry update latency {:.3} ms\n", ms(l)),
            None => s += "registry update not observed\n",
        }
        s += &format!("removed-node selections {}\n", sc.removed_node_selections);
    }
    for e in &r.agent_errors {
        s += &format!("agent error: {e}\n");
    }
    s += "node        requests\n";
    for (node, n) in &r.per_node_request_counts {
        s += &format!("{node:<12}{n}\n");
    }
    s
}

fn simulate(a: SimulateArgs) -> Result<ExitCode, String> {
    let format: ReportFormat = a.format.parse().map_err(|e| format!("{e}"))?;
    let mut scenario =
        Scenario::from_toml(&read(&a.scenario)?).map_err(|e| format!("{}: {e}", a.scenario.display()))?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    if let Some(p) = a.poll_interval {
        scenario.poll_interval = seconds(p, "poll-interval")?;
    }
    if let Some(p) = a.control_port {
        scenario.control_port = p;
    }
    if let Some(m) = a.max_replicas {
        scenario.max_replicas = m;
    }
    let topology = match &a.topology {
        Some(p) => Topology::from_toml(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
        None => Topology::evaluation(10, Duration::from_micros(100)),
    };
    let net = build_topology(&topology).map_err(|e| e.to_string())?;
    let report = run_scenario(&net, &scenario).map_err(|e| e.to_string())?;
    out!("{}", summary(&report));
    if let Some(out) = &a.out {
        fs::write(out, export_report(&report, format)).map_err(|e| format!("{}: {e}", out.display()))?;
        info!(path = %out.display(), "report written");
    }
    let violations = report.check_invariants();
    if violations.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &violations {
            error!("invariant violated: {v}");
        }
        Ok(ExitCode::from(EXIT_INVARIANT))
    }
}

fn agent(a: AgentArgs) -> Result<ExitCode, String> {
    let config = AgentConfig {
        state_source: a.state,
        poll_interval: seconds(a.poll_interval, "poll-interval")?,
        control_port: a.control_port,
        dataplane_addr: a.dataplane,
        max_replicas: a.max_replicas,
    };
    run_agent(&config, a.max_polls).map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}

fn control_encode(a: EncodeArgs) -> Result<ExitCode, String> {
    let state = ClusterState::from_toml(&read(&a.state)?).map_err(|e| format!("{}: {e}", a.state.display()))?;
    let payload = build_payload(&state, a.max_replicas).map_err(|e| e.to_string())?;
    let bytes = encode_control(&payload, a.max_replicas).map_err(|e| e.to_string())?;
    let dump = hex_dump(&bytes);
    out!("{dump}");
    let back = decode_control(&bytes, a.max_replicas).map_err(|e| e.to_string())?;
    if back != payload {
        return Err("decode(encode(payload)) differs from payload".into());
    }
    outln!("{} bytes, roundtrip PASS", bytes.len());
    if let Some(out) = &a.out {
        fs::write(out, dump).map_err(|e| format!("{}: {e}", out.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn control_decode(a: DecodeArgs) -> Result<ExitCode, String> {
    let text = match (&a.hex, &a.input) {
        (Some(h), _) => h.clone(),
        (None, Some(p)) => read(p)?
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .collect::<Vec<_>>()
            .join(" "),
        (None, None) => unreachable!("clap requires one input"),
    };
    let compact: String = text.split_whitespace().collect();
    let bytes = hex::decode(&compact).map_err(|e| format!("invalid hex input: {e}"))?;
    let payload = decode_control(&bytes, a.max_replicas).map_err(|e| {
        format!("{e} (field `{}` at byte offset {})", e.field(), e.offset())
    })?;
    out!("{payload}");
    let again = encode_control(&payload, a.max_replicas).map_err(|e| e.to_string())?;
    if again != bytes {
        return Err("encode(decode(bytes)) differs from input".into());
    }
    outln!("roundtrip PASS");
    Ok(ExitCode::SUCCESS)
}

fn routes_check(a: RoutesArgs) -> Result<ExitCode, String> {
    let table = parse_routes(&read(&a.routes)?).map_err(|e| format!("{}: {e}", a.routes.display()))?;
    outln!("{} routes OK", table.len());
    out!("{}", table.to_route_file());
    for addr in a.lookup {
        match table.lookup(addr) {
            Ok(r) => outln!("{addr} -> {r}"),
            Err(e) => outln!("{addr} -> {e}"),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_env("INLB_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Simulate(a) => simulate(a),
        Command::Agent(a) => agent(a),
        Command::ControlEncode(a) => control_encode(a),
        Command::ControlDecode(a) => control_decode(a),
        Command::RoutesCheck(a) => routes_check(a),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
