// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Duration;

use serde::Serialize;

use super::{millis, Mode, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// `node_id,requests`
    Csv,
    /// `metric,value`
    Metrics,
    /// TOML rendering of the whole report.
    Text,
}

impl FromStr for ReportFormat {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "csv" => Ok(Self::Csv),
            "metrics" => Ok(Self::Metrics),
            "text" => Ok(Self::Text),
            other => Err(SimError::UnsupportedFormat(other.into())),
        }
    }
}

/// What happened around a replica-set change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateChangeReport {
    #[serde(rename = "change_at_ms", with = "millis")]
    pub change_at: Duration,
    #[serde(rename = "update_at_ms", with = "millis::opt", skip_serializing_if = "Option::is_none")]
    pub update_at: Option<Duration>,
    /// From the change to the first registry generation bump after it.
    #[serde(
        rename = "registry_update_latency_ms",
        with = "millis::opt",
        skip_serializing_if = "Option::is_none"
    )]
    pub registry_update_latency: Option<Duration>,
    pub generation_before: u64,
    pub generation_after: u64,
    /// Router selections of nodes outside the new replica set, counted from
    /// the update on.
    pub removed_node_selections: u64,
    /// Router selections per worker, counted from the update on.
    pub selections_after_update: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub mode: Mode,
    pub seed: u64,
    pub sessions_total: u64,
    pub sessions_completed: u64,
    pub sessions_failed: u64,
    /// Requests belonging to sessions that were opened.
    pub injected_requests: u64,
    pub completed_requests: u64,
    pub dropped_requests: u64,
    /// Requests of sessions never opened before the run ended.
    pub unstarted_requests: u64,
    #[serde(rename = "mean_request_time_ms", with = "millis")]
    pub mean_request_time: Duration,
    #[serde(rename = "p50_request_time_ms", with = "millis")]
    pub p50_request_time: Duration,
    #[serde(rename = "p95_request_time_ms", with = "millis")]
    pub p95_request_time: Duration,
    /// Sessions whose packets reached more than one worker. Only tracked
    /// in in-network mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affinity_violations: Option<u64>,
    pub registry_generation: u64,
    pub router_forwarded: u64,
    pub router_dropped: u64,
    /// Responses that did not come from the address the client dialed.
    pub misdirected_responses: u64,
    #[serde(rename = "sim_time_ms", with = "millis")]
    pub sim_time: Duration,
    pub agent_errors: Vec<String>,
    /// Completed requests by the worker that served them.
    pub per_node_request_counts: BTreeMap<String, u64>,
    pub drops_by_reason: BTreeMap<String, u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_change: Option<StateChangeReport>,
}

impl SimReport {
    pub fn empty(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            sessions_total: 0,
            sessions_completed: 0,
            sessions_failed: 0,
            injected_requests: 0,
            completed_requests: 0,
            dropped_requests: 0,
            unstarted_requests: 0,
            mean_request_time: Duration::ZERO,
            p50_request_time: Duration::ZERO,
            p95_request_time: Duration::ZERO,
            affinity_violations: None,
            registry_generation: 0,
            router_forwarded: 0,
            router_dropped: 0,
            misdirected_responses: 0,
            sim_time: Duration::ZERO,
            agent_errors: Vec::new(),
            per_node_request_counts: BTreeMap::new(),
            drops_by_reason: BTreeMap::new(),
            state_change: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.injected_requests == 0 && self.unstarted_requests == 0
    }

    /// Internal consistency checks; returns one message per violation.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.completed_requests + self.dropped_requests != self.injected_requests {
            out.push(format!(
                "completed {} + dropped {} != injected {}",
                self.completed_requests, self.dropped_requests, self.injected_requests
            ));
        }
        let served: u64 = self.per_node_request_counts.values().sum();
        if served != self.completed_requests {
            out.push(format!(
                "per-node counts sum to {served}, completed is {}",
                self.completed_requests
            ));
        }
        if self.p50_request_time > self.p95_request_time {
            out.push("p50 exceeds p95".into());
        }
        if self.sessions_completed + self.sessions_failed > self.sessions_total {
            out.push("more sessions finished than exist".into());
        }
        out
    }

    pub fn node_share(&self, node: &str) -> f64 {
        if self.completed_requests == 0 {
            return 0.0;
        }
        *self.per_node_request_counts.get(node).unwrap_or(&0) as f64
            / self.completed_requests as f64
    }

    fn metrics(&self) -> Vec<(&'static str, String)> {
        let ms = |d: Duration| format!("{:.6}", d.as_secs_f64() * 1e3);
        let mut m = vec![
            ("mode", self.mode.as_str().to_string()),
            ("seed", self.seed.to_string()),
            ("sessions_total", self.sessions_total.to_string()),
            ("sessions_completed", self.sessions_completed.to_string()),
            ("sessions_failed", self.sessions_failed.to_string()),
            ("injected_requests", self.injected_requests.to_string()),
            ("completed_requests", self.completed_requests.to_string()),
            ("dropped_requests", self.dropped_requests.to_string()),
            ("unstarted_requests", self.unstarted_requests.to_string()),
            ("mean_request_time_ms", ms(self.mean_request_time)),
            ("p50_request_time_ms", ms(self.p50_request_time)),
            ("p95_request_time_ms", ms(self.p95_request_time)),
        ];
        if let Some(v) = self.affinity_violations {
            m.push(("affinity_violations", v.to_string()));
        }
        m.extend([
            ("registry_generation", self.registry_generation.to_string()),
            ("router_forwarded", self.router_forwarded.to_string()),
            ("router_dropped", self.router_dropped.to_string()),
            ("misdirected_responses", self.misdirected_responses.to_string()),
            ("sim_time_ms", ms(self.sim_time)),
        ]);
        if let Some(sc) = &self.state_change {
            if let Some(l) = sc.registry_update_latency {
                m.push(("registry_update_latency_ms", ms(l)));
            }
            m.push(("removed_node_selections", sc.removed_node_selections.to_string()));
        }
        m
    }
}

pub fn export_report(report: &SimReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut s = String::from("node_id,requests\n");
            for (node, n) in &report.per_node_request_counts {
                let _ = writeln!(s, "{node},{n}");
            }
            s
        }
        ReportFormat::Metrics => {
            let mut s = String::from("metric,value\n");
            if report.is_empty() {
                return s;
            }
            for (k, v) in report.metrics() {
                let _ = writeln!(s, "{k},{v}");
            }
            s
        }
        ReportFormat::Text => toml::to_string(report).expect("report serializes"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SimReport {
        let mut r = SimReport::empty(Mode::InNetwork, 7);
        r.sessions_total = 2;
        r.sessions_completed = 2;
        r.injected_requests = 3;
        r.completed_requests = 3;
        r.per_node_request_counts = BTreeMap::from([("worker1".into(), 2), ("worker2".into(), 1)]);
        r.mean_request_time = Duration::from_micros(2500);
        r.p50_request_time = Duration::from_millis(2);
        r.p95_request_time = Duration::from_millis(3);
        r.affinity_violations = Some(0);
        r
    }

    #[test]
    fn format_parse() {
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert_eq!("text".parse::<ReportFormat>().unwrap(), ReportFormat::Text);
        assert_eq!(
            "xml".parse::<ReportFormat>().unwrap_err(),
            SimError::UnsupportedFormat("xml".into())
        );
    }

    #[test]
    fn csv_outputs() {
        let r = sample();
        assert_eq!(
            export_report(&r, ReportFormat::Csv),
            "node_id,requests\nworker1,2\nworker2,1\n"
        );
        let m = export_report(&r, ReportFormat::Metrics);
        assert!(m.starts_with("metric,value\nmode,in_network\n"), "{m}");
        assert!(m.contains("mean_request_time_ms,2.500000\n"), "{m}");
        assert!(m.contains("affinity_violations,0\n"), "{m}");
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = SimReport::empty(Mode::NodePort, 1);
        assert!(r.is_empty());
        assert_eq!(export_report(&r, ReportFormat::Csv), "node_id,requests\n");
        assert_eq!(export_report(&r, ReportFormat::Metrics), "metric,value\n");
        assert!(r.check_invariants().is_empty());
    }

    #[test]
    fn text_is_toml() {
        let text = export_report(&sample(), ReportFormat::Text);
        let v: toml::Table = text.parse().unwrap();
        assert_eq!(v["completed_requests"].as_integer(), Some(3));
        assert_eq!(v["per_node_request_counts"]["worker1"].as_integer(), Some(2));
        assert_eq!(v["mean_request_time_ms"].as_float(), Some(2.5));
    }

    #[test]
    fn invariant_messages() {
        let mut r = sample();
        assert!(r.check_invariants().is_empty());
        r.dropped_requests = 1;
        r.per_node_request_counts.insert("worker3".into(), 1);
        assert_eq!(r.check_invariants().len(), 2);
    }
}
