// SPDX-License-Identifier: Apache-2.0
// Copyright The inlb Authors

use std::net::Ipv4Addr;
use std::time::Duration;

use inlb_core::agent::{
    build_payload, Agent, AgentError, ClusterState, MemorySource, PodPhase, Replica,
};
use inlb_core::control::{decode_control, encode_control};
use proptest::prelude::*;

fn state(nodes: &[u8]) -> ClusterState {
    ClusterState {
        service_name: "web".into(),
        virtual_addr: Ipv4Addr::new(192, 0, 2, 10),
        virtual_port: 80,
        nodeport_port: 30080,
        replicas: nodes
            .iter()
            .enumerate()
            .map(|(i, &n)| Replica {
                pod_id: format!("web-{i}"),
                node_addr: Ipv4Addr::new(10, 0, 1, n),
                phase: PodPhase::Running,
            })
            .collect(),
    }
}

fn replica_sets() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(1u8..=10, 1..=10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// n effective changes, each observed by its own poll, give n + 1 packets.
    #[test]
    fn one_packet_per_change(sets in prop::collection::vec(replica_sets(), 1..8)) {
        let poll = Duration::from_secs(2);
        let mut agent = Agent::new(MemorySource::new(state(&sets[0])), Vec::new(), 10);
        agent.start(Duration::ZERO).unwrap();
        let mut now = Duration::ZERO;
        let mut expected = 1;
        let mut last = {
            let mut s = sets[0].clone();
            s.sort();
            s
        };
        for set in &sets[1..] {
            agent.source_mut().set(Some(state(set)));
            now += poll + Duration::from_millis(1);
            agent.poll(now).unwrap();
            // Unchanged polls in between emit nothing.
            agent.poll(now + poll).unwrap();
            now += poll;
            let mut sorted = set.clone();
            sorted.sort();
            if sorted != last {
                expected += 1;
                last = sorted;
            }
        }
        prop_assert_eq!(agent.sent(), expected);
        prop_assert_eq!(agent.sink_mut().len() as u64, expected);
    }

    #[test]
    fn payloads_are_deterministic_and_valid(set in replica_sets()) {
        let a = build_payload(&state(&set), 10).unwrap();
        let mut rev = set.clone();
        rev.reverse();
        let b = build_payload(&state(&rev), 10).unwrap();
        let bytes = encode_control(&a, 10).unwrap();
        prop_assert_eq!(&bytes, &encode_control(&b, 10).unwrap());
        prop_assert_eq!(decode_control(&bytes, 10).unwrap(), a.clone());
        let mut sorted = a.replica_addrs.clone();
        sorted.sort();
        prop_assert_eq!(a.replica_addrs, sorted);
    }

    #[test]
    fn non_running_pods_excluded(set in replica_sets(), mask in prop::collection::vec(any::<bool>(), 10)) {
        let mut st = state(&set);
        for (r, &pending) in st.replicas.iter_mut().zip(&mask) {
            if pending {
                r.phase = PodPhase::Terminating;
            }
        }
        let running = st.replicas.iter().filter(|r| r.phase == PodPhase::Running).count();
        match build_payload(&st, 10) {
            Ok(p) => prop_assert_eq!(p.replica_count(), running),
            Err(AgentError::NoRunningReplicas) => prop_assert_eq!(running, 0),
            Err(e) => prop_assert!(false, "{}", e),
        }
    }
}

#[test]
fn eleven_running_pods_rejected() {
    let st = state(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 1]);
    assert!(matches!(
        build_payload(&st, 10),
        Err(AgentError::TooManyReplicas { count: 11, max: 10 })
    ));
    let mut agent = Agent::new(MemorySource::new(st), Vec::new(), 10);
    assert!(agent.start(Duration::ZERO).is_err());
    assert_eq!(agent.sent(), 0);
}
