//! Full-stack checks: real TLS connections from the scan client to
//! live simulated edges, through classification and reporting.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};

use frontscope_core::candidate_sets::{DestinationTuple, GroupKey, GroupingKind, ScanPair};
use frontscope_core::cdn_simulator::{
    seeded_body, start_edge, start_scenario, CertMode, EdgeConfig, OriginBinding, PolicyPreset,
    Scenario, TestCa,
};
use frontscope_core::classifier::{
    cert_covers, classify_all, PruneReason, ResultReason, TechniqueStatus,
};
use frontscope_core::report::{aggregate_by_group, split_outcomes};
use frontscope_core::scan_engine::{
    execute_all, https_get, https_send_raw, plan_all, prefilter_tuples, retry_failed, ScanConfig,
    ScanRole,
};

fn test_config() -> ScanConfig {
    let mut cfg = ScanConfig::default();
    cfg.parallelism = 8;
    cfg.retry_delay = std::time::Duration::from_millis(10);
    cfg
}

fn edge_with(
    preset: PolicyPreset,
    domains: &[(&str, Ipv4Addr, u64)],
    ca: &TestCa,
) -> frontscope_core::cdn_simulator::EdgeHandle {
    let bindings = domains
        .iter()
        .map(|(name, _, len)| {
            let mut b = OriginBinding::seeded(name, *len);
            b.extra_headers = vec![("X-Node".to_string(), name.to_string())];
            b
        })
        .collect();
    let cert_mode = if preset.shares_wildcard_cert() {
        CertMode::SharedWildcard { zone: "sim.test".to_string() }
    } else {
        CertMode::PerDomain
    };
    start_edge(
        EdgeConfig {
            policy: preset.policy(),
            bindings,
            listeners: domains.iter().map(|(_, ip, _)| *ip).collect(),
            port: 0,
            cert_mode,
            reject_first_n: 0,
        },
        ca,
    )
    .expect("edge starts")
}

const IP_A: Ipv4Addr = Ipv4Addr::new(127, 31, 0, 10);
const IP_B: Ipv4Addr = Ipv4Addr::new(127, 31, 0, 11);

#[test]
fn permissive_edge_routes_by_host_and_presents_sni_cert() {
    let ca = TestCa::new().unwrap();
    let edge = edge_with(
        PolicyPreset::FrontingPermissive,
        &[("a.sim.test", IP_A, 1200), ("b.sim.test", IP_B, 3400)],
        &ca,
    );
    let addr_a = SocketAddr::new(IpAddr::V4(IP_A), edge.port);
    let cfg = test_config();

    let honest = https_get(addr_a, Some("a.sim.test"), "a.sim.test", &cfg).unwrap();
    assert_eq!(honest.status, 200);
    assert_eq!(honest.body, seeded_body("a.sim.test", 1200));
    assert_eq!(
        honest.leaf_cert.as_ref().unwrap().subject_common_name.as_deref(),
        Some("a.sim.test")
    );

    // Fronted: SNI says a, Host says b. Permissive edges serve b's
    // content behind a's certificate.
    let fronted = https_get(addr_a, Some("a.sim.test"), "b.sim.test", &cfg).unwrap();
    assert_eq!(fronted.status, 200);
    assert_eq!(fronted.body, seeded_body("b.sim.test", 3400));
    assert_eq!(
        fronted.leaf_cert.as_ref().unwrap().subject_common_name.as_deref(),
        Some("a.sim.test")
    );
}

#[test]
fn strict_edge_rejects_mismatch_and_sniless_handshakes() {
    let ca = TestCa::new().unwrap();
    let edge = edge_with(
        PolicyPreset::Strict,
        &[("a.sim.test", IP_A, 1200), ("b.sim.test", IP_B, 3400)],
        &ca,
    );
    let addr_a = SocketAddr::new(IpAddr::V4(IP_A), edge.port);
    let cfg = test_config();

    let honest = https_get(addr_a, Some("a.sim.test"), "a.sim.test", &cfg).unwrap();
    assert_eq!(honest.status, 200);

    let fronted = https_get(addr_a, Some("a.sim.test"), "b.sim.test", &cfg).unwrap();
    assert_eq!(fronted.status, 421);

    // No SNI: the resolver refuses to pick a certificate and the
    // handshake dies, which the client reports as a transport error.
    let domainless = https_get(addr_a, None, "a.sim.test", &cfg);
    assert!(domainless.is_err(), "sniless handshake should fail on a strict edge");
}

#[test]
fn faking_edge_presents_default_cert_for_any_sni() {
    let ca = TestCa::new().unwrap();
    let edge = edge_with(
        PolicyPreset::FakingEdge,
        &[("a.sim.test", IP_A, 1200), ("b.sim.test", IP_B, 3400)],
        &ca,
    );
    let addr_a = SocketAddr::new(IpAddr::V4(IP_A), edge.port);
    let cfg = test_config();

    // Faked: connecting to a's address while asserting b in the SNI.
    // The edge hands out its default (first-bound) certificate, so the
    // session works and routes to the Host.
    let faked = https_get(addr_a, Some("b.sim.test"), "a.sim.test", &cfg).unwrap();
    assert_eq!(faked.status, 200);
    assert_eq!(faked.body, seeded_body("a.sim.test", 1200));
    assert_eq!(
        faked.leaf_cert.as_ref().unwrap().subject_common_name.as_deref(),
        Some("a.sim.test")
    );

    // Even an unbound SNI gets the default certificate.
    let unbound_sni = https_get(addr_a, Some("nobody.sim.test"), "a.sim.test", &cfg).unwrap();
    assert_eq!(unbound_sni.status, 200);
    assert_eq!(
        unbound_sni.leaf_cert.as_ref().unwrap().subject_common_name.as_deref(),
        Some("a.sim.test")
    );
}

#[test]
fn domainless_connection_serves_and_shows_default_cert() {
    let ca = TestCa::new().unwrap();
    let edge = edge_with(
        PolicyPreset::DomainlessOk,
        &[("a.sim.test", IP_A, 1200), ("b.sim.test", IP_B, 3400)],
        &ca,
    );
    let addr_a = SocketAddr::new(IpAddr::V4(IP_A), edge.port);
    let cfg = test_config();

    let domainless = https_get(addr_a, None, "b.sim.test", &cfg).unwrap();
    assert_eq!(domainless.status, 200);
    assert_eq!(domainless.body, seeded_body("b.sim.test", 3400));
    assert_eq!(
        domainless.leaf_cert.as_ref().unwrap().subject_common_name.as_deref(),
        Some("a.sim.test")
    );
}

#[test]
fn wildcard_edge_shares_one_cert_that_covers_all_domains() {
    let ca = TestCa::new().unwrap();
    let edge = edge_with(
        PolicyPreset::WildcardShared,
        &[("a.sim.test", IP_A, 1200), ("b.sim.test", IP_B, 3400)],
        &ca,
    );
    let addr_a = SocketAddr::new(IpAddr::V4(IP_A), edge.port);
    let cfg = test_config();

    let honest = https_get(addr_a, Some("a.sim.test"), "a.sim.test", &cfg).unwrap();
    let leaf = honest.leaf_cert.unwrap();
    assert_eq!(leaf.subject_common_name.as_deref(), Some("*.sim.test"));
    assert!(cert_covers(&leaf, "a.sim.test"));
    assert!(cert_covers(&leaf, "b.sim.test"));
    assert!(!cert_covers(&leaf, "deep.a.sim.test"));
}

#[test]
fn missing_host_is_400_and_unbound_host_is_403() {
    let ca = TestCa::new().unwrap();
    let edge = edge_with(PolicyPreset::FrontingPermissive, &[("a.sim.test", IP_A, 1200)], &ca);
    let addr = SocketAddr::new(IpAddr::V4(IP_A), edge.port);
    let cfg = test_config();

    let no_host = https_send_raw(
        addr,
        Some("a.sim.test"),
        b"GET / HTTP/1.1\r\nUser-Agent: probe\r\nConnection: close\r\n\r\n",
        &cfg,
    )
    .unwrap();
    assert_eq!(no_host.status, 400);

    let unbound = https_get(addr, Some("a.sim.test"), "nobody.sim.test", &cfg).unwrap();
    assert_eq!(unbound.status, 403);

    // Host header port suffixes and casing are normalized away.
    let with_port = https_send_raw(
        addr,
        Some("a.sim.test"),
        b"GET / HTTP/1.1\r\nHost: A.SIM.TEST:443\r\nConnection: close\r\n\r\n",
        &cfg,
    )
    .unwrap();
    assert_eq!(with_port.status, 200);
}

#[test]
fn response_headers_keep_wire_order_and_case() {
    let ca = TestCa::new().unwrap();
    let mut binding = OriginBinding::seeded("a.sim.test", 500);
    binding.extra_headers = vec![
        ("X-Node".to_string(), "a.sim.test".to_string()),
        ("ETag".to_string(), "\"abc123\"".to_string()),
    ];
    let edge = start_edge(
        EdgeConfig {
            policy: PolicyPreset::FrontingPermissive.policy(),
            bindings: vec![binding],
            listeners: vec![IP_A],
            port: 0,
            cert_mode: CertMode::PerDomain,
            reject_first_n: 0,
        },
        &ca,
    )
    .unwrap();
    let addr = SocketAddr::new(IpAddr::V4(IP_A), edge.port);
    let got = https_get(addr, Some("a.sim.test"), "a.sim.test", &test_config()).unwrap();
    assert_eq!(got.header_names, vec!["Server", "X-Node", "ETag", "Content-Length", "Connection"]);
}

#[test]
fn jitter_varies_length_by_request_shape_but_stays_deterministic() {
    let ca = TestCa::new().unwrap();
    let mut binding = OriginBinding::seeded("a.sim.test", 1000);
    binding.jitter = 30;
    let edge = start_edge(
        EdgeConfig {
            policy: PolicyPreset::FrontingPermissive.policy(),
            bindings: vec![binding],
            listeners: vec![IP_A],
            port: 0,
            cert_mode: CertMode::PerDomain,
            reject_first_n: 0,
        },
        &ca,
    )
    .unwrap();
    let addr = SocketAddr::new(IpAddr::V4(IP_A), edge.port);
    let cfg = test_config();

    let first = https_get(addr, Some("a.sim.test"), "a.sim.test", &cfg).unwrap();
    let second = https_get(addr, Some("a.sim.test"), "a.sim.test", &cfg).unwrap();
    assert_eq!(first.body.len(), second.body.len(), "same request, same length");

    let fronted = https_get(addr, Some("other.sni.test"), "a.sim.test", &cfg).unwrap();
    let spread = fronted.body.len().abs_diff(first.body.len());
    assert!(spread <= 30, "jitter window respected, spread {spread}");
    assert!(first.body.len() >= 1000 && first.body.len() <= 1030);
}

#[test]
fn rate_limited_baselines_recover_on_retry() {
    let ca = TestCa::new().unwrap();
    let edge = start_edge(
        EdgeConfig {
            policy: PolicyPreset::FrontingPermissive.policy(),
            bindings: vec![OriginBinding::seeded("a.sim.test", 900)],
            listeners: vec![IP_A],
            port: 0,
            cert_mode: CertMode::PerDomain,
            reject_first_n: 1,
        },
        &ca,
    )
    .unwrap();
    let mut cfg = test_config();
    cfg.port = edge.port;

    let spec = frontscope_core::scan_engine::ScanSpec {
        role: ScanRole::Baseline0,
        dst_ip: IP_A,
        sni: Some("a.sim.test".to_string()),
        host: "a.sim.test".to_string(),
    };
    let mut outcome = frontscope_core::scan_engine::execute_scan(&spec, &cfg).unwrap();
    assert_eq!(outcome.status_code, Some(503));

    let stats = retry_failed([&mut outcome], &cfg).unwrap();
    assert_eq!(stats.attempted, 1);
    assert_eq!(stats.replaced, 1);
    assert_eq!(outcome.status_code, Some(200));
    assert!(outcome.retry.is_none(), "successful retry replaces the record");
}

#[test]
fn failed_retry_is_attached_to_the_original_outcome() {
    // Nothing listens on this address: both attempts fail the same way.
    let cfg = test_config();
    let spec = frontscope_core::scan_engine::ScanSpec {
        role: ScanRole::Fronting,
        dst_ip: Ipv4Addr::new(127, 31, 9, 9),
        sni: Some("a.sim.test".to_string()),
        host: "b.sim.test".to_string(),
    };
    let mut cfg2 = cfg.clone();
    cfg2.port = 9;
    let mut outcome = frontscope_core::scan_engine::execute_scan(&spec, &cfg2).unwrap();
    assert!(outcome.transport_error.is_some());
    let stats = retry_failed([&mut outcome], &cfg2).unwrap();
    assert_eq!(stats.attempted, 1);
    assert_eq!(stats.replaced, 0);
    let retry = outcome.retry.expect("failed retry kept for the record");
    assert!(retry.transport_error.is_some());
}

#[test]
fn prefilter_keeps_only_tuples_serving_200() {
    let ca = TestCa::new().unwrap();
    let mut sour = OriginBinding::seeded("sour.sim.test", 700);
    sour.status = 404;
    let edge = start_edge(
        EdgeConfig {
            policy: PolicyPreset::FrontingPermissive.policy(),
            bindings: vec![OriginBinding::seeded("a.sim.test", 900), sour],
            listeners: vec![IP_A, IP_B],
            port: 0,
            cert_mode: CertMode::PerDomain,
            reject_first_n: 0,
        },
        &ca,
    )
    .unwrap();
    let mut cfg = test_config();
    cfg.port = edge.port;

    let tuples = vec![
        DestinationTuple { domain: "a.sim.test".into(), ip: IP_A },
        DestinationTuple { domain: "sour.sim.test".into(), ip: IP_B },
        DestinationTuple { domain: "dead.sim.test".into(), ip: Ipv4Addr::new(127, 31, 9, 10) },
    ];
    let result = prefilter_tuples(&tuples, &cfg).unwrap();
    assert_eq!(result.kept, vec![tuples[0].clone()]);
    assert_eq!(result.dropped.len(), 2);
    assert_eq!(result.dropped[0].status_code, Some(404));
    assert!(result.dropped[1].transport_error.is_some());
}

fn pairs_within(tuples: &[DestinationTuple], kind_value: &str) -> Vec<ScanPair> {
    let group = GroupKey { kind: GroupingKind::AutonomousSystem, value: kind_value.to_string() };
    let mut pairs = Vec::new();
    for (i, target) in tuples.iter().enumerate() {
        let front = &tuples[(i + 1) % tuples.len()];
        if front.domain != target.domain {
            pairs.push(ScanPair {
                target: target.clone(),
                front: front.clone(),
                group: group.clone(),
            });
        }
    }
    pairs
}

fn preset_expectations(preset: PolicyPreset) -> (f64, f64, f64) {
    match preset {
        PolicyPreset::Strict => (0.0, 0.0, 0.0),
        _ => (100.0, 100.0, 100.0),
    }
}

#[test]
fn preset_scenarios_classify_as_their_policies_dictate() {
    for (octet, preset) in [
        (41, PolicyPreset::Strict),
        (42, PolicyPreset::FrontingPermissive),
        (43, PolicyPreset::FakingEdge),
        (44, PolicyPreset::DomainlessOk),
    ] {
        let scenario = Scenario::preset_group(preset.as_str(), preset, "sim.test", 4, octet);
        let running = start_scenario(&scenario, None, None).unwrap();
        let mut cfg = test_config();
        cfg.port = running.port;

        let pairs = pairs_within(&running.tuples, preset.as_str());
        assert_eq!(pairs.len(), 4);
        let outcomes = execute_all(&plan_all(&pairs), &cfg).unwrap();
        let verdicts = classify_all(&pairs, &outcomes).unwrap();
        let (reports, suppressed) = split_outcomes(aggregate_by_group(&verdicts));
        assert!(suppressed.is_empty(), "{}: no pruning expected", preset.as_str());
        assert_eq!(reports.len(), 1);
        let report = &reports[0];
        let (fronting, faking, domainless) = preset_expectations(preset);
        assert_eq!(report.applicable_pairs, 4);
        assert_eq!(report.fronting_pct, fronting, "{} fronting", preset.as_str());
        assert_eq!(report.faking_pct, faking, "{} faking", preset.as_str());
        assert_eq!(report.domainless_pct, domainless, "{} domainless", preset.as_str());

        if preset == PolicyPreset::Strict {
            // Mismatches bounce at HTTP (421) and SNI-less handshakes
            // bounce at TLS, so the reasons split accordingly.
            assert_eq!(verdicts[0].fronting.reason, ResultReason::Non200);
            assert_eq!(verdicts[0].faking.reason, ResultReason::Non200);
            assert_eq!(verdicts[0].domainless.reason, ResultReason::TransportError);
        }
        running.shutdown();
    }
}

#[test]
fn wildcard_scenario_is_pruned_not_reported_as_misinformation() {
    let preset = PolicyPreset::WildcardShared;
    let scenario = Scenario::preset_group("wild", preset, "sim.test", 4, 45);
    let running = start_scenario(&scenario, None, None).unwrap();
    let mut cfg = test_config();
    cfg.port = running.port;

    let pairs = pairs_within(&running.tuples, preset.as_str());
    let outcomes = execute_all(&plan_all(&pairs), &cfg).unwrap();
    let verdicts = classify_all(&pairs, &outcomes).unwrap();
    for verdict in &verdicts {
        assert!(!verdict.applicable);
        assert_eq!(verdict.prune_reason, Some(PruneReason::CertCoversBoth));
        assert_eq!(verdict.fronting.status, TechniqueStatus::NotEvaluated);
    }
    let (reports, suppressed) = split_outcomes(aggregate_by_group(&verdicts));
    assert!(reports.is_empty());
    assert_eq!(suppressed.len(), 1);
    assert_eq!(suppressed[0].total_pairs, 4);
    assert_eq!(suppressed[0].pruned.get(&PruneReason::CertCoversBoth), Some(&4));
    running.shutdown();
}

#[test]
fn scan_outcomes_survive_a_jsonl_round_trip() {
    let ca = TestCa::new().unwrap();
    let edge = edge_with(
        PolicyPreset::FrontingPermissive,
        &[("a.sim.test", IP_A, 1200), ("b.sim.test", IP_B, 3400)],
        &ca,
    );
    let mut cfg = test_config();
    cfg.port = edge.port;
    let pairs = pairs_within(
        &[
            DestinationTuple { domain: "a.sim.test".into(), ip: IP_A },
            DestinationTuple { domain: "b.sim.test".into(), ip: IP_B },
        ],
        "round-trip",
    );
    let outcomes = execute_all(&plan_all(&pairs), &cfg).unwrap();
    let mut buf = Vec::new();
    for outcome in &outcomes {
        serde_json::to_writer(&mut buf, outcome).unwrap();
        buf.push(b'\n');
    }
    let back: Vec<frontscope_core::scan_engine::IndexedOutcome> = String::from_utf8(buf)
        .unwrap()
        .lines()
        .map(|line| serde_json::from_str(line).unwrap())
        .collect();
    assert_eq!(back, outcomes);
}
