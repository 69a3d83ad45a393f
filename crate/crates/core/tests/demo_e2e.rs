//! End-to-end run of the traffic-hijack demo against the simulator:
//! a victim request is rewritten in flight, routed to the attacker's
//! customer domain, and answered with the victim's own content.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use frontscope_core::cdn_simulator::demo::{host_rewrite_demo, VictimRequest};
use frontscope_core::cdn_simulator::{
    seeded_body, start_attacker_origin, start_scenario, ContentFetcher, PolicyPreset, Scenario,
};
use frontscope_core::scan_engine::{https_get, ScanConfig};

const ZONE: &str = "sim.test";
const VICTIM: &str = "victimsite0001.sim.test";
const ATTACKER: &str = "attackerhost01.sim.test";

fn test_config() -> ScanConfig {
    let mut cfg = ScanConfig::default();
    cfg.retry_delay = std::time::Duration::from_millis(10);
    cfg
}

// The attacker origin needs to fetch victim content through the edge,
// but the edge's address is only known after the scenario starts, so
// the fetcher reads it from a slot filled in later.
fn deferred_fetcher(cfg: ScanConfig) -> (ContentFetcher, Arc<Mutex<Option<SocketAddr>>>) {
    let slot: Arc<Mutex<Option<SocketAddr>>> = Arc::new(Mutex::new(None));
    let shared = slot.clone();
    let fetcher: ContentFetcher = Arc::new(move |host, _path| {
        let addr = shared
            .lock()
            .expect("addr slot lock")
            .ok_or("edge address not wired up yet".to_string())?;
        let exchange =
            https_get(addr, Some(host), host, &cfg).map_err(|e| e.message)?;
        Ok((exchange.status, exchange.body))
    });
    (fetcher, slot)
}

#[test]
fn hijack_succeeds_on_a_fronting_permissive_edge() {
    let cfg = test_config();
    let (fetcher, addr_slot) = deferred_fetcher(cfg.clone());
    let origin = start_attacker_origin(ZONE, fetcher).unwrap();
    let scenario = Scenario::hijack_demo(ZONE, PolicyPreset::FrontingPermissive);
    let running = start_scenario(&scenario, None, Some(origin.addr)).unwrap();
    let mut cfg = cfg;
    cfg.port = running.port;
    *addr_slot.lock().unwrap() = running.addr_of(VICTIM);

    let victim = VictimRequest { domain: VICTIM.to_string(), path: "/account".to_string() };
    let edge_addr = running.addr_of(VICTIM).unwrap();
    let transcript =
        host_rewrite_demo(&victim, ATTACKER, edge_addr, &origin, ZONE, &cfg).unwrap();

    // The request the victim signed off on and the one that went out
    // are the same length; only Host and User-Agent bytes moved.
    assert_eq!(transcript.request_len_before, transcript.request_len_after);
    assert_eq!(transcript.host_before, VICTIM);
    assert_eq!(transcript.host_after, ATTACKER);
    assert!(transcript.user_agent_after.starts_with(VICTIM));

    // TLS still tells the victim's story: SNI and certificate match
    // the site they think they are talking to.
    assert_eq!(transcript.sni, VICTIM);
    assert_eq!(transcript.certificate_subject.as_deref(), Some(VICTIM));

    // The attacker's origin saw the request and recovered the victim
    // hostname from the User-Agent prefix.
    assert_eq!(transcript.attacker_recovered_host.as_deref(), Some(VICTIM));
    assert_eq!(origin.recovered_hosts(), vec![VICTIM.to_string()]);

    // And the response is the victim's real content, fetched by the
    // attacker through the same edge, so the browser notices nothing.
    assert_eq!(transcript.status_code, Some(200));
    assert_eq!(transcript.response_len, 2400);
    let honest = https_get(edge_addr, Some(VICTIM), VICTIM, &cfg).unwrap();
    assert_eq!(honest.body, seeded_body(VICTIM, 2400));
    assert_eq!(honest.body.len(), transcript.response_len);

    running.shutdown();
    origin.shutdown();
}

#[test]
fn hijack_dies_with_421_on_a_strict_edge() {
    let cfg = test_config();
    let (fetcher, addr_slot) = deferred_fetcher(cfg.clone());
    let origin = start_attacker_origin(ZONE, fetcher).unwrap();
    let scenario = Scenario::hijack_demo(ZONE, PolicyPreset::Strict);
    let running = start_scenario(&scenario, None, Some(origin.addr)).unwrap();
    let mut cfg = cfg;
    cfg.port = running.port;
    *addr_slot.lock().unwrap() = running.addr_of(VICTIM);

    let victim = VictimRequest { domain: VICTIM.to_string(), path: "/account".to_string() };
    let edge_addr = running.addr_of(VICTIM).unwrap();
    let transcript =
        host_rewrite_demo(&victim, ATTACKER, edge_addr, &origin, ZONE, &cfg).unwrap();

    // SNI says victim, Host says attacker: an enforcing edge refuses.
    assert_eq!(transcript.status_code, Some(421));
    assert_eq!(transcript.attacker_recovered_host, None);
    assert!(origin.recovered_hosts().is_empty());

    running.shutdown();
    origin.shutdown();
}
