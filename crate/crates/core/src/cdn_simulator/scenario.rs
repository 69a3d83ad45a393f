//! Declarative multi-edge deployments.
//!
//! A scenario describes edges, their policies, and the domains each one
//! serves; starting it brings the whole deployment up on loopback and
//! yields the destination tuples a scan run would have discovered via
//! DNS. Scenarios are plain data so they round-trip through TOML and
//! JSON for the command line.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::edge::{start_edge, CertMode, EdgeConfig, EdgeHandle, OriginBinding};
use super::{PolicyPreset, SimulatorError, TestCa};
use crate::candidate_sets::DestinationTuple;

fn default_status() -> u16 {
    200
}

/// One domain served by an edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainScenario {
    pub name: String,
    /// Home address: the edge listens here and the domain's scan tuple
    /// points here. Absent means the domain is served on the edge's
    /// other listeners but is not a scan destination itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip: Option<Ipv4Addr>,
    pub body_len: u64,
    #[serde(default = "default_status")]
    pub status: u16,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_headers: Vec<(String, String)>,
    #[serde(default)]
    pub jitter: u64,
    /// "attacker" wires the domain to the demo origin; an explicit
    /// `ip:port` proxies to that loopback address.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeScenario {
    pub preset: PolicyPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_cert_domain: Option<String>,
    #[serde(default)]
    pub reject_first_n: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rewrite_rules: Vec<super::RewriteRule>,
    pub domains: Vec<DomainScenario>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Reserved DNS zone every domain must sit under; "test" or a
    /// subdomain of it, so simulated names can never collide with
    /// real infrastructure.
    pub zone: String,
    /// 0 picks a free port shared by every edge.
    #[serde(default)]
    pub port: u16,
    pub edges: Vec<EdgeScenario>,
}

impl Scenario {
    /// Single-edge scenario with `count` generated domains under
    /// `zone`, addressed as 127.`ip_octet`.0.10 onward. Body lengths
    /// are spread out so no two domains alias each other.
    pub fn preset_group(
        name: &str,
        preset: PolicyPreset,
        zone: &str,
        count: u8,
        ip_octet: u8,
    ) -> Scenario {
        let domains = (0..count)
            .map(|i| {
                let domain = format!("{name}{i}.{zone}");
                DomainScenario {
                    name: domain.clone(),
                    ip: Some(Ipv4Addr::new(127, ip_octet, 0, 10 + i)),
                    body_len: 1000 + 137 * i as u64,
                    status: 200,
                    extra_headers: vec![("X-Node".to_string(), domain)],
                    jitter: 0,
                    upstream: None,
                }
            })
            .collect();
        Scenario {
            name: name.to_string(),
            zone: zone.to_string(),
            port: 0,
            edges: vec![EdgeScenario {
                preset,
                default_cert_domain: None,
                reject_first_n: 0,
                rewrite_rules: Vec::new(),
                domains,
            }],
        }
    }

    /// Two-domain deployment for the traffic-hijack demo: a victim
    /// site and an attacker-controlled customer domain of identical
    /// hostname length, wired to the attacker origin.
    pub fn hijack_demo(zone: &str, preset: PolicyPreset) -> Scenario {
        let victim = format!("victimsite0001.{zone}");
        let attacker = format!("attackerhost01.{zone}");
        Scenario {
            name: "hijack-demo".to_string(),
            zone: zone.to_string(),
            port: 0,
            edges: vec![EdgeScenario {
                preset,
                default_cert_domain: None,
                reject_first_n: 0,
                rewrite_rules: Vec::new(),
                domains: vec![
                    DomainScenario {
                        name: victim.clone(),
                        ip: Some(Ipv4Addr::new(127, 88, 0, 10)),
                        body_len: 2400,
                        status: 200,
                        extra_headers: vec![("X-Node".to_string(), victim)],
                        jitter: 0,
                        upstream: None,
                    },
                    DomainScenario {
                        name: attacker,
                        ip: Some(Ipv4Addr::new(127, 88, 0, 11)),
                        body_len: 0,
                        status: 200,
                        extra_headers: Vec::new(),
                        jitter: 0,
                        upstream: Some("attacker".to_string()),
                    },
                ],
            }],
        }
    }
}

/// A started scenario; dropping it stops every edge.
pub struct RunningScenario {
    pub name: String,
    pub zone: String,
    pub port: u16,
    pub edges: Vec<EdgeHandle>,
    pub ca: TestCa,
    /// Home address per scannable domain, first edge wins.
    pub domain_ips: BTreeMap<String, Ipv4Addr>,
    /// Scan destinations in scenario order, one per homed domain.
    pub tuples: Vec<DestinationTuple>,
}

impl RunningScenario {
    pub fn addr_of(&self, domain: &str) -> Option<SocketAddr> {
        self.domain_ips
            .get(&domain.to_ascii_lowercase())
            .map(|ip| SocketAddr::new(IpAddr::V4(*ip), self.port))
    }

    pub fn shutdown(self) {
        for edge in self.edges {
            edge.shutdown();
        }
    }
}

fn parse_upstream(
    value: &str,
    attacker: Option<SocketAddr>,
) -> Result<SocketAddr, SimulatorError> {
    if value == "attacker" {
        return attacker.ok_or_else(|| {
            SimulatorError::InvalidConfig(
                "scenario routes to \"attacker\" but no attacker origin is running".to_string(),
            )
        });
    }
    let addr: SocketAddr = value.parse().map_err(|_| {
        SimulatorError::InvalidConfig(format!("upstream {value:?} is not ip:port or \"attacker\""))
    })?;
    if !addr.ip().is_loopback() {
        return Err(SimulatorError::InvalidConfig(format!(
            "upstream {addr} is not a loopback address"
        )));
    }
    Ok(addr)
}

fn validate_scenario(scenario: &Scenario) -> Result<(), SimulatorError> {
    let invalid = |msg: String| Err(SimulatorError::InvalidConfig(msg));
    let zone = scenario.zone.to_ascii_lowercase();
    if zone != "test" && !zone.ends_with(".test") {
        return invalid(format!("zone {zone:?} is outside the reserved .test namespace"));
    }
    if scenario.edges.is_empty() {
        return invalid("scenario has no edges".to_string());
    }
    let suffix = format!(".{zone}");
    let mut homed_ips: BTreeSet<Ipv4Addr> = BTreeSet::new();
    for edge in &scenario.edges {
        let mut edge_domains = BTreeSet::new();
        for domain in &edge.domains {
            let name = domain.name.to_ascii_lowercase();
            if !name.ends_with(&suffix) {
                return invalid(format!("domain {name} is not under zone {zone}"));
            }
            if !edge_domains.insert(name.clone()) {
                return invalid(format!("domain {name} appears twice on one edge"));
            }
            if let Some(ip) = domain.ip {
                if !ip.is_loopback() {
                    return invalid(format!("domain {name} maps to non-loopback {ip}"));
                }
                if !homed_ips.insert(ip) {
                    return invalid(format!("address {ip} is assigned to two domains"));
                }
            }
        }
    }
    Ok(())
}

fn edge_config(
    edge: &EdgeScenario,
    zone: &str,
    port: u16,
    attacker: Option<SocketAddr>,
) -> Result<EdgeConfig, SimulatorError> {
    let mut bindings = Vec::new();
    let mut listeners = Vec::new();
    for domain in &edge.domains {
        let name = domain.name.to_ascii_lowercase();
        let mut binding = OriginBinding::seeded(&name, domain.body_len);
        binding.status = domain.status;
        binding.extra_headers = domain.extra_headers.clone();
        binding.jitter = domain.jitter;
        if let Some(upstream) = &domain.upstream {
            binding.upstream = Some(parse_upstream(upstream, attacker)?);
        }
        bindings.push(binding);
        if let Some(ip) = domain.ip {
            listeners.push(ip);
        }
    }
    let mut policy = edge.preset.policy();
    policy.default_cert_domain = edge.default_cert_domain.clone();
    policy.rewrite_rules = edge.rewrite_rules.clone();
    let cert_mode = if edge.preset.shares_wildcard_cert() {
        CertMode::SharedWildcard { zone: zone.to_string() }
    } else {
        CertMode::PerDomain
    };
    Ok(EdgeConfig {
        policy,
        bindings,
        listeners,
        port,
        cert_mode,
        reject_first_n: edge.reject_first_n,
    })
}

fn pick_free_port() -> Result<u16, SimulatorError> {
    let probe = std::net::TcpListener::bind("127.0.0.1:0").map_err(SimulatorError::Io)?;
    Ok(probe.local_addr().map_err(SimulatorError::Io)?.port())
}

/// Starts every edge in the scenario on one shared port, minting all
/// certificates from a single fresh test CA. `state_dir` gets the CA
/// certificate written into it for external clients.
pub fn start_scenario(
    scenario: &Scenario,
    state_dir: Option<&Path>,
    attacker: Option<SocketAddr>,
) -> Result<RunningScenario, SimulatorError> {
    validate_scenario(scenario)?;
    let zone = scenario.zone.to_ascii_lowercase();
    let ca = TestCa::new()?;
    if let Some(dir) = state_dir {
        ca.persist(dir)?;
    }

    // With port 0 a probe listener picks the number; between its drop
    // and our binds another process could grab it, so retry.
    let attempts = if scenario.port == 0 { 8 } else { 1 };
    let mut last_error = None;
    for _ in 0..attempts {
        let port = if scenario.port == 0 { pick_free_port()? } else { scenario.port };
        let mut edges = Vec::new();
        let mut failed = None;
        for edge in &scenario.edges {
            match start_edge(edge_config(edge, &zone, port, attacker)?, &ca) {
                Ok(handle) => edges.push(handle),
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        match failed {
            None => {
                let mut domain_ips = BTreeMap::new();
                let mut tuples = Vec::new();
                for edge in &scenario.edges {
                    for domain in &edge.domains {
                        let name = domain.name.to_ascii_lowercase();
                        if let Some(ip) = domain.ip {
                            domain_ips.entry(name.clone()).or_insert(ip);
                            tuples.push(DestinationTuple { domain: name, ip });
                        }
                    }
                }
                return Ok(RunningScenario {
                    name: scenario.name.clone(),
                    zone,
                    port,
                    edges,
                    ca,
                    domain_ips,
                    tuples,
                });
            }
            Some(SimulatorError::Bind { addr, source })
                if source.kind() == std::io::ErrorKind::AddrInUse && scenario.port == 0 =>
            {
                drop(edges);
                last_error = Some(SimulatorError::Bind { addr, source });
            }
            Some(other) => return Err(other),
        }
    }
    Err(last_error
        .unwrap_or_else(|| SimulatorError::InvalidConfig("no port attempts made".to_string())))
}
