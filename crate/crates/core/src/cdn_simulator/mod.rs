//! A local CDN edge simulator.
//!
//! The edge terminates real TLS on loopback addresses and serves
//! deterministic per-domain content, but its *policies* are the point:
//! how it routes requests (by Host or by SNI), whether it insists SNI
//! and Host agree, which certificate it presents, and what it does
//! when SNI is absent. Every combination the classifier must recognize
//! in the wild can be configured here and measured for real, without
//! touching anyone's infrastructure.
//!
//! Scenarios are confined on purpose: they bind only 127.0.0.0/8
//! addresses and only name domains under the reserved `.test` zone.

mod ca;
pub mod demo;
mod edge;
mod origin;
mod scenario;

pub use ca::TestCa;
pub use edge::{seeded_body, start_edge, CertMode, EdgeConfig, EdgeHandle, OriginBinding};
pub use origin::{start_attacker_origin, AttackerOrigin, ContentFetcher};
pub use scenario::{start_scenario, DomainScenario, EdgeScenario, RunningScenario, Scenario};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("certificate authority: {0}")]
    Ca(String),
    #[error("tls configuration: {0}")]
    Tls(#[from] rustls::Error),
    #[error("bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
}

/// What the edge keys its origin routing on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    ByHost,
    BySni,
}

/// Whether a mismatch between SNI and Host is rejected (421) or
/// ignored. Ignoring it is what makes domain fronting possible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SniHostBinding {
    Enforced,
    Ignored,
}

/// How the edge picks the certificate it presents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertSelection {
    /// Certificate of the SNI domain when bound, the default otherwise.
    BySni,
    /// Always the default certificate, whatever the SNI says. Edges
    /// doing this hand domain-faking clients a usable session.
    DefaultAlways,
}

/// Reaction to a ClientHello without SNI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingSniAction {
    /// Proceed with the default certificate; domainless fronting works.
    ServeDefault,
    /// Abort the handshake.
    Reject,
}

/// Host-header rewrite applied by the edge before routing (the
/// mechanism behind domain shadowing). Exact-match on the normalized
/// host, first rule wins, single pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteRule {
    pub match_host: String,
    pub new_host: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgePolicy {
    pub routing: RoutingMode,
    pub sni_host_binding: SniHostBinding,
    pub cert_selection: CertSelection,
    /// Domain whose certificate is the fallback. `None` falls back to
    /// the first bound domain; must resolve when `cert_selection` is
    /// `DefaultAlways` or `missing_sni` is `ServeDefault`.
    pub default_cert_domain: Option<String>,
    pub missing_sni: MissingSniAction,
    #[serde(default)]
    pub rewrite_rules: Vec<RewriteRule>,
}

/// Named policy bundles covering the deployments worth simulating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyPreset {
    /// Everything checked: SNI must match Host, certificates follow
    /// SNI, no SNI means no handshake. Admits nothing.
    Strict,
    /// SNI/Host mismatches tolerated; routing follows Host. The
    /// classic fronting-friendly CDN edge.
    FrontingPermissive,
    /// Additionally presents its default certificate regardless of
    /// SNI, the behavior that enables faking against direct-to-IP
    /// targets.
    FakingEdge,
    /// Serves SNI-less connections with the default certificate.
    DomainlessOk,
    /// Fronting-permissive edge whose domains share one wildcard
    /// certificate; pairs against it are pruned as ordinary wildcard
    /// hosting.
    WildcardShared,
}

impl PolicyPreset {
    pub const ALL: [PolicyPreset; 5] = [
        PolicyPreset::Strict,
        PolicyPreset::FrontingPermissive,
        PolicyPreset::FakingEdge,
        PolicyPreset::DomainlessOk,
        PolicyPreset::WildcardShared,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyPreset::Strict => "strict",
            PolicyPreset::FrontingPermissive => "fronting_permissive",
            PolicyPreset::FakingEdge => "faking_edge",
            PolicyPreset::DomainlessOk => "domainless_ok",
            PolicyPreset::WildcardShared => "wildcard_shared",
        }
    }

    pub fn parse(name: &str) -> Option<PolicyPreset> {
        Self::ALL.into_iter().find(|p| p.as_str() == name || p.as_str().replace('_', "-") == name)
    }

    pub fn policy(&self) -> EdgePolicy {
        let permissive = EdgePolicy {
            routing: RoutingMode::ByHost,
            sni_host_binding: SniHostBinding::Ignored,
            cert_selection: CertSelection::BySni,
            default_cert_domain: None,
            missing_sni: MissingSniAction::ServeDefault,
            rewrite_rules: Vec::new(),
        };
        match self {
            PolicyPreset::Strict => EdgePolicy {
                sni_host_binding: SniHostBinding::Enforced,
                missing_sni: MissingSniAction::Reject,
                ..permissive
            },
            PolicyPreset::FakingEdge => {
                EdgePolicy { cert_selection: CertSelection::DefaultAlways, ..permissive }
            }
            PolicyPreset::FrontingPermissive
            | PolicyPreset::DomainlessOk
            | PolicyPreset::WildcardShared => permissive,
        }
    }

    /// Whether the preset's domains share one wildcard certificate.
    pub fn shares_wildcard_cert(&self) -> bool {
        matches!(self, PolicyPreset::WildcardShared)
    }
}

/// Routing result for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoutingDecision {
    /// SNI/Host binding enforcement failed: respond 421.
    Misdirected,
    /// The routing key names no bound domain: respond 403.
    UnboundHost,
    Serve { domain: String },
}

fn apply_rewrites(policy: &EdgePolicy, host: &str) -> String {
    for rule in &policy.rewrite_rules {
        if rule.match_host.eq_ignore_ascii_case(host) {
            return rule.new_host.to_ascii_lowercase();
        }
    }
    host.to_string()
}

/// The fallback domain used for certificates and SNI-less routing.
pub fn default_domain(policy: &EdgePolicy, bound: &BTreeSet<String>) -> Option<String> {
    policy
        .default_cert_domain
        .clone()
        .or_else(|| bound.iter().next().cloned())
}

/// Pure routing logic shared by the live edge and the policy tests.
/// `sni` and `host` must be normalized (lowercase, no port). Binding
/// enforcement inspects the host as sent; rewrites happen afterwards,
/// inside the edge, the way a shadowed customer config would.
pub fn route_request(
    policy: &EdgePolicy,
    bound: &BTreeSet<String>,
    sni: Option<&str>,
    host: &str,
) -> RoutingDecision {
    if policy.sni_host_binding == SniHostBinding::Enforced && sni != Some(host) {
        return RoutingDecision::Misdirected;
    }
    let routed_host = apply_rewrites(policy, host);
    let domain = match policy.routing {
        RoutingMode::ByHost => Some(routed_host),
        RoutingMode::BySni => match sni {
            Some(name) => Some(name.to_string()),
            None => default_domain(policy, bound),
        },
    };
    match domain {
        Some(domain) if bound.contains(&domain) => RoutingDecision::Serve { domain },
        _ => RoutingDecision::UnboundHost,
    }
}

/// Which bound domain's certificate a handshake gets, or `None` to
/// reject the handshake. Pure counterpart of the live resolver.
pub fn select_cert_domain(
    policy: &EdgePolicy,
    bound: &BTreeSet<String>,
    sni: Option<&str>,
) -> Option<String> {
    match sni {
        None => match policy.missing_sni {
            MissingSniAction::Reject => None,
            MissingSniAction::ServeDefault => default_domain(policy, bound),
        },
        Some(name) => match policy.cert_selection {
            CertSelection::DefaultAlways => default_domain(policy, bound),
            CertSelection::BySni => {
                if bound.contains(name) {
                    Some(name.to_string())
                } else {
                    default_domain(policy, bound)
                }
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bound() -> BTreeSet<String> {
        ["alpha.sim.test", "beta.sim.test"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn permissive_edge_routes_mismatched_host() {
        let policy = PolicyPreset::FrontingPermissive.policy();
        let decision =
            route_request(&policy, &bound(), Some("alpha.sim.test"), "beta.sim.test");
        assert_eq!(decision, RoutingDecision::Serve { domain: "beta.sim.test".to_string() });
    }

    #[test]
    fn strict_edge_rejects_mismatch_and_missing_sni() {
        let policy = PolicyPreset::Strict.policy();
        assert_eq!(
            route_request(&policy, &bound(), Some("alpha.sim.test"), "beta.sim.test"),
            RoutingDecision::Misdirected
        );
        assert_eq!(
            route_request(&policy, &bound(), None, "beta.sim.test"),
            RoutingDecision::Misdirected
        );
        // An unbound host with a mismatched SNI is a mismatch first.
        assert_eq!(
            route_request(&policy, &bound(), Some("alpha.sim.test"), "unbound.sim.test"),
            RoutingDecision::Misdirected
        );
        assert_eq!(
            route_request(&policy, &bound(), Some("alpha.sim.test"), "alpha.sim.test"),
            RoutingDecision::Serve { domain: "alpha.sim.test".to_string() }
        );
        // Matching but unbound names clear enforcement, then 403.
        assert_eq!(
            route_request(&policy, &bound(), Some("unbound.sim.test"), "unbound.sim.test"),
            RoutingDecision::UnboundHost
        );
    }

    #[test]
    fn unbound_host_on_permissive_edge_is_403() {
        let policy = PolicyPreset::FrontingPermissive.policy();
        assert_eq!(
            route_request(&policy, &bound(), Some("alpha.sim.test"), "nope.sim.test"),
            RoutingDecision::UnboundHost
        );
    }

    #[test]
    fn cert_selection_follows_policy() {
        let by_sni = PolicyPreset::FrontingPermissive.policy();
        assert_eq!(
            select_cert_domain(&by_sni, &bound(), Some("beta.sim.test")),
            Some("beta.sim.test".to_string())
        );
        // Unknown SNI falls back to the default (first bound) domain.
        assert_eq!(
            select_cert_domain(&by_sni, &bound(), Some("other.sim.test")),
            Some("alpha.sim.test".to_string())
        );
        let faking = PolicyPreset::FakingEdge.policy();
        assert_eq!(
            select_cert_domain(&faking, &bound(), Some("beta.sim.test")),
            Some("alpha.sim.test".to_string())
        );
        let strict = PolicyPreset::Strict.policy();
        assert_eq!(select_cert_domain(&strict, &bound(), None), None);
        assert_eq!(
            select_cert_domain(&by_sni, &bound(), None),
            Some("alpha.sim.test".to_string())
        );
    }

    #[test]
    fn explicit_default_cert_domain_wins() {
        let mut policy = PolicyPreset::FakingEdge.policy();
        policy.default_cert_domain = Some("beta.sim.test".to_string());
        assert_eq!(
            select_cert_domain(&policy, &bound(), Some("alpha.sim.test")),
            Some("beta.sim.test".to_string())
        );
    }

    #[test]
    fn rewrite_rules_shadow_the_host() {
        let mut policy = PolicyPreset::FrontingPermissive.policy();
        policy.rewrite_rules.push(RewriteRule {
            match_host: "shadowed.sim.test".to_string(),
            new_host: "alpha.sim.test".to_string(),
        });
        assert_eq!(
            route_request(&policy, &bound(), Some("alpha.sim.test"), "shadowed.sim.test"),
            RoutingDecision::Serve { domain: "alpha.sim.test".to_string() }
        );
        // Rewrites are exact-match only.
        assert_eq!(
            route_request(&policy, &bound(), Some("alpha.sim.test"), "x.shadowed.sim.test"),
            RoutingDecision::UnboundHost
        );
    }

    #[test]
    fn presets_expose_expected_knobs() {
        let strict = PolicyPreset::Strict.policy();
        assert_eq!(strict.sni_host_binding, SniHostBinding::Enforced);
        assert_eq!(strict.missing_sni, MissingSniAction::Reject);
        assert_eq!(strict.cert_selection, CertSelection::BySni);
        let faking = PolicyPreset::FakingEdge.policy();
        assert_eq!(faking.sni_host_binding, SniHostBinding::Ignored);
        assert_eq!(faking.cert_selection, CertSelection::DefaultAlways);
        assert!(PolicyPreset::WildcardShared.shares_wildcard_cert());
        assert!(!PolicyPreset::FrontingPermissive.shares_wildcard_cert());
        for preset in PolicyPreset::ALL {
            assert_eq!(PolicyPreset::parse(preset.as_str()), Some(preset));
        }
        assert_eq!(PolicyPreset::parse("fronting-permissive"), Some(PolicyPreset::FrontingPermissive));
    }
}
