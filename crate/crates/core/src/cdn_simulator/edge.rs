//! The live simulated edge: TLS listeners on loopback addresses that
//! apply an [`EdgePolicy`](super::EdgePolicy) to every request.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rustls::server::{ClientHello, ResolvesServerCert};
use rustls::sign::CertifiedKey;
use rustls::{ServerConfig, ServerConnection};

use super::{route_request, select_cert_domain, EdgePolicy, RoutingDecision, SimulatorError, TestCa};

fn fnv64(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.iter().chain(&[0xfe]) {
            h = (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Deterministic lowercase-alphanumeric blob for a domain. Same
/// (domain, len) in, same bytes out, on every machine.
pub fn seeded_body(domain: &str, len: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv64(&[domain.as_bytes()]));
    let alphabet = b"abcdefghijklmnopqrstuvwxyz0123456789";
    (0..len).map(|_| alphabet[(rng.next_u32() as usize) % alphabet.len()]).collect()
}

/// Content served for one bound domain.
#[derive(Debug, Clone)]
pub struct OriginBinding {
    pub domain: String,
    pub body: Vec<u8>,
    pub status: u16,
    pub extra_headers: Vec<(String, String)>,
    /// Maximum extra body bytes; the actual wobble is derived from the
    /// request's (host, sni, path), so repeated identical requests get
    /// identical lengths. Models dynamic content deterministically.
    pub jitter: u64,
    /// Plain-HTTP origin the edge proxies to instead of serving
    /// `body`; used by the traffic-hijack demo.
    pub upstream: Option<SocketAddr>,
}

impl OriginBinding {
    pub fn seeded(domain: &str, body_len: u64) -> OriginBinding {
        OriginBinding {
            domain: domain.to_ascii_lowercase(),
            body: seeded_body(&domain.to_ascii_lowercase(), body_len),
            status: 200,
            extra_headers: Vec::new(),
            jitter: 0,
            upstream: None,
        }
    }
}

/// How leaf certificates are minted for the bound domains.
#[derive(Debug, Clone)]
pub enum CertMode {
    PerDomain,
    /// One `*.zone` certificate shared by every binding.
    SharedWildcard { zone: String },
}

#[derive(Debug, Clone)]
pub struct EdgeConfig {
    pub policy: EdgePolicy,
    pub bindings: Vec<OriginBinding>,
    /// Loopback IPs to listen on; every listener shares `port`.
    pub listeners: Vec<Ipv4Addr>,
    /// 0 lets the OS pick on the first listener; the rest follow it.
    pub port: u16,
    pub cert_mode: CertMode,
    /// Answer 503 to this many requests before serving normally;
    /// exercises the retry pass deterministically.
    pub reject_first_n: u32,
}

struct EdgeContext {
    policy: EdgePolicy,
    bound: BTreeSet<String>,
    bindings: HashMap<String, OriginBinding>,
    tls: Arc<ServerConfig>,
    accepted: AtomicU32,
    reject_first_n: u32,
}

/// Certificate selection mirroring [`select_cert_domain`]; returning
/// `None` aborts the handshake, which the client sees as an alert.
#[derive(Debug)]
struct PolicyCertResolver {
    policy: EdgePolicy,
    bound: BTreeSet<String>,
    certs: HashMap<String, Arc<CertifiedKey>>,
}

impl ResolvesServerCert for PolicyCertResolver {
    fn resolve(&self, client_hello: ClientHello<'_>) -> Option<Arc<CertifiedKey>> {
        let sni = client_hello.server_name().map(|s| s.to_ascii_lowercase());
        let domain = select_cert_domain(&self.policy, &self.bound, sni.as_deref())?;
        self.certs.get(&domain).cloned()
    }
}

/// A running edge. Dropping it (or calling [`EdgeHandle::shutdown`])
/// stops the accept loops; in-flight connections finish on their own.
pub struct EdgeHandle {
    pub port: u16,
    pub addrs: Vec<SocketAddr>,
    pub domains: Vec<String>,
    stop: Arc<AtomicBool>,
    accept_threads: Vec<JoinHandle<()>>,
}

impl EdgeHandle {
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for handle in self.accept_threads.drain(..) {
            let _ = handle.join();
        }
    }
}

impl Drop for EdgeHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

fn validate(config: &EdgeConfig) -> Result<(), SimulatorError> {
    let invalid = |msg: String| Err(SimulatorError::InvalidConfig(msg));
    if config.bindings.is_empty() {
        return invalid("edge has no origin bindings".to_string());
    }
    if config.listeners.is_empty() {
        return invalid("edge has no listener addresses".to_string());
    }
    for ip in &config.listeners {
        if !ip.is_loopback() {
            return invalid(format!("listener {ip} is not a loopback address"));
        }
    }
    let mut seen = BTreeSet::new();
    for binding in &config.bindings {
        if !seen.insert(binding.domain.to_ascii_lowercase()) {
            return invalid(format!("domain {} bound twice", binding.domain));
        }
    }
    if let Some(domain) = &config.policy.default_cert_domain {
        if !seen.contains(&domain.to_ascii_lowercase()) {
            return invalid(format!("default certificate domain {domain} is not bound"));
        }
    }
    if let CertMode::SharedWildcard { zone } = &config.cert_mode {
        for domain in &seen {
            let direct_child = domain
                .strip_suffix(zone.as_str())
                .and_then(|rest| rest.strip_suffix('.'))
                .is_some_and(|label| !label.is_empty() && !label.contains('.'));
            if !direct_child && domain != zone {
                return invalid(format!(
                    "domain {domain} is not covered by the shared *.{zone} certificate"
                ));
            }
        }
    }
    Ok(())
}

/// Starts listeners and serving threads for one edge.
pub fn start_edge(config: EdgeConfig, ca: &TestCa) -> Result<EdgeHandle, SimulatorError> {
    validate(&config)?;
    let bound: BTreeSet<String> =
        config.bindings.iter().map(|b| b.domain.to_ascii_lowercase()).collect();

    let mut certs: HashMap<String, Arc<CertifiedKey>> = HashMap::new();
    match &config.cert_mode {
        CertMode::PerDomain => {
            for domain in &bound {
                certs.insert(domain.clone(), ca.certified_key_for(&[domain.clone()])?);
            }
        }
        CertMode::SharedWildcard { zone } => {
            let shared = ca.certified_key_for(&[format!("*.{zone}"), zone.clone()])?;
            for domain in &bound {
                certs.insert(domain.clone(), shared.clone());
            }
        }
    }

    let resolver =
        PolicyCertResolver { policy: config.policy.clone(), bound: bound.clone(), certs };
    let tls = Arc::new(
        ServerConfig::builder_with_provider(crate::tls_support::crypto_provider())
            .with_safe_default_protocol_versions()?
            .with_no_client_auth()
            .with_cert_resolver(Arc::new(resolver)),
    );

    let bindings: HashMap<String, OriginBinding> = config
        .bindings
        .iter()
        .map(|b| (b.domain.to_ascii_lowercase(), b.clone()))
        .collect();
    let context = Arc::new(EdgeContext {
        policy: config.policy.clone(),
        bound,
        bindings,
        tls,
        accepted: AtomicU32::new(0),
        reject_first_n: config.reject_first_n,
    });

    let mut port = config.port;
    let mut listeners = Vec::new();
    let mut addrs = Vec::new();
    for ip in &config.listeners {
        let listener = TcpListener::bind(SocketAddr::new(IpAddr::V4(*ip), port))
            .map_err(|source| SimulatorError::Bind { addr: format!("{ip}:{port}"), source })?;
        let addr = listener.local_addr().map_err(SimulatorError::Io)?;
        if port == 0 {
            port = addr.port();
        }
        listener.set_nonblocking(true).map_err(SimulatorError::Io)?;
        addrs.push(addr);
        listeners.push(listener);
    }

    let stop = Arc::new(AtomicBool::new(false));
    let accept_threads = listeners
        .into_iter()
        .map(|listener| {
            let context = context.clone();
            let stop = stop.clone();
            thread::spawn(move || accept_loop(listener, context, stop))
        })
        .collect();

    Ok(EdgeHandle {
        port,
        addrs,
        domains: config.bindings.iter().map(|b| b.domain.clone()).collect(),
        stop,
        accept_threads,
    })
}

fn accept_loop(listener: TcpListener, context: Arc<EdgeContext>, stop: Arc<AtomicBool>) {
    loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        match listener.accept() {
            Ok((sock, _)) => {
                let context = context.clone();
                thread::spawn(move || handle_connection(context, sock));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2));
            }
            Err(_) => return,
        }
    }
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn reason_phrase(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        403 => "Forbidden",
        404 => "Not Found",
        421 => "Misdirected Request",
        500 => "Internal Server Error",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        _ => "",
    }
}

// Response header order is fixed: Server, extras, Content-Length,
// Connection. The classifier's header-order rule depends on the wire
// sequence being a stable function of the served binding.
fn write_response(
    conn: &mut ServerConnection,
    sock: &mut TcpStream,
    status: u16,
    extra_headers: &[(String, String)],
    body: &[u8],
) {
    let mut head = format!("HTTP/1.1 {} {}\r\nServer: simedge\r\n", status, reason_phrase(status));
    for (name, value) in extra_headers {
        head.push_str(name);
        head.push_str(": ");
        head.push_str(value);
        head.push_str("\r\n");
    }
    head.push_str(&format!("Content-Length: {}\r\nConnection: close\r\n\r\n", body.len()));
    let mut tls = rustls::Stream::new(conn, sock);
    let _ = tls.write_all(head.as_bytes()).and_then(|()| tls.write_all(body));
    tls.conn.send_close_notify();
    let _ = tls.flush();
}

fn handle_connection(context: Arc<EdgeContext>, mut sock: TcpStream) {
    let _ = sock.set_read_timeout(Some(Duration::from_secs(10)));
    let _ = sock.set_write_timeout(Some(Duration::from_secs(10)));
    let _ = sock.set_nodelay(true);
    let Ok(mut conn) = ServerConnection::new(context.tls.clone()) else { return };

    // Read the request head; the handshake happens implicitly on the
    // first read, and its failures (including rejected missing SNI)
    // just drop the connection.
    let mut raw: Vec<u8> = Vec::new();
    let mut buf = [0u8; 8192];
    let head_end = loop {
        if let Some(pos) = find_subsequence(&raw, b"\r\n\r\n") {
            break pos + 4;
        }
        if raw.len() > 16 * 1024 {
            return;
        }
        let mut tls = rustls::Stream::new(&mut conn, &mut sock);
        match tls.read(&mut buf) {
            Ok(0) | Err(_) => return,
            Ok(n) => raw.extend_from_slice(&buf[..n]),
        }
    };

    let mut headers = [httparse::EMPTY_HEADER; 64];
    let mut request = httparse::Request::new(&mut headers);
    let parsed_ok = matches!(request.parse(&raw[..head_end]), Ok(httparse::Status::Complete(_)));
    if !parsed_ok {
        write_response(&mut conn, &mut sock, 400, &[], b"malformed request");
        return;
    }
    let method = request.method.unwrap_or("GET").to_string();
    let path = request.path.unwrap_or("/").to_string();
    let host_header = request
        .headers
        .iter()
        .find(|h| h.name.eq_ignore_ascii_case("host"))
        .map(|h| String::from_utf8_lossy(h.value).trim().to_ascii_lowercase());
    let Some(host_raw) = host_header else {
        write_response(&mut conn, &mut sock, 400, &[], b"missing host header");
        return;
    };
    let host = host_raw.split(':').next().unwrap_or("").to_string();

    let served_so_far = context.accepted.fetch_add(1, Ordering::SeqCst);
    if served_so_far < context.reject_first_n {
        write_response(&mut conn, &mut sock, 503, &[], b"temporarily rate limited");
        return;
    }

    let sni = conn.server_name().map(|s| s.to_ascii_lowercase());
    match route_request(&context.policy, &context.bound, sni.as_deref(), &host) {
        RoutingDecision::Misdirected => {
            write_response(&mut conn, &mut sock, 421, &[], b"sni and host do not agree");
        }
        RoutingDecision::UnboundHost => {
            write_response(&mut conn, &mut sock, 403, &[], b"host not bound on this edge");
        }
        RoutingDecision::Serve { domain } => {
            let binding = context.bindings.get(&domain).expect("routed to a bound domain");
            if let Some(upstream) = binding.upstream {
                proxy_upstream(
                    &mut conn,
                    &mut sock,
                    binding,
                    upstream,
                    &method,
                    &path,
                    request.headers,
                );
            } else {
                let delta = if binding.jitter == 0 {
                    0
                } else {
                    fnv64(&[
                        host.as_bytes(),
                        sni.as_deref().unwrap_or("").as_bytes(),
                        path.as_bytes(),
                    ]) % (binding.jitter + 1)
                };
                let body = if delta == 0 {
                    binding.body.clone()
                } else {
                    seeded_body(&binding.domain, binding.body.len() as u64 + delta)
                };
                write_response(
                    &mut conn,
                    &mut sock,
                    binding.status,
                    &binding.extra_headers,
                    &body,
                );
            }
        }
    }
}

// Forwards the request to a plain-HTTP upstream and relays status and
// body back over TLS. Hop-by-hop Connection handling aside, headers
// are forwarded as received, which is what lets the upstream see the
// original User-Agent.
fn proxy_upstream(
    conn: &mut ServerConnection,
    sock: &mut TcpStream,
    binding: &OriginBinding,
    upstream: SocketAddr,
    method: &str,
    path: &str,
    headers: &[httparse::Header<'_>],
) {
    let attempt = || -> Result<(u16, Vec<u8>), String> {
        let mut up = TcpStream::connect_timeout(&upstream, Duration::from_secs(5))
            .map_err(|e| format!("upstream connect: {e}"))?;
        let _ = up.set_read_timeout(Some(Duration::from_secs(10)));
        let _ = up.set_write_timeout(Some(Duration::from_secs(10)));
        let mut fwd = format!("{method} {path} HTTP/1.1\r\n");
        for header in headers {
            if header.name.eq_ignore_ascii_case("connection") {
                continue;
            }
            fwd.push_str(header.name);
            fwd.push_str(": ");
            fwd.push_str(String::from_utf8_lossy(header.value).trim());
            fwd.push_str("\r\n");
        }
        fwd.push_str("Connection: close\r\n\r\n");
        up.write_all(fwd.as_bytes()).map_err(|e| format!("upstream write: {e}"))?;
        let mut raw = Vec::new();
        up.read_to_end(&mut raw).map_err(|e| format!("upstream read: {e}"))?;

        let head_end = find_subsequence(&raw, b"\r\n\r\n")
            .map(|p| p + 4)
            .ok_or("upstream sent no header terminator".to_string())?;
        let mut up_headers = [httparse::EMPTY_HEADER; 64];
        let mut response = httparse::Response::new(&mut up_headers);
        match response.parse(&raw[..head_end]) {
            Ok(httparse::Status::Complete(_)) => {}
            _ => return Err("unparseable upstream response".to_string()),
        }
        let status = response.code.ok_or("upstream response without status".to_string())?;
        Ok((status, raw[head_end..].to_vec()))
    };
    match attempt() {
        Ok((status, body)) => {
            write_response(conn, sock, status, &binding.extra_headers, &body)
        }
        Err(message) => write_response(conn, sock, 502, &[], message.as_bytes()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdn_simulator::PolicyPreset;

    #[test]
    fn seeded_bodies_are_deterministic_and_domain_specific() {
        let a = seeded_body("alpha.sim.test", 256);
        assert_eq!(a.len(), 256);
        assert_eq!(a, seeded_body("alpha.sim.test", 256));
        assert_ne!(a, seeded_body("beta.sim.test", 256));
        assert!(a.iter().all(|b| b.is_ascii_alphanumeric()));
        // Longer requests share the prefix: jitter extends, not replaces.
        let longer = seeded_body("alpha.sim.test", 300);
        assert_eq!(&longer[..256], &a[..]);
    }

    #[test]
    fn config_validation_catches_misconfigurations() {
        let ca = TestCa::new().unwrap();
        let base = EdgeConfig {
            policy: PolicyPreset::FrontingPermissive.policy(),
            bindings: vec![OriginBinding::seeded("a.sim.test", 100)],
            listeners: vec!["127.0.0.1".parse().unwrap()],
            port: 0,
            cert_mode: CertMode::PerDomain,
            reject_first_n: 0,
        };
        let mut no_bindings = base.clone();
        no_bindings.bindings.clear();
        assert!(matches!(
            start_edge(no_bindings, &ca),
            Err(SimulatorError::InvalidConfig(_))
        ));
        let mut public_listener = base.clone();
        public_listener.listeners = vec!["192.0.2.1".parse().unwrap()];
        assert!(matches!(
            start_edge(public_listener, &ca),
            Err(SimulatorError::InvalidConfig(_))
        ));
        let mut duplicate = base.clone();
        duplicate.bindings.push(OriginBinding::seeded("a.sim.test", 100));
        assert!(matches!(start_edge(duplicate, &ca), Err(SimulatorError::InvalidConfig(_))));
        let mut unbound_default = base.clone();
        unbound_default.policy.default_cert_domain = Some("missing.sim.test".to_string());
        assert!(matches!(
            start_edge(unbound_default, &ca),
            Err(SimulatorError::InvalidConfig(_))
        ));
        let mut bad_wildcard = base;
        bad_wildcard.cert_mode = CertMode::SharedWildcard { zone: "sim.test".to_string() };
        bad_wildcard.bindings.push(OriginBinding::seeded("too.deep.sim.test", 100));
        assert!(matches!(
            start_edge(bad_wildcard, &ca),
            Err(SimulatorError::InvalidConfig(_))
        ));
    }
}
