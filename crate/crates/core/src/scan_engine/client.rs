//! Single-scan execution over a real TLS connection.
//!
//! The client connects by IP address, never resolves names, and does
//! not verify server certificates: a mismatched or irrelevant cert is
//! a measurement, not an error. It must not be reused as a
//! general-purpose HTTPS client.

use std::collections::BTreeSet;
use std::io::{self, Read, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpStream};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rustls::client::danger::{HandshakeSignatureValid, ServerCertVerified, ServerCertVerifier};
use rustls::crypto::CryptoProvider;
use rustls::{ClientConfig, ClientConnection, DigitallySignedStruct, SignatureScheme};
use rustls_pki_types::{CertificateDer, ServerName, UnixTime};

use super::{CertSummary, ScanError, ScanOutcome, ScanSpec};
use crate::dns_ingest::Ipv4Prefix;
use crate::tls_support::{crypto_provider, summarize_cert};

/// Browser User-Agent presented by scans so responses match what an
/// ordinary client would receive.
pub const DEFAULT_USER_AGENT: &str = "Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/537.36 \
     (KHTML, like Gecko) Chrome/104.0.5112.79 Safari/537.36";

/// Which destination IPs a scan run may touch. Loopback is always
/// permitted; everything else requires an explicit allowlist or an
/// ownership override. The default refuses non-loopback targets.
#[derive(Debug, Clone, Default)]
pub enum TargetPolicy {
    #[default]
    LoopbackOnly,
    Allowlist(Vec<Ipv4Prefix>),
    /// Operator asserted ownership of the scanned infrastructure.
    Unrestricted,
}

impl TargetPolicy {
    pub fn permits(&self, ip: Ipv4Addr) -> bool {
        if ip.is_loopback() {
            return true;
        }
        match self {
            TargetPolicy::LoopbackOnly => false,
            TargetPolicy::Allowlist(prefixes) => prefixes.iter().any(|p| p.contains(ip)),
            TargetPolicy::Unrestricted => true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanConfig {
    /// Worker threads for parallel execution.
    pub parallelism: usize,
    pub connect_timeout: Duration,
    /// Budget for the whole scan: handshake, request, response.
    pub total_timeout: Duration,
    pub user_agent: String,
    /// Pause before each sequential retry.
    pub retry_delay: Duration,
    /// Responses with bodies beyond this many bytes are recorded as
    /// transport errors; a truncated body has no usable length.
    pub max_body: u64,
    pub path: String,
    /// TCP port scans connect to; destination tuples carry only IPs.
    pub port: u16,
    pub target_policy: TargetPolicy,
    /// Serialize scans sharing a destination IP to keep load per host
    /// at one in-flight request.
    pub serialize_per_ip: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            parallelism: 32,
            connect_timeout: Duration::from_secs(5),
            total_timeout: Duration::from_secs(15),
            user_agent: DEFAULT_USER_AGENT.to_string(),
            retry_delay: Duration::from_secs(1),
            max_body: 2 * 1024 * 1024,
            path: "/".to_string(),
            port: 443,
            target_policy: TargetPolicy::default(),
            serialize_per_ip: false,
        }
    }
}

/// A completed HTTP exchange, body included. [`ScanOutcome`] keeps
/// only the body length; the demo needs the bytes.
#[derive(Debug, Clone)]
pub struct HttpExchange {
    pub status: u16,
    pub header_names: Vec<String>,
    pub body: Vec<u8>,
    pub leaf_cert: Option<CertSummary>,
}

/// Transport-level failure. The leaf summary is kept when the
/// handshake completed before the exchange died.
#[derive(Debug, Clone)]
pub struct ExchangeError {
    pub message: String,
    pub leaf_cert: Option<CertSummary>,
}

impl std::fmt::Display for ExchangeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn fail(message: String, leaf_cert: Option<CertSummary>) -> ExchangeError {
    ExchangeError { message, leaf_cert }
}

// Verification is disabled on purpose; see the module comment.
#[derive(Debug)]
struct AcceptAnyServerCert(Arc<CryptoProvider>);

impl ServerCertVerifier for AcceptAnyServerCert {
    fn verify_server_cert(
        &self,
        _end_entity: &CertificateDer<'_>,
        _intermediates: &[CertificateDer<'_>],
        _server_name: &ServerName<'_>,
        _ocsp_response: &[u8],
        _now: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        Ok(ServerCertVerified::assertion())
    }

    fn verify_tls12_signature(
        &self,
        _message: &[u8],
        _cert: &CertificateDer<'_>,
        _dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        Ok(HandshakeSignatureValid::assertion())
    }

    fn verify_tls13_signature(
        &self,
        _message: &[u8],
        _cert: &CertificateDer<'_>,
        _dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        Ok(HandshakeSignatureValid::assertion())
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.0.signature_verification_algorithms.supported_schemes()
    }
}

fn client_tls_config() -> Arc<ClientConfig> {
    static CONFIG: OnceLock<Arc<ClientConfig>> = OnceLock::new();
    CONFIG
        .get_or_init(|| {
            let provider = crypto_provider();
            let config = ClientConfig::builder_with_provider(provider.clone())
                .with_safe_default_protocol_versions()
                .expect("default protocol versions supported")
                .dangerous()
                .with_custom_certificate_verifier(Arc::new(AcceptAnyServerCert(provider)))
                .with_no_client_auth();
            Arc::new(config)
        })
        .clone()
}

fn build_request(host: &str, path: &str, user_agent: &str) -> Vec<u8> {
    format!(
        "GET {path} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: {user_agent}\r\n\
         Accept-Encoding: identity\r\nConnection: close\r\n\r\n"
    )
    .into_bytes()
}

fn arm_socket_timeouts(sock: &TcpStream, deadline: Instant) -> Result<(), String> {
    let remaining = deadline.saturating_duration_since(Instant::now());
    if remaining < Duration::from_millis(1) {
        return Err("total timeout exceeded".to_string());
    }
    sock.set_read_timeout(Some(remaining)).map_err(|e| format!("socket setup: {e}"))?;
    sock.set_write_timeout(Some(remaining)).map_err(|e| format!("socket setup: {e}"))?;
    Ok(())
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn decode_chunked(mut data: &[u8]) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    loop {
        let line_end =
            find_subsequence(data, b"\r\n").ok_or("truncated chunked body".to_string())?;
        let size_text = std::str::from_utf8(&data[..line_end])
            .map_err(|_| "invalid chunk size line".to_string())?;
        let size_field = size_text.split(';').next().unwrap_or("").trim();
        let size = usize::from_str_radix(size_field, 16)
            .map_err(|_| "invalid chunk size line".to_string())?;
        data = &data[line_end + 2..];
        if size == 0 {
            // Trailers, if any, are ignored.
            return Ok(out);
        }
        if data.len() < size + 2 {
            return Err("truncated chunked body".to_string());
        }
        if &data[size..size + 2] != b"\r\n" {
            return Err("malformed chunk terminator".to_string());
        }
        out.extend_from_slice(&data[..size]);
        data = &data[size + 2..];
    }
}

const HEAD_CAP: usize = 64 * 1024;

/// Performs one HTTPS GET-style exchange with explicit control over
/// the SNI (`None` omits the extension) and raw request bytes.
fn raw_exchange(
    addr: SocketAddr,
    sni: Option<&str>,
    request: &[u8],
    connect_timeout: Duration,
    total_timeout: Duration,
    max_body: u64,
) -> Result<HttpExchange, ExchangeError> {
    let deadline = Instant::now() + total_timeout;
    let mut sock = TcpStream::connect_timeout(&addr, connect_timeout)
        .map_err(|e| fail(format!("connect: {e}"), None))?;
    let _ = sock.set_nodelay(true);

    let server_name = match sni {
        Some(name) => ServerName::try_from(name.to_string())
            .map_err(|_| fail(format!("invalid server name: {name:?}"), None))?,
        None => ServerName::IpAddress(addr.ip().into()),
    };
    let mut conn = ClientConnection::new(client_tls_config(), server_name)
        .map_err(|e| fail(format!("tls setup: {e}"), None))?;

    arm_socket_timeouts(&sock, deadline).map_err(|m| fail(m, None))?;
    {
        let mut tls = rustls::Stream::new(&mut conn, &mut sock);
        if let Err(e) = tls.write_all(request).and_then(|()| tls.flush()) {
            return Err(fail(format!("tls: {e}"), None));
        }
    }
    let leaf_cert =
        conn.peer_certificates().and_then(|certs| certs.first()).and_then(summarize_cert);

    // Connection: close is always requested, so the framing below can
    // fall back to read-until-EOF.
    let raw_cap = (max_body as usize).saturating_add(HEAD_CAP + 64 * 1024);
    let mut raw: Vec<u8> = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        if raw.len() > raw_cap {
            return Err(fail("body exceeded max-body limit; truncated".to_string(), leaf_cert));
        }
        arm_socket_timeouts(&sock, deadline).map_err(|m| fail(m, leaf_cert.clone()))?;
        let mut tls = rustls::Stream::new(&mut conn, &mut sock);
        match tls.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => raw.extend_from_slice(&buf[..n]),
            // Peers that skip close_notify still mark a usable end of stream.
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e)
                if e.kind() == io::ErrorKind::WouldBlock
                    || e.kind() == io::ErrorKind::TimedOut =>
            {
                return Err(fail("read timed out".to_string(), leaf_cert));
            }
            Err(e) => return Err(fail(format!("read: {e}"), leaf_cert)),
        }
    }

    let head_end = match find_subsequence(&raw, b"\r\n\r\n") {
        Some(pos) if pos + 4 <= HEAD_CAP => pos + 4,
        Some(_) => return Err(fail("header section too large".to_string(), leaf_cert)),
        None => return Err(fail("missing header terminator".to_string(), leaf_cert)),
    };
    let mut headers = [httparse::EMPTY_HEADER; 64];
    let mut response = httparse::Response::new(&mut headers);
    match response.parse(&raw[..head_end]) {
        Ok(httparse::Status::Complete(_)) => {}
        Ok(httparse::Status::Partial) => {
            return Err(fail("truncated header section".to_string(), leaf_cert))
        }
        Err(e) => return Err(fail(format!("http parse: {e}"), leaf_cert)),
    }
    let status = match response.code {
        Some(code) => code,
        None => return Err(fail("missing status code".to_string(), leaf_cert)),
    };
    // Wire order and case are preserved; the classifier compares them.
    let header_names: Vec<String> =
        response.headers.iter().map(|h| h.name.to_string()).collect();

    let header_value = |name: &str| {
        response
            .headers
            .iter()
            .find(|h| h.name.eq_ignore_ascii_case(name))
            .map(|h| String::from_utf8_lossy(h.value).trim().to_string())
    };
    let chunked = header_value("transfer-encoding")
        .map(|v| v.to_ascii_lowercase().contains("chunked"))
        .unwrap_or(false);
    let remainder = &raw[head_end..];
    let body: Vec<u8> = if chunked {
        decode_chunked(remainder).map_err(|m| fail(m, leaf_cert.clone()))?
    } else if let Some(length_text) = header_value("content-length") {
        let declared: usize = length_text
            .parse()
            .map_err(|_| fail("invalid content-length".to_string(), leaf_cert.clone()))?;
        if remainder.len() < declared {
            return Err(fail("body shorter than declared length".to_string(), leaf_cert));
        }
        remainder[..declared].to_vec()
    } else {
        remainder.to_vec()
    };
    if body.len() as u64 > max_body {
        return Err(fail("body exceeded max-body limit; truncated".to_string(), leaf_cert));
    }
    Ok(HttpExchange { status, header_names, body, leaf_cert })
}

/// HTTPS GET with explicit SNI control, gated by the config's target
/// policy. Used by scans, the demo, and tests that need body bytes.
pub fn https_get(
    addr: SocketAddr,
    sni: Option<&str>,
    host: &str,
    cfg: &ScanConfig,
) -> Result<HttpExchange, ExchangeError> {
    match addr.ip() {
        IpAddr::V4(v4) if cfg.target_policy.permits(v4) => {}
        IpAddr::V6(v6) if v6.is_loopback() => {}
        other => return Err(fail(format!("target {other} not permitted by policy"), None)),
    }
    let request = build_request(host, &cfg.path, &cfg.user_agent);
    raw_exchange(addr, sni, &request, cfg.connect_timeout, cfg.total_timeout, cfg.max_body)
}

/// Sends caller-built request bytes; otherwise identical to
/// [`https_get`]. The demo uses this to put rewritten requests on the
/// wire unmodified.
pub fn https_send_raw(
    addr: SocketAddr,
    sni: Option<&str>,
    request: &[u8],
    cfg: &ScanConfig,
) -> Result<HttpExchange, ExchangeError> {
    match addr.ip() {
        IpAddr::V4(v4) if cfg.target_policy.permits(v4) => {}
        IpAddr::V6(v6) if v6.is_loopback() => {}
        other => return Err(fail(format!("target {other} not permitted by policy"), None)),
    }
    raw_exchange(addr, sni, request, cfg.connect_timeout, cfg.total_timeout, cfg.max_body)
}

/// Executes one scan. Transport problems become part of the outcome;
/// the only hard error is a destination the target policy refuses.
pub fn execute_scan(spec: &ScanSpec, cfg: &ScanConfig) -> Result<ScanOutcome, ScanError> {
    if !cfg.target_policy.permits(spec.dst_ip) {
        return Err(ScanError::TargetNotAllowed(spec.dst_ip));
    }
    let addr = SocketAddr::new(IpAddr::V4(spec.dst_ip), cfg.port);
    let request = build_request(&spec.host, &cfg.path, &cfg.user_agent);
    let result = raw_exchange(
        addr,
        spec.sni.as_deref(),
        &request,
        cfg.connect_timeout,
        cfg.total_timeout,
        cfg.max_body,
    );
    Ok(match result {
        Ok(exchange) => ScanOutcome::response(
            spec.clone(),
            exchange.status,
            exchange.header_names,
            exchange.body.len() as u64,
            exchange.leaf_cert,
        ),
        Err(err) => ScanOutcome::transport_failure(spec.clone(), err.leaf_cert, err.message),
    })
}

/// Parses an allowlist file: one IPv4 address or CIDR prefix per line,
/// `#` comments and blank lines ignored.
pub fn parse_allowlist(text: &str) -> Result<Vec<Ipv4Prefix>, crate::dns_ingest::IngestError> {
    let mut prefixes = BTreeSet::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        prefixes.insert(line.parse::<Ipv4Prefix>()?);
    }
    Ok(prefixes.into_iter().collect())
}
