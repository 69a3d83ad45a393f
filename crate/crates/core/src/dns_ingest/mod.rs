//! Ingestion of passive DNS CNAME data and TLS connection logs.
//!
//! Input records arrive as JSONL. Parsing is forgiving per line (a bad
//! line is counted, not fatal) but strict per stream: when more than
//! half of the non-blank lines are malformed the input is presumed to
//! be in the wrong format and rejected outright.

mod asn;
mod suffix;

pub use asn::{AsnEntry, AsnTable, Ipv4Prefix};
pub use suffix::SuffixList;

use std::io::BufRead;
use std::net::{IpAddr, Ipv4Addr};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{malformed} of {total} non-blank lines malformed; input is probably not in the expected format")]
    MostlyMalformed { malformed: usize, total: usize },
    #[error("empty domain name")]
    EmptyDomain,
    #[error("invalid domain name: {0:?}")]
    InvalidDomain(String),
    #[error("invalid IPv4 prefix: {0}")]
    InvalidPrefix(String),
    #[error("duplicate prefix in AS table: {0}")]
    DuplicatePrefix(String),
    #[error("AS number 0 is reserved (prefix {0})")]
    InvalidAsn(String),
    #[error("csv error: {0}")]
    Csv(String),
}

/// One normalized CNAME observation: `alias` resolved through `cname`
/// to `ip`. Names are lowercase with no trailing dot; `canonical_domain`
/// is the registrable domain of the CNAME target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsCnameObservation {
    #[serde(rename = "alias")]
    pub alias_fqdn: String,
    #[serde(rename = "cname")]
    pub canonical_fqdn: String,
    pub canonical_domain: String,
    #[serde(rename = "ip")]
    pub resolved_ip: Ipv4Addr,
    #[serde(rename = "ts", skip_serializing_if = "Option::is_none")]
    pub observed_at: Option<u64>,
}

/// One TLS connection log record. `server_name` is `None` when the
/// client sent no SNI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsObservation {
    #[serde(rename = "sni")]
    pub server_name: Option<String>,
    pub dst_ip: Ipv4Addr,
}

/// Per-stream parse bookkeeping. `skipped_ipv6` counts well-formed
/// records dropped because the pipeline is IPv4-only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ParseStats {
    pub parsed: usize,
    pub malformed: usize,
    pub skipped_ipv6: usize,
    pub blank: usize,
}

impl ParseStats {
    fn non_blank(&self) -> usize {
        self.parsed + self.malformed + self.skipped_ipv6
    }

    fn check_mostly_malformed(&self) -> Result<(), IngestError> {
        if self.malformed * 2 > self.non_blank() {
            return Err(IngestError::MostlyMalformed {
                malformed: self.malformed,
                total: self.non_blank(),
            });
        }
        Ok(())
    }
}

/// Lowercases, strips one trailing dot, and validates label shape.
/// Returns the normalized name.
pub fn normalize_fqdn(name: &str) -> Result<String, IngestError> {
    let trimmed = name.trim().trim_end_matches('.').to_ascii_lowercase();
    if trimmed.is_empty() {
        return Err(IngestError::EmptyDomain);
    }
    let valid_label = |label: &str| {
        !label.is_empty()
            && label
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '*')
    };
    if !trimmed.split('.').all(valid_label) {
        return Err(IngestError::InvalidDomain(name.to_string()));
    }
    Ok(trimmed)
}

/// Maps an FQDN to its registrable domain: the public suffix plus one
/// label. Names that match no suffix rule, or that are themselves a
/// public suffix, fall back to their last two labels.
pub fn registrable_domain(fqdn: &str, suffixes: &SuffixList) -> Result<String, IngestError> {
    let normalized = normalize_fqdn(fqdn)?;
    let labels: Vec<&str> = normalized.split('.').collect();
    let n = labels.len();
    let suffix_len = suffixes.suffix_label_count(&labels);
    let keep = if suffix_len == 0 || suffix_len >= n {
        2.min(n)
    } else {
        suffix_len + 1
    };
    Ok(labels[n - keep..].join("."))
}

#[derive(Deserialize)]
struct RawCnameRecord {
    alias: String,
    cname: String,
    ip: String,
    #[serde(default)]
    ts: Option<u64>,
}

#[derive(Deserialize)]
struct RawTlsRecord {
    #[serde(default)]
    sni: Option<String>,
    dst_ip: String,
}

enum LineOutcome<T> {
    Record(T),
    SkippedIpv6,
    Malformed,
}

fn parse_cname_line(line: &str, suffixes: &SuffixList) -> LineOutcome<DnsCnameObservation> {
    let raw: RawCnameRecord = match serde_json::from_str(line) {
        Ok(raw) => raw,
        Err(_) => return LineOutcome::Malformed,
    };
    let ip: Ipv4Addr = match raw.ip.parse::<IpAddr>() {
        Ok(IpAddr::V4(v4)) => v4,
        Ok(IpAddr::V6(_)) => return LineOutcome::SkippedIpv6,
        Err(_) => return LineOutcome::Malformed,
    };
    let (alias, cname) = match (normalize_fqdn(&raw.alias), normalize_fqdn(&raw.cname)) {
        (Ok(a), Ok(c)) => (a, c),
        _ => return LineOutcome::Malformed,
    };
    // A record whose alias equals its target carries no CNAME signal.
    if alias == cname {
        return LineOutcome::Malformed;
    }
    let canonical_domain = match registrable_domain(&cname, suffixes) {
        Ok(d) => d,
        Err(_) => return LineOutcome::Malformed,
    };
    LineOutcome::Record(DnsCnameObservation {
        alias_fqdn: alias,
        canonical_fqdn: cname,
        canonical_domain,
        resolved_ip: ip,
        observed_at: raw.ts,
    })
}

fn parse_tls_line(line: &str) -> LineOutcome<TlsObservation> {
    let raw: RawTlsRecord = match serde_json::from_str(line) {
        Ok(raw) => raw,
        Err(_) => return LineOutcome::Malformed,
    };
    let ip: Ipv4Addr = match raw.dst_ip.parse::<IpAddr>() {
        Ok(IpAddr::V4(v4)) => v4,
        Ok(IpAddr::V6(_)) => return LineOutcome::SkippedIpv6,
        Err(_) => return LineOutcome::Malformed,
    };
    // Empty SNI strings and absent SNI mean the same thing on the wire.
    let server_name = match raw.sni.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(name) => match normalize_fqdn(name) {
            Ok(n) => Some(n),
            Err(_) => return LineOutcome::Malformed,
        },
    };
    LineOutcome::Record(TlsObservation { server_name, dst_ip: ip })
}

fn parse_stream<R, T, F>(reader: R, mut parse: F) -> Result<(Vec<T>, ParseStats), IngestError>
where
    R: BufRead,
    F: FnMut(&str) -> LineOutcome<T>,
{
    let mut records = Vec::new();
    let mut stats = ParseStats::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            stats.blank += 1;
            continue;
        }
        match parse(&line) {
            LineOutcome::Record(r) => {
                stats.parsed += 1;
                records.push(r);
            }
            LineOutcome::SkippedIpv6 => stats.skipped_ipv6 += 1,
            LineOutcome::Malformed => stats.malformed += 1,
        }
    }
    stats.check_mostly_malformed()?;
    Ok((records, stats))
}

/// Parses CNAME JSONL (`alias`, `cname`, `ip`, optional `ts`).
pub fn parse_cname_records<R: BufRead>(
    reader: R,
    suffixes: &SuffixList,
) -> Result<(Vec<DnsCnameObservation>, ParseStats), IngestError> {
    parse_stream(reader, |line| parse_cname_line(line, suffixes))
}

/// Parses TLS connection JSONL (`sni` nullable, `dst_ip`).
pub fn parse_tls_records<R: BufRead>(
    reader: R,
) -> Result<(Vec<TlsObservation>, ParseStats), IngestError> {
    parse_stream(reader, parse_tls_line)
}
