//! Scan planning and execution.
//!
//! Every sampled (target, front) pair expands into five scans that
//! differ only in which of the three observable names (destination IP,
//! SNI, Host) tell the truth:
//!
//! | role        | connect to | SNI          | Host          |
//! |-------------|-----------|--------------|---------------|
//! | baseline-0  | target IP | target domain | target domain |
//! | baseline-1  | front IP  | front domain  | front domain  |
//! | fronting    | front IP  | front domain  | target domain |
//! | faking      | target IP | front domain  | target domain |
//! | domainless  | target IP | *(absent)*    | target domain |
//!
//! The two baselines are honest requests; they anchor the comparison
//! the classifier makes. Execution connects by IP address only and
//! never performs DNS resolution, so the names in a spec are claims,
//! not lookups.

mod client;
mod scheduler;

pub use client::{
    execute_scan, https_get, https_send_raw, parse_allowlist, ExchangeError, HttpExchange,
    ScanConfig, TargetPolicy, DEFAULT_USER_AGENT,
};
pub use scheduler::{
    execute_all, plan_all, prefilter_tuples, retry_failed, IndexedOutcome, PlannedScan,
    PrefilterOutcome, RetryStats,
};

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidate_sets::ScanPair;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("target {0} is outside the allowed scan range; pass an allowlist or the ownership flag to scan it")]
    TargetNotAllowed(Ipv4Addr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScanRole {
    #[serde(rename = "baseline-0")]
    Baseline0,
    #[serde(rename = "baseline-1")]
    Baseline1,
    #[serde(rename = "fronting")]
    Fronting,
    #[serde(rename = "faking")]
    Faking,
    #[serde(rename = "domainless")]
    Domainless,
}

impl ScanRole {
    pub const ALL: [ScanRole; 5] = [
        ScanRole::Baseline0,
        ScanRole::Baseline1,
        ScanRole::Fronting,
        ScanRole::Faking,
        ScanRole::Domainless,
    ];

    pub fn is_baseline(&self) -> bool {
        matches!(self, ScanRole::Baseline0 | ScanRole::Baseline1)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ScanRole::Baseline0 => "baseline-0",
            ScanRole::Baseline1 => "baseline-1",
            ScanRole::Fronting => "fronting",
            ScanRole::Faking => "faking",
            ScanRole::Domainless => "domainless",
        }
    }
}

/// One scan to perform: where to connect and which names to present.
/// `sni: None` omits the extension entirely.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub role: ScanRole,
    pub dst_ip: Ipv4Addr,
    pub sni: Option<String>,
    pub host: String,
}

/// What the server proved about itself: subject CN plus SAN DNS names
/// from the leaf certificate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertSummary {
    pub subject_common_name: Option<String>,
    pub san_dns_names: Vec<String>,
}

/// Result of one executed scan.
///
/// Exactly one of `status_code` and `transport_error` is set: an HTTP
/// response (any status) means no transport error, and a transport
/// error (connect, TLS, timeout, framing) means no usable response.
/// `leaf_cert` may be present either way; a handshake can succeed even
/// when the HTTP exchange later fails.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanOutcome {
    #[serde(flatten)]
    pub spec: ScanSpec,
    pub status_code: Option<u16>,
    pub header_names: Vec<String>,
    pub content_length: u64,
    pub leaf_cert: Option<CertSummary>,
    pub transport_error: Option<String>,
    /// Failed sequential retry attempt, kept for the record. A retry
    /// that succeeded replaces the outcome instead.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub retry: Option<Box<ScanOutcome>>,
}

impl ScanOutcome {
    pub fn response(
        spec: ScanSpec,
        status: u16,
        header_names: Vec<String>,
        content_length: u64,
        leaf_cert: Option<CertSummary>,
    ) -> ScanOutcome {
        ScanOutcome {
            spec,
            status_code: Some(status),
            header_names,
            content_length,
            leaf_cert,
            transport_error: None,
            retry: None,
        }
    }

    pub fn transport_failure(
        spec: ScanSpec,
        leaf_cert: Option<CertSummary>,
        message: String,
    ) -> ScanOutcome {
        ScanOutcome {
            spec,
            status_code: None,
            header_names: Vec::new(),
            content_length: 0,
            leaf_cert,
            transport_error: Some(message),
            retry: None,
        }
    }

    /// The status/error exclusivity described on the type.
    pub fn is_consistent(&self) -> bool {
        self.status_code.is_none() == self.transport_error.is_some()
    }
}

/// Expands a pair into its five scans, in [`ScanRole::ALL`] order.
pub fn plan_scans(pair: &ScanPair) -> [ScanSpec; 5] {
    let target = &pair.target;
    let front = &pair.front;
    [
        ScanSpec {
            role: ScanRole::Baseline0,
            dst_ip: target.ip,
            sni: Some(target.domain.clone()),
            host: target.domain.clone(),
        },
        ScanSpec {
            role: ScanRole::Baseline1,
            dst_ip: front.ip,
            sni: Some(front.domain.clone()),
            host: front.domain.clone(),
        },
        ScanSpec {
            role: ScanRole::Fronting,
            dst_ip: front.ip,
            sni: Some(front.domain.clone()),
            host: target.domain.clone(),
        },
        ScanSpec {
            role: ScanRole::Faking,
            dst_ip: target.ip,
            sni: Some(front.domain.clone()),
            host: target.domain.clone(),
        },
        ScanSpec {
            role: ScanRole::Domainless,
            dst_ip: target.ip,
            sni: None,
            host: target.domain.clone(),
        },
    ]
}
