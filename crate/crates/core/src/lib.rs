//! Measurement toolkit for domain-name misinformation in TLS deployments.
//!
//! CDN edges make three routing-relevant observations per request: the
//! destination IP, the TLS SNI, and the HTTP Host header. When an edge does
//! not insist that all three agree, a client can make them disagree on
//! purpose. This crate detects and classifies the resulting techniques:
//!
//! - **domain fronting**: connect to a front domain's IP, present the front's
//!   SNI, and smuggle the real target in the Host header;
//! - **domain faking**: connect straight to the target's IP but present a
//!   front domain's SNI;
//! - **domainless fronting**: connect to the target's IP and omit SNI
//!   entirely, naming the target only in the Host header.
//!
//! The pipeline runs in stages, each of which is its own module:
//!
//! 1. [`dns_ingest`] parses passive DNS CNAME data and TLS connection logs,
//!    normalizes names, and maps FQDNs to registrable domains and IPs to
//!    autonomous systems.
//! 2. [`candidate_sets`] groups (domain, IP) destination tuples into the
//!    sets within which fronting pairs are sampled: by AS, by the CNAME
//!    target's registrable domain, or by the exact CNAME target FQDN.
//! 3. [`scan_engine`] expands each sampled (target, front) pair into the
//!    five-scan matrix (two baselines plus one scan per technique) and
//!    executes the scans over real TLS connections.
//! 4. [`classifier`] turns the five outcomes of a pair into per-technique
//!    success/failure verdicts using content-length and header-order
//!    comparisons against the baselines.
//! 5. [`report`] aggregates verdicts into per-group support percentages with
//!    a green/yellow/red banding and renders tables.
//!
//! Because probing third-party infrastructure is off the table for tests,
//! [`cdn_simulator`] provides a local TLS edge whose routing, certificate
//! selection, and SNI/Host enforcement policies are configurable. Every
//! classifier rule and every end-to-end expectation is exercised against
//! that simulator on loopback addresses, deterministically.

pub mod candidate_sets;
pub mod cdn_simulator;
pub mod classifier;
pub mod dns_ingest;
pub mod report;
pub mod scan_engine;

mod tls_support;
