//! Crate-internal TLS plumbing shared by the scan client and the
//! simulated edge: process-wide crypto provider setup and leaf
//! certificate summarization.

use std::sync::Arc;

use rustls::crypto::CryptoProvider;
use rustls_pki_types::CertificateDer;
use x509_parser::prelude::{FromDer, GeneralName, ParsedExtension, X509Certificate};

use crate::scan_engine::CertSummary;

/// Returns the process default crypto provider, installing the
/// aws-lc-rs one on first use. Safe to race: the loser just reads the
/// winner's installation.
pub(crate) fn crypto_provider() -> Arc<CryptoProvider> {
    if let Some(provider) = CryptoProvider::get_default() {
        return provider.clone();
    }
    let _ = CryptoProvider::install_default(rustls::crypto::aws_lc_rs::default_provider());
    CryptoProvider::get_default().expect("default crypto provider installed").clone()
}

/// Extracts subject CN and SAN DNS names from a DER certificate.
/// Returns `None` only for unparseable certificates.
pub(crate) fn summarize_cert(cert: &CertificateDer<'_>) -> Option<CertSummary> {
    let (_, parsed) = X509Certificate::from_der(cert.as_ref()).ok()?;
    let subject_common_name = parsed
        .subject()
        .iter_common_name()
        .next()
        .and_then(|cn| cn.as_str().ok())
        .map(str::to_string);
    let mut san_dns_names = Vec::new();
    for ext in parsed.extensions() {
        if let ParsedExtension::SubjectAlternativeName(san) = ext.parsed_extension() {
            for name in &san.general_names {
                if let GeneralName::DNSName(dns) = name {
                    san_dns_names.push(dns.to_string());
                }
            }
        }
    }
    Some(CertSummary { subject_common_name, san_dns_names })
}
