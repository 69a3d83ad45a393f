//! Throwaway certificate authority for simulator runs. Keys live in
//! memory; only the CA certificate is ever written out, so operators
//! can point diagnostic tools at a running scenario. Nothing here
//! touches any system trust store.

use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rcgen::{BasicConstraints, CertificateParams, DnType, IsCa, KeyPair};
use rustls::sign::CertifiedKey;
use rustls_pki_types::{PrivateKeyDer, PrivatePkcs8KeyDer};

use super::SimulatorError;
use crate::tls_support::crypto_provider;

pub struct TestCa {
    cert: rcgen::Certificate,
    key: KeyPair,
}

fn ca_err(e: impl std::fmt::Display) -> SimulatorError {
    SimulatorError::Ca(e.to_string())
}

impl TestCa {
    pub fn new() -> Result<TestCa, SimulatorError> {
        let key = KeyPair::generate().map_err(ca_err)?;
        let mut params = CertificateParams::new(Vec::new()).map_err(ca_err)?;
        params.distinguished_name.push(DnType::CommonName, "simulated edge test CA");
        params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
        let cert = params.self_signed(&key).map_err(ca_err)?;
        Ok(TestCa { cert, key })
    }

    pub fn ca_pem(&self) -> String {
        self.cert.pem()
    }

    /// Writes `ca_cert.pem` into `dir` and returns its path.
    pub fn persist(&self, dir: &Path) -> io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("ca_cert.pem");
        std::fs::write(&path, self.ca_pem())?;
        Ok(path)
    }

    /// Mints a leaf for `names` (first entry becomes the subject CN;
    /// `*.zone` wildcards are accepted) and loads it as a rustls
    /// serving key with the CA appended to the chain.
    pub(crate) fn certified_key_for(
        &self,
        names: &[String],
    ) -> Result<Arc<CertifiedKey>, SimulatorError> {
        if names.is_empty() {
            return Err(SimulatorError::InvalidConfig(
                "certificate needs at least one DNS name".to_string(),
            ));
        }
        let leaf_key = KeyPair::generate().map_err(ca_err)?;
        let mut params = CertificateParams::new(names.to_vec()).map_err(ca_err)?;
        params.distinguished_name.push(DnType::CommonName, names[0].clone());
        let leaf = params.signed_by(&leaf_key, &self.cert, &self.key).map_err(ca_err)?;

        let provider = crypto_provider();
        let key_der =
            PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(leaf_key.serialize_der()));
        let signing_key = provider.key_provider.load_private_key(key_der)?;
        Ok(Arc::new(CertifiedKey::new(
            vec![leaf.der().clone(), self.cert.der().clone()],
            signing_key,
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tls_support::summarize_cert;

    #[test]
    fn minted_leaf_carries_requested_names() {
        let ca = TestCa::new().unwrap();
        let key = ca
            .certified_key_for(&["*.wild.sim.test".to_string(), "wild.sim.test".to_string()])
            .unwrap();
        assert_eq!(key.cert.len(), 2);
        let summary = summarize_cert(&key.cert[0]).unwrap();
        assert_eq!(summary.subject_common_name.as_deref(), Some("*.wild.sim.test"));
        assert_eq!(summary.san_dns_names, vec!["*.wild.sim.test", "wild.sim.test"]);
        assert!(ca.ca_pem().contains("BEGIN CERTIFICATE"));
    }
}
