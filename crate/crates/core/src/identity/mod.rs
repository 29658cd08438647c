// SPDX-License-Identifier: Apache-2.0

//! Certificate pool and token service for one edge host.
//!
//! Each host owns a pool of pre-accredited certificates. A connector receives
//! one at instantiation and proves possession of it (by presenting the key
//! fingerprint) to obtain short-lived signed tokens. Tokens are bound to the
//! connector: once its certificate goes back to the pool, every token issued
//! to it stops verifying.

mod token;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use chrono::Duration;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::{Clock, Timestamp};
use crate::ids::{CertId, ConnectorId, IdGen, ParticipantId, TokenId};

pub use token::{DynamicAttributeToken, TokenDecodeError};

pub const DEFAULT_TOKEN_VALIDITY_SECS: i64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertStatus {
    Available,
    Allocated,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub cert_id: CertId,
    pub participant_id: ParticipantId,
    pub connector_id: ConnectorId,
    #[serde(with = "crate::hexbytes")]
    pub key_fingerprint: Vec<u8>,
    pub issued_at: Timestamp,
    pub status: CertStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Valid,
    InvalidSignature,
    Expired,
    InvalidSubject,
}

impl Verdict {
    pub fn is_valid(self) -> bool {
        self == Verdict::Valid
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdentityError {
    #[error("pool size must be at least 1")]
    InvalidPoolSize,
    #[error("certificate pool already initialized")]
    AlreadyInitialized,
    #[error("no available certificate in pool")]
    PoolExhausted,
    #[error("participant {0} / connector {1} already holds a certificate")]
    DuplicateBinding(ParticipantId, ConnectorId),
    #[error("certificate {0} not found")]
    NotFound(CertId),
    #[error("certificate {0} is not allocated")]
    NotAllocated(CertId),
    #[error("connector {0} holds no certificate")]
    UnknownConnector(ConnectorId),
    #[error("fingerprint proof does not match the certificate")]
    BadProof,
}

impl IdentityError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidPoolSize => "INVALID_POOL_SIZE",
            Self::AlreadyInitialized => "ALREADY_INITIALIZED",
            Self::PoolExhausted => "POOL_EXHAUSTED",
            Self::DuplicateBinding(..) => "DUPLICATE_BINDING",
            Self::NotFound(_) => "NOT_FOUND",
            Self::NotAllocated(_) => "NOT_ALLOCATED",
            Self::UnknownConnector(_) => "UNKNOWN_CONNECTOR",
            Self::BadProof => "BAD_PROOF",
        }
    }
}

/// Issues tokens to connectors of the local host.
pub trait TokenIssuer: Send + Sync {
    fn issue_dat(
        &self,
        connector_id: &ConnectorId,
        fingerprint_proof: &[u8],
    ) -> Result<DynamicAttributeToken, IdentityError>;
}

/// Checks tokens presented by a calling connector.
pub trait TokenVerifier: Send + Sync {
    fn verify_dat(&self, token: &DynamicAttributeToken, now: Timestamp) -> Verdict;
}

#[derive(Default)]
struct Pool {
    initialized: bool,
    certs: BTreeMap<CertId, Certificate>,
    by_binding: HashMap<(ParticipantId, ConnectorId), CertId>,
    by_connector: HashMap<ConnectorId, CertId>,
}

pub struct IdentityService {
    issuer: String,
    key: [u8; 32],
    validity: Duration,
    clock: Arc<dyn Clock>,
    pool: Mutex<Pool>,
    cert_ids: IdGen,
    token_ids: IdGen,
}

impl IdentityService {
    /// `issuer` is the service's public id, conventionally the host address.
    pub fn new(issuer: impl Into<String>, key: [u8; 32], clock: Arc<dyn Clock>) -> Self {
        let issuer = issuer.into();
        Self {
            cert_ids: IdGen::new(format!("cert-{issuer}")),
            token_ids: IdGen::new(format!("dat-{issuer}")),
            issuer,
            key,
            validity: Duration::seconds(DEFAULT_TOKEN_VALIDITY_SECS),
            clock,
            pool: Mutex::new(Pool::default()),
        }
    }

    pub fn with_validity(mut self, validity: Duration) -> Self {
        self.validity = validity;
        self
    }

    /// Deterministic signing key for desk-scale deployments.
    pub fn derive_key(seed: u64, issuer: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"edgeds-daps-signing-key");
        h.update(seed.to_be_bytes());
        h.update(issuer.as_bytes());
        h.finalize().into()
    }

    pub fn issuer(&self) -> &str {
        &self.issuer
    }

    pub fn init_pool(&self, size: usize) -> Result<Vec<Certificate>, IdentityError> {
        if size == 0 {
            return Err(IdentityError::InvalidPoolSize);
        }
        let mut pool = self.pool.lock();
        if pool.initialized {
            return Err(IdentityError::AlreadyInitialized);
        }
        let issued_at = self.clock.now();
        let mut out = Vec::with_capacity(size);
        for _ in 0..size {
            let cert_id: CertId = self.cert_ids.next_id();
            let cert = Certificate {
                key_fingerprint: self.fingerprint(&cert_id),
                cert_id: cert_id.clone(),
                participant_id: ParticipantId::default(),
                connector_id: ConnectorId::default(),
                issued_at,
                status: CertStatus::Available,
            };
            pool.certs.insert(cert_id, cert.clone());
            out.push(cert);
        }
        pool.initialized = true;
        Ok(out)
    }

    fn fingerprint(&self, cert_id: &CertId) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(b"edgeds-cert-fingerprint");
        h.update(self.key);
        h.update(cert_id.as_str().as_bytes());
        h.finalize().to_vec()
    }

    /// Binds the lowest-numbered available certificate to the pair.
    ///
    /// A connector id can hold only one certificate at a time, whatever the
    /// participant, since tokens are looked up by connector.
    pub fn allocate_certificate(
        &self,
        participant_id: &ParticipantId,
        connector_id: &ConnectorId,
    ) -> Result<Certificate, IdentityError> {
        let mut pool = self.pool.lock();
        let key = (participant_id.clone(), connector_id.clone());
        if pool.by_binding.contains_key(&key) || pool.by_connector.contains_key(connector_id) {
            return Err(IdentityError::DuplicateBinding(key.0, key.1));
        }
        let cert_id = pool
            .certs
            .values()
            .find(|c| c.status == CertStatus::Available)
            .map(|c| c.cert_id.clone())
            .ok_or(IdentityError::PoolExhausted)?;
        let cert = pool.certs.get_mut(&cert_id).expect("just found");
        cert.status = CertStatus::Allocated;
        cert.participant_id = participant_id.clone();
        cert.connector_id = connector_id.clone();
        let cert = cert.clone();
        pool.by_binding.insert(key, cert_id.clone());
        pool.by_connector.insert(connector_id.clone(), cert_id);
        Ok(cert)
    }

    pub fn release_certificate(&self, cert_id: &CertId) -> Result<Certificate, IdentityError> {
        let mut pool = self.pool.lock();
        let cert = pool
            .certs
            .get_mut(cert_id)
            .ok_or_else(|| IdentityError::NotFound(cert_id.clone()))?;
        if cert.status != CertStatus::Allocated {
            return Err(IdentityError::NotAllocated(cert_id.clone()));
        }
        let binding = (
            std::mem::take(&mut cert.participant_id),
            std::mem::take(&mut cert.connector_id),
        );
        cert.status = CertStatus::Available;
        let cert = cert.clone();
        pool.by_connector.remove(&binding.1);
        pool.by_binding.remove(&binding);
        Ok(cert)
    }

    /// Takes a certificate out of circulation for good.
    pub fn revoke_certificate(&self, cert_id: &CertId) -> Result<Certificate, IdentityError> {
        let mut pool = self.pool.lock();
        let cert = pool
            .certs
            .get_mut(cert_id)
            .ok_or_else(|| IdentityError::NotFound(cert_id.clone()))?;
        let binding = (
            std::mem::take(&mut cert.participant_id),
            std::mem::take(&mut cert.connector_id),
        );
        cert.status = CertStatus::Revoked;
        let cert = cert.clone();
        pool.by_connector.remove(&binding.1);
        pool.by_binding.remove(&binding);
        Ok(cert)
    }

    pub fn certificates(&self, status: Option<CertStatus>) -> Vec<Certificate> {
        self.pool
            .lock()
            .certs
            .values()
            .filter(|c| status.is_none_or(|s| c.status == s))
            .cloned()
            .collect()
    }

    pub fn certificate(&self, cert_id: &CertId) -> Option<Certificate> {
        self.pool.lock().certs.get(cert_id).cloned()
    }

    pub fn count(&self, status: CertStatus) -> usize {
        self.pool.lock().certs.values().filter(|c| c.status == status).count()
    }

    pub fn pool_size(&self) -> usize {
        self.pool.lock().certs.len()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }
}

impl TokenIssuer for IdentityService {
    fn issue_dat(
        &self,
        connector_id: &ConnectorId,
        fingerprint_proof: &[u8],
    ) -> Result<DynamicAttributeToken, IdentityError> {
        {
            let pool = self.pool.lock();
            let cert_id = pool
                .by_connector
                .get(connector_id)
                .ok_or_else(|| IdentityError::UnknownConnector(connector_id.clone()))?;
            if pool.certs[cert_id].key_fingerprint != fingerprint_proof {
                return Err(IdentityError::BadProof);
            }
        }
        let issued_at = self.clock.now();
        let mut token = DynamicAttributeToken {
            token_id: self.token_ids.next_id::<TokenId>(),
            issuer: self.issuer.clone(),
            subject_connector_id: connector_id.clone(),
            issued_at,
            expires_at: issued_at + self.validity,
            signature: Vec::new(),
        };
        token.sign(&self.key);
        Ok(token)
    }
}

impl TokenVerifier for IdentityService {
    fn verify_dat(&self, token: &DynamicAttributeToken, now: Timestamp) -> Verdict {
        if token.issuer != self.issuer || !token.signature_valid(&self.key) {
            return Verdict::InvalidSignature;
        }
        if now >= token.expires_at {
            return Verdict::Expired;
        }
        if !self.pool.lock().by_connector.contains_key(&token.subject_connector_id) {
            return Verdict::InvalidSubject;
        }
        Verdict::Valid
    }
}

/// Resolves token issuers that live on other hosts.
pub trait IssuerDirectory: Send + Sync {
    fn verifier_for(&self, issuer: &str) -> Option<Arc<dyn TokenVerifier>>;
}

/// Verifies tokens from the local identity service and from a fixed set of
/// trusted peer issuers. Anything else fails signature verification.
pub struct FederatedVerifier {
    local: Arc<IdentityService>,
    trusted_peers: Vec<String>,
    directory: Arc<dyn IssuerDirectory>,
}

impl FederatedVerifier {
    pub fn new(
        local: Arc<IdentityService>,
        trusted_peers: Vec<String>,
        directory: Arc<dyn IssuerDirectory>,
    ) -> Self {
        Self { local, trusted_peers, directory }
    }
}

impl TokenVerifier for FederatedVerifier {
    fn verify_dat(&self, token: &DynamicAttributeToken, now: Timestamp) -> Verdict {
        if token.issuer == self.local.issuer() {
            return self.local.verify_dat(token, now);
        }
        if !self.trusted_peers.contains(&token.issuer) {
            return Verdict::InvalidSignature;
        }
        match self.directory.verifier_for(&token.issuer) {
            Some(v) => v.verify_dat(token, now),
            None => Verdict::InvalidSignature,
        }
    }
}

/// Decodes a `DAT` header and verifies it. Undecodable headers count as
/// signature failures.
pub fn verify_header(verifier: &dyn TokenVerifier, header: &str, now: Timestamp) -> Verdict {
    match DynamicAttributeToken::from_header(header) {
        Ok(tok) => verifier.verify_dat(&tok, now),
        Err(_) => Verdict::InvalidSignature,
    }
}
