// SPDX-License-Identifier: Apache-2.0

//! In-process network between edge hosts.
//!
//! Hosts attach by address. Every cross-service call pays one [`Latency`]
//! hop, which stands in for a loopback round trip when several hosts share
//! a process. A host taken down with [`MecHost::set_up`] refuses all calls.

use std::collections::BTreeMap;
use std::sync::{Arc, Weak};
use std::time::Duration;

use parking_lot::RwLock;

use crate::clock::{Clock, Timestamp};
use crate::connector::wire::{ArtifactRequest, ArtifactResponse, ConnectorTransport, NegotiateRequest};
use crate::connector::{ConnectorError, ContractAgreement, SelfDescription};
use crate::host::{MecHost, Wiring};
use crate::identity::{DynamicAttributeToken, IssuerDirectory, TokenVerifier, Verdict};
use crate::registry::{Endpoint, PeerRegistryClient, ServiceDescriptor, ServiceQuery};

/// Simulated one-way cost of a call between services.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Latency(pub Duration);

impl Latency {
    pub const ZERO: Latency = Latency(Duration::ZERO);

    pub fn from_micros(us: u64) -> Self {
        Self(Duration::from_micros(us))
    }

    pub fn hop(&self) {
        if !self.0.is_zero() {
            std::thread::sleep(self.0);
        }
    }
}

#[derive(Default)]
pub struct LocalNetwork {
    latency: Latency,
    hosts: RwLock<BTreeMap<String, Weak<MecHost>>>,
}

impl LocalNetwork {
    pub fn new(latency: Latency) -> Arc<Self> {
        Arc::new(Self { latency, hosts: RwLock::new(BTreeMap::new()) })
    }

    pub fn latency(&self) -> Latency {
        self.latency
    }

    /// Collaborators for a host booting onto this network.
    pub fn wiring(self: &Arc<Self>, clock: Arc<dyn Clock>) -> Wiring {
        Wiring {
            transport: self.clone(),
            peers: self.clone(),
            issuers: self.clone(),
            clock,
            latency: self.latency,
        }
    }

    pub fn attach(&self, host: &Arc<MecHost>) {
        self.hosts.write().insert(host.address().to_owned(), Arc::downgrade(host));
    }

    /// A reachable host at `address`.
    pub fn host(&self, address: &str) -> Option<Arc<MecHost>> {
        self.hosts.read().get(address).and_then(Weak::upgrade).filter(|h| h.is_up())
    }

    /// Copies raw app data from a plain (non-connector) app endpoint.
    pub fn fetch_app_data(&self, endpoint: &Endpoint, title: &str) -> Result<Vec<u8>, String> {
        self.latency.hop();
        let host = self.host(&endpoint.authority()).ok_or_else(|| format!("{} unreachable", endpoint.authority()))?;
        host.app_data()
            .get(&endpoint.base_path, title)
            .map(|b| b.to_vec())
            .ok_or_else(|| format!("no data {title:?} at {}", endpoint.url()))
    }

    fn service(&self, to: &Endpoint) -> Result<Arc<crate::connector::ConnectorService>, ConnectorError> {
        self.latency.hop();
        self.host(&to.authority())
            .and_then(|h| h.connectors().get(to))
            .ok_or_else(|| ConnectorError::ProviderUnreachable(to.url()))
    }
}

impl ConnectorTransport for LocalNetwork {
    fn description(&self, to: &Endpoint, dat: &DynamicAttributeToken) -> Result<SelfDescription, ConnectorError> {
        self.service(to)?.description(&dat.to_header())
    }

    fn negotiate(
        &self,
        to: &Endpoint,
        dat: &DynamicAttributeToken,
        req: &NegotiateRequest,
    ) -> Result<ContractAgreement, ConnectorError> {
        self.service(to)?.negotiate(&dat.to_header(), req)
    }

    fn artifact(
        &self,
        to: &Endpoint,
        dat: &DynamicAttributeToken,
        req: &ArtifactRequest,
    ) -> Result<ArtifactResponse, ConnectorError> {
        self.service(to)?.artifact(&dat.to_header(), req)
    }
}

impl PeerRegistryClient for LocalNetwork {
    fn fetch_local(&self, peer: &str, query: &ServiceQuery) -> Result<Vec<ServiceDescriptor>, String> {
        self.latency.hop();
        self.host(peer)
            .map(|h| h.registry().query_local(query))
            .ok_or_else(|| format!("{peer}: connection refused"))
    }
}

impl IssuerDirectory for LocalNetwork {
    fn verifier_for(&self, issuer: &str) -> Option<Arc<dyn TokenVerifier>> {
        let host = self.hosts.read().get(issuer)?.clone();
        Some(Arc::new(RemoteVerifier { host, latency: self.latency }))
    }
}

/// Verification delegated to the issuing host's identity service.
struct RemoteVerifier {
    host: Weak<MecHost>,
    latency: Latency,
}

impl TokenVerifier for RemoteVerifier {
    fn verify_dat(&self, token: &DynamicAttributeToken, now: Timestamp) -> Verdict {
        self.latency.hop();
        match self.host.upgrade().filter(|h| h.is_up()) {
            Some(h) => h.identity().verify_dat(token, now),
            None => Verdict::InvalidSignature,
        }
    }
}
