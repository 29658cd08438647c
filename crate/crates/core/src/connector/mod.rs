// SPDX-License-Identifier: Apache-2.0

//! The data connector service.
//!
//! Provider side: catalogs, resources (stored as base64 bytestreams), offers
//! with usage rules, negotiation and policy-enforced artifact serving.
//! Consumer side: describing remote connectors, negotiating, fetching into
//! local artifact handles, and decoding on read. Every cross-connector call
//! carries the caller's token and every state change is audited.

pub mod data_app;
mod error;
mod model;
pub mod policy;
mod service;
mod store;
pub mod wire;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use chrono::Duration;
use parking_lot::Mutex;

use crate::clock::{Clock, Timestamp};
use crate::identity::{DynamicAttributeToken, TokenIssuer, TokenVerifier};
use crate::ids::{
    AgreementId, CatalogId, ConnectorId, ContractId, CorrelationId, HandleId, ParticipantId, ResourceId,
    RuleId, ServiceId,
};
use crate::net::Latency;
use crate::registry::{Endpoint, Registry, ServiceKind, ServiceState};

pub use error::{ConnectorError, WireError};
pub use model::{
    parse_rules, ArtifactHandle, AuditEventKind, AuditLogEntry, ContractAgreement, ContractOffer,
    DataResource, ResourceCatalog, RuleKind, SelfDescription, UsageRule,
};
pub use policy::{evaluate_policy, evaluate_rules, Decision, DenyReason};
pub use service::{ConnectorService, Replica, TransferGuard};
pub use store::ConnectorStore;
use wire::{
    ArtifactRequest, ArtifactResponse, ConnectorTransport, LocalRequest, LocalRequestOutcome, NegotiateRequest,
};

/// Cached tokens are renewed this long before they expire.
const TOKEN_RENEWAL_MARGIN_SECS: i64 = 30;

/// Looks up data apps by service id.
pub trait DataAppResolver: Send + Sync {
    /// The transform behind an active data app, if any.
    fn resolve(&self, service_id: &ServiceId) -> Option<String>;
}

impl DataAppResolver for Registry {
    fn resolve(&self, service_id: &ServiceId) -> Option<String> {
        self.get(service_id)
            .ok()
            .filter(|d| d.kind == ServiceKind::DataApp && d.state == ServiceState::Active)
            .and_then(|d| d.transform_id)
    }
}

/// Host-provided collaborators of a connector.
#[derive(Clone)]
pub struct ConnectorContext {
    pub issuer: Arc<dyn TokenIssuer>,
    pub verifier: Arc<dyn TokenVerifier>,
    pub transport: Arc<dyn ConnectorTransport>,
    pub data_apps: Arc<dyn DataAppResolver>,
    pub clock: Arc<dyn Clock>,
    /// Applied to calls into the identity service and data apps.
    pub latency: Latency,
}

#[derive(Debug, Clone)]
pub struct ConnectorIdentity {
    pub connector_id: ConnectorId,
    pub participant_id: ParticipantId,
    pub endpoint: Endpoint,
    pub key_fingerprint: Vec<u8>,
}

pub struct Connector {
    ident: ConnectorIdentity,
    ctx: ConnectorContext,
    store: ConnectorStore,
    counter: AtomicU64,
    token: Mutex<Option<DynamicAttributeToken>>,
}

impl Connector {
    pub fn new(ident: ConnectorIdentity, ctx: ConnectorContext) -> Self {
        Self { ident, ctx, store: ConnectorStore::default(), counter: AtomicU64::new(1), token: Mutex::new(None) }
    }

    pub fn id(&self) -> &ConnectorId {
        &self.ident.connector_id
    }

    pub fn participant_id(&self) -> &ParticipantId {
        &self.ident.participant_id
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.ident.endpoint
    }

    pub fn store(&self) -> &ConnectorStore {
        &self.store
    }

    fn fresh<T: From<String>>(&self, kind: &str) -> T {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        T::from(format!("{kind}-{}-{n:06}", self.ident.connector_id))
    }

    fn now(&self) -> Timestamp {
        self.ctx.clock.now()
    }

    // ---- provider side, local API ----

    pub fn create_catalog(&self, title: &str) -> ResourceCatalog {
        let catalog = ResourceCatalog { catalog_id: self.fresh("cat"), title: title.to_owned(), resource_ids: Vec::new() };
        self.store.lock().catalogs.insert(catalog.catalog_id.clone(), catalog.clone());
        catalog
    }

    /// The catalog titled `title`, created if there is none.
    pub fn catalog_named(&self, title: &str) -> ResourceCatalog {
        let mut t = self.store.lock();
        if let Some(c) = t.catalogs.values().find(|c| c.title == title) {
            return c.clone();
        }
        let catalog = ResourceCatalog { catalog_id: self.fresh("cat"), title: title.to_owned(), resource_ids: Vec::new() };
        t.catalogs.insert(catalog.catalog_id.clone(), catalog.clone());
        catalog
    }

    pub fn register_resource(
        &self,
        catalog_id: &CatalogId,
        title: &str,
        media_type: &str,
        payload: &[u8],
    ) -> Result<DataResource, ConnectorError> {
        if !self.store.lock().catalogs.contains_key(catalog_id) {
            return Err(ConnectorError::UnknownCatalog(catalog_id.clone()));
        }
        // Encode outside the lock; large payloads take a while.
        let encoded: Arc<[u8]> = STANDARD.encode(payload).into_bytes().into();
        let now = self.now();
        let mut t = self.store.lock();
        let catalog = t
            .catalogs
            .get_mut(catalog_id)
            .ok_or_else(|| ConnectorError::UnknownCatalog(catalog_id.clone()))?;
        let resource = DataResource {
            resource_id: self.fresh("res"),
            title: title.to_owned(),
            media_type: media_type.to_owned(),
            payload_encoded: encoded,
            size_bytes: payload.len() as u64,
            created_at: now,
            catalog_id: catalog_id.clone(),
        };
        catalog.resource_ids.push(resource.resource_id.clone());
        t.resources.insert(resource.resource_id.clone(), resource.clone());
        let corr: CorrelationId = self.fresh("corr");
        t.append(
            self.id(),
            now,
            AuditEventKind::ResourceRegistered,
            &corr,
            format!("resource={} size={}", resource.resource_id, resource.size_bytes),
        );
        Ok(resource)
    }

    pub fn attach_rules(
        &self,
        resource_id: &ResourceId,
        rules: Vec<UsageRule>,
    ) -> Result<ContractOffer, ConnectorError> {
        if rules.is_empty() {
            return Err(ConnectorError::InvalidRule("an offer needs at least one rule".into()));
        }
        for r in &rules {
            r.kind.validate().map_err(ConnectorError::InvalidRule)?;
        }
        let mut t = self.store.lock();
        if !t.resources.contains_key(resource_id) {
            return Err(ConnectorError::UnknownResource(resource_id.clone()));
        }
        let rules = rules
            .into_iter()
            .map(|mut r| {
                if r.rule_id.is_empty() {
                    r.rule_id = self.fresh::<RuleId>("rule");
                }
                r
            })
            .collect();
        let offer = ContractOffer {
            contract_id: self.fresh("contract"),
            resource_id: resource_id.clone(),
            rules,
            provider_connector_id: self.id().clone(),
        };
        t.offers.insert(offer.contract_id.clone(), offer.clone());
        Ok(offer)
    }

    /// The owner's unaudited view of its own connector.
    pub fn local_description(&self) -> SelfDescription {
        let t = self.store.lock();
        self.describe(&t)
    }

    fn describe(&self, t: &store::Tables) -> SelfDescription {
        SelfDescription {
            connector_id: self.id().clone(),
            participant_id: self.ident.participant_id.clone(),
            catalogs: t.catalogs.values().cloned().collect(),
            resources: t.resources.values().cloned().collect(),
            offers: t.offers.values().cloned().collect(),
        }
    }

    // ---- provider side, inbound cross-connector calls ----

    /// Decodes and verifies a caller token. Rejection leaves no trace in the
    /// store.
    pub fn authenticate(&self, dat_header: &str) -> Result<DynamicAttributeToken, ConnectorError> {
        let token = DynamicAttributeToken::from_header(dat_header)
            .map_err(|_| ConnectorError::Unauthenticated(crate::identity::Verdict::InvalidSignature))?;
        match self.ctx.verifier.verify_dat(&token, self.now()) {
            v if v.is_valid() => Ok(token),
            v => Err(ConnectorError::Unauthenticated(v)),
        }
    }

    pub fn self_description(&self, caller: &DynamicAttributeToken) -> SelfDescription {
        let now = self.now();
        let mut t = self.store.lock();
        let desc = self.describe(&t);
        let corr: CorrelationId = self.fresh("corr");
        t.append(
            self.id(),
            now,
            AuditEventKind::DescriptionServed,
            &corr,
            format!("caller={}", caller.subject_connector_id),
        );
        desc
    }

    pub fn serve_negotiation(
        &self,
        caller: &DynamicAttributeToken,
        req: &NegotiateRequest,
    ) -> Result<ContractAgreement, ConnectorError> {
        let now = self.now();
        let mut t = self.store.lock();
        let offer = t
            .offers
            .get(&req.contract_id)
            .cloned()
            .ok_or_else(|| ConnectorError::UnknownContract(req.contract_id.clone()))?;
        let corr = req.correlation_id.clone().unwrap_or_else(|| self.fresh("corr"));
        if offer.rules.iter().any(|r| r.kind == RuleKind::ProhibitAccess) {
            t.append(
                self.id(),
                now,
                AuditEventKind::NegotiationRefused,
                &corr,
                format!("contract={} consumer={}", offer.contract_id, caller.subject_connector_id),
            );
            return Err(ConnectorError::RefusedByPolicy(offer.contract_id));
        }
        let agreement = ContractAgreement {
            agreement_id: self.fresh("agr"),
            contract_id: offer.contract_id.clone(),
            resource_id: offer.resource_id.clone(),
            provider_connector_id: self.id().clone(),
            consumer_connector_id: caller.subject_connector_id.clone(),
            rules_snapshot: offer.rules.clone(),
            agreed_at: now,
            usage_count: 0,
        };
        t.agreements.insert(agreement.agreement_id.clone(), agreement.clone());
        t.append(
            self.id(),
            now,
            AuditEventKind::AgreementReached,
            &corr,
            format!("agreement={} consumer={}", agreement.agreement_id, agreement.consumer_connector_id),
        );
        Ok(agreement)
    }

    /// Policy check and usage increment happen under one lock, so metering is
    /// exact however many replicas serve the connector.
    pub fn serve_artifact(
        &self,
        caller: &DynamicAttributeToken,
        req: &ArtifactRequest,
    ) -> Result<ArtifactResponse, ConnectorError> {
        let transform = match &req.data_app_id {
            Some(id) => {
                self.ctx.latency.hop();
                Some(
                    self.ctx
                        .data_apps
                        .resolve(id)
                        .ok_or_else(|| ConnectorError::DataAppUnreachable(id.clone()))?,
                )
            }
            None => None,
        };
        let now = self.now();
        let corr = req.correlation_id.clone().unwrap_or_else(|| self.fresh("corr"));
        let payload = {
            let mut t = self.store.lock();
            let agreement = t
                .agreements
                .get(&req.agreement_id)
                .filter(|a| a.consumer_connector_id == caller.subject_connector_id)
                .cloned()
                .ok_or_else(|| ConnectorError::UnknownAgreement(req.agreement_id.clone()))?;
            let payload = t
                .resources
                .get(&agreement.resource_id)
                .map(|r| r.payload_encoded.clone())
                .ok_or_else(|| ConnectorError::UnknownResource(agreement.resource_id.clone()))?;
            match evaluate_policy(&agreement, now) {
                Decision::Deny(reason) => {
                    t.append(
                        self.id(),
                        now,
                        AuditEventKind::ArtifactDenied,
                        &corr,
                        format!("decision=DENY agreement={} reason={reason}", agreement.agreement_id),
                    );
                    return Err(ConnectorError::PolicyDenied(reason));
                }
                Decision::Allow => {
                    let a = t.agreements.get_mut(&req.agreement_id).expect("looked up above");
                    a.usage_count += 1;
                    let used = a.usage_count;
                    t.append(
                        self.id(),
                        now,
                        AuditEventKind::ArtifactServed,
                        &corr,
                        format!("decision=ALLOW agreement={} usage={used}", req.agreement_id),
                    );
                }
            }
            payload
        };
        let payload = match transform {
            None => String::from_utf8(payload.to_vec()).expect("stored payloads are base64 text"),
            Some(transform) => {
                let decoded = STANDARD.decode(&payload).expect("stored payloads are valid base64");
                let output = data_app::apply(&transform, &decoded).expect("resolver only yields built-ins");
                self.store.lock().append(
                    self.id(),
                    self.now(),
                    AuditEventKind::DataAppInvoked,
                    &corr,
                    format!("transform={transform} in={} out={}", decoded.len(), output.len()),
                );
                STANDARD.encode(output)
            }
        };
        Ok(ArtifactResponse { payload })
    }

    // ---- consumer side ----

    /// This connector's own token, renewed shortly before expiry.
    pub fn current_dat(&self) -> Result<DynamicAttributeToken, ConnectorError> {
        let mut cached = self.token.lock();
        if let Some(tok) = cached.as_ref() {
            if self.now() + Duration::seconds(TOKEN_RENEWAL_MARGIN_SECS) < tok.expires_at {
                return Ok(tok.clone());
            }
        }
        self.ctx.latency.hop();
        let tok = self.ctx.issuer.issue_dat(self.id(), &self.ident.key_fingerprint)?;
        *cached = Some(tok.clone());
        Ok(tok)
    }

    pub fn describe_remote(&self, provider: &Endpoint) -> Result<SelfDescription, ConnectorError> {
        let dat = self.current_dat()?;
        self.ctx.transport.description(provider, &dat)
    }

    pub fn negotiate_contract(
        &self,
        provider: &Endpoint,
        contract_id: &ContractId,
    ) -> Result<ContractAgreement, ConnectorError> {
        let corr: CorrelationId = self.fresh("corr");
        {
            let now = self.now();
            self.store.lock().append(
                self.id(),
                now,
                AuditEventKind::NegotiationStarted,
                &corr,
                format!("contract={contract_id} provider={}", provider.url()),
            );
        }
        let dat = self.current_dat()?;
        let req = NegotiateRequest { contract_id: contract_id.clone(), correlation_id: Some(corr) };
        let agreement = self.ctx.transport.negotiate(provider, &dat, &req)?;
        self.store.lock().agreements.insert(agreement.agreement_id.clone(), agreement.clone());
        Ok(agreement)
    }

    pub fn fetch_artifact(
        &self,
        provider: &Endpoint,
        agreement_id: &AgreementId,
        data_app: Option<&ServiceId>,
    ) -> Result<ArtifactHandle, ConnectorError> {
        if !self.store.lock().agreements.contains_key(agreement_id) {
            return Err(ConnectorError::UnknownAgreement(agreement_id.clone()));
        }
        let corr: CorrelationId = self.fresh("corr");
        let dat = self.current_dat()?;
        let req = ArtifactRequest {
            agreement_id: agreement_id.clone(),
            data_app_id: data_app.cloned(),
            correlation_id: Some(corr.clone()),
        };
        let resp = self.ctx.transport.artifact(provider, &dat, &req)?;
        let now = self.now();
        let handle = ArtifactHandle {
            handle_id: self.fresh("art"),
            agreement_id: agreement_id.clone(),
            payload_encoded: resp.payload.into_bytes().into(),
            fetched_at: now,
        };
        let mut t = self.store.lock();
        t.handles.insert(handle.handle_id.clone(), handle.clone());
        t.append(
            self.id(),
            now,
            AuditEventKind::ArtifactStored,
            &corr,
            format!("handle={} agreement={agreement_id} encoded={}", handle.handle_id, handle.payload_encoded.len()),
        );
        Ok(handle)
    }

    /// Decodes a stored artifact. Reads are not metered but are audited.
    pub fn read_artifact(&self, handle_id: &HandleId) -> Result<Vec<u8>, ConnectorError> {
        let encoded = self
            .store
            .lock()
            .handles
            .get(handle_id)
            .map(|h| h.payload_encoded.clone())
            .ok_or_else(|| ConnectorError::HandleNotFound(handle_id.clone()))?;
        let bytes = STANDARD.decode(&encoded).map_err(|_| ConnectorError::CorruptArtifact(handle_id.clone()))?;
        let corr: CorrelationId = self.fresh("corr");
        let now = self.now();
        self.store.lock().append(
            self.id(),
            now,
            AuditEventKind::ArtifactRead,
            &corr,
            format!("handle={handle_id} size={}", bytes.len()),
        );
        Ok(bytes)
    }

    /// Runs the full consumer flow against a provider endpoint.
    pub fn request(&self, req: &LocalRequest) -> Result<LocalRequestOutcome, ConnectorError> {
        let (contract_id, agreement_id) = match (&req.agreement_id, &req.contract_id) {
            (Some(agreement_id), _) => {
                let contract_id = self
                    .store
                    .lock()
                    .agreements
                    .get(agreement_id)
                    .map(|a| a.contract_id.clone())
                    .ok_or_else(|| ConnectorError::UnknownAgreement(agreement_id.clone()))?;
                (contract_id, agreement_id.clone())
            }
            (None, contract_id) => {
                let contract_id = match contract_id {
                    Some(c) => c.clone(),
                    None => {
                        let resource_id = req
                            .resource_id
                            .clone()
                            .ok_or_else(|| ConnectorError::InvalidRule("request names no resource".into()))?;
                        let desc = self.describe_remote(&req.provider)?;
                        desc.offers
                            .into_iter()
                            .find(|o| o.resource_id == resource_id)
                            .map(|o| o.contract_id)
                            .ok_or(ConnectorError::NoOffer(resource_id))?
                    }
                };
                let agreement = self.negotiate_contract(&req.provider, &contract_id)?;
                (contract_id, agreement.agreement_id)
            }
        };
        let handle = self.fetch_artifact(&req.provider, &agreement_id, req.data_app_id.as_ref())?;
        Ok(LocalRequestOutcome { contract_id, agreement_id, handle_id: handle.handle_id })
    }

    pub fn audit_log(&self, filter: Option<AuditEventKind>, since: Option<u64>) -> Vec<AuditLogEntry> {
        self.store
            .lock()
            .audit
            .iter()
            .filter(|e| filter.is_none_or(|k| e.event_kind == k))
            .filter(|e| since.is_none_or(|s| e.seq > s))
            .cloned()
            .collect()
    }

    pub fn agreement(&self, agreement_id: &AgreementId) -> Option<ContractAgreement> {
        self.store.lock().agreements.get(agreement_id).cloned()
    }

    pub fn handle(&self, handle_id: &HandleId) -> Option<ArtifactHandle> {
        self.store.lock().handles.get(handle_id).cloned()
    }
}

#[cfg(test)]
mod tests;
