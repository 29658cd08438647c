// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use chrono::Duration as ChronoDuration;
use parking_lot::RwLock;
use proptest::prelude::*;

use super::*;
use crate::clock::ManualClock;
use crate::identity::{IdentityService, Verdict};
use crate::ids::{HostId, InstanceId};
use crate::registry::ServiceSpec;

/// Endpoint-keyed in-memory transport.
#[derive(Default)]
struct Mesh {
    services: RwLock<HashMap<Endpoint, Arc<ConnectorService>>>,
}

impl Mesh {
    fn get(&self, to: &Endpoint) -> Result<Arc<ConnectorService>, ConnectorError> {
        self.services.read().get(to).cloned().ok_or_else(|| ConnectorError::ProviderUnreachable(to.url()))
    }
}

impl ConnectorTransport for Mesh {
    fn description(&self, to: &Endpoint, dat: &DynamicAttributeToken) -> Result<SelfDescription, ConnectorError> {
        self.get(to)?.description(&dat.to_header())
    }

    fn negotiate(
        &self,
        to: &Endpoint,
        dat: &DynamicAttributeToken,
        req: &NegotiateRequest,
    ) -> Result<ContractAgreement, ConnectorError> {
        self.get(to)?.negotiate(&dat.to_header(), req)
    }

    fn artifact(
        &self,
        to: &Endpoint,
        dat: &DynamicAttributeToken,
        req: &ArtifactRequest,
    ) -> Result<ArtifactResponse, ConnectorError> {
        self.get(to)?.artifact(&dat.to_header(), req)
    }
}

struct Fixture {
    clock: Arc<ManualClock>,
    identity: Arc<IdentityService>,
    registry: Arc<Registry>,
    mesh: Arc<Mesh>,
    provider: Arc<ConnectorService>,
    consumer: Arc<ConnectorService>,
}

impl Fixture {
    fn new() -> Self {
        let clock = Arc::new(ManualClock::at_epoch());
        let identity = Arc::new(IdentityService::new("h:1", [7; 32], clock.clone()));
        identity.init_pool(8).unwrap();
        let registry = Arc::new(Registry::new(HostId::new("h"), clock.clone()));
        let mesh = Arc::new(Mesh::default());
        let mut f = Self {
            clock,
            identity,
            registry,
            mesh,
            provider: dummy(),
            consumer: dummy(),
        };
        f.provider = f.spawn("prov");
        f.consumer = f.spawn("cons");
        f
    }

    fn spawn(&self, id: &str) -> Arc<ConnectorService> {
        let connector_id = ConnectorId::new(id);
        let cert = self.identity.allocate_certificate(&ParticipantId::new(format!("p-{id}")), &connector_id).unwrap();
        let endpoint = Endpoint::new("h", 1, format!("/connectors/{id}"));
        let ctx = ConnectorContext {
            issuer: self.identity.clone(),
            verifier: self.identity.clone(),
            transport: self.mesh.clone(),
            data_apps: self.registry.clone(),
            clock: self.clock.clone(),
            latency: Latency::ZERO,
        };
        let connector = Connector::new(
            ConnectorIdentity {
                connector_id,
                participant_id: cert.participant_id,
                endpoint: endpoint.clone(),
                key_fingerprint: cert.key_fingerprint,
            },
            ctx,
        );
        let svc = ConnectorService::start(Arc::new(connector));
        self.mesh.services.write().insert(endpoint, svc.clone());
        svc
    }

    fn p(&self) -> &Connector {
        self.provider.connector()
    }

    fn c(&self) -> &Connector {
        self.consumer.connector()
    }

    /// Registers `payload` at the provider with `rules`; returns the contract.
    fn offer(&self, payload: &[u8], rules: Vec<RuleKind>) -> ContractOffer {
        let cat = self.p().create_catalog("cat");
        let res = self.p().register_resource(&cat.catalog_id, "data", "application/octet-stream", payload).unwrap();
        self.p().attach_rules(&res.resource_id, rules.into_iter().map(UsageRule::new).collect()).unwrap()
    }

    fn agree(&self, offer: &ContractOffer) -> ContractAgreement {
        self.c().negotiate_contract(self.p().endpoint(), &offer.contract_id).unwrap()
    }

    fn fetch(&self, agreement: &ContractAgreement) -> Result<ArtifactHandle, ConnectorError> {
        self.c().fetch_artifact(self.p().endpoint(), &agreement.agreement_id, None)
    }

    fn count(&self, c: &Connector, kind: AuditEventKind) -> usize {
        c.audit_log(Some(kind), None).len()
    }
}

fn dummy() -> Arc<ConnectorService> {
    let clock = Arc::new(ManualClock::at_epoch());
    let identity = Arc::new(IdentityService::new("x", [0; 32], clock.clone()));
    let ctx = ConnectorContext {
        issuer: identity.clone(),
        verifier: identity,
        transport: Arc::new(Mesh::default()),
        data_apps: Arc::new(Registry::new(HostId::new("x"), clock.clone())),
        clock,
        latency: Latency::ZERO,
    };
    let ident = ConnectorIdentity {
        connector_id: ConnectorId::new("dummy"),
        participant_id: ParticipantId::default(),
        endpoint: Endpoint::new("x", 1, "/"),
        key_fingerprint: Vec::new(),
    };
    ConnectorService::start(Arc::new(Connector::new(ident, ctx)))
}

#[test]
fn five_bytes_encode_to_eight() {
    let f = Fixture::new();
    let cat = f.p().create_catalog("c");
    let r = f.p().register_resource(&cat.catalog_id, "t", "text/plain", b"hello").unwrap();
    assert_eq!(r.size_bytes, 5);
    assert_eq!(&*r.payload_encoded, b"aGVsbG8=");
    assert_eq!(f.count(f.p(), AuditEventKind::ResourceRegistered), 1);
}

#[test]
fn empty_payload_is_allowed() {
    let f = Fixture::new();
    let cat = f.p().create_catalog("c");
    let r = f.p().register_resource(&cat.catalog_id, "t", "text/plain", b"").unwrap();
    assert_eq!(r.size_bytes, 0);
    assert!(r.payload_encoded.is_empty());
}

#[test]
fn register_into_unknown_catalog() {
    let f = Fixture::new();
    let err = f.p().register_resource(&CatalogId::new("nope"), "t", "m", b"x").unwrap_err();
    assert_eq!(err.code(), "UNKNOWN_CATALOG");
    assert_eq!(f.p().store().audit_len(), 0);
}

#[test]
fn attach_rules_validation() {
    let f = Fixture::new();
    let cat = f.p().create_catalog("c");
    let r = f.p().register_resource(&cat.catalog_id, "t", "m", b"x").unwrap();
    assert_eq!(f.p().attach_rules(&r.resource_id, vec![]).unwrap_err().code(), "INVALID_RULE");
    let zero = vec![UsageRule::new(RuleKind::NTimesUsage { max_count: 0 })];
    assert_eq!(f.p().attach_rules(&r.resource_id, zero).unwrap_err().code(), "INVALID_RULE");
    let t = f.clock.now();
    let backwards = vec![UsageRule::new(RuleKind::UsageDuringInterval { start: t, end: t - ChronoDuration::hours(1) })];
    assert_eq!(f.p().attach_rules(&r.resource_id, backwards).unwrap_err().code(), "INVALID_RULE");
    let ok = vec![UsageRule::new(RuleKind::ProvideAccess)];
    assert_eq!(f.p().attach_rules(&ResourceId::new("nope"), ok.clone()).unwrap_err().code(), "UNKNOWN_RESOURCE");
    let offer = f.p().attach_rules(&r.resource_id, ok).unwrap();
    assert!(!offer.rules[0].rule_id.is_empty());
    assert_eq!(offer.provider_connector_id, *f.p().id());
}

#[test]
fn description_is_metadata_only() {
    let f = Fixture::new();
    f.offer(b"very secret bytes", vec![RuleKind::ProvideAccess]);
    let desc = f.c().describe_remote(f.p().endpoint()).unwrap();
    assert_eq!(desc.resources.len(), 1);
    assert_eq!(desc.offers.len(), 1);
    let json = serde_json::to_string(&desc).unwrap();
    assert!(!json.contains(&STANDARD.encode(b"very secret bytes")));
    assert!(!json.contains("very secret"));
    assert_eq!(f.count(f.p(), AuditEventKind::DescriptionServed), 1);
}

#[test]
fn expired_token_is_rejected_without_trace() {
    let f = Fixture::new();
    f.offer(b"x", vec![RuleKind::ProvideAccess]);
    let dat = f.c().current_dat().unwrap();
    let before = f.p().store().digest();
    f.clock.advance(ChronoDuration::seconds(301));
    let err = f.provider.description(&dat.to_header()).unwrap_err();
    assert_eq!(err, ConnectorError::Unauthenticated(Verdict::Expired));
    assert_eq!(f.p().store().digest(), before);
}

#[test]
fn garbage_header_counts_as_bad_signature() {
    let f = Fixture::new();
    let err = f.provider.description("not a token").unwrap_err();
    assert_eq!(err, ConnectorError::Unauthenticated(Verdict::InvalidSignature));
}

#[test]
fn released_certificate_invalidates_subject() {
    let f = Fixture::new();
    let offer = f.offer(b"x", vec![RuleKind::ProvideAccess]);
    let agreement = f.agree(&offer);
    let dat = f.c().current_dat().unwrap();
    let cert = f.identity.certificates(None).into_iter().find(|c| c.connector_id == *f.c().id()).unwrap();
    f.identity.release_certificate(&cert.cert_id).unwrap();
    let before = f.p().store().digest();
    let req = ArtifactRequest { agreement_id: agreement.agreement_id.clone(), data_app_id: None, correlation_id: None };
    let err = f.provider.artifact(&dat.to_header(), &req).unwrap_err();
    assert_eq!(err, ConnectorError::Unauthenticated(Verdict::InvalidSubject));
    assert_eq!(f.p().store().digest(), before);
    assert_eq!(f.p().agreement(&agreement.agreement_id).unwrap().usage_count, 0);
}

#[test]
fn token_is_cached_until_near_expiry() {
    let f = Fixture::new();
    let a = f.c().current_dat().unwrap();
    f.clock.advance(ChronoDuration::seconds(200));
    assert_eq!(f.c().current_dat().unwrap(), a);
    f.clock.advance(ChronoDuration::seconds(80));
    let b = f.c().current_dat().unwrap();
    assert_ne!(b.token_id, a.token_id);
}

#[test]
fn negotiation_outcomes() {
    let f = Fixture::new();
    let ok = f.offer(b"x", vec![RuleKind::ProvideAccess]);
    let agreement = f.agree(&ok);
    assert_eq!(agreement.consumer_connector_id, *f.c().id());
    assert_eq!(agreement.usage_count, 0);
    assert_eq!(agreement.rules_snapshot, ok.rules);
    assert_eq!(f.count(f.p(), AuditEventKind::AgreementReached), 1);
    assert_eq!(f.count(f.c(), AuditEventKind::NegotiationStarted), 1);
    // The consumer keeps its own copy.
    assert_eq!(f.c().agreement(&agreement.agreement_id).unwrap(), agreement);

    let refused = f.offer(b"y", vec![RuleKind::ProvideAccess, RuleKind::ProhibitAccess]);
    let err = f.c().negotiate_contract(f.p().endpoint(), &refused.contract_id).unwrap_err();
    assert_eq!(err.code(), "REFUSED_BY_POLICY");
    assert_eq!(f.count(f.p(), AuditEventKind::NegotiationRefused), 1);

    let err = f.c().negotiate_contract(f.p().endpoint(), &ContractId::new("ghost")).unwrap_err();
    assert_eq!(err.code(), "UNKNOWN_CONTRACT");
}

#[test]
fn n_times_one_serves_once() {
    let f = Fixture::new();
    let offer = f.offer(b"payload", vec![RuleKind::NTimesUsage { max_count: 1 }]);
    let agreement = f.agree(&offer);
    let h = f.fetch(&agreement).unwrap();
    assert_eq!(f.c().read_artifact(&h.handle_id).unwrap(), b"payload");
    let err = f.fetch(&agreement).unwrap_err();
    assert_eq!(err, ConnectorError::PolicyDenied(DenyReason::CountExhausted { used: 1, max: 1 }));
    assert_eq!(f.count(f.p(), AuditEventKind::ArtifactServed), 1);
    assert_eq!(f.count(f.p(), AuditEventKind::ArtifactDenied), 1);
    let denied = &f.p().audit_log(Some(AuditEventKind::ArtifactDenied), None)[0];
    assert!(denied.details.starts_with("decision=DENY"));
    assert_eq!(f.p().agreement(&agreement.agreement_id).unwrap().usage_count, 1);
}

#[test]
fn interval_rule_follows_the_clock() {
    let f = Fixture::new();
    let start = f.clock.now() + ChronoDuration::hours(1);
    let offer = f.offer(b"z", vec![RuleKind::UsageDuringInterval { start, end: start + ChronoDuration::hours(1) }]);
    let agreement = f.agree(&offer);
    assert_eq!(f.fetch(&agreement).unwrap_err(), ConnectorError::PolicyDenied(DenyReason::OutsideInterval));
    f.clock.set(start);
    // The cached token was issued an hour ago and has expired; a new one is fetched.
    assert!(f.fetch(&agreement).is_ok());
    f.clock.set(start + ChronoDuration::hours(1));
    assert_eq!(f.fetch(&agreement).unwrap_err(), ConnectorError::PolicyDenied(DenyReason::OutsideInterval));
}

#[test]
fn someone_elses_agreement_is_unknown() {
    let f = Fixture::new();
    let offer = f.offer(b"x", vec![RuleKind::ProvideAccess]);
    let agreement = f.agree(&offer);
    let intruder = f.spawn("intruder");
    let dat = intruder.connector().current_dat().unwrap();
    let req = ArtifactRequest { agreement_id: agreement.agreement_id.clone(), data_app_id: None, correlation_id: None };
    assert_eq!(f.provider.artifact(&dat.to_header(), &req).unwrap_err().code(), "UNKNOWN_AGREEMENT");
    // The consumer must hold the agreement before fetching.
    let err = intruder.connector().fetch_artifact(f.p().endpoint(), &agreement.agreement_id, None).unwrap_err();
    assert_eq!(err.code(), "UNKNOWN_AGREEMENT");
}

fn data_app(f: &Fixture, transform: &str) -> ServiceId {
    f.registry
        .register_data_app(
            ServiceSpec {
                name: transform.into(),
                kind: ServiceKind::DataApp,
                endpoint: Endpoint::new("h", 1, format!("/apps/{transform}")),
                owner_instance_id: InstanceId::new("apps"),
                transform_id: None,
            },
            transform,
        )
        .unwrap()
        .service_id
}

#[test]
fn byte_count_data_app() {
    let f = Fixture::new();
    let app = data_app(&f, data_app::BYTE_COUNT);
    let offer = f.offer(&[0xAB; 1024], vec![RuleKind::ProvideAccess]);
    let agreement = f.agree(&offer);
    let h = f.c().fetch_artifact(f.p().endpoint(), &agreement.agreement_id, Some(&app)).unwrap();
    assert_eq!(f.c().read_artifact(&h.handle_id).unwrap(), b"1024");
    assert_eq!(f.count(f.p(), AuditEventKind::DataAppInvoked), 1);
}

#[test]
fn digest_data_app_matches_independent_hash() {
    use sha2::{Digest, Sha256};
    let f = Fixture::new();
    let app = data_app(&f, data_app::SHA256_DIGEST);
    let payload: Vec<u8> = (0..=255u8).cycle().take(5000).collect();
    let offer = f.offer(&payload, vec![RuleKind::ProvideAccess]);
    let agreement = f.agree(&offer);
    let h = f.c().fetch_artifact(f.p().endpoint(), &agreement.agreement_id, Some(&app)).unwrap();
    let got = String::from_utf8(f.c().read_artifact(&h.handle_id).unwrap()).unwrap();
    assert_eq!(got, hex::encode(Sha256::digest(&payload)));
}

#[test]
fn missing_or_inactive_data_app_is_unreachable() {
    let f = Fixture::new();
    let offer = f.offer(b"x", vec![RuleKind::NTimesUsage { max_count: 3 }]);
    let agreement = f.agree(&offer);
    let err = f.c().fetch_artifact(f.p().endpoint(), &agreement.agreement_id, Some(&ServiceId::new("none"))).unwrap_err();
    assert_eq!(err.code(), "DATA_APP_UNREACHABLE");
    let app = data_app(&f, data_app::BYTE_COUNT);
    f.registry.set_state(&app, ServiceState::Inactive).unwrap();
    let err = f.c().fetch_artifact(f.p().endpoint(), &agreement.agreement_id, Some(&app)).unwrap_err();
    assert_eq!(err.code(), "DATA_APP_UNREACHABLE");
    // Nothing was metered.
    assert_eq!(f.p().agreement(&agreement.agreement_id).unwrap().usage_count, 0);
}

#[test]
fn reads_are_idempotent_and_unmetered() {
    let f = Fixture::new();
    let offer = f.offer(b"abc", vec![RuleKind::NTimesUsage { max_count: 1 }]);
    let agreement = f.agree(&offer);
    let h = f.fetch(&agreement).unwrap();
    for _ in 0..3 {
        assert_eq!(f.c().read_artifact(&h.handle_id).unwrap(), b"abc");
    }
    assert_eq!(f.count(f.c(), AuditEventKind::ArtifactRead), 3);
    assert_eq!(f.p().agreement(&agreement.agreement_id).unwrap().usage_count, 1);
    assert_eq!(f.c().read_artifact(&HandleId::new("nope")).unwrap_err().code(), "NOT_FOUND");
}

#[test]
fn audit_sequence_and_since_filter() {
    let f = Fixture::new();
    let offer = f.offer(b"x", vec![RuleKind::ProvideAccess]);
    let agreement = f.agree(&offer);
    f.fetch(&agreement).unwrap();
    f.fetch(&agreement).unwrap();
    let all = f.p().audit_log(None, None);
    let seqs: Vec<u64> = all.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=all.len() as u64).collect::<Vec<_>>());
    let tail = f.p().audit_log(None, Some(2));
    assert_eq!(tail.len(), all.len() - 2);
    assert!(tail.iter().all(|e| e.seq > 2));
    assert!(all.iter().all(|e| e.connector_id == *f.p().id()));
}

#[test]
fn full_local_request_flow() {
    let f = Fixture::new();
    let offer = f.offer(b"flow", vec![RuleKind::NTimesUsage { max_count: 2 }]);
    let out = f
        .c()
        .request(&LocalRequest {
            provider: f.p().endpoint().clone(),
            contract_id: None,
            agreement_id: None,
            resource_id: Some(offer.resource_id.clone()),
            data_app_id: None,
        })
        .unwrap();
    assert_eq!(out.contract_id, offer.contract_id);
    assert_eq!(f.c().read_artifact(&out.handle_id).unwrap(), b"flow");
    // Reusing the agreement skips negotiation.
    let again = f
        .c()
        .request(&LocalRequest {
            provider: f.p().endpoint().clone(),
            contract_id: None,
            agreement_id: Some(out.agreement_id.clone()),
            resource_id: None,
            data_app_id: None,
        })
        .unwrap();
    assert_eq!(again.agreement_id, out.agreement_id);
    assert_eq!(f.count(f.p(), AuditEventKind::AgreementReached), 1);
    let no_offer = f.c().request(&LocalRequest {
        provider: f.p().endpoint().clone(),
        contract_id: None,
        agreement_id: None,
        resource_id: Some(ResourceId::new("unoffered")),
        data_app_id: None,
    });
    assert_eq!(no_offer.unwrap_err().code(), "NO_OFFER");
}

#[test]
fn stopped_service_is_unreachable() {
    let f = Fixture::new();
    let offer = f.offer(b"x", vec![RuleKind::ProvideAccess]);
    let agreement = f.agree(&offer);
    f.provider.stop();
    assert_eq!(f.fetch(&agreement).unwrap_err().code(), "PROVIDER_UNREACHABLE");
    f.mesh.services.write().clear();
    assert_eq!(f.fetch(&agreement).unwrap_err().code(), "PROVIDER_UNREACHABLE");
}

#[test]
fn replicas_share_the_store_and_drain() {
    let f = Fixture::new();
    let offer = f.offer(b"x", vec![RuleKind::NTimesUsage { max_count: 3 }]);
    let agreement = f.agree(&offer);
    f.provider.resize(3);
    for _ in 0..3 {
        f.fetch(&agreement).unwrap();
    }
    let served: Vec<u64> = f.provider.replicas().iter().map(|r| r.served()).collect();
    // Round-robin spreads the three fetches; description and negotiation ran earlier.
    assert_eq!(served.iter().sum::<u64>(), 4);
    assert!(served.iter().all(|&s| s >= 1));
    assert!(f.fetch(&agreement).is_err());

    // A transfer in flight on a removed replica keeps it until done.
    let last = f.provider.replicas()[2].clone();
    let guard = last.begin();
    f.provider.resize(2);
    assert!(last.is_draining());
    assert_eq!(f.provider.replica_count(), 2);
    assert!(f.provider.reap().is_empty());
    drop(guard);
    assert_eq!(f.provider.reap(), vec![last.index()]);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn payload_round_trips(payload in proptest::collection::vec(any::<u8>(), 0..4096)) {
        let f = Fixture::new();
        let offer = f.offer(&payload, vec![RuleKind::ProvideAccess]);
        let agreement = f.agree(&offer);
        let h = f.fetch(&agreement).unwrap();
        prop_assert_eq!(h.payload_encoded.len(), payload.len().div_ceil(3) * 4);
        prop_assert_eq!(f.c().read_artifact(&h.handle_id).unwrap(), payload);
    }

    /// Any single flipped bit in a token is caught, and leaves the provider untouched.
    #[test]
    fn tampered_tokens_leave_no_trace(bit in 0usize..4096) {
        let f = Fixture::new();
        let offer = f.offer(b"guarded", vec![RuleKind::NTimesUsage { max_count: 9 }]);
        let agreement = f.agree(&offer);
        let mut bytes = f.c().current_dat().unwrap().to_bytes();
        let bit = bit % (bytes.len() * 8);
        bytes[bit / 8] ^= 1 << (bit % 8);
        let header = STANDARD.encode(&bytes);
        let before = f.p().store().digest();
        let req = ArtifactRequest { agreement_id: agreement.agreement_id.clone(), data_app_id: None, correlation_id: None };
        let err = f.provider.artifact(&header, &req).unwrap_err();
        prop_assert_eq!(err, ConnectorError::Unauthenticated(Verdict::InvalidSignature));
        prop_assert_eq!(f.p().store().digest(), before);
    }
}
