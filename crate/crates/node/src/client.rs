// SPDX-License-Identifier: Apache-2.0

//! Blocking HTTP clients: the outbound side of a host, and a [`HostApi`]
//! for driving a remote host from the harness.

use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::http::Response;
use ureq::{Agent, Body};

use edgeds_core::clock::{Clock, Timestamp};
use edgeds_core::connector::wire::{
    ArtifactRequest, ArtifactResponse, AttachRules, ConnectorTransport, LocalRequest, LocalRequestOutcome,
    NegotiateRequest, DAT_HEADER,
};
use edgeds_core::connector::{ConnectorError, ContractAgreement, ContractOffer, DataResource, SelfDescription, UsageRule};
use edgeds_core::harness::{api_error, ApiError, HostApi};
use edgeds_core::host::Wiring;
use edgeds_core::identity::{DynamicAttributeToken, IssuerDirectory, TokenVerifier, Verdict};
use edgeds_core::ids::{HandleId, HostId, InstanceId, ParticipantId, ResourceId};
use edgeds_core::net::Latency;
use edgeds_core::platform::{AppDescriptor, AppInstance};
use edgeds_core::registry::{Endpoint, PeerRegistryClient, QueryResult, ServiceDescriptor, ServiceQuery, ServiceSpec};

use crate::wire::{ExternalConnectorRequest, Health, QueryParams, StageResource, VerifyRequest, VerifyResponse};

/// Shared agent; non-2xx replies carry a [`ApiError`] body.
#[derive(Clone)]
pub struct Http {
    agent: Agent,
}

impl Default for Http {
    fn default() -> Self {
        let config = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(3)))
            .build();
        Self { agent: config.into() }
    }
}

fn unreachable(url: &str, e: ureq::Error) -> ApiError {
    api_error("HOST_UNREACHABLE", format!("{url}: {e}"))
}

fn body_bytes(resp: &mut Response<Body>) -> Result<Vec<u8>, ApiError> {
    resp.body_mut()
        .with_config()
        .limit(u64::MAX)
        .read_to_vec()
        .map_err(|e| api_error("BAD_RESPONSE", e.to_string()))
}

fn check(mut resp: Response<Body>) -> Result<Vec<u8>, ApiError> {
    let status = resp.status();
    let bytes = body_bytes(&mut resp)?;
    if status.is_success() {
        Ok(bytes)
    } else {
        Err(serde_json::from_slice(&bytes).unwrap_or_else(|_| api_error("HTTP_ERROR", format!("status {status}"))))
    }
}

fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| api_error("BAD_RESPONSE", e.to_string()))
}

impl Http {
    pub fn get_bytes(&self, url: &str, dat: Option<&str>, query: &[(&str, String)]) -> Result<Vec<u8>, ApiError> {
        let mut req = self.agent.get(url);
        if let Some(h) = dat {
            req = req.header(DAT_HEADER, h);
        }
        for (k, v) in query {
            req = req.query(*k, v);
        }
        check(req.call().map_err(|e| unreachable(url, e))?)
    }

    pub fn get<T: DeserializeOwned>(&self, url: &str, dat: Option<&str>, query: &[(&str, String)]) -> Result<T, ApiError> {
        decode(&self.get_bytes(url, dat, query)?)
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(&self, url: &str, dat: Option<&str>, body: &B) -> Result<T, ApiError> {
        let mut req = self.agent.post(url);
        if let Some(h) = dat {
            req = req.header(DAT_HEADER, h);
        }
        decode(&check(req.send_json(body).map_err(|e| unreachable(url, e))?)?)
    }

    pub fn delete<T: DeserializeOwned>(&self, url: &str) -> Result<T, ApiError> {
        decode(&check(self.agent.delete(url).call().map_err(|e| unreachable(url, e))?)?)
    }
}

/// Outbound calls of a host running as its own process.
#[derive(Clone, Default)]
pub struct HttpNetwork {
    http: Http,
}

impl HttpNetwork {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn wiring(self: &Arc<Self>, clock: Arc<dyn Clock>) -> Wiring {
        Wiring { transport: self.clone(), peers: self.clone(), issuers: self.clone(), clock, latency: Latency::ZERO }
    }

    fn connector_call<T>(&self, to: &Endpoint, f: impl FnOnce(&Http, &str) -> Result<T, ApiError>) -> Result<T, ConnectorError> {
        let url = to.url();
        f(&self.http, &url).map_err(|e| match e.code.as_str() {
            "HOST_UNREACHABLE" | "NOT_FOUND" => ConnectorError::ProviderUnreachable(url.clone()),
            _ => ConnectorError::from_wire(e),
        })
    }
}

impl ConnectorTransport for HttpNetwork {
    fn description(&self, to: &Endpoint, dat: &DynamicAttributeToken) -> Result<SelfDescription, ConnectorError> {
        let header = dat.to_header();
        self.connector_call(to, |h, url| h.get(&format!("{url}/description"), Some(&header), &[]))
    }

    fn negotiate(
        &self,
        to: &Endpoint,
        dat: &DynamicAttributeToken,
        req: &NegotiateRequest,
    ) -> Result<ContractAgreement, ConnectorError> {
        let header = dat.to_header();
        self.connector_call(to, |h, url| h.post(&format!("{url}/negotiate"), Some(&header), req))
    }

    fn artifact(
        &self,
        to: &Endpoint,
        dat: &DynamicAttributeToken,
        req: &ArtifactRequest,
    ) -> Result<ArtifactResponse, ConnectorError> {
        let header = dat.to_header();
        self.connector_call(to, |h, url| h.post(&format!("{url}/artifact"), Some(&header), req))
    }
}

impl PeerRegistryClient for HttpNetwork {
    fn fetch_local(&self, peer: &str, query: &ServiceQuery) -> Result<Vec<ServiceDescriptor>, String> {
        let params = QueryParams::from(&query.local());
        self.http
            .get(&format!("http://{peer}/registry/mp3/services"), None, &params.pairs())
            .map_err(|e| format!("{}: {}", e.code, e.message))
    }
}

struct RemoteVerifier {
    http: Http,
    issuer: String,
}

impl TokenVerifier for RemoteVerifier {
    fn verify_dat(&self, token: &DynamicAttributeToken, now: Timestamp) -> Verdict {
        let body = VerifyRequest { token: token.clone(), now };
        match self.http.post::<_, VerifyResponse>(&format!("http://{}/daps/verify", self.issuer), None, &body) {
            Ok(r) => r.verdict,
            Err(e) => {
                log::warn!("cannot verify token from {}: {}", self.issuer, e.message);
                Verdict::InvalidSignature
            }
        }
    }
}

impl IssuerDirectory for HttpNetwork {
    fn verifier_for(&self, issuer: &str) -> Option<Arc<dyn TokenVerifier>> {
        Some(Arc::new(RemoteVerifier { http: self.http.clone(), issuer: issuer.to_owned() }))
    }
}

/// [`HostApi`] against a host's HTTP interface.
pub struct HttpHostApi {
    http: Http,
    base: String,
    host_id: HostId,
}

impl HttpHostApi {
    /// Connects to the host at `address` (`host:port`) and learns its id.
    pub fn connect(address: &str) -> Result<Self, ApiError> {
        let http = Http::default();
        let base = format!("http://{address}");
        let health: Health = http.get(&format!("{base}/health"), None, &[])?;
        Ok(Self { http, base, host_id: health.host_id })
    }
}

impl HostApi for HttpHostApi {
    fn host_id(&self) -> HostId {
        self.host_id.clone()
    }

    fn onboard(&self, desc: &AppDescriptor) -> Result<AppInstance, ApiError> {
        self.http.post(&format!("{}/mgr/apps", self.base), None, desc)
    }

    fn terminate(&self, instance_id: &InstanceId) -> Result<AppInstance, ApiError> {
        self.http.delete(&format!("{}/mgr/apps/{instance_id}", self.base))
    }

    fn external_connector(&self, participant_id: &ParticipantId, credential: &str) -> Result<ServiceDescriptor, ApiError> {
        let body = ExternalConnectorRequest { participant_id: participant_id.clone(), credential: credential.to_owned() };
        self.http.post(&format!("{}/mgr/external/connector", self.base), None, &body)
    }

    fn query_services(&self, query: &ServiceQuery) -> Result<QueryResult, ApiError> {
        self.http.get(&format!("{}/registry/services", self.base), None, &QueryParams::from(query).pairs())
    }

    fn register_service(&self, spec: &ServiceSpec) -> Result<ServiceDescriptor, ApiError> {
        self.http.post(&format!("{}/registry/services", self.base), None, spec)
    }

    fn local_description(&self, connector: &Endpoint) -> Result<SelfDescription, ApiError> {
        self.http.get(&format!("{}/local/description", connector.url()), None, &[])
    }

    fn stage_resource(
        &self,
        connector: &Endpoint,
        catalog: &str,
        title: &str,
        media_type: &str,
        payload: &[u8],
    ) -> Result<DataResource, ApiError> {
        let body = StageResource {
            catalog: catalog.to_owned(),
            title: title.to_owned(),
            media_type: media_type.to_owned(),
            payload: STANDARD.encode(payload),
        };
        self.http.post(&format!("{}/local/resources", connector.url()), None, &body)
    }

    fn attach_rules(&self, connector: &Endpoint, resource_id: &ResourceId, rules: &[UsageRule]) -> Result<ContractOffer, ApiError> {
        let body = AttachRules { resource_id: resource_id.clone(), rules: rules.to_vec() };
        self.http.post(&format!("{}/local/rules", connector.url()), None, &body)
    }

    fn local_request(&self, consumer: &Endpoint, req: &LocalRequest) -> Result<LocalRequestOutcome, ApiError> {
        self.http.post(&format!("{}/local/request", consumer.url()), None, req)
    }

    fn read_artifact(&self, consumer: &Endpoint, handle_id: &HandleId) -> Result<Vec<u8>, ApiError> {
        self.http.get_bytes(&format!("{}/local/artifacts/{handle_id}", consumer.url()), None, &[])
    }

    fn fetch_app_data(&self, app: &Endpoint, title: &str) -> Result<Vec<u8>, ApiError> {
        self.http.get_bytes(&format!("{}/data/{title}", app.url()), None, &[])
    }
}
