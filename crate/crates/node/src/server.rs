// SPDX-License-Identifier: Apache-2.0

//! HTTP interface of one edge host.
//!
//! Handlers run the blocking core calls on tokio's blocking pool, since a
//! connector request may itself call out to other hosts.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::Serialize;

use edgeds_core::connector::wire::{
    ArtifactRequest, AttachRules, LocalRequest, NegotiateRequest, DAT_HEADER,
};
use edgeds_core::connector::{ConnectorService, WireError};
use edgeds_core::harness::api_error;
use edgeds_core::host::MecHost;
use edgeds_core::identity::{TokenIssuer, TokenVerifier};
use edgeds_core::ids::{CertId, HandleId, InstanceId, ServiceId};
use edgeds_core::platform::AppDescriptor;
use edgeds_core::registry::{ServiceQuery, ServiceSpec};

use crate::wire::{
    AllocateRequest, AuditQuery, CertQuery, ExternalConnectorRequest, Health, QueryParams, ScaleRequest, StageResource,
    TokenRequest, VerifyRequest, VerifyResponse,
};

type Host = State<Arc<MecHost>>;

/// Largest request body accepted, enough for the biggest sweep payload.
pub const BODY_LIMIT: usize = 512 * 1024 * 1024;

pub struct Failure(pub WireError);

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "UNAUTHENTICATED" => StatusCode::UNAUTHORIZED,
        "POLICY_DENIED" | "REFUSED_BY_POLICY" | "UNAUTHORIZED" | "BAD_PROOF" => StatusCode::FORBIDDEN,
        "NOT_FOUND" | "UNKNOWN_CATALOG" | "UNKNOWN_RESOURCE" | "UNKNOWN_CONTRACT" | "UNKNOWN_AGREEMENT"
        | "UNKNOWN_CONNECTOR" | "NO_OFFER" => StatusCode::NOT_FOUND,
        "POOL_EXHAUSTED" | "INSUFFICIENT_CAPACITY" | "DUPLICATE_BINDING" | "DUPLICATE_NAME" | "ALREADY_TERMINATED"
        | "NOT_ALLOCATED" | "ALREADY_INITIALIZED" => StatusCode::CONFLICT,
        "PROVIDER_UNREACHABLE" | "DATA_APP_UNREACHABLE" | "HOST_UNREACHABLE" => StatusCode::BAD_GATEWAY,
        "INJECTED_FAULT" | "INTERNAL" | "CORRUPT_ARTIFACT" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (status_for(&self.0.code), Json(self.0)).into_response()
    }
}

type Reply<T> = Result<Json<T>, Failure>;

async fn blocking<T, F>(f: F) -> Result<T, Failure>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, WireError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(Failure),
        Err(e) => Err(Failure(api_error("INTERNAL", e.to_string()))),
    }
}

async fn json<T, F>(f: F) -> Reply<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> Result<T, WireError> + Send + 'static,
{
    blocking(f).await.map(Json)
}

pub fn router(host: Arc<MecHost>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/daps/token", post(issue_token))
        .route("/daps/verify", post(verify_token))
        .route("/certs", get(list_certs))
        .route("/certs/allocate", post(allocate_cert))
        .route("/certs/{id}/release", post(release_cert))
        .route("/registry/services", get(query_services).post(register_service))
        .route("/registry/services/{id}", delete(deregister_service))
        .route("/registry/mp3/services", get(mp3_services))
        .route("/mgr/apps", get(list_apps).post(onboard))
        .route("/mgr/apps/{id}", delete(terminate))
        .route("/mgr/external/connector", post(external_connector))
        .route("/mgr/replicasets/{id}", get(replica_set))
        .route("/mgr/replicasets/{id}/scale", post(scale))
        .route("/connectors/{id}/description", get(description))
        .route("/connectors/{id}/negotiate", post(negotiate))
        .route("/connectors/{id}/artifact", post(artifact))
        .route("/connectors/{id}/local/description", get(local_description))
        .route("/connectors/{id}/local/resources", post(stage_resource))
        .route("/connectors/{id}/local/rules", post(attach_rules))
        .route("/connectors/{id}/local/request", post(local_request))
        .route("/connectors/{id}/local/artifacts/{handle}", get(read_artifact))
        .route("/connectors/{id}/local/audit", get(audit))
        .route("/apps/{id}/data/{title}", get(app_data))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(host)
}

/// Serves `host` until the listener fails.
pub async fn serve(host: Arc<MecHost>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(host)).await
}

async fn health(State(host): Host) -> Json<Health> {
    Json(Health { host_id: host.host_id().clone(), address: host.address().to_owned() })
}

fn identity_err(e: edgeds_core::identity::IdentityError) -> WireError {
    api_error(e.code(), e.to_string())
}

async fn issue_token(State(host): Host, Json(req): Json<TokenRequest>) -> impl IntoResponse {
    json(move || {
        let proof = hex::decode(&req.fingerprint_proof).map_err(|e| api_error("BAD_PROOF", e.to_string()))?;
        host.identity().issue_dat(&req.connector_id, &proof).map_err(identity_err)
    })
    .await
}

/// Verification on behalf of a peer host, against this host's own issuer.
async fn verify_token(State(host): Host, Json(req): Json<VerifyRequest>) -> Json<VerifyResponse> {
    Json(VerifyResponse { verdict: host.identity().verify_dat(&req.token, req.now) })
}

async fn list_certs(State(host): Host, Query(q): Query<CertQuery>) -> impl IntoResponse {
    Json(host.identity().certificates(q.status))
}

async fn allocate_cert(State(host): Host, Json(req): Json<AllocateRequest>) -> impl IntoResponse {
    json(move || host.identity().allocate_certificate(&req.participant_id, &req.connector_id).map_err(identity_err)).await
}

async fn release_cert(State(host): Host, Path(id): Path<String>) -> impl IntoResponse {
    json(move || host.identity().release_certificate(&CertId::new(id)).map_err(identity_err)).await
}

async fn query_services(State(host): Host, Query(q): Query<QueryParams>) -> impl IntoResponse {
    let query = ServiceQuery::from(q);
    json(move || Ok(host.registry().query_services(&query))).await
}

/// Peer-facing: always this host's local view.
async fn mp3_services(State(host): Host, Query(q): Query<QueryParams>) -> impl IntoResponse {
    let query = ServiceQuery::from(q);
    Json(host.registry().query_local(&query))
}

async fn register_service(State(host): Host, Json(spec): Json<ServiceSpec>) -> impl IntoResponse {
    json(move || host.registry().register_service(spec).map_err(|e| api_error(e.code(), e.to_string()))).await
}

async fn deregister_service(State(host): Host, Path(id): Path<String>) -> Result<StatusCode, Failure> {
    host.registry()
        .deregister_service(&ServiceId::new(id))
        .map(|_| StatusCode::NO_CONTENT)
        .map_err(|e| Failure(api_error(e.code(), e.to_string())))
}

async fn list_apps(State(host): Host) -> impl IntoResponse {
    Json(host.manager().list_instances())
}

async fn onboard(State(host): Host, Json(desc): Json<AppDescriptor>) -> impl IntoResponse {
    json(move || host.manager().onboard_app(&desc).map_err(|e| e.to_wire())).await
}

async fn terminate(State(host): Host, Path(id): Path<String>) -> impl IntoResponse {
    json(move || host.manager().terminate_app(&InstanceId::new(id)).map_err(|e| e.to_wire())).await
}

async fn external_connector(State(host): Host, Json(req): Json<ExternalConnectorRequest>) -> impl IntoResponse {
    json(move || host.manager().external_connector(&req.participant_id, &req.credential).map_err(|e| e.to_wire())).await
}

async fn replica_set(State(host): Host, Path(id): Path<String>) -> impl IntoResponse {
    json(move || host.manager().replica_set(&ServiceId::new(id)).map_err(|e| e.to_wire())).await
}

async fn scale(State(host): Host, Path(id): Path<String>, Json(req): Json<ScaleRequest>) -> impl IntoResponse {
    json(move || host.manager().scale(&ServiceId::new(id), req.replicas).map_err(|e| e.to_wire())).await
}

fn connector(host: &MecHost, id: &str) -> Result<Arc<ConnectorService>, WireError> {
    host.connectors()
        .by_id(id)
        .ok_or_else(|| api_error("NOT_FOUND", format!("no connector {id} on {}", host.host_id())))
}

fn dat(headers: &HeaderMap) -> String {
    headers.get(DAT_HEADER).and_then(|v| v.to_str().ok()).unwrap_or_default().to_owned()
}

async fn description(State(host): Host, Path(id): Path<String>, headers: HeaderMap) -> impl IntoResponse {
    let header = dat(&headers);
    json(move || connector(&host, &id)?.description(&header).map_err(|e| e.to_wire())).await
}

async fn negotiate(
    State(host): Host,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(req): Json<NegotiateRequest>,
) -> impl IntoResponse {
    let header = dat(&headers);
    json(move || connector(&host, &id)?.negotiate(&header, &req).map_err(|e| e.to_wire())).await
}

async fn artifact(
    State(host): Host,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(req): Json<ArtifactRequest>,
) -> impl IntoResponse {
    let header = dat(&headers);
    json(move || connector(&host, &id)?.artifact(&header, &req).map_err(|e| e.to_wire())).await
}

async fn local_description(State(host): Host, Path(id): Path<String>) -> impl IntoResponse {
    json(move || Ok(connector(&host, &id)?.connector().local_description())).await
}

async fn stage_resource(State(host): Host, Path(id): Path<String>, Json(req): Json<StageResource>) -> impl IntoResponse {
    json(move || {
        let svc = connector(&host, &id)?;
        let payload = STANDARD.decode(&req.payload).map_err(|e| api_error("INVALID_PAYLOAD", e.to_string()))?;
        let c = svc.connector();
        c.register_resource(&c.catalog_named(&req.catalog).catalog_id, &req.title, &req.media_type, &payload)
            .map_err(|e| e.to_wire())
    })
    .await
}

async fn attach_rules(State(host): Host, Path(id): Path<String>, Json(req): Json<AttachRules>) -> impl IntoResponse {
    json(move || connector(&host, &id)?.connector().attach_rules(&req.resource_id, req.rules).map_err(|e| e.to_wire()))
        .await
}

async fn local_request(State(host): Host, Path(id): Path<String>, Json(req): Json<LocalRequest>) -> impl IntoResponse {
    json(move || connector(&host, &id)?.connector().request(&req).map_err(|e| e.to_wire())).await
}

async fn read_artifact(State(host): Host, Path((id, handle)): Path<(String, String)>) -> Result<Bytes, Failure> {
    blocking(move || connector(&host, &id)?.connector().read_artifact(&HandleId::new(handle)).map_err(|e| e.to_wire()))
        .await
        .map(Bytes::from)
}

async fn audit(State(host): Host, Path(id): Path<String>, Query(q): Query<AuditQuery>) -> impl IntoResponse {
    json(move || Ok(connector(&host, &id)?.connector().audit_log(q.kind, q.since))).await
}

async fn app_data(State(host): Host, Path((id, title)): Path<(String, String)>) -> Result<Bytes, Failure> {
    host.app_data()
        .get(&format!("/apps/{id}"), &title)
        .map(|b| Bytes::copy_from_slice(&b))
        .ok_or_else(|| Failure(api_error("NOT_FOUND", format!("no data {title:?} for app {id}"))))
}
