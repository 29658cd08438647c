// SPDX-License-Identifier: Apache-2.0

//! Request bodies and query strings shared by the server and client.

use serde::{Deserialize, Serialize};

use edgeds_core::clock::Timestamp;
use edgeds_core::connector::AuditEventKind;
use edgeds_core::identity::{DynamicAttributeToken, Verdict};
use edgeds_core::ids::{ConnectorId, HostId, ParticipantId};
use edgeds_core::registry::{QueryScope, ServiceKind, ServiceQuery};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub host_id: HostId,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRequest {
    pub connector_id: ConnectorId,
    /// Lowercase hex.
    pub fingerprint_proof: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub token: DynamicAttributeToken,
    pub now: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocateRequest {
    pub participant_id: ParticipantId,
    pub connector_id: ConnectorId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertQuery {
    #[serde(default)]
    pub status: Option<edgeds_core::identity::CertStatus>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalConnectorRequest {
    pub participant_id: ParticipantId,
    pub credential: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleRequest {
    pub replicas: usize,
}

/// Registers bytes in the catalog titled `catalog`, creating it if needed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResource {
    pub catalog: String,
    pub title: String,
    pub media_type: String,
    /// Base64.
    pub payload: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditQuery {
    #[serde(default)]
    pub kind: Option<AuditEventKind>,
    #[serde(default)]
    pub since: Option<u64>,
}

/// `GET /registry/services` parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryParams {
    #[serde(default)]
    pub kind: Option<ServiceKind>,
    #[serde(default)]
    pub scope: Option<QueryScope>,
    #[serde(default)]
    pub name_prefix: Option<String>,
}

impl From<QueryParams> for ServiceQuery {
    fn from(p: QueryParams) -> Self {
        ServiceQuery { kind_filter: p.kind, name_prefix: p.name_prefix, scope: p.scope.unwrap_or_default() }
    }
}

impl From<&ServiceQuery> for QueryParams {
    fn from(q: &ServiceQuery) -> Self {
        QueryParams { kind: q.kind_filter, scope: Some(q.scope), name_prefix: q.name_prefix.clone() }
    }
}

impl QueryParams {
    /// Query string pairs in their serialized form.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let text = |v: serde_json::Value| v.as_str().map(str::to_owned);
        let mut out = Vec::new();
        if let Some(k) = self.kind.and_then(|k| text(serde_json::to_value(k).ok()?)) {
            out.push(("kind", k));
        }
        if let Some(s) = self.scope.and_then(|s| text(serde_json::to_value(s).ok()?)) {
            out.push(("scope", s));
        }
        if let Some(p) = &self.name_prefix {
            out.push(("name_prefix", p.clone()));
        }
        out
    }
}
