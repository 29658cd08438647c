// SPDX-License-Identifier: Apache-2.0

//! Request and response bodies of the connector endpoints, plus the
//! transport used for connector-to-connector calls.
//!
//! Cross-connector endpoints carry the caller's token in the `DAT` header:
//! `GET /description`, `POST /negotiate`, `POST /artifact`.

use serde::{Deserialize, Serialize};

use super::error::ConnectorError;
use super::model::{ContractAgreement, SelfDescription};
use crate::identity::DynamicAttributeToken;
use crate::ids::{AgreementId, ContractId, CorrelationId, HandleId, ResourceId, ServiceId};
use crate::registry::Endpoint;

pub const DAT_HEADER: &str = "DAT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegotiateRequest {
    pub contract_id: ContractId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_id: Option<CorrelationId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRequest {
    pub agreement_id: AgreementId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_app_id: Option<ServiceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_id: Option<CorrelationId>,
}

/// `payload` is base64 text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactResponse {
    pub payload: String,
}

/// Consumer-local request driving the whole exchange: describe, negotiate
/// (unless an agreement is given), fetch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalRequest {
    pub provider: Endpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract_id: Option<ContractId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement_id: Option<AgreementId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_id: Option<ResourceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_app_id: Option<ServiceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalRequestOutcome {
    pub contract_id: ContractId,
    pub agreement_id: AgreementId,
    pub handle_id: HandleId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateCatalog {
    pub title: String,
}

/// `payload` is base64 text on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterResource {
    pub catalog_id: crate::ids::CatalogId,
    pub title: String,
    pub media_type: String,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachRules {
    pub resource_id: ResourceId,
    pub rules: Vec<super::model::UsageRule>,
}

/// Outbound connector-to-connector calls.
pub trait ConnectorTransport: Send + Sync {
    fn description(&self, to: &Endpoint, dat: &DynamicAttributeToken) -> Result<SelfDescription, ConnectorError>;

    fn negotiate(
        &self,
        to: &Endpoint,
        dat: &DynamicAttributeToken,
        req: &NegotiateRequest,
    ) -> Result<ContractAgreement, ConnectorError>;

    fn artifact(
        &self,
        to: &Endpoint,
        dat: &DynamicAttributeToken,
        req: &ArtifactRequest,
    ) -> Result<ArtifactResponse, ConnectorError>;
}
