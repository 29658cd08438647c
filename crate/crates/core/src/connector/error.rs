// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::policy::DenyReason;
use crate::identity::{IdentityError, Verdict};
use crate::ids::{AgreementId, CatalogId, ContractId, HandleId, ResourceId, ServiceId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConnectorError {
    #[error("catalog {0} not found")]
    UnknownCatalog(CatalogId),
    #[error("resource {0} not found")]
    UnknownResource(ResourceId),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("caller token rejected: {0:?}")]
    Unauthenticated(Verdict),
    #[error("contract {0} not offered")]
    UnknownContract(ContractId),
    #[error("negotiation for contract {0} refused by policy")]
    RefusedByPolicy(ContractId),
    #[error("policy denied: {0}")]
    PolicyDenied(DenyReason),
    #[error("agreement {0} not found")]
    UnknownAgreement(AgreementId),
    #[error("data app {0} unreachable")]
    DataAppUnreachable(ServiceId),
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("artifact {0} not found")]
    HandleNotFound(HandleId),
    #[error("stored artifact {0} is corrupt")]
    CorruptArtifact(HandleId),
    #[error("no offer for resource {0}")]
    NoOffer(ResourceId),
    #[error("identity service: {0}")]
    Identity(#[from] IdentityError),
    #[error("{code}: {message}")]
    Remote { code: String, message: String },
}

impl ConnectorError {
    pub fn code(&self) -> &str {
        match self {
            Self::UnknownCatalog(_) => "UNKNOWN_CATALOG",
            Self::UnknownResource(_) => "UNKNOWN_RESOURCE",
            Self::InvalidRule(_) => "INVALID_RULE",
            Self::Unauthenticated(_) => "UNAUTHENTICATED",
            Self::UnknownContract(_) => "UNKNOWN_CONTRACT",
            Self::RefusedByPolicy(_) => "REFUSED_BY_POLICY",
            Self::PolicyDenied(_) => "POLICY_DENIED",
            Self::UnknownAgreement(_) => "UNKNOWN_AGREEMENT",
            Self::DataAppUnreachable(_) => "DATA_APP_UNREACHABLE",
            Self::ProviderUnreachable(_) => "PROVIDER_UNREACHABLE",
            Self::HandleNotFound(_) => "NOT_FOUND",
            Self::CorruptArtifact(_) => "CORRUPT_ARTIFACT",
            Self::NoOffer(_) => "NO_OFFER",
            Self::Identity(e) => e.code(),
            Self::Remote { code, .. } => code,
        }
    }

    pub fn to_wire(&self) -> WireError {
        WireError {
            code: self.code().to_owned(),
            message: self.to_string(),
            verdict: match self {
                Self::Unauthenticated(v) => Some(*v),
                _ => None,
            },
            reason: match self {
                Self::PolicyDenied(r) => Some(*r),
                _ => None,
            },
            id: match self {
                Self::UnknownCatalog(id) => Some(id.to_string()),
                Self::UnknownResource(id) | Self::NoOffer(id) => Some(id.to_string()),
                Self::UnknownContract(id) | Self::RefusedByPolicy(id) => Some(id.to_string()),
                Self::UnknownAgreement(id) => Some(id.to_string()),
                Self::DataAppUnreachable(id) => Some(id.to_string()),
                Self::HandleNotFound(id) | Self::CorruptArtifact(id) => Some(id.to_string()),
                _ => None,
            },
        }
    }

    /// Rebuilds a typed error from its wire form where the code is known.
    pub fn from_wire(w: WireError) -> Self {
        let id = w.id.clone().unwrap_or_default();
        match (w.code.as_str(), w.verdict, w.reason) {
            ("UNAUTHENTICATED", Some(v), _) => Self::Unauthenticated(v),
            ("POLICY_DENIED", _, Some(r)) => Self::PolicyDenied(r),
            ("UNKNOWN_CATALOG", ..) => Self::UnknownCatalog(id.into()),
            ("UNKNOWN_RESOURCE", ..) => Self::UnknownResource(id.into()),
            ("NO_OFFER", ..) => Self::NoOffer(id.into()),
            ("UNKNOWN_CONTRACT", ..) => Self::UnknownContract(id.into()),
            ("REFUSED_BY_POLICY", ..) => Self::RefusedByPolicy(id.into()),
            ("UNKNOWN_AGREEMENT", ..) => Self::UnknownAgreement(id.into()),
            ("DATA_APP_UNREACHABLE", ..) => Self::DataAppUnreachable(id.into()),
            ("NOT_FOUND", ..) if !id.is_empty() => Self::HandleNotFound(id.into()),
            ("CORRUPT_ARTIFACT", ..) => Self::CorruptArtifact(id.into()),
            ("INVALID_RULE", ..) => Self::InvalidRule(w.message),
            ("PROVIDER_UNREACHABLE", ..) => Self::ProviderUnreachable(w.message),
            _ => Self::Remote { code: w.code, message: w.message },
        }
    }
}

/// JSON error body shared by every endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none", flatten)]
    pub reason: Option<DenyReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}
