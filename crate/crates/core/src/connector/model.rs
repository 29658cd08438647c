// SPDX-License-Identifier: Apache-2.0

use std::str::FromStr;
use std::sync::Arc;

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::ids::{
    AgreementId, CatalogId, ConnectorId, ContractId, CorrelationId, HandleId, ParticipantId, ResourceId,
    RuleId,
};

/// A registered data resource. The payload is held base64-encoded and never
/// serialized with the metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataResource {
    pub resource_id: ResourceId,
    pub title: String,
    pub media_type: String,
    #[serde(skip)]
    pub payload_encoded: Arc<[u8]>,
    pub size_bytes: u64,
    pub created_at: Timestamp,
    pub catalog_id: CatalogId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceCatalog {
    pub catalog_id: CatalogId,
    pub title: String,
    pub resource_ids: Vec<ResourceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleKind {
    ProvideAccess,
    ProhibitAccess,
    NTimesUsage { max_count: u64 },
    UsageDuringInterval { start: Timestamp, end: Timestamp },
}

impl RuleKind {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            RuleKind::NTimesUsage { max_count: 0 } => Err("N_TIMES_USAGE needs max_count >= 1".into()),
            RuleKind::UsageDuringInterval { start, end } if start >= end => {
                Err("USAGE_DURING_INTERVAL needs start < end".into())
            }
            _ => Ok(()),
        }
    }
}

/// Compact rule syntax used on the command line:
/// `provide`, `prohibit`, `ntimes:<n>`, `interval:<rfc3339>/<rfc3339>`.
/// The wire names (`PROVIDE_ACCESS`, `N_TIMES_USAGE:<n>`, ...) are accepted too.
impl FromStr for RuleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, arg) = s.split_once(':').map_or((s, None), |(h, a)| (h, Some(a)));
        match (head.trim().to_ascii_lowercase().as_str(), arg) {
            ("provide" | "provide_access", None) => Ok(Self::ProvideAccess),
            ("prohibit" | "prohibit_access", None) => Ok(Self::ProhibitAccess),
            ("ntimes" | "n_times_usage", Some(n)) => n
                .trim()
                .parse()
                .map(|max_count| Self::NTimesUsage { max_count })
                .map_err(|e| format!("bad count {n:?}: {e}")),
            ("interval" | "usage_during_interval", Some(range)) => {
                let (a, b) = range.split_once('/').ok_or("interval needs <start>/<end>")?;
                let parse = |x: &str| {
                    DateTime::parse_from_rfc3339(x.trim())
                        .map(|t| t.to_utc())
                        .map_err(|e| format!("bad timestamp {x:?}: {e}"))
                };
                Ok(Self::UsageDuringInterval { start: parse(a)?, end: parse(b)? })
            }
            _ => Err(format!("unrecognized rule {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRule {
    #[serde(default)]
    pub rule_id: RuleId,
    #[serde(flatten)]
    pub kind: RuleKind,
}

impl UsageRule {
    pub fn new(kind: RuleKind) -> Self {
        Self { rule_id: RuleId::default(), kind }
    }
}

/// Parses a comma separated list in the compact rule syntax.
pub fn parse_rules(spec: &str) -> Result<Vec<UsageRule>, String> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse().map(UsageRule::new))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractOffer {
    pub contract_id: ContractId,
    pub resource_id: ResourceId,
    pub rules: Vec<UsageRule>,
    pub provider_connector_id: ConnectorId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractAgreement {
    pub agreement_id: AgreementId,
    pub contract_id: ContractId,
    pub resource_id: ResourceId,
    pub provider_connector_id: ConnectorId,
    pub consumer_connector_id: ConnectorId,
    pub rules_snapshot: Vec<UsageRule>,
    pub agreed_at: Timestamp,
    pub usage_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditEventKind {
    ResourceRegistered,
    DescriptionServed,
    NegotiationStarted,
    AgreementReached,
    NegotiationRefused,
    ArtifactServed,
    ArtifactDenied,
    ArtifactStored,
    ArtifactRead,
    DataAppInvoked,
}

impl FromStr for AuditEventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_uppercase()))
            .map_err(|_| format!("unknown audit event kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLogEntry {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub connector_id: ConnectorId,
    pub event_kind: AuditEventKind,
    pub correlation_id: CorrelationId,
    pub details: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHandle {
    pub handle_id: HandleId,
    pub agreement_id: AgreementId,
    #[serde(skip)]
    pub payload_encoded: Arc<[u8]>,
    pub fetched_at: Timestamp,
}

/// What a connector advertises to authenticated peers: metadata only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfDescription {
    pub connector_id: ConnectorId,
    pub participant_id: ParticipantId,
    pub catalogs: Vec<ResourceCatalog>,
    pub resources: Vec<DataResource>,
    pub offers: Vec<ContractOffer>,
}
