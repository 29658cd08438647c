// SPDX-License-Identifier: Apache-2.0

//! Per-connector embedded store. One mutex guards every table together with
//! the audit log, so state changes and their audit entries are a single
//! linearizable step and audit order matches causal order.

use std::collections::BTreeMap;

use parking_lot::{Mutex, MutexGuard};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::model::{
    ArtifactHandle, AuditEventKind, AuditLogEntry, ContractAgreement, ContractOffer, DataResource,
    ResourceCatalog,
};
use crate::clock::Timestamp;
use crate::ids::{AgreementId, CatalogId, ConnectorId, ContractId, CorrelationId, HandleId, ResourceId};

#[derive(Default)]
pub(crate) struct Tables {
    pub catalogs: BTreeMap<CatalogId, ResourceCatalog>,
    pub resources: BTreeMap<ResourceId, DataResource>,
    pub offers: BTreeMap<ContractId, ContractOffer>,
    pub agreements: BTreeMap<AgreementId, ContractAgreement>,
    pub handles: BTreeMap<HandleId, ArtifactHandle>,
    pub audit: Vec<AuditLogEntry>,
}

impl Tables {
    pub fn append(
        &mut self,
        connector_id: &ConnectorId,
        timestamp: Timestamp,
        event_kind: AuditEventKind,
        correlation_id: &CorrelationId,
        details: String,
    ) {
        let seq = self.audit.len() as u64 + 1;
        self.audit.push(AuditLogEntry {
            seq,
            timestamp,
            connector_id: connector_id.clone(),
            event_kind,
            correlation_id: correlation_id.clone(),
            details,
        });
    }
}

#[derive(Default)]
pub struct ConnectorStore {
    tables: Mutex<Tables>,
}

#[derive(Serialize)]
struct Digestable<'a> {
    catalogs: Vec<&'a ResourceCatalog>,
    resources: Vec<(&'a DataResource, String)>,
    offers: Vec<&'a ContractOffer>,
    agreements: Vec<&'a ContractAgreement>,
    handles: Vec<(&'a ArtifactHandle, String)>,
    audit: &'a [AuditLogEntry],
}

impl ConnectorStore {
    pub(crate) fn lock(&self) -> MutexGuard<'_, Tables> {
        self.tables.lock()
    }

    /// Drops every table. Used when the owning connector is terminated.
    pub fn dispose(&self) {
        *self.tables.lock() = Tables::default();
    }

    /// Content digest over all tables, payloads included.
    pub fn digest(&self) -> String {
        let t = self.tables.lock();
        let payload_hash = |b: &[u8]| hex::encode(Sha256::digest(b));
        let view = Digestable {
            catalogs: t.catalogs.values().collect(),
            resources: t.resources.values().map(|r| (r, payload_hash(&r.payload_encoded))).collect(),
            offers: t.offers.values().collect(),
            agreements: t.agreements.values().collect(),
            handles: t.handles.values().map(|h| (h, payload_hash(&h.payload_encoded))).collect(),
            audit: &t.audit,
        };
        hex::encode(Sha256::digest(serde_json::to_vec(&view).expect("serializable")))
    }

    pub fn audit_len(&self) -> usize {
        self.tables.lock().audit.len()
    }
}
