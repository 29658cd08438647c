// SPDX-License-Identifier: Apache-2.0

//! Platform service registry of one edge host.
//!
//! Plain platform services, connector service instances and data apps are all
//! advertised here. Federated queries additionally ask every configured peer
//! host for its local view (the inter-platform reference point) and merge
//! the answers. Unreachable peers are reported as warnings instead of failing
//! the query.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Timestamp};
use crate::connector::data_app;
use crate::ids::{HostId, IdGen, InstanceId, ServiceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceKind {
    MecService,
    IdsConnector,
    DataApp,
}

impl std::str::FromStr for ServiceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MEC_SERVICE" => Ok(Self::MecService),
            "IDS_CONNECTOR" => Ok(Self::IdsConnector),
            "DATA_APP" => Ok(Self::DataApp),
            other => Err(format!("unknown service kind {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
    pub base_path: String,
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16, base_path: impl Into<String>) -> Self {
        Self { host: host.into(), port, base_path: base_path.into() }
    }

    /// `host:port`, the address of the edge host serving this endpoint.
    pub fn authority(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }

    pub fn url(&self) -> String {
        format!("http://{}:{}{}", self.host, self.port, self.base_path)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.host.is_empty() || self.host.chars().any(|c| c.is_whitespace() || c == '/') {
            return Err(format!("bad host {:?}", self.host));
        }
        if self.port == 0 {
            return Err("port must be non-zero".into());
        }
        if !self.base_path.starts_with('/') || self.base_path.chars().any(char::is_whitespace) {
            return Err(format!("bad base path {:?}", self.base_path));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceState {
    Active,
    Inactive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceDescriptor {
    pub service_id: ServiceId,
    pub name: String,
    pub kind: ServiceKind,
    pub endpoint: Endpoint,
    pub owner_instance_id: InstanceId,
    pub host_id: HostId,
    pub state: ServiceState,
    pub registered_at: Timestamp,
    /// Set for data apps: the transform the app exposes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_id: Option<String>,
}

/// Registration request; the registry assigns id, host and timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    pub kind: ServiceKind,
    pub endpoint: Endpoint,
    pub owner_instance_id: InstanceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_id: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QueryScope {
    #[default]
    Local,
    Federated,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceQuery {
    #[serde(default)]
    pub kind_filter: Option<ServiceKind>,
    #[serde(default)]
    pub name_prefix: Option<String>,
    #[serde(default)]
    pub scope: QueryScope,
}

impl ServiceQuery {
    pub fn kind(kind: ServiceKind) -> Self {
        Self { kind_filter: Some(kind), ..Self::default() }
    }

    pub fn named(mut self, prefix: impl Into<String>) -> Self {
        self.name_prefix = Some(prefix.into());
        self
    }

    pub fn federated(mut self) -> Self {
        self.scope = QueryScope::Federated;
        self
    }

    pub fn local(&self) -> Self {
        Self { scope: QueryScope::Local, ..self.clone() }
    }

    fn matches(&self, d: &ServiceDescriptor) -> bool {
        d.state == ServiceState::Active
            && self.kind_filter.is_none_or(|k| d.kind == k)
            && self.name_prefix.as_deref().is_none_or(|p| d.name.starts_with(p))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerWarning {
    pub peer: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResult {
    pub services: Vec<ServiceDescriptor>,
    #[serde(default)]
    pub warnings: Vec<PeerWarning>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("owner {owner} already registered a service named {name:?}")]
    DuplicateName { owner: InstanceId, name: String },
    #[error("malformed endpoint: {0}")]
    MalformedEndpoint(String),
    #[error("service {0} not found")]
    NotFound(ServiceId),
    #[error("unknown data app transform {0:?}")]
    UnknownTransform(String),
    #[error("data apps must be registered with kind DATA_APP")]
    NotADataApp,
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::DuplicateName { .. } => "DUPLICATE_NAME",
            Self::MalformedEndpoint(_) => "MALFORMED_ENDPOINT",
            Self::NotFound(_) => "NOT_FOUND",
            Self::UnknownTransform(_) => "UNKNOWN_TRANSFORM",
            Self::NotADataApp => "MALFORMED_SERVICE",
        }
    }
}

/// Fetches a peer registry's local view.
pub trait PeerRegistryClient: Send + Sync {
    fn fetch_local(&self, peer: &str, query: &ServiceQuery) -> Result<Vec<ServiceDescriptor>, String>;
}

pub struct Registry {
    host_id: HostId,
    clock: Arc<dyn Clock>,
    ids: IdGen,
    services: RwLock<BTreeMap<ServiceId, ServiceDescriptor>>,
    peers: Vec<String>,
    peer_client: RwLock<Option<Arc<dyn PeerRegistryClient>>>,
}

impl Registry {
    pub fn new(host_id: HostId, clock: Arc<dyn Clock>) -> Self {
        Self {
            ids: IdGen::new(format!("svc-{host_id}")),
            host_id,
            clock,
            services: RwLock::new(BTreeMap::new()),
            peers: Vec::new(),
            peer_client: RwLock::new(None),
        }
    }

    pub fn with_peers(mut self, peers: Vec<String>, client: Arc<dyn PeerRegistryClient>) -> Self {
        self.peers = peers;
        *self.peer_client.get_mut() = Some(client);
        self
    }

    pub fn host_id(&self) -> &HostId {
        &self.host_id
    }

    pub fn peers(&self) -> &[String] {
        &self.peers
    }

    pub fn register_service(&self, spec: ServiceSpec) -> Result<ServiceDescriptor, RegistryError> {
        spec.endpoint.validate().map_err(RegistryError::MalformedEndpoint)?;
        if spec.kind == ServiceKind::DataApp {
            let transform = spec.transform_id.as_deref().unwrap_or_default();
            if !data_app::is_builtin(transform) {
                return Err(RegistryError::UnknownTransform(transform.to_owned()));
            }
        }
        let mut services = self.services.write();
        if services
            .values()
            .any(|d| d.owner_instance_id == spec.owner_instance_id && d.name == spec.name)
        {
            return Err(RegistryError::DuplicateName { owner: spec.owner_instance_id, name: spec.name });
        }
        let desc = ServiceDescriptor {
            service_id: self.ids.next_id(),
            name: spec.name,
            kind: spec.kind,
            endpoint: spec.endpoint,
            owner_instance_id: spec.owner_instance_id,
            host_id: self.host_id.clone(),
            state: ServiceState::Active,
            registered_at: self.clock.now(),
            transform_id: spec.transform_id.filter(|_| spec.kind == ServiceKind::DataApp),
        };
        services.insert(desc.service_id.clone(), desc.clone());
        Ok(desc)
    }

    pub fn register_data_app(
        &self,
        mut spec: ServiceSpec,
        transform_id: &str,
    ) -> Result<ServiceDescriptor, RegistryError> {
        if spec.kind != ServiceKind::DataApp {
            return Err(RegistryError::NotADataApp);
        }
        spec.transform_id = Some(transform_id.to_owned());
        self.register_service(spec)
    }

    pub fn deregister_service(&self, service_id: &ServiceId) -> Result<(), RegistryError> {
        self.services
            .write()
            .remove(service_id)
            .map(|_| ())
            .ok_or_else(|| RegistryError::NotFound(service_id.clone()))
    }

    pub fn set_state(&self, service_id: &ServiceId, state: ServiceState) -> Result<(), RegistryError> {
        let mut services = self.services.write();
        let d = services
            .get_mut(service_id)
            .ok_or_else(|| RegistryError::NotFound(service_id.clone()))?;
        d.state = state;
        Ok(())
    }

    pub fn get(&self, service_id: &ServiceId) -> Result<ServiceDescriptor, RegistryError> {
        self.services
            .read()
            .get(service_id)
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(service_id.clone()))
    }

    /// Local view only, whatever the requested scope. This is what peers get.
    pub fn query_local(&self, query: &ServiceQuery) -> Vec<ServiceDescriptor> {
        let mut out: Vec<_> = self.services.read().values().filter(|d| query.matches(d)).cloned().collect();
        sort_services(&mut out);
        out
    }

    pub fn query_services(&self, query: &ServiceQuery) -> QueryResult {
        let mut services = self.query_local(query);
        let mut warnings = Vec::new();
        let client = self.peer_client.read().clone();
        if query.scope == QueryScope::Federated {
            if let Some(client) = client {
                let local_q = query.local();
                let mut seen: HashSet<(HostId, ServiceId)> =
                    services.iter().map(|d| (d.host_id.clone(), d.service_id.clone())).collect();
                for peer in &self.peers {
                    match client.fetch_local(peer, &local_q) {
                        Ok(remote) => {
                            for d in remote {
                                // Peers answering with inactive entries are filtered again here.
                                if local_q.matches(&d) && seen.insert((d.host_id.clone(), d.service_id.clone())) {
                                    services.push(d);
                                }
                            }
                        }
                        Err(message) => {
                            log::warn!("peer registry {peer} unreachable: {message}");
                            warnings.push(PeerWarning {
                                peer: peer.clone(),
                                code: "PEER_UNREACHABLE".into(),
                                message,
                            });
                        }
                    }
                }
                sort_services(&mut services);
            }
        }
        QueryResult { services, warnings }
    }

    /// Every stored descriptor, in id order.
    pub fn snapshot(&self) -> Vec<ServiceDescriptor> {
        self.services.read().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.services.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn sort_services(v: &mut [ServiceDescriptor]) {
    v.sort_by(|a, b| {
        (a.registered_at, &a.service_id, &a.host_id).cmp(&(b.registered_at, &b.service_id, &b.host_id))
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use chrono::Duration;
    use parking_lot::Mutex;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn registry() -> (Arc<ManualClock>, Registry) {
        let clock = Arc::new(ManualClock::at_epoch());
        (clock.clone(), Registry::new(HostId::new("a"), clock))
    }

    fn spec(owner: &str, name: &str, kind: ServiceKind) -> ServiceSpec {
        ServiceSpec {
            name: name.into(),
            kind,
            endpoint: Endpoint::new("a", 7000, format!("/svc/{name}")),
            owner_instance_id: InstanceId::new(owner),
            transform_id: None,
        }
    }

    #[test]
    fn read_your_write_for_connectors() {
        let (_, reg) = registry();
        let d = reg.register_service(spec("i1", "conn", ServiceKind::IdsConnector)).unwrap();
        assert_eq!(d.state, ServiceState::Active);
        let q = reg.query_services(&ServiceQuery::kind(ServiceKind::IdsConnector));
        assert_eq!(q.services, vec![d]);
    }

    #[test]
    fn duplicate_name_within_owner() {
        let (_, reg) = registry();
        reg.register_service(spec("i1", "x", ServiceKind::MecService)).unwrap();
        let err = reg.register_service(spec("i1", "x", ServiceKind::MecService)).unwrap_err();
        assert_eq!(err.code(), "DUPLICATE_NAME");
        // Another owner may reuse the name.
        reg.register_service(spec("i2", "x", ServiceKind::MecService)).unwrap();
    }

    #[test]
    fn malformed_endpoints() {
        let (_, reg) = registry();
        for ep in [
            Endpoint::new("", 1, "/"),
            Endpoint::new("a b", 1, "/"),
            Endpoint::new("a", 0, "/"),
            Endpoint::new("a", 1, "nope"),
        ] {
            let mut s = spec("i", "n", ServiceKind::MecService);
            s.endpoint = ep;
            assert_eq!(reg.register_service(s).unwrap_err().code(), "MALFORMED_ENDPOINT");
        }
    }

    #[test]
    fn deregister_semantics() {
        let (_, reg) = registry();
        let a = reg.register_service(spec("i", "a", ServiceKind::MecService)).unwrap();
        let b = reg.register_service(spec("i", "b", ServiceKind::MecService)).unwrap();
        reg.deregister_service(&a.service_id).unwrap();
        assert!(matches!(reg.get(&a.service_id), Err(RegistryError::NotFound(_))));
        assert!(matches!(reg.deregister_service(&a.service_id), Err(RegistryError::NotFound(_))));
        assert_eq!(reg.query_services(&ServiceQuery::default()).services, vec![b.clone()]);
        reg.deregister_service(&b.service_id).unwrap();
        assert!(reg.query_services(&ServiceQuery::default()).services.is_empty());
    }

    #[test]
    fn data_apps() {
        let (_, reg) = registry();
        let d = reg.register_data_app(spec("x", "digest", ServiceKind::DataApp), "sha256-digest").unwrap();
        assert_eq!(d.transform_id.as_deref(), Some("sha256-digest"));
        reg.register_data_app(spec("x", "count", ServiceKind::DataApp), "byte-count").unwrap();
        assert_eq!(reg.query_services(&ServiceQuery::kind(ServiceKind::DataApp)).services.len(), 2);
        let err = reg.register_data_app(spec("x", "f", ServiceKind::DataApp), "frobnicate").unwrap_err();
        assert_eq!(err.code(), "UNKNOWN_TRANSFORM");
    }

    #[test]
    fn ordering_and_filters() {
        let (clock, reg) = registry();
        let first = reg.register_service(spec("i", "beta", ServiceKind::MecService)).unwrap();
        clock.advance(Duration::seconds(1));
        let second = reg.register_service(spec("i", "alpha", ServiceKind::IdsConnector)).unwrap();
        let all = reg.query_services(&ServiceQuery::default()).services;
        assert_eq!(all, vec![first.clone(), second.clone()]);
        let named = reg.query_services(&ServiceQuery::default().named("al")).services;
        assert_eq!(named, vec![second.clone()]);
        reg.set_state(&second.service_id, ServiceState::Inactive).unwrap();
        assert_eq!(reg.query_services(&ServiceQuery::default()).services, vec![first]);
    }

    #[test]
    fn federated_without_peers_degrades_to_local() {
        let (_, reg) = registry();
        reg.register_service(spec("i", "a", ServiceKind::IdsConnector)).unwrap();
        let q = reg.query_services(&ServiceQuery::kind(ServiceKind::IdsConnector).federated());
        assert_eq!(q.services.len(), 1);
        assert!(q.warnings.is_empty());
    }

    /// Peers served from a map of registries; a missing entry is unreachable.
    struct MapPeers(Mutex<HashMap<String, Arc<Registry>>>);

    impl PeerRegistryClient for MapPeers {
        fn fetch_local(&self, peer: &str, q: &ServiceQuery) -> Result<Vec<ServiceDescriptor>, String> {
            self.0.lock().get(peer).map(|r| r.query_local(q)).ok_or_else(|| "connection refused".into())
        }
    }

    #[test]
    fn federated_merge_and_peer_down() {
        let clock = Arc::new(ManualClock::at_epoch());
        let peers = Arc::new(MapPeers(Mutex::new(HashMap::new())));
        let b = Arc::new(Registry::new(HostId::new("b"), clock.clone()));
        peers.0.lock().insert("b:7000".into(), b.clone());
        let a = Registry::new(HostId::new("a"), clock.clone()).with_peers(vec!["b:7000".into()], peers.clone());

        let c1 = a.register_service(spec("i", "c1", ServiceKind::IdsConnector)).unwrap();
        clock.advance(Duration::milliseconds(5));
        let c2 = b.register_service(spec("j", "c2", ServiceKind::IdsConnector)).unwrap();
        b.register_service(spec("j", "plain", ServiceKind::MecService)).unwrap();

        let q = ServiceQuery::kind(ServiceKind::IdsConnector).federated();
        let res = a.query_services(&q);
        assert_eq!(res.services, vec![c1.clone(), c2]);
        assert!(res.warnings.is_empty());

        // Oracle: per-host LOCAL queries merged by hand.
        let mut manual = a.query_local(&q);
        manual.extend(b.query_local(&q));
        assert_eq!(res.services, manual);

        peers.0.lock().clear();
        let res = a.query_services(&q);
        assert_eq!(res.services, vec![c1]);
        assert_eq!(res.warnings.len(), 1);
        assert_eq!(res.warnings[0].code, "PEER_UNREACHABLE");
    }

    #[derive(Debug, Clone)]
    enum Op {
        Register(u8, u8),
        Deregister(usize),
    }

    proptest! {
        #[test]
        fn matches_map_model(ops in proptest::collection::vec(
            prop_oneof![
                (0u8..3, 0u8..4).prop_map(|(o, n)| Op::Register(o, n)),
                (0usize..16).prop_map(Op::Deregister),
            ],
            0..40,
        )) {
            let (_, reg) = registry();
            // Model: service id -> (owner, name).
            let mut model: BTreeMap<ServiceId, (String, String)> = BTreeMap::new();
            let mut issued: Vec<ServiceId> = Vec::new();
            for op in ops {
                match op {
                    Op::Register(o, n) => {
                        let (owner, name) = (format!("o{o}"), format!("n{n}"));
                        let dup = model.values().any(|(mo, mn)| *mo == owner && *mn == name);
                        let res = reg.register_service(spec(&owner, &name, ServiceKind::MecService));
                        prop_assert_eq!(res.is_err(), dup);
                        if let Ok(d) = res {
                            issued.push(d.service_id.clone());
                            model.insert(d.service_id, (owner, name));
                        }
                    }
                    Op::Deregister(i) => {
                        if let Some(id) = issued.get(i).cloned() {
                            let existed = model.remove(&id).is_some();
                            prop_assert_eq!(reg.deregister_service(&id).is_ok(), existed);
                        }
                    }
                }
            }
            let actual: BTreeMap<ServiceId, (String, String)> = reg
                .snapshot()
                .into_iter()
                .map(|d| (d.service_id, (d.owner_instance_id.0, d.name)))
                .collect();
            prop_assert_eq!(actual, model);
        }
    }
}
