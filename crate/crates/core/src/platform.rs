// SPDX-License-Identifier: Apache-2.0

//! Application lifecycle management on one edge host.
//!
//! The manager places apps on the host's simulated nodes and, for
//! data-spaces-enabled apps, composes a dedicated connector: node placement,
//! certificate allocation, service start, registry entry and wiring. Every
//! onboard either completes or is rolled back step by step. Lifecycle
//! operations on one host are serialized through a single queue.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::autoscaler::{apply_scale, AutoscalePolicy, LoadSample, ReplicaSet, ReplicaSetController, ScaleDecision, ScaleError};
use crate::clock::Clock;
use crate::config::{ExternalParticipant, NodeConfig};
use crate::connector::{
    Connector, ConnectorContext, ConnectorError, ConnectorIdentity, ConnectorService, DataResource, WireError,
};
use crate::identity::{IdentityError, IdentityService};
use crate::ids::{AppId, CertId, ConnectorId, HostId, IdGen, InstanceId, NodeId, ParticipantId, ServiceId};
use crate::registry::{Endpoint, Registry, RegistryError, ServiceDescriptor, ServiceKind, ServiceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demand {
    pub cpu_millicores: u32,
    pub memory_mb: u32,
}

impl Default for Demand {
    /// The demand of one connector service.
    fn default() -> Self {
        Self { cpu_millicores: 250, memory_mb: 256 }
    }
}

impl Demand {
    pub const ZERO: Demand = Demand { cpu_millicores: 0, memory_mb: 0 };

    pub fn new(cpu_millicores: u32, memory_mb: u32) -> Self {
        Self { cpu_millicores, memory_mb }
    }

    pub fn is_positive(&self) -> bool {
        self.cpu_millicores > 0 && self.memory_mb > 0
    }

    pub fn fits_in(&self, room: &Demand) -> bool {
        self.cpu_millicores <= room.cpu_millicores && self.memory_mb <= room.memory_mb
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeNode {
    pub host_id: HostId,
    pub node_id: NodeId,
    pub capacity: Demand,
    pub allocated: Demand,
}

impl EdgeNode {
    pub fn new(host_id: HostId, cfg: &NodeConfig) -> Self {
        Self {
            host_id,
            node_id: cfg.node_id.clone(),
            capacity: Demand::new(cfg.cpu_millicores, cfg.memory_mb),
            allocated: Demand::ZERO,
        }
    }

    pub fn remaining(&self) -> Demand {
        Demand::new(
            self.capacity.cpu_millicores - self.allocated.cpu_millicores,
            self.capacity.memory_mb - self.allocated.memory_mb,
        )
    }
}

/// Best fit on CPU: the feasible node left with the least spare CPU after
/// allocation, ties to the smallest node id. The allocation is applied.
pub fn place(demand: &Demand, nodes: &mut [EdgeNode]) -> Result<NodeId, PlatformError> {
    let best = nodes
        .iter_mut()
        .filter(|n| demand.fits_in(&n.remaining()))
        .min_by(|a, b| {
            let left = |n: &EdgeNode| n.remaining().cpu_millicores - demand.cpu_millicores;
            left(a).cmp(&left(b)).then_with(|| a.node_id.cmp(&b.node_id))
        })
        .ok_or(PlatformError::InsufficientCapacity(*demand))?;
    best.allocated.cpu_millicores += demand.cpu_millicores;
    best.allocated.memory_mb += demand.memory_mb;
    Ok(best.node_id.clone())
}

/// Returns a previous allocation to its node.
pub fn unplace(demand: &Demand, node_id: &NodeId, nodes: &mut [EdgeNode]) {
    if let Some(n) = nodes.iter_mut().find(|n| &n.node_id == node_id) {
        n.allocated.cpu_millicores -= demand.cpu_millicores;
        n.allocated.memory_mb -= demand.memory_mb;
    }
}

mod b64 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

/// Payload is base64 in JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialResource {
    pub title: String,
    pub media_type: String,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppDescriptor {
    pub app_id: AppId,
    pub name: String,
    pub participant_id: ParticipantId,
    pub demand: Demand,
    #[serde(default)]
    pub data_spaces_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_resources: Option<Vec<InitialResource>>,
}

impl AppDescriptor {
    pub fn validate(&self) -> Result<(), PlatformError> {
        if !self.demand.is_positive() {
            return Err(PlatformError::InvalidDescriptor("demand components must be positive".into()));
        }
        if self.name.is_empty() || self.name.contains('/') {
            return Err(PlatformError::InvalidDescriptor(format!("bad app name {:?}", self.name)));
        }
        if self.data_spaces_enabled && self.participant_id.is_empty() {
            return Err(PlatformError::InvalidDescriptor("enabled apps need a participant id".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InstanceState {
    Running,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppInstance {
    pub instance_id: InstanceId,
    pub app_id: AppId,
    pub node_id: NodeId,
    pub state: InstanceState,
    pub connector_service_id: Option<ServiceId>,
    pub app_service_ids: Vec<ServiceId>,
    pub cert_id: Option<CertId>,
    /// The connector's endpoint the app talks to, once wired.
    pub connector_endpoint: Option<Endpoint>,
    /// Where a plain app serves its own data.
    pub app_endpoint: Option<Endpoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OnboardStep {
    PlaceApp,
    PlaceConnector,
    AllocateCertificate,
    StartConnector,
    RegisterConnector,
    WireConnector,
    RegisterResources,
    RegisterAppService,
}

#[derive(Debug, thiserror::Error)]
pub enum PlatformError {
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("no node can hold {0:?}")]
    InsufficientCapacity(Demand),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Connector(#[from] ConnectorError),
    #[error("{0} not found")]
    NotFound(String),
    #[error("instance {0} already terminated")]
    AlreadyTerminated(InstanceId),
    #[error("credentials for participant {0} were rejected")]
    Unauthorized(ParticipantId),
    #[error("fault injected at {0:?}")]
    InjectedFault(OnboardStep),
    #[error(transparent)]
    Scale(#[from] ScaleError),
}

impl PlatformError {
    pub fn code(&self) -> &str {
        match self {
            Self::InvalidDescriptor(_) => "INVALID_DESCRIPTOR",
            Self::InsufficientCapacity(_) => "INSUFFICIENT_CAPACITY",
            Self::Identity(e) => e.code(),
            Self::Registry(e) => e.code(),
            Self::Connector(e) => e.code(),
            Self::NotFound(_) => "NOT_FOUND",
            Self::AlreadyTerminated(_) => "ALREADY_TERMINATED",
            Self::Unauthorized(_) => "UNAUTHORIZED",
            Self::InjectedFault(_) => "INJECTED_FAULT",
            Self::Scale(e) => e.code(),
        }
    }

    /// Wire form; connector errors keep their verdict and reason.
    pub fn to_wire(&self) -> WireError {
        match self {
            Self::Connector(c) => c.to_wire(),
            other => WireError {
                code: other.code().to_owned(),
                message: other.to_string(),
                verdict: None,
                reason: None,
                id: None,
            },
        }
    }
}

/// Connector services mounted on this host, by endpoint.
#[derive(Default)]
pub struct ConnectorDirectory {
    map: RwLock<HashMap<Endpoint, Arc<ConnectorService>>>,
}

impl ConnectorDirectory {
    pub fn get(&self, endpoint: &Endpoint) -> Option<Arc<ConnectorService>> {
        self.map.read().get(endpoint).cloned()
    }

    /// Looks a connector up by the last segment of its base path.
    pub fn by_id(&self, connector_id: &str) -> Option<Arc<ConnectorService>> {
        self.map.read().values().find(|s| s.connector().id().as_str() == connector_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn mount(&self, endpoint: Endpoint, service: Arc<ConnectorService>) {
        self.map.write().insert(endpoint, service);
    }

    fn unmount(&self, endpoint: &Endpoint) -> Option<Arc<ConnectorService>> {
        self.map.write().remove(endpoint)
    }
}

/// (app base path, title)
type DataKey = (String, String);

/// Raw data exposed by plain apps, keyed by app base path and title.
#[derive(Default)]
pub struct AppDataStore {
    map: RwLock<HashMap<DataKey, Arc<[u8]>>>,
}

impl AppDataStore {
    pub fn get(&self, base_path: &str, title: &str) -> Option<Arc<[u8]>> {
        self.map.read().get(&(base_path.to_owned(), title.to_owned())).cloned()
    }

    pub fn put(&self, base_path: &str, title: &str, bytes: Arc<[u8]>) {
        self.map.write().insert((base_path.to_owned(), title.to_owned()), bytes);
    }

    fn remove_all(&self, base_path: &str) {
        self.map.write().retain(|(p, _), _| p != base_path);
    }
}

#[derive(Debug, Clone, Default)]
pub struct ManagerSettings {
    pub connector_demand: Demand,
    pub autoscale: AutoscalePolicy,
    pub external_participants: Vec<ExternalParticipant>,
}

/// Replica set state as reported by the manager.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSetStatus {
    pub set: ReplicaSet,
    pub live_replicas: usize,
    pub draining_replicas: usize,
    pub last_samples: Vec<LoadSample>,
}

struct Deployment {
    descriptor: ServiceDescriptor,
    cert_id: CertId,
    node_id: NodeId,
    demand: Demand,
    service: Arc<ConnectorService>,
}

struct Lcm {
    nodes: Vec<EdgeNode>,
    instances: BTreeMap<InstanceId, (AppInstance, Demand)>,
    deployments: BTreeMap<ServiceId, Deployment>,
    scalers: BTreeMap<ServiceId, ReplicaSetController>,
}

enum Undo {
    Node(NodeId, Demand),
    Cert(CertId),
    Mount(Endpoint),
    Service(ServiceId),
    AppData(String),
}

pub const PLATFORM_OWNER: &str = "platform";
pub const PLATFORM_CONNECTOR_NAME: &str = "platform-connector";

/// Name under which an app's connector is registered.
pub fn connector_name(app_name: &str) -> String {
    format!("{app_name}-connector")
}

pub fn external_owner(participant: &ParticipantId) -> InstanceId {
    InstanceId::new(format!("external:{participant}"))
}

pub struct PlatformManager {
    host_id: HostId,
    host: String,
    port: u16,
    identity: Arc<IdentityService>,
    registry: Arc<Registry>,
    connectors: Arc<ConnectorDirectory>,
    app_data: Arc<AppDataStore>,
    ctx: ConnectorContext,
    settings: ManagerSettings,
    lcm: Mutex<Lcm>,
    fault: Mutex<Option<OnboardStep>>,
    instance_ids: IdGen,
    connector_ids: IdGen,
}

#[allow(clippy::too_many_arguments)]
impl PlatformManager {
    pub fn new(
        host_id: HostId,
        (host, port): (String, u16),
        nodes: &[NodeConfig],
        identity: Arc<IdentityService>,
        registry: Arc<Registry>,
        connectors: Arc<ConnectorDirectory>,
        app_data: Arc<AppDataStore>,
        ctx: ConnectorContext,
        settings: ManagerSettings,
    ) -> Self {
        let mut nodes: Vec<_> = nodes.iter().map(|n| EdgeNode::new(host_id.clone(), n)).collect();
        nodes.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        Self {
            instance_ids: IdGen::new(format!("inst-{host_id}")),
            connector_ids: IdGen::new(format!("conn-{host_id}")),
            host_id,
            host,
            port,
            identity,
            registry,
            connectors,
            app_data,
            ctx,
            settings,
            lcm: Mutex::new(Lcm {
                nodes,
                instances: BTreeMap::new(),
                deployments: BTreeMap::new(),
                scalers: BTreeMap::new(),
            }),
            fault: Mutex::new(None),
        }
    }

    pub fn host_id(&self) -> &HostId {
        &self.host_id
    }

    pub fn settings(&self) -> &ManagerSettings {
        &self.settings
    }

    /// Makes the next onboard fail at `step` (once).
    pub fn set_fault(&self, step: Option<OnboardStep>) {
        *self.fault.lock() = step;
    }

    fn checkpoint(&self, step: OnboardStep) -> Result<(), PlatformError> {
        let mut fault = self.fault.lock();
        if *fault == Some(step) {
            *fault = None;
            return Err(PlatformError::InjectedFault(step));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<EdgeNode> {
        self.lcm.lock().nodes.clone()
    }

    pub fn list_instances(&self) -> Vec<AppInstance> {
        self.lcm.lock().instances.values().map(|(i, _)| i.clone()).collect()
    }

    pub fn instance(&self, instance_id: &InstanceId) -> Option<AppInstance> {
        self.lcm.lock().instances.get(instance_id).map(|(i, _)| i.clone())
    }

    /// The connector service deployed under a registry id.
    pub fn connector_service(&self, service_id: &ServiceId) -> Option<Arc<ConnectorService>> {
        self.lcm.lock().deployments.get(service_id).map(|d| d.service.clone())
    }

    pub fn onboard_app(&self, desc: &AppDescriptor) -> Result<AppInstance, PlatformError> {
        desc.validate()?;
        let mut lcm = self.lcm.lock();
        let mut undo = Vec::new();
        match self.onboard_steps(&mut lcm, desc, &mut undo) {
            Ok(instance) => Ok(instance),
            Err(e) => {
                log::warn!("onboard of {} failed with {}; rolling back {} steps", desc.name, e.code(), undo.len());
                self.rollback(&mut lcm, undo);
                Err(e)
            }
        }
    }

    fn onboard_steps(
        &self,
        lcm: &mut Lcm,
        desc: &AppDescriptor,
        undo: &mut Vec<Undo>,
    ) -> Result<AppInstance, PlatformError> {
        let instance_id: InstanceId = self.instance_ids.next_id();
        self.checkpoint(OnboardStep::PlaceApp)?;
        let node_id = place(&desc.demand, &mut lcm.nodes)?;
        undo.push(Undo::Node(node_id.clone(), desc.demand));

        let mut instance = AppInstance {
            instance_id: instance_id.clone(),
            app_id: desc.app_id.clone(),
            node_id,
            state: InstanceState::Running,
            connector_service_id: None,
            app_service_ids: Vec::new(),
            cert_id: None,
            connector_endpoint: None,
            app_endpoint: None,
        };

        if desc.data_spaces_enabled {
            let d = self.deploy_connector(lcm, &desc.participant_id, &instance_id, &connector_name(&desc.name), undo)?;
            self.checkpoint(OnboardStep::WireConnector)?;
            instance.connector_service_id = Some(d.descriptor.service_id.clone());
            instance.cert_id = Some(d.cert_id.clone());
            instance.connector_endpoint = Some(d.descriptor.endpoint.clone());
            if let Some(resources) = desc.initial_resources.as_deref().filter(|r| !r.is_empty()) {
                self.checkpoint(OnboardStep::RegisterResources)?;
                let connector = d.service.connector();
                self.ctx.latency.hop();
                let catalog = connector.create_catalog(&desc.name);
                for r in resources {
                    self.ctx.latency.hop();
                    connector.register_resource(&catalog.catalog_id, &r.title, &r.media_type, &r.payload)?;
                }
            }
            self.insert_deployment(lcm, d);
        } else {
            self.checkpoint(OnboardStep::RegisterAppService)?;
            let endpoint = Endpoint::new(&self.host, self.port, format!("/apps/{instance_id}"));
            self.ctx.latency.hop();
            let svc = self.registry.register_service(ServiceSpec {
                name: desc.name.clone(),
                kind: ServiceKind::MecService,
                endpoint: endpoint.clone(),
                owner_instance_id: instance_id.clone(),
                transform_id: None,
            })?;
            undo.push(Undo::Service(svc.service_id.clone()));
            instance.app_service_ids.push(svc.service_id);
            instance.app_endpoint = Some(endpoint.clone());
            if let Some(resources) = &desc.initial_resources {
                undo.push(Undo::AppData(endpoint.base_path.clone()));
                for r in resources {
                    self.app_data.put(&endpoint.base_path, &r.title, r.payload.clone().into());
                }
            }
        }

        lcm.instances.insert(instance_id, (instance.clone(), desc.demand));
        Ok(instance)
    }

    /// Places, certifies, starts and registers one connector service.
    fn deploy_connector(
        &self,
        lcm: &mut Lcm,
        participant_id: &ParticipantId,
        owner: &InstanceId,
        name: &str,
        undo: &mut Vec<Undo>,
    ) -> Result<Deployment, PlatformError> {
        let demand = self.settings.connector_demand;
        self.checkpoint(OnboardStep::PlaceConnector)?;
        let node_id = place(&demand, &mut lcm.nodes)?;
        undo.push(Undo::Node(node_id.clone(), demand));

        self.checkpoint(OnboardStep::AllocateCertificate)?;
        let connector_id: ConnectorId = self.connector_ids.next_id();
        self.ctx.latency.hop();
        let cert = self.identity.allocate_certificate(participant_id, &connector_id)?;
        undo.push(Undo::Cert(cert.cert_id.clone()));

        self.checkpoint(OnboardStep::StartConnector)?;
        let endpoint = Endpoint::new(&self.host, self.port, format!("/connectors/{connector_id}"));
        let connector = Connector::new(
            ConnectorIdentity {
                connector_id,
                participant_id: participant_id.clone(),
                endpoint: endpoint.clone(),
                key_fingerprint: cert.key_fingerprint.clone(),
            },
            self.ctx.clone(),
        );
        let service = ConnectorService::start(Arc::new(connector));
        self.connectors.mount(endpoint.clone(), service.clone());
        undo.push(Undo::Mount(endpoint.clone()));

        self.checkpoint(OnboardStep::RegisterConnector)?;
        self.ctx.latency.hop();
        let descriptor = self.registry.register_service(ServiceSpec {
            name: name.to_owned(),
            kind: ServiceKind::IdsConnector,
            endpoint,
            owner_instance_id: owner.clone(),
            transform_id: None,
        })?;
        undo.push(Undo::Service(descriptor.service_id.clone()));

        Ok(Deployment { descriptor, cert_id: cert.cert_id, node_id, demand, service })
    }

    fn insert_deployment(&self, lcm: &mut Lcm, d: Deployment) {
        let policy = &self.settings.autoscale;
        if policy.enabled {
            let set = ReplicaSet::new(d.descriptor.service_id.clone(), policy);
            lcm.scalers.insert(
                d.descriptor.service_id.clone(),
                ReplicaSetController::new(d.service.clone(), set, policy.per_transfer_cpu_cost),
            );
        }
        lcm.deployments.insert(d.descriptor.service_id.clone(), d);
    }

    fn rollback(&self, lcm: &mut Lcm, undo: Vec<Undo>) {
        for step in undo.into_iter().rev() {
            match step {
                Undo::Node(node_id, demand) => unplace(&demand, &node_id, &mut lcm.nodes),
                Undo::Cert(cert_id) => {
                    if let Err(e) = self.identity.release_certificate(&cert_id) {
                        log::error!("rollback: releasing {cert_id}: {e}");
                    }
                }
                Undo::Mount(endpoint) => {
                    if let Some(s) = self.connectors.unmount(&endpoint) {
                        s.stop();
                        s.connector().store().dispose();
                    }
                }
                Undo::Service(id) => {
                    if let Err(e) = self.registry.deregister_service(&id) {
                        log::error!("rollback: deregistering {id}: {e}");
                    }
                }
                Undo::AppData(base_path) => self.app_data.remove_all(&base_path),
            }
        }
    }

    fn teardown(&self, lcm: &mut Lcm, service_id: &ServiceId) {
        lcm.scalers.remove(service_id);
        if let Some(d) = lcm.deployments.remove(service_id) {
            self.rollback(
                lcm,
                vec![
                    Undo::Node(d.node_id, d.demand),
                    Undo::Cert(d.cert_id),
                    Undo::Mount(d.descriptor.endpoint),
                    Undo::Service(d.descriptor.service_id),
                ],
            );
        }
    }

    pub fn terminate_app(&self, instance_id: &InstanceId) -> Result<AppInstance, PlatformError> {
        let mut lcm = self.lcm.lock();
        let (instance, demand) = lcm
            .instances
            .get(instance_id)
            .cloned()
            .ok_or_else(|| PlatformError::NotFound(instance_id.to_string()))?;
        if instance.state == InstanceState::Terminated {
            return Err(PlatformError::AlreadyTerminated(instance_id.clone()));
        }
        // Everything the app registered, including services added after onboarding.
        let owned = self.registry.snapshot().into_iter().filter(|d| {
            &d.owner_instance_id == instance_id && Some(&d.service_id) != instance.connector_service_id.as_ref()
        });
        for d in owned {
            self.ctx.latency.hop();
            if let Err(e) = self.registry.deregister_service(&d.service_id) {
                log::warn!("terminate {instance_id}: {e}");
            }
        }
        self.app_data.remove_all(&format!("/apps/{instance_id}"));
        if let Some(service_id) = &instance.connector_service_id {
            self.ctx.latency.hop();
            self.teardown(&mut lcm, service_id);
        }
        unplace(&demand, &instance.node_id, &mut lcm.nodes);
        let entry = lcm.instances.get_mut(instance_id).expect("present");
        entry.0.state = InstanceState::Terminated;
        Ok(entry.0.clone())
    }

    /// Gives a pre-provisioned external participant a connector on this
    /// host, or returns the one it already has.
    pub fn external_connector(
        &self,
        participant_id: &ParticipantId,
        credential: &str,
    ) -> Result<ServiceDescriptor, PlatformError> {
        let known = self
            .settings
            .external_participants
            .iter()
            .any(|p| &p.participant_id == participant_id && p.credential == credential);
        if !known {
            return Err(PlatformError::Unauthorized(participant_id.clone()));
        }
        let owner = external_owner(participant_id);
        self.owned_connector(&owner, participant_id, &format!("{participant_id}-connector"))
    }

    /// Starts the platform's own connector unless it is already running.
    pub fn platform_connector(&self) -> Result<ServiceDescriptor, PlatformError> {
        let participant = ParticipantId::new(format!("platform@{}", self.host_id));
        self.owned_connector(&InstanceId::new(PLATFORM_OWNER), &participant, PLATFORM_CONNECTOR_NAME)
    }

    fn owned_connector(
        &self,
        owner: &InstanceId,
        participant_id: &ParticipantId,
        name: &str,
    ) -> Result<ServiceDescriptor, PlatformError> {
        let mut lcm = self.lcm.lock();
        if let Some(d) = lcm.deployments.values().find(|d| &d.descriptor.owner_instance_id == owner) {
            return Ok(d.descriptor.clone());
        }
        let mut undo = Vec::new();
        match self.deploy_connector(&mut lcm, participant_id, owner, name, &mut undo) {
            Ok(d) => {
                let desc = d.descriptor.clone();
                self.insert_deployment(&mut lcm, d);
                Ok(desc)
            }
            Err(e) => {
                self.rollback(&mut lcm, undo);
                Err(e)
            }
        }
    }

    /// Removes a connector that is not tied to an app instance.
    pub fn release_connector(&self, service_id: &ServiceId) -> Result<(), PlatformError> {
        let mut lcm = self.lcm.lock();
        let owned_by_app = lcm
            .instances
            .values()
            .any(|(i, _)| i.state == InstanceState::Running && i.connector_service_id.as_ref() == Some(service_id));
        if owned_by_app || !lcm.deployments.contains_key(service_id) {
            return Err(PlatformError::NotFound(service_id.to_string()));
        }
        self.teardown(&mut lcm, service_id);
        Ok(())
    }

    /// Publishes data through the platform connector; the catalog is created
    /// on first use.
    pub fn publish_platform_resource(
        &self,
        title: &str,
        media_type: &str,
        payload: &[u8],
    ) -> Result<DataResource, PlatformError> {
        let desc = self.platform_connector()?;
        let service = self.connector_service(&desc.service_id).ok_or_else(|| PlatformError::NotFound(desc.service_id.to_string()))?;
        let connector = service.connector();
        let catalog = connector.catalog_named("platform-services");
        Ok(connector.register_resource(&catalog.catalog_id, title, media_type, payload)?)
    }

    /// Instance placement as a JSON document, one of the platform's own
    /// data resources.
    pub fn instance_locations(&self) -> Vec<u8> {
        let view: BTreeMap<String, String> = self
            .list_instances()
            .into_iter()
            .filter(|i| i.state == InstanceState::Running)
            .map(|i| (i.instance_id.0, i.node_id.0))
            .collect();
        serde_json::to_vec(&view).expect("serializable")
    }

    pub fn replica_set(&self, service_id: &ServiceId) -> Result<ReplicaSetStatus, PlatformError> {
        let lcm = self.lcm.lock();
        let ctl = lcm.scalers.get(service_id).ok_or_else(|| PlatformError::NotFound(service_id.to_string()))?;
        Ok(ReplicaSetStatus {
            set: ctl.set().clone(),
            live_replicas: ctl.service().replica_count(),
            draining_replicas: ctl.service().draining().len(),
            last_samples: ctl.last_samples().to_vec(),
        })
    }

    pub fn scale(&self, service_id: &ServiceId, n: usize) -> Result<ReplicaSet, PlatformError> {
        let mut lcm = self.lcm.lock();
        let d = lcm.deployments.get(service_id).ok_or_else(|| PlatformError::NotFound(service_id.to_string()))?;
        let service = d.service.clone();
        let mut set = match lcm.scalers.get(service_id) {
            Some(ctl) => ctl.set().clone(),
            None => ReplicaSet::new(service_id.clone(), &self.settings.autoscale),
        };
        let out = apply_scale(&service, &mut set, n)?;
        if let Some(ctl) = lcm.scalers.get_mut(service_id) {
            *ctl = ReplicaSetController::new(service, out.clone(), self.settings.autoscale.per_transfer_cpu_cost);
        }
        Ok(out)
    }

    /// One decision period for every replica set on this host.
    pub fn autoscale_tick(&self, clock: &dyn Clock) -> Vec<ScaleDecision> {
        let now = clock.now();
        let mut lcm = self.lcm.lock();
        lcm.scalers.values_mut().map(|c| c.tick(now)).collect()
    }
}
