// SPDX-License-Identifier: Apache-2.0

//! Hosts sharing one process, joined by a [`LocalNetwork`].

use std::sync::Arc;

use super::{api_error, ApiError, HostApi};
use crate::clock::Clock;
use crate::config::DeploymentConfig;
use crate::connector::wire::{LocalRequest, LocalRequestOutcome};
use crate::connector::{Connector, ConnectorError, ContractOffer, DataResource, SelfDescription, UsageRule};
use crate::host::{BootError, MecHost};
use crate::ids::{HandleId, HostId, InstanceId, ParticipantId, ResourceId};
use crate::net::{Latency, LocalNetwork};
use crate::platform::{AppDescriptor, AppInstance, PlatformError};
use crate::registry::{Endpoint, QueryResult, ServiceDescriptor, ServiceQuery, ServiceSpec};

pub struct InProcessDeployment {
    net: Arc<LocalNetwork>,
    hosts: Vec<Arc<MecHost>>,
}

impl InProcessDeployment {
    pub fn boot(cfg: &DeploymentConfig, clock: Arc<dyn Clock>) -> Result<Self, BootError> {
        let net = LocalNetwork::new(Latency::from_micros(cfg.latency_us));
        let hosts = cfg
            .hosts
            .iter()
            .map(|h| {
                let host = MecHost::boot(cfg, h.host_id.as_str(), net.wiring(clock.clone()))?;
                net.attach(&host);
                Ok(host)
            })
            .collect::<Result<Vec<_>, BootError>>()?;
        Ok(Self { net, hosts })
    }

    pub fn net(&self) -> &Arc<LocalNetwork> {
        &self.net
    }

    pub fn hosts(&self) -> &[Arc<MecHost>] {
        &self.hosts
    }

    pub fn host(&self, i: usize) -> &Arc<MecHost> {
        &self.hosts[i]
    }

    pub fn api(&self, i: usize) -> LocalHostApi {
        LocalHostApi { host: self.hosts[i].clone(), net: self.net.clone() }
    }
}

/// [`HostApi`] over direct calls. Each call pays one network hop.
#[derive(Clone)]
pub struct LocalHostApi {
    host: Arc<MecHost>,
    net: Arc<LocalNetwork>,
}

impl LocalHostApi {
    pub fn host(&self) -> &Arc<MecHost> {
        &self.host
    }

    fn enter(&self) -> Result<(), ApiError> {
        self.net.latency().hop();
        if self.host.is_up() {
            Ok(())
        } else {
            Err(api_error("HOST_UNREACHABLE", format!("{} is down", self.host.address())))
        }
    }

    fn connector(&self, endpoint: &Endpoint) -> Result<Arc<crate::connector::ConnectorService>, ApiError> {
        self.enter()?;
        self.host
            .connectors()
            .get(endpoint)
            .ok_or_else(|| api_error("NOT_FOUND", format!("no connector at {}", endpoint.url())))
    }

    fn with_connector<T>(
        &self,
        endpoint: &Endpoint,
        f: impl FnOnce(&Connector) -> Result<T, ConnectorError>,
    ) -> Result<T, ApiError> {
        let svc = self.connector(endpoint)?;
        f(svc.connector()).map_err(|e| e.to_wire())
    }
}

fn platform_err(e: PlatformError) -> ApiError {
    e.to_wire()
}

impl HostApi for LocalHostApi {
    fn host_id(&self) -> HostId {
        self.host.host_id().clone()
    }

    fn onboard(&self, desc: &AppDescriptor) -> Result<AppInstance, ApiError> {
        self.enter()?;
        self.host.manager().onboard_app(desc).map_err(platform_err)
    }

    fn terminate(&self, instance_id: &InstanceId) -> Result<AppInstance, ApiError> {
        self.enter()?;
        self.host.manager().terminate_app(instance_id).map_err(platform_err)
    }

    fn external_connector(
        &self,
        participant_id: &ParticipantId,
        credential: &str,
    ) -> Result<ServiceDescriptor, ApiError> {
        self.enter()?;
        self.host.manager().external_connector(participant_id, credential).map_err(platform_err)
    }

    fn query_services(&self, query: &ServiceQuery) -> Result<QueryResult, ApiError> {
        self.enter()?;
        Ok(self.host.registry().query_services(query))
    }

    fn register_service(&self, spec: &ServiceSpec) -> Result<ServiceDescriptor, ApiError> {
        self.enter()?;
        self.host.registry().register_service(spec.clone()).map_err(|e| api_error(e.code(), e.to_string()))
    }

    fn local_description(&self, connector: &Endpoint) -> Result<SelfDescription, ApiError> {
        self.with_connector(connector, |c| Ok(c.local_description()))
    }

    fn stage_resource(
        &self,
        connector: &Endpoint,
        catalog: &str,
        title: &str,
        media_type: &str,
        payload: &[u8],
    ) -> Result<DataResource, ApiError> {
        self.with_connector(connector, |c| c.register_resource(&c.catalog_named(catalog).catalog_id, title, media_type, payload))
    }

    fn attach_rules(
        &self,
        connector: &Endpoint,
        resource_id: &ResourceId,
        rules: &[UsageRule],
    ) -> Result<ContractOffer, ApiError> {
        self.with_connector(connector, |c| c.attach_rules(resource_id, rules.to_vec()))
    }

    fn local_request(&self, consumer: &Endpoint, req: &LocalRequest) -> Result<LocalRequestOutcome, ApiError> {
        self.with_connector(consumer, |c| c.request(req))
    }

    fn read_artifact(&self, consumer: &Endpoint, handle_id: &HandleId) -> Result<Vec<u8>, ApiError> {
        self.with_connector(consumer, |c| c.read_artifact(handle_id))
    }

    fn fetch_app_data(&self, app: &Endpoint, title: &str) -> Result<Vec<u8>, ApiError> {
        self.enter()?;
        self.net.fetch_app_data(app, title).map_err(|m| api_error("NOT_FOUND", m))
    }
}
