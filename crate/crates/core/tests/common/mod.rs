// SPDX-License-Identifier: Apache-2.0

#![allow(dead_code)]

use std::sync::Arc;

use edgeds_core::clock::{Clock, ManualClock};
use edgeds_core::config::DeploymentConfig;
use edgeds_core::connector::wire::ArtifactRequest;
use edgeds_core::connector::{ConnectorService, RuleKind, UsageRule};
use edgeds_core::harness::InProcessDeployment;
use edgeds_core::host::MecHost;
use edgeds_core::ids::{AppId, ParticipantId};
use edgeds_core::platform::{AppDescriptor, AppInstance, Demand, InitialResource};

pub fn app(name: &str, enabled: bool) -> AppDescriptor {
    AppDescriptor {
        app_id: AppId::new(name),
        name: name.into(),
        participant_id: ParticipantId::new(format!("{name}-owner")),
        demand: Demand::new(200, 128),
        data_spaces_enabled: enabled,
        initial_resources: None,
    }
}

pub fn app_with(name: &str, enabled: bool, title: &str, payload: Vec<u8>) -> AppDescriptor {
    AppDescriptor {
        initial_resources: Some(vec![InitialResource {
            title: title.into(),
            media_type: "application/octet-stream".into(),
            payload,
        }]),
        ..app(name, enabled)
    }
}

pub fn two_hosts(clock: Arc<dyn Clock>) -> InProcessDeployment {
    InProcessDeployment::boot(&DeploymentConfig::two_host_default(), clock).expect("boot")
}

pub fn one_host(pool_size: usize, platform_connector: bool, clock: Arc<dyn Clock>) -> InProcessDeployment {
    let mut cfg = DeploymentConfig::two_host_default();
    cfg.hosts.truncate(1);
    cfg.hosts[0].mp3_peers.clear();
    cfg.hosts[0].pool_size = pool_size;
    cfg.hosts[0].platform_connector = platform_connector;
    InProcessDeployment::boot(&cfg, clock).expect("boot")
}

pub fn manual_clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::at_epoch())
}

pub fn service(host: &MecHost, inst: &AppInstance) -> Arc<ConnectorService> {
    host.connectors().get(inst.connector_endpoint.as_ref().expect("wired")).expect("mounted")
}

/// A provider with one resource under `rules` and a consumer holding an
/// agreement on it, both on `host`.
pub struct Pair {
    pub provider: Arc<ConnectorService>,
    pub consumer: Arc<ConnectorService>,
    pub provider_app: AppInstance,
    pub consumer_app: AppInstance,
    pub request: ArtifactRequest,
    pub payload: Vec<u8>,
}

pub fn pair(provider_host: &MecHost, consumer_host: &MecHost, tag: &str, rules: Vec<RuleKind>) -> Pair {
    let payload = edgeds_core::harness::payload(7, 4096);
    let provider_app = provider_host.manager().onboard_app(&app_with(&format!("p-{tag}"), true, "data", payload.clone())).unwrap();
    let consumer_app = consumer_host.manager().onboard_app(&app(&format!("c-{tag}"), true)).unwrap();
    let provider = service(provider_host, &provider_app);
    let consumer = service(consumer_host, &consumer_app);
    let resource_id = provider.connector().local_description().resources[0].resource_id.clone();
    let offer = provider
        .connector()
        .attach_rules(&resource_id, rules.into_iter().map(UsageRule::new).collect())
        .unwrap();
    let agreement = consumer.connector().negotiate_contract(provider.connector().endpoint(), &offer.contract_id).unwrap();
    let request = ArtifactRequest { agreement_id: agreement.agreement_id, data_app_id: None, correlation_id: None };
    Pair { provider, consumer, provider_app, consumer_app, request, payload }
}

/// Node allocations and registry contents as bytes.
pub fn host_snapshot(host: &MecHost) -> (Vec<u8>, Vec<u8>) {
    (
        serde_json::to_vec(&host.manager().nodes()).unwrap(),
        serde_json::to_vec(&host.registry().snapshot()).unwrap(),
    )
}
