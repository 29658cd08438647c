// SPDX-License-Identifier: Apache-2.0

//! One edge host: identity service, service registry, platform manager and
//! the connector services it runs.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::time::Duration;

use chrono::Duration as ChronoDuration;

use crate::clock::Clock;
use crate::config::{ConfigError, DeploymentConfig, HostConfig};
use crate::connector::wire::ConnectorTransport;
use crate::connector::ConnectorContext;
use crate::identity::{FederatedVerifier, IdentityService, IssuerDirectory};
use crate::ids::HostId;
use crate::net::Latency;
use crate::platform::{AppDataStore, ConnectorDirectory, ManagerSettings, PlatformError, PlatformManager};
use crate::registry::{PeerRegistryClient, Registry};

/// How a host reaches everything outside itself.
#[derive(Clone)]
pub struct Wiring {
    pub transport: Arc<dyn ConnectorTransport>,
    pub peers: Arc<dyn PeerRegistryClient>,
    pub issuers: Arc<dyn IssuerDirectory>,
    pub clock: Arc<dyn Clock>,
    pub latency: Latency,
}

#[derive(Debug, thiserror::Error)]
pub enum BootError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown host {0}")]
    UnknownHost(String),
    #[error("starting platform connector: {0}")]
    Platform(#[from] PlatformError),
}

pub struct MecHost {
    config: HostConfig,
    clock: Arc<dyn Clock>,
    identity: Arc<IdentityService>,
    registry: Arc<Registry>,
    connectors: Arc<ConnectorDirectory>,
    app_data: Arc<AppDataStore>,
    manager: PlatformManager,
    up: AtomicBool,
}

impl MecHost {
    pub fn boot(deployment: &DeploymentConfig, host_id: &str, wiring: Wiring) -> Result<Arc<Self>, BootError> {
        deployment.validate()?;
        let config = deployment.host(host_id).ok_or_else(|| BootError::UnknownHost(host_id.into()))?.clone();
        let host_port = config.host_port()?;
        let clock = wiring.clock.clone();

        let key = IdentityService::derive_key(deployment.seed, &config.address);
        let identity = Arc::new(
            IdentityService::new(config.address.clone(), key, clock.clone())
                .with_validity(ChronoDuration::seconds(deployment.token_validity_s)),
        );
        if config.pool_size > 0 {
            identity.init_pool(config.pool_size).expect("fresh pool with positive size");
        }

        let registry = Arc::new(
            Registry::new(config.host_id.clone(), clock.clone()).with_peers(config.mp3_peers.clone(), wiring.peers.clone()),
        );
        let verifier = Arc::new(FederatedVerifier::new(identity.clone(), config.mp3_peers.clone(), wiring.issuers.clone()));
        let ctx = ConnectorContext {
            issuer: identity.clone(),
            verifier,
            transport: wiring.transport.clone(),
            data_apps: registry.clone(),
            clock: clock.clone(),
            latency: wiring.latency,
        };
        let connectors = Arc::new(ConnectorDirectory::default());
        let app_data = Arc::new(AppDataStore::default());
        let manager = PlatformManager::new(
            config.host_id.clone(),
            host_port,
            &config.nodes,
            identity.clone(),
            registry.clone(),
            connectors.clone(),
            app_data.clone(),
            ctx,
            ManagerSettings {
                connector_demand: deployment.connector_demand,
                autoscale: deployment.autoscale,
                external_participants: config.external_participants.clone(),
            },
        );
        if config.platform_connector {
            manager.platform_connector()?;
            let locations = manager.instance_locations();
            manager.publish_platform_resource("instance-locations", "application/json", &locations)?;
        }
        log::info!("host {} up at {}", config.host_id, config.address);
        Ok(Arc::new(Self {
            config,
            clock,
            identity,
            registry,
            connectors,
            app_data,
            manager,
            up: AtomicBool::new(true),
        }))
    }

    pub fn host_id(&self) -> &HostId {
        &self.config.host_id
    }

    pub fn address(&self) -> &str {
        &self.config.address
    }

    pub fn config(&self) -> &HostConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn identity(&self) -> &Arc<IdentityService> {
        &self.identity
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn connectors(&self) -> &ConnectorDirectory {
        &self.connectors
    }

    pub fn app_data(&self) -> &AppDataStore {
        &self.app_data
    }

    pub fn manager(&self) -> &PlatformManager {
        &self.manager
    }

    pub fn is_up(&self) -> bool {
        self.up.load(Ordering::SeqCst)
    }

    /// Takes the host off the network (or back on) without dropping state.
    pub fn set_up(&self, up: bool) {
        self.up.store(up, Ordering::SeqCst);
    }

    /// Runs the autoscaling loop on a background thread until the host is
    /// dropped. Does nothing when autoscaling is disabled.
    pub fn spawn_autoscaler(self: &Arc<Self>) -> Option<std::thread::JoinHandle<()>> {
        let policy = self.manager.settings().autoscale;
        if !policy.enabled {
            return None;
        }
        let weak: Weak<Self> = Arc::downgrade(self);
        Some(std::thread::spawn(move || loop {
            std::thread::sleep(Duration::from_millis(policy.period_ms));
            let Some(host) = weak.upgrade() else { break };
            for d in host.manager.autoscale_tick(host.clock.as_ref()) {
                if d.from != d.to {
                    log::info!("autoscale on {}: {} -> {} replicas ({} active)", host.host_id(), d.from, d.to, d.total_active);
                }
            }
        }))
    }
}
