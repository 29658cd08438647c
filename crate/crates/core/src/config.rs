// SPDX-License-Identifier: Apache-2.0

//! Deployment configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! latency_us = 200
//!
//! [autoscale]
//! enabled = true
//! min = 1
//! max = 16
//! target_cpu_pct = 70
//! per_transfer_cpu_cost = 25
//! period_ms = 1000
//!
//! [[hosts]]
//! host_id = "host-a"
//! address = "127.0.0.1:7101"
//! pool_size = 16
//! platform_connector = true
//! mp3_peers = ["127.0.0.1:7102"]
//! nodes = [{ node_id = "a-1", cpu_millicores = 4000, memory_mb = 8192 }]
//! external_participants = [{ participant_id = "fleet-ops", credential = "s3cret" }]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoscaler::AutoscalePolicy;
use crate::ids::{HostId, NodeId, ParticipantId};
use crate::identity::DEFAULT_TOKEN_VALIDITY_SECS;
use crate::platform::Demand;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: NodeId,
    pub cpu_millicores: u32,
    pub memory_mb: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalParticipant {
    pub participant_id: ParticipantId,
    pub credential: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostConfig {
    pub host_id: HostId,
    /// `host:port`; also the issuer id of the host's identity service.
    pub address: String,
    /// Certificates pre-provisioned in the pool. Zero leaves the pool
    /// uninitialized, so every allocation fails with POOL_EXHAUSTED.
    pub pool_size: usize,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub mp3_peers: Vec<String>,
    #[serde(default)]
    pub platform_connector: bool,
    #[serde(default)]
    pub external_participants: Vec<ExternalParticipant>,
}

impl HostConfig {
    /// Splits the address into host and port.
    pub fn host_port(&self) -> Result<(String, u16), ConfigError> {
        split_address(&self.address)
    }
}

pub fn split_address(address: &str) -> Result<(String, u16), ConfigError> {
    let (host, port) = address
        .rsplit_once(':')
        .ok_or_else(|| ConfigError::Invalid(format!("address {address:?} is not host:port")))?;
    let port: u16 = port
        .parse()
        .ok()
        .filter(|p| *p != 0)
        .ok_or_else(|| ConfigError::Invalid(format!("bad port in {address:?}")))?;
    if host.is_empty() {
        return Err(ConfigError::Invalid(format!("empty host in {address:?}")));
    }
    Ok((host.to_owned(), port))
}

fn default_seed() -> u64 {
    1
}

fn default_token_validity() -> i64 {
    DEFAULT_TOKEN_VALIDITY_SECS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Per-hop delay between services in the same process, in microseconds.
    #[serde(default)]
    pub latency_us: u64,
    #[serde(default = "default_token_validity")]
    pub token_validity_s: i64,
    #[serde(default)]
    pub connector_demand: Demand,
    #[serde(default)]
    pub autoscale: AutoscalePolicy,
    pub hosts: Vec<HostConfig>,
}

impl DeploymentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.hosts.is_empty() {
            return Err(ConfigError::Invalid("no hosts declared".into()));
        }
        if self.token_validity_s <= 0 {
            return Err(ConfigError::Invalid("token_validity_s must be positive".into()));
        }
        if !self.connector_demand.is_positive() {
            return Err(ConfigError::Invalid("connector_demand must be positive".into()));
        }
        self.autoscale.validate().map_err(ConfigError::Invalid)?;
        let mut ids = std::collections::HashSet::new();
        let mut addrs = std::collections::HashSet::new();
        for h in &self.hosts {
            h.host_port()?;
            if !ids.insert(&h.host_id) || !addrs.insert(&h.address) {
                return Err(ConfigError::Invalid(format!("duplicate host {} / {}", h.host_id, h.address)));
            }
            if h.nodes.is_empty() {
                return Err(ConfigError::Invalid(format!("host {} has no nodes", h.host_id)));
            }
            let mut nodes = std::collections::HashSet::new();
            for n in &h.nodes {
                if !nodes.insert(&n.node_id) {
                    return Err(ConfigError::Invalid(format!("duplicate node {}", n.node_id)));
                }
            }
            if h.mp3_peers.contains(&h.address) {
                return Err(ConfigError::Invalid(format!("host {} lists itself as a peer", h.host_id)));
            }
        }
        Ok(())
    }

    pub fn host(&self, host_id: &str) -> Option<&HostConfig> {
        self.hosts.iter().find(|h| h.host_id.as_str() == host_id)
    }

    /// A two-host deployment with mutual peering, used by tests and the CLI
    /// when no config file is given.
    pub fn two_host_default() -> Self {
        let host = |id: &str, addr: &str, peer: &str| HostConfig {
            host_id: HostId::new(id),
            address: addr.into(),
            pool_size: 32,
            nodes: (1..=4)
                .map(|i| NodeConfig { node_id: NodeId::new(format!("{id}-n{i}")), cpu_millicores: 8000, memory_mb: 16384 })
                .collect(),
            mp3_peers: vec![peer.into()],
            platform_connector: true,
            external_participants: vec![ExternalParticipant {
                participant_id: ParticipantId::new("external-fleet"),
                credential: "fleet-credential".into(),
            }],
        };
        Self {
            seed: 1,
            latency_us: 0,
            token_validity_s: DEFAULT_TOKEN_VALIDITY_SECS,
            connector_demand: Demand::default(),
            autoscale: AutoscalePolicy::default(),
            hosts: vec![
                host("host-a", "127.0.0.1:7101", "127.0.0.1:7102"),
                host("host-b", "127.0.0.1:7102", "127.0.0.1:7101"),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let text = r#"
            seed = 7
            latency_us = 200

            [autoscale]
            enabled = true
            min = 1
            max = 16
            target_cpu_pct = 70
            per_transfer_cpu_cost = 25
            period_ms = 1000

            [[hosts]]
            host_id = "host-a"
            address = "127.0.0.1:7101"
            pool_size = 16
            platform_connector = true
            mp3_peers = ["127.0.0.1:7102"]
            nodes = [{ node_id = "a-1", cpu_millicores = 4000, memory_mb = 8192 }]
            external_participants = [{ participant_id = "fleet-ops", credential = "s3cret" }]
        "#;
        let cfg = DeploymentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert!(cfg.autoscale.enabled);
        assert_eq!(cfg.connector_demand, Demand { cpu_millicores: 250, memory_mb: 256 });
        assert_eq!(cfg.hosts[0].host_port().unwrap(), ("127.0.0.1".into(), 7101));
        assert_eq!(cfg.hosts[0].external_participants[0].participant_id.as_str(), "fleet-ops");
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = DeploymentConfig::two_host_default();
        cfg.hosts[1].address = cfg.hosts[0].address.clone();
        assert!(cfg.validate().is_err());

        let mut cfg = DeploymentConfig::two_host_default();
        cfg.hosts[0].address = "nohostport".into();
        assert!(cfg.validate().is_err());

        let mut cfg = DeploymentConfig::two_host_default();
        cfg.autoscale.min = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = DeploymentConfig::two_host_default();
        cfg.hosts[0].nodes.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = DeploymentConfig::two_host_default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(DeploymentConfig::from_toml(&text).unwrap(), cfg);
    }
}
