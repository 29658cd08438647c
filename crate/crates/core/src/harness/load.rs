// SPDX-License-Identifier: Apache-2.0

//! Closed-loop load against one provider connector, with and without
//! autoscaling.
//!
//! Every request is a real artifact fetch routed to a real replica, and the
//! replica counts it as in flight until it completes. Completion times come
//! from a virtual-time processor-sharing model of the synthetic CPU: a
//! replica with `n` transfers needs `n * cost` percent, and when that exceeds
//! 100 every transfer on it slows down by the same factor. Virtual time makes
//! the comparison independent of the machine running it.

use std::sync::Arc;

use chrono::Duration as ChronoDuration;
use serde::{Deserialize, Serialize};

use super::{api_error, payload, ApiError};
use crate::autoscaler::{sample_load, AutoscalePolicy, ReplicaSet, ReplicaSetController};
use crate::clock::{Clock, ManualClock};
use crate::config::DeploymentConfig;
use crate::connector::wire::ArtifactRequest;
use crate::connector::{ConnectorService, Replica, RuleKind, TransferGuard, UsageRule};
use crate::harness::inproc::InProcessDeployment;
use crate::ids::{AppId, ParticipantId};
use crate::platform::{AppDescriptor, Demand, InitialResource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadTestConfig {
    pub concurrency: usize,
    pub requests_per_client: usize,
    pub payload_size: usize,
    pub autoscale: bool,
    pub policy: AutoscalePolicy,
    /// Service time of one transfer on an unloaded replica, seconds.
    pub base_work_s: f64,
    /// Simulation step, seconds.
    pub dt_s: f64,
    pub seed: u64,
}

impl Default for LoadTestConfig {
    fn default() -> Self {
        Self {
            concurrency: 32,
            requests_per_client: 40,
            payload_size: 64 * 1024,
            autoscale: true,
            policy: AutoscalePolicy { enabled: true, ..AutoscalePolicy::default() },
            base_work_s: 0.25,
            dt_s: 0.05,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub concurrency: usize,
    pub autoscale: bool,
    pub requests: usize,
    pub p50_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
    pub duration_s: f64,
    /// Replica count chosen at the end of each decision period.
    pub replica_trajectory: Vec<usize>,
    /// Mean per-replica synthetic CPU sampled at each decision.
    pub cpu_trajectory: Vec<f64>,
    /// Transfers in flight at each decision.
    pub active_trajectory: Vec<usize>,
    /// Every fetch the provider actually served.
    pub served: u64,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank - 1]
}

struct Flight {
    client: usize,
    replica: Arc<Replica>,
    _guard: TransferGuard,
    remaining: f64,
    started: f64,
}

pub fn run_load_test(cfg: &LoadTestConfig) -> Result<LoadReport, ApiError> {
    if cfg.concurrency == 0 || cfg.requests_per_client == 0 {
        return Err(api_error("INVALID_ARGUMENT", "concurrency and request count must be positive"));
    }
    cfg.policy.validate().map_err(|m| api_error("INVALID_ARGUMENT", m))?;

    let mut deployment = DeploymentConfig::two_host_default();
    deployment.hosts.truncate(1);
    deployment.hosts[0].mp3_peers.clear();
    deployment.seed = cfg.seed;
    let clock = Arc::new(ManualClock::at_epoch());
    let dep = InProcessDeployment::boot(&deployment, clock.clone()).map_err(|e| api_error("BOOT_FAILED", e.to_string()))?;
    let host = dep.host(0);

    let app = |name: &str, resource: Option<InitialResource>| AppDescriptor {
        app_id: AppId::new(name),
        name: name.into(),
        participant_id: ParticipantId::new(format!("{name}-owner")),
        demand: Demand::new(200, 128),
        data_spaces_enabled: true,
        initial_resources: resource.map(|r| vec![r]),
    };
    let err = |e: crate::platform::PlatformError| api_error(e.code(), e.to_string());
    let src = host
        .manager()
        .onboard_app(&app(
            "load-src",
            Some(InitialResource {
                title: "load".into(),
                media_type: "application/octet-stream".into(),
                payload: payload(cfg.seed, cfg.payload_size),
            }),
        ))
        .map_err(err)?;
    let dst = host.manager().onboard_app(&app("load-dst", None)).map_err(err)?;
    let endpoint_of = |i: &crate::platform::AppInstance| i.connector_endpoint.clone().expect("enabled app is wired");
    let provider: Arc<ConnectorService> = host.connectors().get(&endpoint_of(&src)).expect("mounted");
    let consumer = host.connectors().get(&endpoint_of(&dst)).expect("mounted");

    let resource_id = provider.connector().local_description().resources[0].resource_id.clone();
    let offer = provider
        .connector()
        .attach_rules(&resource_id, vec![UsageRule::new(RuleKind::ProvideAccess)])
        .map_err(|e| e.to_wire())?;
    let agreement = consumer
        .connector()
        .negotiate_contract(provider.connector().endpoint(), &offer.contract_id)
        .map_err(|e| e.to_wire())?;
    let req = ArtifactRequest { agreement_id: agreement.agreement_id, data_app_id: None, correlation_id: None };

    let mut controller = cfg.autoscale.then(|| {
        let set = ReplicaSet::new(Default::default(), &cfg.policy);
        ReplicaSetController::new(provider.clone(), set, cfg.policy.per_transfer_cpu_cost)
    });
    let cost = cfg.policy.per_transfer_cpu_cost as f64;
    let period_s = cfg.policy.period_ms as f64 / 1000.0;

    let start = |client: usize, t: f64| -> Result<Flight, ApiError> {
        let dat = consumer.connector().current_dat().map_err(|e| e.to_wire())?;
        let replica = provider.route();
        provider.artifact_via(&replica, &dat.to_header(), &req).map_err(|e| e.to_wire())?;
        let guard = replica.begin();
        Ok(Flight { client, replica, _guard: guard, remaining: cfg.base_work_s, started: t })
    };

    let mut issued = vec![1usize; cfg.concurrency];
    let mut flights = (0..cfg.concurrency).map(|c| start(c, 0.0)).collect::<Result<Vec<_>, _>>()?;
    let mut latencies = Vec::with_capacity(cfg.concurrency * cfg.requests_per_client);
    let (mut replica_trajectory, mut cpu_trajectory, mut active_trajectory) = (Vec::new(), Vec::new(), Vec::new());
    let mut t = 0.0;
    let mut step: u64 = 0;
    let steps_per_period = (period_s / cfg.dt_s).round().max(1.0) as u64;

    while !flights.is_empty() {
        for f in flights.iter_mut() {
            let demand = f.replica.active() as f64 * cost;
            let rate = if demand > 100.0 { 100.0 / demand } else { 1.0 };
            f.remaining -= rate * cfg.dt_s;
        }
        step += 1;
        t = step as f64 * cfg.dt_s;
        clock.advance(ChronoDuration::microseconds((cfg.dt_s * 1e6).round() as i64));

        let (done, running): (Vec<_>, Vec<_>) = flights.drain(..).partition(|f| f.remaining <= 1e-9);
        flights = running;
        for f in done {
            latencies.push(t - f.started);
            let client = f.client;
            drop(f);
            if issued[client] < cfg.requests_per_client {
                issued[client] += 1;
                flights.push(start(client, t)?);
            }
        }

        if step.is_multiple_of(steps_per_period) {
            let samples = match controller.as_mut() {
                Some(c) => {
                    c.tick(clock.now());
                    c.last_samples().to_vec()
                }
                None => sample_load(&provider, cfg.policy.per_transfer_cpu_cost, clock.now()),
            };
            let active: usize = samples.iter().map(|s| s.active_transfers).sum();
            let mean_cpu = samples.iter().map(|s| s.cpu_pct).sum::<f64>() / samples.len() as f64;
            replica_trajectory.push(provider.replica_count());
            cpu_trajectory.push(mean_cpu);
            active_trajectory.push(active);
        }
    }

    Ok(LoadReport {
        concurrency: cfg.concurrency,
        autoscale: cfg.autoscale,
        requests: latencies.len(),
        p50_s: percentile(&latencies, 50.0),
        p95_s: percentile(&latencies, 95.0),
        max_s: latencies.iter().copied().fold(0.0, f64::max),
        duration_s: t,
        replica_trajectory,
        cpu_trajectory,
        active_trajectory,
        served: provider.connector().audit_log(Some(crate::connector::AuditEventKind::ArtifactServed), None).len() as u64,
    })
}
