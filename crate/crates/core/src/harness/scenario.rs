// SPDX-License-Identifier: Apache-2.0

//! The six exchange topologies, timed in three phases.
//!
//! A case `X_TO_Y` or `X_Y_*` moves data from an X-side provider to a
//! Y-side consumer. Providers always live on the first host; cross-host
//! consumers live on the second and find the provider through federated
//! discovery.
//!
//! | phase     | IDS mode                                     | DIRECT mode                      |
//! |-----------|----------------------------------------------|----------------------------------|
//! | prepare   | provider and consumer connectors, data staged | both apps instantiated, data staged |
//! | configure | offer created on the provider connector      | data endpoint registered          |
//! | exchange  | discover, describe, negotiate, fetch, read    | discover, copy                   |

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{api_error, digest, payload, ApiError, HostApi, MIB};
use crate::connector::wire::LocalRequest;
use crate::connector::{RuleKind, UsageRule};
use crate::ids::{AppId, InstanceId, ParticipantId};
use crate::platform::{connector_name, AppDescriptor, Demand, InitialResource, PLATFORM_CONNECTOR_NAME, PLATFORM_OWNER};
use crate::registry::{Endpoint, QueryScope, ServiceDescriptor, ServiceKind, ServiceQuery, ServiceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CaseId {
    AppAppSameHost,
    AppAppCrossHost,
    PlatformAppSameHost,
    PlatformAppCrossHost,
    ExternalToPlatform,
    ExternalToApp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Party {
    App,
    Platform,
    External,
}

impl CaseId {
    pub const ALL: [CaseId; 6] = [
        Self::AppAppSameHost,
        Self::AppAppCrossHost,
        Self::PlatformAppSameHost,
        Self::PlatformAppCrossHost,
        Self::ExternalToPlatform,
        Self::ExternalToApp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::AppAppSameHost => "APP_APP_SAME_HOST",
            Self::AppAppCrossHost => "APP_APP_CROSS_HOST",
            Self::PlatformAppSameHost => "PLATFORM_APP_SAME_HOST",
            Self::PlatformAppCrossHost => "PLATFORM_APP_CROSS_HOST",
            Self::ExternalToPlatform => "EXTERNAL_TO_PLATFORM",
            Self::ExternalToApp => "EXTERNAL_TO_APP",
        }
    }

    pub fn cross_host(&self) -> bool {
        matches!(self, Self::AppAppCrossHost | Self::PlatformAppCrossHost)
    }

    fn parties(&self) -> (Party, Party) {
        match self {
            Self::AppAppSameHost | Self::AppAppCrossHost => (Party::App, Party::App),
            Self::PlatformAppSameHost | Self::PlatformAppCrossHost => (Party::Platform, Party::App),
            Self::ExternalToPlatform => (Party::External, Party::Platform),
            Self::ExternalToApp => (Party::External, Party::App),
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown case {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Ids,
    Direct,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ids => "IDS",
            Self::Direct => "DIRECT",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ids" => Ok(Self::Ids),
            "direct" => Ok(Self::Direct),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub case_id: CaseId,
    pub payload_size_bytes: usize,
    pub rules: Vec<UsageRule>,
    pub mode: Mode,
    pub run_index: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(case_id: CaseId, payload_size_bytes: usize) -> Self {
        Self {
            case_id,
            payload_size_bytes,
            rules: vec![UsageRule::new(RuleKind::ProvideAccess)],
            mode: Mode::Ids,
            run_index: 0,
            seed: 1,
        }
    }
}

/// One report row. Field names are the report columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub scenario: String,
    pub mode: Mode,
    pub size_mb: f64,
    pub run_index: usize,
    pub prepare_s: f64,
    pub configure_s: f64,
    pub exchange_s: f64,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub timings: PhaseTimings,
    pub prepare_steps: Vec<StepTiming>,
    pub error: Option<ApiError>,
    pub expected_digest: String,
    pub delivered_digest: Option<String>,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.timings.verdict == "PASS"
    }

    pub fn error_code(&self) -> Option<&str> {
        self.error.as_ref().map(|e| e.code.as_str())
    }
}

/// Hosts and credentials a scenario runs against. Providers use `hosts[0]`,
/// cross-host consumers `hosts[1]`.
pub struct ScenarioContext<'a> {
    pub hosts: Vec<&'a dyn HostApi>,
    pub external_participant: ParticipantId,
    pub external_credential: String,
    /// Terminate onboarded apps after the run.
    pub cleanup: bool,
    nonce: AtomicU64,
}

impl<'a> ScenarioContext<'a> {
    pub fn new(hosts: Vec<&'a dyn HostApi>, external_participant: ParticipantId, external_credential: String) -> Self {
        Self { hosts, external_participant, external_credential, cleanup: true, nonce: AtomicU64::new(0) }
    }
}

/// A party's connector or app endpoint as set up in the prepare phase.
struct Side {
    endpoint: Endpoint,
    /// Name the endpoint is registered under.
    name: String,
}

struct Phases {
    prepare: f64,
    configure: f64,
    exchange: f64,
    steps: Vec<StepTiming>,
    delivered: Option<Vec<u8>>,
    instances: Vec<(usize, InstanceId)>,
}

pub fn run_scenario(ctx: &ScenarioContext<'_>, spec: &ScenarioSpec) -> ScenarioOutcome {
    let data = payload(spec.seed ^ spec.payload_size_bytes as u64, spec.payload_size_bytes);
    let expected_digest = digest(&data);
    let tag = format!("{}-{}", spec.run_index, ctx.nonce.fetch_add(1, Ordering::Relaxed));
    let mut ph = Phases { prepare: 0.0, configure: 0.0, exchange: 0.0, steps: Vec::new(), delivered: None, instances: Vec::new() };

    let result = match spec.mode {
        Mode::Ids => run_ids(ctx, spec, &tag, data, &mut ph),
        Mode::Direct => run_direct(ctx, spec, &tag, data, &mut ph),
    };

    if ctx.cleanup {
        for (host, id) in ph.instances.iter().rev() {
            if let Err(e) = ctx.hosts[*host].terminate(id) {
                log::warn!("cleanup of {id} failed: {}", e.message);
            }
        }
    }

    let delivered_digest = ph.delivered.as_deref().map(digest);
    let error = match result {
        Err(e) => Some(e),
        Ok(()) if delivered_digest.as_deref() != Some(expected_digest.as_str()) => {
            Some(api_error("DIGEST_MISMATCH", "delivered bytes differ from registered bytes"))
        }
        Ok(()) => None,
    };
    let verdict = match &error {
        None => "PASS".to_owned(),
        Some(e) => format!("FAIL:{}", e.code),
    };
    ScenarioOutcome {
        timings: PhaseTimings {
            scenario: spec.case_id.as_str().to_owned(),
            mode: spec.mode,
            size_mb: spec.payload_size_bytes as f64 / MIB as f64,
            run_index: spec.run_index,
            prepare_s: ph.prepare,
            configure_s: ph.configure,
            exchange_s: ph.exchange,
            verdict,
        },
        prepare_steps: ph.steps,
        error,
        expected_digest,
        delivered_digest,
    }
}

fn hosts<'a>(ctx: &ScenarioContext<'a>, spec: &ScenarioSpec) -> Result<(usize, usize), ApiError> {
    let consumer = usize::from(spec.case_id.cross_host());
    if ctx.hosts.len() <= consumer {
        return Err(api_error("MISSING_HOST", format!("{} needs two hosts", spec.case_id)));
    }
    Ok((0, consumer))
}

fn app_descriptor(name: &str, enabled: bool, resource: Option<InitialResource>) -> AppDescriptor {
    AppDescriptor {
        app_id: AppId::new(name),
        name: name.to_owned(),
        participant_id: ParticipantId::new(format!("{name}-owner")),
        demand: Demand::new(200, 128),
        data_spaces_enabled: enabled,
        initial_resources: resource.map(|r| vec![r]),
    }
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let t0 = Instant::now();
    let out = f();
    *slot += t0.elapsed().as_secs_f64();
    out
}

fn find_connector(api: &dyn HostApi, name: &str, owner: Option<&str>) -> Result<Endpoint, ApiError> {
    let q = ServiceQuery::kind(ServiceKind::IdsConnector).named(name);
    api.query_services(&q)?
        .services
        .into_iter()
        .find(|d| d.name == name && owner.is_none_or(|o| d.owner_instance_id.as_str() == o))
        .map(|d| d.endpoint)
        .ok_or_else(|| api_error("NOT_FOUND", format!("no connector {name} on {}", api.host_id())))
}

/// Provider or consumer endpoint for one party on host `h`.
fn ids_side(
    ctx: &ScenarioContext<'_>,
    ph: &mut Phases,
    h: usize,
    party: Party,
    name: &str,
    staged: Option<(&str, Vec<u8>)>,
) -> Result<Side, ApiError> {
    let api = ctx.hosts[h];
    match party {
        Party::App => {
            let resource = staged.map(|(title, payload)| InitialResource {
                title: title.to_owned(),
                media_type: "application/octet-stream".into(),
                payload,
            });
            let desc = app_descriptor(name, true, resource);
            let inst = api.onboard(&desc)?;
            ph.instances.push((h, inst.instance_id.clone()));
            let endpoint = inst
                .connector_endpoint
                .ok_or_else(|| api_error("NOT_WIRED", format!("{name} has no connector")))?;
            Ok(Side { endpoint, name: connector_name(name) })
        }
        Party::Platform | Party::External => {
            let (endpoint, cname) = if party == Party::Platform {
                (find_connector(api, PLATFORM_CONNECTOR_NAME, Some(PLATFORM_OWNER))?, PLATFORM_CONNECTOR_NAME.to_owned())
            } else {
                let d = api.external_connector(&ctx.external_participant, &ctx.external_credential)?;
                (d.endpoint, d.name)
            };
            if let Some((title, payload)) = staged {
                api.stage_resource(&endpoint, "shared", title, "application/octet-stream", &payload)?;
            }
            Ok(Side { endpoint, name: cname })
        }
    }
}

fn discover(api: &dyn HostApi, kind: ServiceKind, name: &str, provider_host: &str, federated: bool) -> Result<ServiceDescriptor, ApiError> {
    let mut q = ServiceQuery::kind(kind).named(name);
    if federated {
        q.scope = QueryScope::Federated;
    }
    let result = api.query_services(&q)?;
    result
        .services
        .into_iter()
        .find(|d| d.name == name && d.host_id.as_str() == provider_host)
        .ok_or_else(|| {
            let warnings: Vec<_> = result.warnings.iter().map(|w| format!("{}: {}", w.peer, w.message)).collect();
            api_error("DISCOVERY_EMPTY", format!("no provider {name} visible from {} {warnings:?}", api.host_id()))
        })
}

fn run_ids(
    ctx: &ScenarioContext<'_>,
    spec: &ScenarioSpec,
    tag: &str,
    data: Vec<u8>,
    ph: &mut Phases,
) -> Result<(), ApiError> {
    let (p, c) = hosts(ctx, spec)?;
    let (provider_party, consumer_party) = spec.case_id.parties();
    let title = format!("payload-{tag}");

    let t0 = Instant::now();
    let provider = ids_side(ctx, ph, p, provider_party, &format!("src-{tag}"), Some((&title, data)))?;
    let t1 = Instant::now();
    ph.steps.push(StepTiming { step: "provider".into(), seconds: (t1 - t0).as_secs_f64() });
    let consumer = ids_side(ctx, ph, c, consumer_party, &format!("dst-{tag}"), None);
    ph.steps.push(StepTiming { step: "consumer".into(), seconds: t1.elapsed().as_secs_f64() });
    ph.prepare = t0.elapsed().as_secs_f64();
    let consumer = consumer?;

    let provider_api = ctx.hosts[p];
    let resource_id = timed(&mut ph.configure, || -> Result<_, ApiError> {
        let desc = provider_api.local_description(&provider.endpoint)?;
        let resource = desc
            .resources
            .into_iter()
            .find(|r| r.title == title)
            .ok_or_else(|| api_error("UNKNOWN_RESOURCE", format!("{title} not staged")))?;
        provider_api.attach_rules(&provider.endpoint, &resource.resource_id, &spec.rules)?;
        Ok(resource.resource_id)
    })?;

    let consumer_api = ctx.hosts[c];
    let provider_host = provider_api.host_id();
    let delivered = timed(&mut ph.exchange, || -> Result<Vec<u8>, ApiError> {
        let found = discover(consumer_api, ServiceKind::IdsConnector, &provider.name, provider_host.as_str(), spec.case_id.cross_host())?;
        let out = consumer_api.local_request(
            &consumer.endpoint,
            &LocalRequest {
                provider: found.endpoint,
                contract_id: None,
                agreement_id: None,
                resource_id: Some(resource_id),
                data_app_id: None,
            },
        )?;
        consumer_api.read_artifact(&consumer.endpoint, &out.handle_id)
    })?;
    ph.delivered = Some(delivered);
    Ok(())
}

fn run_direct(
    ctx: &ScenarioContext<'_>,
    spec: &ScenarioSpec,
    tag: &str,
    data: Vec<u8>,
    ph: &mut Phases,
) -> Result<(), ApiError> {
    if spec.case_id.parties() != (Party::App, Party::App) {
        return Err(api_error("UNSUPPORTED", format!("{} has no direct variant", spec.case_id)));
    }
    let (p, c) = hosts(ctx, spec)?;
    let title = format!("payload-{tag}");
    let src = format!("src-{tag}");
    let resource = InitialResource { title: title.clone(), media_type: "application/octet-stream".into(), payload: data };
    let src_desc = app_descriptor(&src, false, Some(resource));
    let dst_desc = app_descriptor(&format!("dst-{tag}"), false, None);

    let t0 = Instant::now();
    let provider = ctx.hosts[p].onboard(&src_desc);
    let t1 = Instant::now();
    ph.steps.push(StepTiming { step: "provider".into(), seconds: (t1 - t0).as_secs_f64() });
    let provider = provider?;
    ph.instances.push((p, provider.instance_id.clone()));
    let consumer = ctx.hosts[c].onboard(&dst_desc);
    ph.steps.push(StepTiming { step: "consumer".into(), seconds: t1.elapsed().as_secs_f64() });
    ph.prepare = t0.elapsed().as_secs_f64();
    ph.instances.push((c, consumer?.instance_id));

    let data_name = format!("{src}-data");
    let endpoint = provider.app_endpoint.clone().ok_or_else(|| api_error("NOT_WIRED", "plain app without endpoint"))?;
    timed(&mut ph.configure, || {
        ctx.hosts[p].register_service(&ServiceSpec {
            name: data_name.clone(),
            kind: ServiceKind::MecService,
            endpoint,
            owner_instance_id: provider.instance_id.clone(),
            transform_id: None,
        })
    })?;

    let consumer_api = ctx.hosts[c];
    let provider_host = ctx.hosts[p].host_id();
    let delivered = timed(&mut ph.exchange, || -> Result<Vec<u8>, ApiError> {
        let found = discover(consumer_api, ServiceKind::MecService, &data_name, provider_host.as_str(), spec.case_id.cross_host())?;
        consumer_api.fetch_app_data(&found.endpoint, &title)
    })?;
    ph.delivered = Some(delivered);
    Ok(())
}
