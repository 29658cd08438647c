// SPDX-License-Identifier: Apache-2.0

mod common;

use parking_lot::Mutex;

use edgeds_core::clock;
use edgeds_core::config::DeploymentConfig;
use edgeds_core::connector::wire::{LocalRequest, LocalRequestOutcome};
use edgeds_core::connector::{ContractOffer, DataResource, RuleKind, SelfDescription, UsageRule};
use edgeds_core::harness::report::COLUMNS;
use edgeds_core::harness::{
    emit_report, run_scenario, run_size_sweep, ApiError, CaseId, HostApi, InProcessDeployment, Mode, ReportFormat,
    ScenarioContext, ScenarioSpec,
};
use edgeds_core::identity::CertStatus;
use edgeds_core::ids::{HandleId, HostId, InstanceId, ParticipantId, ResourceId};
use edgeds_core::platform::{AppDescriptor, AppInstance, InstanceState};
use edgeds_core::registry::{Endpoint, QueryResult, QueryScope, ServiceDescriptor, ServiceKind, ServiceQuery, ServiceSpec};

fn ctx<'a>(apis: Vec<&'a dyn HostApi>) -> ScenarioContext<'a> {
    ScenarioContext::new(apis, ParticipantId::new("external-fleet"), "fleet-credential".into())
}

fn boot(cfg: DeploymentConfig) -> InProcessDeployment {
    InProcessDeployment::boot(&cfg, clock::system()).unwrap()
}

#[test]
fn every_case_passes_and_cleans_up() {
    let dep = common::two_hosts(clock::system());
    let (a, b) = (dep.api(0), dep.api(1));
    let available: Vec<_> = dep.hosts().iter().map(|h| h.identity().count(CertStatus::Available)).collect();
    let c = ctx(vec![&a, &b]);
    for case in CaseId::ALL {
        for size in [0, 1, 70_001] {
            let out = run_scenario(&c, &ScenarioSpec::new(case, size));
            assert!(out.passed(), "{case} {size}: {:?}", out.error);
            assert_eq!(out.timings.verdict, "PASS");
            assert!(out.timings.prepare_s > 0.0 && out.timings.exchange_s > 0.0);
        }
    }
    for h in dep.hosts() {
        assert!(h.manager().list_instances().iter().all(|i| i.state == InstanceState::Terminated));
    }
    // External connectors persist across runs; app connectors do not.
    let after: Vec<_> = dep.hosts().iter().map(|h| h.identity().count(CertStatus::Available)).collect();
    assert_eq!(after[0], available[0] - 1);
    assert_eq!(after[1], available[1]);
}

#[test]
fn direct_mode_covers_app_to_app_only() {
    let dep = common::two_hosts(clock::system());
    let (a, b) = (dep.api(0), dep.api(1));
    let c = ctx(vec![&a, &b]);
    for case in CaseId::ALL {
        let spec = ScenarioSpec { mode: Mode::Direct, ..ScenarioSpec::new(case, 4096) };
        let out = run_scenario(&c, &spec);
        if matches!(case, CaseId::AppAppSameHost | CaseId::AppAppCrossHost) {
            assert!(out.passed(), "{case}: {:?}", out.error);
        } else {
            assert_eq!(out.error_code(), Some("UNSUPPORTED"));
        }
    }
}

#[test]
fn cross_host_without_peers_finds_nothing() {
    let mut cfg = DeploymentConfig::two_host_default();
    cfg.hosts[1].mp3_peers.clear();
    let dep = boot(cfg);
    let (a, b) = (dep.api(0), dep.api(1));
    let out = run_scenario(&ctx(vec![&a, &b]), &ScenarioSpec::new(CaseId::AppAppCrossHost, 100));
    assert_eq!(out.timings.verdict, "FAIL:DISCOVERY_EMPTY");
    // Same-host cases do not need peers.
    let out = run_scenario(&ctx(vec![&a, &b]), &ScenarioSpec::new(CaseId::AppAppSameHost, 100));
    assert!(out.passed());
}

#[test]
fn unreachable_peer_is_reported_as_a_warning() {
    let dep = common::two_hosts(clock::system());
    dep.host(0).set_up(false);
    let b = dep.api(1);
    let q = ServiceQuery { scope: QueryScope::Federated, ..ServiceQuery::kind(ServiceKind::IdsConnector) };
    let result = b.query_services(&q).unwrap();
    assert_eq!(result.warnings.len(), 1);
    assert!(result.services.iter().all(|d| d.host_id.as_str() == "host-b"));
}

#[test]
fn prohibited_offer_refuses_negotiation() {
    let dep = common::two_hosts(clock::system());
    let (a, b) = (dep.api(0), dep.api(1));
    let spec = ScenarioSpec {
        rules: vec![UsageRule::new(RuleKind::ProhibitAccess)],
        ..ScenarioSpec::new(CaseId::ExternalToApp, 512)
    };
    let out = run_scenario(&ctx(vec![&a, &b]), &spec);
    assert_eq!(out.timings.verdict, "FAIL:REFUSED_BY_POLICY");
    assert!(out.delivered_digest.is_none());
}

#[test]
fn terminated_provider_is_unreachable() {
    let dep = common::two_hosts(clock::system());
    let (a, b) = (dep.api(0), dep.api(1));
    let provider = a.onboard(&common::app_with("src", true, "d", vec![3; 99])).unwrap();
    let consumer = b.onboard(&common::app("dst", true)).unwrap();
    let endpoint = provider.connector_endpoint.clone().unwrap();
    let resource_id = a.local_description(&endpoint).unwrap().resources[0].resource_id.clone();
    a.attach_rules(&endpoint, &resource_id, &[UsageRule::new(RuleKind::ProvideAccess)]).unwrap();
    a.terminate(&provider.instance_id).unwrap();

    let req = LocalRequest { provider: endpoint, contract_id: None, agreement_id: None, resource_id: Some(resource_id), data_app_id: None };
    let err = b.local_request(consumer.connector_endpoint.as_ref().unwrap(), &req).unwrap_err();
    assert_eq!(err.code, "PROVIDER_UNREACHABLE");
}

#[test]
fn consumer_host_down_fails_cleanly() {
    let dep = common::two_hosts(clock::system());
    dep.host(1).set_up(false);
    let (a, b) = (dep.api(0), dep.api(1));
    let out = run_scenario(&ctx(vec![&a, &b]), &ScenarioSpec::new(CaseId::AppAppCrossHost, 64));
    assert_eq!(out.timings.verdict, "FAIL:HOST_UNREACHABLE");
    assert!(dep.host(0).manager().list_instances().iter().all(|i| i.state == InstanceState::Terminated));
}

#[test]
fn one_host_cannot_run_cross_host_cases() {
    let dep = common::one_host(8, true, clock::system());
    let a = dep.api(0);
    let out = run_scenario(&ctx(vec![&a]), &ScenarioSpec::new(CaseId::PlatformAppCrossHost, 64));
    assert_eq!(out.error_code(), Some("MISSING_HOST"));
}

#[test]
fn count_limited_offer_still_serves_once() {
    let dep = common::two_hosts(clock::system());
    let (a, b) = (dep.api(0), dep.api(1));
    let spec = ScenarioSpec {
        rules: vec![UsageRule::new(RuleKind::NTimesUsage { max_count: 1 })],
        ..ScenarioSpec::new(CaseId::PlatformAppCrossHost, 2048)
    };
    assert!(run_scenario(&ctx(vec![&a, &b]), &spec).passed());
}

/// Records the sequence of calls made through it.
struct Recording<'a> {
    inner: &'a dyn HostApi,
    calls: Mutex<Vec<String>>,
}

impl Recording<'_> {
    fn log(&self, what: &str) {
        self.calls.lock().push(what.to_owned());
    }
}

impl HostApi for Recording<'_> {
    fn host_id(&self) -> HostId {
        self.inner.host_id()
    }
    fn onboard(&self, desc: &AppDescriptor) -> Result<AppInstance, ApiError> {
        self.log(&format!("onboard {} {}", desc.name, desc.data_spaces_enabled));
        self.inner.onboard(desc)
    }
    fn terminate(&self, id: &InstanceId) -> Result<AppInstance, ApiError> {
        self.log("terminate");
        self.inner.terminate(id)
    }
    fn external_connector(&self, p: &ParticipantId, c: &str) -> Result<ServiceDescriptor, ApiError> {
        self.log("external_connector");
        self.inner.external_connector(p, c)
    }
    fn query_services(&self, q: &ServiceQuery) -> Result<QueryResult, ApiError> {
        self.log(&format!("query {:?}", q.scope));
        self.inner.query_services(q)
    }
    fn register_service(&self, s: &ServiceSpec) -> Result<ServiceDescriptor, ApiError> {
        self.log(&format!("register {}", s.name));
        self.inner.register_service(s)
    }
    fn local_description(&self, e: &Endpoint) -> Result<SelfDescription, ApiError> {
        self.log("local_description");
        self.inner.local_description(e)
    }
    fn stage_resource(&self, e: &Endpoint, cat: &str, title: &str, media: &str, p: &[u8]) -> Result<DataResource, ApiError> {
        self.log(&format!("stage {cat} {title} {}", p.len()));
        self.inner.stage_resource(e, cat, title, media, p)
    }
    fn attach_rules(&self, e: &Endpoint, r: &ResourceId, rules: &[UsageRule]) -> Result<ContractOffer, ApiError> {
        self.log(&format!("attach {}", rules.len()));
        self.inner.attach_rules(e, r, rules)
    }
    fn local_request(&self, e: &Endpoint, req: &LocalRequest) -> Result<LocalRequestOutcome, ApiError> {
        self.log("local_request");
        self.inner.local_request(e, req)
    }
    fn read_artifact(&self, e: &Endpoint, h: &HandleId) -> Result<Vec<u8>, ApiError> {
        self.log("read_artifact");
        self.inner.read_artifact(e, h)
    }
    fn fetch_app_data(&self, e: &Endpoint, title: &str) -> Result<Vec<u8>, ApiError> {
        self.log(&format!("fetch {title}"));
        self.inner.fetch_app_data(e, title)
    }
}

#[test]
fn runs_are_deterministic_given_the_spec() {
    let record = |case: CaseId, mode: Mode| {
        let dep = common::two_hosts(clock::system());
        let (a, b) = (dep.api(0), dep.api(1));
        let (ra, rb) = (Recording { inner: &a, calls: Mutex::default() }, Recording { inner: &b, calls: Mutex::default() });
        let spec = ScenarioSpec { mode, seed: 42, ..ScenarioSpec::new(case, 3000) };
        let out = run_scenario(&ctx(vec![&ra, &rb]), &spec);
        assert!(out.passed(), "{case}: {:?}", out.error);
        (out.expected_digest, out.delivered_digest, ra.calls.into_inner(), rb.calls.into_inner())
    };
    for case in CaseId::ALL {
        assert_eq!(record(case, Mode::Ids), record(case, Mode::Ids), "{case}");
    }
    let direct = record(CaseId::AppAppCrossHost, Mode::Direct);
    assert_eq!(direct, record(CaseId::AppAppCrossHost, Mode::Direct));
    assert!(direct.3.iter().any(|c| c.starts_with("fetch")));
}

#[test]
fn sweep_rows_round_trip_through_csv() {
    let dep = common::two_hosts(clock::system());
    let (a, b) = (dep.api(0), dep.api(1));
    let rows = run_size_sweep(&ctx(vec![&a, &b]), &[1, 2], &[Mode::Ids, Mode::Direct], 3, 9).unwrap();
    assert_eq!(rows.len(), 12);
    assert_eq!(rows.iter().filter(|r| r.mode == Mode::Direct && r.size_mb == 2.0).count(), 3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    emit_report(&rows, ReportFormat::Csv, &path).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), COLUMNS);
    let back: Vec<edgeds_core::harness::PhaseTimings> = reader.deserialize().collect::<Result<_, _>>().unwrap();
    assert_eq!(back, rows);
}

#[test]
fn sweep_needs_three_repeats() {
    let dep = common::one_host(4, true, clock::system());
    let a = dep.api(0);
    let err = run_size_sweep(&ctx(vec![&a]), &[1], &[Mode::Ids], 2, 1).unwrap_err();
    assert_eq!(err.code, "INVALID_ARGUMENT");
}
