// SPDX-License-Identifier: Apache-2.0

//! Scenario runner and benchmarks.
//!
//! The harness drives hosts only through [`HostApi`], so the same scenarios
//! run against in-process hosts ([`inproc`]) and against hosts reached over
//! HTTP. All timing is taken here, with a monotonic clock.

pub mod inproc;
pub mod load;
pub mod report;
pub mod scenario;
pub mod sweep;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::connector::wire::{LocalRequest, LocalRequestOutcome};
use crate::connector::{ContractOffer, DataResource, SelfDescription, UsageRule, WireError};
use crate::ids::{HandleId, HostId, InstanceId, ParticipantId, ResourceId};
use crate::platform::{AppDescriptor, AppInstance};
use crate::registry::{Endpoint, QueryResult, ServiceDescriptor, ServiceQuery, ServiceSpec};

pub use inproc::{InProcessDeployment, LocalHostApi};
pub use load::{run_load_test, LoadReport, LoadTestConfig};
pub use report::{emit_report, ReportFormat};
pub use scenario::{run_scenario, CaseId, Mode, PhaseTimings, ScenarioContext, ScenarioOutcome, ScenarioSpec};
pub use sweep::{medians, run_size_sweep, MedianRow};

/// Error body shared with the HTTP interface.
pub type ApiError = WireError;

pub fn api_error(code: &str, message: impl Into<String>) -> ApiError {
    WireError { code: code.to_owned(), message: message.into(), verdict: None, reason: None, id: None }
}

/// What the harness can ask of one edge host.
pub trait HostApi: Send + Sync {
    fn host_id(&self) -> HostId;

    // Platform manager and registry.
    fn onboard(&self, desc: &AppDescriptor) -> Result<AppInstance, ApiError>;
    fn terminate(&self, instance_id: &InstanceId) -> Result<AppInstance, ApiError>;
    fn external_connector(&self, participant_id: &ParticipantId, credential: &str)
        -> Result<ServiceDescriptor, ApiError>;
    fn query_services(&self, query: &ServiceQuery) -> Result<QueryResult, ApiError>;
    fn register_service(&self, spec: &ServiceSpec) -> Result<ServiceDescriptor, ApiError>;

    // Local API of a connector on this host.
    fn local_description(&self, connector: &Endpoint) -> Result<SelfDescription, ApiError>;
    /// Registers a resource in the connector's catalog named `catalog`,
    /// creating the catalog if needed.
    fn stage_resource(
        &self,
        connector: &Endpoint,
        catalog: &str,
        title: &str,
        media_type: &str,
        payload: &[u8],
    ) -> Result<DataResource, ApiError>;
    fn attach_rules(
        &self,
        connector: &Endpoint,
        resource_id: &ResourceId,
        rules: &[UsageRule],
    ) -> Result<ContractOffer, ApiError>;
    fn local_request(&self, consumer: &Endpoint, req: &LocalRequest) -> Result<LocalRequestOutcome, ApiError>;
    fn read_artifact(&self, consumer: &Endpoint, handle_id: &HandleId) -> Result<Vec<u8>, ApiError>;

    /// Raw data from a plain app endpoint.
    fn fetch_app_data(&self, app: &Endpoint, title: &str) -> Result<Vec<u8>, ApiError>;
}

/// Deterministic pseudo-random payload.
pub fn payload(seed: u64, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut out);
    out
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub const MIB: usize = 1024 * 1024;
