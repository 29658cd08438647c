// SPDX-License-Identifier: Apache-2.0

//! A connector exposed as a platform service, possibly with several replicas.
//!
//! Replicas share the connector and its store; they only differ in the
//! transfers they carry. Traffic is spread round-robin at the front. A
//! replica removed by scale-down stops receiving traffic at once and is
//! dropped by [`ConnectorService::reap`] when its last transfer ends.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use super::wire::{ArtifactRequest, ArtifactResponse, NegotiateRequest};
use super::{Connector, ConnectorError, ContractAgreement, SelfDescription};

#[derive(Debug)]
pub struct Replica {
    index: usize,
    active: AtomicUsize,
    served: AtomicU64,
    draining: AtomicBool,
}

impl Replica {
    fn new(index: usize) -> Self {
        Self { index, active: AtomicUsize::new(0), served: AtomicU64::new(0), draining: AtomicBool::new(false) }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Transfers currently in flight on this replica.
    pub fn active(&self) -> usize {
        self.active.load(Ordering::SeqCst)
    }

    /// Requests this replica has completed successfully.
    pub fn served(&self) -> u64 {
        self.served.load(Ordering::Relaxed)
    }

    pub fn is_draining(&self) -> bool {
        self.draining.load(Ordering::SeqCst)
    }

    /// Marks a transfer in flight until the guard drops.
    pub fn begin(self: &Arc<Self>) -> TransferGuard {
        self.active.fetch_add(1, Ordering::SeqCst);
        TransferGuard { replica: self.clone() }
    }
}

#[derive(Debug)]
pub struct TransferGuard {
    replica: Arc<Replica>,
}

impl TransferGuard {
    pub fn replica(&self) -> &Arc<Replica> {
        &self.replica
    }
}

impl Drop for TransferGuard {
    fn drop(&mut self) {
        self.replica.active.fetch_sub(1, Ordering::SeqCst);
    }
}

pub struct ConnectorService {
    connector: Arc<Connector>,
    live: RwLock<Vec<Arc<Replica>>>,
    draining: Mutex<Vec<Arc<Replica>>>,
    rr: AtomicUsize,
    next_index: AtomicUsize,
    running: AtomicBool,
}

impl ConnectorService {
    /// Starts the service with a single replica.
    pub fn start(connector: Arc<Connector>) -> Arc<Self> {
        Arc::new(Self {
            connector,
            live: RwLock::new(vec![Arc::new(Replica::new(0))]),
            draining: Mutex::new(Vec::new()),
            rr: AtomicUsize::new(0),
            next_index: AtomicUsize::new(1),
            running: AtomicBool::new(true),
        })
    }

    pub fn connector(&self) -> &Arc<Connector> {
        &self.connector
    }

    pub fn is_running(&self) -> bool {
        self.running.load(Ordering::SeqCst)
    }

    /// Stops serving; subsequent inbound calls see the provider as unreachable.
    pub fn stop(&self) {
        self.running.store(false, Ordering::SeqCst);
    }

    pub fn replica_count(&self) -> usize {
        self.live.read().len()
    }

    pub fn replicas(&self) -> Vec<Arc<Replica>> {
        self.live.read().clone()
    }

    pub fn draining(&self) -> Vec<Arc<Replica>> {
        self.draining.lock().clone()
    }

    /// Next live replica in round-robin order.
    pub fn route(&self) -> Arc<Replica> {
        let live = self.live.read();
        let i = self.rr.fetch_add(1, Ordering::Relaxed) % live.len();
        live[i].clone()
    }

    /// Sets the live replica count. Removed replicas drain; see [`Self::reap`].
    pub fn resize(&self, n: usize) {
        assert!(n >= 1, "a connector service keeps at least one replica");
        let mut live = self.live.write();
        while live.len() < n {
            let index = self.next_index.fetch_add(1, Ordering::Relaxed);
            live.push(Arc::new(Replica::new(index)));
        }
        if live.len() > n {
            let removed = live.split_off(n);
            for r in &removed {
                r.draining.store(true, Ordering::SeqCst);
            }
            self.draining.lock().extend(removed);
        }
    }

    /// Drops draining replicas with no transfer left; returns their indices.
    pub fn reap(&self) -> Vec<usize> {
        let mut draining = self.draining.lock();
        let (idle, busy): (Vec<_>, Vec<_>) = draining.drain(..).partition(|r| r.active() == 0);
        *draining = busy;
        idle.into_iter().map(|r| r.index).collect()
    }

    fn guard(&self) -> Result<(), ConnectorError> {
        if self.is_running() {
            Ok(())
        } else {
            Err(ConnectorError::ProviderUnreachable(self.connector.endpoint().url()))
        }
    }

    pub fn description(&self, dat_header: &str) -> Result<SelfDescription, ConnectorError> {
        self.guard()?;
        let replica = self.route();
        let _inflight = replica.begin();
        let caller = self.connector.authenticate(dat_header)?;
        let out = self.connector.self_description(&caller);
        replica.served.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }

    pub fn negotiate(&self, dat_header: &str, req: &NegotiateRequest) -> Result<ContractAgreement, ConnectorError> {
        self.guard()?;
        let replica = self.route();
        let _inflight = replica.begin();
        let caller = self.connector.authenticate(dat_header)?;
        let out = self.connector.serve_negotiation(&caller, req)?;
        replica.served.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }

    pub fn artifact(&self, dat_header: &str, req: &ArtifactRequest) -> Result<ArtifactResponse, ConnectorError> {
        let replica = self.route();
        self.artifact_via(&replica, dat_header, req)
    }

    /// Serves an artifact request on a specific replica.
    pub fn artifact_via(
        &self,
        replica: &Arc<Replica>,
        dat_header: &str,
        req: &ArtifactRequest,
    ) -> Result<ArtifactResponse, ConnectorError> {
        self.guard()?;
        let _inflight = replica.begin();
        let caller = self.connector.authenticate(dat_header)?;
        let out = self.connector.serve_artifact(&caller, req)?;
        replica.served.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }
}
