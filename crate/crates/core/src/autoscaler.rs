// SPDX-License-Identifier: Apache-2.0

//! Horizontal scaling of connector replicas.
//!
//! CPU is synthetic: a replica carrying `n` transfers runs at
//! `min(100, n * per_transfer_cpu_cost)` percent. The controller aims for
//! `target_cpu_pct` per replica:
//!
//! ```text
//! desired = clamp(ceil(total_active * cost / target), min, max)
//! ```
//!
//! Scale-up is immediate; scale-down moves by at most one replica per
//! decision.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::connector::ConnectorService;
use crate::ids::ServiceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoscalePolicy {
    pub enabled: bool,
    pub min: usize,
    pub max: usize,
    pub target_cpu_pct: u32,
    pub per_transfer_cpu_cost: u32,
    pub period_ms: u64,
}

impl Default for AutoscalePolicy {
    fn default() -> Self {
        Self { enabled: false, min: 1, max: 16, target_cpu_pct: 70, per_transfer_cpu_cost: 25, period_ms: 1000 }
    }
}

impl AutoscalePolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.min < 1 || self.min > self.max {
            return Err(format!("need 1 <= min <= max, got [{}, {}]", self.min, self.max));
        }
        if self.target_cpu_pct == 0 || self.target_cpu_pct > 100 {
            return Err("target_cpu_pct must be in (0, 100]".into());
        }
        if self.period_ms == 0 {
            return Err("period_ms must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaSet {
    pub connector_service_id: ServiceId,
    pub replicas: usize,
    pub min_replicas: usize,
    pub max_replicas: usize,
    pub target_cpu_pct: u32,
}

impl ReplicaSet {
    pub fn new(connector_service_id: ServiceId, policy: &AutoscalePolicy) -> Self {
        Self {
            connector_service_id,
            replicas: policy.min.max(1),
            min_replicas: policy.min,
            max_replicas: policy.max,
            target_cpu_pct: policy.target_cpu_pct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSample {
    pub replica_index: usize,
    pub active_transfers: usize,
    pub cpu_pct: f64,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScaleError {
    #[error("replica count {n} outside [{min}, {max}]")]
    OutOfBounds { n: usize, min: usize, max: usize },
}

impl ScaleError {
    pub fn code(&self) -> &'static str {
        "OUT_OF_BOUNDS"
    }
}

pub fn cpu_pct(active_transfers: usize, per_transfer_cpu_cost: u32) -> f64 {
    (active_transfers as f64 * per_transfer_cpu_cost as f64).min(100.0)
}

/// One sample per live replica at the same instant.
pub fn sample_load(service: &ConnectorService, per_transfer_cpu_cost: u32, now: Timestamp) -> Vec<LoadSample> {
    service
        .replicas()
        .iter()
        .map(|r| {
            let active = r.active();
            LoadSample {
                replica_index: r.index(),
                active_transfers: active,
                cpu_pct: cpu_pct(active, per_transfer_cpu_cost),
                timestamp: now,
            }
        })
        .collect()
}

pub fn desired_replicas(samples: &[LoadSample], set: &ReplicaSet, per_transfer_cpu_cost: u32) -> usize {
    let total: u64 = samples.iter().map(|s| s.active_transfers as u64).sum();
    desired_for_load(total, set, per_transfer_cpu_cost)
}

fn desired_for_load(total_active: u64, set: &ReplicaSet, per_transfer_cpu_cost: u32) -> usize {
    let demand = total_active * per_transfer_cpu_cost as u64;
    let target = set.target_cpu_pct.max(1) as u64;
    let raw = demand.div_ceil(target) as usize;
    let clamped = raw.clamp(set.min_replicas, set.max_replicas);
    if clamped < set.replicas {
        clamped.max(set.replicas - 1).max(set.min_replicas)
    } else {
        clamped
    }
}

/// Resizes the service and reaps any replica that has finished draining.
pub fn apply_scale(service: &ConnectorService, set: &mut ReplicaSet, n: usize) -> Result<ReplicaSet, ScaleError> {
    if n < set.min_replicas || n > set.max_replicas {
        return Err(ScaleError::OutOfBounds { n, min: set.min_replicas, max: set.max_replicas });
    }
    service.resize(n);
    service.reap();
    set.replicas = n;
    Ok(set.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleDecision {
    pub at: Timestamp,
    pub from: usize,
    pub to: usize,
    pub total_active: usize,
}

/// The periodic control loop of one replica set.
pub struct ReplicaSetController {
    service: Arc<ConnectorService>,
    set: ReplicaSet,
    per_transfer_cpu_cost: u32,
    last_samples: Vec<LoadSample>,
}

impl ReplicaSetController {
    pub fn new(service: Arc<ConnectorService>, set: ReplicaSet, per_transfer_cpu_cost: u32) -> Self {
        let mut set = set;
        service.resize(set.replicas.max(1));
        set.replicas = service.replica_count();
        Self { service, set, per_transfer_cpu_cost, last_samples: Vec::new() }
    }

    pub fn set(&self) -> &ReplicaSet {
        &self.set
    }

    pub fn last_samples(&self) -> &[LoadSample] {
        &self.last_samples
    }

    pub fn service(&self) -> &Arc<ConnectorService> {
        &self.service
    }

    /// One decision period: sample, decide, apply.
    pub fn tick(&mut self, now: Timestamp) -> ScaleDecision {
        // Reap first so replicas that drained since the last period disappear.
        self.service.reap();
        let samples = sample_load(&self.service, self.per_transfer_cpu_cost, now);
        let total_active = samples.iter().map(|s| s.active_transfers).sum();
        let from = self.set.replicas;
        let to = desired_replicas(&samples, &self.set, self.per_transfer_cpu_cost);
        apply_scale(&self.service, &mut self.set, to).expect("desired count is clamped to bounds");
        self.last_samples = samples;
        ScaleDecision { at: now, from, to, total_active }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub period: usize,
    pub offered: u64,
    pub replicas: usize,
    pub mean_cpu_pct: f64,
}

/// Replays the control law against a per-period offered load, with the
/// load spread as evenly as possible over the replicas. Each point records the
/// replica count chosen at the end of that period and the CPU seen during it.
pub fn simulate_control_loop(
    offered: &[u64],
    policy: &AutoscalePolicy,
    per_transfer_cpu_cost: u32,
) -> Vec<TrajectoryPoint> {
    let mut set = ReplicaSet::new(ServiceId::default(), policy);
    offered
        .iter()
        .enumerate()
        .map(|(period, &load)| {
            let n = set.replicas as u64;
            let (base, extra) = (load / n, load % n);
            let total_cpu: f64 = (0..n)
                .map(|i| cpu_pct((base + u64::from(i < extra)) as usize, per_transfer_cpu_cost))
                .sum();
            let mean_cpu_pct = total_cpu / n as f64;
            set.replicas = desired_for_load(load, &set, per_transfer_cpu_cost);
            TrajectoryPoint { period, offered: load, replicas: set.replicas, mean_cpu_pct }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::DateTime;
    use proptest::prelude::*;

    fn t0() -> Timestamp {
        DateTime::from_timestamp(0, 0).unwrap()
    }

    fn set(replicas: usize, min: usize, max: usize, target: u32) -> ReplicaSet {
        ReplicaSet {
            connector_service_id: ServiceId::new("svc"),
            replicas,
            min_replicas: min,
            max_replicas: max,
            target_cpu_pct: target,
        }
    }

    fn samples(active: &[usize]) -> Vec<LoadSample> {
        active
            .iter()
            .enumerate()
            .map(|(i, &a)| LoadSample { replica_index: i, active_transfers: a, cpu_pct: cpu_pct(a, 25), timestamp: t0() })
            .collect()
    }

    #[test]
    fn cpu_model() {
        assert_eq!(cpu_pct(0, 25), 0.0);
        assert_eq!(cpu_pct(2, 25), 50.0);
        assert_eq!(cpu_pct(8, 25), 100.0);
    }

    #[test]
    fn desired_examples() {
        // ceil(8 * 25 / 70) = ceil(2.86) = 3
        assert_eq!(desired_replicas(&samples(&[8]), &set(1, 1, 16, 70), 25), 3);
        assert_eq!(desired_replicas(&samples(&[0]), &set(1, 1, 16, 70), 25), 1);
        // ceil(2500 / 70) = 36, clamped to 16
        assert_eq!(desired_replicas(&samples(&[100]), &set(1, 1, 16, 70), 25), 16);
        // ceil(32 * 25 / 70) = ceil(11.43) = 12
        assert_eq!(desired_replicas(&samples(&[20, 12]), &set(2, 1, 16, 70), 25), 12);
    }

    #[test]
    fn ramp_down_is_damped() {
        assert_eq!(desired_replicas(&samples(&[0, 0, 0, 0, 0]), &set(5, 1, 16, 70), 25), 4);
        assert_eq!(desired_replicas(&samples(&[0, 0]), &set(2, 2, 16, 70), 25), 2);
    }

    #[test]
    fn policy_validation() {
        assert!(AutoscalePolicy::default().validate().is_ok());
        assert!(AutoscalePolicy { min: 0, ..Default::default() }.validate().is_err());
        assert!(AutoscalePolicy { min: 5, max: 4, ..Default::default() }.validate().is_err());
        assert!(AutoscalePolicy { target_cpu_pct: 101, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn simulated_loop_reaches_twelve_for_thirty_two() {
        let traj = simulate_control_loop(&[32; 6], &AutoscalePolicy::default(), 25);
        assert_eq!(traj[0].replicas, 12);
        assert!(traj.iter().all(|p| p.replicas == 12));
        // Once at 12 replicas, 32 transfers run 2-3 per replica.
        assert!(traj[1].mean_cpu_pct <= 70.0 + 25.0);
    }

    proptest! {
        /// Constant load converges within three periods to the clamped
        /// target and stays there.
        #[test]
        fn converges_to_fixed_point(load in 0u64..400, min in 1usize..4, span in 0usize..20, start in 0u64..400) {
            let policy = AutoscalePolicy { min, max: min + span, ..Default::default() };
            let expected = ((load * 25).div_ceil(70) as usize).clamp(policy.min, policy.max);
            // Warm up at a different load first, then hold `load`.
            let mut offered = vec![start; 3];
            offered.extend(std::iter::repeat_n(load, 3 + policy.max));
            let traj = simulate_control_loop(&offered, &policy, 25);
            let before = traj[2].replicas;
            // Scale-up lands immediately; scale-down needs one period per step.
            for (k, p) in traj[3..].iter().enumerate() {
                let want = if expected >= before { expected } else { expected.max(before - (k + 1).min(before)) };
                prop_assert_eq!(p.replicas, want, "period {}", k);
            }
            prop_assert_eq!(traj.last().unwrap().replicas, expected);
            let last = traj.last().unwrap();
            prop_assert!(last.mean_cpu_pct <= policy.target_cpu_pct as f64 + 25.0 || last.replicas == policy.max);
        }

        #[test]
        fn desired_stays_within_bounds(active in proptest::collection::vec(0usize..50, 1..8), cur in 1usize..10) {
            let s = set(cur.clamp(2, 9), 2, 9, 70);
            let d = desired_replicas(&samples(&active), &s, 25);
            prop_assert!((2..=9).contains(&d));
            prop_assert!(d + 1 >= s.replicas);
        }
    }
}
