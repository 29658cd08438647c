// SPDX-License-Identifier: Apache-2.0

//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes and returns plain strings and numbers; structured
//! results are JSON text.

use chrono::{DateTime, Duration};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use edgeds_core::autoscaler::{simulate_control_loop, AutoscalePolicy};
use edgeds_core::clock::Timestamp;
use edgeds_core::config::NodeConfig;
use edgeds_core::connector::{evaluate_rules, Decision, RuleKind, UsageRule};
use edgeds_core::ids::{HostId, NodeId};
use edgeds_core::platform::{place, Demand, EdgeNode};

/// Origin of the demo's relative clock.
const T0: i64 = 1_767_225_600;

fn at(secs: i64) -> Timestamp {
    DateTime::from_timestamp(T0, 0).expect("valid origin") + Duration::seconds(secs)
}

fn parse_rule(item: &str) -> Result<UsageRule, String> {
    let item = item.trim();
    if let Some(range) = item.strip_prefix("interval:") {
        if let Some((a, b)) = range.split_once('/') {
            if let (Ok(a), Ok(b)) = (a.trim().parse::<i64>(), b.trim().parse::<i64>()) {
                if b <= a {
                    return Err(format!("empty interval {a}/{b}"));
                }
                return Ok(UsageRule::new(RuleKind::UsageDuringInterval { start: at(a), end: at(b) }));
            }
        }
    }
    item.parse().map(UsageRule::new)
}

/// Rules in the compact syntax, with `interval:<a>/<b>` also accepting
/// seconds on the demo clock.
pub fn parse_demo_rules(spec: &str) -> Result<Vec<UsageRule>, String> {
    let rules: Vec<_> = spec.split(',').filter(|s| !s.trim().is_empty()).map(parse_rule).collect::<Result<_, _>>()?;
    if rules.is_empty() {
        return Err("no rules given".into());
    }
    Ok(rules)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad {what} {s:?}")))
        .collect()
}

#[derive(Serialize)]
struct Cell {
    allow: bool,
    reason: Option<String>,
}

#[derive(Serialize)]
struct TruthTable {
    times: Vec<i64>,
    counts: Vec<u64>,
    /// `cells[count][time]`.
    cells: Vec<Vec<Cell>>,
}

/// Decision of the rule set for every usage count in `0..=max_count` at each
/// of the given demo-clock seconds.
#[wasm_bindgen]
pub fn policy_truth_table(rules: &str, max_count: u32, times: &str) -> Result<String, String> {
    let rules = parse_demo_rules(rules)?;
    let times: Vec<i64> = parse_list(times, "time")?;
    if times.is_empty() {
        return Err("no times given".into());
    }
    let counts: Vec<u64> = (0..=u64::from(max_count.min(64))).collect();
    let cells = counts
        .iter()
        .map(|&c| {
            times
                .iter()
                .map(|&t| match evaluate_rules(&rules, c, at(t)) {
                    Decision::Allow => Cell { allow: true, reason: None },
                    Decision::Deny(r) => Cell { allow: false, reason: Some(r.to_string()) },
                })
                .collect()
        })
        .collect();
    Ok(serde_json::to_string(&TruthTable { times, counts, cells }).expect("serializable"))
}

/// Replica count and CPU per control period for a sequence of concurrent
/// transfer counts.
#[wasm_bindgen]
pub fn autoscale_trajectory(
    offered: &str,
    min: usize,
    max: usize,
    target_cpu_pct: u32,
    per_transfer_cpu_cost: u32,
) -> Result<String, String> {
    let offered: Vec<u64> = parse_list(offered, "load")?;
    let policy = AutoscalePolicy { enabled: true, min, max, target_cpu_pct, per_transfer_cpu_cost, period_ms: 1000 };
    policy.validate()?;
    let points = simulate_control_loop(&offered, &policy, per_transfer_cpu_cost);
    Ok(serde_json::to_string(&points).expect("serializable"))
}

/// A set of edge nodes that apps are placed on by best fit.
#[wasm_bindgen]
#[derive(Default)]
pub struct Cluster {
    nodes: Vec<EdgeNode>,
}

#[wasm_bindgen]
impl Cluster {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Cluster {
        Cluster::default()
    }

    pub fn add_node(&mut self, node_id: &str, cpu_millicores: u32, memory_mb: u32) -> Result<(), String> {
        let node_id = node_id.trim();
        if node_id.is_empty() || self.nodes.iter().any(|n| n.node_id.as_str() == node_id) {
            return Err(format!("node id {node_id:?} is empty or taken"));
        }
        let cfg = NodeConfig { node_id: NodeId::new(node_id), cpu_millicores, memory_mb };
        self.nodes.push(EdgeNode::new(HostId::new("demo"), &cfg));
        Ok(())
    }

    /// Places one app and returns the chosen node id.
    pub fn place(&mut self, cpu_millicores: u32, memory_mb: u32) -> Result<String, String> {
        let demand = Demand::new(cpu_millicores, memory_mb);
        if !demand.is_positive() {
            return Err("demand must be positive".into());
        }
        place(&demand, &mut self.nodes).map(|id| id.to_string()).map_err(|e| e.to_string())
    }

    /// Frees every allocation.
    pub fn clear(&mut self) {
        for n in &mut self.nodes {
            n.allocated = Demand::ZERO;
        }
    }

    /// Nodes with capacity and allocation, as JSON.
    pub fn state(&self) -> String {
        serde_json::to_string(&self.nodes).expect("serializable")
    }
}
