// SPDX-License-Identifier: Apache-2.0

//! Usage policy evaluation. Rules combine conjunctively and any denying rule
//! wins; the first denying rule in offer order supplies the reason.

use serde::{Deserialize, Serialize};

use super::model::{ContractAgreement, RuleKind, UsageRule};
use crate::clock::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DenyReason {
    Prohibited,
    CountExhausted { used: u64, max: u64 },
    OutsideInterval,
}

impl std::fmt::Display for DenyReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Prohibited => f.write_str("access prohibited"),
            Self::CountExhausted { used, max } => write!(f, "count exhausted ({used}/{max})"),
            Self::OutsideInterval => f.write_str("outside interval"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow)
    }
}

pub fn evaluate_policy(agreement: &ContractAgreement, now: Timestamp) -> Decision {
    evaluate_rules(&agreement.rules_snapshot, agreement.usage_count, now)
}

pub fn evaluate_rules(rules: &[UsageRule], usage_count: u64, now: Timestamp) -> Decision {
    rules
        .iter()
        .find_map(|rule| rule_denies(&rule.kind, usage_count, now))
        .map_or(Decision::Allow, Decision::Deny)
}

fn rule_denies(kind: &RuleKind, usage_count: u64, now: Timestamp) -> Option<DenyReason> {
    match *kind {
        RuleKind::ProvideAccess => None,
        RuleKind::ProhibitAccess => Some(DenyReason::Prohibited),
        RuleKind::NTimesUsage { max_count } => (usage_count >= max_count)
            .then_some(DenyReason::CountExhausted { used: usage_count, max: max_count }),
        // Half-open: [start, end).
        RuleKind::UsageDuringInterval { start, end } => {
            (now < start || now >= end).then_some(DenyReason::OutsideInterval)
        }
    }
}
