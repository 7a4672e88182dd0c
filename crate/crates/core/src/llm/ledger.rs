use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ChatResponse, ModelRole};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub request_count: u64,
    pub failure_count: u64,
}

impl RoleUsage {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    fn add(&mut self, other: &RoleUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.request_count += other.request_count;
        self.failure_count += other.failure_count;
    }
}

/// Cumulative token and request accounting, per role and overall.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub per_role: BTreeMap<ModelRole, RoleUsage>,
    pub total: RoleUsage,
}

impl UsageLedger {
    pub(crate) fn record(&mut self, role: ModelRole, resp: &ChatResponse) {
        let delta = RoleUsage {
            prompt_tokens: resp.prompt_tokens,
            completion_tokens: resp.completion_tokens,
            request_count: 1,
            failure_count: 0,
        };
        self.per_role.entry(role).or_default().add(&delta);
        self.total.add(&delta);
    }

    pub(crate) fn record_failure(&mut self, role: ModelRole) {
        let delta = RoleUsage {
            failure_count: 1,
            ..RoleUsage::default()
        };
        self.per_role.entry(role).or_default().add(&delta);
        self.total.add(&delta);
    }

    pub fn role(&self, role: ModelRole) -> RoleUsage {
        self.per_role.get(&role).copied().unwrap_or_default()
    }

    /// Recomputes the overall totals from the per-role rows.
    pub fn sum_of_roles(&self) -> RoleUsage {
        let mut sum = RoleUsage::default();
        for u in self.per_role.values() {
            sum.add(u);
        }
        sum
    }

    pub fn is_conserved(&self) -> bool {
        self.sum_of_roles() == self.total
    }
}
