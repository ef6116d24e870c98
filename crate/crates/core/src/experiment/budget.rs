//! Splitting a snapshot budget between the two models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MfpodError, Result};
use crate::models::ModelCosts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// `m₀ = ⌊c_tot/2⌋`, `m₁ = ⌊c₀/c₁⌋ m₀`.
    EvenSplit,
    /// `m₀ = k`, remaining budget spent on the low-fidelity model.
    FixedM0(usize),
    /// Plain POD on `⌊c_tot/c₀⌋` high-fidelity snapshots.
    HfOnly,
    /// Plain POD on `⌊c₀/c₁⌋ c_tot` low-fidelity snapshots.
    LfOnly,
}

impl SplitPolicy {
    /// Whether the policy combines both models.
    pub fn is_multifidelity(self) -> bool {
        matches!(self, SplitPolicy::EvenSplit | SplitPolicy::FixedM0(_))
    }
}

impl fmt::Display for SplitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitPolicy::EvenSplit => write!(f, "even"),
            SplitPolicy::FixedM0(k) => write!(f, "m0={k}"),
            SplitPolicy::HfOnly => write!(f, "hf-only"),
            SplitPolicy::LfOnly => write!(f, "lf-only"),
        }
    }
}

impl FromStr for SplitPolicy {
    type Err = MfpodError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(SplitPolicy::EvenSplit),
            "hf-only" => Ok(SplitPolicy::HfOnly),
            "lf-only" => Ok(SplitPolicy::LfOnly),
            _ => s
                .strip_prefix("m0=")
                .and_then(|k| k.parse().ok())
                .map(SplitPolicy::FixedM0)
                .ok_or_else(|| {
                    MfpodError::InvalidParameter(format!(
                        "unknown split '{s}' (expected even, m0=K, hf-only or lf-only)"
                    ))
                }),
        }
    }
}

/// Sample sizes chosen for a budget; either may be zero for single-model policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSplit {
    pub m0: usize,
    pub m1: usize,
}

impl BudgetSplit {
    pub fn cost(&self, costs: &ModelCosts) -> f64 {
        self.m0 as f64 * costs.c0 + self.m1 as f64 * costs.c1
    }
}

pub fn allocate_budget(c_tot: f64, costs: &ModelCosts, policy: SplitPolicy) -> Result<BudgetSplit> {
    if !(c_tot > 0.0 && c_tot.is_finite()) {
        return Err(MfpodError::InfeasibleBudget(format!(
            "budget must be positive, got {c_tot}"
        )));
    }
    if !(costs.c0 > costs.c1 && costs.c1 > 0.0) {
        return Err(MfpodError::InvalidParameter(format!(
            "costs must satisfy c0 > c1 > 0, got {} and {}",
            costs.c0, costs.c1
        )));
    }
    if policy.is_multifidelity() && c_tot < costs.c0 + 2.0 * costs.c1 {
        return Err(MfpodError::InfeasibleBudget(format!(
            "multifidelity POD needs c_tot >= c0 + 2 c1 = {}",
            costs.c0 + 2.0 * costs.c1
        )));
    }
    let ratio = (costs.c0 / costs.c1).floor() as usize;
    let split = match policy {
        SplitPolicy::EvenSplit => {
            let m0 = (c_tot / 2.0).floor() as usize;
            BudgetSplit { m0, m1: ratio * m0 }
        }
        SplitPolicy::FixedM0(k) => {
            let rest = c_tot - k as f64 * costs.c0;
            let m1 = if rest > 0.0 {
                (rest / costs.c1).floor() as usize
            } else {
                0
            };
            BudgetSplit { m0: k, m1 }
        }
        SplitPolicy::HfOnly => BudgetSplit {
            m0: (c_tot / costs.c0).floor() as usize,
            m1: 0,
        },
        SplitPolicy::LfOnly => BudgetSplit {
            m0: 0,
            m1: (ratio as f64 * c_tot).floor() as usize,
        },
    };
    let feasible = match policy {
        SplitPolicy::HfOnly => split.m0 >= 1,
        SplitPolicy::LfOnly => split.m1 >= 1,
        _ => split.m0 >= 1 && split.m1 > split.m0,
    };
    if !feasible {
        return Err(MfpodError::InfeasibleBudget(format!(
            "budget {c_tot} gives m0 = {}, m1 = {} under policy {policy}",
            split.m0, split.m1
        )));
    }
    Ok(split)
}
