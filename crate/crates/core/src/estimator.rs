//! Monte Carlo and multifidelity projection-error estimators, with the
//! closed-form MSE, optimal control-variate weights and usefulness test.

use serde::{Deserialize, Serialize};

use crate::error::{MfpodError, Result};
use crate::pod::{pod_projection_error, residual_energies_in_coords};
use crate::snapshots::SnapshotHierarchy;
use crate::space::Basis;

/// Variances of the squared residual norms per level and covariances with
/// level 0, for a fixed subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    /// σ_ℓ², ℓ = 0..=L.
    pub sigma2: Vec<f64>,
    /// σ_{0,ℓ}, ℓ = 1..=L (index 0 holds level 1).
    pub cov0: Vec<f64>,
    pub sample_count: usize,
}

impl VarianceProfile {
    pub fn new(sigma2: Vec<f64>, cov0: Vec<f64>, sample_count: usize) -> Result<Self> {
        if sigma2.len() != cov0.len() + 1 {
            return Err(MfpodError::InvalidParameter(format!(
                "{} variances but {} covariances",
                sigma2.len(),
                cov0.len()
            )));
        }
        if sigma2.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(MfpodError::InvalidParameter(
                "variances must be finite and nonnegative".into(),
            ));
        }
        for (l, &c) in cov0.iter().enumerate() {
            if c.abs() > (sigma2[0] * sigma2[l + 1]).sqrt() + 1e-9 {
                return Err(MfpodError::InvalidParameter(format!(
                    "covariance {c} of level {} violates Cauchy–Schwarz",
                    l + 1
                )));
            }
        }
        Ok(VarianceProfile {
            sigma2,
            cov0,
            sample_count,
        })
    }

    pub fn levels(&self) -> usize {
        self.cov0.len()
    }
}

/// Sample sizes, weights and per-sample costs of a multifidelity estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    m: Vec<usize>,
    alpha: Vec<f64>,
    costs: Vec<f64>,
}

impl Allocation {
    pub fn new(m: Vec<usize>, alpha: Vec<f64>, costs: Vec<f64>) -> Result<Self> {
        if m.is_empty() || m.len() != alpha.len() + 1 || m.len() != costs.len() {
            return Err(MfpodError::Allocation(format!(
                "need L+1 sample sizes and costs and L weights, got {}, {}, {}",
                m.len(),
                costs.len(),
                alpha.len()
            )));
        }
        if m[0] == 0 {
            return Err(MfpodError::Allocation("m_0 must be at least 1".into()));
        }
        if m.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MfpodError::Allocation(format!(
                "sample sizes must increase strictly: {m:?}"
            )));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(MfpodError::Allocation("weights must be finite".into()));
        }
        Ok(Allocation { m, alpha, costs })
    }

    /// Allocation matching the sizes and costs of `hierarchy`.
    pub fn for_hierarchy(hierarchy: &SnapshotHierarchy, alpha: Vec<f64>) -> Result<Self> {
        Self::new(hierarchy.sample_sizes(), alpha, hierarchy.costs())
    }

    pub fn m(&self) -> &[usize] {
        &self.m
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn total_cost(&self) -> f64 {
        self.m
            .iter()
            .zip(&self.costs)
            .map(|(&m, &c)| m as f64 * c)
            .sum()
    }

    /// Ratios q_ℓ = m_ℓ / m₀.
    pub fn ratios(&self) -> Vec<f64> {
        self.m
            .iter()
            .map(|&m| m as f64 / self.m[0] as f64)
            .collect()
    }

    /// Checks `total_cost ≤ budget + c_L`.
    pub fn check_budget(&self, budget: f64) -> Result<()> {
        let slack = *self.costs.last().unwrap_or(&0.0);
        if self.total_cost() > budget + slack {
            return Err(MfpodError::Allocation(format!(
                "total cost {} exceeds budget {budget}",
                self.total_cost()
            )));
        }
        Ok(())
    }

    fn with_alpha(&self, alpha: Vec<f64>) -> Self {
        Allocation {
            alpha,
            ..self.clone()
        }
    }
}

/// Monte Carlo cost `(1/m) Σ ‖u_i − Π_V u_i‖²_W`.
pub fn j_mc(basis: &Basis, hf_snapshots: &nalgebra::DMatrix<f64>) -> Result<f64> {
    pod_projection_error(basis, hf_snapshots)
}

/// Squared residual energies of every column at every level, in level order:
/// `[shared columns..., extra columns...]`.
fn level_energies(basis: &Basis, hierarchy: &SnapshotHierarchy) -> Result<Vec<Vec<f64>>> {
    let metric = basis.metric();
    let q = basis.coords();
    hierarchy
        .sets()
        .iter()
        .map(|set| {
            let y = metric.to_coords_mat(&set.combined())?;
            Ok(residual_energies_in_coords(&q, &y))
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Multifidelity cost: the telescoping control-variate sum.
///
/// The value may be negative.
pub fn j_mf(basis: &Basis, hierarchy: &SnapshotHierarchy, alloc: &Allocation) -> Result<f64> {
    check_consistent(hierarchy, alloc)?;
    let energies = level_energies(basis, hierarchy)?;
    let m = alloc.m();
    let mut total = mean(&energies[0]);
    for l in 1..m.len() {
        let e = &energies[l];
        let full = mean(&e[..m[l]]);
        let shared = mean(&e[..m[l - 1]]);
        total += alloc.alpha()[l - 1] * (full - shared);
    }
    Ok(total)
}

fn check_consistent(hierarchy: &SnapshotHierarchy, alloc: &Allocation) -> Result<()> {
    if hierarchy.sample_sizes() != alloc.m() {
        return Err(MfpodError::SampleSharing(format!(
            "allocation sizes {:?} do not match snapshot sets {:?}",
            alloc.m(),
            hierarchy.sample_sizes()
        )));
    }
    Ok(())
}

/// MSE of the multifidelity estimator for given weights.
pub fn mf_mse(profile: &VarianceProfile, alloc: &Allocation) -> f64 {
    let m = alloc.m();
    let mut mse = profile.sigma2[0] / m[0] as f64;
    for l in 1..m.len().min(profile.sigma2.len()) {
        let a = alloc.alpha()[l - 1];
        let gap = 1.0 / m[l - 1] as f64 - 1.0 / m[l] as f64;
        mse += gap * (a * a * profile.sigma2[l] - 2.0 * a * profile.cov0[l - 1]);
    }
    mse
}

/// α*_ℓ = σ_{0,ℓ}/σ_ℓ² (zero when σ_ℓ² = 0).
pub fn optimal_alpha(profile: &VarianceProfile) -> Vec<f64> {
    optimal_alpha_with_floor(profile, 0.0)
}

/// As [`optimal_alpha`], treating σ_ℓ² ≤ `floor` as zero.
pub fn optimal_alpha_with_floor(profile: &VarianceProfile, floor: f64) -> Vec<f64> {
    profile
        .cov0
        .iter()
        .enumerate()
        .map(|(l, &c)| {
            let s = profile.sigma2[l + 1];
            if s > floor {
                c / s
            } else {
                0.0
            }
        })
        .collect()
}

/// MSE at the optimal weights; never above σ₀²/m₀.
pub fn min_mse(profile: &VarianceProfile, alloc: &Allocation) -> f64 {
    let m = alloc.m();
    let mut mse = profile.sigma2[0] / m[0] as f64;
    for l in 1..m.len().min(profile.sigma2.len()) {
        let s = profile.sigma2[l];
        if s != 0.0 {
            let gap = 1.0 / m[l - 1] as f64 - 1.0 / m[l] as f64;
            mse -= gap * profile.cov0[l - 1].powi(2) / s;
        }
    }
    mse
}

/// Whether the optimally weighted multifidelity estimator beats plain Monte
/// Carlo with `m_mc` high-fidelity samples at the same budget.
///
/// Evaluates `1 − Σ_ℓ (m₀/m_{ℓ−1} − m₀/m_ℓ) ρ_ℓ² < m₀/m_mc` with
/// `ρ_ℓ² = σ_{0,ℓ}² / (σ₀² σ_ℓ²)`; for σ₀² = 1 this is the familiar form in
/// terms of σ_{0,ℓ}²/σ_ℓ².
pub fn usefulness(profile: &VarianceProfile, alloc: &Allocation, m_mc: usize) -> bool {
    let sigma0 = profile.sigma2[0];
    if sigma0 == 0.0 || m_mc == 0 {
        return false;
    }
    let m = alloc.m();
    let m0 = m[0] as f64;
    let mut lhs = 1.0;
    for l in 1..m.len().min(profile.sigma2.len()) {
        let s = profile.sigma2[l];
        if s != 0.0 {
            let gap = m0 / m[l - 1] as f64 - m0 / m[l] as f64;
            lhs -= gap * profile.cov0[l - 1].powi(2) / (sigma0 * s);
        }
    }
    lhs < m0 / m_mc as f64
}

/// Unbiased sample statistics of the squared residual norms on the shared
/// m₀ samples. Returns zeros when m₀ = 1.
pub fn estimate_profile(basis: &Basis, hierarchy: &SnapshotHierarchy) -> Result<VarianceProfile> {
    let energies = level_energies(basis, hierarchy)?;
    let m0 = hierarchy.sample_sizes()[0];
    let x = &energies[0][..m0];
    let levels = energies.len() - 1;
    if m0 < 2 {
        return Ok(VarianceProfile {
            sigma2: vec![0.0; levels + 1],
            cov0: vec![0.0; levels],
            sample_count: m0,
        });
    }
    let mut sigma2 = vec![sample_covariance(x, x)];
    let mut cov0 = Vec::with_capacity(levels);
    for e in &energies[1..] {
        let y = &e[..m0];
        sigma2.push(sample_covariance(y, y));
        cov0.push(sample_covariance(x, y));
    }
    Ok(VarianceProfile {
        sigma2,
        cov0,
        sample_count: m0,
    })
}

/// Two-pass unbiased sample covariance.
pub(crate) fn sample_covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mx, my) = (mean(x), mean(y));
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let v = s / (n - 1) as f64;
    if std::ptr::eq(x, y) {
        v.max(0.0)
    } else {
        v
    }
}

/// Same allocation with the weights replaced by α* of `profile`.
pub fn with_optimal_alpha(profile: &VarianceProfile, alloc: &Allocation) -> Allocation {
    alloc.with_alpha(optimal_alpha(profile))
}
