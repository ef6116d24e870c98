//! Per-fidelity snapshot blocks with shared parameter samples.
//!
//! Level 0 holds the high-fidelity matrix `S₀` (n × m₀). Level ℓ ≥ 1 holds
//! `S_ℓ` (the states at the first m_{ℓ−1} samples, shared with level ℓ−1)
//! and `S_{ℓ,+}` (the states at the additional samples up to m_ℓ).

use nalgebra::DMatrix;

use crate::error::{MfpodError, Result};

#[derive(Debug, Clone)]
pub struct SnapshotSet {
    level: usize,
    shared: DMatrix<f64>,
    extra: DMatrix<f64>,
    sample_ids: Vec<u64>,
    cost: f64,
}

impl SnapshotSet {
    /// High-fidelity level: `S₀` with one sample id per column.
    pub fn high_fidelity(s0: DMatrix<f64>, sample_ids: Vec<u64>, cost: f64) -> Result<Self> {
        let n = s0.nrows();
        Self::new(0, s0, DMatrix::zeros(n, 0), sample_ids, cost)
    }

    /// Low-fidelity level `ℓ ≥ 1`; `sample_ids` covers shared then extra columns.
    pub fn low_fidelity(
        level: usize,
        shared: DMatrix<f64>,
        extra: DMatrix<f64>,
        sample_ids: Vec<u64>,
        cost: f64,
    ) -> Result<Self> {
        if level == 0 {
            return Err(MfpodError::SampleSharing(
                "low-fidelity sets start at level 1".into(),
            ));
        }
        Self::new(level, shared, extra, sample_ids, cost)
    }

    fn new(
        level: usize,
        shared: DMatrix<f64>,
        extra: DMatrix<f64>,
        sample_ids: Vec<u64>,
        cost: f64,
    ) -> Result<Self> {
        if shared.nrows() != extra.nrows() {
            return Err(MfpodError::DimensionMismatch {
                expected: shared.nrows(),
                got: extra.nrows(),
            });
        }
        if sample_ids.len() != shared.ncols() + extra.ncols() {
            return Err(MfpodError::SampleSharing(format!(
                "level {level}: {} sample ids for {} columns",
                sample_ids.len(),
                shared.ncols() + extra.ncols()
            )));
        }
        if !(cost > 0.0) || !cost.is_finite() {
            return Err(MfpodError::InvalidParameter(format!(
                "level {level}: cost per sample must be positive, got {cost}"
            )));
        }
        Ok(SnapshotSet {
            level,
            shared,
            extra,
            sample_ids,
            cost,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn shared(&self) -> &DMatrix<f64> {
        &self.shared
    }

    pub fn extra(&self) -> &DMatrix<f64> {
        &self.extra
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn ambient_dim(&self) -> usize {
        self.shared.nrows()
    }

    /// Total number of samples m_ℓ at this level.
    pub fn sample_count(&self) -> usize {
        self.shared.ncols() + self.extra.ncols()
    }

    /// All columns `[S_ℓ, S_{ℓ,+}]`.
    pub fn combined(&self) -> DMatrix<f64> {
        hstack(&[&self.shared, &self.extra])
    }
}

/// Validated sequence of snapshot sets, levels 0..=L.
#[derive(Debug, Clone)]
pub struct SnapshotHierarchy {
    sets: Vec<SnapshotSet>,
}

impl SnapshotHierarchy {
    pub fn new(sets: Vec<SnapshotSet>) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| MfpodError::SampleSharing("no snapshot sets".into()))?;
        if first.level != 0 || first.extra.ncols() != 0 {
            return Err(MfpodError::SampleSharing(
                "first set must be the high-fidelity level 0 without extra columns".into(),
            ));
        }
        if first.shared.ncols() == 0 {
            return Err(MfpodError::SampleSharing(
                "at least one high-fidelity sample is required".into(),
            ));
        }
        let n = first.ambient_dim();
        for (l, pair) in sets.windows(2).enumerate() {
            let (prev, cur) = (&pair[0], &pair[1]);
            let level = l + 1;
            if cur.level != level {
                return Err(MfpodError::SampleSharing(format!(
                    "expected level {level}, found {}",
                    cur.level
                )));
            }
            if cur.ambient_dim() != n {
                return Err(MfpodError::DimensionMismatch {
                    expected: n,
                    got: cur.ambient_dim(),
                });
            }
            let m_prev = prev.sample_count();
            if cur.shared.ncols() != m_prev {
                return Err(MfpodError::SampleSharing(format!(
                    "level {level} shares {} columns but level {} has {m_prev} samples",
                    cur.shared.ncols(),
                    level - 1
                )));
            }
            if cur.extra.ncols() == 0 {
                return Err(MfpodError::SampleSharing(format!(
                    "sample sizes must increase strictly (level {level})"
                )));
            }
            if cur.sample_ids[..m_prev] != prev.sample_ids[..] {
                return Err(MfpodError::SampleSharing(format!(
                    "level {level} shared columns do not match the samples of level {}",
                    level - 1
                )));
            }
            let ok = if level == 1 {
                cur.cost < prev.cost
            } else {
                cur.cost <= prev.cost
            };
            if !ok {
                return Err(MfpodError::SampleSharing(format!(
                    "costs must satisfy c_0 > c_1 >= ... > 0 (level {level})"
                )));
            }
        }
        Ok(SnapshotHierarchy { sets })
    }

    /// Two-model convenience: `S₀`, `S₁` (same samples as `S₀`) and `S₊`.
    /// Sample ids are `0..m₁`.
    pub fn two_level(
        s0: DMatrix<f64>,
        s1: DMatrix<f64>,
        s_plus: DMatrix<f64>,
        c0: f64,
        c1: f64,
    ) -> Result<Self> {
        let m0 = s0.ncols();
        let m1 = m0 + s_plus.ncols();
        let ids: Vec<u64> = (0..m1 as u64).collect();
        Self::new(vec![
            SnapshotSet::high_fidelity(s0, ids[..m0].to_vec(), c0)?,
            SnapshotSet::low_fidelity(1, s1, s_plus, ids, c1)?,
        ])
    }

    /// Only the high-fidelity level.
    pub fn single(s0: DMatrix<f64>, c0: f64) -> Result<Self> {
        let ids = (0..s0.ncols() as u64).collect();
        Self::new(vec![SnapshotSet::high_fidelity(s0, ids, c0)?])
    }

    pub fn sets(&self) -> &[SnapshotSet] {
        &self.sets
    }

    pub fn level(&self, l: usize) -> &SnapshotSet {
        &self.sets[l]
    }

    /// Number of low-fidelity levels L.
    pub fn low_fidelity_levels(&self) -> usize {
        self.sets.len() - 1
    }

    pub fn ambient_dim(&self) -> usize {
        self.sets[0].ambient_dim()
    }

    /// Sample sizes m₀ < m₁ < … < m_L.
    pub fn sample_sizes(&self) -> Vec<usize> {
        self.sets.iter().map(SnapshotSet::sample_count).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.sets.iter().map(SnapshotSet::cost).collect()
    }

    /// `Σ m_ℓ c_ℓ`.
    pub fn total_cost(&self) -> f64 {
        self.sets
            .iter()
            .map(|s| s.sample_count() as f64 * s.cost)
            .sum()
    }

    pub fn high_fidelity(&self) -> &DMatrix<f64> {
        &self.sets[0].shared
    }

    /// Stacked snapshot matrix `[S₀, S₁, S_{1,+}, …, S_L, S_{L,+}]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let mut blocks: Vec<&DMatrix<f64>> = Vec::with_capacity(2 * self.sets.len());
        for set in &self.sets {
            blocks.push(&set.shared);
            blocks.push(&set.extra);
        }
        hstack(&blocks)
    }
}

pub(crate) fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut data = Vec::with_capacity(n * cols);
    for b in blocks {
        data.extend_from_slice(b.as_slice());
    }
    DMatrix::from_vec(n, cols, data)
}
