//! Multifidelity POD: the implicit operator Ĉ_mf, its eigenpairs, the λ⁺
//! correction and energy-based dimension selection.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MfpodError, Result};
use crate::snapshots::{hstack, SnapshotHierarchy};
use crate::solver::{
    lowrank_eig, EigenPairs, LinearAction, LowRankMethod, LowRankOptions, DEFAULT_EIG_TOL,
};
use crate::space::{orthonormal_columns, Basis, Metric, DEFAULT_DROP_TOL};

/// `‖Π_S v‖_W` at or below this counts as `v ⊥ S`.
pub const DEFAULT_ORTHO_TOL: f64 = 1e-8;

/// Corrected eigenvalues at or below this fraction of λ₁⁺ are dropped.
pub const CORRECTED_FLOOR: f64 = 1e-10;

/// One weighted block `c · Y Yᵀ` of the operator, in transformed coordinates.
#[derive(Debug, Clone)]
struct Block {
    coef: f64,
    y: DMatrix<f64>,
}

/// Implicit operator
/// `Ĉ_mf v = (1/m₀) S₀S₀ᵀWv + Σ_ℓ [(α_ℓ/m_ℓ − α_ℓ/m_{ℓ−1}) S_ℓS_ℓᵀWv + (α_ℓ/m_ℓ) S_{ℓ,+}S_{ℓ,+}ᵀWv]`.
///
/// Blocks are held as `Y = FᵀS`, so that `FᵀĈ_mf F⁻ᵀ = Σ c Y Yᵀ` is symmetric;
/// the [`LinearAction`] implementation acts in those coordinates.
#[derive(Debug, Clone)]
pub struct MfOperator {
    metric: Metric,
    alpha: Vec<f64>,
    m: Vec<usize>,
    blocks: Vec<Block>,
}

/// Sets up the multifidelity operator for the given weights.
pub fn build_operator(
    hierarchy: &SnapshotHierarchy,
    alpha: &[f64],
    metric: &Metric,
) -> Result<MfOperator> {
    check_dim(metric.dim(), hierarchy.ambient_dim())?;
    if alpha.len() != hierarchy.low_fidelity_levels() {
        return Err(MfpodError::InvalidParameter(format!(
            "{} weights for {} low-fidelity levels",
            alpha.len(),
            hierarchy.low_fidelity_levels()
        )));
    }
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(MfpodError::InvalidParameter(
            "weights must be finite".into(),
        ));
    }
    let m = hierarchy.sample_sizes();
    let mut blocks = vec![Block {
        coef: 1.0 / m[0] as f64,
        y: metric.to_coords_mat(hierarchy.high_fidelity())?,
    }];
    for (l, set) in hierarchy.sets().iter().enumerate().skip(1) {
        let a = alpha[l - 1];
        blocks.push(Block {
            coef: a / m[l] as f64 - a / m[l - 1] as f64,
            y: metric.to_coords_mat(set.shared())?,
        });
        blocks.push(Block {
            coef: a / m[l] as f64,
            y: metric.to_coords_mat(set.extra())?,
        });
    }
    Ok(MfOperator {
        metric: metric.clone(),
        alpha: alpha.to_vec(),

        m,
        blocks,
    })
}

impl MfOperator {
    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sample_sizes(&self) -> &[usize] {
        &self.m
    }

    /// `Ĉ_mf v` for `v` in the original space.
    pub fn apply_original(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let y = self.metric.to_coords(v)?;
        self.metric.from_coords(&self.apply(&y))
    }

    /// The operator as an explicit n × n matrix in the original space.
    pub fn covariance_matrix(&self) -> Result<DMatrix<f64>> {
        let t = self.transformed_matrix();
        // F⁻ᵀ T Fᵀ
        let left = self.metric.from_coords_mat(&t)?;
        let f = self.metric.factor_dense();
        Ok(left * f.transpose())
    }

    /// `Σ c Y Yᵀ`, the symmetric matrix in transformed coordinates.
    pub fn transformed_matrix(&self) -> DMatrix<f64> {
        let n = self.metric.dim();
        let mut t = DMatrix::zeros(n, n);
        for b in &self.blocks {
            if b.coef != 0.0 && b.y.ncols() > 0 {
                t.gemm(b.coef, &b.y, &b.y.transpose(), 1.0);
            }
        }
        t
    }

    /// Stacked transformed snapshots `Fᵀ[S₀, S₁, S_{1,+}, …]`; spans the range.
    pub fn stacked_coords(&self) -> DMatrix<f64> {
        let blocks: Vec<&DMatrix<f64>> = self.blocks.iter().map(|b| &b.y).collect();
        hstack(&blocks)
    }

    /// High-fidelity snapshots in transformed coordinates.
    pub fn hf_coords(&self) -> &DMatrix<f64> {
        &self.blocks[0].y
    }

    /// Operator restricted to span(Q) for orthonormal `Q`: `Qᵀ Ĉ Q`.
    pub(crate) fn reduced(&self, q: &DMatrix<f64>) -> ReducedOperator {
        ReducedOperator {
            blocks: self
                .blocks
                .iter()
                .map(|b| (b.coef, q.tr_mul(&b.y)))
                .collect(),
        }
    }
}

impl LinearAction for MfOperator {
    fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for b in &self.blocks {
            if b.coef != 0.0 && b.y.ncols() > 0 {
                let t = b.y.tr_mul(x);
                out.gemv(b.coef, &b.y, &t, 1.0);
            }
        }
        out
    }

    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for b in &self.blocks {
            if b.coef != 0.0 && b.y.ncols() > 0 {
                let t = b.y.tr_mul(x);
                out.gemm(b.coef, &b.y, &t, 1.0);
            }
        }
        out
    }

    fn rank_bound(&self) -> usize {
        self.blocks.iter().map(|b| b.y.ncols()).sum()
    }
}

/// The operator in reduced coordinates of an orthonormal span: blocks `QᵀY`.
#[derive(Debug, Clone)]
pub(crate) struct ReducedOperator {
    pub(crate) blocks: Vec<(f64, DMatrix<f64>)>,
}

impl ReducedOperator {
    pub(crate) fn matrix(&self) -> DMatrix<f64> {
        let k = self.blocks.first().map(|b| b.1.nrows()).unwrap_or(0);
        let mut t = DMatrix::zeros(k, k);
        for (c, b) in &self.blocks {
            if *c != 0.0 && b.ncols() > 0 {
                t.gemm(*c, b, &b.transpose(), 1.0);
            }
        }
        (&t + t.transpose()) * 0.5
    }

    /// Replaces the weights of a two-level operator.
    pub(crate) fn reweighted(&self, alpha: f64, m0: usize, m1: usize) -> ReducedOperator {
        let mut blocks = self.blocks.clone();
        blocks[1].0 = alpha / m1 as f64 - alpha / m0 as f64;
        blocks[2].0 = alpha / m1 as f64;
        ReducedOperator { blocks }
    }
}

/// Which case of the λ⁺ rule produced a corrected value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionBranch {
    Positive,
    Orthogonal,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub value: f64,
    pub branch: CorrectionBranch,
}

/// λ⁺ for an eigenpair `(λ, v)` with `‖v‖_W = 1`.
///
/// Positive λ is kept. Otherwise the value is 0 if `‖Π_S v‖_W ≤ tol` with
/// `S` the span of `s_all`, and `(1/m₀) Σ_i (u₀(θ_i), v)²_W` if not.
pub fn correct_eigenvalue(
    lambda: f64,
    v: &DVector<f64>,
    s0: &DMatrix<f64>,
    s_all: &DMatrix<f64>,
    metric: &Metric,
    tol: f64,
) -> Result<Correction> {
    check_dim(metric.dim(), v.len())?;
    if lambda > 0.0 {
        return Ok(Correction {
            value: lambda,
            branch: CorrectionBranch::Positive,
        });
    }
    let yv = metric.to_coords(v)?;
    let q = orthonormal_columns(&metric.to_coords_mat(s_all)?, DEFAULT_DROP_TOL);
    let y0 = metric.to_coords_mat(s0)?;
    Ok(correct_in_coords(lambda, &yv, &y0, &q, tol))
}

pub(crate) fn correct_in_coords(
    lambda: f64,
    yv: &DVector<f64>,
    y0: &DMatrix<f64>,
    q_all: &DMatrix<f64>,
    tol: f64,
) -> Correction {
    if lambda > 0.0 {
        return Correction {
            value: lambda,
            branch: CorrectionBranch::Positive,
        };
    }
    if q_all.tr_mul(yv).norm() <= tol {
        return Correction {
            value: 0.0,
            branch: CorrectionBranch::Orthogonal,
        };
    }
    let m0 = y0.ncols().max(1) as f64;
    Correction {
        value: y0.tr_mul(yv).norm_squared() / m0,
        branch: CorrectionBranch::MonteCarlo,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MfpodOptions {
    /// Energy fraction κ ∈ (0, 1) for selecting r.
    pub kappa: f64,
    /// Relative cut on |λ| for eigenpairs returned by the solver.
    pub eig_tol: f64,
    pub method: LowRankMethod,
    /// Threshold for the `v ⊥ S` test.
    pub ortho_tol: f64,
}

impl Default for MfpodOptions {
    fn default() -> Self {
        MfpodOptions {
            kappa: 0.9999,
            eig_tol: DEFAULT_EIG_TOL,
            method: LowRankMethod::Projected,
            ortho_tol: DEFAULT_ORTHO_TOL,
        }
    }
}

impl MfpodOptions {
    pub fn kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn eig_tol(mut self, tol: f64) -> Self {
        self.eig_tol = tol;
        self
    }

    pub fn method(mut self, method: LowRankMethod) -> Self {
        self.method = method;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(MfpodError::InvalidParameter(format!(
                "kappa must lie in (0, 1), got {}",
                self.kappa
            )));
        }
        if !(self.eig_tol >= 0.0) || !(self.ortho_tol >= 0.0) {
            return Err(MfpodError::InvalidParameter(
                "tolerances must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Multifidelity modes ordered by descending λ⁺.
#[derive(Debug, Clone)]
pub struct MfBasis {
    /// Solver eigenvalues, permuted into λ⁺ order.
    pub raw_eigvals: Vec<f64>,
    pub corrected: Vec<f64>,
    pub branches: Vec<CorrectionBranch>,
    /// All modes, metric-orthonormal, in λ⁺ order.
    pub modes: Basis,
    /// Modes with `λ⁺ > 1e-10 · λ₁⁺`; always a prefix of `modes`.
    pub retained: usize,
    /// Minimal dimension reaching the energy fraction κ.
    pub r: usize,
    pub kappa: f64,
    /// Eigenvalues with λ ≤ 0 that went through the correction.
    pub correction_count: usize,
    /// Corrections resolved by the orthogonality case.
    pub orthogonal_count: usize,
    /// `Σ_{j≤r} λ_j⁺ / Σ_j λ_j⁺` over retained modes.
    pub energy_fraction: f64,
    pub note: Option<String>,
}

impl MfBasis {
    /// The selected basis `V = [v_1, …, v_r]`.
    pub fn basis(&self) -> Basis {
        self.modes.truncated(self.r)
    }

    /// First `r` retained modes (fewer if not available).
    pub fn basis_of_dim(&self, r: usize) -> Basis {
        self.modes.truncated(r.min(self.retained))
    }

    pub fn retained_eigvals(&self) -> &[f64] {
        &self.corrected[..self.retained]
    }
}

/// Discrete MFPOD with fixed weights: eigensolve seeded by the stacked
/// snapshots, λ⁺ correction, reordering and κ selection.
pub fn mfpod_fixed(
    hierarchy: &SnapshotHierarchy,
    alpha: &[f64],
    metric: &Metric,
    opts: &MfpodOptions,
) -> Result<MfBasis> {
    opts.validate()?;
    let op = build_operator(hierarchy, alpha, metric)?;
    let q_all = orthonormal_columns(&op.stacked_coords(), DEFAULT_DROP_TOL);
    let want = q_all.ncols();
    let pairs = if want == 0 {
        EigenPairs {
            values: Vec::new(),
            vectors: DMatrix::zeros(metric.dim(), 0),
            residuals: Vec::new(),
        }
    } else {
        let lr = LowRankOptions::new(want)
            .tol(opts.eig_tol)
            .method(opts.method);
        lowrank_eig(&op, &q_all, &lr)?
    };
    let corrections: Vec<Correction> = pairs
        .vectors
        .column_iter()
        .zip(&pairs.values)
        .map(|(v, &l)| {
            correct_in_coords(l, &v.into_owned(), op.hf_coords(), &q_all, opts.ortho_tol)
        })
        .collect();
    finalize(pairs.values, pairs.vectors, corrections, metric, opts.kappa)
}

/// Orders modes by λ⁺ and selects r. Vectors are transformed coordinates.
pub(crate) fn finalize(
    raw: Vec<f64>,
    coords: DMatrix<f64>,
    corrections: Vec<Correction>,
    metric: &Metric,
    kappa: f64,
) -> Result<MfBasis> {
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        corrections[b]
            .value
            .partial_cmp(&corrections[a].value)
            .unwrap_or(Ordering::Equal)
            .then(raw[b].partial_cmp(&raw[a]).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    let n = coords.nrows();
    let mut sorted = DMatrix::zeros(n, order.len());
    for (k, &i) in order.iter().enumerate() {
        sorted.set_column(k, &coords.column(i));
    }
    let raw_eigvals: Vec<f64> = order.iter().map(|&i| raw[i]).collect();
    let corrected: Vec<f64> = order.iter().map(|&i| corrections[i].value).collect();
    let branches: Vec<CorrectionBranch> = order.iter().map(|&i| corrections[i].branch).collect();
    let correction_count = branches
        .iter()
        .filter(|b| **b != CorrectionBranch::Positive)
        .count();
    let orthogonal_count = branches
        .iter()
        .filter(|b| **b == CorrectionBranch::Orthogonal)
        .count();

    let lead = corrected.first().copied().unwrap_or(0.0);
    let retained = if lead > 0.0 {
        corrected
            .iter()
            .take_while(|&&l| l > CORRECTED_FLOOR * lead)
            .count()
    } else {
        0
    };
    let (r, energy_fraction, note) = if retained == 0 {
        (
            0,
            0.0,
            Some("all corrected eigenvalues vanish; the basis is empty".to_string()),
        )
    } else {
        let (r, frac) = select_dimension(&corrected[..retained], kappa);
        (r, frac, None)
    };
    Ok(MfBasis {
        raw_eigvals,
        corrected,
        branches,
        modes: Basis::from_coords(&sorted, metric.clone())?,
        retained,
        r,
        kappa,
        correction_count,
        orthogonal_count,
        energy_fraction,
        note,
    })
}

/// Minimal r with `Σ_{j≤r} λ_j / Σ_j λ_j ≥ κ`, and the fraction reached.
pub fn select_dimension(eigvals: &[f64], kappa: f64) -> (usize, f64) {
    let total: f64 = eigvals.iter().sum();
    if total <= 0.0 {
        return (0, 0.0);
    }
    let mut acc = 0.0;
    for (j, l) in eigvals.iter().enumerate() {
        acc += l;
        if acc / total >= kappa {
            return (j + 1, acc / total);
        }
    }
    (eigvals.len(), acc / total)
}

/// `J⁺_mf(V) = Σ_j λ_j⁺ (1 − ‖Π_V v_j‖²_W)` over the retained modes.
pub fn jmf_plus(mf: &MfBasis, candidate: &Basis) -> Result<f64> {
    check_dim(mf.modes.ambient_dim(), candidate.ambient_dim())?;
    let modes = mf.modes.truncated(mf.retained).coords();
    let c = candidate.coords();
    let overlap = c.tr_mul(&modes);
    let total = (0..mf.retained)
        .map(|j| mf.corrected[j] * (1.0 - overlap.column(j).norm_squared()).max(0.0))
        .sum();
    Ok(total)
}

/// `Σ_j λ_j (1 − ‖Π_V v_j‖²_W)` over all raw eigenpairs; equals `j_mf(V)`
/// whenever every nonzero eigenvalue was captured.
pub fn spectral_cost(mf: &MfBasis, candidate: &Basis) -> Result<f64> {
    check_dim(mf.modes.ambient_dim(), candidate.ambient_dim())?;
    let modes = mf.modes.coords();
    let overlap = candidate.coords().tr_mul(&modes);
    Ok(mf
        .raw_eigvals
        .iter()
        .enumerate()
        .map(|(j, l)| l * (1.0 - overlap.column(j).norm_squared()))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{j_mf, Allocation};
    use crate::pod::{pod, DEFAULT_EIG_FLOOR};
    use crate::solver::dense_symmetric_eig;
    use crate::space::orthonormalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn weighted(n: usize, seed: u64) -> Metric {
        let a = random_matrix(n, n, seed) * 0.3;
        Metric::from_dense(&(&a * a.transpose() + DMatrix::identity(n, n))).unwrap()
    }

    fn instance(n: usize, m0: usize, m1: usize, seed: u64) -> SnapshotHierarchy {
        let s0 = random_matrix(n, m0, seed);
        let s1 = &s0 + random_matrix(n, m0, seed + 1) * 0.3;
        let sp = random_matrix(n, m1 - m0, seed + 2);
        SnapshotHierarchy::two_level(s0, s1, sp, 1.0, 0.1).unwrap()
    }

    /// Explicit x-space matrix assembled term by term.
    fn explicit(h: &SnapshotHierarchy, alpha: f64, w: &DMatrix<f64>) -> DMatrix<f64> {
        let m = h.sample_sizes();
        let (m0, m1) = (m[0] as f64, m[1] as f64);
        let s0 = h.level(0).shared();
        let s1 = h.level(1).shared();
        let sp = h.level(1).extra();
        s0 * s0.transpose() * w / m0
            + s1 * s1.transpose() * w * (alpha / m1 - alpha / m0)
            + sp * sp.transpose() * w * (alpha / m1)
    }

    #[test]
    fn action_matches_explicit_matrix() {
        let h = instance(12, 2, 6, 1);
        let metric = weighted(12, 2);
        let op = build_operator(&h, &[0.8], &metric).unwrap();
        let c = explicit(&h, 0.8, &metric.weight_dense());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let v = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
            let got = op.apply_original(&v).unwrap();
            let want = &c * &v;
            assert!((got - &want).norm() <= 1e-12 * want.norm().max(1.0));
        }
        assert!((op.covariance_matrix().unwrap() - &c).norm() < 1e-12 * c.norm());
    }

    #[test]
    fn transformed_operator_is_symmetric() {
        let h = instance(10, 3, 8, 5);
        let op = build_operator(&h, &[1.3], &weighted(10, 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let v = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
            let w = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
            let lhs = op.apply(&v).dot(&w);
            let rhs = v.dot(&op.apply(&w));
            assert!(
                (lhs - rhs).abs() <= 1e-12 * op.transformed_matrix().norm() * v.norm() * w.norm()
            );
        }
    }

    #[test]
    fn zero_weight_reduces_to_hf_gramian() {
        let h = instance(9, 3, 7, 8);
        let metric = Metric::euclidean(9);
        let op = build_operator(&h, &[0.0], &metric).unwrap();
        let s0 = h.high_fidelity();
        let want = s0 * s0.transpose() / 3.0;
        assert!((op.transformed_matrix() - want).norm() < 1e-14);
    }

    #[test]
    fn identical_models_collapse_to_all_samples() {
        let all = random_matrix(8, 6, 9);
        let s0 = all.columns(0, 2).into_owned();
        let h =
            SnapshotHierarchy::two_level(s0.clone(), s0, all.columns(2, 4).into_owned(), 1.0, 0.1)
                .unwrap();
        let op = build_operator(&h, &[1.0], &Metric::euclidean(8)).unwrap();
        let want = &all * all.transpose() / 6.0;
        assert!((op.transformed_matrix() - want).norm() < 1e-14);
    }

    #[test]
    fn rejects_wrong_weight_count() {
        let h = instance(6, 2, 4, 10);
        assert!(build_operator(&h, &[], &Metric::euclidean(6)).is_err());
        assert!(build_operator(&h, &[1.0], &Metric::euclidean(7)).is_err());
    }

    #[test]
    fn correction_branches() {
        let metric = Metric::euclidean(4);
        let s0 = DMatrix::from_column_slice(4, 2, &[1., 1., 0., 0., 2., 0., 0., 0.]);
        let s_all = hstack(&[&s0, &DMatrix::from_column_slice(4, 1, &[0., 0., 1., 0.])]);
        let v = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        let c = correct_eigenvalue(2.0, &v, &s0, &s_all, &metric, 1e-8).unwrap();
        assert_eq!(
            c,
            Correction {
                value: 2.0,
                branch: CorrectionBranch::Positive
            }
        );
        let c = correct_eigenvalue(-0.1, &v, &s0, &s_all, &metric, 1e-8).unwrap();
        assert_eq!(
            c,
            Correction {
                value: 0.0,
                branch: CorrectionBranch::Orthogonal
            }
        );

        let u = s0.column(0).into_owned();
        let v = &u / u.norm();
        let c = correct_eigenvalue(-0.1, &v, &s0, &s_all, &metric, 1e-8).unwrap();
        let direct = (s0.column(0).dot(&v).powi(2) + s0.column(1).dot(&v).powi(2)) / 2.0;
        assert_eq!(c.branch, CorrectionBranch::MonteCarlo);
        assert!((c.value - direct).abs() < 1e-14);
    }

    #[test]
    fn weighted_correction_uses_metric_products() {
        let metric = weighted(5, 11);
        let s0 = random_matrix(5, 3, 12);
        let u = s0.column(0).into_owned();
        let v = &u / metric.norm_sq(&u).unwrap().sqrt();
        let c = correct_eigenvalue(-1.0, &v, &s0, &s0, &metric, 1e-8).unwrap();
        let direct: f64 = (0..3)
            .map(|i| {
                metric
                    .inner(&s0.column(i).into_owned(), &v)
                    .unwrap()
                    .powi(2)
            })
            .sum::<f64>()
            / 3.0;
        assert!((c.value - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn zero_weight_matches_hf_pod() {
        let h = instance(20, 4, 12, 13);
        let metric = weighted(20, 14);
        let mf = mfpod_fixed(&h, &[0.0], &metric, &MfpodOptions::default()).unwrap();
        let p = pod(h.high_fidelity(), &metric, DEFAULT_EIG_FLOOR).unwrap();
        assert_eq!(mf.retained, p.rank());
        for j in 0..p.rank() {
            assert!((mf.corrected[j] - p.eigvals[j]).abs() < 1e-9 * p.eigvals[0]);
        }
        let a = mf.modes.truncated(mf.retained).coords();
        let b = p.basis.coords();
        let align = p.rank() as f64 - (a.transpose() * b).norm_squared();
        assert!(align.abs() < 1e-8);
    }

    #[test]
    fn kappa_near_one_selects_every_positive_mode() {
        let h = instance(15, 3, 9, 15);
        let metric = Metric::euclidean(15);
        let opts = MfpodOptions::default().kappa(1.0 - 1e-15);
        let mf = mfpod_fixed(&h, &[0.9], &metric, &opts).unwrap();
        let positive = mf.corrected.iter().filter(|&&l| l > 0.0).count();
        assert_eq!(mf.r, positive);
        assert!(mf.corrected.windows(2).all(|w| w[0] >= w[1]));
        assert!(mf.corrected.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn matches_dense_pipeline() {
        let h = instance(30, 3, 9, 16);
        let metric = weighted(30, 17);
        let alpha = 1.1;
        let mf = mfpod_fixed(&h, &[alpha], &metric, &MfpodOptions::default()).unwrap();
        let op = build_operator(&h, &[alpha], &metric).unwrap();
        let dense = dense_symmetric_eig(&op.transformed_matrix()).unwrap();
        let scale = dense.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut nonzero: Vec<f64> = dense
            .values
            .iter()
            .copied()
            .filter(|v| v.abs() > 1e-10 * scale)
            .collect();
        let mut raw = mf.raw_eigvals.clone();
        nonzero.sort_by(|a, b| b.partial_cmp(a).unwrap());
        raw.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(raw.len(), nonzero.len());
        for (a, b) in raw.iter().zip(&nonzero) {
            assert!((a - b).abs() < 1e-8 * b.abs());
        }
        // manual correction of every non-positive value
        let y0 = op.hf_coords();
        for (j, &l) in mf.raw_eigvals.iter().enumerate() {
            let y = mf.modes.coords().column(j).into_owned();
            let want = if l > 0.0 {
                l
            } else {
                y0.tr_mul(&y).norm_squared() / 3.0
            };
            assert!((mf.corrected[j] - want).abs() < 1e-12 * scale);
        }
        assert!(mf.correction_count > 0);
    }

    #[test]
    fn spectral_cost_identity_and_minimizer() {
        let h = instance(25, 4, 12, 18);
        let metric = weighted(25, 19);
        let opts = MfpodOptions::default().eig_tol(0.0);
        let alloc = Allocation::for_hierarchy(&h, vec![0.7]).unwrap();
        let mf = mfpod_fixed(&h, &[0.7], &metric, &opts).unwrap();
        for seed in 0..20 {
            let cand = orthonormalize(&random_matrix(25, 3, 100 + seed), &metric, 1e-12).unwrap();
            let direct = j_mf(&cand, &h, &alloc).unwrap();
            let spectral = spectral_cost(&mf, &cand).unwrap();
            assert!((direct - spectral).abs() < 1e-8 * direct.abs().max(1e-12));
        }
        // top-3 signed eigenvectors minimize j_mf over 3-dim candidates
        let mut idx: Vec<usize> = (0..mf.raw_eigvals.len()).collect();
        idx.sort_by(|&a, &b| mf.raw_eigvals[b].partial_cmp(&mf.raw_eigvals[a]).unwrap());
        let coords = mf.modes.coords();
        let mut top = DMatrix::zeros(25, 3);
        for (k, &i) in idx.iter().take(3).enumerate() {
            top.set_column(k, &coords.column(i));
        }
        let best = Basis::from_coords(&top, metric.clone()).unwrap();
        let best_val = j_mf(&best, &h, &alloc).unwrap();
        for seed in 0..100 {
            let cand = orthonormalize(&random_matrix(25, 3, 500 + seed), &metric, 1e-12).unwrap();
            assert!(best_val <= j_mf(&cand, &h, &alloc).unwrap() + 1e-10);
        }
    }

    #[test]
    fn jmf_plus_cases() {
        let h = instance(30, 3, 10, 20);
        let metric = weighted(30, 21);
        let mf = mfpod_fixed(&h, &[1.0], &metric, &MfpodOptions::default()).unwrap();
        for r in 0..=mf.retained {
            let tail: f64 = mf.corrected[r..mf.retained].iter().sum();
            let val = jmf_plus(&mf, &mf.modes.truncated(r)).unwrap();
            assert!((val - tail).abs() < 1e-10 * mf.corrected[0]);
        }
        let cand = orthonormalize(&random_matrix(30, 5, 22), &metric, 1e-12).unwrap();
        let mut brute = 0.0;
        for j in 0..mf.retained {
            let v = mf.modes.column(j);
            let mut proj = 0.0;
            for k in 0..5 {
                proj += metric.inner(&cand.column(k), &v).unwrap().powi(2);
            }
            brute += mf.corrected[j] * (1.0 - proj);
        }
        let val = jmf_plus(&mf, &cand).unwrap();
        assert!((val - brute).abs() < 1e-10 * brute);
        assert!(val >= 0.0);
    }

    #[test]
    fn zero_snapshots_give_empty_basis_with_note() {
        let h = SnapshotHierarchy::two_level(
            DMatrix::zeros(5, 2),
            DMatrix::zeros(5, 2),
            DMatrix::zeros(5, 3),
            1.0,
            0.1,
        )
        .unwrap();
        let mf = mfpod_fixed(&h, &[1.0], &Metric::euclidean(5), &MfpodOptions::default()).unwrap();
        assert_eq!(mf.r, 0);
        assert!(mf.note.is_some());
        assert_eq!(mf.basis().dim(), 0);
    }

    #[test]
    fn rejects_bad_kappa() {
        let h = instance(5, 2, 4, 23);
        let opts = MfpodOptions::default().kappa(1.0);
        assert!(mfpod_fixed(&h, &[1.0], &Metric::euclidean(5), &opts).is_err());
    }

    #[test]
    fn lanczos_path_agrees_with_projected() {
        let h = instance(40, 3, 10, 24);
        let metric = weighted(40, 25);
        let a = mfpod_fixed(&h, &[0.9], &metric, &MfpodOptions::default()).unwrap();
        let b = mfpod_fixed(
            &h,
            &[0.9],
            &metric,
            &MfpodOptions::default().method(LowRankMethod::BlockLanczos),
        )
        .unwrap();
        assert_eq!(a.retained, b.retained);
        for (x, y) in a.corrected.iter().zip(&b.corrected) {
            assert!((x - y).abs() < 1e-8 * a.corrected[0]);
        }
    }
}
