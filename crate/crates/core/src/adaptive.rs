//! Greedy MFPOD with the control-variate weight re-estimated on the current
//! residuals before every extracted mode (two-model case).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MfpodError, Result};
use crate::estimator::{estimate_profile, optimal_alpha_with_floor, sample_covariance};
use crate::mfpod::{
    build_operator, finalize, Correction, CorrectionBranch, MfBasis, DEFAULT_ORTHO_TOL,
};
use crate::pod::residual_energies;
use crate::snapshots::SnapshotHierarchy;
use crate::solver::dense_symmetric_eig;
use crate::space::{extend_orthonormal, orthonormal_columns, Basis, Metric, DEFAULT_DROP_TOL};

/// Relative floor under which the low-fidelity residual variance counts as zero.
const VARIANCE_FLOOR: f64 = 1e-24;

/// Relative decrease of the high-fidelity residual below which an iteration stagnates.
const STAGNATION_TOL: f64 = 1e-14;

/// How the weight evolves across iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// Re-estimate α from the current residuals every iteration.
    Adaptive,
    /// Estimate α once on the empty basis and keep it.
    FrozenAtFirst,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub kappa: f64,
    /// Stop once `‖S₀ − Π_W S₀‖_F ≤ residual_tol · ‖S₀‖_F`.
    pub residual_tol: f64,
    pub weight: WeightRule,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions {
            kappa: 0.9999,
            residual_tol: 1e-10,
            weight: WeightRule::Adaptive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The high-fidelity snapshots are captured up to the tolerance.
    Converged,
    /// Every direction of the stacked snapshot span has been extracted.
    RankExhausted,
    /// An iteration failed to reduce the high-fidelity residual.
    Stagnated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub corrected: f64,
    /// `‖S₀ − Π_W S₀‖_F` after adding this mode.
    pub residual: f64,
    pub corrected_flag: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveTrace {
    pub records: Vec<IterationRecord>,
    pub initial_residual: f64,
    pub stop: StopReason,
}

/// α₁*(W) from the residual energies of the shared samples; zero when the
/// low-fidelity residual variance vanishes.
pub fn adaptive_weight(basis: &Basis, hierarchy: &SnapshotHierarchy) -> Result<f64> {
    check_two_level(hierarchy)?;
    let profile = estimate_profile(basis, hierarchy)?;
    let lf = hierarchy.level(1).shared();
    let empty = Basis::empty(basis.metric().clone());
    let scale = residual_energies(&empty, lf)?
        .into_iter()
        .fold(0.0_f64, f64::max);
    Ok(optimal_alpha_with_floor(&profile, VARIANCE_FLOOR * scale * scale)[0])
}

fn check_two_level(hierarchy: &SnapshotHierarchy) -> Result<()> {
    if hierarchy.low_fidelity_levels() != 1 {
        return Err(MfpodError::InvalidParameter(format!(
            "adaptive weights need exactly one low-fidelity level, got {}",
            hierarchy.low_fidelity_levels()
        )));
    }
    Ok(())
}

fn weight_from_energies(x: &[f64], y: &[f64], scale: f64) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let var = sample_covariance(y, y);
    if var <= VARIANCE_FLOOR * scale * scale {
        return 0.0;
    }
    sample_covariance(x, y) / var
}

fn column_energies(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.norm_squared()).collect()
}

/// Residual `B − Z Zᵀ B` for orthonormal `Z`.
fn deflate(b: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    if z.ncols() == 0 {
        return b.clone();
    }
    b - z * z.tr_mul(b)
}

/// Greedy MFPOD: each iteration updates α, then takes the eigenpair of
/// largest |λ| orthogonal to the modes found so far.
///
/// Runs in coordinates of an orthonormal basis of the stacked snapshot span,
/// which contains every eigenvector of the operator.
pub fn mfpod_adaptive(
    hierarchy: &SnapshotHierarchy,
    metric: &Metric,
    opts: &AdaptiveOptions,
) -> Result<(MfBasis, AdaptiveTrace)> {
    check_two_level(hierarchy)?;
    if !(opts.residual_tol > 0.0) {
        return Err(MfpodError::InvalidParameter(format!(
            "residual tolerance must be positive, got {}",
            opts.residual_tol
        )));
    }
    if !(opts.kappa > 0.0 && opts.kappa < 1.0) {
        return Err(MfpodError::InvalidParameter(format!(
            "kappa must lie in (0, 1), got {}",
            opts.kappa
        )));
    }
    let m = hierarchy.sample_sizes();
    let (m0, m1) = (m[0], m[1]);
    let op = build_operator(hierarchy, &[0.0], metric)?;
    let q = orthonormal_columns(&op.stacked_coords(), DEFAULT_DROP_TOL);
    let k = q.ncols();
    let reduced = op.reduced(&q);
    let b0 = reduced.blocks[0].1.clone();
    let b1 = reduced.blocks[1].1.clone();
    let lf_scale = column_energies(&b1).into_iter().fold(0.0_f64, f64::max);

    let initial_residual = op.hf_coords().norm();
    let target = opts.residual_tol * initial_residual;
    let identity = DMatrix::<f64>::identity(k, k);

    let mut z = DMatrix::<f64>::zeros(k, 0);
    let mut raw = Vec::new();
    let mut corrections: Vec<Correction> = Vec::new();
    let mut records = Vec::new();
    let mut prev = initial_residual;
    let mut frozen: Option<f64> = None;
    let mut stop = if initial_residual <= 0.0 || k == 0 {
        Some(StopReason::Converged)
    } else {
        None
    };

    while stop.is_none() {
        let alpha = match opts.weight {
            WeightRule::Fixed(a) => a,
            WeightRule::FrozenAtFirst if frozen.is_some() => frozen.unwrap_or(0.0),
            _ => {
                let x = column_energies(&deflate(&b0, &z));
                let y = column_energies(&deflate(&b1, &z));
                weight_from_energies(&x, &y, lf_scale)
            }
        };
        frozen.get_or_insert(alpha);
        let a = reduced.reweighted(alpha, m0, m1).matrix();

        let complement = extend_orthonormal(&z, &identity, 1e-8, 1.0);
        if complement.ncols() == 0 {
            stop = Some(StopReason::RankExhausted);
            break;
        }
        let t = complement.tr_mul(&(&a * &complement));
        let t = (&t + t.transpose()) * 0.5;
        let eig = dense_symmetric_eig(&t)?;
        let pick = (0..eig.values.len())
            .max_by(|&i, &j| {
                eig.values[i]
                    .abs()
                    .partial_cmp(&eig.values[j].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(j.cmp(&i))
            })
            .unwrap_or(0);
        let lambda = eig.values[pick];
        let v: DVector<f64> = &complement * eig.vectors.column(pick);
        let v = &v / v.norm();
        let correction = correct(lambda, &v, &b0, &identity);

        z = crate::snapshots::hstack(&[&z, &DMatrix::from_column_slice(k, 1, v.as_slice())]);
        let residual = deflate(&b0, &z).norm();
        records.push(IterationRecord {
            iteration: records.len() + 1,
            alpha,
            lambda,
            corrected: correction.value,
            residual,
            corrected_flag: correction.branch != CorrectionBranch::Positive,
        });
        raw.push(lambda);
        corrections.push(correction);

        if residual <= target {
            stop = Some(StopReason::Converged);
        } else if z.ncols() >= k {
            stop = Some(StopReason::RankExhausted);
        } else if residual > (1.0 - STAGNATION_TOL) * prev {
            stop = Some(StopReason::Stagnated);
        }
        prev = residual;
    }

    let coords = &q * &z;
    let basis = finalize(raw, coords, corrections, metric, opts.kappa)?;
    Ok((
        basis,
        AdaptiveTrace {
            records,
            initial_residual,
            stop: stop.unwrap_or(StopReason::Converged),
        },
    ))
}

fn correct(lambda: f64, v: &DVector<f64>, b0: &DMatrix<f64>, span: &DMatrix<f64>) -> Correction {
    crate::mfpod::correct_in_coords(lambda, v, b0, span, DEFAULT_ORTHO_TOL)
}
