//! Single-fidelity POD by the method of snapshots.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::solver::dense_symmetric_eig;
use crate::space::{orthonormal_columns, Basis, Metric, DEFAULT_DROP_TOL};

/// Default relative floor below which POD modes are discarded.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-10;

/// Snapshot count above which the span is compressed before the eigensolve.
const COMPRESSION_MIN_SNAPSHOTS: usize = 128;

#[derive(Debug, Clone)]
pub struct PodResult {
    /// λ₁ ≥ … ≥ λ_m ≥ 0 of the scaled Gramian `(1/m)[(u_i, u_j)_W]`.
    pub eigvals: Vec<f64>,
    /// Modes with `λ_j > eig_floor · λ₁`.
    pub basis: Basis,
    pub gramian_size: usize,
}

impl PodResult {
    /// Number of retained modes.
    pub fn rank(&self) -> usize {
        self.basis.dim()
    }
}

/// Method of snapshots on the columns of `snapshots`.
///
/// Modes are `v_j = S w_j / √(m λ_j)`, followed by one Gram–Schmidt sweep in
/// mode order to restore orthonormality lost to roundoff in weak modes.
pub fn pod(snapshots: &DMatrix<f64>, metric: &Metric, eig_floor: f64) -> Result<PodResult> {
    check_dim(metric.dim(), snapshots.nrows())?;
    let m = snapshots.ncols();
    let y = metric.to_coords_mat(snapshots)?;
    let empty = || PodResult {
        eigvals: Vec::new(),
        basis: Basis::empty(metric.clone()),
        gramian_size: m,
    };
    if m == 0 || y.amax() == 0.0 {
        return Ok(empty());
    }
    if m > COMPRESSION_MIN_SNAPSHOTS {
        return compressed_pod(&y, metric, eig_floor);
    }
    let gram = y.tr_mul(&y) / m as f64;
    let eig = dense_symmetric_eig(&gram)?;
    let lambda1 = eig.values[0].max(0.0);
    let eigvals: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
    let keep = eigvals
        .iter()
        .take_while(|&&l| l > eig_floor * lambda1 && l > 0.0)
        .count();
    let mut modes = DMatrix::zeros(y.nrows(), keep);
    for (j, l) in eigvals.iter().take(keep).enumerate() {
        let v: DVector<f64> = &y * eig.vectors.column(j) / (m as f64 * l).sqrt();
        modes.set_column(j, &v);
    }
    let modes = orthonormal_columns(&modes, f64::MIN_POSITIVE);
    let basis = Basis::from_coords(&modes, metric.clone())?;
    Ok(PodResult {
        eigvals,
        basis,
        gramian_size: m,
    })
}

/// Large snapshot sets: eigenpairs of `B Bᵀ / m` with `Y = Q B` and `Q` an
/// orthonormal basis of the snapshot span. Eigenvalues past the span
/// dimension are reported as zero.
fn compressed_pod(y: &DMatrix<f64>, metric: &Metric, eig_floor: f64) -> Result<PodResult> {
    let m = y.ncols();
    let q = orthonormal_columns(y, DEFAULT_DROP_TOL);
    let b = q.tr_mul(y);
    let eig = dense_symmetric_eig(&(&b * b.transpose() / m as f64))?;
    let mut eigvals: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
    eigvals.resize(m, 0.0);
    let lambda1 = eigvals.first().copied().unwrap_or(0.0);
    let keep = eigvals
        .iter()
        .take_while(|&&l| l > eig_floor * lambda1 && l > 0.0)
        .count();
    let modes = orthonormal_columns(&(&q * eig.vectors.columns(0, keep)), f64::MIN_POSITIVE);
    Ok(PodResult {
        eigvals,
        basis: Basis::from_coords(&modes, metric.clone())?,
        gramian_size: m,
    })
}

/// `(1/m) Σ_i ‖u_i − Π_V u_i‖²_W` with residuals formed explicitly.
pub fn pod_projection_error(basis: &Basis, snapshots: &DMatrix<f64>) -> Result<f64> {
    let energies = residual_energies(basis, snapshots)?;
    if energies.is_empty() {
        return Ok(0.0);
    }
    Ok(energies.iter().sum::<f64>() / energies.len() as f64)
}

/// Per-column squared residual norms `‖u_i − Π_V u_i‖²_W`.
pub fn residual_energies(basis: &Basis, snapshots: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_dim(basis.ambient_dim(), snapshots.nrows())?;
    let y = basis.metric().to_coords_mat(snapshots)?;
    let q = basis.coords();
    Ok(residual_energies_in_coords(&q, &y))
}

pub(crate) fn residual_energies_in_coords(q: &DMatrix<f64>, y: &DMatrix<f64>) -> Vec<f64> {
    if q.ncols() == 0 {
        return y.column_iter().map(|c| c.norm_squared()).collect();
    }
    let coeffs = q.tr_mul(y);
    let res = y - q * coeffs;
    res.column_iter().map(|c| c.norm_squared()).collect()
}
