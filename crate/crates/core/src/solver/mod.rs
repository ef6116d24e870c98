//! Symmetric eigensolvers.
//!
//! [`dense_symmetric_eig`] handles explicit matrices. [`lowrank_eig`] handles
//! implicit operators of low rank, either by Rayleigh–Ritz on the span of a
//! seed block that covers the operator range (the default) or by block
//! Lanczos with full reorthogonalization.

mod lanczos;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, MfpodError, Result};
use crate::space::{orthonormal_columns, DEFAULT_DROP_TOL};

/// Largest matrix accepted by [`dense_symmetric_eig`].
pub const DENSE_CAP: usize = 4096;

/// Default relative tolerance for eigenvalue truncation and residuals.
pub const DEFAULT_EIG_TOL: f64 = 1e-10;

const RESIDUAL_FLOOR: f64 = 1e-12;

/// Symmetric linear operator given by its action.
pub trait LinearAction: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;

    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim(), x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            out.set_column(j, &self.apply(&col.into_owned()));
        }
        out
    }

    /// Upper bound on the rank (number of columns backing the action).
    fn rank_bound(&self) -> usize;
}

/// Explicit symmetric matrix seen as a [`LinearAction`].
#[derive(Debug, Clone)]
pub struct DenseAction {
    matrix: DMatrix<f64>,
    rank_bound: usize,
}

impl DenseAction {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let rank_bound = matrix.nrows();
        DenseAction { matrix, rank_bound }
    }

    pub fn with_rank_bound(matrix: DMatrix<f64>, rank_bound: usize) -> Self {
        DenseAction { matrix, rank_bound }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearAction for DenseAction {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.matrix * x
    }

    fn rank_bound(&self) -> usize {
        self.rank_bound
    }
}

/// Eigenpairs sorted by descending signed eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// One orthonormal eigenvector per column.
    pub vectors: DMatrix<f64>,
    /// `‖A v_j − λ_j v_j‖₂` per pair.
    pub residuals: Vec<f64>,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn empty(n: usize) -> Self {
        EigenPairs {
            values: Vec::new(),
            vectors: DMatrix::zeros(n, 0),
            residuals: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowRankMethod {
    /// Rayleigh–Ritz on the full span of the seed block.
    Projected,
    /// Block Lanczos with full reorthogonalization.
    BlockLanczos,
}

#[derive(Debug, Clone, Copy)]
pub struct LowRankOptions {
    pub want: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub method: LowRankMethod,
}

impl LowRankOptions {
    pub fn new(want: usize) -> Self {
        LowRankOptions {
            want,
            tol: DEFAULT_EIG_TOL,
            max_iter: 500,
            method: LowRankMethod::Projected,
        }
    }

    pub fn method(mut self, method: LowRankMethod) -> Self {
        self.method = method;
        self
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Relative residual accepted for a converged pair; never below
    /// roundoff level even when every nonzero eigenvalue is requested.
    pub(crate) fn residual_bound(&self) -> f64 {
        self.tol.max(RESIDUAL_FLOOR)
    }
}

/// Full spectrum of a symmetric matrix, descending signed order.
///
/// Each eigenvector's largest-magnitude entry is made positive.
pub fn dense_symmetric_eig(matrix: &DMatrix<f64>) -> Result<EigenPairs> {
    dense_symmetric_eig_capped(matrix, DENSE_CAP)
}

pub fn dense_symmetric_eig_capped(matrix: &DMatrix<f64>, cap: usize) -> Result<EigenPairs> {
    check_dim(matrix.nrows(), matrix.ncols())?;
    let n = matrix.nrows();
    if n > cap {
        return Err(MfpodError::SizeCap { size: n, cap });
    }
    if n == 0 {
        return Ok(EigenPairs::empty(0));
    }
    let scale = matrix.amax();
    let mut asym = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * scale {
        return Err(MfpodError::NotSymmetric {
            asymmetry: asym / scale,
        });
    }
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (k, &idx) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        fix_sign(&mut v);
        vectors.set_column(k, &v);
        values.push(eig.eigenvalues[idx]);
    }
    let residuals = column_residuals(&(matrix * &vectors), &vectors, &values);
    Ok(EigenPairs {
        values,
        vectors,
        residuals,
    })
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
pub(crate) fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

fn column_residuals(av: &DMatrix<f64>, v: &DMatrix<f64>, values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(j, &lam)| (av.column(j) - v.column(j) * lam).norm())
        .collect()
}

/// Eigenpairs of a low-rank symmetric action.
///
/// `init_block` must span the operator range (for MFPOD: the stacked
/// snapshot matrix in transformed coordinates). Returns, among the `want`
/// pairs of largest `|λ|`, those with `|λ| > tol · max|λ|`, sorted by
/// descending signed value. Both signs are captured.
pub fn lowrank_eig(
    action: &dyn LinearAction,
    init_block: &DMatrix<f64>,
    opts: &LowRankOptions,
) -> Result<EigenPairs> {
    check_dim(action.dim(), init_block.nrows())?;
    if opts.want > action.rank_bound().max(1) {
        return Err(MfpodError::InvalidParameter(format!(
            "want = {} exceeds the rank bound {}",
            opts.want,
            action.rank_bound()
        )));
    }
    if opts.want == 0 {
        return Ok(EigenPairs::empty(action.dim()));
    }
    match opts.method {
        LowRankMethod::Projected => projected_eig(action, init_block, opts),
        LowRankMethod::BlockLanczos => lanczos::block_lanczos(action, init_block, opts),
    }
}

fn projected_eig(
    action: &dyn LinearAction,
    init_block: &DMatrix<f64>,
    opts: &LowRankOptions,
) -> Result<EigenPairs> {
    let q = orthonormal_columns(init_block, DEFAULT_DROP_TOL);
    if q.ncols() == 0 {
        return Ok(EigenPairs::empty(action.dim()));
    }
    let aq = action.apply_block(&q);
    let ritz = RitzSet::compute(&q, &aq)?;
    let picked = ritz.select(opts.want, opts.tol);
    let out = ritz.extract(&picked);
    let bound = opts.residual_bound() * ritz.max_abs();
    let worst = out.residuals.iter().cloned().fold(0.0_f64, f64::max);
    if worst > bound.max(f64::MIN_POSITIVE) && ritz.max_abs() > 0.0 {
        return Err(MfpodError::NotConverged {
            iterations: 1,
            worst_residual: worst,
            residuals: out.residuals,
        });
    }
    Ok(out)
}

/// Rayleigh–Ritz data for an orthonormal basis `Q` and its image `AQ`.
struct RitzSet<'a> {
    q: &'a DMatrix<f64>,
    aq: &'a DMatrix<f64>,
    values: Vec<f64>,
    coeffs: DMatrix<f64>,
}

impl<'a> RitzSet<'a> {
    fn compute(q: &'a DMatrix<f64>, aq: &'a DMatrix<f64>) -> Result<Self> {
        let t = q.tr_mul(aq);
        let t = (&t + t.transpose()) * 0.5;
        let eig = dense_symmetric_eig(&t)?;
        Ok(RitzSet {
            q,
            aq,
            values: eig.values,
            coeffs: eig.vectors,
        })
    }

    fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Indices of the top `want` values by `|λ|` above the relative cut,
    /// returned in descending signed order.
    fn select(&self, want: usize, tol: f64) -> Vec<usize> {
        let max_abs = self.max_abs();
        let mut by_abs: Vec<usize> = (0..self.values.len()).collect();
        by_abs.sort_by(|&a, &b| {
            self.values[b]
                .abs()
                .partial_cmp(&self.values[a].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut picked: Vec<usize> = by_abs
            .into_iter()
            .take(want)
            .filter(|&i| self.values[i].abs() > tol * max_abs)
            .collect();
        // `values` is already signed-descending, so index order is signed order.
        picked.sort_unstable();
        picked
    }

    fn residuals(&self, picked: &[usize]) -> Vec<f64> {
        picked
            .iter()
            .map(|&i| {
                let z = self.coeffs.column(i);
                (self.aq * z - self.q * z * self.values[i]).norm()
            })
            .collect()
    }

    fn extract(&self, picked: &[usize]) -> EigenPairs {
        let n = self.q.nrows();
        let mut vectors = DMatrix::zeros(n, picked.len());
        for (k, &i) in picked.iter().enumerate() {
            let mut v = self.q * self.coeffs.column(i);
            fix_sign(&mut v);
            vectors.set_column(k, &v);
        }
        EigenPairs {
            values: picked.iter().map(|&i| self.values[i]).collect(),
            vectors,
            residuals: self.residuals(picked),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
        random_matrix(n, n, seed).qr().q()
    }

    /// Rank-r indefinite symmetric matrix X D Xᵀ with mixed-sign diagonal D.
    fn indefinite_lowrank(n: usize, r: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let x = random_matrix(n, r, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let d = DMatrix::from_diagonal(&DVector::from_fn(r, |i, _| {
            let mag = rng.random_range(0.5..3.0);
            if i % 3 == 2 {
                -mag
            } else {
                mag
            }
        }));
        (&x * d * x.transpose(), x)
    }

    #[test]
    fn diagonal_matrix() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let e = dense_symmetric_eig(&a).unwrap();
        assert_eq!(e.values, vec![2.0, 1.0]);
        assert_eq!(e.vectors.column(0).as_slice(), &[0.0, 1.0]);
        assert_eq!(e.vectors.column(1).as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn rejects_asymmetric_and_oversized_input() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            dense_symmetric_eig(&a),
            Err(MfpodError::NotSymmetric { .. })
        ));
        let a = DMatrix::<f64>::identity(5, 5);
        assert!(matches!(
            dense_symmetric_eig_capped(&a, 4),
            Err(MfpodError::SizeCap { .. })
        ));
    }

    #[test]
    fn similarity_preserves_spectrum() {
        let b = random_matrix(20, 20, 1);
        let a = &b + b.transpose();
        let q = random_orthogonal(20, 2);
        let qa = &q * &a * q.transpose();
        let e1 = dense_symmetric_eig(&a).unwrap();
        let e2 = dense_symmetric_eig(&qa).unwrap();
        for (x, y) in e1.values.iter().zip(&e2.values) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn reconstructs_random_symmetric_matrix() {
        let b = random_matrix(50, 50, 7);
        let a = &b + b.transpose();
        let e = dense_symmetric_eig(&a).unwrap();
        let lam = DMatrix::from_diagonal(&DVector::from_vec(e.values.clone()));
        let rec = &e.vectors * lam * e.vectors.transpose();
        assert!((rec - &a).norm() < 1e-9);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let b = random_matrix(8, 8, 3);
        let e = dense_symmetric_eig(&(&b + b.transpose())).unwrap();
        for v in e.vectors.column_iter() {
            let imax = v.iamax();
            assert!(v[imax] > 0.0);
        }
    }

    fn check_against_dense(method: LowRankMethod) {
        for seed in 0..30 {
            let (a, x) = indefinite_lowrank(200, 10, 100 + seed);
            let dense = dense_symmetric_eig(&a).unwrap();
            let action = DenseAction::with_rank_bound(a.clone(), 10);
            let opts = LowRankOptions::new(10).method(method);
            let low = lowrank_eig(&action, &x, &opts).unwrap();
            assert_eq!(low.len(), 10, "seed {seed}");
            // dense spectrum has 190 ≈ 0 values; the 10 nonzero ones split by sign
            let mut nonzero: Vec<f64> = dense
                .values
                .iter()
                .cloned()
                .filter(|v| v.abs() > 1e-8 * dense.values[0].abs())
                .collect();
            nonzero.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert_eq!(nonzero.len(), 10);
            for (l, d) in low.values.iter().zip(&nonzero) {
                assert!((l - d).abs() <= 1e-8 * d.abs(), "seed {seed}: {l} vs {d}");
            }
            let max_abs = low.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for r in &low.residuals {
                assert!(*r <= 1e-10 * max_abs);
            }
            let g = low.vectors.transpose() * &low.vectors;
            assert!((g - DMatrix::identity(10, 10)).norm() < 1e-9);
        }
    }

    #[test]
    fn projected_matches_dense_on_indefinite_lowrank() {
        check_against_dense(LowRankMethod::Projected);
    }

    #[test]
    fn lanczos_matches_dense_on_indefinite_lowrank() {
        check_against_dense(LowRankMethod::BlockLanczos);
    }

    #[test]
    fn rank_one_action() {
        let u = DVector::from_column_slice(random_matrix(30, 1, 5).as_slice());
        let a = &u * u.transpose();
        let action = DenseAction::with_rank_bound(a, 1);
        let seed = DMatrix::from_column_slice(30, 1, u.as_slice());
        for method in [LowRankMethod::Projected, LowRankMethod::BlockLanczos] {
            let e = lowrank_eig(&action, &seed, &LowRankOptions::new(1).method(method)).unwrap();
            assert_eq!(e.len(), 1);
            assert!((e.values[0] - u.norm_squared()).abs() < 1e-12 * u.norm_squared());
            let v = e.vectors.column(0);
            let target = &u / u.norm();
            let aligned = (v - &target).norm().min((v + &target).norm());
            assert!(aligned < 1e-12);
        }
    }

    #[test]
    fn seed_spanning_range_recovers_rank_many_values() {
        for r in [1, 3, 7, 12] {
            let (a, x) = indefinite_lowrank(60, r, 900 + r as u64);
            let action = DenseAction::with_rank_bound(a, r);
            for method in [LowRankMethod::Projected, LowRankMethod::BlockLanczos] {
                let e = lowrank_eig(&action, &x, &LowRankOptions::new(r).method(method)).unwrap();
                assert_eq!(e.len(), r);
            }
        }
    }

    #[test]
    fn finds_negative_eigenvalues() {
        let mut u = DVector::zeros(40);
        let mut w = DVector::zeros(40);
        u[3] = 2.0;
        u[7] = 1.0;
        w[10] = 1.5;
        w[20] = -0.5;
        let a = &u * u.transpose() - &w * w.transpose();
        let mut seed = DMatrix::zeros(40, 2);
        seed.set_column(0, &u);
        seed.set_column(1, &w);
        let action = DenseAction::with_rank_bound(a, 2);
        for method in [LowRankMethod::Projected, LowRankMethod::BlockLanczos] {
            let e = lowrank_eig(&action, &seed, &LowRankOptions::new(2).method(method)).unwrap();
            assert_eq!(e.len(), 2);
            assert!((e.values[0] - u.norm_squared()).abs() < 1e-9);
            assert!((e.values[1] + w.norm_squared()).abs() < 1e-9);
        }
    }

    #[test]
    fn want_above_rank_bound_is_rejected() {
        let action = DenseAction::with_rank_bound(DMatrix::identity(4, 4), 2);
        let seed = DMatrix::identity(4, 4);
        assert!(lowrank_eig(&action, &seed, &LowRankOptions::new(3)).is_err());
    }

    #[test]
    fn projected_reports_seed_missing_the_range() {
        let (a, x) = indefinite_lowrank(30, 4, 77);
        let action = DenseAction::with_rank_bound(a, 4);
        let partial = x.columns(0, 2).into_owned();
        let err = lowrank_eig(&action, &partial, &LowRankOptions::new(2)).unwrap_err();
        assert!(matches!(err, MfpodError::NotConverged { .. }));
    }

    #[test]
    fn lanczos_reports_non_convergence() {
        let (a, x) = indefinite_lowrank(80, 20, 5);
        let action = DenseAction::with_rank_bound(a, 20);
        let mut opts = LowRankOptions::new(20).method(LowRankMethod::BlockLanczos);
        opts.max_iter = 0;
        assert!(matches!(
            lowrank_eig(&action, &x, &opts),
            Err(MfpodError::NotConverged { .. })
        ));
    }
}
