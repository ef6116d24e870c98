//! Weighted inner-product spaces: metrics, orthonormal bases, projections.
//!
//! A [`Metric`] wraps a symmetric positive-definite weight `W` together with
//! its Cholesky factor `F` (`F Fᵀ = W`). Both are stored in banded form so
//! that finite-element mass matrices on fine meshes stay cheap. Everything
//! that needs a Euclidean space (eigensolves, Gram–Schmidt) works in the
//! transformed coordinates `y = Fᵀ x`, where `‖x‖_W = ‖y‖₂`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, MfpodError, Result};

/// Default relative drop tolerance for [`orthonormalize`].
pub const DEFAULT_DROP_TOL: f64 = 1e-12;

/// Tolerance on `‖VᵀWV − I‖_F` accepted by [`Basis::new`].
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Euclidean,
    Weighted,
}

#[derive(Debug)]
struct MetricData {
    kind: MetricKind,
    n: usize,
    bandwidth: usize,
    // Column-major lower band: entry (col + d, col) lives at col * (bw + 1) + d.
    weight: Vec<f64>,
    factor: Vec<f64>,
}

/// Symmetric positive-definite inner-product weight with its Cholesky factor.
///
/// Cloning is cheap; the band storage is shared.
#[derive(Debug, Clone)]
pub struct Metric {
    data: Arc<MetricData>,
}

impl Metric {
    /// The identity metric on ℝⁿ.
    pub fn euclidean(n: usize) -> Self {
        Metric {
            data: Arc::new(MetricData {
                kind: MetricKind::Euclidean,
                n,
                bandwidth: 0,
                weight: vec![1.0; n],
                factor: vec![1.0; n],
            }),
        }
    }

    /// Builds a metric from its lower bands: `bands[d][i] = W[i + d, i]`.
    pub fn from_bands(n: usize, bands: &[Vec<f64>]) -> Result<Self> {
        if bands.is_empty() {
            return Err(MfpodError::InvalidParameter(
                "metric needs at least a diagonal band".into(),
            ));
        }
        let bw = bands.len() - 1;
        let mut weight = vec![0.0; n * (bw + 1)];
        for (d, band) in bands.iter().enumerate() {
            check_dim(n.saturating_sub(d), band.len())?;
            for (col, &value) in band.iter().enumerate() {
                weight[col * (bw + 1) + d] = value;
            }
        }
        Self::from_band_storage(n, bw, weight)
    }

    /// Builds a metric from a dense symmetric positive-definite matrix.
    pub fn from_dense(w: &DMatrix<f64>) -> Result<Self> {
        check_dim(w.nrows(), w.ncols())?;
        let n = w.nrows();
        let scale = w.amax();
        let mut asym = 0.0_f64;
        let mut bw = 0;
        for j in 0..n {
            for i in j..n {
                asym = asym.max((w[(i, j)] - w[(j, i)]).abs());
                if w[(i, j)] != 0.0 || w[(j, i)] != 0.0 {
                    bw = bw.max(i - j);
                }
            }
        }
        if asym > 1e-12 * scale {
            return Err(MfpodError::NotSymmetric {
                asymmetry: if scale > 0.0 { asym / scale } else { asym },
            });
        }
        let mut weight = vec![0.0; n * (bw + 1)];
        for col in 0..n {
            for d in 0..=bw.min(n - 1 - col) {
                weight[col * (bw + 1) + d] = 0.5 * (w[(col + d, col)] + w[(col, col + d)]);
            }
        }
        Self::from_band_storage(n, bw, weight)
    }

    fn from_band_storage(n: usize, bw: usize, weight: Vec<f64>) -> Result<Self> {
        let stride = bw + 1;
        let mut factor = vec![0.0; n * stride];
        // Banded Cholesky, column by column.
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut diag = weight[j * stride];
            for k in lo..j {
                let ljk = factor[k * stride + (j - k)];
                diag -= ljk * ljk;
            }
            if !(diag > 0.0) {
                return Err(MfpodError::NotPositiveDefinite {
                    pivot: j,
                    value: diag,
                });
            }
            let ljj = diag.sqrt();
            factor[j * stride] = ljj;
            for i in (j + 1)..n.min(j + bw + 1) {
                let mut s = weight[j * stride + (i - j)];
                for k in i.saturating_sub(bw)..j {
                    s -= factor[k * stride + (i - k)] * factor[k * stride + (j - k)];
                }
                factor[j * stride + (i - j)] = s / ljj;
            }
        }
        Ok(Metric {
            data: Arc::new(MetricData {
                kind: MetricKind::Weighted,
                n,
                bandwidth: bw,
                weight,
                factor,
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.data.n
    }

    pub fn kind(&self) -> MetricKind {
        self.data.kind
    }

    pub fn is_euclidean(&self) -> bool {
        self.data.kind == MetricKind::Euclidean
    }

    pub fn bandwidth(&self) -> usize {
        self.data.bandwidth
    }

    fn band(&self, store: &[f64]) -> DMatrix<f64> {
        let n = self.data.n;
        let stride = self.data.bandwidth + 1;
        let mut out = DMatrix::zeros(n, n);
        for col in 0..n {
            for d in 0..stride.min(n - col) {
                out[(col + d, col)] = store[col * stride + d];
            }
        }
        out
    }

    /// Dense copy of `W`.
    pub fn weight_dense(&self) -> DMatrix<f64> {
        let lower = self.band(&self.data.weight);
        let mut w = lower.clone();
        for j in 0..w.ncols() {
            for i in (j + 1)..w.nrows() {
                w[(j, i)] = lower[(i, j)];
            }
        }
        w
    }

    /// Dense copy of the lower-triangular factor `F`.
    pub fn factor_dense(&self) -> DMatrix<f64> {
        self.band(&self.data.factor)
    }

    /// `W x`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.data.n, x.len())?;
        if self.is_euclidean() {
            return Ok(x.clone());
        }
        let (n, bw) = (self.data.n, self.data.bandwidth);
        let stride = bw + 1;
        let w = &self.data.weight;
        let mut out = DVector::zeros(n);
        for col in 0..n {
            out[col] += w[col * stride] * x[col];
            for d in 1..stride.min(n - col) {
                let wij = w[col * stride + d];
                out[col + d] += wij * x[col];
                out[col] += wij * x[col + d];
            }
        }
        Ok(out)
    }

    /// `uᵀ W v`, summed in an order that is exactly symmetric in `u` and `v`.
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        check_dim(self.data.n, u.len())?;
        check_dim(self.data.n, v.len())?;
        if self.is_euclidean() {
            return Ok(u.dot(v));
        }
        Ok(self.inner_unchecked(u.as_slice(), v.as_slice()))
    }

    fn inner_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        let (n, bw) = (self.data.n, self.data.bandwidth);
        let stride = bw + 1;
        let w = &self.data.weight;
        let mut acc = 0.0;
        for col in 0..n {
            acc += w[col * stride] * (u[col] * v[col]);
            for d in 1..stride.min(n - col) {
                acc += w[col * stride + d] * (u[col + d] * v[col] + u[col] * v[col + d]);
            }
        }
        acc
    }

    pub fn norm_sq(&self, u: &DVector<f64>) -> Result<f64> {
        self.inner(u, u)
    }

    /// Transformed coordinates `y = Fᵀ x`.
    pub fn to_coords(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.data.n, x.len())?;
        let mut y = x.clone();
        self.to_coords_in_place(y.as_mut_slice());
        Ok(y)
    }

    /// Column-wise `Fᵀ X`.
    pub fn to_coords_mat(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.data.n, x.nrows())?;
        let mut y = x.clone();
        if !self.is_euclidean() {
            for mut col in y.column_iter_mut() {
                self.to_coords_in_place(col.as_mut_slice());
            }
        }
        Ok(y)
    }

    fn to_coords_in_place(&self, x: &mut [f64]) {
        if self.is_euclidean() {
            return;
        }
        let (n, bw) = (self.data.n, self.data.bandwidth);
        let stride = bw + 1;
        let f = &self.data.factor;
        // y_j = Σ_{i ≥ j} F[i, j] x_i; increasing j only reads x_i with i ≥ j.
        for j in 0..n {
            let mut s = 0.0;
            for d in 0..stride.min(n - j) {
                s += f[j * stride + d] * x[j + d];
            }
            x[j] = s;
        }
    }

    /// Original coordinates `x = F⁻ᵀ y`.
    pub fn from_coords(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.data.n, y.len())?;
        let mut x = y.clone();
        self.to_original_in_place(x.as_mut_slice());
        Ok(x)
    }

    /// Column-wise `F⁻ᵀ Y`.
    pub fn from_coords_mat(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.data.n, y.nrows())?;
        let mut x = y.clone();
        if !self.is_euclidean() {
            for mut col in x.column_iter_mut() {
                self.to_original_in_place(col.as_mut_slice());
            }
        }
        Ok(x)
    }

    fn to_original_in_place(&self, y: &mut [f64]) {
        if self.is_euclidean() {
            return;
        }
        let (n, bw) = (self.data.n, self.data.bandwidth);
        let stride = bw + 1;
        let f = &self.data.factor;
        for j in (0..n).rev() {
            let mut s = y[j];
            for d in 1..stride.min(n - j) {
                s -= f[j * stride + d] * y[j + d];
            }
            y[j] = s / f[j * stride];
        }
    }
}

/// `uᵀ W v`.
pub fn inner(u: &DVector<f64>, v: &DVector<f64>, metric: &Metric) -> Result<f64> {
    metric.inner(u, v)
}

/// Matrix whose columns are orthonormal under a metric (`VᵀWV = I`).
#[derive(Debug, Clone)]
pub struct Basis {
    vectors: DMatrix<f64>,
    metric: Metric,
}

impl Basis {
    /// Wraps `vectors`, checking the orthonormality invariant.
    pub fn new(vectors: DMatrix<f64>, metric: Metric) -> Result<Self> {
        check_dim(metric.dim(), vectors.nrows())?;
        let basis = Basis { vectors, metric };
        let deviation = basis.orthonormality_error();
        if deviation > ORTHONORMALITY_TOL {
            return Err(MfpodError::NotOrthonormal { deviation });
        }
        Ok(basis)
    }

    /// Basis from orthonormal transformed coordinates `Q` (`QᵀQ = I`).
    pub(crate) fn from_coords(coords: &DMatrix<f64>, metric: Metric) -> Result<Self> {
        let vectors = metric.from_coords_mat(coords)?;
        Ok(Basis { vectors, metric })
    }

    pub fn empty(metric: Metric) -> Self {
        Basis {
            vectors: DMatrix::zeros(metric.dim(), 0),
            metric,
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.vectors.column(j).into_owned()
    }

    /// Basis vectors in transformed coordinates (`FᵀV`, Euclidean-orthonormal).
    pub fn coords(&self) -> DMatrix<f64> {
        self.metric
            .to_coords_mat(&self.vectors)
            .expect("basis rows match its metric")
    }

    /// First `r` vectors (all of them if `r ≥ dim`).
    pub fn truncated(&self, r: usize) -> Basis {
        let r = r.min(self.dim());
        Basis {
            vectors: self.vectors.columns(0, r).into_owned(),
            metric: self.metric.clone(),
        }
    }

    /// `‖VᵀWV − I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        let q = self.coords();
        let mut g = q.transpose() * &q;
        for i in 0..g.nrows() {
            g[(i, i)] -= 1.0;
        }
        g.norm()
    }
}

/// `Π_V u = V Vᵀ W u`.
pub fn project(basis: &Basis, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(basis.ambient_dim(), u.len())?;
    if basis.dim() == 0 {
        return Ok(DVector::zeros(u.len()));
    }
    let wu = basis.metric.apply(u)?;
    let coeffs = basis.vectors.tr_mul(&wu);
    Ok(&basis.vectors * coeffs)
}

/// Modified Gram–Schmidt with one reorthogonalization pass, under `metric`.
///
/// Columns whose residual norm drops below `tol` times the largest input
/// column norm are discarded, so the output dimension may be smaller than
/// the input column count.
pub fn orthonormalize(vectors: &DMatrix<f64>, metric: &Metric, tol: f64) -> Result<Basis> {
    if !(tol > 0.0) {
        return Err(MfpodError::InvalidParameter(format!(
            "drop tolerance must be positive, got {tol}"
        )));
    }
    let y = metric.to_coords_mat(vectors)?;
    let q = orthonormal_columns(&y, tol);
    Basis::from_coords(&q, metric.clone())
}

/// Euclidean MGS with reorthogonalization and relative dropping.
pub(crate) fn orthonormal_columns(y: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = y.nrows();
    let scale = y.column_iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    let mut q: Vec<f64> = Vec::new();
    let mut k = 0;
    if scale == 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let mut w = vec![0.0; n];
    for col in y.column_iter() {
        w.copy_from_slice(col.as_slice());
        for _pass in 0..2 {
            for j in 0..k {
                let qj = &q[j * n..(j + 1) * n];
                let h = dot(qj, &w);
                axpy(-h, qj, &mut w);
            }
        }
        let nrm = dot(&w, &w).sqrt();
        if nrm > tol * scale {
            q.extend(w.iter().map(|x| x / nrm));
            k += 1;
        }
    }
    DMatrix::from_vec(n, k, q)
}

/// Orthonormalizes `y` against the columns of `q` (assumed orthonormal) and
/// within itself, keeping only columns with residual above `tol * scale`.
pub(crate) fn extend_orthonormal(
    q: &DMatrix<f64>,
    y: &DMatrix<f64>,
    tol: f64,
    scale: f64,
) -> DMatrix<f64> {
    let n = y.nrows();
    let mut out: Vec<f64> = Vec::new();
    let mut k = 0;
    let mut w = vec![0.0; n];
    for col in y.column_iter() {
        w.copy_from_slice(col.as_slice());
        for _pass in 0..2 {
            for qj in q.column_iter() {
                let h = dot(qj.as_slice(), &w);
                axpy(-h, qj.as_slice(), &mut w);
            }
            for j in 0..k {
                let oj = &out[j * n..(j + 1) * n];
                let h = dot(oj, &w);
                axpy(-h, oj, &mut w);
            }
        }
        let nrm = dot(&w, &w).sqrt();
        if nrm > tol * scale {
            out.extend(w.iter().map(|x| x / nrm));
            k += 1;
        }
    }
    DMatrix::from_vec(n, k, out)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
