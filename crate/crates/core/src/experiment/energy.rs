//! Captured energy of a basis relative to a reference snapshot set.

use nalgebra::DMatrix;

use crate::error::{check_dim, MfpodError, Result};
use crate::models::{Fidelity, FidelityPair};
use crate::pod::PodResult;
use crate::snapshots::hstack;
use crate::solver::dense_symmetric_eig;
use crate::space::{extend_orthonormal, Basis, Metric, DEFAULT_DROP_TOL};

const CHUNK: usize = 500;

/// `E(V) = 100 Σ_i ‖Π_V u_i‖²_W / Σ_i ‖u_i‖²_W` over the columns of `reference`.
pub fn captured_energy(basis: &Basis, reference: &DMatrix<f64>, metric: &Metric) -> Result<f64> {
    check_dim(metric.dim(), reference.nrows())?;
    check_dim(metric.dim(), basis.ambient_dim())?;
    let y = metric.to_coords_mat(reference)?;
    let total = y.norm_squared();
    if total <= 0.0 {
        return Err(MfpodError::InvalidParameter(
            "reference snapshots carry no energy".into(),
        ));
    }
    if basis.dim() == 0 {
        return Ok(0.0);
    }
    let captured = basis.coords().tr_mul(&y).norm_squared();
    Ok((100.0 * captured / total).clamp(0.0, 100.0))
}

/// Compressed reference set: an orthonormal basis `Q` of the snapshot span
/// and the Gram matrix `G = Σ_i (Qᵀy_i)(Qᵀy_i)ᵀ`, so that captured energies
/// cost O(n·k·r) without keeping the snapshots.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    metric: Metric,
    q: DMatrix<f64>,
    gram: DMatrix<f64>,
    total: f64,
    size: usize,
}

impl ReferenceSet {
    /// High-fidelity states at `size` equispaced parameters, endpoints included.
    pub fn build(pair: &dyn FidelityPair, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(MfpodError::InvalidParameter(
                "reference set needs at least one snapshot".into(),
            ));
        }
        let (lo, hi) = pair.parameter_range();
        let theta = |i: usize| {
            if size == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (size - 1) as f64
            }
        };
        let metric = pair.metric().clone();
        let n = metric.dim();
        let mut q = DMatrix::zeros(n, 0);
        let mut gram = DMatrix::zeros(0, 0);
        let mut total = 0.0;
        let mut scale = 0.0_f64;
        for start in (0..size).step_by(CHUNK) {
            let thetas: Vec<f64> = (start..(start + CHUNK).min(size)).map(theta).collect();
            let y = metric.to_coords_mat(&pair.snapshots(&thetas, Fidelity::High)?)?;
            scale = y.column_iter().map(|c| c.norm()).fold(scale, f64::max);
            let fresh = extend_orthonormal(&q, &y, DEFAULT_DROP_TOL, scale);
            if fresh.ncols() > 0 {
                q = hstack(&[&q, &fresh]);
                let k = q.ncols();
                let mut grown = DMatrix::zeros(k, k);
                let old = gram.nrows();
                grown.view_mut((0, 0), (old, old)).copy_from(&gram);
                gram = grown;
            }
            let b = q.tr_mul(&y);
            gram.gemm(1.0, &b, &b.transpose(), 1.0);
            total += y.norm_squared();
        }
        if total <= 0.0 {
            return Err(MfpodError::InvalidParameter(
                "reference snapshots carry no energy".into(),
            ));
        }
        Ok(ReferenceSet {
            metric,
            q,
            gram: (&gram + gram.transpose()) * 0.5,
            total,
            size,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Dimension of the retained snapshot span.
    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// Captured energy of `basis` in percent.
    pub fn captured_energy(&self, basis: &Basis) -> Result<f64> {
        check_dim(self.metric.dim(), basis.ambient_dim())?;
        if basis.dim() == 0 {
            return Ok(0.0);
        }
        let p = basis.coords().tr_mul(&self.q);
        let captured = (&p * &self.gram * p.transpose()).trace();
        Ok((100.0 * captured / self.total).clamp(0.0, 100.0))
    }

    /// Captured energy of every prefix `V_1 ⊂ … ⊂ V_{max_dim}` of `modes`;
    /// prefixes longer than `modes` reuse all of it.
    pub fn energy_curve(&self, modes: &Basis, max_dim: usize) -> Result<Vec<f64>> {
        check_dim(self.metric.dim(), modes.ambient_dim())?;
        let k = modes.dim().min(max_dim);
        let p = modes.truncated(k).coords().tr_mul(&self.q);
        let pg = &p * &self.gram;
        let mut out = Vec::with_capacity(max_dim);
        let mut acc = 0.0;
        for j in 0..max_dim {
            if j < k {
                acc += pg.row(j).dot(&p.row(j));
            }
            out.push((100.0 * acc / self.total).clamp(0.0, 100.0));
        }
        Ok(out)
    }

    /// POD of the reference snapshots, computed from the compressed Gram matrix.
    pub fn pod(&self) -> Result<PodResult> {
        let m = self.size as f64;
        let eig = dense_symmetric_eig(&(&self.gram / m))?;
        let eigvals: Vec<f64> = eig.values.iter().map(|l| l.max(0.0)).collect();
        let coords = &self.q * &eig.vectors;
        Ok(PodResult {
            basis: Basis::from_coords(&coords, self.metric.clone())?,
            eigvals,
            gramian_size: self.size,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AdvDiffConfig, AdvDiffPair};
    use crate::pod::{pod, DEFAULT_EIG_FLOOR};
    use crate::space::orthonormalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn captured_energy_cases() {
        let metric = Metric::euclidean(10);
        let s = random_matrix(10, 4, 1);
        let full = pod(&s, &metric, DEFAULT_EIG_FLOOR).unwrap();
        assert!((captured_energy(&full.basis, &s, &metric).unwrap() - 100.0).abs() < 1e-8);
        assert_eq!(
            captured_energy(&Basis::empty(metric.clone()), &s, &metric).unwrap(),
            0.0
        );
        let e: Vec<f64> = (0..=4)
            .map(|r| captured_energy(&full.basis.truncated(r), &s, &metric).unwrap())
            .collect();
        assert!(e.windows(2).all(|w| w[1] >= w[0]));
        assert!(captured_energy(&full.basis, &DMatrix::zeros(10, 3), &metric).is_err());
    }

    #[test]
    fn compressed_reference_matches_direct_evaluation() {
        let pair = AdvDiffPair::new(AdvDiffConfig::default().with_sizes(129, 17)).unwrap();
        let size = 1200;
        let reference = ReferenceSet::build(&pair, size).unwrap();
        let thetas: Vec<f64> = (0..size)
            .map(|i| 1.0 + 99.0 * i as f64 / (size - 1) as f64)
            .collect();
        let snaps = pair.snapshots(&thetas, Fidelity::High).unwrap();
        let metric = pair.metric();
        for seed in 0..3 {
            let b = orthonormalize(&random_matrix(129, 4, seed), metric, 1e-12).unwrap();
            let direct = captured_energy(&b, &snaps, metric).unwrap();
            let fast = reference.captured_energy(&b).unwrap();
            assert!((direct - fast).abs() < 1e-9, "{direct} vs {fast}");
        }
        let ref_pod = reference.pod().unwrap();
        assert!((reference.captured_energy(&ref_pod.basis).unwrap() - 100.0).abs() < 1e-8);
        let curve = reference.energy_curve(&ref_pod.basis, 5).unwrap();
        for (r, e) in curve.iter().enumerate() {
            let direct = captured_energy(&ref_pod.basis.truncated(r + 1), &snaps, metric).unwrap();
            assert!((e - direct).abs() < 1e-9);
        }
        let p = pod(&snaps, metric, DEFAULT_EIG_FLOOR).unwrap();
        for j in 0..5 {
            assert!((p.eigvals[j] - ref_pod.eigvals[j]).abs() < 1e-10 * p.eigvals[0]);
        }
    }

    #[test]
    fn energy_curve_saturates_past_available_modes() {
        let pair = AdvDiffPair::new(AdvDiffConfig::default().with_sizes(65, 17)).unwrap();
        let reference = ReferenceSet::build(&pair, 50).unwrap();
        let b = reference.pod().unwrap().basis.truncated(2);
        let curve = reference.energy_curve(&b, 4).unwrap();
        assert_eq!(curve[1], curve[2]);
        assert_eq!(curve[2], curve[3]);
    }
}
