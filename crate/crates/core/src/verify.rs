//! Empirical checks of the convergence theory: Frobenius (Hilbert–Schmidt)
//! error of Ĉ_mf against a surrogate truth, eigenvalue-sum MSE and principal
//! angle alignment, all as functions of m₀ at a fixed sample ratio.

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MfpodError, Result};
use crate::mfpod::{build_operator, MfOperator};
use crate::models::{sample_parameters, Fidelity, FidelityPair};
use crate::snapshots::SnapshotHierarchy;
use crate::solver::{dense_symmetric_eig, DENSE_CAP};
use crate::space::Basis;

/// Smallest accepted surrogate-truth sample count.
pub const MIN_REFERENCE_SIZE: usize = 10_000;

/// Smallest accepted number of repeats per grid point.
pub const MIN_REPEATS: usize = 30;

const CHUNK: usize = 1000;

/// `‖Ĉ_mf − C*‖_F` in transformed coordinates; `reference` is `FᵀC*F⁻ᵀ`.
pub fn hs_error(op: &MfOperator, reference: &DMatrix<f64>) -> Result<f64> {
    let n = op.metric().dim();
    if n > DENSE_CAP {
        return Err(MfpodError::SizeCap {
            size: n,
            cap: DENSE_CAP,
        });
    }
    check_dim(n, reference.nrows())?;
    check_dim(n, reference.ncols())?;
    Ok((op.transformed_matrix() - reference).norm())
}

/// `r − ‖VᵀWV*‖²_F`, the sum of squared sines of the principal angles.
pub fn subspace_alignment(v: &Basis, vstar: &Basis) -> Result<f64> {
    check_dim(v.dim(), vstar.dim())?;
    check_dim(v.ambient_dim(), vstar.ambient_dim())?;
    let overlap = v.coords().tr_mul(&vstar.coords());
    Ok((v.dim() as f64 - overlap.norm_squared()).max(0.0))
}

/// Surrogate for the true covariance operator from many high-fidelity
/// states at midpoint-equispaced parameters, in transformed coordinates.
#[derive(Debug, Clone)]
pub struct SurrogateTruth {
    pub matrix: DMatrix<f64>,
    pub eigvals: Vec<f64>,
    pub eigvecs: DMatrix<f64>,
    pub size: usize,
}

impl SurrogateTruth {
    pub fn build(pair: &dyn FidelityPair, size: usize) -> Result<Self> {
        if size < MIN_REFERENCE_SIZE {
            return Err(MfpodError::InvalidParameter(format!(
                "surrogate truth needs at least {MIN_REFERENCE_SIZE} samples, got {size}"
            )));
        }
        let n = pair.dim();
        if n > DENSE_CAP {
            return Err(MfpodError::SizeCap {
                size: n,
                cap: DENSE_CAP,
            });
        }
        let (lo, hi) = pair.parameter_range();
        let step = (hi - lo) / size as f64;
        let mut matrix = DMatrix::zeros(n, n);
        for start in (0..size).step_by(CHUNK) {
            let thetas: Vec<f64> = (start..(start + CHUNK).min(size))
                .map(|i| lo + (i as f64 + 0.5) * step)
                .collect();
            let y = pair
                .metric()
                .to_coords_mat(&pair.snapshots(&thetas, Fidelity::High)?)?;
            matrix.gemm(1.0 / size as f64, &y, &y.transpose(), 1.0);
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let eig = dense_symmetric_eig(&matrix)?;
        Ok(SurrogateTruth {
            matrix,
            eigvals: eig.values,
            eigvecs: eig.vectors,
            size,
        })
    }

    /// Spectral gap `λ_r* − λ_{r+1}*`.
    pub fn gap(&self, r: usize) -> f64 {
        let at = |j: usize| self.eigvals.get(j).copied().unwrap_or(0.0);
        if r == 0 {
            return f64::INFINITY;
        }
        at(r - 1) - at(r)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorStudyConfig {
    /// Integer ratio q = m₁/m₀; q = 1 is plain Monte Carlo.
    pub q: usize,
    pub m0_grid: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Dimension for eigenvalue sums and alignments.
    pub r: usize,
}

impl OperatorStudyConfig {
    pub fn new(q: usize, m0_grid: Vec<usize>, repeats: usize, seed: u64) -> Self {
        OperatorStudyConfig {
            q,
            m0_grid,
            repeats,
            seed,
            alpha: 1.0,
            r: 3,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.repeats < MIN_REPEATS {
            return Err(MfpodError::InvalidParameter(format!(
                "need at least {MIN_REPEATS} repeats per grid point, got {}",
                self.repeats
            )));
        }
        if self.q == 0 {
            return Err(MfpodError::InvalidParameter(
                "ratio q must be positive".into(),
            ));
        }
        if self.m0_grid.is_empty()
            || self.m0_grid[0] == 0
            || self.m0_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(MfpodError::InvalidParameter(format!(
                "m0 grid must be positive and strictly increasing: {:?}",
                self.m0_grid
            )));
        }
        Ok(())
    }
}

/// Statistics of one realization of Ĉ_mf.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Realization {
    pub hs_sq: f64,
    /// `Σ_{j≤r} λ_j` of the estimate (signed order).
    pub eig_sum: f64,
    /// `Σ_j ‖v_j* − Π_V v_j*‖²`.
    pub sine_sq_sum: f64,
    /// `Σ_j ‖v_j − Π_{V*} v_j‖²`, the same quantity seen from the other side.
    pub sine_sq_sum_swapped: f64,
    /// `Σ_{j≤r} λ_j / Σ_j λ_j`.
    pub energy_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub m0: usize,
    pub m1: usize,
    pub mean_hs_sq: f64,
    pub eig_sum_mse: f64,
    pub mean_sine_sq_sum_sq: f64,
    pub max_symmetry_gap: f64,
    pub median_energy_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorStudy {
    pub config: OperatorStudyConfig,
    pub points: Vec<GridPoint>,
    pub reference_eig_sum: f64,
    pub reference_energy_ratio: f64,
    pub spectral_gap: f64,
    pub lambda1: f64,
    #[serde(skip)]
    pub realizations: Vec<Vec<Realization>>,
}

fn realization_seed(master: u64, grid: usize, repeat: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((grid as u64) << 32) | repeat as u64);
    rng.next_u64()
}

fn top_r(eigvecs: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    eigvecs.columns(0, r.min(eigvecs.ncols())).into_owned()
}

fn sine_sum(from: &DMatrix<f64>, onto: &DMatrix<f64>) -> f64 {
    let res = from - onto * onto.tr_mul(from);
    res.norm_squared()
}

fn realize(
    pair: &dyn FidelityPair,
    truth: &SurrogateTruth,
    cfg: &OperatorStudyConfig,
    m0: usize,
    seed: u64,
) -> Result<Realization> {
    let m1 = cfg.q * m0;
    let thetas = sample_parameters(m1, seed, pair.parameter_range())?;
    let costs = pair.costs();
    let s0 = pair.snapshots(&thetas[..m0], Fidelity::High)?;
    let (hierarchy, alpha) = if cfg.q == 1 {
        (SnapshotHierarchy::single(s0, costs.c0)?, vec![])
    } else {
        let lf = pair.snapshots(&thetas, Fidelity::Low)?;
        let shared = lf.columns(0, m0).into_owned();
        let extra = lf.columns(m0, m1 - m0).into_owned();
        (
            SnapshotHierarchy::two_level(s0, shared, extra, costs.c0, costs.c1)?,
            vec![cfg.alpha],
        )
    };
    let op = build_operator(&hierarchy, &alpha, pair.metric())?;
    let hs_sq = hs_error(&op, &truth.matrix)?.powi(2);
    let eig = dense_symmetric_eig(&op.transformed_matrix())?;
    let r = cfg.r.min(eig.values.len());
    let eig_sum: f64 = eig.values[..r].iter().sum();
    let trace: f64 = eig.values.iter().sum();
    let v = top_r(&eig.vectors, r);
    let vstar = top_r(&truth.eigvecs, r);
    Ok(Realization {
        hs_sq,
        eig_sum,
        sine_sq_sum: sine_sum(&vstar, &v),
        sine_sq_sum_swapped: sine_sum(&v, &vstar),
        energy_ratio: if trace != 0.0 { eig_sum / trace } else { 0.0 },
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = xs.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    if k == 0 {
        0.0
    } else {
        s / k as f64
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

/// Repeated draws of Ĉ_mf over the m₀ grid, compared to `truth`.
pub fn operator_study(
    pair: &dyn FidelityPair,
    truth: &SurrogateTruth,
    cfg: &OperatorStudyConfig,
) -> Result<OperatorStudy> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.m0_grid.len())
        .flat_map(|g| (0..cfg.repeats).map(move |k| (g, k)))
        .collect();
    let results: Vec<Realization> = jobs
        .par_iter()
        .map(|&(g, k)| {
            realize(
                pair,
                truth,
                cfg,
                cfg.m0_grid[g],
                realization_seed(cfg.seed, g, k),
            )
        })
        .collect::<Result<_>>()?;
    let realizations: Vec<Vec<Realization>> =
        results.chunks(cfg.repeats).map(|c| c.to_vec()).collect();

    let r = cfg.r.min(truth.eigvals.len());
    let reference_eig_sum: f64 = truth.eigvals[..r].iter().sum();
    let trace: f64 = truth.eigvals.iter().sum();
    let points = cfg
        .m0_grid
        .iter()
        .zip(&realizations)
        .map(|(&m0, rs)| GridPoint {
            m0,
            m1: cfg.q * m0,
            mean_hs_sq: mean(rs.iter().map(|x| x.hs_sq)),
            eig_sum_mse: mean(rs.iter().map(|x| (x.eig_sum - reference_eig_sum).powi(2))),
            mean_sine_sq_sum_sq: mean(rs.iter().map(|x| x.sine_sq_sum.powi(2))),
            max_symmetry_gap: rs
                .iter()
                .map(|x| (x.sine_sq_sum - x.sine_sq_sum_swapped).abs())
                .fold(0.0, f64::max),
            median_energy_ratio: median(rs.iter().map(|x| x.energy_ratio).collect()),
        })
        .collect();
    Ok(OperatorStudy {
        config: cfg.clone(),
        points,
        reference_eig_sum,
        reference_energy_ratio: if trace != 0.0 {
            reference_eig_sum / trace
        } else {
            0.0
        },
        spectral_gap: truth.gap(r),
        lambda1: truth.eigvals.first().copied().unwrap_or(0.0),
        realizations,
    })
}

impl OperatorStudy {
    /// γ̂ = mean over the grid of `m₀ · E‖Ĉ − C*‖²_F`.
    pub fn gamma_hat(&self) -> f64 {
        mean(self.points.iter().map(|p| p.m0 as f64 * p.mean_hs_sq))
    }

    pub fn convergence(&self) -> ConvergenceStudyResult {
        let hs: Vec<f64> = self.points.iter().map(|p| p.mean_hs_sq).collect();
        let scale = self.lambda1.max(f64::MIN_POSITIVE);
        let exact = hs.iter().all(|&e| e <= 1e-24 * scale * scale);
        let slope = if exact {
            None
        } else {
            Some(loglog_slope(&self.config.m0_grid, &hs))
        };
        ConvergenceStudyResult {
            m0_grid: self.config.m0_grid.clone(),
            hs_errors: hs,
            gamma_hat: self.gamma_hat(),
            slope,
            exact,
            repeats: self.config.repeats,
            ratio: self.config.q,
        }
    }

    pub fn eigenvalue_sums(&self) -> EigenSumStudy {
        let gamma = self.gamma_hat();
        let r = self.config.r as f64;
        EigenSumStudy {
            m0_grid: self.config.m0_grid.clone(),
            r: self.config.r,
            mse: self.points.iter().map(|p| p.eig_sum_mse).collect(),
            bound: self
                .points
                .iter()
                .map(|p| r * gamma / p.m0 as f64)
                .collect(),
            gamma_hat: gamma,
        }
    }

    pub fn alignment(&self) -> AlignmentResult {
        let gamma = self.gamma_hat();
        let r = self.config.r as f64;
        let gap = self.spectral_gap;
        AlignmentResult {
            m0_grid: self.config.m0_grid.clone(),
            mean_sine_sq_sum_sq: self.points.iter().map(|p| p.mean_sine_sq_sum_sq).collect(),
            spectral_gap: gap,
            bound: self
                .points
                .iter()
                .map(|p| 2.0 * r * gamma / (p.m0 as f64 * gap * gap))
                .collect(),
            max_symmetry_gap: self
                .points
                .iter()
                .map(|p| p.max_symmetry_gap)
                .fold(0.0, f64::max),
        }
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[usize], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|&v| (v as f64).ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceStudyResult {
    pub m0_grid: Vec<usize>,
    /// Mean squared Frobenius error per m₀.
    pub hs_errors: Vec<f64>,
    pub gamma_hat: f64,
    /// Fitted log-log slope; absent when every error vanishes.
    pub slope: Option<f64>,
    pub exact: bool,
    pub repeats: usize,
    pub ratio: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenSumStudy {
    pub m0_grid: Vec<usize>,
    pub r: usize,
    pub mse: Vec<f64>,
    /// `r γ̂ / m₀`.
    pub bound: Vec<f64>,
    pub gamma_hat: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub m0_grid: Vec<usize>,
    /// Mean of `(Σ_j sin²β_j)²` per m₀.
    pub mean_sine_sq_sum_sq: Vec<f64>,
    pub spectral_gap: f64,
    /// `2 r γ̂ / (m₀ gap²)`.
    pub bound: Vec<f64>,
    pub max_symmetry_gap: f64,
}

/// Frobenius convergence of Ĉ_mf with α = 1 at ratio q.
pub fn convergence_study(
    pair: &dyn FidelityPair,
    truth: &SurrogateTruth,
    q: usize,
    m0_grid: Vec<usize>,
    repeats: usize,
    seed: u64,
) -> Result<ConvergenceStudyResult> {
    let cfg = OperatorStudyConfig::new(q, m0_grid, repeats, seed);
    Ok(operator_study(pair, truth, &cfg)?.convergence())
}

/// MSE of the top-r eigenvalue sum with the bound `r γ̂ / m₀`.
pub fn eigenvalue_sum_mse(
    pair: &dyn FidelityPair,
    truth: &SurrogateTruth,
    q: usize,
    r: usize,
    m0_grid: Vec<usize>,
    repeats: usize,
    seed: u64,
) -> Result<EigenSumStudy> {
    let mut cfg = OperatorStudyConfig::new(q, m0_grid, repeats, seed);
    cfg.r = r;
    if r == 0 {
        cfg.validate()?;
        let k = cfg.m0_grid.len();
        return Ok(EigenSumStudy {
            m0_grid: cfg.m0_grid,
            r: 0,
            mse: vec![0.0; k],
            bound: vec![0.0; k],
            gamma_hat: 0.0,
        });
    }
    Ok(operator_study(pair, truth, &cfg)?.eigenvalue_sums())
}
