//! Parameterized 1D advection–diffusion on (0, 1) with linear finite
//! elements, at a fine (high-fidelity) and a nested coarse (low-fidelity)
//! resolution, plus counter-based parameter sampling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfpodError, Result};
use crate::space::Metric;

/// Sign convention of the convection term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvectionForm {
    /// `−(1/θ) u″ − u′ = 1`; solved by `1 − x` for every θ.
    Literal,
    /// `−(1/θ) u″ + u′ = 1`; a boundary layer of width ~1/θ at x = 1.
    BoundaryLayer,
}

impl AdvectionForm {
    fn velocity(self) -> f64 {
        match self {
            AdvectionForm::Literal => -1.0,
            AdvectionForm::BoundaryLayer => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvDiffConfig {
    pub theta_min: f64,
    pub theta_max: f64,
    pub n_hf: usize,
    pub n_lf: usize,
    pub form: AdvectionForm,
}

impl Default for AdvDiffConfig {
    fn default() -> Self {
        AdvDiffConfig {
            theta_min: 1.0,
            theta_max: 100.0,
            n_hf: 4097,
            n_lf: 33,
            form: AdvectionForm::BoundaryLayer,
        }
    }
}

impl AdvDiffConfig {
    /// Same model at other resolutions.
    pub fn with_sizes(mut self, n_hf: usize, n_lf: usize) -> Self {
        self.n_hf = n_hf;
        self.n_lf = n_lf;
        self
    }

    pub fn with_form(mut self, form: AdvectionForm) -> Self {
        self.form = form;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_min > 0.0 && self.theta_min <= self.theta_max && self.theta_max.is_finite())
        {
            return Err(MfpodError::InvalidParameter(format!(
                "invalid parameter range [{}, {}]",
                self.theta_min, self.theta_max
            )));
        }
        if self.n_lf < 3 || self.n_hf < self.n_lf {
            return Err(MfpodError::InvalidParameter(format!(
                "mesh sizes must satisfy 3 <= n_lf <= n_hf, got {} and {}",
                self.n_lf, self.n_hf
            )));
        }
        nesting_ratio(self.n_lf, self.n_hf)?;
        Ok(())
    }

    pub fn costs(&self) -> ModelCosts {
        ModelCosts {
            c0: 1.0,
            c1: self.n_lf as f64 / self.n_hf as f64,
        }
    }
}

/// Per-sample costs normalized by the high-fidelity solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelCosts {
    pub c0: f64,
    pub c1: f64,
}

fn nesting_ratio(n_coarse: usize, n_fine: usize) -> Result<usize> {
    if n_coarse < 2 || n_fine < n_coarse || !(n_fine - 1).is_multiple_of(n_coarse - 1) {
        return Err(MfpodError::InvalidParameter(format!(
            "meshes with {n_coarse} and {n_fine} nodes do not nest"
        )));
    }
    Ok((n_fine - 1) / (n_coarse - 1))
}

/// `count` i.i.d. draws from U[θ_min, θ_max]; draw `i` depends only on
/// `(seed, i)`, so shorter draws are prefixes of longer ones.
pub fn sample_parameters(count: usize, seed: u64, range: (f64, f64)) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(MfpodError::InvalidParameter(format!(
            "invalid parameter range [{lo}, {hi}]"
        )));
    }
    Ok((0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            lo + (hi - lo) * rng.random::<f64>()
        })
        .collect())
}

/// Nodal P1 Galerkin solution with `u(0) = 1`, `u(1) = 0` on `n` uniform nodes.
pub fn solve_adv_diff(theta: f64, n: usize, form: AdvectionForm) -> Result<DVector<f64>> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(MfpodError::InvalidParameter(format!(
            "θ must be positive, got {theta}"
        )));
    }
    if n < 3 {
        return Err(MfpodError::InvalidParameter(format!(
            "need at least 3 nodes, got {n}"
        )));
    }
    let h = 1.0 / (n - 1) as f64;
    let eps = 1.0 / theta;
    let b = form.velocity();
    let lower = -eps / h - b / 2.0;
    let diag = 2.0 * eps / h;
    let upper = -eps / h + b / 2.0;

    let k = n - 2;
    let mut rhs = vec![h; k];
    rhs[0] -= lower * 1.0;
    // Thomas sweep
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    let mut pivot = diag;
    for i in 0..k {
        if i > 0 {
            pivot = diag - lower * c[i - 1];
        }
        if pivot.abs() <= f64::EPSILON * diag.abs() {
            return Err(MfpodError::Singular { row: i + 1 });
        }
        c[i] = upper / pivot;
        let prev = if i > 0 { d[i - 1] } else { 0.0 };
        d[i] = (rhs[i] - lower * prev) / pivot;
    }
    let mut u = DVector::zeros(n);
    u[0] = 1.0;
    u[n - 1] = 0.0;
    let mut next = 0.0;
    for i in (0..k).rev() {
        let v = d[i] - c[i] * next;
        u[i + 1] = v;
        next = v;
    }
    Ok(u)
}

/// Exact solution of the continuous problem at `x`.
pub fn exact_solution(theta: f64, x: f64, form: AdvectionForm) -> f64 {
    match form {
        AdvectionForm::Literal => 1.0 - x,
        AdvectionForm::BoundaryLayer => {
            // u = A + B e^{θx} + x with B = −2/(e^θ − 1), A = 1 − B
            let b_exp = -2.0 * (theta * (x - 1.0)).exp() / (1.0 - (-theta).exp());
            let b = -2.0 * (-theta).exp() / (1.0 - (-theta).exp());
            1.0 - b + b_exp + x
        }
    }
}

/// Consistent P1 mass matrix on `n` uniform nodes of (0, 1).
pub fn mass_matrix(n: usize) -> Result<Metric> {
    if n < 2 {
        return Err(MfpodError::InvalidParameter(format!(
            "need at least 2 nodes, got {n}"
        )));
    }
    let h = 1.0 / (n - 1) as f64;
    let mut diag = vec![2.0 * h / 3.0; n];
    diag[0] = h / 3.0;
    diag[n - 1] = h / 3.0;
    Metric::from_bands(n, &[diag, vec![h / 6.0; n - 1]])
}

/// Piecewise-linear interpolation of coarse nodal values onto `n_fine` nodes.
pub fn prolong(coarse: &DVector<f64>, n_fine: usize) -> Result<DVector<f64>> {
    let ratio = nesting_ratio(coarse.len(), n_fine)?;
    let mut fine = DVector::zeros(n_fine);
    for (i, f) in fine.iter_mut().enumerate() {
        let cell = i / ratio;
        let offset = i % ratio;
        *f = if offset == 0 {
            coarse[cell]
        } else {
            let t = offset as f64 / ratio as f64;
            (1.0 - t) * coarse[cell] + t * coarse[cell + 1]
        };
    }
    Ok(fine)
}

/// Injection of fine nodal values onto `n_coarse` nested nodes.
pub fn restrict(fine: &DVector<f64>, n_coarse: usize) -> Result<DVector<f64>> {
    let ratio = nesting_ratio(n_coarse, fine.len())?;
    Ok(DVector::from_fn(n_coarse, |i, _| fine[i * ratio]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    High,
    Low,
}

/// State at θ in the fine space; low fidelity is solved coarse and prolonged.
pub fn snapshot(theta: f64, fidelity: Fidelity, config: &AdvDiffConfig) -> Result<DVector<f64>> {
    match fidelity {
        Fidelity::High => solve_adv_diff(theta, config.n_hf, config.form),
        Fidelity::Low => prolong(
            &solve_adv_diff(theta, config.n_lf, config.form)?,
            config.n_hf,
        ),
    }
}

/// A high/low fidelity model pair sharing one state space and metric.
pub trait FidelityPair: Sync {
    fn dim(&self) -> usize;
    fn metric(&self) -> &Metric;
    fn costs(&self) -> ModelCosts;
    fn parameter_range(&self) -> (f64, f64);
    fn solve(&self, theta: f64, fidelity: Fidelity) -> Result<DVector<f64>>;

    /// Columns `solve(θ_i)` for every θ_i, computed in parallel.
    fn snapshots(&self, thetas: &[f64], fidelity: Fidelity) -> Result<DMatrix<f64>> {
        let cols: Vec<DVector<f64>> = thetas
            .par_iter()
            .map(|&t| self.solve(t, fidelity))
            .collect::<Result<_>>()?;
        let mut out = DMatrix::zeros(self.dim(), cols.len());
        for (j, c) in cols.iter().enumerate() {
            out.set_column(j, c);
        }
        Ok(out)
    }
}

/// The advection–diffusion pair with the fine-mesh mass matrix as metric.
#[derive(Debug, Clone)]
pub struct AdvDiffPair {
    config: AdvDiffConfig,
    metric: Metric,
}

impl AdvDiffPair {
    pub fn new(config: AdvDiffConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdvDiffPair {
            metric: mass_matrix(config.n_hf)?,
            config,
        })
    }

    pub fn config(&self) -> &AdvDiffConfig {
        &self.config
    }
}

impl FidelityPair for AdvDiffPair {
    fn dim(&self) -> usize {
        self.config.n_hf
    }

    fn metric(&self) -> &Metric {
        &self.metric
    }

    fn costs(&self) -> ModelCosts {
        self.config.costs()
    }

    fn parameter_range(&self) -> (f64, f64) {
        (self.config.theta_min, self.config.theta_max)
    }

    fn solve(&self, theta: f64, fidelity: Fidelity) -> Result<DVector<f64>> {
        snapshot(theta, fidelity, &self.config)
    }
}
