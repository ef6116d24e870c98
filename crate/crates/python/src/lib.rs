//! Python bindings. Matrices cross the boundary as nested lists of rows
//! (`numpy.ndarray.tolist()` layout); snapshots are columns.

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use mfpod::adaptive::{mfpod_adaptive as adaptive_core, AdaptiveOptions, WeightRule};
use mfpod::experiment::{self, SplitPolicy, StudyConfig, WeightMode};
use mfpod::models::{mass_matrix, sample_parameters as sample_core};
use mfpod::{AdvDiffConfig, AdvectionForm, Fidelity, FidelityPair, MfpodOptions};

create_exception!(mfpod_py, MfpodError, PyValueError);

fn err(e: mfpod::MfpodError) -> PyErr {
    MfpodError::new_err(format!("{}: {e}", e.kind()))
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(MfpodError::new_err("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Inner-product metric `(u, v) = uᵀ W v`.
#[pyclass(name = "Metric", module = "mfpod_py", frozen)]
struct PyMetric {
    inner: mfpod::Metric,
}

#[pymethods]
impl PyMetric {
    #[staticmethod]
    fn euclidean(n: usize) -> Self {
        PyMetric {
            inner: mfpod::Metric::euclidean(n),
        }
    }

    /// P1 mass matrix on `n` uniform nodes of (0, 1).
    #[staticmethod]
    fn mass(n: usize) -> PyResult<Self> {
        Ok(PyMetric {
            inner: mass_matrix(n).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_dense(w: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyMetric {
            inner: mfpod::Metric::from_dense(&to_matrix(w)?).map_err(err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn inner_product(&self, u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
        self.inner.inner(&u.into(), &v.into()).map_err(err)
    }
}

/// Result of single-fidelity POD.
#[pyclass(name = "PodResult", module = "mfpod_py", frozen)]
struct PyPod {
    #[pyo3(get)]
    eigvals: Vec<f64>,
    #[pyo3(get)]
    rank: usize,
    modes: DMatrix<f64>,
}

#[pymethods]
impl PyPod {
    /// First `r` modes (all retained by default) as an n × r list of rows.
    #[pyo3(signature = (r=None))]
    fn modes(&self, r: Option<usize>) -> Vec<Vec<f64>> {
        let r = r.unwrap_or(self.rank).min(self.rank);
        to_rows(&self.modes.columns(0, r).into_owned())
    }
}

/// Multifidelity modes in descending corrected-eigenvalue order.
#[pyclass(name = "MfBasis", module = "mfpod_py", frozen)]
struct PyMfBasis {
    #[pyo3(get)]
    raw_eigvals: Vec<f64>,
    #[pyo3(get)]
    corrected: Vec<f64>,
    #[pyo3(get)]
    branches: Vec<String>,
    #[pyo3(get)]
    retained: usize,
    #[pyo3(get)]
    r: usize,
    #[pyo3(get)]
    energy_fraction: f64,
    #[pyo3(get)]
    alpha: Vec<f64>,
    modes: DMatrix<f64>,
}

#[pymethods]
impl PyMfBasis {
    /// First `r` modes (the κ-selected dimension by default).
    #[pyo3(signature = (r=None))]
    fn modes(&self, r: Option<usize>) -> Vec<Vec<f64>> {
        let r = r.unwrap_or(self.r).min(self.retained);
        to_rows(&self.modes.columns(0, r).into_owned())
    }

    fn __repr__(&self) -> String {
        format!(
            "MfBasis(r={}, retained={}, energy_fraction={:.6})",
            self.r, self.retained, self.energy_fraction
        )
    }
}

impl PyMfBasis {
    fn new(mf: mfpod::MfBasis, alpha: Vec<f64>) -> Self {
        PyMfBasis {
            branches: mf
                .branches
                .iter()
                .map(|b| format!("{b:?}").to_lowercase())
                .collect(),
            modes: mf.modes.vectors().clone(),
            raw_eigvals: mf.raw_eigvals,
            corrected: mf.corrected,
            retained: mf.retained,
            r: mf.r,
            energy_fraction: mf.energy_fraction,
            alpha,
        }
    }
}

/// The advection–diffusion model pair on nested meshes.
#[pyclass(name = "AdvDiffPair", module = "mfpod_py", frozen)]
struct PyAdvDiffPair {
    inner: mfpod::AdvDiffPair,
}

#[pymethods]
impl PyAdvDiffPair {
    #[new]
    #[pyo3(signature = (n_hf=4097, n_lf=33, form="boundary_layer"))]
    fn new(n_hf: usize, n_lf: usize, form: &str) -> PyResult<Self> {
        let form = match form {
            "boundary_layer" => AdvectionForm::BoundaryLayer,
            "literal" => AdvectionForm::Literal,
            other => return Err(MfpodError::new_err(format!("unknown form '{other}'"))),
        };
        let config = AdvDiffConfig::default()
            .with_sizes(n_hf, n_lf)
            .with_form(form);
        Ok(PyAdvDiffPair {
            inner: mfpod::AdvDiffPair::new(config).map_err(err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// `(c0, c1)`.
    #[getter]
    fn costs(&self) -> (f64, f64) {
        let c = self.inner.costs();
        (c.c0, c.c1)
    }

    fn metric(&self) -> PyMetric {
        PyMetric {
            inner: self.inner.metric().clone(),
        }
    }

    fn sample_parameters(&self, count: usize, seed: u64) -> PyResult<Vec<f64>> {
        sample_core(count, seed, self.inner.parameter_range()).map_err(err)
    }

    /// States at `thetas` as an n × len(thetas) list of rows; `fidelity` is
    /// "high" or "low" (low states are interpolated to the fine mesh).
    #[pyo3(signature = (thetas, fidelity="high"))]
    fn snapshots(
        &self,
        py: Python<'_>,
        thetas: Vec<f64>,
        fidelity: &str,
    ) -> PyResult<Vec<Vec<f64>>> {
        let fidelity = match fidelity {
            "high" => Fidelity::High,
            "low" => Fidelity::Low,
            other => return Err(MfpodError::new_err(format!("unknown fidelity '{other}'"))),
        };
        let s = py
            .detach(|| self.inner.snapshots(&thetas, fidelity))
            .map_err(err)?;
        Ok(to_rows(&s))
    }
}

#[pyfunction]
#[pyo3(signature = (snapshots, metric, eig_floor=mfpod::pod::DEFAULT_EIG_FLOOR))]
fn pod(snapshots: Vec<Vec<f64>>, metric: &PyMetric, eig_floor: f64) -> PyResult<PyPod> {
    let p = mfpod::pod(&to_matrix(snapshots)?, &metric.inner, eig_floor).map_err(err)?;
    Ok(PyPod {
        rank: p.rank(),
        modes: p.basis.vectors().clone(),
        eigvals: p.eigvals,
    })
}

fn hierarchy(
    s0: Vec<Vec<f64>>,
    s1: Vec<Vec<f64>>,
    s_plus: Vec<Vec<f64>>,
    costs: (f64, f64),
) -> PyResult<mfpod::SnapshotHierarchy> {
    mfpod::SnapshotHierarchy::two_level(
        to_matrix(s0)?,
        to_matrix(s1)?,
        to_matrix(s_plus)?,
        costs.0,
        costs.1,
    )
    .map_err(err)
}

/// MFPOD with a fixed weight `alpha`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (s0, s1, s_plus, alpha, metric, kappa=0.9999, costs=(1.0, 0.1)))]
fn mfpod_fixed(
    py: Python<'_>,
    s0: Vec<Vec<f64>>,
    s1: Vec<Vec<f64>>,
    s_plus: Vec<Vec<f64>>,
    alpha: f64,
    metric: &PyMetric,
    kappa: f64,
    costs: (f64, f64),
) -> PyResult<PyMfBasis> {
    let h = hierarchy(s0, s1, s_plus, costs)?;
    let opts = MfpodOptions::default().kappa(kappa);
    let mf = py
        .detach(|| mfpod::mfpod_fixed(&h, &[alpha], &metric.inner, &opts))
        .map_err(err)?;
    Ok(PyMfBasis::new(mf, vec![alpha]))
}

/// Greedy MFPOD; `weight` is "adaptive", "frozen" or a number.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (s0, s1, s_plus, metric, kappa=0.9999, weight="adaptive", costs=(1.0, 0.1)))]
fn mfpod_adaptive(
    py: Python<'_>,
    s0: Vec<Vec<f64>>,
    s1: Vec<Vec<f64>>,
    s_plus: Vec<Vec<f64>>,
    metric: &PyMetric,
    kappa: f64,
    weight: &str,
    costs: (f64, f64),
) -> PyResult<PyMfBasis> {
    let weight = match weight {
        "adaptive" => WeightRule::Adaptive,
        "frozen" => WeightRule::FrozenAtFirst,
        w => WeightRule::Fixed(
            w.parse()
                .map_err(|_| MfpodError::new_err(format!("unknown weight '{w}'")))?,
        ),
    };
    let h = hierarchy(s0, s1, s_plus, costs)?;
    let opts = AdaptiveOptions {
        kappa,
        weight,
        ..AdaptiveOptions::default()
    };
    let (mf, trace) = py
        .detach(|| adaptive_core(&h, &metric.inner, &opts))
        .map_err(err)?;
    let alpha = trace.records.iter().map(|r| r.alpha).collect();
    Ok(PyMfBasis::new(mf, alpha))
}

/// Percentage of the reference snapshot energy captured by the span of `modes`.
#[pyfunction]
fn captured_energy(
    modes: Vec<Vec<f64>>,
    reference: Vec<Vec<f64>>,
    metric: &PyMetric,
) -> PyResult<f64> {
    let basis = mfpod::orthonormalize(&to_matrix(modes)?, &metric.inner, 1e-12).map_err(err)?;
    experiment::captured_energy(&basis, &to_matrix(reference)?, &metric.inner).map_err(err)
}

/// `(m0, m1)` for budget `c_tot` under `split` ("even", "m0=K", "hf-only", "lf-only").
#[pyfunction]
fn allocate_budget(c_tot: f64, c0: f64, c1: f64, split: &str) -> PyResult<(usize, usize)> {
    let policy: SplitPolicy = split.parse().map_err(err)?;
    let s = experiment::allocate_budget(c_tot, &mfpod::models::ModelCosts { c0, c1 }, policy)
        .map_err(err)?;
    Ok((s.m0, s.m1))
}

#[pyfunction]
fn read_snapshots(path: std::path::PathBuf) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&experiment::read_snapshots(&path).map_err(err)?))
}

#[pyfunction]
fn write_snapshots(path: std::path::PathBuf, matrix: Vec<Vec<f64>>) -> PyResult<()> {
    experiment::write_snapshots(&path, &to_matrix(matrix)?).map_err(err)
}

/// Runs a budget study and returns the report as a JSON string.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (
    budget=5.0, split="even", repeats=100, seed=0, n_hf=4097, n_lf=33,
    weight="pilot", kappa=0.9999, reference_size=10_000, max_dim=30, out=None
))]
fn run_study(
    py: Python<'_>,
    budget: f64,
    split: &str,
    repeats: usize,
    seed: u64,
    n_hf: usize,
    n_lf: usize,
    weight: &str,
    kappa: f64,
    reference_size: usize,
    max_dim: usize,
    out: Option<std::path::PathBuf>,
) -> PyResult<String> {
    let config = StudyConfig {
        budget,
        split: split.parse().map_err(err)?,
        kappa,
        repeats,
        master_seed: seed,
        model: AdvDiffConfig::default().with_sizes(n_hf, n_lf),
        weight: weight.parse::<WeightMode>().map_err(err)?,
        reference_size,
        max_dim,
        output_dir: out,
        write_timings: false,
    };
    let report = py.detach(|| experiment::run_study(&config)).map_err(err)?;
    serde_json::to_string(&report).map_err(|e| MfpodError::new_err(e.to_string()))
}

#[pymodule]
fn mfpod_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MfpodError", m.py().get_type::<MfpodError>())?;
    m.add_class::<PyMetric>()?;
    m.add_class::<PyPod>()?;
    m.add_class::<PyMfBasis>()?;
    m.add_class::<PyAdvDiffPair>()?;
    m.add_function(wrap_pyfunction!(pod, m)?)?;
    m.add_function(wrap_pyfunction!(mfpod_fixed, m)?)?;
    m.add_function(wrap_pyfunction!(mfpod_adaptive, m)?)?;
    m.add_function(wrap_pyfunction!(captured_energy, m)?)?;
    m.add_function(wrap_pyfunction!(allocate_budget, m)?)?;
    m.add_function(wrap_pyfunction!(read_snapshots, m)?)?;
    m.add_function(wrap_pyfunction!(write_snapshots, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    Ok(())
}
