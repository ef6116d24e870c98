//! Repeated POD / MFPOD runs under a budget, scored against a reference set.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{adaptive_weight, mfpod_adaptive, AdaptiveOptions, WeightRule};
use crate::error::{check_dim, MfpodError, Result};
use crate::mfpod::{mfpod_fixed, select_dimension, MfpodOptions};
use crate::models::{sample_parameters, AdvDiffConfig, AdvDiffPair, Fidelity, FidelityPair};
use crate::pod::{pod, DEFAULT_EIG_FLOOR};
use crate::snapshots::SnapshotHierarchy;
use crate::space::Basis;

use super::budget::{allocate_budget, BudgetSplit, SplitPolicy};
use super::energy::ReferenceSet;
use super::io::{write_csv, write_json};

pub const DEFAULT_REFERENCE_SIZE: usize = 10_000;
pub const PERCENTILES: [u32; 5] = [5, 25, 50, 75, 95];

/// How the control-variate weight is chosen in each repeat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Fixed(f64),
    /// α*(0) estimated on the shared samples.
    Pilot,
    /// Greedy selection with α re-estimated per mode.
    Adaptive,
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightMode::Fixed(a) => write!(f, "{a}"),
            WeightMode::Pilot => write!(f, "pilot"),
            WeightMode::Adaptive => write!(f, "adaptive"),
        }
    }
}

impl FromStr for WeightMode {
    type Err = MfpodError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pilot" => Ok(WeightMode::Pilot),
            "adaptive" => Ok(WeightMode::Adaptive),
            _ => s
                .parse::<f64>()
                .ok()
                .filter(|a| a.is_finite())
                .map(WeightMode::Fixed)
                .ok_or_else(|| {
                    MfpodError::InvalidParameter(format!(
                        "unknown weight '{s}' (expected a number, pilot or adaptive)"
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub budget: f64,
    pub split: SplitPolicy,
    pub kappa: f64,
    pub repeats: usize,
    pub master_seed: u64,
    pub model: AdvDiffConfig,
    pub weight: WeightMode,
    pub reference_size: usize,
    /// Largest dimension of the energy sweep.
    pub max_dim: usize,
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
    /// Also write `timings.csv`; wall times are never part of the other reports.
    #[serde(skip)]
    pub write_timings: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            budget: 5.0,
            split: SplitPolicy::EvenSplit,
            kappa: 0.9999,
            repeats: 100,
            master_seed: 0,
            model: AdvDiffConfig::default(),
            weight: WeightMode::Pilot,
            reference_size: DEFAULT_REFERENCE_SIZE,
            max_dim: 30,
            output_dir: None,
            write_timings: false,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<BudgetSplit> {
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(MfpodError::InvalidParameter(format!(
                "kappa must lie in (0, 1], got {}",
                self.kappa
            )));
        }
        if self.repeats == 0 || self.max_dim == 0 || self.reference_size == 0 {
            return Err(MfpodError::InvalidParameter(
                "repeats, max_dim and reference_size must be positive".into(),
            ));
        }
        if let WeightMode::Fixed(a) = self.weight {
            if !a.is_finite() {
                return Err(MfpodError::InvalidParameter(format!(
                    "weight {a} is not finite"
                )));
            }
        }
        self.model.validate()?;
        allocate_budget(self.budget, &self.model.costs(), self.split)
    }

    /// Seed of repeat `k`, a counter-based draw from the master seed.
    pub fn repeat_seed(&self, k: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(k as u64);
        rng.next_u64()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub seed: u64,
    pub m0: usize,
    pub m1: usize,
    pub hf_solves: usize,
    pub lf_solves: usize,
    pub cost: f64,
    /// Weight used; one entry per greedy iteration in adaptive mode.
    pub alpha: Vec<f64>,
    pub raw_eigvals: Vec<f64>,
    pub corrected_eigvals: Vec<f64>,
    /// Modes with eigenvalue above `1e-10` times the largest.
    pub nonzero: usize,
    /// Dimension selected by κ.
    pub r: usize,
    /// `E(V_r)` for `r = 1..=max_dim`.
    pub energies: Vec<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl RepeatRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionPercentiles {
    pub r: usize,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

impl DimensionPercentiles {
    pub fn values(&self) -> [f64; 5] {
        [self.p5, self.p25, self.p50, self.p75, self.p95]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub m0: usize,
    pub m1: usize,
    pub reference_size: usize,
    pub reference_rank: usize,
    /// Best achievable `E` per dimension (reference POD).
    pub reference_energies: Vec<f64>,
    pub failed: usize,
    pub energy_percentiles: Vec<DimensionPercentiles>,
    pub median_nonzero: usize,
    pub max_nonzero: usize,
    pub records: Vec<RepeatRecord>,
}

impl StudyReport {
    pub fn succeeded(&self) -> impl Iterator<Item = &RepeatRecord> {
        self.records.iter().filter(|r| r.succeeded())
    }

    /// Median energy at dimension `r` (1-based).
    pub fn median_energy(&self, r: usize) -> f64 {
        self.energy_percentiles[r - 1].p50
    }

    /// Writes `study.json`, `energies.csv`, `eigenvalues.csv`, `corrected.csv`,
    /// `percentiles.csv` and optionally `timings.csv` into `dir`.
    pub fn write(&self, dir: &Path, timings: bool) -> Result<()> {
        write_json(&dir.join("study.json"), self)?;
        let dims = self.config.max_dim;
        let lead = || vec!["repeat".to_string(), "seed".to_string()];
        let mut header = lead();
        header.extend((1..=dims).map(|r| format!("r{r}")));
        let rows: Vec<Vec<String>> = self
            .records
            .iter()
            .map(|rec| row(rec, &rec.energies))
            .collect();
        write_csv(&dir.join("energies.csv"), &header, &rows)?;

        let width = self
            .records
            .iter()
            .map(|r| r.raw_eigvals.len().max(r.corrected_eigvals.len()))
            .max()
            .unwrap_or(0);
        let mut header = lead();
        header.extend((1..=width).map(|j| format!("lambda{j}")));
        let raw: Vec<Vec<String>> = self
            .records
            .iter()
            .map(|r| row(r, &r.raw_eigvals))
            .collect();
        write_csv(&dir.join("eigenvalues.csv"), &header, &raw)?;
        let cor: Vec<Vec<String>> = self
            .records
            .iter()
            .map(|r| row(r, &r.corrected_eigvals))
            .collect();
        write_csv(&dir.join("corrected.csv"), &header, &cor)?;

        let mut header = vec!["r".to_string()];
        header.extend(PERCENTILES.iter().map(|p| format!("p{p}")));
        header.push("reference".into());
        let rows: Vec<Vec<String>> = self
            .energy_percentiles
            .iter()
            .map(|p| {
                let mut v = vec![p.r.to_string()];
                v.extend(p.values().iter().map(f64::to_string));
                v.push(self.reference_energies[p.r - 1].to_string());
                v
            })
            .collect();
        write_csv(&dir.join("percentiles.csv"), &header, &rows)?;

        if timings {
            let header = vec!["repeat".to_string(), "seed".into(), "seconds".into()];
            let rows: Vec<Vec<String>> = self
                .records
                .iter()
                .map(|r| {
                    vec![
                        r.repeat.to_string(),
                        r.seed.to_string(),
                        r.wall_seconds.to_string(),
                    ]
                })
                .collect();
            write_csv(&dir.join("timings.csv"), &header, &rows)?;
        }
        Ok(())
    }
}

fn row(rec: &RepeatRecord, values: &[f64]) -> Vec<String> {
    let mut v = vec![rec.repeat.to_string(), rec.seed.to_string()];
    v.extend(values.iter().map(f64::to_string));
    v
}

/// Builds the model pair and reference set from `config`, then runs the study.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let pair = AdvDiffPair::new(config.model)?;
    let reference = ReferenceSet::build(&pair, config.reference_size)?;
    run_study_on(&pair, &reference, config)
}

/// Runs the study against a prebuilt reference set, so several policies can
/// share one.
pub fn run_study_with_reference(
    config: &StudyConfig,
    reference: &ReferenceSet,
) -> Result<StudyReport> {
    let pair = AdvDiffPair::new(config.model)?;
    run_study_on(&pair, reference, config)
}

pub fn run_study_on(
    pair: &dyn FidelityPair,
    reference: &ReferenceSet,
    config: &StudyConfig,
) -> Result<StudyReport> {
    let split = config.validate()?;
    check_dim(pair.dim(), reference.metric().dim())?;
    let records: Vec<RepeatRecord> = (0..config.repeats)
        .into_par_iter()
        .map(|k| run_repeat(pair, reference, config, split, k))
        .collect();
    let failed = records.iter().filter(|r| !r.succeeded()).count();
    if 2 * failed > config.repeats {
        return Err(MfpodError::StudyAborted {
            failed,
            total: config.repeats,
        });
    }
    let ok: Vec<&RepeatRecord> = records.iter().filter(|r| r.succeeded()).collect();
    let energy_percentiles = (0..config.max_dim)
        .map(|d| {
            let mut col: Vec<f64> = ok.iter().map(|r| r.energies[d]).collect();
            col.sort_by(f64::total_cmp);
            let p = |q: u32| nearest_rank(&col, q);
            DimensionPercentiles {
                r: d + 1,
                p5: p(5),
                p25: p(25),
                p50: p(50),
                p75: p(75),
                p95: p(95),
            }
        })
        .collect();
    let mut counts: Vec<usize> = ok.iter().map(|r| r.nonzero).collect();
    counts.sort_unstable();
    let median_nonzero = counts[counts.len().div_ceil(2) - 1];
    let reference_energies = reference.energy_curve(&reference.pod()?.basis, config.max_dim)?;
    let report = StudyReport {
        config: config.clone(),
        m0: split.m0,
        m1: split.m1,
        reference_size: reference.size(),
        reference_rank: reference.rank(),
        reference_energies,
        failed,
        energy_percentiles,
        median_nonzero,
        max_nonzero: counts.last().copied().unwrap_or(0),
        records,
    };
    if let Some(dir) = &config.output_dir {
        report.write(dir, config.write_timings)?;
    }
    Ok(report)
}

/// Nearest-rank percentile of ascending `sorted`.
pub fn nearest_rank(sorted: &[f64], p: u32) -> f64 {
    let n = sorted.len();
    let rank = ((p as usize * n).div_ceil(100)).clamp(1, n);
    sorted[rank - 1]
}

struct Outcome {
    alpha: Vec<f64>,
    raw: Vec<f64>,
    corrected: Vec<f64>,
    nonzero: usize,
    r: usize,
    modes: Basis,
}

fn run_repeat(
    pair: &dyn FidelityPair,
    reference: &ReferenceSet,
    config: &StudyConfig,
    split: BudgetSplit,
    k: usize,
) -> RepeatRecord {
    let start = Instant::now();
    let seed = config.repeat_seed(k);
    let costs = pair.costs();
    let lf_solves = if config.split.is_multifidelity() || config.split == SplitPolicy::LfOnly {
        split.m1
    } else {
        0
    };
    let mut record = RepeatRecord {
        repeat: k,
        seed,
        m0: split.m0,
        m1: split.m1,
        hf_solves: split.m0,
        lf_solves,
        cost: split.m0 as f64 * costs.c0 + lf_solves as f64 * costs.c1,
        alpha: Vec::new(),
        raw_eigvals: Vec::new(),
        corrected_eigvals: Vec::new(),
        nonzero: 0,
        r: 0,
        energies: Vec::new(),
        error: None,
        wall_seconds: 0.0,
    };
    let result = repeat_outcome(pair, config, split, seed).and_then(|o| {
        let energies = reference.energy_curve(&o.modes, config.max_dim)?;
        Ok((o, energies))
    });
    match result {
        Ok((o, energies)) => {
            record.alpha = o.alpha;
            record.raw_eigvals = o.raw;
            record.corrected_eigvals = o.corrected;
            record.nonzero = o.nonzero;
            record.r = o.r;
            record.energies = energies;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record.wall_seconds = start.elapsed().as_secs_f64();
    record
}

fn repeat_outcome(
    pair: &dyn FidelityPair,
    config: &StudyConfig,
    split: BudgetSplit,
    seed: u64,
) -> Result<Outcome> {
    let metric = pair.metric();
    let count = split.m0.max(split.m1);
    let thetas = sample_parameters(count, seed, pair.parameter_range())?;
    let single = |fidelity: Fidelity, m: usize| -> Result<Outcome> {
        let s = pair.snapshots(&thetas[..m], fidelity)?;
        let p = pod(&s, metric, DEFAULT_EIG_FLOOR)?;
        let nonzero = p.rank();
        let (r, _) = select_dimension(&p.eigvals[..nonzero], config.kappa);
        Ok(Outcome {
            alpha: Vec::new(),
            corrected: p.eigvals.clone(),
            raw: p.eigvals,
            nonzero,
            r,
            modes: p.basis,
        })
    };
    match config.split {
        SplitPolicy::HfOnly => single(Fidelity::High, split.m0),
        SplitPolicy::LfOnly => single(Fidelity::Low, split.m1),
        SplitPolicy::EvenSplit | SplitPolicy::FixedM0(_) => {
            let costs = pair.costs();
            let s0 = pair.snapshots(&thetas[..split.m0], Fidelity::High)?;
            let s1 = pair.snapshots(&thetas[..split.m0], Fidelity::Low)?;
            let s_plus = pair.snapshots(&thetas[split.m0..split.m1], Fidelity::Low)?;
            let h = SnapshotHierarchy::two_level(s0, s1, s_plus, costs.c0, costs.c1)?;
            let opts = MfpodOptions::default().kappa(config.kappa);
            let (mf, alpha) = match config.weight {
                WeightMode::Fixed(a) => (mfpod_fixed(&h, &[a], metric, &opts)?, vec![a]),
                WeightMode::Pilot => {
                    let a = adaptive_weight(&Basis::empty(metric.clone()), &h)?;
                    (mfpod_fixed(&h, &[a], metric, &opts)?, vec![a])
                }
                WeightMode::Adaptive => {
                    let aopts = AdaptiveOptions {
                        kappa: config.kappa,
                        weight: WeightRule::Adaptive,
                        ..AdaptiveOptions::default()
                    };
                    let (mf, trace) = mfpod_adaptive(&h, metric, &aopts)?;
                    let alpha = trace.records.iter().map(|r| r.alpha).collect();
                    (mf, alpha)
                }
            };
            Ok(Outcome {
                alpha,
                modes: mf.modes.truncated(mf.retained),
                nonzero: mf.retained,
                r: mf.r,
                raw: mf.raw_eigvals,
                corrected: mf.corrected,
            })
        }
    }
}
