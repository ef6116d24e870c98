use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mfpod::adaptive::{adaptive_weight, mfpod_adaptive, AdaptiveOptions, WeightRule};
use mfpod::experiment::io::{read_snapshots, write_json, write_snapshots};
use mfpod::experiment::{allocate_budget, run_study, SplitPolicy, StudyConfig, WeightMode};
use mfpod::mfpod::select_dimension;
use mfpod::models::{mass_matrix, sample_parameters, ModelCosts};
use mfpod::verify::{operator_study, OperatorStudyConfig, SurrogateTruth, MIN_REFERENCE_SIZE};
use mfpod::{
    mfpod_fixed, pod, AdvDiffConfig, AdvDiffPair, AdvectionForm, Basis, Fidelity, FidelityPair,
    MfBasis, MfpodError, MfpodOptions, Result, SnapshotHierarchy,
};

/// Multifidelity proper orthogonal decomposition.
#[derive(Parser, Debug)]
#[command(name = "mfpod", version)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Shared {
    /// Sampling budget in high-fidelity solves.
    #[arg(long, global = true, default_value_t = 5.0)]
    budget: f64,
    /// Cumulative energy threshold for the reduced dimension.
    #[arg(long, global = true, default_value_t = 0.9999)]
    kappa: f64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true)]
    repeats: Option<usize>,
    /// Control-variate weight: a number, `pilot` or `adaptive`.
    #[arg(long, global = true, default_value = "pilot")]
    alpha: String,
    /// Budget split: even, m0=K, hf-only or lf-only.
    #[arg(long, global = true, default_value = "even")]
    split: String,
    #[arg(long, global = true, value_enum, default_value_t = Model::BoundaryLayer)]
    model: Model,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// High-fidelity mesh nodes.
    #[arg(long, global = true, default_value_t = 4097)]
    n_hf: usize,
    /// Low-fidelity mesh nodes.
    #[arg(long, global = true, default_value_t = 33)]
    n_lf: usize,
    /// Number of equispaced reference parameters.
    #[arg(long, global = true, default_value_t = 10_000)]
    reference_size: usize,
    /// Also write per-repeat wall times.
    #[arg(long, global = true)]
    timings: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Model {
    Literal,
    BoundaryLayer,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample parameters under the budget and write snapshot files.
    Generate,
    /// POD of a snapshot file under the mass-matrix metric.
    Pod {
        #[arg(long)]
        input: PathBuf,
    },
    /// MFPOD of the snapshot files written by `generate`.
    Mfpod {
        /// Directory holding s0.mfp, s1.mfp and splus.mfp (defaults to --out).
        #[arg(long)]
        input_dir: Option<PathBuf>,
    },
    /// Repeated POD/MFPOD runs scored by captured energy.
    Study,
    /// Convergence of the multifidelity operator against a surrogate truth.
    Verify {
        #[arg(long, default_value_t = 4)]
        q: usize,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        r: usize,
    },
}

impl Shared {
    fn model_config(&self) -> AdvDiffConfig {
        let form = match self.model {
            Model::Literal => AdvectionForm::Literal,
            Model::BoundaryLayer => AdvectionForm::BoundaryLayer,
        };
        AdvDiffConfig::default()
            .with_sizes(self.n_hf, self.n_lf)
            .with_form(form)
    }

    fn split(&self) -> Result<SplitPolicy> {
        self.split.parse()
    }

    fn weight(&self) -> Result<WeightMode> {
        self.alpha.parse()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            report_error("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).unwrap_or_default();
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn report_error(kind: &str, message: &str) {
    eprintln!(
        "{}",
        json!({ "error": kind, "message": message.trim_end() })
    );
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let s = &cli.shared;
    match &cli.command {
        Command::Generate => generate(s),
        Command::Pod { input } => pod_command(s, input),
        Command::Mfpod { input_dir } => mfpod_command(s, input_dir.as_deref().unwrap_or(&s.out)),
        Command::Study => study(s),
        Command::Verify { q, grid, r } => verify(s, *q, grid.clone(), *r),
    }
}

fn generate(s: &Shared) -> Result<serde_json::Value> {
    let pair = AdvDiffPair::new(s.model_config())?;
    let policy = s.split()?;
    let split = allocate_budget(s.budget, &pair.costs(), policy)?;
    let thetas = sample_parameters(split.m0.max(split.m1), s.seed, pair.parameter_range())?;
    let mut files = Vec::new();
    let mut emit = |name: &str, range: std::ops::Range<usize>, fidelity| -> Result<()> {
        let path = s.out.join(name);
        write_snapshots(&path, &pair.snapshots(&thetas[range], fidelity)?)?;
        files.push(path.display().to_string());
        Ok(())
    };
    match policy {
        SplitPolicy::HfOnly => emit("s0.mfp", 0..split.m0, Fidelity::High)?,
        SplitPolicy::LfOnly => emit("s1.mfp", 0..split.m1, Fidelity::Low)?,
        _ => {
            emit("s0.mfp", 0..split.m0, Fidelity::High)?;
            emit("s1.mfp", 0..split.m0, Fidelity::Low)?;
            emit("splus.mfp", split.m0..split.m1, Fidelity::Low)?;
        }
    }
    let manifest = json!({
        "model": pair.config(),
        "costs": pair.costs(),
        "split": policy.to_string(),
        "m0": split.m0,
        "m1": split.m1,
        "seed": s.seed,
        "thetas": thetas,
    });
    write_json(&s.out.join("generate.json"), &manifest)?;
    Ok(json!({ "m0": split.m0, "m1": split.m1, "files": files }))
}

fn pod_command(s: &Shared, input: &Path) -> Result<serde_json::Value> {
    let snaps = read_snapshots(input)?;
    let metric = mass_matrix(snaps.nrows())?;
    let p = pod(&snaps, &metric, mfpod::pod::DEFAULT_EIG_FLOOR)?;
    let (r, fraction) = select_dimension(&p.eigvals[..p.rank()], s.kappa);
    write_snapshots(&s.out.join("pod_modes.mfp"), p.basis.truncated(r).vectors())?;
    let summary = json!({
        "eigvals": p.eigvals,
        "nonzero": p.rank(),
        "r": r,
        "energy_fraction": fraction,
    });
    write_json(&s.out.join("pod.json"), &summary)?;
    Ok(summary)
}

fn mfpod_command(s: &Shared, dir: &Path) -> Result<serde_json::Value> {
    let s0 = read_snapshots(&dir.join("s0.mfp"))?;
    let s1 = read_snapshots(&dir.join("s1.mfp"))?;
    let s_plus = read_snapshots(&dir.join("splus.mfp"))?;
    let metric = mass_matrix(s0.nrows())?;
    let ModelCosts { c0, c1 } = s.model_config().costs();
    let h = SnapshotHierarchy::two_level(s0, s1, s_plus, c0, c1)?;
    let opts = MfpodOptions::default().kappa(s.kappa);
    let (mf, alpha): (MfBasis, Vec<f64>) = match s.weight()? {
        WeightMode::Fixed(a) => (mfpod_fixed(&h, &[a], &metric, &opts)?, vec![a]),
        WeightMode::Pilot => {
            let a = adaptive_weight(&Basis::empty(metric.clone()), &h)?;
            (mfpod_fixed(&h, &[a], &metric, &opts)?, vec![a])
        }
        WeightMode::Adaptive => {
            let aopts = AdaptiveOptions {
                kappa: s.kappa,
                weight: WeightRule::Adaptive,
                ..AdaptiveOptions::default()
            };
            let (mf, trace) = mfpod_adaptive(&h, &metric, &aopts)?;
            (mf, trace.records.iter().map(|r| r.alpha).collect())
        }
    };
    write_snapshots(&s.out.join("mfpod_modes.mfp"), mf.basis().vectors())?;
    let summary = json!({
        "alpha": alpha,
        "raw_eigvals": mf.raw_eigvals,
        "corrected_eigvals": mf.corrected,
        "branches": mf.branches,
        "nonzero": mf.retained,
        "r": mf.r,
        "energy_fraction": mf.energy_fraction,
        "note": mf.note,
    });
    write_json(&s.out.join("mfpod.json"), &summary)?;
    Ok(summary)
}

fn study(s: &Shared) -> Result<serde_json::Value> {
    let config = StudyConfig {
        budget: s.budget,
        split: s.split()?,
        kappa: s.kappa,
        repeats: s.repeats.unwrap_or(100),
        master_seed: s.seed,
        model: s.model_config(),
        weight: s.weight()?,
        reference_size: s.reference_size,
        output_dir: Some(s.out.clone()),
        write_timings: s.timings,
        ..StudyConfig::default()
    };
    let report = run_study(&config)?;
    Ok(json!({
        "m0": report.m0,
        "m1": report.m1,
        "failed": report.failed,
        "median_nonzero": report.median_nonzero,
        "max_nonzero": report.max_nonzero,
        "median_energy": report.energy_percentiles.iter().map(|p| p.p50).collect::<Vec<_>>(),
        "out": s.out.display().to_string(),
    }))
}

fn verify(s: &Shared, q: usize, grid: Vec<usize>, r: usize) -> Result<serde_json::Value> {
    if s.reference_size < MIN_REFERENCE_SIZE {
        return Err(MfpodError::InvalidParameter(format!(
            "verify needs --reference-size >= {MIN_REFERENCE_SIZE}"
        )));
    }
    let pair = AdvDiffPair::new(s.model_config())?;
    let truth = SurrogateTruth::build(&pair, s.reference_size)?;
    let mut cfg = OperatorStudyConfig::new(q, grid, s.repeats.unwrap_or(100), s.seed);
    cfg.r = r;
    if let WeightMode::Fixed(a) = s.weight()? {
        cfg.alpha = a;
    }
    let study = operator_study(&pair, &truth, &cfg)?;
    let summary = json!({
        "config": cfg,
        "convergence": study.convergence(),
        "eigenvalue_sums": study.eigenvalue_sums(),
        "alignment": study.alignment(),
    });
    write_json(&s.out.join("verify.json"), &summary)?;
    Ok(summary)
}
