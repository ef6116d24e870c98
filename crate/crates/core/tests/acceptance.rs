//! Acceptance checks. Runs without the libtest harness so each criterion
//! prints one PASS/FAIL line; exits nonzero if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfpod::estimator::{j_mf, Allocation};
use mfpod::experiment::{
    run_study_with_reference, ReferenceSet, SplitPolicy, StudyConfig, StudyReport,
};
use mfpod::mfpod::{spectral_cost, CorrectionBranch};
use mfpod::models::sample_parameters;
use mfpod::pod::{residual_energies, DEFAULT_EIG_FLOOR};
use mfpod::verify::{operator_study, subspace_alignment, OperatorStudyConfig, SurrogateTruth};
use mfpod::{
    mfpod_fixed, orthonormalize, pod, AdvDiffConfig, AdvDiffPair, Basis, Fidelity, FidelityPair,
    Metric, MfpodOptions, SnapshotHierarchy,
};

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, Duration, Check); 8] = [
        (
            "1 oracle equivalence",
            Duration::from_secs(10),
            oracle_equivalence,
        ),
        ("2 cost identity", Duration::from_secs(5), cost_identity),
        ("3 unbiasedness", Duration::from_secs(60), unbiasedness),
        (
            "4 convergence rate",
            Duration::from_secs(120),
            convergence_rate,
        ),
        (
            "5 eigenvalue-sum bound",
            Duration::from_secs(120),
            eigenvalue_sum_bound,
        ),
        (
            "6 budget comparison",
            Duration::from_secs(600),
            budget_comparison,
        ),
        ("7 reductions", Duration::from_secs(5), reductions),
        ("8 determinism", Duration::from_secs(120), determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed <= limit;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {name}: {} ({:.1}s of {}s) {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            out.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Two-level instance whose low-fidelity states are perturbed high-fidelity states.
fn random_instance(rng: &mut ChaCha8Rng, n: usize, m0: usize, m1: usize) -> SnapshotHierarchy {
    let s0 = random_matrix(rng, n, m0);
    let s1 = &s0 + random_matrix(rng, n, m0) * 0.3;
    let s_plus = random_matrix(rng, n, m1 - m0);
    SnapshotHierarchy::two_level(s0, s1, s_plus, 1.0, 0.1).unwrap()
}

fn explicit_matrix(h: &SnapshotHierarchy, alpha: f64) -> DMatrix<f64> {
    let [m0, m1] = [h.sample_sizes()[0] as f64, h.sample_sizes()[1] as f64];
    let (s0, s1, sp) = (h.high_fidelity(), h.level(1).shared(), h.level(1).extra());
    s0 * s0.transpose() / m0
        + s1 * s1.transpose() * (alpha / m1 - alpha / m0)
        + sp * sp.transpose() * (alpha / m1)
}

fn dense_desc(c: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = c.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..c.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i))
            .collect::<Vec<_>>(),
    );
    (vals, vecs)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_rel, mut worst_align, mut compared, mut bad) = (0.0_f64, 0.0_f64, 0, 0);
    for _ in 0..50 {
        let n = rng.random_range(8..=64);
        let m0 = rng.random_range(1..=4);
        let m1 = rng.random_range(m0 + 1..=16);
        let alpha = rng.random_range(-0.5..2.0);
        let h = random_instance(&mut rng, n, m0, m1);
        let metric = Metric::euclidean(n);
        let mf = mfpod_fixed(&h, &[alpha], &metric, &MfpodOptions::default()).unwrap();
        let (dense, vecs) = dense_desc(&explicit_matrix(&h, alpha));
        let scale = dense.iter().fold(0.0_f64, |a, l| a.max(l.abs()));

        let mut ours = mf.raw_eigvals.clone();
        ours.resize(n, 0.0);
        ours.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in ours.iter().zip(&dense) {
            let err = (a - b).abs();
            if err > 1e-8 * b.abs() + 1e-13 * scale {
                bad += 1;
            }
            if b.abs() > 1e-6 * scale {
                worst_rel = worst_rel.max(err / b.abs());
            }
        }

        let mut positive: Vec<usize> = (0..mf.raw_eigvals.len())
            .filter(|&j| mf.branches[j] == CorrectionBranch::Positive)
            .collect();
        positive.sort_by(|&a, &b| mf.raw_eigvals[b].total_cmp(&mf.raw_eigvals[a]));
        for r in 1..=positive.len().min(n - 1) {
            if dense[r - 1] - dense[r] <= 1e-6 {
                continue;
            }
            let cols: Vec<_> = positive[..r].iter().map(|&j| mf.modes.column(j)).collect();
            let v = Basis::new(DMatrix::from_columns(&cols), metric.clone()).unwrap();
            let vstar = Basis::new(vecs.columns(0, r).into_owned(), metric.clone()).unwrap();
            let a = subspace_alignment(&v, &vstar).unwrap();
            worst_align = worst_align.max(a);
            compared += 1;
            if a > 1e-6 {
                bad += 1;
            }
        }
    }
    Outcome {
        pass: bad == 0,
        detail: format!(
            "worst relative eigenvalue error {worst_rel:.2e}, worst alignment {worst_align:.2e} over {compared} subspaces, {bad} violations"
        ),
    }
}

fn cost_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0_f64;
    for inst in 0..10 {
        let n = rng.random_range(10..=48);
        let m0 = rng.random_range(2..=4);
        let m1 = rng.random_range(m0 + 1..=16);
        let alpha = rng.random_range(-0.5..2.0);
        let h = random_instance(&mut rng, n, m0, m1);
        let metric = if inst % 2 == 0 {
            Metric::euclidean(n)
        } else {
            mfpod::models::mass_matrix(n).unwrap()
        };
        let mf = mfpod_fixed(&h, &[alpha], &metric, &MfpodOptions::default().eig_tol(0.0)).unwrap();
        let alloc = Allocation::for_hierarchy(&h, vec![alpha]).unwrap();
        for _ in 0..100 {
            let k = rng.random_range(0..=n.min(6));
            let cand = orthonormalize(&random_matrix(&mut rng, n, k), &metric, 1e-12).unwrap();
            let lhs = j_mf(&cand, &h, &alloc).unwrap();
            let rhs = spectral_cost(&mf, &cand).unwrap();
            let denom = lhs.abs().max(1e-300);
            worst = worst.max((lhs - rhs).abs() / denom);
        }
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("worst relative gap {worst:.2e} over 1000 candidates"),
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn unbiasedness() -> Outcome {
    let pair = AdvDiffPair::new(AdvDiffConfig::default().with_sizes(129, 17)).unwrap();
    let metric = pair.metric();
    let range = pair.parameter_range();
    let costs = pair.costs();
    let train = pair
        .snapshots(&sample_parameters(20, 77, range).unwrap(), Fidelity::High)
        .unwrap();
    let v = pod(&train, metric, DEFAULT_EIG_FLOOR)
        .unwrap()
        .basis
        .truncated(2);

    let truth_thetas = sample_parameters(100_000, 123_456, range).unwrap();
    let mut truth = Vec::with_capacity(truth_thetas.len());
    for chunk in truth_thetas.chunks(5000) {
        let s = pair.snapshots(chunk, Fidelity::High).unwrap();
        truth.extend(residual_energies(&v, &s).unwrap());
    }
    let (t_mean, t_sd) = mean_sd(&truth);

    let (m0, m1, alpha) = (4, 32, 0.8);
    let draws: Vec<f64> = (0..2000u64)
        .map(|k| {
            let th = sample_parameters(m1, 10_000 + k, range).unwrap();
            let h = SnapshotHierarchy::two_level(
                pair.snapshots(&th[..m0], Fidelity::High).unwrap(),
                pair.snapshots(&th[..m0], Fidelity::Low).unwrap(),
                pair.snapshots(&th[m0..], Fidelity::Low).unwrap(),
                costs.c0,
                costs.c1,
            )
            .unwrap();
            let alloc = Allocation::for_hierarchy(&h, vec![alpha]).unwrap();
            j_mf(&v, &h, &alloc).unwrap()
        })
        .collect();
    let (d_mean, d_sd) = mean_sd(&draws);
    let se = ((d_sd * d_sd) / 2000.0 + (t_sd * t_sd) / 100_000.0).sqrt();
    let z = (d_mean - t_mean) / se;
    Outcome {
        pass: z.abs() <= 3.0,
        detail: format!("mean {d_mean:.6e} vs truth {t_mean:.6e}, z = {z:.2}"),
    }
}

fn operator_study_result() -> &'static mfpod::verify::OperatorStudy {
    use std::sync::OnceLock;
    static STUDY: OnceLock<mfpod::verify::OperatorStudy> = OnceLock::new();
    STUDY.get_or_init(|| {
        let pair = AdvDiffPair::new(AdvDiffConfig::default().with_sizes(129, 17)).unwrap();
        let truth = SurrogateTruth::build(&pair, 10_000).unwrap();
        let cfg = OperatorStudyConfig::new(4, vec![2, 4, 8, 16, 32], 100, 2024);
        operator_study(&pair, &truth, &cfg).unwrap()
    })
}

fn convergence_rate() -> Outcome {
    let conv = operator_study_result().convergence();
    let slope = conv.slope.unwrap_or(f64::NAN);
    Outcome {
        pass: (-1.35..=-0.65).contains(&slope),
        detail: format!(
            "slope {slope:.3}, mean squared errors [{}]",
            conv.hs_errors
                .iter()
                .map(|e| format!("{e:.3e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

fn eigenvalue_sum_bound() -> Outcome {
    let study = operator_study_result();
    let sums = study.eigenvalue_sums();
    let align = study.alignment();
    let ratios: Vec<f64> = sums
        .mse
        .iter()
        .zip(&sums.bound)
        .map(|(m, b)| m / b)
        .collect();
    let worst = ratios.iter().cloned().fold(0.0_f64, f64::max);
    Outcome {
        pass: worst <= 1.2 && align.max_symmetry_gap <= 1e-9,
        detail: format!(
            "MSE/bound per m0 {ratios:.3?}, symmetry gap {:.2e}",
            align.max_symmetry_gap
        ),
    }
}

fn budget_comparison() -> Outcome {
    let model = AdvDiffConfig::default();
    let pair = AdvDiffPair::new(model).unwrap();
    let reference = ReferenceSet::build(&pair, 10_000).unwrap();
    let run = |split| -> StudyReport {
        let cfg = StudyConfig {
            budget: 5.0,
            split,
            repeats: 100,
            master_seed: 5,
            model,
            ..StudyConfig::default()
        };
        run_study_with_reference(&cfg, &reference).unwrap()
    };
    let hf = run(SplitPolicy::HfOnly);
    let mf = run(SplitPolicy::EvenSplit);
    let lf = run(SplitPolicy::LfOnly);

    let a = hf.max_nonzero <= 5;
    let more = mf
        .records
        .iter()
        .zip(&hf.records)
        .filter(|(m, h)| m.succeeded() && m.nonzero > h.nonzero)
        .count();
    let six = mf.succeeded().filter(|r| r.nonzero >= 6).count();
    let b = more >= 90 && six >= 90;
    let c = (1..=5).all(|r| mf.median_energy(r) >= hf.median_energy(r));
    let (e5, e15, e30) = (
        lf.median_energy(5),
        lf.median_energy(15),
        lf.median_energy(30),
    );
    let d = e30 - e15 < e15 - e5;
    let med = |rep: &StudyReport| (1..=5).map(|r| rep.median_energy(r)).collect::<Vec<_>>();
    Outcome {
        pass: a && b && c && d && hf.failed + mf.failed + lf.failed == 0,
        detail: format!(
            "(a) HF max nonzero {} [{}]; (b) MF more modes in {more}/100, at least six in {six}/100 [{}]; \
             (c) median E r<=5 MF {:.4?} vs HF {:.4?} [{}]; (d) LF E5 {e5:.4} E15 {e15:.4} E30 {e30:.4} [{}]",
            hf.max_nonzero,
            ok(a),
            ok(b),
            med(&mf),
            med(&hf),
            ok(c),
            ok(d)
        ),
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "violated"
    }
}

fn reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_eig, mut worst_align) = (0.0_f64, 0.0_f64);
    for inst in 0..10 {
        let n = rng.random_range(12..=40);
        let (m0, m1) = (rng.random_range(2..=5), rng.random_range(8..=14));
        let metric = if inst % 2 == 0 {
            Metric::euclidean(n)
        } else {
            mfpod::models::mass_matrix(n).unwrap()
        };

        let h = random_instance(&mut rng, n, m0, m1);
        let mf = mfpod_fixed(&h, &[0.0], &metric, &MfpodOptions::default()).unwrap();
        let p = pod(h.high_fidelity(), &metric, DEFAULT_EIG_FLOOR).unwrap();
        compare(&mf, &p, &mut worst_eig, &mut worst_align);

        let s0 = random_matrix(&mut rng, n, m0);
        let s_plus = random_matrix(&mut rng, n, m1 - m0);
        let twin =
            SnapshotHierarchy::two_level(s0.clone(), s0.clone(), s_plus.clone(), 1.0, 0.1).unwrap();
        let mf = mfpod_fixed(&twin, &[1.0], &metric, &MfpodOptions::default()).unwrap();
        let all = DMatrix::from_columns(
            &s0.column_iter()
                .chain(s_plus.column_iter())
                .collect::<Vec<_>>(),
        );
        let p = pod(&all, &metric, DEFAULT_EIG_FLOOR).unwrap();
        compare(&mf, &p, &mut worst_eig, &mut worst_align);
    }
    Outcome {
        pass: worst_eig <= 1e-9 && worst_align <= 1e-8,
        detail: format!(
            "worst relative eigenvalue gap {worst_eig:.2e}, worst alignment {worst_align:.2e}"
        ),
    }
}

fn compare(mf: &mfpod::MfBasis, p: &mfpod::PodResult, worst_eig: &mut f64, worst_align: &mut f64) {
    let k = p.rank();
    if mf.retained != k {
        *worst_eig = f64::INFINITY;
        return;
    }
    for j in 0..k {
        let rel = (mf.corrected[j] - p.eigvals[j]).abs() / p.eigvals[j];
        *worst_eig = worst_eig.max(rel);
    }
    for r in 1..=k {
        let gap = p.eigvals[r - 1] - p.eigvals.get(r).copied().unwrap_or(0.0);
        if gap > 1e-6 * p.eigvals[0] {
            let a = subspace_alignment(&mf.modes.truncated(r), &p.basis.truncated(r)).unwrap();
            *worst_align = worst_align.max(a);
        }
    }
}

fn determinism() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_mfpod");
    let root = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let out = root.path().join(tag);
        let common = [
            "--seed", "42", "--n-hf", "257", "--n-lf", "17", "--budget", "6", "--out",
        ];
        for cmd in [
            vec!["generate"],
            vec!["study", "--repeats", "6", "--reference-size", "600"],
        ] {
            let status = Command::new(exe)
                .args(&cmd)
                .args(common)
                .arg(&out)
                .output()
                .unwrap();
            assert!(
                status.status.success(),
                "{}",
                String::from_utf8_lossy(&status.stderr)
            );
        }
        out
    };
    let (a, b) = (run("a"), run("b"));
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let identical = names.iter().all(|n| same_bytes(&a.join(n), &b.join(n)));
    let round_trip = ["s0.mfp", "s1.mfp", "splus.mfp"].iter().all(|n| {
        let m = mfpod::experiment::read_snapshots(&a.join(n)).unwrap();
        let copy = root.path().join(format!("copy-{n}"));
        mfpod::experiment::write_snapshots(&copy, &m).unwrap();
        same_bytes(&a.join(n), &copy)
    });
    Outcome {
        pass: identical && round_trip && names.len() == 9,
        detail: format!(
            "{} files compared ({}), identical {identical}, MFP1 round trip {round_trip}",
            names.len(),
            names.join(" ")
        ),
    }
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    match (std::fs::read(a), std::fs::read(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}
