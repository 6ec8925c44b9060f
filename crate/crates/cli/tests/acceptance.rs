//! End-to-end acceptance run at the reference parameters
//! (α = 0.5, β = 1, d = 2, a(0) = 1, K = 1, κ = 0, so δ = 2/3 and H = 3/4).
//!
//! Prints one `[PASS]`/`[FAIL]` line per criterion. The process exits 0 so
//! that a red statistical criterion does not hide the others; set
//! `FBMLAB_ACCEPTANCE_STRICT=1` to turn any failure into a non-zero exit.
//! `FBMLAB_ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.

use std::fs;
use std::path::Path;
use std::time::Instant;

use fbmlab::analysis::{
    compare_to_theory, fbm_covariance, fbm_trajectories, fit_hurst, generate_fbm, msd_curve,
    EnsembleStats, FbmMethod, FitWindow, LagGrid, Tolerances,
};
use fbmlab::field::{FieldRealization, Mode, SamplingStrategy, SpectralMeasure};
use fbmlab::quadrature::QuadConfig;
use fbmlab::theory::{
    effective_diffusion, finite_eps_msd_oracle, hurst_exponent, scaling_exponent_delta,
    spatial_covariance, taylor_kubo_classify, time_correlation, validate_params, FbmModel,
    RawParams, SpectrumParams, TkVerdict,
};
use fbmlab::tracer::{run_ensemble, EnsembleMode, EnsembleOptions, TracerConfig};
use fbmlab::{Executor, StreamSeed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn reference_d() -> f64 {
    effective_diffusion(&SpectrumParams::reference(), &QuadConfig::default())
        .unwrap()
        .model
        .diffusion
}

fn random_params(rng: &mut ChaCha8Rng, anomalous: bool) -> SpectrumParams {
    let alpha = rng.random_range(0.0..1.0);
    let beta = if anomalous {
        rng.random_range((1.0 - alpha) + 1e-3..3.0)
    } else {
        rng.random_range(0.0..(1.0 - alpha) - 1e-3)
    };
    validate_params(&RawParams {
        alpha,
        beta,
        ..RawParams::default()
    })
    .unwrap()
}

fn c1_exponents() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = random_params(&mut rng, true);
        let delta = scaling_exponent_delta(&p).unwrap();
        let h = hurst_exponent(&p).unwrap();
        if !(delta > 0.0 && delta < 1.0 && h > 0.5 && h < 1.0) {
            return outcome(false, format!("alpha {} beta {}: delta {delta}, H {h}", p.alpha(), p.beta()));
        }
        worst = worst.max((2.0 * h * delta - 1.0).abs());
    }
    outcome(worst <= 4.0 * f64::EPSILON, format!("100 pairs, max |2 H delta - 1| = {worst:.2e}"))
}

fn c2_taylor_kubo() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut wrong = 0;
    for anomalous in [true, false] {
        for _ in 0..100 {
            let p = random_params(&mut rng, anomalous);
            let expected = if anomalous {
                TkVerdict::DivergesPower
            } else {
                TkVerdict::Converges
            };
            wrong += usize::from(taylor_kubo_classify(&p) != expected);
        }
    }
    outcome(wrong == 0, format!("200 pairs on both sides of alpha + beta = 1, {wrong} misclassified"))
}

fn c3_oracle_ladder() -> Outcome {
    let p = SpectrumParams::reference();
    let d = reference_d();
    let cfg = QuadConfig::relative(1e-8);
    let mut devs = Vec::new();
    for eps in [0.4, 0.2, 0.1, 0.05] {
        let m = finite_eps_msd_oracle(&p, eps, 1.0, &cfg).unwrap().tensor;
        let per_axis = m.trace() / 2.0;
        devs.push((eps, per_axis / d, (per_axis / d - 1.0).abs()));
    }
    let monotone = devs.windows(2).all(|w| w[1].2 < w[0].2);
    let last = devs.last().unwrap().2;
    let table: Vec<String> = devs
        .iter()
        .map(|(e, r, _)| format!("eps {e}: ratio {r:.4}"))
        .collect();
    outcome(
        monotone && last < 0.05,
        format!(
            "{}; monotone {monotone}, final deviation {:.1}% (need < 5%)",
            table.join(", "),
            100.0 * last
        ),
    )
}

fn c4_fbm_covariance() -> Outcome {
    let model = FbmModel::new(1.0, 0.75).unwrap();
    let steps = 512;
    let dt = 1.0 / steps as f64;
    let n = 10_000;
    let fbm = generate_fbm(&model, steps, dt, n, 404, FbmMethod::Circulant, Executor::Parallel).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let i = rng.random_range(1..=steps);
        let j = rng.random_range(1..=steps);
        let prod: Vec<f64> = fbm.paths.iter().map(|x| x[i] * x[j]).collect();
        let mean = prod.iter().sum::<f64>() / n as f64;
        let var = prod.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        let exact = fbm_covariance(&model, i as f64 * dt, j as f64 * dt);
        worst = worst.max((mean - exact).abs() / se);
    }
    outcome(worst < 3.0, format!("10 random (i, j), worst deviation {worst:.2} standard errors (need < 3)"))
}

fn c5_hurst_calibration() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, h) in [0.6, 0.75, 0.9].into_iter().enumerate() {
        let model = FbmModel::new(1.0, h).unwrap();
        let trajs = fbm_trajectories(&model, 512, 1.0 / 512.0, 10_000, 1, 500 + k as u64, FbmMethod::Circulant, Executor::Parallel)
            .unwrap();
        let mut stats = EnsembleStats::new(1, LagGrid::for_times(&trajs[0].times).unwrap());
        for t in &trajs {
            stats.accumulate(t).unwrap();
        }
        let fit = fit_hurst(&msd_curve(&stats).unwrap(), FitWindow::default_for(1.0)).unwrap();
        let err = (fit.h_hat - h).abs();
        pass &= err < 0.02;
        parts.push(format!("H {h}: h_hat {:.4} (|err| {err:.4})", fit.h_hat));
    }
    outcome(pass, format!("{} (need < 0.02)", parts.join(", ")))
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Slope of the lagged value on the initial one; its sampling variance is
/// (1 − r²)/n.
fn ou_lag_correlation(pieces: usize, master: u64) -> (f64, f64) {
    let p = SpectrumParams::reference();
    let n = 100_000;
    let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let mode = Mode {
            k: vec![1.0, 0.0],
            weight: 1.0,
            rate: p.rate(1.0),
            basis: vec![vec![0.0, 1.0]],
            xi: vec![0.0],
            eta: vec![0.0],
        };
        let mut f = FieldRealization::from_modes(&p, vec![mode], StreamSeed::new(master, i as u64)).unwrap();
        f.advance(40.0);
        a.push(f.mode(0).xi[0]);
        for _ in 0..pieces {
            f.advance(1.0 / pieces as f64);
        }
        b.push(f.mode(0).xi[0]);
    }
    let m = n as f64;
    let r = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / a.iter().map(|x| x * x).sum::<f64>();
    (r, ((1.0 - r * r) / m).sqrt())
}

fn c6_field_fidelity() -> Outcome {
    let p = SpectrumParams::reference();
    let measure = SpectralMeasure::new(&p, 64, SamplingStrategy::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_div = 0.0f64;
    for i in 0..1000 {
        let f = measure.realize(StreamSeed::new(606, i));
        let x = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
        worst_div = worst_div.max(f.divergence_at(&x).abs() / f.divergence_scale());
    }

    let exact = spatial_covariance(&p, 0.0, &[0.0, 0.0], &QuadConfig::relative(1e-9)).unwrap().tensor;
    let small = SpectralMeasure::new(&p, 32, SamplingStrategy::default()).unwrap();
    let n = 100_000;
    let x = [2.5, -4.0];
    let (mut xx, mut yy, mut xy) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let v = small.realize(StreamSeed::new(607, i as u64)).evaluate(&x);
        xx.push(v[0] * v[0]);
        yy.push(v[1] * v[1]);
        xy.push(v[0] * v[1]);
    }
    let mut worst_cov = 0.0f64;
    for (s, target) in [(&xx, exact[(0, 0)]), (&yy, exact[(1, 1)]), (&xy, exact[(0, 1)])] {
        let (m, se) = mean_se(s);
        worst_cov = worst_cov.max((m - target).abs() / se);
    }

    let target = time_correlation(&p, 1.0, 1.0);
    let (coarse, se_c) = ou_lag_correlation(1, 608);
    let (fine, se_f) = ou_lag_correlation(10, 609);
    let z_coarse = (coarse - target).abs() / se_c;
    let z_fine = (fine - target).abs() / se_f;
    let z_step = (coarse - fine).abs() / (se_c * se_c + se_f * se_f).sqrt();

    let pass = worst_div < 1e-10 && worst_cov < 3.0 && z_coarse < 3.0 && z_fine < 3.0 && z_step < 3.0;
    outcome(
        pass,
        format!(
            "divergence residual {worst_div:.1e} (need < 1e-10); covariance worst {worst_cov:.2} sigma; \
             OU lag-1 correlation {coarse:.4} (one step) / {fine:.4} (ten steps) vs {target:.4}, \
             z = {z_coarse:.2} / {z_fine:.2}, step dependence z = {z_step:.2}"
        ),
    )
}

/// Long horizons are needed for the t^{3/2} law to emerge at these ε; the
/// fit window is the default [0.1, 0.5]·t_final = [10, 50].
const STAT_T_FINAL: f64 = 100.0;
const STAT_STEPS: usize = 200;

fn c7_frozen_control() -> Outcome {
    let p = SpectrumParams::reference();
    let d = reference_d();
    let cfg = TracerConfig::uniform(0.1, STAT_T_FINAL, STAT_STEPS, 0.1, 4096);
    let opts = EnsembleOptions {
        mode: EnsembleMode::FrozenExact,
        ..EnsembleOptions::default()
    };
    let result = run_ensemble(&p, &cfg, 2000, 7007, &opts).unwrap();
    let fit = fit_hurst(&msd_curve(&result.stats).unwrap(), FitWindow::default_for(STAT_T_FINAL)).unwrap();
    let tol = Tolerances {
        hurst_abs: 0.05,
        diffusion_rel: 0.2,
        kurtosis_sigmas: 3.0,
        fourth_slope_abs: Some(0.1),
    };
    let v = compare_to_theory(&fit, &FbmModel::new(d, 0.75).unwrap(), &tol);
    let wanted = ["hurst", "diffusion", "fourth_moment_slope"];
    let pass = v
        .criteria
        .iter()
        .filter(|c| wanted.contains(&c.name.as_str()))
        .all(|c| c.pass);
    outcome(
        pass,
        format!(
            "2000 frozen trajectories, eps 0.1, 4096 modes: h_hat {:.4} ± {:.4} (need |h - 0.75| <= 0.05), \
             d_hat {:.3} vs D {d:.3} ({:+.1}%, need within 20%), fourth-moment slope {:.3} ± {:.3} (need 3.0 ± 0.1)",
            fit.h_hat,
            fit.h_stderr,
            fit.d_hat,
            100.0 * (fit.d_hat / d - 1.0),
            fit.fourth_slope,
            fit.fourth_slope_stderr
        ),
    )
}

fn c8_full_ladder() -> Outcome {
    let p = SpectrumParams::reference();
    let d = reference_d();
    let model = FbmModel::new(d, 0.75).unwrap();
    let mut rows = Vec::new();
    for (k, eps) in [0.4, 0.2, 0.1].into_iter().enumerate() {
        let t0 = Instant::now();
        let cfg = TracerConfig::uniform(eps, STAT_T_FINAL, STAT_STEPS, 0.1, 256);
        let result = run_ensemble(&p, &cfg, 1000, 8008 + k as u64, &EnsembleOptions::default()).unwrap();
        let fit = fit_hurst(&msd_curve(&result.stats).unwrap(), FitWindow::default_for(STAT_T_FINAL)).unwrap();
        let v = compare_to_theory(&fit, &model, &Tolerances::default());
        let kurt_ok = v.criteria.iter().find(|c| c.name == "kurtosis").is_some_and(|c| c.pass);
        eprintln!(
            "  eps {eps}: h_hat {:.4} ± {:.4}, d_hat {:.3}, kurtosis {:.3} ± {:.3} ({:.0} s)",
            fit.h_hat,
            fit.h_stderr,
            fit.d_hat,
            fit.mean_kurtosis,
            fit.mean_kurtosis_stderr,
            t0.elapsed().as_secs_f64()
        );
        rows.push((eps, fit, kurt_ok));
    }
    let errs: Vec<f64> = rows.iter().map(|(_, f, _)| (f.h_hat - 0.75).abs()).collect();
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    let (_, last, kurt_ok) = rows.last().unwrap();
    let close = errs[2] < 0.05;
    let ladder: Vec<String> = rows
        .iter()
        .zip(&errs)
        .map(|((eps, f, _), e)| format!("eps {eps}: h_hat {:.4} (|err| {e:.4})", f.h_hat))
        .collect();
    outcome(
        monotone && close && *kurt_ok,
        format!(
            "1000 full trajectories per eps, 256 modes: {}; monotone {monotone}, final < 0.05 {close}; \
             kurtosis at eps 0.1 {:.3} ± {:.3} (within 3 sigma: {kurt_ok})",
            ladder.join(", "),
            last.mean_kurtosis,
            last.mean_kurtosis_stderr
        ),
    )
}

type Check = (usize, &'static str, fn() -> Outcome);

fn files_under(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}

fn c9_determinism() -> Outcome {
    let tmp = std::env::temp_dir().join(format!("fbmlab-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&tmp);
    for threads in ["1", "4"] {
        let out = tmp.join(format!("threads{threads}"));
        let out = out.to_str().unwrap();
        let common = ["fbmlab", "--output-dir", out, "--seed", "99", "--threads", threads];
        let sim = ["simulate", "--eps", "0.4,0.2", "--n-traj", "24", "--modes", "128", "--steps", "20", "--dump-modes"];
        let fbm = ["fbm", "--hurst", "0.75", "--paths", "64", "--steps", "128"];
        for cmd in [&sim[..], &fbm[..]] {
            let args: Vec<&str> = common.iter().chain(cmd).copied().collect();
            let code = fbmlab_cli::run(args);
            if code != 0 {
                return outcome(false, format!("command {cmd:?} exited with {code}"));
            }
        }
    }
    let (a, b) = (tmp.join("threads1"), tmp.join("threads4"));
    let names = files_under(&a);
    if names != files_under(&b) {
        return outcome(false, "different file sets");
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    for name in names.iter().filter(|n| !n.ends_with("metadata.json")) {
        compared += 1;
        if fs::read(a.join(name)).unwrap() != fs::read(b.join(name)).unwrap() {
            differing.push(name.clone());
        }
    }
    let _ = fs::remove_dir_all(&tmp);
    outcome(
        differing.is_empty(),
        format!("{compared} files compared between 1 and 4 threads, differing: {differing:?}"),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("FBMLAB_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("FBMLAB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: [Check; 9] = [
        (1, "exponent identities", c1_exponents),
        (2, "Taylor-Kubo classifier", c2_taylor_kubo),
        (3, "finite-eps oracle approaches D", c3_oracle_ladder),
        (4, "FBM generator covariance", c4_fbm_covariance),
        (5, "Hurst estimator calibration", c5_hurst_calibration),
        (6, "field fidelity", c6_field_fidelity),
        (7, "frozen control process", c7_frozen_control),
        (8, "full dynamics ladder", c8_full_ladder),
        (9, "thread-count determinism", c9_determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let o = run();
        let secs = t0.elapsed().as_secs_f64();
        println!(
            "[{}] C{id} {name}: {} ({secs:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {failed} criteria failed");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
