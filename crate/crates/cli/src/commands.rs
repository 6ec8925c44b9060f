use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use chrono::Utc;
use fbmlab::analysis::{
    compare_to_theory, fbm_trajectories, fit_hurst, msd_curve, EnsembleStats, FitReport, LagGrid,
    Verdict,
};
use fbmlab::io::{read_trajectories, write_json, write_msd_csv, write_trajectories};
use fbmlab::quadrature::QuadConfig;
use fbmlab::theory::{
    effective_diffusion, scaling_exponent_delta, summarize, FbmModel, SpectrumParams, TheorySummary,
};
use fbmlab::tracer::{run_ensemble, EnsembleMode, EnsembleOptions, Simulation};
use fbmlab::{Executor, StreamSeed};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{Cli, Command, EXIT_CRITERIA_FAILED, EXIT_OK};

/// The stratification floor should outlast the longest simulated field time
/// by at least this factor.
pub const FLOOR_MARGIN: f64 = 10.0;

pub fn dispatch(cli: Cli) -> Result<i32> {
    let mut cfg = RunConfig::load_or_default(cli.common.config.as_deref())?;
    if let Some(seed) = cli.common.seed {
        cfg.master_seed = seed;
    }
    cfg.resolve_output_dir(cli.common.output_dir.clone());
    let threads = cli.common.threads;
    let user_config = cli.common.config.is_some();
    let body = move || execute(cli.command, cfg, user_config, threads);
    match threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("cannot build the worker pool")?
            .install(body),
        None => body(),
    }
}

fn execute(
    command: Command,
    mut cfg: RunConfig,
    user_config: bool,
    threads: Option<usize>,
) -> Result<i32> {
    match command {
        Command::Theory { params, run, json } => {
            params.apply(&mut cfg);
            run.apply(&mut cfg);
            cmd_theory(&cfg, json)
        }
        Command::Simulate {
            params,
            run,
            n_traj,
            dt_micro,
            modes,
            mode,
            dry_run,
            force,
            dump_modes,
            no_trajectories,
        } => {
            params.apply(&mut cfg);
            run.apply(&mut cfg);
            if let Some(n) = n_traj {
                cfg.n_traj = n;
            }
            if dt_micro.is_some() {
                cfg.dt_micro = dt_micro;
            }
            if let Some(m) = modes {
                cfg.m_count = m;
            }
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            if no_trajectories {
                cfg.write_trajectories = false;
            }
            let flags = SimulateFlags {
                dry_run,
                force,
                dump_modes,
                threads,
            };
            cmd_simulate(cfg, &flags)
        }
        Command::Fbm {
            params,
            hurst,
            dscalar,
            paths,
            steps,
            t_final,
            from_params,
            method,
        } => {
            params.apply(&mut cfg);
            if hurst.is_some() {
                cfg.fbm_hurst = hurst;
            }
            if dscalar.is_some() {
                cfg.fbm_dscalar = dscalar;
            }
            if let Some(p) = paths {
                cfg.fbm_paths = p;
            }
            if let Some(s) = steps {
                cfg.n_steps = s;
            }
            if let Some(t) = t_final {
                cfg.t_final = t;
            }
            if let Some(m) = method {
                cfg.fbm_method = m.into();
            }
            cmd_fbm(cfg, from_params, threads)
        }
        Command::Analyze {
            inputs,
            params,
            hurst,
            dscalar,
            window_min,
            window_max,
            hurst_tol,
            diffusion_tol,
            kurtosis_sigmas,
            fourth_slope_tol,
        } => {
            let overrides = AnalyzeOverrides {
                params,
                hurst,
                dscalar,
                window: match (window_min, window_max) {
                    (Some(a), Some(b)) => Some([a, b]),
                    (None, None) => None,
                    _ => bail!("--window-min and --window-max must be given together"),
                },
                hurst_tol,
                diffusion_tol,
                kurtosis_sigmas,
                fourth_slope_tol,
            };
            cmd_analyze(&inputs, cfg, user_config, &overrides)
        }
    }
}

/// Stratification floor versus the longest field time of a run.
#[derive(Debug, Clone, Serialize)]
pub struct FloorCheck {
    pub k_low: f64,
    /// k_low^{−2β}: the slowest resolved decorrelation time.
    pub correlation_time: f64,
    /// t_final/ε_min^{2δ}: the longest simulated field time.
    pub field_horizon: f64,
    pub adequate: bool,
}

impl FloorCheck {
    pub fn warning(&self) -> Option<String> {
        (!self.adequate).then(|| {
            format!(
                "warning: stratification floor k_low = {:e} resolves correlation times up to {:e}, \
                 which is not {FLOOR_MARGIN}x the field-time horizon {:e}; long-lag statistics \
                 will miss the slowest modes",
                self.k_low, self.correlation_time, self.field_horizon
            )
        })
    }
}

pub fn floor_check(p: &SpectrumParams, cfg: &RunConfig) -> Option<FloorCheck> {
    let fraction = match cfg.strategy {
        fbmlab::field::SamplingStrategy::LogStratified { k_low_fraction } => k_low_fraction,
        fbmlab::field::SamplingStrategy::Iid => return None,
    };
    let delta = scaling_exponent_delta(p).ok()?;
    let eps_min = cfg.eps_ladder.iter().copied().fold(f64::INFINITY, f64::min);
    if !eps_min.is_finite() {
        return None;
    }
    let k_low = fraction * p.support_k();
    let correlation_time = 1.0 / p.rate(k_low);
    let field_horizon = cfg.t_final / eps_min.powf(2.0 * delta);
    Some(FloorCheck {
        k_low,
        correlation_time,
        field_horizon,
        adequate: correlation_time >= FLOOR_MARGIN * field_horizon,
    })
}

#[derive(Serialize)]
struct TheoryReport<'a> {
    #[serde(flatten)]
    summary: &'a TheorySummary,
    stratification_floor: Option<FloorCheck>,
}

pub fn cmd_theory(cfg: &RunConfig, json: bool) -> Result<i32> {
    let p = cfg.params()?;
    let summary = summarize(&p, &QuadConfig::default())?;
    let floor = floor_check(&p, cfg);
    if json {
        let report = TheoryReport {
            summary: &summary,
            stratification_floor: floor,
        };
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(EXIT_OK);
    }
    println!(
        "alpha = {}, beta = {}, d = {}, K = {}, a(0) = {}",
        p.alpha(),
        p.beta(),
        p.dim(),
        p.support_k(),
        p.shell().plateau()
    );
    println!(
        "anomalous regime (alpha + beta > 1): {}",
        if summary.anomalous_regime { "yes" } else { "no" }
    );
    println!("Taylor-Kubo integral: {:?}", summary.taylor_kubo);
    match (summary.delta, summary.hurst, summary.diffusion) {
        (Some(delta), Some(h), Some(d)) => {
            println!("delta = {delta:.17}");
            println!("H = {h:.17}");
            println!(
                "D = {d:.17} (quadrature error {:.2e}); per-axis MSD = D t^(2H)",
                summary.diffusion_abs_error.unwrap_or(f64::NAN)
            );
            if let Some(i) = summary.eq8_integral {
                println!("radial diffusion integral = {i:.17} (D is twice this value)");
            }
        }
        _ => println!("delta, H and D are undefined outside the anomalous regime"),
    }
    println!("V_rms = {:.17}", summary.velocity_rms);
    if let Some(f) = &floor {
        println!(
            "stratification floor: k_low = {:e}, correlation time {:e}, field horizon {:e}",
            f.k_low, f.correlation_time, f.field_horizon
        );
        if let Some(w) = f.warning() {
            println!("{w}");
        }
    }
    Ok(EXIT_OK)
}

pub struct SimulateFlags {
    pub dry_run: bool,
    pub force: bool,
    pub dump_modes: bool,
    pub threads: Option<usize>,
}

/// Deterministic per-ε run description written beside the outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsRun {
    pub eps: f64,
    pub n_traj: usize,
    pub mode: EnsembleMode,
    pub master_seed: u64,
    pub dt_micro: f64,
    pub time_scale: f64,
    pub field_horizon: f64,
    pub k_low: Option<f64>,
}

/// The resolved config without its output location, so that reruns into
/// different directories write identical files.
fn portable_json(cfg: &RunConfig) -> String {
    RunConfig {
        output_dir: None,
        ..cfg.clone()
    }
    .to_json()
}

pub fn eps_dir_name(eps: f64) -> String {
    format!("eps_{eps}")
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

pub fn cmd_simulate(mut cfg: RunConfig, flags: &SimulateFlags) -> Result<i32> {
    cfg.validate_run()?;
    let p = cfg.params()?;
    let dt = cfg.resolve_dt_micro(&p)?;
    if let Some(f) = floor_check(&p, &cfg) {
        if let Some(w) = f.warning() {
            if !flags.force {
                bail!("{w}\nrerun with --force to proceed anyway");
            }
            eprintln!("{w}");
        }
    }
    let mut sims = Vec::with_capacity(cfg.eps_ladder.len());
    for &eps in &cfg.eps_ladder {
        let sim = Simulation::new(&p, &cfg.tracer_config(eps))?;
        let horizon = cfg.t_final / sim.time_scale();
        println!(
            "eps {eps}: {} trajectories, {} modes, field time {horizon:.6e}, about {:.3e} micro-steps each ({:?})",
            cfg.n_traj,
            cfg.m_count,
            (horizon / dt).ceil(),
            cfg.mode
        );
        sims.push(sim);
    }
    let out = cfg.output_dir();
    if flags.dry_run {
        println!("dry run: nothing written; output would go to {}", out.display());
        return Ok(EXIT_OK);
    }
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    fs::write(out.join("config.json"), portable_json(&cfg))
        .with_context(|| format!("cannot write into {}", out.display()))?;

    let started = Utc::now();
    let clock = Instant::now();
    let mut per_eps = Vec::new();
    for (sim, &eps) in sims.iter().zip(&cfg.eps_ladder) {
        let dir = out.join(eps_dir_name(eps));
        fs::create_dir_all(&dir)?;
        let opts = EnsembleOptions {
            mode: cfg.mode,
            keep_trajectories: cfg.write_trajectories,
            executor: Executor::Parallel,
            lags: None,
        };
        let t0 = Instant::now();
        let result = run_ensemble(&p, sim.config(), cfg.n_traj, cfg.master_seed, &opts)?;
        let elapsed = t0.elapsed().as_secs_f64();
        if let Some(trajs) = &result.trajectories {
            let mut w = create_file(&dir.join("trajectories.csv"))?;
            write_trajectories(&mut w, trajs)?;
            w.flush()?;
        }
        let curve = msd_curve(&result.stats)?;
        let mut w = create_file(&dir.join("msd.csv"))?;
        write_msd_csv(&mut w, &curve)?;
        w.flush()?;
        let run = EpsRun {
            eps,
            n_traj: cfg.n_traj,
            mode: cfg.mode,
            master_seed: cfg.master_seed,
            dt_micro: dt,
            time_scale: sim.time_scale(),
            field_horizon: cfg.t_final / sim.time_scale(),
            k_low: sim.measure().k_low(),
        };
        write_json(create_file(&dir.join("run.json"))?, &run)?;
        if flags.dump_modes {
            let field = sim.field(StreamSeed::new(cfg.master_seed, 0));
            let mut w = create_file(&dir.join("modes.csv"))?;
            field.write_mode_table(&mut w)?;
            w.flush()?;
        }
        println!("eps {eps}: done in {elapsed:.1} s, outputs in {}", dir.display());
        per_eps.push(serde_json::json!({ "eps": eps, "elapsed_seconds": elapsed }));
    }
    let metadata = serde_json::json!({
        "tool": "fbmlab",
        "version": env!("CARGO_PKG_VERSION"),
        "started": started.to_rfc3339(),
        "finished": Utc::now().to_rfc3339(),
        "elapsed_seconds": clock.elapsed().as_secs_f64(),
        "threads": flags.threads.unwrap_or_else(rayon::current_num_threads),
        "runs": per_eps,
    });
    write_json(create_file(&out.join("metadata.json"))?, &metadata)?;
    Ok(EXIT_OK)
}

pub fn cmd_fbm(mut cfg: RunConfig, from_params: bool, threads: Option<usize>) -> Result<i32> {
    let model = if from_params {
        let p = cfg.params()?;
        let est = effective_diffusion(&p, &QuadConfig::default())?;
        cfg.fbm_hurst = Some(est.model.hurst);
        cfg.fbm_dscalar = Some(est.model.diffusion);
        est.model
    } else {
        let h = cfg
            .fbm_hurst
            .ok_or_else(|| anyhow!("give --hurst (and optionally --dscalar) or --from-params"))?;
        let d = *cfg.fbm_dscalar.get_or_insert(1.0);
        FbmModel::new(d, h)?
    };
    if cfg.n_steps == 0 || cfg.fbm_paths == 0 {
        bail!("need at least one step and one path");
    }
    let dt = cfg.t_final / cfg.n_steps as f64;
    let trajs = fbm_trajectories(
        &model,
        cfg.n_steps,
        dt,
        cfg.fbm_paths,
        cfg.dim,
        cfg.master_seed,
        cfg.fbm_method,
        Executor::Parallel,
    )?;
    let out = cfg.output_dir().join("fbm");
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    fs::write(out.join("config.json"), portable_json(&cfg))?;
    write_json(create_file(&out.join("model.json"))?, &model)?;
    let mut w = create_file(&out.join("trajectories.csv"))?;
    write_trajectories(&mut w, &trajs)?;
    w.flush()?;
    let mut stats = EnsembleStats::new(cfg.dim, LagGrid::for_times(&trajs[0].times)?);
    for t in &trajs {
        stats.accumulate(t)?;
    }
    let mut w = create_file(&out.join("msd.csv"))?;
    write_msd_csv(&mut w, &msd_curve(&stats)?)?;
    w.flush()?;
    let metadata = serde_json::json!({
        "tool": "fbmlab",
        "version": env!("CARGO_PKG_VERSION"),
        "created": Utc::now().to_rfc3339(),
        "threads": threads.unwrap_or_else(rayon::current_num_threads),
    });
    write_json(create_file(&out.join("metadata.json"))?, &metadata)?;
    println!(
        "wrote {} paths (H = {}, D = {}) to {}",
        cfg.fbm_paths,
        model.hurst,
        model.diffusion,
        out.display()
    );
    Ok(EXIT_OK)
}

pub struct AnalyzeOverrides {
    pub params: crate::ParamArgs,
    pub hurst: Option<f64>,
    pub dscalar: Option<f64>,
    pub window: Option<[f64; 2]>,
    pub hurst_tol: Option<f64>,
    pub diffusion_tol: Option<f64>,
    pub kurtosis_sigmas: Option<f64>,
    pub fourth_slope_tol: Option<f64>,
}

impl AnalyzeOverrides {
    fn apply(&self, c: &mut RunConfig) {
        self.params.apply(c);
        if self.window.is_some() {
            c.fit_window = self.window;
        }
        if let Some(v) = self.hurst_tol {
            c.hurst_tol = v;
        }
        if let Some(v) = self.diffusion_tol {
            c.diffusion_rel_tol = v;
        }
        if let Some(v) = self.kurtosis_sigmas {
            c.kurtosis_sigmas = v;
        }
        if self.fourth_slope_tol.is_some() {
            c.fourth_slope_tol = self.fourth_slope_tol;
        }
    }
}

/// One analyzed trajectory file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub input: PathBuf,
    pub eps: Option<f64>,
    pub n_traj: usize,
    pub fit: FitReport,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderRow {
    pub eps: f64,
    pub h_hat: f64,
    pub h_stderr: f64,
    pub hurst_error: f64,
    pub diffusion_rel_error: f64,
    pub mean_kurtosis: f64,
    pub pass: bool,
}

fn find_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for path in inputs {
        if path.is_file() {
            files.push(path.clone());
        } else if path.is_dir() {
            let direct = path.join("trajectories.csv");
            if direct.is_file() {
                files.push(direct);
                continue;
            }
            let mut found: Vec<PathBuf> = fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path().join("trajectories.csv")))
                .filter(|p| p.is_file())
                .collect();
            found.sort();
            if found.is_empty() {
                bail!("no trajectories: {} holds no trajectories.csv", path.display());
            }
            files.extend(found);
        } else {
            bail!("input {} does not exist", path.display());
        }
    }
    Ok(files)
}

fn read_json_near<T: for<'de> Deserialize<'de>>(file: &Path, name: &str) -> Result<Option<T>> {
    let dir = file.parent().unwrap_or(Path::new("."));
    for candidate in [dir.join(name), dir.join("..").join(name)] {
        if candidate.is_file() {
            let text = fs::read_to_string(&candidate)?;
            return serde_json::from_str(&text)
                .map(Some)
                .with_context(|| format!("invalid {}", candidate.display()));
        }
    }
    Ok(None)
}

pub fn cmd_analyze(
    inputs: &[PathBuf],
    base: RunConfig,
    user_config: bool,
    overrides: &AnalyzeOverrides,
) -> Result<i32> {
    let files = find_inputs(inputs)?;
    let mut reports = Vec::new();
    for file in &files {
        let mut cfg = if user_config {
            base.clone()
        } else {
            read_json_near::<RunConfig>(file, "config.json")?.unwrap_or_else(|| base.clone())
        };
        overrides.apply(&mut cfg);
        let trajs = read_trajectories(BufReader::new(
            File::open(file).with_context(|| format!("cannot open {}", file.display()))?,
        ))
        .with_context(|| format!("reading {}", file.display()))?;
        if trajs.is_empty() {
            bail!("no trajectories in {}", file.display());
        }
        let model = match (overrides.hurst, overrides.dscalar) {
            (Some(h), Some(d)) => FbmModel::new(d, h)?,
            (None, None) => match read_json_near::<FbmModel>(file, "model.json")? {
                Some(m) => m,
                None => effective_diffusion(&cfg.params()?, &QuadConfig::default())?.model,
            },
            _ => bail!("--hurst and --dscalar must be given together"),
        };
        let eps = read_json_near::<EpsRun>(file, "run.json")?.map(|r| r.eps);
        let dim = trajs[0].dim();
        let mut stats = EnsembleStats::new(dim, LagGrid::for_times(&trajs[0].times)?);
        for t in &trajs {
            stats
                .accumulate(t)
                .with_context(|| format!("{}: trajectory {}", file.display(), t.id))?;
        }
        let curve = msd_curve(&stats)?;
        let t_max = trajs[0].times.last().copied().unwrap_or(0.0) - trajs[0].times[0];
        let fit = fit_hurst(&curve, cfg.window_for(t_max))?;
        let verdict = compare_to_theory(&fit, &model, &cfg.tolerances());
        let dir = file.parent().unwrap_or(Path::new("."));
        let mut w = create_file(&dir.join("msd_loglog.csv"))?;
        write_msd_csv(&mut w, &curve)?;
        w.flush()?;
        let report = AnalysisReport {
            input: file.clone(),
            eps,
            n_traj: trajs.len(),
            fit,
            verdict,
        };
        write_json(create_file(&dir.join("report.json"))?, &report)?;
        print_report(&report);
        reports.push(report);
    }
    let mut ladder: Vec<LadderRow> = reports
        .iter()
        .filter_map(|r| {
            r.eps.map(|eps| LadderRow {
                eps,
                h_hat: r.fit.h_hat,
                h_stderr: r.fit.h_stderr,
                hurst_error: (r.fit.h_hat - r.verdict.model.hurst).abs(),
                diffusion_rel_error: r.fit.d_hat / r.verdict.model.diffusion - 1.0,
                mean_kurtosis: r.fit.mean_kurtosis,
                pass: r.verdict.pass,
            })
        })
        .collect();
    if !ladder.is_empty() {
        ladder.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        println!("ladder summary (error vs eps):");
        println!("{:>10} {:>10} {:>10} {:>12} {:>10} {:>6}", "eps", "h_hat", "|h-H|", "d/D-1", "kurtosis", "pass");
        for r in &ladder {
            println!(
                "{:>10} {:>10.4} {:>10.4} {:>12.4} {:>10.4} {:>6}",
                r.eps, r.h_hat, r.hurst_error, r.diffusion_rel_error, r.mean_kurtosis, r.pass
            );
        }
        let out = base.output_dir();
        fs::create_dir_all(&out)?;
        write_json(create_file(&out.join("ladder.json"))?, &ladder)?;
    }
    Ok(if reports.iter().all(|r| r.verdict.pass) {
        EXIT_OK
    } else {
        EXIT_CRITERIA_FAILED
    })
}

fn print_report(r: &AnalysisReport) {
    let label = r.eps.map_or_else(String::new, |e| format!(" (eps {e})"));
    println!("{}{label}: {} trajectories", r.input.display(), r.n_traj);
    println!(
        "  h_hat = {:.4} ± {:.4}, d_hat = {:.4} ± {:.4}, window [{}, {}]",
        r.fit.h_hat, r.fit.h_stderr, r.fit.d_hat, r.fit.d_stderr, r.fit.window.tau_min, r.fit.window.tau_max
    );
    for c in &r.verdict.criteria {
        println!(
            "  [{}] {}: measured {:.4}, expected {:.4}, deviation {:.4} (tolerance {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.expected,
            c.deviation,
            c.tolerance
        );
    }
}
