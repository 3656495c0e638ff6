//! Subcommand drivers: resolve a config block, run the experiment, write
//! CSV/JSON outputs, and seal everything in one manifest per run.
//!
//! Output discipline: floats in CSV are formatted `{:.17e}` (exact
//! round-trip), JSON goes through `serde_json` (shortest round-trip
//! representation), all iteration orders are fixed, and trajectory `j`
//! always uses seed `master_seed ^ j`. Identical `(config, master seed,
//! code revision)` therefore reproduce every output byte for byte, and the
//! manifest's `summary_hash` (which skips wall-clock fields) must match
//! across such reruns.
//!
//! Exit-code contract: validation problems (bad config, unknown hypothesis,
//! malformed grid) map to code 1, runtime failures to code 2. A suspected
//! blow-up inside a trajectory is data, never a failure. A cancellation
//! sweep or acceptance suite that runs fine but measures a violation exits
//! 2 with its outputs and manifest already written.

use crate::acceptance::{run_suite, Suite, SuiteReport};
use crate::cascade::{CascadeError, CascadeOperator, StructureConstants};
use crate::config::{
    CancellationConfig, ConfigError, ExperimentConfig, RunManifest, parse_rho_grid,
};
use crate::hypotheses::{
    check, closed_form_threshold, threshold_with_delta, ExponentProblem, Hypothesis,
    HypothesesError, VerdictReport,
};
use crate::noise::{corrector_limit_error, NoiseError, ThetaSequence};
use crate::shell::{integrate, ShellRun, StopReason};
use crate::spde::{CutoffFn, SpdeError, SpdeSystem, TrajectoryRecord};
use crate::spectral::{BallFamily, BandError, BumpProfile, FieldError, WaveletFamily};
use num::rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Spde(#[from] SpdeError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Band(#[from] BandError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Hypotheses(#[from] HypothesesError),
    #[error("{0}")]
    Invalid(String),
}

impl RunnerError {
    /// Process exit code for this failure: 1 for validation problems the
    /// user can fix in the invocation, 2 for runtime aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) | RunnerError::Invalid(_) => 1,
            RunnerError::Hypotheses(e) => match e {
                HypothesesError::UnknownHypothesis(_)
                | HypothesesError::InvalidRho(_)
                | HypothesesError::InvalidDelta(_)
                | HypothesesError::InvalidTolerance(_)
                | HypothesesError::InvalidNumber(_) => 1,
                _ => 2,
            },
            _ => 2,
        }
    }
}

/// Fix the global rayon pool size from the `--threads` flag with the
/// `CASCADE_THREADS` environment variable as fallback; absent both, the
/// default pool stands. Returns the effective thread count.
pub fn configure_threads(flag: Option<usize>) -> Result<usize, RunnerError> {
    let requested = match flag {
        Some(n) => Some(n),
        None => match std::env::var("CASCADE_THREADS") {
            Ok(s) => Some(s.trim().parse::<usize>().map_err(|_| {
                RunnerError::Invalid(format!("CASCADE_THREADS=`{s}` is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    match requested {
        Some(0) => Err(RunnerError::Invalid("thread count must be positive".into())),
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| RunnerError::Invalid(e.to_string()))?;
            Ok(n)
        }
        None => Ok(rayon::current_num_threads()),
    }
}

/// Resolved invocation: the loaded config with CLI overrides applied.
#[derive(Debug, Clone)]
pub struct RunContext {
    config: ExperimentConfig,
    out_dir: PathBuf,
    master_seed: u64,
}

impl RunContext {
    pub fn new(
        config: ExperimentConfig,
        out_dir: Option<PathBuf>,
        master_seed: Option<u64>,
    ) -> Self {
        let out_dir = out_dir
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let master_seed = master_seed.unwrap_or(config.master_seed);
        Self { config, out_dir, master_seed }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    fn manifest(&self, subcommand: &str) -> Result<RunManifest, RunnerError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|source| RunnerError::Io { path: self.out_dir.clone(), source })?;
        Ok(RunManifest::new(subcommand, &self.config, self.master_seed)?)
    }

    fn write_output(
        &self,
        manifest: &mut RunManifest,
        name: &str,
        text: &str,
    ) -> Result<(), RunnerError> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, text)
            .map_err(|source| RunnerError::Io { path: path.clone(), source })?;
        manifest.record_output(&self.out_dir, name)?;
        Ok(())
    }

    fn seal(
        &self,
        mut manifest: RunManifest,
        name: &str,
        exit_code: i32,
    ) -> Result<CommandOutcome, RunnerError> {
        manifest.finalize();
        let manifest_path = manifest.write(&self.out_dir, name)?;
        Ok(CommandOutcome { manifest_path, summary_hash: manifest.summary_hash, exit_code })
    }
}

/// What a finished subcommand hands back to the process boundary.
#[derive(Debug, Clone)]
pub struct CommandOutcome {
    pub manifest_path: PathBuf,
    pub summary_hash: String,
    /// 0 for a clean run, 2 when the run itself measured a failure (a
    /// tolerance breach or a failed acceptance criterion).
    pub exit_code: i32,
}

/// Dispatch by subcommand name (the names the command line uses).
pub fn run_subcommand(ctx: &RunContext, name: &str) -> Result<CommandOutcome, RunnerError> {
    match name {
        "shell-run" => run_shell(ctx),
        "spde-run" => run_spde(ctx),
        "corrector-limit" => run_corrector_limit(ctx),
        "hypotheses" => run_hypotheses(ctx),
        "cancellation-test" => run_cancellation(ctx),
        "acceptance" => run_acceptance(ctx),
        other => Err(RunnerError::Invalid(format!("unknown subcommand `{other}`"))),
    }
}

fn fe(x: f64) -> String {
    format!("{x:.17e}")
}

fn stop_summary(run: &ShellRun) -> String {
    match run.stop {
        StopReason::Completed => format!("completed t={}", fe(run.final_time())),
        StopReason::BlowUpThreshold { t, proxy } => {
            format!("proxy threshold at t={} (proxy {})", fe(t), fe(proxy))
        }
        StopReason::StepUnderflow { t, dt } => {
            format!("step underflow at t={} (dt {})", fe(t), fe(dt))
        }
        StopReason::Decayed { t } => format!("decayed at t={}", fe(t)),
    }
}

/// `shell-run`: integrate the dyadic model, emit the recorded time series
/// and the final shell amplitudes.
pub fn run_shell(ctx: &RunContext) -> Result<CommandOutcome, RunnerError> {
    let cfg = ctx.config.shell_run();
    if cfg.record_stride == 0 {
        return Err(RunnerError::Invalid("shell-run record_stride must be positive".into()));
    }
    let initial = cfg.initial_state()?;
    let run = integrate(&initial, &cfg.options());

    let mut manifest = ctx.manifest("shell-run")?;
    let mut series = String::from("time,energy,proxy\n");
    let last = run.times.len() - 1;
    for i in 0..run.times.len() {
        if i % cfg.record_stride != 0 && i != last {
            continue;
        }
        let _ = writeln!(
            series,
            "{},{},{}",
            fe(run.times[i]),
            fe(run.energies[i]),
            fe(run.proxies[i])
        );
    }
    ctx.write_output(&mut manifest, "shell_series.csv", &series)?;

    let mut shells = String::from("shell,amplitude\n");
    for (i, &value) in run.final_state().iter().enumerate() {
        let _ = writeln!(shells, "{},{}", cfg.n_min + i as i32, fe(value));
    }
    ctx.write_output(&mut manifest, "shell_final.csv", &shells)?;

    println!(
        "shell-run: {} after {} accepted / {} rejected steps, monotone {}, blow-up {}",
        stop_summary(&run),
        run.steps_accepted,
        run.steps_rejected,
        run.monotone_norm,
        run.blow_up
    );
    ctx.seal(manifest, "shell_run_manifest.json", 0)
}

#[derive(Serialize)]
struct TrajectorySummary {
    seed: u64,
    final_time: f64,
    final_l2: f64,
    blow_up_at: Option<f64>,
    exceeded_at: Option<f64>,
}

#[derive(Serialize)]
struct SpdeSummary {
    trajectories: usize,
    t_end: f64,
    truncated_energy: f64,
    truncated_flux: f64,
    divergence_residual: f64,
    reality_residual: f64,
    blow_ups: usize,
    exceedances: usize,
    paths: Vec<TrajectorySummary>,
}

/// `spde-run`: integrate `trajectories` seeded paths of the configured
/// stochastic system and emit one long-format time series plus a summary.
pub fn run_spde(ctx: &RunContext) -> Result<CommandOutcome, RunnerError> {
    let cfg = ctx.config.spde_run();
    if cfg.trajectories == 0 {
        return Err(RunnerError::Invalid("spde-run needs at least one trajectory".into()));
    }
    if cfg.record_stride == 0 {
        return Err(RunnerError::Invalid("spde-run record_stride must be positive".into()));
    }
    let params = cfg.params();
    let theta = match &cfg.theta_shell {
        Some(t) => Some(ThetaSequence::shell(t.n, t.decay, cfg.dim)?),
        None => None,
    };
    let forcing = match &cfg.forcing {
        Some(f) => {
            let balls = BallFamily::standard(1, f.eps0)?;
            let family =
                WaveletFamily::build(balls, f.n_min, f.n_top, BumpProfile::Mollifier, None)?;
            Some(CascadeOperator::new(StructureConstants::dyadic_default(1), family, f.rho)?)
        }
        None => None,
    };
    let cutoff_fn = match cfg.cutoff_radius {
        Some(r) => Some(CutoffFn::new(r)?),
        None => None,
    };
    let system = SpdeSystem::new(params, theta, forcing, cutoff_fn)?;
    let u0 = cfg.initial.build(cfg.dim)?;

    let seeds: Vec<u64> = (0..cfg.trajectories).map(|j| ctx.master_seed ^ j as u64).collect();
    let records: Vec<TrajectoryRecord> = seeds
        .par_iter()
        .map(|&seed| system.run_trajectory(&u0, seed, cfg.record_stride))
        .collect::<Result<_, _>>()?;

    let mut manifest = ctx.manifest("spde-run")?;
    manifest.trajectory_seeds = seeds;

    let mut series = String::from("trajectory,time,l2_norm,dissipation_norm,weak_norm\n");
    let mut diagnostics = crate::spde::StepDiagnostics::default();
    let mut paths = Vec::with_capacity(records.len());
    for (j, rec) in records.iter().enumerate() {
        for (i, t) in rec.times.iter().enumerate() {
            let _ = writeln!(
                series,
                "{},{},{},{},{}",
                j,
                fe(*t),
                fe(rec.l2_norms[i]),
                fe(rec.dissipation_norms[i]),
                fe(rec.weak_norms[i])
            );
        }
        diagnostics.merge(&rec.diagnostics);
        paths.push(TrajectorySummary {
            seed: rec.seed,
            final_time: rec.final_time,
            final_l2: rec.final_field.l2_norm(),
            blow_up_at: rec.blow_up_at,
            exceeded_at: rec.exceeded_at,
        });
    }
    ctx.write_output(&mut manifest, "spde_series.csv", &series)?;

    let blow_ups = paths.iter().filter(|p| p.blow_up_at.is_some()).count();
    let exceedances = paths.iter().filter(|p| p.exceeded_at.is_some()).count();
    let summary = SpdeSummary {
        trajectories: records.len(),
        t_end: cfg.t_end,
        truncated_energy: diagnostics.truncated_energy,
        truncated_flux: diagnostics.truncated_flux,
        divergence_residual: diagnostics.divergence_residual,
        reality_residual: diagnostics.reality_residual,
        blow_ups,
        exceedances,
        paths,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(ConfigError::from)?;
    ctx.write_output(&mut manifest, "spde_summary.json", &(text + "\n"))?;
    manifest.truncated_energy = diagnostics.truncated_energy;
    manifest.truncated_flux = diagnostics.truncated_flux;

    println!(
        "spde-run: {} trajectories to t={}, blow-ups {}, stop-crossings {}, truncated energy {}",
        records.len(),
        fe(cfg.t_end),
        blow_ups,
        exceedances,
        fe(diagnostics.truncated_energy)
    );
    ctx.seal(manifest, "spde_run_manifest.json", 0)
}

/// `corrector-limit`: relative distance of the shell corrector from its
/// diffusive limit over the configured shell counts.
pub fn run_corrector_limit(ctx: &RunContext) -> Result<CommandOutcome, RunnerError> {
    let cfg = ctx.config.corrector_limit();
    if cfg.ns.is_empty() {
        return Err(RunnerError::Invalid("corrector-limit needs at least one shell count".into()));
    }
    let phi = cfg.probe_field()?;
    let mut manifest = ctx.manifest("corrector-limit")?;
    let mut series = String::from("n,error,rel_error\n");
    let mut final_rel = f64::NAN;
    for &n in &cfg.ns {
        let lim = corrector_limit_error(n, cfg.decay, cfg.nu, &phi)?;
        let _ = writeln!(series, "{},{},{}", lim.n, fe(lim.error), fe(lim.rel_error));
        final_rel = lim.rel_error;
    }
    ctx.write_output(&mut manifest, "corrector_limit.csv", &series)?;
    println!(
        "corrector-limit: {} shell counts, final relative error {}",
        cfg.ns.len(),
        fe(final_rel)
    );
    ctx.seal(manifest, "corrector_limit_manifest.json", 0)
}

#[derive(Serialize)]
struct ThresholdReport {
    hypothesis: String,
    bisection: f64,
    closed_form: String,
    closed_form_approx: f64,
}

fn approx_rational(r: &BigRational) -> f64 {
    use num::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

/// `hypotheses`: exact-arithmetic verdicts over the configured grid plus
/// bisection thresholds per hypothesis.
pub fn run_hypotheses(ctx: &RunContext) -> Result<CommandOutcome, RunnerError> {
    let cfg = ctx.config.hypotheses();
    if cfg.which.is_empty() {
        return Err(RunnerError::Invalid("hypotheses needs at least one system".into()));
    }
    let systems: Vec<Hypothesis> =
        cfg.which.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let grid = parse_rho_grid(&cfg.rho)?;
    let delta = BigRational::from_float(cfg.delta)
        .ok_or(HypothesesError::InvalidDelta(cfg.delta))?;

    let mut manifest = ctx.manifest("hypotheses")?;
    let mut rows = String::from("hypothesis,rho,pass,violated\n");
    let mut reports: Vec<VerdictReport> = Vec::new();
    let mut thresholds = Vec::new();
    for &hyp in &systems {
        let mut passes = 0usize;
        for rho in &grid {
            let problem = ExponentProblem::exact_with_delta(hyp, rho.clone(), delta.clone())?;
            let verdict = check(&problem);
            passes += verdict.pass as usize;
            let violated: Vec<&str> = verdict.violated().iter().map(|c| c.name).collect();
            let _ = writeln!(
                rows,
                "{},{},{},{}",
                hyp.cli_token(),
                fe(approx_rational(rho)),
                verdict.pass,
                violated.join(";")
            );
            reports.push(VerdictReport::from(&verdict));
        }
        let bisection = threshold_with_delta(hyp, cfg.delta, cfg.threshold_tol)?;
        let exact = closed_form_threshold(hyp, &delta);
        println!(
            "hypotheses: {} passes {}/{} grid points, threshold {} (exact {})",
            hyp,
            passes,
            grid.len(),
            fe(bisection),
            exact
        );
        thresholds.push(ThresholdReport {
            hypothesis: hyp.to_string(),
            bisection,
            closed_form_approx: approx_rational(&exact),
            closed_form: exact.to_string(),
        });
    }
    ctx.write_output(&mut manifest, "hypotheses_grid.csv", &rows)?;
    let verdicts = serde_json::to_string_pretty(&reports).map_err(ConfigError::from)?;
    ctx.write_output(&mut manifest, "hypotheses_verdicts.json", &(verdicts + "\n"))?;
    let thresholds = serde_json::to_string_pretty(&thresholds).map_err(ConfigError::from)?;
    ctx.write_output(&mut manifest, "hypotheses_thresholds.json", &(thresholds + "\n"))?;
    ctx.seal(manifest, "hypotheses_manifest.json", 0)
}

/// `cancellation-test`: seeded random span fields against the flux and
/// symmetry identities of the cascade. Writes every sample; a measured
/// violation exits 2 after the outputs are sealed.
pub fn run_cancellation(ctx: &RunContext) -> Result<CommandOutcome, RunnerError> {
    let cfg = ctx.config.cancellation_test();
    if cfg.seeds == 0 {
        return Err(RunnerError::Invalid("cancellation-test needs at least one seed".into()));
    }
    let op = cancellation_operator(&cfg)?;
    let mut manifest = ctx.manifest("cancellation-test")?;
    let seeds: Vec<u64> = (0..cfg.seeds).map(|j| ctx.master_seed ^ j as u64).collect();
    let mut rows = String::from("seed,flux_ratio,symmetry_residual\n");
    let mut max_flux = 0.0f64;
    let mut max_sym = 0.0f64;
    for &seed in &seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = op.wavelets().random_span_field(&mut rng);
        let v = op.wavelets().random_span_field(&mut rng);
        let flux_ratio = op.energy_flux(&u)?.abs() / u.l2_norm().powi(3);
        let cuv = op.apply(&u, &v)?;
        let cvu = op.apply(&v, &u)?;
        let denom = cuv.field.l2_norm();
        let mut diff = cuv.field;
        diff.axpy(-1.0, &cvu.field)?;
        let symmetry = diff.l2_norm() / denom;
        max_flux = max_flux.max(flux_ratio);
        max_sym = max_sym.max(symmetry);
        let _ = writeln!(rows, "{},{},{}", seed, fe(flux_ratio), fe(symmetry));
    }
    manifest.trajectory_seeds = seeds;
    ctx.write_output(&mut manifest, "cancellation.csv", &rows)?;
    let ok = max_flux <= cfg.flux_tolerance && max_sym <= cfg.symmetry_tolerance;
    println!(
        "cancellation-test: max flux ratio {} (tolerance {}), max symmetry residual {} (tolerance {}): {}",
        fe(max_flux),
        fe(cfg.flux_tolerance),
        fe(max_sym),
        fe(cfg.symmetry_tolerance),
        if ok { "ok" } else { "violated" }
    );
    ctx.seal(manifest, "cancellation_test_manifest.json", if ok { 0 } else { 2 })
}

fn cancellation_operator(cfg: &CancellationConfig) -> Result<CascadeOperator, RunnerError> {
    let balls = BallFamily::standard(1, cfg.eps0)?;
    let family =
        WaveletFamily::build(balls, cfg.n_min, cfg.n_top, BumpProfile::Mollifier, None)?;
    Ok(CascadeOperator::new(StructureConstants::dyadic_default(1), family, 0.0)?)
}

/// `acceptance`: run the criteria suite, print one line per criterion,
/// and embed the machine-readable summary in the manifest.
pub fn run_acceptance(ctx: &RunContext) -> Result<CommandOutcome, RunnerError> {
    let cfg = ctx.config.acceptance();
    let suite: Suite = cfg.suite.parse().map_err(RunnerError::Invalid)?;
    let report = run_suite(suite, ctx.master_seed);
    print_suite(&report);
    let mut manifest = ctx.manifest("acceptance")?;
    let text = serde_json::to_string_pretty(&report).map_err(ConfigError::from)?;
    ctx.write_output(&mut manifest, "acceptance_report.json", &(text + "\n"))?;
    manifest.acceptance =
        Some(serde_json::to_value(&report).map_err(ConfigError::from)?);
    let exit = if report.all_pass { 0 } else { 2 };
    ctx.seal(manifest, "acceptance_manifest.json", exit)
}

/// One line per criterion plus the suite verdict, on stdout.
pub fn print_suite(report: &SuiteReport) {
    for r in &report.results {
        println!(
            "[{:>2}] {:<24} {}  ({:>8.2}s)  {}",
            r.index,
            r.name,
            if r.pass { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        );
    }
    println!(
        "acceptance: suite {} with master seed {}: {} ({} criteria), summary hash {}",
        report.suite,
        report.master_seed,
        if report.all_pass { "all pass" } else { "FAILURES" },
        report.results.len(),
        report.summary_hash
    );
}
