//! Strict JSON experiment configs and reproducibility manifests.
//!
//! A config file carries one optional parameter block per subcommand plus
//! the master seed and output directory; unknown keys anywhere are a parse
//! error (with line/column diagnostics from the JSON parser), and the
//! schema version must match this build. Every run writes exactly one
//! manifest naming its output files with content hashes, the config hash,
//! the code revision, and the per-trajectory seed ledger. The manifest's
//! `summary_hash` covers everything except wall-clock timestamps, so two
//! runs with identical `(config, master_seed, revision)` must agree on it
//! bit for bit.

use crate::hypotheses::{parse_decimal, HypothesesError};
use crate::shell::{IntegrateOptions, ShellParams, ShellState};
use crate::spde::SpdeParams;
use crate::spectral::{leray_apply, FieldError, SpectralField};
use num::rational::BigRational;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};
use thiserror::Error;

/// Config schema understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot access `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema version {found} (this build reads {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("{context}: {message}")]
    Invalid { context: &'static str, message: String },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Hypotheses(#[from] HypothesesError),
}

fn invalid(context: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { context, message: message.into() }
}

/// Top-level experiment description. Blocks are optional; a subcommand
/// without its block runs the documented defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shell_run: Option<ShellRunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spde_run: Option<SpdeRunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrector_limit: Option<CorrectorLimitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<HypothesesConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cancellation_test: Option<CancellationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<AcceptanceConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            master_seed: 0,
            out_dir: None,
            shell_run: None,
            spde_run: None,
            corrector_limit: None,
            hypotheses: None,
            cancellation_test: None,
            acceptance: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion {
                found: config.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String, ConfigError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn shell_run(&self) -> ShellRunConfig {
        self.shell_run.clone().unwrap_or_default()
    }

    pub fn spde_run(&self) -> SpdeRunConfig {
        self.spde_run.clone().unwrap_or_default()
    }

    pub fn corrector_limit(&self) -> CorrectorLimitConfig {
        self.corrector_limit.clone().unwrap_or_default()
    }

    pub fn hypotheses(&self) -> HypothesesConfig {
        self.hypotheses.clone().unwrap_or_default()
    }

    pub fn cancellation_test(&self) -> CancellationConfig {
        self.cancellation_test.clone().unwrap_or_default()
    }

    pub fn acceptance(&self) -> AcceptanceConfig {
        self.acceptance.clone().unwrap_or_default()
    }
}

/// `shell-run` block: dyadic shell model with adaptive RK4. Defaults run
/// the inviscid cascade-growth experiment (30 shells, energy injected at
/// shell 0, stop once the proxy grows a millionfold).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShellRunConfig {
    pub n_min: i32,
    pub n_top: i32,
    pub lambda: f64,
    /// Dissipation exponent `a` (damping rate `nu_d lambda^{2an}`).
    pub diss_exp: f64,
    pub nu_d: f64,
    /// Initial amplitudes as `(shell index, value)` pairs.
    pub initial: Vec<(i32, f64)>,
    pub t_end: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub rel_tol: f64,
    /// Exponent of the blow-up proxy norm.
    pub proxy_exponent: f64,
    /// Absolute proxy level that stops the run as blow-up evidence.
    pub blow_up_threshold: Option<f64>,
    pub decay_ratio: f64,
    /// Record every `record_stride`-th accepted state in the CSV.
    pub record_stride: usize,
}

impl Default for ShellRunConfig {
    fn default() -> Self {
        Self {
            n_min: 0,
            n_top: 29,
            lambda: 2.0,
            diss_exp: 1.0,
            nu_d: 0.0,
            initial: vec![(0, 1.0)],
            t_end: 10.0,
            dt_max: 1e-2,
            dt_min: 1e-12,
            rel_tol: 1e-10,
            proxy_exponent: 2.1,
            blow_up_threshold: Some(1e6),
            decay_ratio: 1e-6,
            record_stride: 1,
        }
    }
}

impl ShellRunConfig {
    pub fn params(&self) -> ShellParams {
        ShellParams {
            n_min: self.n_min,
            n_top: self.n_top,
            lambda: self.lambda,
            diss_exp: self.diss_exp,
            nu_d: self.nu_d,
            nonlinear: true,
        }
    }

    pub fn initial_state(&self) -> Result<ShellState, ConfigError> {
        let mut state = ShellState::zero(self.params());
        for &(n, value) in &self.initial {
            if n < self.n_min || n > self.n_top {
                return Err(invalid(
                    "shell-run initial data",
                    format!("shell {n} outside the window [{}, {}]", self.n_min, self.n_top),
                ));
            }
            if !value.is_finite() {
                return Err(invalid("shell-run initial data", format!("non-finite amplitude at shell {n}")));
            }
            state.set_amplitude(n, value);
        }
        Ok(state)
    }

    pub fn options(&self) -> IntegrateOptions {
        IntegrateOptions {
            t_end: self.t_end,
            dt_max: self.dt_max,
            dt_min: self.dt_min,
            rel_tol: self.rel_tol,
            proxy_exponent: self.proxy_exponent,
            blow_up_threshold: self.blow_up_threshold,
            decay_ratio: self.decay_ratio,
        }
    }
}

/// Shell-supported noise weights `theta` (radial shell `n`, polynomial
/// decay exponent).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaShellConfig {
    pub n: u32,
    pub decay: f64,
}

/// Cascade forcing block: dyadic structure constants on one ball with the
/// standard geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForcingConfig {
    pub eps0: f64,
    pub n_min: i32,
    pub n_top: i32,
    /// Regularity shift of the conjugated nonlinearity.
    pub rho: f64,
}

impl Default for ForcingConfig {
    fn default() -> Self {
        Self { eps0: 0.6, n_min: 1, n_top: 2, rho: 0.0 }
    }
}

/// Initial spectral field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialFieldConfig {
    /// Seeded uniform coefficients Leray-projected per mode.
    Random { cutoff: i64, seed: u64, scale: f64 },
    /// One conjugate mode pair with a real amplitude vector (projected onto
    /// the divergence-free plane of the mode).
    Mode { mode: [i64; 3], amplitude: [f64; 3] },
}

impl InitialFieldConfig {
    pub fn build(&self, dim: u8) -> Result<SpectralField, ConfigError> {
        match self {
            InitialFieldConfig::Random { cutoff, seed, scale } => {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                let mut field =
                    crate::spectral::random_divergence_free(dim, *cutoff, &mut rng)?;
                field.scale(*scale);
                Ok(field)
            }
            InitialFieldConfig::Mode { mode, amplitude } => {
                let cutoff = mode.iter().map(|c| c.abs()).max().unwrap_or(0).max(1);
                let mut field = SpectralField::new(dim, cutoff)?;
                let v = [
                    Complex64::new(amplitude[0], 0.0),
                    Complex64::new(amplitude[1], 0.0),
                    Complex64::new(amplitude[2], 0.0),
                ];
                let projected = leray_apply(*mode, &v);
                field.set_pair(*mode, projected)?;
                if field.l2_norm() == 0.0 {
                    return Err(invalid(
                        "initial field",
                        "mode amplitude projects to zero (parallel to the mode)",
                    ));
                }
                Ok(field)
            }
        }
    }
}

/// `spde-run` block: stochastic stepper, single path or ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpdeRunConfig {
    pub dim: u8,
    pub alpha: f64,
    pub nu: f64,
    pub projection_radius: u32,
    pub dt: f64,
    pub t_end: f64,
    pub weak_exponent: f64,
    pub dissipation_scale: f64,
    pub l2_stop: Option<f64>,
    /// 1 writes a single-path time series; more aggregates the ensemble.
    pub trajectories: usize,
    pub record_stride: usize,
    pub theta_shell: Option<ThetaShellConfig>,
    pub forcing: Option<ForcingConfig>,
    /// Radius of the Lipschitz forcing cutoff; absent leaves forcing raw.
    pub cutoff_radius: Option<f64>,
    pub initial: InitialFieldConfig,
}

impl Default for SpdeRunConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            alpha: 1.0,
            nu: 0.5,
            projection_radius: 3,
            dt: 1e-3,
            t_end: 0.1,
            weak_exponent: 0.01,
            dissipation_scale: 1.0,
            l2_stop: None,
            trajectories: 64,
            record_stride: 10,
            theta_shell: Some(ThetaShellConfig { n: 1, decay: 1.0 }),
            forcing: None,
            cutoff_radius: None,
            initial: InitialFieldConfig::Mode { mode: [1, 0, 0], amplitude: [0.0, 1.0, 0.0] },
        }
    }
}

impl SpdeRunConfig {
    pub fn params(&self) -> SpdeParams {
        SpdeParams {
            dim: self.dim,
            alpha: self.alpha,
            nu: self.nu,
            projection_radius: self.projection_radius,
            dt: self.dt,
            t_end: self.t_end,
            weak_exponent: self.weak_exponent,
            dissipation_scale: self.dissipation_scale,
            l2_stop: self.l2_stop,
        }
    }
}

/// `corrector-limit` block: distance of the shell corrector from its
/// diffusive limit over a shell-count sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectorLimitConfig {
    pub ns: Vec<u32>,
    pub decay: f64,
    pub nu: f64,
    pub mode: [i64; 3],
    pub amplitude: [f64; 3],
}

impl Default for CorrectorLimitConfig {
    fn default() -> Self {
        Self {
            ns: vec![4, 8, 16, 32],
            decay: 1.0,
            nu: 1.0,
            mode: [1, 0, 0],
            amplitude: [0.0, 1.0, 0.0],
        }
    }
}

impl CorrectorLimitConfig {
    pub fn probe_field(&self) -> Result<SpectralField, ConfigError> {
        InitialFieldConfig::Mode { mode: self.mode, amplitude: self.amplitude }.build(3)
    }
}

/// `hypotheses` block: which systems to sweep over which derivative orders.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypothesesConfig {
    /// Hypothesis tokens (`H1`, `H2p`, `H3p`, `H4`, `NSE`).
    pub which: Vec<String>,
    /// Either one decimal (`0.2`) or an inclusive grid `start..end:step`.
    pub rho: String,
    pub delta: f64,
    pub threshold_tol: f64,
}

impl Default for HypothesesConfig {
    fn default() -> Self {
        Self {
            which: vec!["H1".into(), "H2p".into(), "H3p".into(), "H4".into(), "NSE".into()],
            rho: "0..1:0.005".into(),
            delta: 0.01,
            threshold_tol: 1e-6,
        }
    }
}

/// Parse a sweep spec into exact rationals: a single decimal, or
/// `start..end:step` meaning `start, start+step, ...` up to and including
/// `end` when it lies on the grid.
pub fn parse_rho_grid(spec: &str) -> Result<Vec<BigRational>, ConfigError> {
    const MAX_POINTS: usize = 1_000_001;
    let spec = spec.trim();
    let Some((range, step)) = spec.split_once(':') else {
        return Ok(vec![parse_decimal(spec)?]);
    };
    let (start, end) = range
        .split_once("..")
        .ok_or_else(|| invalid("rho grid", format!("`{spec}` is not `start..end:step`")))?;
    let start = parse_decimal(start)?;
    let end = parse_decimal(end)?;
    let step = parse_decimal(step)?;
    if !step.is_positive() {
        return Err(invalid("rho grid", "step must be positive"));
    }
    if end < start {
        return Err(invalid("rho grid", "end below start"));
    }
    let mut out = Vec::new();
    let mut current = start;
    while current <= end {
        out.push(current.clone());
        if out.len() >= MAX_POINTS {
            return Err(invalid("rho grid", format!("more than {MAX_POINTS} points")));
        }
        current += &step;
    }
    Ok(out)
}

use num::Signed;

/// `cancellation-test` block: seeded random span fields against the energy
/// flux and symmetry identities.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CancellationConfig {
    pub seeds: usize,
    pub eps0: f64,
    pub n_min: i32,
    pub n_top: i32,
    /// Bound on `|<C(u,u), u>| / ||u||^3`.
    pub flux_tolerance: f64,
    /// Bound on `||C(u,v) - C(v,u)|| / ||C(u,v)||`.
    pub symmetry_tolerance: f64,
}

impl Default for CancellationConfig {
    fn default() -> Self {
        Self {
            seeds: 100,
            eps0: 0.6,
            n_min: 1,
            n_top: 2,
            flux_tolerance: 1e-10,
            symmetry_tolerance: 1e-12,
        }
    }
}

/// `acceptance` block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcceptanceConfig {
    /// `fast` skips the long-running Monte Carlo ensemble criterion;
    /// `full` runs everything.
    pub suite: String,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        Self { suite: "fast".into() }
    }
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hash of the canonical (compact, field-ordered) config serialization.
pub fn config_hash(config: &ExperimentConfig) -> Result<String, ConfigError> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

/// Code revision recorded in manifests: the `CASCADE_REVISION` environment
/// variable when set (e.g. by CI), otherwise the crate version.
pub fn code_revision() -> String {
    std::env::var("CASCADE_REVISION")
        .unwrap_or_else(|_| format!("cascade-lab {}", env!("CARGO_PKG_VERSION")))
}

/// One produced file: path relative to the output directory plus content
/// hash and size.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Reproducibility ledger written next to every run's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub subcommand: String,
    pub config_hash: String,
    pub code_revision: String,
    /// Wall-clock bookkeeping; excluded from `summary_hash`.
    pub created_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    pub master_seed: u64,
    pub trajectory_seeds: Vec<u64>,
    /// Squared mass lost to Galerkin/scale truncation, summed over the run.
    pub truncated_energy: f64,
    pub truncated_flux: f64,
    pub outputs: Vec<OutputRecord>,
    /// Machine-readable acceptance summary when the run was a suite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<serde_json::Value>,
    /// Hash over subcommand, config hash, revision, seeds, truncation
    /// totals, and output hashes; timestamps excluded by construction.
    pub summary_hash: String,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(
        subcommand: &str,
        config: &ExperimentConfig,
        master_seed: u64,
    ) -> Result<Self, ConfigError> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            subcommand: subcommand.to_string(),
            config_hash: config_hash(config)?,
            code_revision: code_revision(),
            created_unix_ms: unix_ms(),
            finished_unix_ms: None,
            master_seed,
            trajectory_seeds: Vec::new(),
            truncated_energy: 0.0,
            truncated_flux: 0.0,
            outputs: Vec::new(),
            acceptance: None,
            summary_hash: String::new(),
        })
    }

    /// Hash and record a file just written under `out_dir`.
    pub fn record_output(&mut self, out_dir: &Path, name: &str) -> Result<(), ConfigError> {
        let path = out_dir.join(name);
        let bytes = std::fs::read(&path)
            .map_err(|source| ConfigError::Io { path: path.clone(), source })?;
        self.outputs.push(OutputRecord {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Fix the summary hash and the finish timestamp.
    pub fn finalize(&mut self) {
        self.finished_unix_ms = Some(unix_ms());
        let mut hasher = Sha256::new();
        hasher.update(self.subcommand.as_bytes());
        hasher.update(self.config_hash.as_bytes());
        hasher.update(self.code_revision.as_bytes());
        hasher.update(self.master_seed.to_le_bytes());
        for seed in &self.trajectory_seeds {
            hasher.update(seed.to_le_bytes());
        }
        hasher.update(format!("{:.17e}|{:.17e}", self.truncated_energy, self.truncated_flux));
        for out in &self.outputs {
            hasher.update(out.path.as_bytes());
            hasher.update(out.sha256.as_bytes());
        }
        if let Some(acc) = &self.acceptance {
            hasher.update(acc.to_string().as_bytes());
        }
        let digest = hasher.finalize();
        self.summary_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
    }

    /// Serialize to `<out_dir>/<name>`; call after [`RunManifest::finalize`].
    pub fn write(&self, out_dir: &Path, name: &str) -> Result<PathBuf, ConfigError> {
        assert!(!self.summary_hash.is_empty(), "finalize the manifest before writing");
        let path = out_dir.join(name);
        let mut file = std::fs::File::create(&path)
            .map_err(|source| ConfigError::Io { path: path.clone(), source })?;
        let text = serde_json::to_string_pretty(self)?;
        file.write_all(text.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .map_err(|source| ConfigError::Io { path: path.clone(), source })?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }
}
