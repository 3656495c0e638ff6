//! Numbered acceptance checks with pinned tolerances.
//!
//! Ten criteria cover the load-bearing identities end to end: exact
//! cancellation of the cascade, wavelet orthonormality and support, the
//! corrector pairing identity and its diffusive scaling limit, agreement of
//! the stochastic ensemble mean with the matrix-exponential semigroup, the
//! Brownian covariation structure, the exact-rational exponent thresholds,
//! the shell-model decay/growth dichotomy, the pathwise energy equality of
//! the deterministic limit, and bitwise determinism of the whole suite.
//!
//! The `fast` suite runs everything except the Monte Carlo ensemble
//! criterion (5); `full` runs all ten. Criterion 10 re-executes the
//! suite's other criteria a second time with the same master seed and
//! compares canonical summary hashes, so both variants end with a real
//! double-run determinism check.
//!
//! Every criterion reports a `detail` string assembled only from numbers
//! formatted `{:.17e}` plus fixed text; wall-clock durations live in a
//! separate field, so detail strings (and the suite hash over them) are
//! reproducible for a fixed master seed.

use crate::cascade::{CascadeOperator, StructureConstants};
use crate::config::sha256_hex;
use crate::hypotheses::{
    self, check, threshold, threshold_with_delta, ExponentProblem, Hypothesis,
};
use crate::noise::{
    corrector_apply, corrector_limit_error, noise_apply, BrownianDriver, NoiseBasis,
    ThetaSequence,
};
use crate::shell::{integrate, IntegrateOptions, ShellParams, ShellState, StopReason};
use crate::spde::{SpdeParams, SpdeSystem};
use crate::spectral::{
    negate, random_divergence_free, BallFamily, BumpProfile, Mode, SpectralField, WaveletFamily,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

/// Pinned tolerances. Every number here is a contract; loosening one is a
/// behavior change, not a tweak.
pub mod tol {
    /// The cascade's energy flux vanishes identically in exact arithmetic;
    /// measured roundoff on 100 random span fields stays below 1e-13 of
    /// the cubic scale, so 1e-10 leaves three orders of headroom.
    pub const FLUX_REL: f64 = 1e-10;
    /// `C(u, v) - C(v, u)` is zero by term-level symmetry of the structure
    /// constants; only float summation order survives.
    pub const SYMMETRY_REL: f64 = 1e-12;
    /// Wavelet Gram matrix deviation from the identity.
    pub const ORTHO: f64 = 1e-12;
    /// Corrector pairing identity, relative to the dissipation side.
    pub const CORRECTOR_REL: f64 = 1e-10;
    /// Relative distance of the shell corrector from its diffusive limit at
    /// the largest shell count; the measured value is about 0.08 of this
    /// scale (see `LIMIT_ORACLE`), the bound is that value plus 20%.
    pub const LIMIT_AT_TOP: f64 = 0.1;
    /// Frozen reference errors for shell counts 4, 8, 16, 32, obtained from
    /// an independent direct evaluation and pinned.
    pub const LIMIT_ORACLE: [f64; 4] = [0.008221, 0.001914, 0.000530, 0.000106];
    /// Allowed relative deviation from `LIMIT_ORACLE`.
    pub const LIMIT_ORACLE_REL: f64 = 0.20;
    /// Ensemble mean against the semigroup reference, in standard errors of
    /// the mean estimator: the stepper's linear mean is exactly the
    /// semigroup, so the gap is pure Monte Carlo noise.
    pub const MEAN_FIELD_SIGMA: f64 = 3.0;
    /// Brownian quadratic covariation, in standard errors.
    pub const COVARIANCE_SIGMA: f64 = 4.0;
    /// Bisection error allowed against the exact thresholds.
    pub const THRESHOLD: f64 = 1e-6;
    /// Blow-up proxy growth factor demanded of the inviscid shell cascade.
    pub const PROXY_GROWTH: f64 = 1e6;
    /// Relative energy conservation along the inviscid shell run.
    pub const SHELL_ENERGY_REL: f64 = 1e-6;
    /// Energy-equality defect of the deterministic limit, relative to the
    /// initial energy.
    pub const ENERGY_EQ_REL: f64 = 1e-6;
}

/// Which criteria to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// All criteria except the long Monte Carlo ensemble one.
    Fast,
    /// Every criterion.
    Full,
}

impl Suite {
    /// Criterion indices executed (and re-executed by the determinism
    /// criterion), in order.
    pub fn criteria(&self) -> Vec<usize> {
        match self {
            Suite::Fast => vec![1, 2, 3, 4, 6, 7, 8, 9],
            Suite::Full => vec![1, 2, 3, 4, 5, 6, 7, 8, 9],
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Fast => "fast",
            Suite::Full => "full",
        })
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fast" => Ok(Suite::Fast),
            "full" => Ok(Suite::Full),
            other => Err(format!("unknown suite `{other}` (expected fast or full)")),
        }
    }
}

/// Outcome of one criterion.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub index: usize,
    pub name: &'static str,
    pub pass: bool,
    /// Canonical numeric summary; deterministic for a fixed master seed.
    pub detail: String,
    /// Wall-clock seconds; excluded from all hashing.
    pub seconds: f64,
}

/// Machine-readable suite outcome.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub master_seed: u64,
    pub all_pass: bool,
    /// Hash over `(index, name, pass, detail)` of every result, in order.
    pub summary_hash: String,
    pub results: Vec<CriterionResult>,
}

/// Canonical hash of a result list (the determinism contract's object).
pub fn results_hash(results: &[CriterionResult]) -> String {
    let mut canonical = String::new();
    for r in results {
        canonical.push_str(&format!("{}|{}|{}|{}\n", r.index, r.name, r.pass, r.detail));
    }
    sha256_hex(canonical.as_bytes())
}

fn seed_for(master_seed: u64, criterion: u64, lane: u64) -> u64 {
    master_seed ^ (criterion.wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ lane
}

fn fe(x: f64) -> String {
    format!("{x:.17e}")
}

fn run_criterion(
    index: usize,
    name: &'static str,
    body: impl FnOnce() -> Result<(bool, String), String>,
) -> CriterionResult {
    let start = Instant::now();
    let (pass, detail) = match body() {
        Ok(pair) => pair,
        Err(message) => (false, format!("error: {message}")),
    };
    CriterionResult { index, name, pass, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Run one criterion by index (1 through 9; 10 is the suite-level
/// determinism check).
pub fn run_single(index: usize, master_seed: u64) -> CriterionResult {
    match index {
        1 => criterion_cancellation(master_seed),
        2 => criterion_wavelet_structure(master_seed),
        3 => criterion_corrector_identity(master_seed),
        4 => criterion_scaling_limit(master_seed),
        5 => criterion_mean_field(master_seed),
        6 => criterion_brownian_covariance(master_seed),
        7 => criterion_exponent_thresholds(master_seed),
        8 => criterion_shell_dichotomy(master_seed),
        9 => criterion_energy_equality(master_seed),
        other => CriterionResult {
            index: other,
            name: "unknown",
            pass: false,
            detail: format!("error: no criterion {other}"),
            seconds: 0.0,
        },
    }
}

fn run_criteria(suite: Suite, master_seed: u64) -> Vec<CriterionResult> {
    suite.criteria().into_iter().map(|i| run_single(i, master_seed)).collect()
}

/// Execute the suite: its criteria once, then (criterion 10) the same list
/// a second time, comparing canonical hashes.
pub fn run_suite(suite: Suite, master_seed: u64) -> SuiteReport {
    let mut results = run_criteria(suite, master_seed);
    let start = Instant::now();
    let first_hash = results_hash(&results);
    let second_hash = results_hash(&run_criteria(suite, master_seed));
    let pass = first_hash == second_hash;
    results.push(CriterionResult {
        index: 10,
        name: "determinism",
        pass,
        detail: format!("first {first_hash}, second {second_hash}"),
        seconds: start.elapsed().as_secs_f64(),
    });
    let all_pass = results.iter().all(|r| r.pass);
    let summary_hash = results_hash(&results);
    SuiteReport {
        suite: suite.to_string(),
        master_seed,
        all_pass,
        summary_hash,
        results,
    }
}

fn standard_family() -> Result<WaveletFamily, String> {
    let balls = BallFamily::standard(1, 0.6).map_err(|e| e.to_string())?;
    WaveletFamily::build(balls, 1, 2, BumpProfile::Mollifier, None).map_err(|e| e.to_string())
}

fn standard_operator() -> Result<CascadeOperator, String> {
    CascadeOperator::new(StructureConstants::dyadic_default(1), standard_family()?, 0.0)
        .map_err(|e| e.to_string())
}

/// Criterion 1: the quadratic cascade neither creates nor destroys energy,
/// and the operator is symmetric, on 100 seeded random span fields.
fn criterion_cancellation(master_seed: u64) -> CriterionResult {
    run_criterion(1, "cascade-cancellation", || {
        let op = standard_operator()?;
        let mut max_flux = 0.0f64;
        let mut max_sym = 0.0f64;
        for j in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_for(master_seed, 1, j));
            let u = op.wavelets().random_span_field(&mut rng);
            let v = op.wavelets().random_span_field(&mut rng);
            let flux = op.energy_flux(&u).map_err(|e| e.to_string())?;
            let cube = u.l2_norm().powi(3);
            max_flux = max_flux.max(flux.abs() / cube);
            let cuv = op.apply(&u, &v).map_err(|e| e.to_string())?;
            let cvu = op.apply(&v, &u).map_err(|e| e.to_string())?;
            let denom = cuv.field.l2_norm();
            let mut diff = cuv.field;
            diff.axpy(-1.0, &cvu.field).map_err(|e| e.to_string())?;
            max_sym = max_sym.max(diff.l2_norm() / denom);
        }
        let pass = max_flux <= tol::FLUX_REL && max_sym <= tol::SYMMETRY_REL;
        Ok((pass, format!("max flux ratio {}, max symmetry residual {}", fe(max_flux), fe(max_sym))))
    })
}

/// Criterion 2: wavelets are orthonormal to machine precision, supported on
/// exactly their lattice bands, and mean-free.
fn criterion_wavelet_structure(_master_seed: u64) -> CriterionResult {
    run_criterion(2, "wavelet-structure", || {
        let family = standard_family()?;
        let mut max_gram_dev = 0.0f64;
        let mut support_exact = true;
        let mut max_mean = 0.0f64;
        for (&(i1, n1), w1) in family.iter() {
            for (&(i2, n2), w2) in family.iter() {
                let ip = w1.field().inner_product(w2.field());
                let expected = if (i1, n1) == (i2, n2) { 1.0 } else { 0.0 };
                max_gram_dev = max_gram_dev.max((ip - expected).abs());
            }
            let expected: BTreeSet<Mode> =
                family.balls().lattice_band(i1, n1).map_err(|e| e.to_string())?.into_iter().collect();
            let actual: BTreeSet<Mode> = w1.support().into_iter().collect();
            support_exact &= expected == actual;
            let mean = w1.field().mean_value();
            max_mean = max_mean.max(mean.iter().map(|c| c.norm()).sum());
        }
        let pass = max_gram_dev <= tol::ORTHO && support_exact && max_mean == 0.0;
        Ok((
            pass,
            format!(
                "max gram deviation {}, supports exact {}, max mean {}",
                fe(max_gram_dev),
                support_exact,
                fe(max_mean)
            ),
        ))
    })
}

/// Criterion 3: the corrector pairing `<u, S_theta u>` equals minus the
/// weighted squared norms of the projected transport derivatives (the
/// energy the martingale term injects in expectation), over shell weights
/// at three sizes and two decays.
fn criterion_corrector_identity(master_seed: u64) -> CriterionResult {
    run_criterion(3, "corrector-identity", || {
        let basis = NoiseBasis::new(3).map_err(|e| e.to_string())?;
        let nu = 1.0;
        let mut max_rel = 0.0f64;
        for j in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_for(master_seed, 3, j));
            let u = random_divergence_free(3, 2, &mut rng).map_err(|e| e.to_string())?;
            for n in [1u32, 2, 4] {
                for decay in [0.0, 1.0] {
                    let theta = ThetaSequence::shell(n, decay, 3).map_err(|e| e.to_string())?;
                    let su = corrector_apply(&theta, &basis, nu, &u).map_err(|e| e.to_string())?;
                    let lhs = u.inner_product(&su);
                    let pad = u.cutoff() + theta.reach_inf();
                    let mut weighted = 0.0;
                    for &k in theta.support() {
                        let tk = theta.get(k);
                        for i in 1..=2 {
                            let app = noise_apply(&basis, k, i, &u, pad).map_err(|e| e.to_string())?;
                            if app.dropped_energy != 0.0 {
                                return Err(format!(
                                    "identity probe truncated {} at pad {pad}",
                                    app.dropped_energy
                                ));
                            }
                            let norm = app.field.l2_norm();
                            weighted += tk * tk * norm * norm;
                        }
                    }
                    let rhs = basis.c_d() * nu / theta.l2_norm_sq() * weighted;
                    let rel = (lhs + rhs).abs() / rhs;
                    max_rel = max_rel.max(rel);
                }
            }
        }
        let pass = max_rel <= tol::CORRECTOR_REL;
        Ok((pass, format!("max relative defect {}", fe(max_rel))))
    })
}

/// Criterion 4: the shell corrector approaches `(3 nu / 5) Laplacian` with
/// strictly decreasing relative error over shell counts 4, 8, 16, 32,
/// matching the frozen reference values.
fn criterion_scaling_limit(_master_seed: u64) -> CriterionResult {
    run_criterion(4, "corrector-scaling-limit", || {
        let phi = single_mode_field()?;
        let ns = [4u32, 8, 16, 32];
        let mut rels = Vec::with_capacity(ns.len());
        for n in ns {
            let lim = corrector_limit_error(n, 1.0, 1.0, &phi).map_err(|e| e.to_string())?;
            rels.push(lim.rel_error);
        }
        let decreasing = rels.windows(2).all(|w| w[1] < w[0]);
        let below = *rels.last().unwrap() < tol::LIMIT_AT_TOP;
        let oracle_ok = rels
            .iter()
            .zip(tol::LIMIT_ORACLE)
            .all(|(r, o)| (r - o).abs() <= tol::LIMIT_ORACLE_REL * o);
        let pass = decreasing && below && oracle_ok;
        let listed: Vec<String> = rels.iter().map(|r| fe(*r)).collect();
        Ok((
            pass,
            format!(
                "relative errors [{}], decreasing {decreasing}, reference match {oracle_ok}",
                listed.join(", ")
            ),
        ))
    })
}

fn single_mode_field() -> Result<SpectralField, String> {
    use num_complex::Complex64;
    let mut phi = SpectralField::new(3, 1).map_err(|e| e.to_string())?;
    phi.set_pair(
        [1, 0, 0],
        [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
    )
    .map_err(|e| e.to_string())?;
    Ok(phi)
}

/// Criterion 5: the ensemble mean of 10^4 linear stochastic trajectories
/// matches the matrix-exponential semigroup at every sample time within 3
/// standard errors of the mean estimator.
fn criterion_mean_field(master_seed: u64) -> CriterionResult {
    run_criterion(5, "ensemble-mean-field", || {
        let params = SpdeParams::new(1.0, 0.5, 4, 1e-3, 0.1).map_err(|e| e.to_string())?;
        let theta = ThetaSequence::shell(1, 1.0, 3).map_err(|e| e.to_string())?;
        let system = SpdeSystem::new(params, Some(theta), None, None).map_err(|e| e.to_string())?;
        let u0 = single_mode_field()?;
        let stats = system
            .ensemble_mean_field(&u0, 10_000, seed_for(master_seed, 5, 0), 10)
            .map_err(|e| e.to_string())?;
        let mut worst_sigma = 0.0f64;
        for idx in 1..stats.times.len() {
            let reference =
                system.semigroup_reference(&u0, stats.times[idx]).map_err(|e| e.to_string())?;
            let mut diff = stats.mean_field(idx).map_err(|e| e.to_string())?;
            diff.axpy(-1.0, &reference).map_err(|e| e.to_string())?;
            let gap = diff.l2_norm();
            let se = stats.mean_radius(idx);
            worst_sigma = worst_sigma.max(gap / se);
        }
        let pass = worst_sigma <= tol::MEAN_FIELD_SIGMA && stats.excluded == 0;
        Ok((
            pass,
            format!(
                "worst gap {} standard errors over {} sample times, {} excluded",
                fe(worst_sigma),
                stats.times.len() - 1,
                stats.excluded
            ),
        ))
    })
}

/// Criterion 6: realized quadratic covariation of the complex Brownian
/// family matches `2 t` on conjugate pairs and `0` elsewhere, within 4
/// standard errors, for 10 index pairs over 10^5 increments.
fn criterion_brownian_covariance(master_seed: u64) -> CriterionResult {
    run_criterion(6, "brownian-covariance", || {
        let theta = ThetaSequence::shell(1, 1.0, 3).map_err(|e| e.to_string())?;
        let basis = NoiseBasis::new(3).map_err(|e| e.to_string())?;
        let mut driver =
            BrownianDriver::new(seed_for(master_seed, 6, 0), &theta, &basis).map_err(|e| e.to_string())?;
        let keys = driver.keys().to_vec();
        if keys.len() < 6 {
            return Err("key set too small for the pair list".into());
        }
        let (k0, k1, k2) = (keys[0].0, keys[2].0, keys[4].0);
        // (a, b, conjugate-pair?) with expected covariation 2T or 0.
        let pairs: [((Mode, usize), (Mode, usize), bool); 10] = [
            ((k0, 1), (negate(k0), 1), true),
            ((k0, 2), (negate(k0), 2), true),
            ((k1, 1), (negate(k1), 1), true),
            ((k2, 2), (negate(k2), 2), true),
            ((k0, 1), (negate(k0), 2), false),
            ((k0, 1), (k0, 1), false),
            ((k0, 2), (k0, 2), false),
            ((k0, 1), (k1, 1), false),
            ((k0, 1), (negate(k1), 2), false),
            ((k1, 2), (k2, 1), false),
        ];
        let steps = 100_000usize;
        let dt = 1e-3;
        let horizon = steps as f64 * dt;
        let mut sums = [0.0f64; 10];
        let mut sq_sums = [0.0f64; 10];
        for _ in 0..steps {
            let dw = driver.increments(dt);
            for (p, &(a, b, _)) in pairs.iter().enumerate() {
                let term = (dw.get(a.0, a.1).map_err(|e| e.to_string())?
                    * dw.get(b.0, b.1).map_err(|e| e.to_string())?)
                .re;
                sums[p] += term;
                sq_sums[p] += term * term;
            }
        }
        let mut worst_sigma = 0.0f64;
        for (p, &(_, _, conjugate)) in pairs.iter().enumerate() {
            let expected = if conjugate { 2.0 * horizon } else { 0.0 };
            let n = steps as f64;
            let mean = sums[p] / n;
            let variance = (sq_sums[p] / n - mean * mean).max(0.0);
            let se = (variance * n).sqrt();
            worst_sigma = worst_sigma.max((sums[p] - expected).abs() / se);
        }
        let pass = worst_sigma <= tol::COVARIANCE_SIGMA;
        Ok((pass, format!("worst covariation gap {} standard errors", fe(worst_sigma))))
    })
}

/// Criterion 7: exact-arithmetic verdicts flip at the derived thresholds
/// and bisection reproduces them to 1e-6.
fn criterion_exponent_thresholds(_master_seed: u64) -> CriterionResult {
    run_criterion(7, "exponent-thresholds", || {
        let as_err = |e: hypotheses::HypothesesError| e.to_string();
        let at = |h, rho| -> Result<bool, String> {
            Ok(check(&ExponentProblem::new(h, rho).map_err(as_err)?).pass)
        };
        let at_delta = |h, rho, delta| -> Result<bool, String> {
            Ok(check(&ExponentProblem::with_delta(h, rho, delta).map_err(as_err)?).pass)
        };
        let mut verdicts_ok = true;
        verdicts_ok &= !at(Hypothesis::H1, 0.125)?;
        verdicts_ok &= at(Hypothesis::H1, 0.13)?;
        verdicts_ok &= !at_delta(Hypothesis::H2Prime, 0.125, 0.001)?;
        verdicts_ok &= at_delta(Hypothesis::H2Prime, 0.13, 0.001)?;
        verdicts_ok &= !at(Hypothesis::H3Prime, 0.125)?;
        verdicts_ok &= at(Hypothesis::H3Prime, 0.13)?;
        verdicts_ok &= !at(Hypothesis::H4, 0.25)?;
        verdicts_ok &= at(Hypothesis::H4, 0.26)?;
        verdicts_ok &= at(Hypothesis::NseTemam, 0.25)?;

        let t1 = threshold(Hypothesis::H1, tol::THRESHOLD).map_err(as_err)?;
        let t3 = threshold(Hypothesis::H3Prime, tol::THRESHOLD).map_err(as_err)?;
        let t4 = threshold(Hypothesis::H4, tol::THRESHOLD).map_err(as_err)?;
        let tn = threshold(Hypothesis::NseTemam, tol::THRESHOLD).map_err(as_err)?;
        let t2 = threshold_with_delta(Hypothesis::H2Prime, 0.001, tol::THRESHOLD).map_err(as_err)?;
        let thresholds_ok = (t1 - 0.125).abs() <= tol::THRESHOLD
            && (t3 - 0.125).abs() <= tol::THRESHOLD
            && (t4 - 0.25).abs() <= tol::THRESHOLD
            && (tn - 0.25).abs() <= tol::THRESHOLD
            && (t2 - 0.12525).abs() <= tol::THRESHOLD;
        let pass = verdicts_ok && thresholds_ok;
        Ok((
            pass,
            format!(
                "verdicts {verdicts_ok}, thresholds [{}, {}, {}, {}, {}]",
                fe(t1),
                fe(t2),
                fe(t3),
                fe(t4),
                fe(tn)
            ),
        ))
    })
}

/// Criterion 8: with strong dissipation small data decays monotonically;
/// without dissipation the cascade drives the high-order proxy up a
/// millionfold before `t = 10` while conserving energy.
fn criterion_shell_dichotomy(_master_seed: u64) -> CriterionResult {
    run_criterion(8, "shell-dichotomy", || {
        // Decay branch: a = 1, ratio 2, small single-shell data.
        let decay_params = ShellParams {
            n_min: 0,
            n_top: 5,
            lambda: 2.0,
            diss_exp: 1.0,
            nu_d: 1.0,
            nonlinear: true,
        };
        let mut small = ShellState::zero(decay_params);
        small.set_amplitude(0, 0.1);
        let decay_opts = IntegrateOptions { t_end: 2.0, ..IntegrateOptions::default() };
        let decay_run = integrate(&small, &decay_opts);
        let decay_ok = decay_run.monotone_norm
            && !decay_run.blow_up
            && decay_run.energies.last().unwrap() < decay_run.energies.first().unwrap();

        // Growth branch: no dissipation, 30 shells, unit data at the bottom.
        let growth_params = ShellParams {
            n_min: 0,
            n_top: 29,
            lambda: 2.0,
            diss_exp: 0.0,
            nu_d: 0.0,
            nonlinear: true,
        };
        let mut seeded = ShellState::zero(growth_params);
        seeded.set_amplitude(0, 1.0);
        let proxy0 = seeded.sobolev_proxy(2.1);
        let growth_opts = IntegrateOptions {
            t_end: 10.0,
            blow_up_threshold: Some(tol::PROXY_GROWTH * proxy0),
            ..IntegrateOptions::default()
        };
        let growth_run = integrate(&seeded, &growth_opts);
        let growth_factor = growth_run.proxies.last().unwrap() / proxy0;
        let crossed_early = matches!(
            growth_run.stop,
            StopReason::BlowUpThreshold { t, .. } if t < 10.0
        );
        let e0 = growth_run.energies.first().unwrap();
        let energy_drift = growth_run
            .energies
            .iter()
            .map(|e| (e - e0).abs() / e0)
            .fold(0.0f64, f64::max);
        let growth_ok = crossed_early
            && growth_factor >= tol::PROXY_GROWTH
            && energy_drift <= tol::SHELL_ENERGY_REL;
        let pass = decay_ok && growth_ok;
        Ok((
            pass,
            format!(
                "decay monotone {}, growth factor {} at t {} with energy drift {}",
                decay_ok,
                fe(growth_factor),
                fe(growth_run.final_time()),
                fe(energy_drift)
            ),
        ))
    })
}

/// Criterion 9: along the deterministic cascade flow the energy equality
/// `||u(T)||^2 + I(T) = ||u(0)||^2` holds to 1e-6 of the initial energy,
/// with the dissipation integral accumulated through the integrator stages.
fn criterion_energy_equality(master_seed: u64) -> CriterionResult {
    run_criterion(9, "energy-equality", || {
        let op = standard_operator()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(master_seed, 9, 0));
        let u0 = op.wavelets().random_span_field(&mut rng);
        let params = SpdeParams::new(1.0, 0.0, 7, 1e-4, 0.1).map_err(|e| e.to_string())?;
        let system = SpdeSystem::new(params, None, Some(op), None).map_err(|e| e.to_string())?;
        let run = system.run_deterministic_limit(&u0, 100).map_err(|e| e.to_string())?;
        if let Some(t) = run.blow_up_at {
            return Err(format!("unexpected blow-up at t = {t}"));
        }
        let e0 = run.l2_norms.first().unwrap().powi(2);
        let defect = run.energy_defect();
        let pass = defect <= tol::ENERGY_EQ_REL * e0;
        Ok((pass, format!("energy defect {} of initial energy {}", fe(defect / e0), fe(e0))))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_listings_are_ordered() {
        assert_eq!(Suite::Fast.criteria(), vec![1, 2, 3, 4, 6, 7, 8, 9]);
        assert_eq!(Suite::Full.criteria(), vec![1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!("FAST".parse::<Suite>().unwrap(), Suite::Fast);
        assert!("quick".parse::<Suite>().is_err());
    }

    #[test]
    fn wavelet_structure_criterion_passes() {
        let r = run_single(2, 0);
        assert!(r.pass, "{}", r.detail);
    }

    #[test]
    fn exponent_threshold_criterion_passes() {
        let r = run_single(7, 0);
        assert!(r.pass, "{}", r.detail);
    }

    #[test]
    fn criterion_details_are_reproducible() {
        let a = run_single(7, 42);
        let b = run_single(7, 42);
        assert_eq!(results_hash(&[a]), results_hash(&[b]));
    }

    #[test]
    fn unknown_criterion_reports_failure() {
        let r = run_single(11, 0);
        assert!(!r.pass);
        assert!(r.detail.contains("no criterion 11"));
    }
}
