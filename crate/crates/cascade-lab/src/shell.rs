//! Reduced shell ODE models and per-band diagnostics.
//!
//! Two closely related finite ODE systems live here:
//!
//! * the classic dyadic shell model
//!   `du_n/dt = lambda^{5n/2} u_{n-1}^2 - nu_d lambda^{2an} u_n
//!              - lambda^{5(n+1)/2} u_n u_{n+1}`,
//!   whose quadratic part moves energy strictly forward while conserving the
//!   total `sum_n u_n^2` (the two nonlinear terms telescope);
//! * the coefficient system induced by a [`StructureConstants`] set on the
//!   wavelet coefficients `X_{i,n}`, which for the default constants on a
//!   single ball reduces to the same pattern with base `1 + eps0` up to a
//!   global time rescale.
//!
//! Integration is explicit RK4 with step-halving Richardson control; a step
//! controller underflow is reported as blow-up evidence, never swallowed.
//! The module also carries the `X`/`E` diagnostics extracted from spectral
//! trajectories and the bound checks they must satisfy along solutions of
//! the heat-plus-cascade flow.

use crate::cascade::StructureConstants;
use crate::spectral::{BandError, SpectralField, WaveletFamily, FOUR_PI_SQ};
use std::collections::BTreeMap;

/// Parameters of the dyadic shell model.
#[derive(Debug, Clone)]
pub struct ShellParams {
    /// Lowest stored shell index.
    pub n_min: i32,
    /// Highest stored shell index; reads outside the window are zero.
    pub n_top: i32,
    /// Scale ratio between consecutive shells (> 1).
    pub lambda: f64,
    /// Dissipation exponent `a`: shell `n` is damped at rate `nu_d lambda^{2an}`.
    pub diss_exp: f64,
    /// Dissipation prefactor; zero disables damping.
    pub nu_d: f64,
    /// Disables the quadratic terms when false (linear decay only).
    pub nonlinear: bool,
}

impl ShellParams {
    pub fn shell_count(&self) -> usize {
        assert!(self.n_top >= self.n_min, "empty shell window");
        (self.n_top - self.n_min + 1) as usize
    }
}

/// State of the shell model: one real amplitude per stored shell.
#[derive(Debug, Clone)]
pub struct ShellState {
    params: ShellParams,
    u: Vec<f64>,
}

impl ShellState {
    /// All-zero state on the window described by `params`.
    pub fn zero(params: ShellParams) -> Self {
        assert!(params.lambda > 1.0, "shell ratio must exceed 1");
        assert!(params.nu_d >= 0.0, "negative damping is not a shell model");
        let count = params.shell_count();
        Self { params, u: vec![0.0; count] }
    }

    pub fn params(&self) -> &ShellParams {
        &self.params
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.u
    }

    fn index(&self, n: i32) -> Option<usize> {
        (self.params.n_min..=self.params.n_top)
            .contains(&n)
            .then(|| (n - self.params.n_min) as usize)
    }

    /// Amplitude at shell `n`; zero outside the stored window.
    pub fn amplitude(&self, n: i32) -> f64 {
        self.index(n).map(|j| self.u[j]).unwrap_or(0.0)
    }

    pub fn set_amplitude(&mut self, n: i32, value: f64) {
        let j = self.index(n).expect("shell outside stored window");
        self.u[j] = value;
    }

    pub fn shells(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.u
            .iter()
            .enumerate()
            .map(|(j, &v)| (self.params.n_min + j as i32, v))
    }

    /// Total `sum_n u_n^2` (squared `l^2` norm).
    pub fn energy(&self) -> f64 {
        self.u.iter().map(|v| v * v).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.energy().sqrt()
    }

    /// Weighted norm `sum_n (1 + lambda^{2sn}) u_n^2`, a finite stand-in for
    /// the squared `H^s` norm of the represented field. Nondecreasing in `s`
    /// when the amplitudes sit at shells `n > 0`.
    pub fn sobolev_proxy(&self, s: f64) -> f64 {
        self.shells()
            .map(|(n, v)| (1.0 + self.params.lambda.powf(2.0 * s * n as f64)) * v * v)
            .sum()
    }
}

/// Right-hand side of the shell model; out-of-window neighbors read as zero.
pub fn dyadic_rhs(state: &ShellState) -> Vec<f64> {
    let p = state.params();
    let lam = p.lambda;
    let mut out = vec![0.0; state.u.len()];
    for (j, (n, un)) in state.shells().enumerate() {
        let mut rhs = -p.nu_d * lam.powf(2.0 * p.diss_exp * n as f64) * un;
        if p.nonlinear {
            let prev = state.amplitude(n - 1);
            let next = state.amplitude(n + 1);
            rhs += lam.powf(2.5 * n as f64) * prev * prev
                - lam.powf(2.5 * (n + 1) as f64) * un * next;
        }
        out[j] = rhs;
    }
    out
}

/// Classic fourth-order Runge-Kutta step for an autonomous system.
pub fn rk4_step(rhs: impl Fn(&[f64]) -> Vec<f64>, y: &[f64], h: f64) -> Vec<f64> {
    let add = |y: &[f64], k: &[f64], c: f64| -> Vec<f64> {
        y.iter().zip(k).map(|(a, b)| a + c * b).collect()
    };
    let k1 = rhs(y);
    let k2 = rhs(&add(y, &k1, 0.5 * h));
    let k3 = rhs(&add(y, &k2, 0.5 * h));
    let k4 = rhs(&add(y, &k3, h));
    y.iter()
        .enumerate()
        .map(|(j, a)| a + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
        .collect()
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn l2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Controls for [`integrate`].
#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub t_end: f64,
    /// Initial and maximal step size.
    pub dt_max: f64,
    /// Smallest admissible step; going below reports a controller underflow.
    pub dt_min: f64,
    /// Target relative local error for the Richardson controller.
    pub rel_tol: f64,
    /// Exponent `s` of the blow-up proxy norm (a value slightly above 2
    /// watches the strongest norm the dissipation could still control).
    pub proxy_exponent: f64,
    /// Absolute proxy threshold whose crossing stops the run as blow-up
    /// evidence; `None` disables the check.
    pub blow_up_threshold: Option<f64>,
    /// Declare decay once the norm has monotonically fallen below this
    /// fraction of its initial value.
    pub decay_ratio: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            dt_max: 1e-2,
            dt_min: 1e-12,
            rel_tol: 1e-10,
            proxy_exponent: 2.1,
            blow_up_threshold: None,
            decay_ratio: 1e-6,
        }
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    /// Reached `t_end`.
    Completed,
    /// Proxy norm crossed the configured threshold.
    BlowUpThreshold { t: f64, proxy: f64 },
    /// Step controller underflowed below `dt_min`: the local error target is
    /// unreachable, which along a growing trajectory is blow-up evidence.
    StepUnderflow { t: f64, dt: f64 },
    /// Norm decayed monotonically below the configured fraction.
    Decayed { t: f64 },
}

/// Recorded trajectory of one shell run.
#[derive(Debug, Clone)]
pub struct ShellRun {
    pub times: Vec<f64>,
    /// One amplitude vector per recorded time.
    pub states: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    pub proxies: Vec<f64>,
    pub stop: StopReason,
    /// True iff the run ended on threshold crossing or controller underflow.
    pub blow_up: bool,
    /// True iff the norm stayed nonincreasing and fell below the decay ratio.
    pub decayed: bool,
    /// Whether the norm was nonincreasing at every accepted step.
    pub monotone_norm: bool,
    /// Largest `|u_{n_top}|` seen: energy arriving at the absorbing top shell.
    pub top_shell_max: f64,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

impl ShellRun {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("runs record at least the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("runs record at least the initial time")
    }
}

/// Integrate the shell model with adaptive RK4.
///
/// Each accepted step compares one full step against two half steps and
/// keeps the Richardson extrapolation `y_half + (y_half - y_full)/15`;
/// the controller grows or shrinks the step to hold the local error near
/// `rel_tol`. Every accepted state is recorded.
pub fn integrate(initial: &ShellState, opts: &IntegrateOptions) -> ShellRun {
    assert!(opts.t_end > 0.0 && opts.dt_max > 0.0 && opts.dt_min > 0.0);
    let params = initial.params().clone();
    let rhs = |y: &[f64]| {
        let probe = ShellState { params: params.clone(), u: y.to_vec() };
        dyadic_rhs(&probe)
    };

    let mut t = 0.0;
    let mut y = initial.amplitudes().to_vec();
    let mut h = opts.dt_max.min(opts.t_end);
    let initial_norm = l2(&y);

    let state_of = |u: &[f64]| ShellState { params: params.clone(), u: u.to_vec() };
    let mut run = ShellRun {
        times: vec![0.0],
        states: vec![y.clone()],
        energies: vec![initial.energy()],
        proxies: vec![initial.sobolev_proxy(opts.proxy_exponent)],
        stop: StopReason::Completed,
        blow_up: false,
        decayed: false,
        monotone_norm: true,
        top_shell_max: initial.amplitude(params.n_top).abs(),
        steps_accepted: 0,
        steps_rejected: 0,
    };
    let mut prev_norm = initial_norm;

    while t < opts.t_end {
        h = h.min(opts.t_end - t);
        let y_full = rk4_step(rhs, &y, h);
        let y_mid = rk4_step(rhs, &y, 0.5 * h);
        let y_half = rk4_step(rhs, &y_mid, 0.5 * h);
        let err = l2_dist(&y_half, &y_full);
        let tol = opts.rel_tol * l2(&y_half).max(l2(&y)).max(1e-300);

        if err <= tol {
            y = y_half
                .iter()
                .zip(&y_full)
                .map(|(a, b)| a + (a - b) / 15.0)
                .collect();
            t += h;
            run.steps_accepted += 1;

            let state = state_of(&y);
            let norm = state.l2_norm();
            let proxy = state.sobolev_proxy(opts.proxy_exponent);
            run.times.push(t);
            run.energies.push(state.energy());
            run.proxies.push(proxy);
            run.top_shell_max = run.top_shell_max.max(state.amplitude(params.n_top).abs());
            run.states.push(y.clone());

            if norm > prev_norm + 1e-12 * initial_norm.max(1.0) {
                run.monotone_norm = false;
            }
            prev_norm = norm;

            if let Some(threshold) = opts.blow_up_threshold {
                if proxy >= threshold {
                    run.stop = StopReason::BlowUpThreshold { t, proxy };
                    run.blow_up = true;
                    break;
                }
            }
            if run.monotone_norm && initial_norm > 0.0 && norm <= opts.decay_ratio * initial_norm {
                run.stop = StopReason::Decayed { t };
                run.decayed = true;
                break;
            }
            if err > 0.0 {
                h *= (0.9 * (tol / err).powf(0.2)).clamp(0.2, 4.0);
            } else {
                h *= 4.0;
            }
            h = h.min(opts.dt_max);
        } else {
            run.steps_rejected += 1;
            h *= (0.9 * (tol / err).powf(0.2)).clamp(0.05, 0.9);
        }
        if h < opts.dt_min {
            run.stop = StopReason::StepUnderflow { t, dt: h };
            run.blow_up = true;
            break;
        }
    }
    run
}

/// How the reduced coefficient system damps each `(i, n)` slot.
///
/// The exact per-mode heat multipliers inside band `(i, n)` lie between
/// `4 pi^2 lambda^{2n}` (inner annulus radius 1) and
/// `4 pi^2 lambda^{2n} (1 + eps0/2)^2` (outer radius); the reduced model
/// needs one number per slot, so `fraction` interpolates between the two
/// endpoints. The weakest choice (fraction 0) is the default: conservative
/// for blow-up exploration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DissipationModel {
    None,
    BandMultiplier { fraction: f64 },
}

/// Finite `(i, n)` grid of the reduced coefficient system.
#[derive(Debug, Clone)]
pub struct CascadeGrid {
    pub ball_count: usize,
    pub n_min: i32,
    pub n_top: i32,
}

impl CascadeGrid {
    pub fn len(&self) -> usize {
        assert!(self.ball_count >= 1 && self.n_top >= self.n_min);
        self.ball_count * (self.n_top - self.n_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of slot `(i, n)` with `i` 1-based; `None` outside the grid.
    pub fn index(&self, i: usize, n: i32) -> Option<usize> {
        if i == 0 || i > self.ball_count || n < self.n_min || n > self.n_top {
            return None;
        }
        let scales = (self.n_top - self.n_min + 1) as usize;
        Some((i - 1) * scales + (n - self.n_min) as usize)
    }

    pub fn slots(&self) -> impl Iterator<Item = (usize, i32)> + '_ {
        (1..=self.ball_count).flat_map(move |i| (self.n_min..=self.n_top).map(move |n| (i, n)))
    }
}

/// The coefficient ODE system induced by validated structure constants:
///
/// `dX_{i,n}/dt = sum alpha (1+eps0)^{5(n-mu3)/2}
///                X_{i1,n-mu3+mu1} X_{i2,n-mu3+mu2}  -  c_{i,n} X_{i,n}`
///
/// summed over entries with output ball `i`; reads outside the grid are
/// zero, matching the absorbing truncation of the full operator.
#[derive(Debug, Clone)]
pub struct CascadeSystem {
    pub constants: StructureConstants,
    pub grid: CascadeGrid,
    pub eps0: f64,
    pub dissipation: DissipationModel,
}

impl CascadeSystem {
    /// Damping coefficient for slot `(i, n)` under the dissipation model.
    pub fn damping(&self, n: i32) -> f64 {
        match self.dissipation {
            DissipationModel::None => 0.0,
            DissipationModel::BandMultiplier { fraction } => {
                assert!((0.0..=1.0).contains(&fraction), "fraction must sit in [0,1]");
                let lam = 1.0 + self.eps0;
                let inner = FOUR_PI_SQ * lam.powf(2.0 * n as f64);
                let outer_ratio = (1.0 + self.eps0 / 2.0).powi(2);
                inner * (1.0 + fraction * (outer_ratio - 1.0))
            }
        }
    }

    /// Right-hand side at state `x` (flat layout per [`CascadeGrid::index`]).
    pub fn rhs(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.grid.len());
        let lam = 1.0 + self.eps0;
        let get = |i: usize, n: i32| self.grid.index(i, n).map(|j| x[j]).unwrap_or(0.0);
        let mut out = vec![0.0; x.len()];
        for (i, n) in self.grid.slots() {
            let j = self.grid.index(i, n).expect("slot from iterator");
            let mut rhs = -self.damping(n) * x[j];
            for ((balls, shifts), &alpha) in self.constants.iter() {
                if balls[2] != i {
                    continue;
                }
                let base = n - shifts[2] as i32;
                let x1 = get(balls[0], base + shifts[0] as i32);
                let x2 = get(balls[1], base + shifts[1] as i32);
                if x1 != 0.0 && x2 != 0.0 {
                    rhs += alpha * lam.powf(2.5 * base as f64) * x1 * x2;
                }
            }
            out[j] = rhs;
        }
        out
    }
}

/// Wavelet-coefficient and band-energy diagnostics of a spectral state.
#[derive(Debug, Clone)]
pub struct CascadeDiagnostics {
    pub t: f64,
    /// `X_{i,n} = <u, psi_{i,n}>`.
    pub x: BTreeMap<(usize, i32), f64>,
    /// `E_{i,n}` = half the squared `L^2` mass of `u` in band `(i, n)`.
    pub e: BTreeMap<(usize, i32), f64>,
}

impl CascadeDiagnostics {
    /// Extract both diagnostics from a spectral state.
    pub fn from_field(
        family: &WaveletFamily,
        u: &SpectralField,
        t: f64,
    ) -> Result<Self, BandError> {
        let mut x = BTreeMap::new();
        let mut e = BTreeMap::new();
        for (&(i, n), _) in family.iter() {
            x.insert((i, n), family.coefficient(u, i, n).expect("stored wavelet"));
            e.insert((i, n), family.band_energy(u, i, n)?);
        }
        Ok(Self { t, x, e })
    }

    /// Weighted coefficient norm `sum (1 + lambda^{2sn}) X_{i,n}^2`.
    pub fn sobolev_proxy(&self, s: f64, eps0: f64) -> f64 {
        let lam = 1.0 + eps0;
        self.x
            .iter()
            .map(|(&(_, n), v)| (1.0 + lam.powf(2.0 * s * n as f64)) * v * v)
            .sum()
    }
}

/// Outcome of the trajectory bound checks; all violation fields are signed
/// excesses (nonpositive up to numerics means the bound holds).
#[derive(Debug, Clone)]
pub struct LemmaReport {
    /// `max (1 + lambda^{10n}) |X_{i,n}|` over the trajectory.
    pub weighted_sup_x: f64,
    /// `max (1 + lambda^{10n}) |E_{i,n}|` over the trajectory.
    pub weighted_sup_e: f64,
    /// Worst `X^2/2 - E` (must be <= 0: Cauchy-Schwarz against the unit
    /// wavelet spanning the band).
    pub lower_sandwich_excess: f64,
    /// Worst `(E - X^2/2) - C lambda^{2n} int_0^t E ds` with the constant
    /// below (must be <= 0 along heat-plus-cascade trajectories).
    pub upper_sandwich_excess: f64,
    /// The explicit constant `C = 16 pi^2 (1 + eps0/2)^2` in the upper bound,
    /// from `d/dt (E - X^2/2) = <u_{i,n}, Lap u_{i,n}> - X <Lap u_{i,n}, psi>`
    /// with both terms bounded by twice the top band multiplier times `E`.
    pub sandwich_constant: f64,
    /// `max(|X|, |E|)` over slots strictly below `n_start` (must vanish: the
    /// cascade only moves energy upward from the initial scale).
    pub below_start_max: f64,
    /// `max |E(0) - X(0)^2/2|`; zero when the initial state lies in the
    /// wavelet span, where each band holds exactly its coefficient's mass.
    pub initial_identity_gap: f64,
}

impl LemmaReport {
    /// True when every bound holds within `tol`.
    pub fn within(&self, tol: f64) -> bool {
        self.lower_sandwich_excess <= tol
            && self.upper_sandwich_excess <= tol
            && self.below_start_max <= tol
            && self.initial_identity_gap <= tol
            && self.weighted_sup_x.is_finite()
            && self.weighted_sup_e.is_finite()
    }
}

/// Check the diagnostic bounds along a trajectory of the heat-plus-cascade
/// flow started at scale `n_start`. Time integrals are trapezoidal in the
/// recorded frames, so frames should be reasonably dense.
pub fn lemma_bounds_check(frames: &[CascadeDiagnostics], eps0: f64, n_start: i32) -> LemmaReport {
    assert!(!frames.is_empty(), "need at least one frame");
    let lam = 1.0 + eps0;
    let c_sandwich = 4.0 * FOUR_PI_SQ * (1.0 + eps0 / 2.0).powi(2);

    let mut report = LemmaReport {
        weighted_sup_x: 0.0,
        weighted_sup_e: 0.0,
        lower_sandwich_excess: f64::NEG_INFINITY,
        upper_sandwich_excess: f64::NEG_INFINITY,
        sandwich_constant: c_sandwich,
        below_start_max: 0.0,
        initial_identity_gap: 0.0,
    };

    for (&key, &x0) in &frames[0].x {
        let e0 = frames[0].e[&key];
        report.initial_identity_gap = report.initial_identity_gap.max((e0 - 0.5 * x0 * x0).abs());
    }

    // Running trapezoidal integral of E per slot.
    let mut integral: BTreeMap<(usize, i32), f64> = BTreeMap::new();
    for (j, frame) in frames.iter().enumerate() {
        for (&(i, n), &x) in &frame.x {
            let e = frame.e[&(i, n)];
            let weight = 1.0 + lam.powf(10.0 * n as f64);
            report.weighted_sup_x = report.weighted_sup_x.max(weight * x.abs());
            report.weighted_sup_e = report.weighted_sup_e.max(weight * e.abs());
            if n < n_start {
                report.below_start_max = report.below_start_max.max(x.abs()).max(e.abs());
            }

            let acc = integral.entry((i, n)).or_insert(0.0);
            if j > 0 {
                let prev = &frames[j - 1];
                let dt = frame.t - prev.t;
                *acc += 0.5 * dt * (prev.e[&(i, n)] + e);
            }
            let gap = e - 0.5 * x * x;
            report.lower_sandwich_excess = report.lower_sandwich_excess.max(-gap);
            let allowance = c_sandwich * lam.powf(2.0 * n as f64) * *acc;
            report.upper_sandwich_excess = report.upper_sandwich_excess.max(gap - allowance);
        }
    }
    report
}
