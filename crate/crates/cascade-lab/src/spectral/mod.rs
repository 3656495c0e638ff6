//! Sparse spectral representation of periodic vector fields.
//!
//! A field `u: T^d -> R^d` (d = 2 or 3) is stored through its Fourier
//! coefficients in the convention `u(x) = sum_k u_hat(k) e^{2 pi i k.x}`,
//! so `-Laplace` acts per mode as multiplication by `4 pi^2 |k|^2`. Real
//! fields satisfy `u_hat(-k) = conj(u_hat(k))`; most constructors maintain
//! that symmetry, but intermediate complex fields (for instance a single
//! Fourier-shifted gradient term) are representable as well, and
//! [`SpectralField::reality_residual`] measures how far a field is from real.
//!
//! Coefficients live in a `BTreeMap` keyed by the integer mode, which keeps
//! every iteration order deterministic; all reductions over modes are
//! reproducible bit for bit.

mod band;
mod wavelet;

pub use band::{BallFamily, BandError, FrequencyBall};
pub use wavelet::{
    band_estimate_check, band_project, build_wavelet, polarization, BandEstimate, BumpProfile,
    PeriodizedWavelet, WaveletFamily,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Integer Fourier mode. Two-dimensional fields use modes with `k[2] == 0`.
pub type Mode = [i64; 3];

/// Complex coefficient vector attached to one mode.
pub type Vec3c = [Complex64; 3];

/// `4 pi^2`, the symbol of `-Laplace` at `|k|^2 = 1`.
pub const FOUR_PI_SQ: f64 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;

/// Squared Euclidean norm of a mode as `f64` (exact for all practical modes).
pub fn mode_norm_sq(k: Mode) -> f64 {
    let s = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
    s as f64
}

/// Component-wise negation.
pub fn negate(k: Mode) -> Mode {
    [-k[0], -k[1], -k[2]]
}

/// True if the first nonzero component of `k` is positive (so exactly one of
/// `k`, `-k` is lex-positive for `k != 0`).
pub fn is_lex_positive(k: Mode) -> bool {
    for c in k {
        if c != 0 {
            return c > 0;
        }
    }
    false
}

/// The lex-positive representative of the pair `{k, -k}`; `0` maps to itself.
pub fn lex_representative(k: Mode) -> Mode {
    if is_lex_positive(k) || k == [0, 0, 0] {
        k
    } else {
        negate(k)
    }
}

const ZERO_VEC: Vec3c = [Complex64::ZERO, Complex64::ZERO, Complex64::ZERO];

fn vec_norm_sq(v: &Vec3c) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// Errors from constructing or mutating spectral fields.
#[derive(Debug, Error)]
pub enum FieldError {
    #[error("dimension must be 2 or 3, got {0}")]
    InvalidDim(u8),
    #[error("cutoff must be at least 1, got {0}")]
    InvalidCutoff(i64),
    #[error("mode {mode:?} lies outside the sup-norm cutoff {cutoff}")]
    ModeOutsideCutoff { mode: Mode, cutoff: i64 },
    #[error("mode {mode:?} has a nonzero third component in dimension 2")]
    PlanarModeViolation { mode: Mode },
    #[error("planar field has a nonzero third velocity component at {mode:?}")]
    PlanarComponentViolation { mode: Mode },
    #[error("zero mode of a real field must have real coefficients (|imag| = {imag:.3e})")]
    ZeroModeImaginary { imag: f64 },
    #[error("duplicate mode {0:?} in input")]
    DuplicateMode(Mode),
    #[error("serialized modes must be lex-positive or zero, got {0:?}")]
    NotLexPositive(Mode),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Sparse Fourier-side vector field on the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    dim: u8,
    cutoff: i64,
    coeffs: BTreeMap<Mode, Vec3c>,
}

impl SpectralField {
    /// Empty field with the given dimension (2 or 3) and sup-norm cutoff.
    pub fn new(dim: u8, cutoff: i64) -> Result<Self, FieldError> {
        if dim != 2 && dim != 3 {
            return Err(FieldError::InvalidDim(dim));
        }
        if cutoff < 1 {
            return Err(FieldError::InvalidCutoff(cutoff));
        }
        Ok(Self { dim, cutoff, coeffs: BTreeMap::new() })
    }

    pub fn dim(&self) -> u8 {
        self.dim
    }

    pub fn cutoff(&self) -> i64 {
        self.cutoff
    }

    /// Number of stored modes (zero coefficients are pruned on insertion).
    pub fn mode_count(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    fn check_mode(&self, k: Mode) -> Result<(), FieldError> {
        if k.iter().any(|c| c.abs() > self.cutoff) {
            return Err(FieldError::ModeOutsideCutoff { mode: k, cutoff: self.cutoff });
        }
        if self.dim == 2 && k[2] != 0 {
            return Err(FieldError::PlanarModeViolation { mode: k });
        }
        Ok(())
    }

    fn check_vec(&self, k: Mode, v: &Vec3c) -> Result<(), FieldError> {
        if self.dim == 2 && v[2] != Complex64::ZERO {
            return Err(FieldError::PlanarComponentViolation { mode: k });
        }
        Ok(())
    }

    /// Coefficient at `k` (zero if the mode is not stored).
    pub fn coeff(&self, k: Mode) -> Vec3c {
        self.coeffs.get(&k).copied().unwrap_or(ZERO_VEC)
    }

    /// Overwrite the coefficient at `k`. Exact zeros are pruned.
    pub fn set_coeff(&mut self, k: Mode, v: Vec3c) -> Result<(), FieldError> {
        self.check_mode(k)?;
        self.check_vec(k, &v)?;
        if v == ZERO_VEC {
            self.coeffs.remove(&k);
        } else {
            self.coeffs.insert(k, v);
        }
        Ok(())
    }

    /// Add `v` into the coefficient at `k`.
    pub fn add_coeff(&mut self, k: Mode, v: Vec3c) -> Result<(), FieldError> {
        self.check_mode(k)?;
        self.check_vec(k, &v)?;
        let entry = self.coeffs.entry(k).or_insert(ZERO_VEC);
        for (e, a) in entry.iter_mut().zip(v.iter()) {
            *e += a;
        }
        if *entry == ZERO_VEC {
            self.coeffs.remove(&k);
        }
        Ok(())
    }

    /// Set `u_hat(k) = v` and `u_hat(-k) = conj(v)`, preserving realness.
    /// For `k = 0` the imaginary part must vanish.
    pub fn set_pair(&mut self, k: Mode, v: Vec3c) -> Result<(), FieldError> {
        if k == [0, 0, 0] {
            let imag = v.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
            if imag > 0.0 {
                return Err(FieldError::ZeroModeImaginary { imag });
            }
            return self.set_coeff(k, v);
        }
        self.set_coeff(k, v)?;
        self.set_coeff(negate(k), [v[0].conj(), v[1].conj(), v[2].conj()])
    }

    /// Iterate stored `(mode, coefficient)` pairs in lexicographic mode order.
    pub fn iter(&self) -> impl Iterator<Item = (&Mode, &Vec3c)> {
        self.coeffs.iter()
    }

    /// Iterate stored modes in lexicographic order.
    pub fn support(&self) -> impl Iterator<Item = &Mode> {
        self.coeffs.keys()
    }

    /// Mean of the field over the torus, i.e. the zero-mode coefficient.
    pub fn mean_value(&self) -> Vec3c {
        self.coeff([0, 0, 0])
    }

    /// `L^2` norm (Parseval: root sum of squared coefficient magnitudes).
    pub fn l2_norm(&self) -> f64 {
        self.sobolev_norm(0.0)
    }

    /// Inhomogeneous Sobolev norm
    /// `( sum_k (1 + 4 pi^2 |k|^2)^s |u_hat(k)|^2 )^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for (k, v) in &self.coeffs {
            let w = (1.0 + FOUR_PI_SQ * mode_norm_sq(*k)).powf(s);
            acc += w * vec_norm_sq(v);
        }
        acc.sqrt()
    }

    /// Homogeneous norm `|| (-Laplace)^{s/2} u ||_{L^2}`; the zero mode does
    /// not contribute.
    pub fn homogeneous_norm(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for (k, v) in &self.coeffs {
            if *k == [0, 0, 0] {
                continue;
            }
            let w = (FOUR_PI_SQ * mode_norm_sq(*k)).powf(s);
            acc += w * vec_norm_sq(v);
        }
        acc.sqrt()
    }

    /// Real `L^2` inner product `Re sum_k u_hat(k) . conj(v_hat(k))`.
    /// For two real fields this is `int u . v dx`.
    pub fn inner_product(&self, other: &Self) -> f64 {
        let (small, large) = if self.coeffs.len() <= other.coeffs.len() {
            (self, other)
        } else {
            (other, self)
        };
        let mut acc = 0.0;
        for (k, a) in &small.coeffs {
            if let Some(b) = large.coeffs.get(k) {
                for (x, y) in a.iter().zip(b.iter()) {
                    acc += (x * y.conj()).re;
                }
            }
        }
        acc
    }

    /// Bilinear (non-conjugated) pairing `sum_k u_hat(k) . v_hat(-k)`, the
    /// spectral form of `int u . v dx` without reality assumptions.
    pub fn bilinear_pairing(&self, other: &Self) -> Complex64 {
        let mut acc = Complex64::ZERO;
        for (k, a) in &self.coeffs {
            let b = other.coeff(negate(*k));
            for (x, y) in a.iter().zip(b.iter()) {
                acc += x * y;
            }
        }
        acc
    }

    /// Multiply every coefficient by the real scalar `c`.
    pub fn scale(&mut self, c: f64) {
        if c == 0.0 {
            self.coeffs.clear();
            return;
        }
        for v in self.coeffs.values_mut() {
            for x in v.iter_mut() {
                *x *= c;
            }
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// `self += a * x`. The modes of `x` must fit inside `self`'s cutoff.
    pub fn axpy(&mut self, a: f64, x: &Self) -> Result<(), FieldError> {
        if a == 0.0 {
            return Ok(());
        }
        for (k, v) in &x.coeffs {
            self.add_coeff(*k, [v[0] * a, v[1] * a, v[2] * a])?;
        }
        Ok(())
    }

    /// Apply a real scalar Fourier multiplier `k -> m(k)`.
    pub fn multiplier(&self, m: impl Fn(Mode) -> f64) -> Self {
        let mut out = Self { dim: self.dim, cutoff: self.cutoff, coeffs: BTreeMap::new() };
        for (k, v) in &self.coeffs {
            let c = m(*k);
            if c == 0.0 {
                continue;
            }
            out.coeffs.insert(*k, [v[0] * c, v[1] * c, v[2] * c]);
        }
        out
    }

    /// Bessel potential power `(Id - Laplace)^rho`, acting per mode as
    /// multiplication by `(1 + 4 pi^2 |k|^2)^rho`.
    pub fn bessel_power(&self, rho: f64) -> Self {
        if rho == 0.0 {
            return self.clone();
        }
        self.multiplier(|k| (1.0 + FOUR_PI_SQ * mode_norm_sq(k)).powf(rho))
    }

    /// Laplacian, acting per mode as multiplication by `-4 pi^2 |k|^2`.
    pub fn laplacian(&self) -> Self {
        self.multiplier(|k| -FOUR_PI_SQ * mode_norm_sq(k))
    }

    /// Leray projection onto divergence-free fields:
    /// `u_hat(k) -> u_hat(k) - (k . u_hat(k)) k / |k|^2`, zero mode unchanged.
    #[must_use = "returns the projected field; the receiver is unchanged"]
    pub fn leray_project(&self) -> Self {
        let mut out = Self { dim: self.dim, cutoff: self.cutoff, coeffs: BTreeMap::new() };
        for (k, v) in &self.coeffs {
            let p = leray_apply(*k, v);
            if p != ZERO_VEC {
                out.coeffs.insert(*k, p);
            }
        }
        out
    }

    /// Largest `|k . u_hat(k)|` over stored modes; zero for divergence-free
    /// fields.
    pub fn divergence_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (k, v) in &self.coeffs {
            if *k == [0, 0, 0] {
                continue;
            }
            let mut dot = Complex64::ZERO;
            for (c, x) in k.iter().zip(v.iter()) {
                dot += *c as f64 * x;
            }
            worst = worst.max(dot.norm());
        }
        worst
    }

    /// Largest `|u_hat(k) - conj(u_hat(-k))|` component over stored modes;
    /// zero exactly when the represented field is real-valued.
    pub fn reality_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (k, v) in &self.coeffs {
            let w = self.coeff(negate(*k));
            for (a, b) in v.iter().zip(w.iter()) {
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }

    /// Replace the field by its real part, `u_hat(k) <-
    /// (u_hat(k) + conj(u_hat(-k))) / 2`, and return the prior residual.
    pub fn symmetrize_reality(&mut self) -> f64 {
        let residual = self.reality_residual();
        if residual == 0.0 {
            return residual;
        }
        let keys: Vec<Mode> = self.coeffs.keys().copied().collect();
        let mut sym = BTreeMap::new();
        for k in keys {
            if sym.contains_key(&k) {
                continue;
            }
            let a = self.coeff(k);
            let b = self.coeff(negate(k));
            let mut half = ZERO_VEC;
            for i in 0..3 {
                half[i] = (a[i] + b[i].conj()) * 0.5;
            }
            sym.insert(k, half);
            sym.insert(negate(k), [half[0].conj(), half[1].conj(), half[2].conj()]);
        }
        sym.retain(|_, v| *v != ZERO_VEC);
        self.coeffs = sym;
        residual
    }

    /// Drop every mode with Euclidean norm above `radius`; returns the
    /// discarded squared `L^2` mass.
    pub fn truncate_euclidean(&mut self, radius: f64) -> f64 {
        let r2 = radius * radius;
        let mut dropped = 0.0;
        self.coeffs.retain(|k, v| {
            if mode_norm_sq(*k) <= r2 {
                true
            } else {
                dropped += vec_norm_sq(v);
                false
            }
        });
        dropped
    }

    /// Copy with a different cutoff; fails if a stored mode would not fit.
    pub fn with_cutoff(&self, cutoff: i64) -> Result<Self, FieldError> {
        let mut out = Self::new(self.dim, cutoff)?;
        for (k, v) in &self.coeffs {
            out.set_coeff(*k, *v)?;
        }
        Ok(out)
    }

    /// Restriction of the field to the given set of modes.
    pub fn restrict_to(&self, modes: &[Mode]) -> Self {
        let mut out = Self { dim: self.dim, cutoff: self.cutoff, coeffs: BTreeMap::new() };
        for k in modes {
            let v = self.coeff(*k);
            if v != ZERO_VEC {
                out.coeffs.insert(*k, v);
            }
        }
        out
    }

    /// Serialize to the interchange JSON layout: only lex-positive modes (plus
    /// a nonzero mean mode) are written; reality reconstructs the rest.
    pub fn to_json(&self) -> Result<String, FieldError> {
        let mut modes = Vec::new();
        if self.coeff([0, 0, 0]) != ZERO_VEC {
            let v = self.coeff([0, 0, 0]);
            modes.push(ModeRecord {
                k: [0, 0, 0],
                re: [v[0].re, v[1].re, v[2].re],
                im: [v[0].im, v[1].im, v[2].im],
            });
        }
        for (k, v) in &self.coeffs {
            if is_lex_positive(*k) {
                modes.push(ModeRecord {
                    k: *k,
                    re: [v[0].re, v[1].re, v[2].re],
                    im: [v[0].im, v[1].im, v[2].im],
                });
            }
        }
        let record = FieldRecord { dim: self.dim, cutoff: self.cutoff, modes };
        Ok(serde_json::to_string_pretty(&record)?)
    }

    /// Parse the interchange JSON layout written by [`Self::to_json`]. The
    /// negative half of the spectrum is reconstructed by conjugation, so the
    /// result is always a real field.
    pub fn from_json(text: &str) -> Result<Self, FieldError> {
        let record: FieldRecord = serde_json::from_str(text)?;
        let mut out = Self::new(record.dim, record.cutoff)?;
        for m in &record.modes {
            if out.coeffs.contains_key(&m.k) {
                return Err(FieldError::DuplicateMode(m.k));
            }
            let v: Vec3c = [
                Complex64::new(m.re[0], m.im[0]),
                Complex64::new(m.re[1], m.im[1]),
                Complex64::new(m.re[2], m.im[2]),
            ];
            if m.k == [0, 0, 0] {
                let imag = v.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
                if imag > 1e-9 {
                    return Err(FieldError::ZeroModeImaginary { imag });
                }
                let real: Vec3c = [v[0].re.into(), v[1].re.into(), v[2].re.into()];
                out.set_coeff(m.k, real)?;
            } else if is_lex_positive(m.k) {
                out.set_pair(m.k, v)?;
            } else {
                return Err(FieldError::NotLexPositive(m.k));
            }
        }
        Ok(out)
    }
}

/// One Leray projection step on a single coefficient.
pub fn leray_apply(k: Mode, v: &Vec3c) -> Vec3c {
    if k == [0, 0, 0] {
        return *v;
    }
    let ksq = mode_norm_sq(k);
    let mut dot = Complex64::ZERO;
    for (c, x) in k.iter().zip(v.iter()) {
        dot += *c as f64 * x;
    }
    let mut out = *v;
    for (o, c) in out.iter_mut().zip(k.iter()) {
        *o -= dot * (*c as f64 / ksq);
    }
    out
}

#[derive(Serialize, Deserialize)]
struct FieldRecord {
    dim: u8,
    cutoff: i64,
    modes: Vec<ModeRecord>,
}

#[derive(Serialize, Deserialize)]
struct ModeRecord {
    k: [i64; 3],
    re: [f64; 3],
    im: [f64; 3],
}

/// Deterministic pseudo-random real divergence-free field with zero mean:
/// every lex-positive mode inside the sup-norm `cutoff` receives a uniform
/// coefficient in `[-1, 1]^3 + i [-1, 1]^3`, Leray-projected per mode.
pub fn random_divergence_free(
    dim: u8,
    cutoff: i64,
    rng: &mut impl rand::Rng,
) -> Result<SpectralField, FieldError> {
    let mut field = SpectralField::new(dim, cutoff)?;
    let zmax = if dim == 2 { 0 } else { cutoff };
    for kx in -cutoff..=cutoff {
        for ky in -cutoff..=cutoff {
            for kz in -zmax..=zmax {
                let k = [kx, ky, kz];
                if !is_lex_positive(k) {
                    continue;
                }
                let mut v = ZERO_VEC;
                let comps = if dim == 2 { 2 } else { 3 };
                for c in v.iter_mut().take(comps) {
                    *c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
                let p = leray_apply(k, &v);
                field.set_pair(k, p)?;
            }
        }
    }
    Ok(field)
}
