//! Transport noise: coefficient sequences, the divergence-free exponential
//! basis, complex Brownian drivers, and the Ito-Stratonovich corrector.
//!
//! The noise fields are `sigma_{k,i}(x) = a_{k,i} e^{2 pi i k.x}` where, for
//! each lattice frequency `k != 0`, the vectors `a_{k,i}` (`i = 1..d-1`)
//! form an orthonormal basis of the plane perpendicular to `k`, built from
//! the lexicographically positive representative of `{k, -k}` so that
//! `a_{-k,i} = a_{k,i}` holds exactly. The first-order operator
//! `u -> Leray((sigma_{k,i}.grad) u)` shifts every mode `l` to `l + k` with
//! factor `2 pi i (a_{k,i}.l)`; it is skew-adjoint in the appropriate pair
//! `(k, -k)`, which is the mechanism behind every energy statement here.
//!
//! The corrector
//! `S_theta(u) = (C_d nu / ||theta||^2) sum_k theta_k^2
//!  Leray((sigma_{k,i}.grad) Leray((sigma_{-k,i}.grad) u))`
//! shifts by `-k` and back, so it preserves mode support and acts on each
//! coefficient by a real 3x3 matrix; [`CorrectorTable`] precomputes those
//! matrices for the stepper while [`corrector_apply`] evaluates the double
//! composition literally on an enlarged working lattice (exact, no
//! truncation). For the spherical-shell sequences `theta^N` in dimension 3
//! the corrector approaches `(3 nu / 5) Laplacian`; [`corrector_limit_error`]
//! measures the distance.

use crate::linalg::Matrix;
use crate::spectral::{
    is_lex_positive, lex_representative, leray_apply, mode_norm_sq, negate, polarization,
    FieldError, Mode, SpectralField, Vec3c, FOUR_PI_SQ,
};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("noise requires dimension 2 or 3, got {0}")]
    UnsupportedDim(u8),
    #[error("frequency zero has no transverse basis")]
    ZeroMode,
    #[error("basis component {i} out of range 1..={max} for dimension {dim}")]
    ComponentOutOfRange { i: usize, max: usize, dim: u8 },
    #[error("mode {0:?} is not planar but the basis dimension is 2")]
    PlanarMode(Mode),
    #[error("shell parameters invalid: N = {n} must be >= 1, decay = {lambda_exp} must be >= 0")]
    InvalidShellParams { n: u32, lambda_exp: f64 },
    #[error("theta sequence must have nonempty support")]
    EmptyTheta,
    #[error("theta sequence not radially symmetric: {a:?} and {b:?} share |k|^2 = {norm_sq} but differ")]
    NonRadialTheta { a: Mode, b: Mode, norm_sq: i64 },
    #[error("dimension mismatch: field has {field}, noise setup has {noise}")]
    DimMismatch { field: u8, noise: u8 },
    #[error("no Brownian increment stored for frequency {0:?}, component {1}")]
    UnknownDriverKey(Mode, usize),
    #[error("field error: {0}")]
    Field(#[from] FieldError),
}

#[cfg(test)]
fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dot_mode(a: [f64; 3], k: Mode) -> f64 {
    a[0] * k[0] as f64 + a[1] * k[1] as f64 + a[2] * k[2] as f64
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Finitely supported radial coefficient sequence `k -> theta_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSequence {
    dim: u8,
    entries: BTreeMap<Mode, f64>,
}

impl ThetaSequence {
    /// Validated constructor: entries must avoid `k = 0`, be planar when
    /// `dim = 2`, and depend on `|k|` only — which forces the support to be
    /// a union of complete lattice shells.
    pub fn new(dim: u8, entries: BTreeMap<Mode, f64>) -> Result<Self, NoiseError> {
        if !(dim == 2 || dim == 3) {
            return Err(NoiseError::UnsupportedDim(dim));
        }
        let entries: BTreeMap<Mode, f64> =
            entries.into_iter().filter(|(_, v)| *v != 0.0).collect();
        if entries.is_empty() {
            return Err(NoiseError::EmptyTheta);
        }
        let mut shells: BTreeMap<i64, (Mode, f64)> = BTreeMap::new();
        for (&k, &v) in &entries {
            if k == [0, 0, 0] {
                return Err(NoiseError::ZeroMode);
            }
            if dim == 2 && k[2] != 0 {
                return Err(NoiseError::PlanarMode(k));
            }
            assert!(v.is_finite(), "theta entries must be finite");
            let q = k.iter().map(|c| c * c).sum::<i64>();
            match shells.get(&q) {
                None => {
                    shells.insert(q, (k, v));
                }
                Some(&(first, fv)) if fv != v => {
                    return Err(NoiseError::NonRadialTheta { a: first, b: k, norm_sq: q });
                }
                _ => {}
            }
        }
        // Radiality also requires each present shell to be complete.
        let radius = (*shells.keys().last().expect("nonempty") as f64).sqrt().ceil() as i64;
        let z_range = if dim == 2 { 0..=0 } else { -radius..=radius };
        for k1 in -radius..=radius {
            for k2 in -radius..=radius {
                for k3 in z_range.clone() {
                    let k = [k1, k2, k3];
                    let q = k.iter().map(|c| c * c).sum::<i64>();
                    if let Some(&(first, _)) = shells.get(&q) {
                        if !entries.contains_key(&k) {
                            return Err(NoiseError::NonRadialTheta { a: first, b: k, norm_sq: q });
                        }
                    }
                }
            }
        }
        Ok(Self { dim, entries })
    }

    /// Shell sequence `theta_k = |k|^{-decay}` for `n <= |k| <= 2n`
    /// (Euclidean, inclusive), the scaling family of the diffusive limit.
    pub fn shell(n: u32, decay: f64, dim: u8) -> Result<Self, NoiseError> {
        if n < 1 || decay < 0.0 {
            return Err(NoiseError::InvalidShellParams { n, lambda_exp: decay });
        }
        if !(dim == 2 || dim == 3) {
            return Err(NoiseError::UnsupportedDim(dim));
        }
        let lo = (n as i64) * (n as i64);
        let hi = 4 * lo;
        let radius = 2 * n as i64;
        let z_range = if dim == 2 { 0..=0 } else { -radius..=radius };
        let mut entries = BTreeMap::new();
        for k1 in -radius..=radius {
            for k2 in -radius..=radius {
                for k3 in z_range.clone() {
                    let q = k1 * k1 + k2 * k2 + k3 * k3;
                    if q >= lo && q <= hi {
                        entries.insert([k1, k2, k3], (q as f64).powf(-decay / 2.0));
                    }
                }
            }
        }
        Self::new(dim, entries)
    }

    pub fn dim(&self) -> u8 {
        self.dim
    }

    pub fn get(&self, k: Mode) -> f64 {
        self.entries.get(&k).copied().unwrap_or(0.0)
    }

    pub fn support(&self) -> impl Iterator<Item = &Mode> {
        self.entries.keys()
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.entries.values().map(|v| v * v).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.entries.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest sup-norm over the support: how far one noise shift can move a
    /// mode, hence the padding the exact corrector needs.
    pub fn reach_inf(&self) -> i64 {
        self.entries
            .keys()
            .map(|k| k.iter().map(|c| c.abs()).max().expect("mode has entries"))
            .max()
            .expect("nonempty support")
    }
}

/// The transverse orthonormal frame `a_{k,i}` attached to each frequency.
#[derive(Debug, Clone, Copy)]
pub struct NoiseBasis {
    dim: u8,
}

impl NoiseBasis {
    pub fn new(dim: u8) -> Result<Self, NoiseError> {
        if dim == 2 || dim == 3 {
            Ok(Self { dim })
        } else {
            Err(NoiseError::UnsupportedDim(dim))
        }
    }

    pub fn dim(&self) -> u8 {
        self.dim
    }

    /// Number of transverse components, `d - 1`.
    pub fn component_count(&self) -> usize {
        self.dim as usize - 1
    }

    /// The constant `C_d = d / (d - 1)` multiplying the corrector.
    pub fn c_d(&self) -> f64 {
        self.dim as f64 / (self.dim as f64 - 1.0)
    }

    /// Basis vector `a_{k,i}`, `i` 1-based. Built from the lex-positive
    /// representative of `{k, -k}`, so it is exactly even in `k`.
    pub fn vector(&self, k: Mode, i: usize) -> Result<[f64; 3], NoiseError> {
        if k == [0, 0, 0] {
            return Err(NoiseError::ZeroMode);
        }
        let max = self.component_count();
        if i == 0 || i > max {
            return Err(NoiseError::ComponentOutOfRange { i, max, dim: self.dim });
        }
        let kp = lex_representative(k);
        if self.dim == 2 {
            if kp[2] != 0 {
                return Err(NoiseError::PlanarMode(k));
            }
            let norm = mode_norm_sq(kp).sqrt();
            return Ok([-kp[1] as f64 / norm, kp[0] as f64 / norm, 0.0]);
        }
        let e1 = polarization(k).expect("nonzero mode");
        if i == 1 {
            return Ok(e1);
        }
        let norm = mode_norm_sq(kp).sqrt();
        let khat = [kp[0] as f64 / norm, kp[1] as f64 / norm, kp[2] as f64 / norm];
        Ok(cross3(khat, e1))
    }
}

/// Complex Brownian increments for one time step, stored on lex-positive
/// keys; the lex-negative half is the pathwise conjugate.
#[derive(Debug, Clone)]
pub struct BrownianIncrements {
    map: BTreeMap<(Mode, usize), Complex64>,
}

impl BrownianIncrements {
    /// Increments from explicit values on lex-positive keys (frozen paths,
    /// coupled refinements). Keys on the lex-negative half are rejected
    /// because their values are derived by conjugation.
    pub fn from_map(map: BTreeMap<(Mode, usize), Complex64>) -> Result<Self, NoiseError> {
        for ((k, i), _) in &map {
            if !is_lex_positive(*k) {
                return Err(NoiseError::UnknownDriverKey(*k, *i));
            }
        }
        Ok(Self { map })
    }

    pub fn get(&self, k: Mode, i: usize) -> Result<Complex64, NoiseError> {
        if is_lex_positive(k) {
            self.map
                .get(&(k, i))
                .copied()
                .ok_or(NoiseError::UnknownDriverKey(k, i))
        } else {
            self.map
                .get(&(negate(k), i))
                .map(|w| w.conj())
                .ok_or(NoiseError::UnknownDriverKey(k, i))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(Mode, usize), &Complex64)> {
        self.map.iter()
    }
}

/// Seeded generator of the complex Brownian family over a fixed key set.
///
/// For each lex-positive `k` the increment over `dt` is
/// `(g1 + i g2) sqrt(dt)` with independent standard normal `g1, g2` (the
/// real motions attached to `k` and `-k`); the increment at `-k` is the
/// conjugate. This realizes quadratic covariation
/// `[W^{k,i}, W^{l,j}]_t = 2 t delta_{k+l} delta_{i-j}`.
#[derive(Debug, Clone)]
pub struct BrownianDriver {
    rng: ChaCha8Rng,
    keys: Vec<(Mode, usize)>,
}

impl BrownianDriver {
    /// Driver over the lex-positive support of `theta` times the transverse
    /// components of `basis`. Key order is fixed and sorted, so equal seeds
    /// give equal paths.
    pub fn new(seed: u64, theta: &ThetaSequence, basis: &NoiseBasis) -> Result<Self, NoiseError> {
        if theta.dim() != basis.dim() {
            return Err(NoiseError::DimMismatch { field: theta.dim(), noise: basis.dim() });
        }
        let keys: Vec<(Mode, usize)> = theta
            .support()
            .filter(|k| is_lex_positive(**k))
            .flat_map(|k| (1..=basis.component_count()).map(move |i| (*k, i)))
            .collect();
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(seed), keys })
    }

    pub fn keys(&self) -> &[(Mode, usize)] {
        &self.keys
    }

    pub fn increments(&mut self, dt: f64) -> BrownianIncrements {
        assert!(dt > 0.0, "time step must be positive");
        let scale = dt.sqrt();
        let map = self
            .keys
            .iter()
            .map(|&key| {
                let g1: f64 = StandardNormal.sample(&mut self.rng);
                let g2: f64 = StandardNormal.sample(&mut self.rng);
                (key, Complex64::new(g1 * scale, g2 * scale))
            })
            .collect();
        BrownianIncrements { map }
    }
}

/// Result of one first-order noise application.
#[derive(Debug, Clone)]
pub struct NoiseApplication {
    pub field: SpectralField,
    /// Squared mass of shifted coefficients that fell outside the requested
    /// cutoff (measured before the Leray projection).
    pub dropped_energy: f64,
}

/// `Leray((sigma_{k,i} . grad) u)`: shift every mode `l` of `u` to `l + k`
/// with factor `2 pi i (a_{k,i} . l)`, then project the landing mode.
/// Shifted modes beyond `cutoff` are dropped and their mass recorded.
pub fn noise_apply(
    basis: &NoiseBasis,
    k: Mode,
    i: usize,
    u: &SpectralField,
    cutoff: i64,
) -> Result<NoiseApplication, NoiseError> {
    if u.dim() != basis.dim() {
        return Err(NoiseError::DimMismatch { field: u.dim(), noise: basis.dim() });
    }
    let a = basis.vector(k, i)?;
    let mut field = SpectralField::new(u.dim(), cutoff)?;
    let mut dropped_energy = 0.0;
    let two_pi = 2.0 * std::f64::consts::PI;
    for (&l, coeff) in u.iter() {
        let factor = Complex64::new(0.0, two_pi * dot_mode(a, l));
        if factor.im == 0.0 {
            continue;
        }
        let target = [l[0] + k[0], l[1] + k[1], l[2] + k[2]];
        let shifted: Vec3c = [factor * coeff[0], factor * coeff[1], factor * coeff[2]];
        if target.iter().any(|c| c.abs() > cutoff) {
            dropped_energy += shifted.iter().map(|c| c.norm_sqr()).sum::<f64>();
            continue;
        }
        let projected = leray_apply(target, &shifted);
        field.add_coeff(target, projected)?;
    }
    Ok(NoiseApplication { field, dropped_energy })
}

/// The corrector `S_theta(u)`, evaluated as the literal double composition
/// on a working lattice padded by the reach of `theta` (exact: nothing is
/// truncated, and the `-k`/`+k` shifts land back on the support of `u`).
pub fn corrector_apply(
    theta: &ThetaSequence,
    basis: &NoiseBasis,
    nu: f64,
    u: &SpectralField,
) -> Result<SpectralField, NoiseError> {
    if u.dim() != theta.dim() {
        return Err(NoiseError::DimMismatch { field: u.dim(), noise: theta.dim() });
    }
    let work_cutoff = u.cutoff() + theta.reach_inf();
    let mut out = SpectralField::new(u.dim(), u.cutoff())?;
    let prefactor = basis.c_d() * nu / theta.l2_norm_sq();
    for &k in theta.support() {
        let weight = theta.get(k);
        let weight_sq = weight * weight;
        for i in 1..=basis.component_count() {
            let inner = noise_apply(basis, negate(k), i, u, work_cutoff)?;
            debug_assert_eq!(inner.dropped_energy, 0.0, "padded lattice must not truncate");
            let outer = noise_apply(basis, k, i, &inner.field, u.cutoff())?;
            debug_assert_eq!(outer.dropped_energy, 0.0, "second shift lands on supp u");
            out.axpy(prefactor * weight_sq, &outer.field)?;
        }
    }
    Ok(out)
}

/// Precomputed per-mode form of the corrector: on mode `l` it acts by the
/// real matrix
/// `M_l = -4 pi^2 (C_d nu / ||theta||^2)
///        sum_{k,i} theta_k^2 (a_{k,i}.l)^2 P_l P_{l-k}`
/// (with `P` the Leray projector, identity at frequency zero), applied
/// identically to real and imaginary parts.
#[derive(Debug, Clone)]
pub struct CorrectorTable {
    entries: BTreeMap<Mode, Matrix>,
}

fn leray_matrix(k: Mode) -> Matrix {
    let mut p = Matrix::identity(3);
    if k == [0, 0, 0] {
        return p;
    }
    let q = mode_norm_sq(k);
    for r in 0..3 {
        for c in 0..3 {
            p[(r, c)] -= (k[r] as f64) * (k[c] as f64) / q;
        }
    }
    p
}

impl CorrectorTable {
    /// Build the matrices for the listed modes.
    pub fn build(
        theta: &ThetaSequence,
        basis: &NoiseBasis,
        nu: f64,
        modes: &[Mode],
    ) -> Result<Self, NoiseError> {
        if theta.dim() != basis.dim() {
            return Err(NoiseError::DimMismatch { field: theta.dim(), noise: basis.dim() });
        }
        let prefactor = basis.c_d() * nu / theta.l2_norm_sq();
        let mut entries = BTreeMap::new();
        for &l in modes {
            let mut m = Matrix::zeros(3);
            let p_l = leray_matrix(l);
            for &k in theta.support() {
                let weight = theta.get(k);
                for i in 1..=basis.component_count() {
                    let a = basis.vector(k, i)?;
                    let al = dot_mode(a, l);
                    if al == 0.0 {
                        continue;
                    }
                    let shifted = [l[0] - k[0], l[1] - k[1], l[2] - k[2]];
                    let product = p_l.mul(&leray_matrix(shifted));
                    m.add_scaled(-FOUR_PI_SQ * prefactor * weight * weight * al * al, &product);
                }
            }
            entries.insert(l, m);
        }
        Ok(Self { entries })
    }

    pub fn matrix(&self, l: Mode) -> Option<&Matrix> {
        self.entries.get(&l)
    }

    /// Apply the tabulated corrector; every mode of `u` must be tabulated.
    pub fn apply(&self, u: &SpectralField) -> Result<SpectralField, NoiseError> {
        let mut out = SpectralField::new(u.dim(), u.cutoff())?;
        for (&l, coeff) in u.iter() {
            let m = self
                .entries
                .get(&l)
                .ok_or(NoiseError::UnknownDriverKey(l, 0))?;
            let re = m.mul_vec(&[coeff[0].re, coeff[1].re, coeff[2].re]);
            let im = m.mul_vec(&[coeff[0].im, coeff[1].im, coeff[2].im]);
            let v: Vec3c = [
                Complex64::new(re[0], im[0]),
                Complex64::new(re[1], im[1]),
                Complex64::new(re[2], im[2]),
            ];
            out.add_coeff(l, v)?;
        }
        Ok(out)
    }
}

/// Distance of the shell corrector from its diffusive limit.
#[derive(Debug, Clone, Copy)]
pub struct CorrectorLimit {
    pub n: u32,
    /// `|| S_{theta^N}(phi) - (3 nu / 5) Laplacian phi ||_{L^2}`.
    pub error: f64,
    /// Same, relative to `|| (3 nu / 5) Laplacian phi ||_{L^2}` (zero for
    /// zero `phi`).
    pub rel_error: f64,
}

/// Measure how far `S_{theta^N}` is from `(3 nu / 5) Laplacian` on `phi`
/// (dimension 3 only; the limit constant is specific to it).
pub fn corrector_limit_error(
    n: u32,
    decay: f64,
    nu: f64,
    phi: &SpectralField,
) -> Result<CorrectorLimit, NoiseError> {
    if phi.dim() != 3 {
        return Err(NoiseError::UnsupportedDim(phi.dim()));
    }
    let theta = ThetaSequence::shell(n, decay, 3)?;
    let basis = NoiseBasis::new(3)?;
    let corrected = corrector_apply(&theta, &basis, nu, phi)?;
    let target = phi.laplacian().scaled(3.0 * nu / 5.0);
    let mut diff = corrected;
    diff.axpy(-1.0, &target)?;
    let error = diff.l2_norm();
    let target_norm = target.l2_norm();
    let rel_error = if target_norm > 0.0 { error / target_norm } else { 0.0 };
    Ok(CorrectorLimit { n, error, rel_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::random_divergence_free;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn unit_shell_theta() -> ThetaSequence {
        // theta = 1 on the six |k|^2 = 1 modes: radial, hand-enumerable.
        let entries: BTreeMap<Mode, f64> = [
            [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
        ]
        .into_iter()
        .map(|k| (k, 1.0))
        .collect();
        ThetaSequence::new(3, entries).unwrap()
    }

    #[test]
    fn shell_sequence_mass_matches_lattice_enumeration() {
        // 1 <= |k| <= 2 in Z^3: shells |k|^2 = 1,2,3,4 hold 6,12,8,6 modes;
        // with decay 1 the squared mass is 6/1 + 12/2 + 8/3 + 6/4 = 97/6.
        let theta = ThetaSequence::shell(1, 1.0, 3).unwrap();
        assert_eq!(theta.support_len(), 32);
        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
        for k in theta.support() {
            *counts.entry(k.iter().map(|c| c * c).sum()).or_default() += 1;
        }
        assert_eq!(
            counts.into_iter().collect::<Vec<_>>(),
            vec![(1, 6), (2, 12), (3, 8), (4, 6)]
        );
        assert_relative_eq!(theta.l2_norm_sq(), 97.0 / 6.0, max_relative = 1e-14);

        let flat = ThetaSequence::shell(1, 0.0, 3).unwrap();
        assert_relative_eq!(flat.l2_norm_sq(), 32.0);
        assert_eq!(flat.linf_norm(), 1.0);
        assert_eq!(flat.reach_inf(), 2);

        let planar = ThetaSequence::shell(1, 0.0, 2).unwrap();
        // 1 <= |k| <= 2 in Z^2: 4 + 4 + 0 + 4 modes.
        assert_eq!(planar.support_len(), 12);
    }

    #[test]
    fn theta_validation_rejects_bad_input() {
        assert!(matches!(
            ThetaSequence::shell(0, 1.0, 3),
            Err(NoiseError::InvalidShellParams { .. })
        ));
        assert!(matches!(
            ThetaSequence::shell(1, -0.5, 3),
            Err(NoiseError::InvalidShellParams { .. })
        ));
        assert!(matches!(
            ThetaSequence::new(3, BTreeMap::new()),
            Err(NoiseError::EmptyTheta)
        ));
        let zero_mode: BTreeMap<Mode, f64> = [([0, 0, 0], 1.0)].into_iter().collect();
        assert!(matches!(ThetaSequence::new(3, zero_mode), Err(NoiseError::ZeroMode)));
        // Incomplete shell: (1,0,0) alone misses its |k|^2 = 1 partners.
        let partial: BTreeMap<Mode, f64> = [([1, 0, 0], 1.0)].into_iter().collect();
        assert!(matches!(
            ThetaSequence::new(3, partial),
            Err(NoiseError::NonRadialTheta { .. })
        ));
        // Complete shell but unequal values.
        let mut uneven: BTreeMap<Mode, f64> =
            unit_shell_theta().support().map(|k| (*k, 1.0)).collect();
        uneven.insert([0, 0, 1], 2.0);
        assert!(matches!(
            ThetaSequence::new(3, uneven),
            Err(NoiseError::NonRadialTheta { .. })
        ));
    }

    #[test]
    fn basis_vectors_are_transverse_orthonormal_and_even() {
        let basis = NoiseBasis::new(3).unwrap();
        assert_eq!(basis.component_count(), 2);
        assert_relative_eq!(basis.c_d(), 1.5);
        let modes: [Mode; 7] = [
            [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -3], [2, -1, 3], [-2, 1, -3], [1, 1, 1],
        ];
        for k in modes {
            let a1 = basis.vector(k, 1).unwrap();
            let a2 = basis.vector(k, 2).unwrap();
            for (i, a) in [a1, a2].iter().enumerate() {
                assert_abs_diff_eq!(dot_mode(*a, k), 0.0, epsilon = 1e-12);
                assert_relative_eq!(dot3(*a, *a), 1.0, max_relative = 1e-14);
                let neg = basis.vector(negate(k), i + 1).unwrap();
                assert_eq!(*a, neg, "basis must be even at {k:?}");
            }
            assert_abs_diff_eq!(dot3(a1, a2), 0.0, epsilon = 1e-14);
        }
        assert!(matches!(basis.vector([0, 0, 0], 1), Err(NoiseError::ZeroMode)));
        assert!(matches!(
            basis.vector([1, 0, 0], 3),
            Err(NoiseError::ComponentOutOfRange { .. })
        ));

        let planar = NoiseBasis::new(2).unwrap();
        assert_relative_eq!(planar.c_d(), 2.0);
        let a = planar.vector([3, 4, 0], 1).unwrap();
        assert_relative_eq!(dot3(a, a), 1.0, max_relative = 1e-14);
        assert_abs_diff_eq!(dot_mode(a, [3, 4, 0]), 0.0, epsilon = 1e-12);
        assert!(matches!(
            planar.vector([1, 0, 1], 1),
            Err(NoiseError::PlanarMode(_))
        ));
    }

    #[test]
    fn brownian_increments_conjugate_deterministic_with_right_moments() {
        let theta = ThetaSequence::shell(1, 0.0, 3).unwrap();
        let basis = NoiseBasis::new(3).unwrap();
        let mut driver = BrownianDriver::new(7, &theta, &basis).unwrap();
        // 16 lex-positive modes x 2 components.
        assert_eq!(driver.keys().len(), 32);

        let dt = 0.01;
        let dw = driver.increments(dt);
        for &(k, i) in driver.keys() {
            let w = dw.get(k, i).unwrap();
            assert_eq!(dw.get(negate(k), i).unwrap(), w.conj());
        }
        assert!(matches!(
            dw.get([5, 5, 5], 1),
            Err(NoiseError::UnknownDriverKey(..))
        ));

        // Same seed, same path; different seed, different path.
        let mut twin = BrownianDriver::new(7, &theta, &basis).unwrap();
        let mut other = BrownianDriver::new(8, &theta, &basis).unwrap();
        let w0 = dw.get([1, 0, 0], 1).unwrap();
        assert_eq!(twin.increments(dt).get([1, 0, 0], 1).unwrap(), w0);
        assert_ne!(other.increments(dt).get([1, 0, 0], 1).unwrap(), w0);

        // Moments over many steps of one key: E|dW|^2 = 2 dt, E[(dW)^2] = 0.
        let mut norm_sq = 0.0;
        let mut square = Complex64::ZERO;
        let m = 20_000;
        for _ in 0..m {
            let w = driver.increments(dt).get([1, 0, 0], 1).unwrap();
            norm_sq += w.norm_sqr();
            square += w * w;
        }
        let mf = m as f64;
        // |dW|^2/dt is chi-square with 2 dof: variance 4 dt^2.
        let se = 2.0 * dt / mf.sqrt();
        assert!((norm_sq / mf - 2.0 * dt).abs() < 6.0 * se);
        // Re and Im of (dW)^2 have variance <= 2 (2 dt)^2 each.
        let se2 = 2.0 * 2.0f64.sqrt() * dt / mf.sqrt();
        assert!((square / mf).norm() < 6.0 * se2);
    }

    #[test]
    fn noise_apply_moves_single_modes_by_hand_rule() {
        let basis = NoiseBasis::new(3).unwrap();
        // Zero-frequency (constant) fields are annihilated: the gradient
        // factor a.l vanishes at l = 0.
        let mut constant = SpectralField::new(3, 4).unwrap();
        constant
            .set_coeff([0, 0, 0], [Complex64::new(1.0, 0.0); 3])
            .unwrap();
        let out = noise_apply(&basis, [1, 0, 0], 1, &constant, 4).unwrap();
        assert!(out.field.is_empty());
        assert_eq!(out.dropped_energy, 0.0);

        // Single mode l = (0, 1, 1), k = (1, 0, 0): a_{k,1} = (0, 1, 0), so
        // the factor is 2 pi i (a.l) = 2 pi i, landing at (1, 1, 1).
        let mut u = SpectralField::new(3, 4).unwrap();
        let coeff: Vec3c = [
            Complex64::new(0.5, -0.25),
            Complex64::new(1.0, 0.0),
            Complex64::new(-1.0, 0.0),
        ];
        u.set_coeff([0, 1, 1], leray_apply([0, 1, 1], &coeff)).unwrap();
        let out = noise_apply(&basis, [1, 0, 0], 1, &u, 4).unwrap();
        let support: Vec<Mode> = out.field.support().copied().collect();
        assert_eq!(support, vec![[1, 1, 1]]);
        let got = out.field.coeff([1, 1, 1]);
        let factor = Complex64::new(0.0, 2.0 * std::f64::consts::PI);
        let shifted: Vec3c = core::array::from_fn(|j| factor * u.coeff([0, 1, 1])[j]);
        let expected = leray_apply([1, 1, 1], &shifted);
        for j in 0..3 {
            assert_relative_eq!(got[j].re, expected[j].re, max_relative = 1e-14);
            assert_relative_eq!(got[j].im, expected[j].im, max_relative = 1e-14);
        }

        // A mode shifted onto frequency zero carries factor a.(-k) = 0:
        // the noise never creates a mean component.
        let mut v = SpectralField::new(3, 4).unwrap();
        v.set_pair([-1, 0, 0], leray_apply([-1, 0, 0], &coeff)).unwrap();
        let out = noise_apply(&basis, [1, 0, 0], 1, &v, 4).unwrap();
        assert_eq!(out.field.coeff([0, 0, 0]), [Complex64::ZERO; 3]);

        // Truncation at the cutoff is recorded, not silent: k = (1,1,0)
        // sends (0,1,1) to (1,2,1), outside cutoff 1, with factor
        // 2 pi i / sqrt(2) != 0.
        let tight = noise_apply(&basis, [1, 1, 0], 1, &u, 1).unwrap();
        assert!(tight.field.is_empty());
        assert!(tight.dropped_energy > 0.0);
    }

    #[test]
    fn noise_pairing_is_skew_and_martingale_energy_vanishes() {
        let basis = NoiseBasis::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cutoff = 3;
        let work = cutoff + 2;
        for _ in 0..5 {
            let u = random_divergence_free(3, cutoff, &mut rng).unwrap();
            let v = random_divergence_free(3, cutoff, &mut rng).unwrap();
            for k in [[1, 0, 0], [0, 2, 1], [-1, 1, 0]] {
                for i in 1..=2 {
                    let au = noise_apply(&basis, k, i, &u, work).unwrap().field;
                    let av = noise_apply(&basis, negate(k), i, &v, work).unwrap().field;
                    let lifted_v = v.with_cutoff(work).unwrap();
                    let lifted_u = u.with_cutoff(work).unwrap();
                    let pair = lifted_v.inner_product(&au) + lifted_u.inner_product(&av);
                    let scale = u.l2_norm() * v.l2_norm() * 40.0;
                    assert!(pair.abs() <= 1e-12 * scale, "pairing {pair}");
                    // v = u special case: the stochastic term injects no energy.
                    let self_pair = lifted_u.inner_product(&au);
                    assert!(self_pair.abs() <= 1e-12 * u.l2_norm().powi(2) * 40.0);
                }
            }
        }
    }

    #[test]
    fn corrector_is_supported_real_and_zero_on_zero() {
        let theta = ThetaSequence::shell(1, 1.0, 3).unwrap();
        let basis = NoiseBasis::new(3).unwrap();
        let zero = SpectralField::new(3, 3).unwrap();
        assert!(corrector_apply(&theta, &basis, 1.0, &zero).unwrap().is_empty());

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u = random_divergence_free(3, 2, &mut rng).unwrap();
        let s = corrector_apply(&theta, &basis, 0.7, &u).unwrap();
        // Support preserved exactly: -k then +k shifts cancel.
        let u_support: std::collections::BTreeSet<Mode> =
            u.support().copied().collect();
        for l in s.support() {
            assert!(u_support.contains(l), "corrector created mode {l:?}");
        }
        assert!(s.reality_residual() < 1e-12, "corrector must keep fields real");
        assert!(s.divergence_residual() < 1e-12);
    }

    #[test]
    fn corrector_on_unit_shell_theta_is_exact_multiple_on_axis_mode() {
        // theta = 1 on |k| = 1, u supported on +-(1, 0, 0). Contributions
        // come only from k = +-e2 (a = (-1,0,0)) and k = +-e3 (a = (1,0,0)),
        // each with (a.l)^2 = 1; the Leray products sum to diag(0, 3, 3),
        // so S_theta(u) = -4 pi^2 (3/2 nu / 6) 3 u = -3 pi^2 nu u.
        let theta = unit_shell_theta();
        let basis = NoiseBasis::new(3).unwrap();
        let nu = 1.3;
        let mut u = SpectralField::new(3, 2).unwrap();
        let coeff: Vec3c = [
            Complex64::ZERO,
            Complex64::new(0.4, -1.1),
            Complex64::new(-0.3, 0.2),
        ];
        u.set_pair([1, 0, 0], coeff).unwrap();
        let s = corrector_apply(&theta, &basis, nu, &u).unwrap();
        let factor = -3.0 * std::f64::consts::PI.powi(2) * nu;
        let expected = u.scaled(factor);
        let mut diff = s;
        diff.axpy(-1.0, &expected).unwrap();
        assert!(diff.l2_norm() <= 1e-13 * expected.l2_norm(), "{}", diff.l2_norm());
    }

    #[test]
    fn corrector_energy_identity_holds_exactly() {
        // <u, S_theta(u)> = -(C_d nu/||theta||^2) sum theta_k^2 ||A_{k,i} u||^2:
        // the corrector drains exactly the energy the martingale term
        // injects in expectation.
        let basis = NoiseBasis::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for (n, decay) in [(1u32, 0.0), (1, 1.0), (2, 1.0)] {
            let theta = ThetaSequence::shell(n, decay, 3).unwrap();
            let nu = 0.8;
            let u = random_divergence_free(3, 2, &mut rng).unwrap();
            let s = corrector_apply(&theta, &basis, nu, &u).unwrap();
            let lhs = u.inner_product(&s);

            let work = u.cutoff() + theta.reach_inf();
            let lifted = u.with_cutoff(work).unwrap();
            let mut dissipated = 0.0;
            for &k in theta.support() {
                let w = theta.get(k);
                for i in 1..=basis.component_count() {
                    let au = noise_apply(&basis, k, i, &lifted, work).unwrap();
                    assert_eq!(au.dropped_energy, 0.0);
                    dissipated += w * w * au.field.l2_norm().powi(2);
                }
            }
            let rhs = -basis.c_d() * nu / theta.l2_norm_sq() * dissipated;
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        }
    }

    #[test]
    fn corrector_table_matches_direct_composition() {
        let basis = NoiseBasis::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for (n, decay) in [(1u32, 1.0), (2, 0.0)] {
            let theta = ThetaSequence::shell(n, decay, 3).unwrap();
            let nu = 1.1;
            let u = random_divergence_free(3, 2, &mut rng).unwrap();
            let modes: Vec<Mode> = u.support().copied().collect();
            let table = CorrectorTable::build(&theta, &basis, nu, &modes).unwrap();
            let direct = corrector_apply(&theta, &basis, nu, &u).unwrap();
            let tabulated = table.apply(&u).unwrap();
            let mut diff = tabulated;
            diff.axpy(-1.0, &direct).unwrap();
            assert!(
                diff.l2_norm() <= 1e-13 * direct.l2_norm().max(1e-300),
                "table and composition disagree by {}",
                diff.l2_norm()
            );
        }
        // The unit-shell hand value appears in the table too.
        let table = CorrectorTable::build(&unit_shell_theta(), &basis, 1.0, &[[1, 0, 0]]).unwrap();
        let m = table.matrix([1, 0, 0]).unwrap();
        let pi_sq = std::f64::consts::PI.powi(2);
        assert_relative_eq!(m[(1, 1)], -3.0 * pi_sq, max_relative = 1e-13);
        assert_relative_eq!(m[(2, 2)], -3.0 * pi_sq, max_relative = 1e-13);
        assert_abs_diff_eq!(m[(0, 0)], 0.0, epsilon = 1e-13);
    }

    #[test]
    fn corrector_limit_error_decreases_toward_diffusive_limit() {
        let mut phi = SpectralField::new(3, 1).unwrap();
        let coeff: Vec3c = [
            Complex64::ZERO,
            Complex64::new(1.0, 0.0),
            Complex64::new(0.5, 0.0),
        ];
        phi.set_pair([1, 0, 0], coeff).unwrap();
        let e2 = corrector_limit_error(2, 1.0, 1.0, &phi).unwrap();
        let e4 = corrector_limit_error(4, 1.0, 1.0, &phi).unwrap();
        assert!(e2.error.is_finite() && e4.error > 0.0);
        assert!(e4.error < e2.error, "error must shrink: {} vs {}", e2.error, e4.error);
        assert!(e4.rel_error < 0.05, "N = 4 already sits close: {}", e4.rel_error);

        let zero = SpectralField::new(3, 1).unwrap();
        let e0 = corrector_limit_error(2, 1.0, 1.0, &zero).unwrap();
        assert_eq!((e0.error, e0.rel_error), (0.0, 0.0));

        let planar = SpectralField::new(2, 1).unwrap();
        assert!(matches!(
            corrector_limit_error(2, 1.0, 1.0, &planar),
            Err(NoiseError::UnsupportedDim(2))
        ));
    }
}
