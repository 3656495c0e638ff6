//! Band-limited periodized wavelets.
//!
//! For a ball family and a scale `n`, the wavelet at `(i, n)` has Fourier
//! coefficients
//!
//! `c(k) = (1+eps0)^{-3n/2} chi_i((1+eps0)^{-n} k) e(k)`, for `k` in `S_{i,n}`,
//!
//! followed by `L^2` normalization (the pre-normalization norm is recorded in
//! `norm_factor`). Here `chi_i` is an even bump supported on `B_i U -B_i` and
//! `e(k)` is a unit vector perpendicular to `k` with `e(-k) = e(k)`, so each
//! wavelet is a real, divergence-free, mean-zero field. Distinct `(i, n)`
//! labels have disjoint Fourier supports, which makes the family orthonormal.

use super::band::{BallFamily, BandError};
use super::{lex_representative, Mode, SpectralField, Vec3c, FOUR_PI_SQ};
use num_complex::Complex64;
use std::collections::BTreeMap;

/// Radial profile used for the spectral bump `chi_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BumpProfile {
    /// `exp(-1/(1 - r^2))` on the open unit ball of the band, the standard
    /// smooth compactly supported mollifier shape.
    #[default]
    Mollifier,
    /// Indicator of the band (all admitted modes weighted equally).
    Flat,
}

impl BumpProfile {
    fn eval(self, r_sq: f64) -> f64 {
        match self {
            BumpProfile::Mollifier => {
                if r_sq < 1.0 {
                    (-1.0 / (1.0 - r_sq)).exp()
                } else {
                    0.0
                }
            }
            BumpProfile::Flat => {
                if r_sq < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Unit polarization vector perpendicular to `k` satisfying `e(-k) = e(k)`.
///
/// Built as `normalize(a x k')` on the lex-positive representative `k'` of
/// `{k, -k}` (computing on a fixed representative is what makes the vector
/// even in `k`), with reference axis `a = (0,0,1)` and fallback `(0,1,0)`
/// when `k'` is parallel to the reference.
pub fn polarization(k: Mode) -> Result<[f64; 3], BandError> {
    if k == [0, 0, 0] {
        return Err(BandError::ZeroModePolarization);
    }
    let kp = lex_representative(k);
    let axis: [f64; 3] = if kp[0] == 0 && kp[1] == 0 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
    let kf = [kp[0] as f64, kp[1] as f64, kp[2] as f64];
    let cross = [
        axis[1] * kf[2] - axis[2] * kf[1],
        axis[2] * kf[0] - axis[0] * kf[2],
        axis[0] * kf[1] - axis[1] * kf[0],
    ];
    let norm = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    debug_assert!(norm > 0.0, "fallback axis guarantees a nonzero cross product");
    Ok([cross[0] / norm, cross[1] / norm, cross[2] / norm])
}

/// One normalized band wavelet.
#[derive(Debug, Clone)]
pub struct PeriodizedWavelet {
    ball: usize,
    scale: i32,
    norm_factor: f64,
    field: SpectralField,
}

impl PeriodizedWavelet {
    pub fn ball(&self) -> usize {
        self.ball
    }

    pub fn scale(&self) -> i32 {
        self.scale
    }

    /// `L^2` norm of the raw (pre-normalization) coefficient assignment.
    pub fn norm_factor(&self) -> f64 {
        self.norm_factor
    }

    /// The normalized spectral field (unit `L^2` norm).
    pub fn field(&self) -> &SpectralField {
        &self.field
    }

    pub fn support(&self) -> Vec<Mode> {
        self.field.support().copied().collect()
    }
}

/// Build the wavelet for ball `i` at scale `n` on fields with the given
/// sup-norm `cutoff`.
pub fn build_wavelet(
    balls: &BallFamily,
    i: usize,
    n: i32,
    profile: BumpProfile,
    cutoff: i64,
) -> Result<PeriodizedWavelet, BandError> {
    let modes = balls.lattice_band(i, n)?;
    let max_sup = modes
        .iter()
        .map(|k| k.iter().map(|c| c.abs()).max().unwrap_or(0))
        .max()
        .unwrap_or(0);
    if max_sup > cutoff {
        return Err(BandError::CutoffTooSmall { scale: n, needed: max_sup, cutoff });
    }
    let ball = *balls.ball(i)?;
    let lam = balls.scale_ratio().powi(n);
    let amp = balls.scale_ratio().powf(-1.5 * n as f64);
    let inv_r_sq = 1.0 / (ball.radius * ball.radius);

    // Raw scalar profile per mode; even in k because chi is even.
    let mut raw: Vec<(Mode, f64)> = Vec::with_capacity(modes.len());
    let mut norm_sq = 0.0;
    for k in &modes {
        let xi = [k[0] as f64 / lam, k[1] as f64 / lam, k[2] as f64 / lam];
        let d_plus: f64 = xi
            .iter()
            .zip(ball.center.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let d_minus: f64 = xi
            .iter()
            .zip(ball.center.iter())
            .map(|(a, b)| (a + b) * (a + b))
            .sum();
        let r_sq = d_plus.min(d_minus) * inv_r_sq;
        let chi = profile.eval(r_sq);
        let c = amp * chi;
        norm_sq += c * c;
        raw.push((*k, c));
    }
    let norm_factor = norm_sq.sqrt();
    debug_assert!(norm_factor > 0.0, "bands contain interior lattice points");

    let mut field = SpectralField::new(3, cutoff).expect("validated cutoff");
    for (k, c) in raw {
        let e = polarization(k)?;
        let scale = c / norm_factor;
        let v: Vec3c = [
            Complex64::new(scale * e[0], 0.0),
            Complex64::new(scale * e[1], 0.0),
            Complex64::new(scale * e[2], 0.0),
        ];
        field.set_coeff(k, v).expect("band modes fit the validated cutoff");
    }
    Ok(PeriodizedWavelet { ball: i, scale: n, norm_factor, field })
}

/// Restrict `f` to the modes of band `(i, n)`. Orthogonal complement to the
/// restriction onto all other modes, so `L^2` mass splits exactly.
pub fn band_project(
    f: &SpectralField,
    balls: &BallFamily,
    i: usize,
    n: i32,
) -> Result<SpectralField, BandError> {
    let modes = balls.lattice_band(i, n)?;
    Ok(f.restrict_to(&modes))
}

/// Two sides of the band regularity estimate together with the geometric
/// constant; `lhs <= constant * rhs` always holds for `beta >= 0`.
#[derive(Debug, Clone, Copy)]
pub struct BandEstimate {
    /// `H^kappa` norm of the band restriction.
    pub lhs: f64,
    /// `(1 + 4 pi^2 (1+eps0)^{2n})^{-beta/2} ||f||_{H^{kappa+beta}}`.
    pub rhs: f64,
    /// Annulus spread constant
    /// `((1 + 4 pi^2 L^2 (1+eps0/2)^2) / (1 + 4 pi^2 L^2))^{|kappa+beta|/2}`
    /// with `L = (1+eps0)^n`.
    pub constant: f64,
}

impl BandEstimate {
    pub fn holds(&self) -> bool {
        self.lhs <= self.constant * self.rhs * (1.0 + 1e-12) + 1e-300
    }
}

/// Evaluate the band estimate for `f` at band `(i, n)` and orders
/// `(kappa, beta)`; requires `beta >= 0` (the regularity trade direction in
/// which the band bound gains a factor).
pub fn band_estimate_check(
    f: &SpectralField,
    balls: &BallFamily,
    i: usize,
    n: i32,
    kappa: f64,
    beta: f64,
) -> Result<BandEstimate, BandError> {
    if beta < 0.0 {
        return Err(BandError::NegativeBeta(beta));
    }
    let restricted = band_project(f, balls, i, n)?;
    let lhs = restricted.sobolev_norm(kappa);
    let lam_sq = balls.scale_ratio().powi(2 * n);
    let rhs = (1.0 + FOUR_PI_SQ * lam_sq).powf(-beta / 2.0) * f.sobolev_norm(kappa + beta);
    let outer = 1.0 + balls.eps0() / 2.0;
    let ratio = (1.0 + FOUR_PI_SQ * lam_sq * outer * outer) / (1.0 + FOUR_PI_SQ * lam_sq);
    let constant = ratio.powf((kappa + beta).abs() / 2.0);
    Ok(BandEstimate { lhs, rhs, constant })
}

/// All wavelets of a ball family over a contiguous scale window.
#[derive(Debug, Clone)]
pub struct WaveletFamily {
    balls: BallFamily,
    n_min: i32,
    n_top: i32,
    cutoff: i64,
    wavelets: BTreeMap<(usize, i32), PeriodizedWavelet>,
}

impl WaveletFamily {
    /// Build every wavelet for scales `n_min..=n_top`. The field cutoff
    /// defaults to `ceil((1+eps0)^{n_top} (1+eps0/2))`, the outer radius of
    /// the largest band; a user-supplied cutoff below that is rejected so no
    /// scale silently aliases away.
    pub fn build(
        balls: BallFamily,
        n_min: i32,
        n_top: i32,
        profile: BumpProfile,
        cutoff: Option<i64>,
    ) -> Result<Self, BandError> {
        assert!(n_min <= n_top, "empty scale window");
        let required = (balls.scale_frequency(n_top) * (1.0 + balls.eps0() / 2.0)).ceil() as i64;
        let cutoff = match cutoff {
            Some(c) if c < required => {
                return Err(BandError::CutoffTooSmall { scale: n_top, needed: required, cutoff: c })
            }
            Some(c) => c,
            None => required,
        };
        let mut wavelets = BTreeMap::new();
        for i in 1..=balls.ball_count() {
            for n in n_min..=n_top {
                let w = build_wavelet(&balls, i, n, profile, cutoff)?;
                wavelets.insert((i, n), w);
            }
        }
        Ok(Self { balls, n_min, n_top, cutoff, wavelets })
    }

    pub fn balls(&self) -> &BallFamily {
        &self.balls
    }

    pub fn eps0(&self) -> f64 {
        self.balls.eps0()
    }

    pub fn scale_range(&self) -> (i32, i32) {
        (self.n_min, self.n_top)
    }

    pub fn cutoff(&self) -> i64 {
        self.cutoff
    }

    pub fn get(&self, i: usize, n: i32) -> Option<&PeriodizedWavelet> {
        self.wavelets.get(&(i, n))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, i32), &PeriodizedWavelet)> {
        self.wavelets.iter()
    }

    /// Wavelet coefficient `<u, psi_{i,n}>` (real inner product).
    pub fn coefficient(&self, u: &SpectralField, i: usize, n: i32) -> Option<f64> {
        self.get(i, n).map(|w| u.inner_product(w.field()))
    }

    /// All wavelet coefficients of `u` over the stored window.
    pub fn coefficients(&self, u: &SpectralField) -> BTreeMap<(usize, i32), f64> {
        self.wavelets
            .iter()
            .map(|(key, w)| (*key, u.inner_product(w.field())))
            .collect()
    }

    /// Linear combination `sum coeffs[(i,n)] psi_{i,n}`.
    pub fn synthesize(&self, coeffs: &BTreeMap<(usize, i32), f64>) -> SpectralField {
        let mut out = SpectralField::new(3, self.cutoff).expect("validated cutoff");
        for (key, c) in coeffs {
            if let Some(w) = self.wavelets.get(key) {
                out.axpy(*c, w.field()).expect("matching cutoffs");
            }
        }
        out
    }

    /// Half the squared `L^2` mass of `u` inside band `(i, n)`.
    pub fn band_energy(&self, u: &SpectralField, i: usize, n: i32) -> Result<f64, BandError> {
        let p = band_project(u, &self.balls, i, n)?;
        let norm = p.l2_norm();
        Ok(0.5 * norm * norm)
    }

    /// Deterministic pseudo-random field in the closed span of the stored
    /// wavelets, with coefficients uniform in `[-1, 1]`.
    pub fn random_span_field(&self, rng: &mut impl rand::Rng) -> SpectralField {
        let coeffs: BTreeMap<(usize, i32), f64> = self
            .wavelets
            .keys()
            .map(|key| (*key, rng.gen_range(-1.0..1.0)))
            .collect();
        self.synthesize(&coeffs)
    }
}
