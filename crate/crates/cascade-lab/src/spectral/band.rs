//! Frequency balls and their scaled lattice bands.
//!
//! A family of balls `B_i` lives in the open annulus
//! `1 < |xi| < 1 + eps0/2`, chosen so that the balls together with their
//! mirror images `-B_i` are pairwise disjoint. Scaling by `(1+eps0)^n`
//! produces the integer band `S_{i,n} = Z^3 /\ (1+eps0)^n (B_i U -B_i)`;
//! bands at distinct `(i, n)` are disjoint, every `k` in a scale-`n` band
//! satisfies `|k| > (1+eps0)^n`, and the annulus gap keeps consecutive
//! scales from touching.

use super::Mode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Euclidean ball in frequency space.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FrequencyBall {
    pub center: [f64; 3],
    pub radius: f64,
}

impl FrequencyBall {
    fn center_norm(&self) -> f64 {
        self.center.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    fn contains(&self, xi: [f64; 3]) -> bool {
        let d2: f64 = xi
            .iter()
            .zip(self.center.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        d2 < self.radius * self.radius
    }
}

/// Errors from ball-family construction and band enumeration.
#[derive(Debug, Error)]
pub enum BandError {
    #[error("eps0 must be positive, got {0}")]
    InvalidEps0(f64),
    #[error("at least one ball is required")]
    EmptyFamily,
    #[error("ball {index} (center norm {center_norm:.4}, radius {radius:.4}) leaves the open annulus (1, 1 + eps0/2)")]
    BallOutsideAnnulus { index: usize, center_norm: f64, radius: f64 },
    #[error("balls {first} and {second} overlap (or overlap after mirroring)")]
    OverlappingBalls { first: usize, second: usize },
    #[error("no standard direction table for {requested} balls (max {max})")]
    TooManyBalls { requested: usize, max: usize },
    #[error("ball index {index} out of range 1..={count}")]
    BallIndexOutOfRange { index: usize, count: usize },
    #[error("band ({ball}, {scale}) contains no lattice points; scales >= {min_admissible} are guaranteed nonempty")]
    EmptyBand { ball: usize, scale: i32, min_admissible: i32 },
    #[error("wavelet modes at scale {scale} need cutoff {needed} but the field cutoff is {cutoff}")]
    CutoffTooSmall { scale: i32, needed: i64, cutoff: i64 },
    #[error("polarization undefined for the zero mode")]
    ZeroModePolarization,
    #[error("band estimate requires beta >= 0, got {0}")]
    NegativeBeta(f64),
}

/// Ball family with its annulus parameter `eps0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BallFamily {
    eps0: f64,
    balls: Vec<FrequencyBall>,
}

/// Unit directions used by [`BallFamily::standard`]; 90 or 45 degrees apart,
/// far enough that standard-radius balls and their mirrors stay disjoint.
const STANDARD_DIRECTIONS: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2, 0.0],
    [std::f64::consts::FRAC_1_SQRT_2, 0.0, std::f64::consts::FRAC_1_SQRT_2],
    [0.0, std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
];

impl BallFamily {
    /// Validating constructor: all balls inside the open annulus
    /// `1 < |xi| < 1 + eps0/2`, pairwise disjoint together with mirrors.
    pub fn new(eps0: f64, balls: Vec<FrequencyBall>) -> Result<Self, BandError> {
        if !(eps0 > 0.0) || !eps0.is_finite() {
            return Err(BandError::InvalidEps0(eps0));
        }
        if balls.is_empty() {
            return Err(BandError::EmptyFamily);
        }
        let outer = 1.0 + eps0 / 2.0;
        for (idx, b) in balls.iter().enumerate() {
            let cn = b.center_norm();
            let ok = b.radius > 0.0 && cn - b.radius > 1.0 && cn + b.radius < outer;
            if !ok {
                return Err(BandError::BallOutsideAnnulus {
                    index: idx + 1,
                    center_norm: cn,
                    radius: b.radius,
                });
            }
        }
        for i in 0..balls.len() {
            for j in 0..balls.len() {
                if i == j {
                    continue;
                }
                if !disjoint(&balls[i], &balls[j], false) {
                    return Err(BandError::OverlappingBalls { first: i + 1, second: j + 1 });
                }
            }
        }
        // Mirror disjointness, including each ball against its own mirror.
        for i in 0..balls.len() {
            for j in 0..balls.len() {
                if !disjoint(&balls[i], &balls[j], true) {
                    return Err(BandError::OverlappingBalls { first: i + 1, second: j + 1 });
                }
            }
        }
        Ok(Self { eps0, balls })
    }

    /// Standard family: `count` balls of radius `0.999 eps0 / 4` centered at
    /// distance `1 + eps0/4` along fixed well-separated directions.
    pub fn standard(count: usize, eps0: f64) -> Result<Self, BandError> {
        if count == 0 {
            return Err(BandError::EmptyFamily);
        }
        if count > STANDARD_DIRECTIONS.len() {
            return Err(BandError::TooManyBalls {
                requested: count,
                max: STANDARD_DIRECTIONS.len(),
            });
        }
        let c = 1.0 + eps0 / 4.0;
        let r = 0.999 * eps0 / 4.0;
        let balls = STANDARD_DIRECTIONS[..count]
            .iter()
            .map(|d| FrequencyBall { center: [d[0] * c, d[1] * c, d[2] * c], radius: r })
            .collect();
        Self::new(eps0, balls)
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    /// Scale ratio `1 + eps0` between consecutive bands.
    pub fn scale_ratio(&self) -> f64 {
        1.0 + self.eps0
    }

    pub fn ball_count(&self) -> usize {
        self.balls.len()
    }

    /// Ball `i` (1-based, matching the band labels).
    pub fn ball(&self, i: usize) -> Result<&FrequencyBall, BandError> {
        self.balls
            .get(i.wrapping_sub(1))
            .ok_or(BandError::BallIndexOutOfRange { index: i, count: self.balls.len() })
    }

    /// Integer modes of the band `S_{i,n}`, sorted lexicographically. The set
    /// is closed under negation. Fails with the smallest guaranteed-nonempty
    /// scale if no lattice point lands in the scaled ball pair.
    pub fn lattice_band(&self, i: usize, n: i32) -> Result<Vec<Mode>, BandError> {
        let ball = *self.ball(i)?;
        let lam = self.scale_ratio().powi(n);
        let mut modes = Vec::new();
        for sign in [1.0, -1.0] {
            let center = [
                sign * lam * ball.center[0],
                sign * lam * ball.center[1],
                sign * lam * ball.center[2],
            ];
            let radius = lam * ball.radius;
            let lo = |c: f64| (c - radius).ceil() as i64;
            let hi = |c: f64| (c + radius).floor() as i64;
            for kx in lo(center[0])..=hi(center[0]) {
                for ky in lo(center[1])..=hi(center[1]) {
                    for kz in lo(center[2])..=hi(center[2]) {
                        let k = [kx, ky, kz];
                        let xi = [
                            k[0] as f64 / lam * sign,
                            k[1] as f64 / lam * sign,
                            k[2] as f64 / lam * sign,
                        ];
                        if ball.contains(xi) {
                            modes.push(k);
                        }
                    }
                }
            }
        }
        modes.sort_unstable();
        modes.dedup();
        if modes.is_empty() {
            return Err(BandError::EmptyBand {
                ball: i,
                scale: n,
                min_admissible: self.min_nonempty_scale(i)?,
            });
        }
        Ok(modes)
    }

    /// Smallest scale at which the scaled ball radius reaches `sqrt(3)/2`, so
    /// that it must capture a lattice point. Smaller scales can still be
    /// nonempty by luck; this bound is what the empty-band error reports.
    pub fn min_nonempty_scale(&self, i: usize) -> Result<i32, BandError> {
        let ball = self.ball(i)?;
        let needed = 3f64.sqrt() / (2.0 * ball.radius);
        Ok((needed.ln() / self.scale_ratio().ln()).ceil() as i32)
    }

    /// Every band mode at scale `n` satisfies `|k| > (1+eps0)^n`; this is the
    /// common lower bound used by dissipation coefficients.
    pub fn scale_frequency(&self, n: i32) -> f64 {
        self.scale_ratio().powi(n)
    }
}

fn disjoint(a: &FrequencyBall, b: &FrequencyBall, mirror: bool) -> bool {
    let sign = if mirror { -1.0 } else { 1.0 };
    let d2: f64 = a
        .center
        .iter()
        .zip(b.center.iter())
        .map(|(x, y)| (x - sign * y) * (x - sign * y))
        .sum();
    d2.sqrt() > a.radius + b.radius
}
