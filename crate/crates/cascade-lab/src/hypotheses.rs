//! Exact feasibility checks for the exponent budgets behind the regularity
//! hypotheses of the cascade system.
//!
//! The cascade nonlinearity couples three frequency bands per term, and the
//! band-`n` block carries a geometric growth factor worth `5/2` Sobolev
//! orders (bands live at frequency `~ (1+eps0)^n`, and the structure
//! constants scale like `(1+eps0)^{5n/2}`). Estimating one pairing slot
//! against a field bounded in `H^s` buys `s` orders of decay, each worth
//! `band_gain = 1/2` in the geometric-sum exponent, so a term bounded with
//! slot orders `s1, s2, s3` is summable over bands exactly when
//! `s1 + s2 + s3 > 5/2`. Conjugating the state by `(Id - Delta)^rho`
//! (state `v = (Id - Delta)^rho u`) raises the order available to each
//! `u`-slot by `2 rho`, which is the only knob the checker turns.
//!
//! Each hypothesis adds its own caps on how the orders may be spent:
//!
//! * [`Hypothesis::H1`] - the continuity bound allows one `L^2` factor
//!   (order up to `2 rho`), one `H^1` factor (order up to `1 + 2 rho`), and
//!   a test function in `H^1` (order 1).
//! * [`Hypothesis::H2Prime`] - the growth bound interpolates every factor
//!   between `H^{-delta}` and `H^1`; the total `H^1` power
//!   `(3 delta + total - 4 rho) / (1 + delta)` must lie strictly inside
//!   `(0, 2)`.
//! * [`Hypothesis::H3Prime`] - the local-monotonicity bound spends orders
//!   `a, b, g in [0, 1]` (state currency) with the derived exponents
//!   `gamma3 = a + g in (0, 2)`, `beta3 = 2 - gamma3`, `kappa = b`, and the
//!   cap `gamma3 + kappa <= 2`.
//! * [`Hypothesis::H4`] - the invariant-set argument pairs two `H^1`
//!   factors (order up to `1 + 2 rho` each) against the spatial mean of the
//!   smoothed output wavelet, which *costs* `2 rho` orders instead of
//!   earning any.
//! * [`Hypothesis::NseTemam`] - the same bookkeeping driven by the
//!   classical trilinear advection estimate `|<(u.grad)v, w>| <=
//!   ||u||_{H^{m1}} ||v||_{H^{m2+1}} ||w||_{H^{m3}}` with
//!   `m1 + m2 + m3 >= 3/2` and `0 <= m_i != 3/2`, in place of the band
//!   summability constraint.
//!
//! All decisions run in exact rational arithmetic: the pass/fail boundaries
//! sit at small rationals (`1/8`, `1/8 + delta/4`, `1/4`) and the cascade
//! systems are *strict* at their boundaries while the trilinear system is
//! not, so floating point must never be the judge. [`check`] decides via
//! the closed-form interval reduction and keeps a coarse lattice search as
//! a defensive fallback near the boundary; [`threshold`] wraps `check` in a
//! monotonicity-asserting bisection.

use num::rational::BigRational;
use num::{BigInt, Signed, ToPrimitive, Zero};
use serde::Serialize;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Errors produced by problem construction, parsing, and threshold search.
#[derive(Debug, Error)]
pub enum HypothesesError {
    #[error("unknown hypothesis name `{0}` (expected H1, H2p, H3p, H4, or NSE)")]
    UnknownHypothesis(String),
    #[error("derivative order rho must be finite and nonnegative, got {0}")]
    InvalidRho(f64),
    #[error("interpolation margin delta must be finite and positive, got {0}")]
    InvalidDelta(f64),
    #[error("tolerance must be finite and positive, got {0}")]
    InvalidTolerance(f64),
    #[error("`{0}` is not a plain decimal number")]
    InvalidNumber(String),
    #[error("pass/fail is not monotone over the bracket: pass at rho = {rho_pass} but fail at rho = {rho_fail}")]
    NonMonotone { rho_pass: f64, rho_fail: f64 },
    #[error("no passing rho found in [{lo}, {hi}]")]
    BracketExhausted { lo: f64, hi: f64 },
}

/// Which inequality system [`check`] should decide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hypothesis {
    /// Continuity bound: one low-regularity factor, one `H^1` factor, one
    /// `H^1` test slot. Passes exactly for `rho > 1/8`.
    H1,
    /// Growth bound with every factor interpolated between `H^{-delta}` and
    /// `H^1`. Passes exactly for `rho > 1/8 + delta/4`.
    H2Prime,
    /// Local monotonicity with derived exponents `(beta3, gamma3, kappa)`.
    /// Passes exactly for `rho > 1/8`.
    H3Prime,
    /// Invariant-set (mean-zero preservation) bound; the mean slot costs
    /// `2 rho` orders. Passes exactly for `rho > 1/4`.
    H4,
    /// Trilinear advection bookkeeping with slots `(m1, m2 + 1, m3)`.
    /// Passes exactly for `rho >= 1/4` (non-strict boundary).
    NseTemam,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 5] = [
        Hypothesis::H1,
        Hypothesis::H2Prime,
        Hypothesis::H3Prime,
        Hypothesis::H4,
        Hypothesis::NseTemam,
    ];

    /// Canonical command-line token (`H1`, `H2p`, `H3p`, `H4`, `NSE`).
    pub fn cli_token(&self) -> &'static str {
        match self {
            Hypothesis::H1 => "H1",
            Hypothesis::H2Prime => "H2p",
            Hypothesis::H3Prime => "H3p",
            Hypothesis::H4 => "H4",
            Hypothesis::NseTemam => "NSE",
        }
    }

    /// True when the pass region is an open interval `(threshold, inf)`;
    /// the trilinear system alone includes its boundary.
    pub fn boundary_is_strict(&self) -> bool {
        !matches!(self, Hypothesis::NseTemam)
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Hypothesis::H1 => "H1",
            Hypothesis::H2Prime => "H2'",
            Hypothesis::H3Prime => "H3'",
            Hypothesis::H4 => "H4",
            Hypothesis::NseTemam => "NSE-Temam",
        };
        f.write_str(name)
    }
}

impl FromStr for Hypothesis {
    type Err = HypothesesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "h1" => Ok(Hypothesis::H1),
            "h2p" | "h2'" | "h2prime" => Ok(Hypothesis::H2Prime),
            "h3p" | "h3'" | "h3prime" => Ok(Hypothesis::H3Prime),
            "h4" => Ok(Hypothesis::H4),
            "nse" | "nse-temam" | "nsetemam" => Ok(Hypothesis::NseTemam),
            _ => Err(HypothesesError::UnknownHypothesis(s.to_string())),
        }
    }
}

fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn approx(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Positive part, used for interpolation powers that clip at zero when a
/// slot wastes surplus regularity.
fn positive_part(r: BigRational) -> BigRational {
    if r.is_positive() {
        r
    } else {
        BigRational::zero()
    }
}

/// Parses a plain decimal literal (`13`, `0.13`, `-0.5`) into an exact
/// rational, so sweep grids like `0.005` mean `1/200` rather than the
/// nearest binary float.
pub fn parse_decimal(s: &str) -> Result<BigRational, HypothesesError> {
    let t = s.trim();
    let bad = || HypothesesError::InvalidNumber(s.to_string());
    let (sign, digits) = match t.strip_prefix('-') {
        Some(rest) => (-1i64, rest),
        None => (1, t.strip_prefix('+').unwrap_or(t)),
    };
    let (ipart, fpart) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if ipart.is_empty() && fpart.is_empty() {
        return Err(bad());
    }
    if !ipart.bytes().all(|b| b.is_ascii_digit()) || !fpart.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let mut numer: BigInt = if ipart.is_empty() {
        BigInt::from(0)
    } else {
        ipart.parse().map_err(|_| bad())?
    };
    let mut denom = BigInt::from(1);
    for b in fpart.bytes() {
        numer = numer * 10 + (b - b'0');
        denom *= 10;
    }
    Ok(BigRational::new(numer * BigInt::from(sign), denom))
}

/// One feasibility question: a hypothesis, the derivative order `rho`, and
/// the interpolation margin `delta` (used by [`Hypothesis::H2Prime`] only).
/// The structural constants (band growth `5/2`, decay `1/2` per order) are
/// fixed at construction and exposed read-only.
#[derive(Debug, Clone)]
pub struct ExponentProblem {
    hypothesis: Hypothesis,
    rho: BigRational,
    delta: BigRational,
    cascade_exponent: BigRational,
    band_gain: BigRational,
}

impl ExponentProblem {
    /// Default interpolation margin for the growth system.
    pub const DEFAULT_DELTA: f64 = 0.01;

    pub fn new(hypothesis: Hypothesis, rho: f64) -> Result<Self, HypothesesError> {
        Self::with_delta(hypothesis, rho, Self::DEFAULT_DELTA)
    }

    pub fn with_delta(hypothesis: Hypothesis, rho: f64, delta: f64) -> Result<Self, HypothesesError> {
        let rho = BigRational::from_float(rho)
            .filter(|r| !r.is_negative())
            .ok_or(HypothesesError::InvalidRho(rho))?;
        let delta = BigRational::from_float(delta)
            .filter(|d| d.is_positive())
            .ok_or(HypothesesError::InvalidDelta(delta))?;
        Ok(Self::assemble(hypothesis, rho, delta))
    }

    /// Exact-rational constructor; `delta` defaults to `1/100`.
    pub fn exact(hypothesis: Hypothesis, rho: BigRational) -> Result<Self, HypothesesError> {
        Self::exact_with_delta(hypothesis, rho, rat(1, 100))
    }

    pub fn exact_with_delta(
        hypothesis: Hypothesis,
        rho: BigRational,
        delta: BigRational,
    ) -> Result<Self, HypothesesError> {
        if rho.is_negative() {
            return Err(HypothesesError::InvalidRho(approx(&rho)));
        }
        if !delta.is_positive() {
            return Err(HypothesesError::InvalidDelta(approx(&delta)));
        }
        Ok(Self::assemble(hypothesis, rho, delta))
    }

    fn assemble(hypothesis: Hypothesis, rho: BigRational, delta: BigRational) -> Self {
        Self {
            hypothesis,
            rho,
            delta,
            cascade_exponent: rat(5, 2),
            band_gain: rat(1, 2),
        }
    }

    pub fn hypothesis(&self) -> Hypothesis {
        self.hypothesis
    }

    pub fn rho(&self) -> &BigRational {
        &self.rho
    }

    pub fn delta(&self) -> &BigRational {
        &self.delta
    }

    /// Band growth per scale, in Sobolev-order units (`5/2`).
    pub fn cascade_exponent(&self) -> &BigRational {
        &self.cascade_exponent
    }

    /// Geometric decay earned per Sobolev order spent on a slot (`1/2`).
    pub fn band_gain(&self) -> &BigRational {
        &self.band_gain
    }
}

/// A named scalar constraint evaluated at a point: satisfied when
/// `margin > 0` (strict) or `margin >= 0` (non-strict).
#[derive(Debug, Clone)]
pub struct ConstraintMargin {
    pub name: &'static str,
    pub margin: BigRational,
    pub strict: bool,
}

impl ConstraintMargin {
    fn new(name: &'static str, margin: BigRational, strict: bool) -> Self {
        Self { name, margin, strict }
    }

    pub fn satisfied(&self) -> bool {
        if self.strict {
            self.margin.is_positive()
        } else {
            !self.margin.is_negative()
        }
    }
}

/// Named exponent assignment; includes the derived exponents alongside the
/// free slot orders.
#[derive(Debug, Clone)]
pub struct Witness {
    entries: Vec<(&'static str, BigRational)>,
}

impl Witness {
    pub fn entries(&self) -> &[(&'static str, BigRational)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&BigRational> {
        self.entries.iter().find(|(n, _)| *n == name).map(|(_, v)| v)
    }
}

/// Outcome of [`check`]: `pass` holds exactly when a witness satisfying
/// every constraint (with its stated strict/non-strict sense) exists; the
/// margins are evaluated at the witness on pass and at the best attainable
/// corner on fail, so the violated set explains *why* the system is empty.
#[derive(Debug, Clone)]
pub struct HypothesisVerdict {
    pub hypothesis: Hypothesis,
    pub rho: BigRational,
    pub pass: bool,
    pub witness: Option<Witness>,
    pub margins: Vec<ConstraintMargin>,
}

impl HypothesisVerdict {
    /// Constraints failing at the reported point (empty exactly on pass).
    pub fn violated(&self) -> Vec<&ConstraintMargin> {
        self.margins.iter().filter(|c| !c.satisfied()).collect()
    }

    pub fn margin(&self, name: &str) -> Option<&ConstraintMargin> {
        self.margins.iter().find(|c| c.name == name)
    }
}

/// Free slot boxes `[lo, hi]` per hypothesis, in the currency used by
/// `margins_at` (base-state orders except H3', which works in shifted-state
/// orders).
fn slot_boxes(p: &ExponentProblem) -> Vec<(BigRational, BigRational)> {
    let two_rho = int(2) * p.rho();
    let zero = BigRational::zero();
    let one = int(1);
    match p.hypothesis {
        Hypothesis::H1 => vec![
            (zero.clone(), two_rho.clone()),
            (zero.clone(), &one + &two_rho),
            (zero, one),
        ],
        Hypothesis::H2Prime => {
            let lo_ab = &two_rho - p.delta();
            let hi_ab = &one + &two_rho;
            vec![
                (lo_ab.clone(), hi_ab.clone()),
                (lo_ab, hi_ab),
                (-p.delta().clone(), one),
            ]
        }
        Hypothesis::H3Prime => vec![
            (zero.clone(), one.clone()),
            (zero.clone(), one.clone()),
            (zero, one),
        ],
        Hypothesis::H4 => {
            let hi = &one + &two_rho;
            vec![(zero.clone(), hi.clone()), (zero, hi)]
        }
        Hypothesis::NseTemam => vec![
            (zero.clone(), &one + &two_rho),
            (zero.clone(), two_rho.clone()),
            (zero, positive_part(&one - &two_rho)),
        ],
    }
}

/// Evaluates every constraint of the hypothesis at the given slot point.
/// This is the single source of truth for satisfaction: the closed-form
/// construction, the lattice fallback, and the witness re-substitution
/// invariant all go through it.
fn margins_at(p: &ExponentProblem, s: &[BigRational]) -> Vec<ConstraintMargin> {
    let two_rho = int(2) * p.rho();
    let one = int(1);
    let two = int(2);
    let m = ConstraintMargin::new;
    match p.hypothesis {
        Hypothesis::H1 => {
            let total = &s[0] + &s[1] + &s[2];
            vec![
                m("band-sum", p.band_gain() * (&total - p.cascade_exponent()), true),
                m("s1-floor", s[0].clone(), false),
                m("s1-cap", &two_rho - &s[0], false),
                m("s2-floor", s[1].clone(), false),
                m("s2-cap", &one + &two_rho - &s[1], false),
                m("s3-floor", s[2].clone(), false),
                m("s3-cap", &one - &s[2], false),
            ]
        }
        Hypothesis::H2Prime => {
            let d = p.delta();
            let total = &s[0] + &s[1] + &s[2];
            let four_rho = int(4) * p.rho();
            let one_plus_d = &one + d;
            // Total H^1 interpolation power and the complementary weak power.
            let h1_power = (int(3) * d + &total - &four_rho) / &one_plus_d;
            let weak_power = (int(3) - (&total - &four_rho)) / &one_plus_d;
            let lo_ab = &two_rho - d;
            let hi_ab = &one + &two_rho;
            vec![
                m("band-sum", p.band_gain() * (&total - p.cascade_exponent()), true),
                m("growth-upper", &two - &h1_power, true),
                m("growth-lower", h1_power.clone(), true),
                m("weak-power", weak_power, true),
                m("alpha-floor", &s[0] - &lo_ab, false),
                m("alpha-cap", &hi_ab - &s[0], false),
                m("beta-floor", &s[1] - &lo_ab, false),
                m("beta-cap", &hi_ab - &s[1], false),
                m("gamma-floor", &s[2] + d, false),
                m("gamma-cap", &one - &s[2], false),
            ]
        }
        Hypothesis::H3Prime => {
            // Slots are shifted-state orders (a, b, g); base-state orders
            // gain 2 rho on the first two slots.
            let total_base = &s[0] + &s[1] + &s[2] + &two_rho + &two_rho;
            let gamma3 = &s[0] + &s[2];
            let kappa = s[1].clone();
            let beta3 = &two - &gamma3;
            vec![
                m("band-sum", p.band_gain() * (&total_base - p.cascade_exponent()), true),
                m("gamma3-upper", &two - &gamma3, true),
                m("gamma3-lower", gamma3.clone(), true),
                m("beta3-floor", beta3.clone(), false),
                m("beta3-gamma3", &beta3 + &gamma3 - &two, false),
                m("gamma3-kappa", &two - (&gamma3 + &kappa), false),
                m("kappa-floor", kappa.clone(), false),
                m("kappa-prime-floor", &one - &kappa, false),
                m("a-floor", s[0].clone(), false),
                m("a-cap", &one - &s[0], false),
                m("g-floor", s[2].clone(), false),
                m("g-cap", &one - &s[2], false),
            ]
        }
        Hypothesis::H4 => {
            let total = &s[0] + &s[1];
            let hi = &one + &two_rho;
            // The mean slot earns nothing and costs 2 rho orders.
            let net = &total - &two_rho - p.cascade_exponent();
            vec![
                m("band-sum", p.band_gain() * net, true),
                m("s1-floor", s[0].clone(), false),
                m("s1-cap", &hi - &s[0], false),
                m("s2-floor", s[1].clone(), false),
                m("s2-cap", &hi - &s[1], false),
            ]
        }
        Hypothesis::NseTemam => {
            let theta1 = positive_part(&s[0] - &two_rho);
            let theta2 = positive_part(&s[1] + &one - &two_rho);
            let three_halves = rat(3, 2);
            let test_cap = positive_part(&one - &two_rho);
            vec![
                m("trilinear-sum", &s[0] + &s[1] + &s[2] - &three_halves, false),
                m("advective-power", &one - &theta1 - &theta2, false),
                m("test-cap", &test_cap - &s[2], false),
                m("m1-floor", s[0].clone(), false),
                m("m1-cap", &one + &two_rho - &s[0], false),
                m("m2-floor", s[1].clone(), false),
                m("m2-cap", &two_rho - &s[1], false),
                m("m3-floor", s[2].clone(), false),
                m("m1-regular", (&s[0] - &three_halves).abs(), true),
                m("m2-regular", (&s[1] - &three_halves).abs(), true),
                m("m3-regular", (&s[2] - &three_halves).abs(), true),
            ]
        }
    }
}

/// Witness naming: free slots plus derived exponents, in the base-state
/// currency users reason about.
fn witness_entries(p: &ExponentProblem, s: &[BigRational]) -> Witness {
    let two_rho = int(2) * p.rho();
    let one = int(1);
    let entries = match p.hypothesis {
        Hypothesis::H1 => vec![
            ("s1", s[0].clone()),
            ("s2", s[1].clone()),
            ("s3", s[2].clone()),
        ],
        Hypothesis::H2Prime => {
            let d = p.delta();
            let total = &s[0] + &s[1] + &s[2];
            let one_plus_d = &one + d;
            let h1_power = (int(3) * d + &total - int(4) * p.rho()) / &one_plus_d;
            let weak_power = (int(3) - (&total - int(4) * p.rho())) / &one_plus_d;
            vec![
                ("alpha", s[0].clone()),
                ("beta", s[1].clone()),
                ("gamma", s[2].clone()),
                ("h1_power", h1_power),
                ("weak_power", weak_power),
            ]
        }
        Hypothesis::H3Prime => {
            let gamma3 = &s[0] + &s[2];
            vec![
                ("alpha", &s[0] + &two_rho),
                ("beta", &s[1] + &two_rho),
                ("gamma", s[2].clone()),
                ("beta3", int(2) - &gamma3),
                ("gamma3", gamma3),
                ("kappa", s[1].clone()),
                ("kappa_prime", &one - &s[1]),
            ]
        }
        Hypothesis::H4 => vec![("s1", s[0].clone()), ("s2", s[1].clone())],
        Hypothesis::NseTemam => vec![
            ("m1", s[0].clone()),
            ("m2", s[1].clone()),
            ("m3", s[2].clone()),
        ],
    };
    Witness { entries }
}

/// Fills `total` across boxes left to right, starting from the floors.
/// Callers guarantee `sum(lo) <= total <= sum(hi)`.
fn distribute(total: &BigRational, boxes: &[(BigRational, BigRational)]) -> Vec<BigRational> {
    let mut out: Vec<BigRational> = boxes.iter().map(|(lo, _)| lo.clone()).collect();
    let floor_sum: BigRational = out.iter().sum();
    let mut surplus = total - floor_sum;
    assert!(!surplus.is_negative(), "target below box floors");
    for (slot, (lo, hi)) in out.iter_mut().zip(boxes) {
        let room = hi - lo;
        let add = if surplus < room { surplus.clone() } else { room };
        *slot += &add;
        surplus -= add;
    }
    assert!(surplus.is_zero(), "target above box capacity");
    out
}

/// Closed-form decision: every system reduces to a one-dimensional question
/// about the attainable order total, so feasibility is an exact interval
/// comparison and the returned point is a midpoint (pass) or the best
/// attainable corner (fail).
fn closed_form_slots(p: &ExponentProblem) -> (bool, Vec<BigRational>) {
    let boxes = slot_boxes(p);
    let two = int(2);
    let cap_sum: BigRational = boxes.iter().map(|(_, hi)| hi.clone()).sum();
    match p.hypothesis {
        Hypothesis::H1 => {
            let need = p.cascade_exponent().clone();
            if cap_sum > need {
                let target = (&need + &cap_sum) / &two;
                (true, distribute(&target, &boxes))
            } else {
                (false, boxes.into_iter().map(|(_, hi)| hi).collect())
            }
        }
        Hypothesis::H4 => {
            let need = p.cascade_exponent() + int(2) * p.rho();
            if cap_sum > need {
                let target = (&need + &cap_sum) / &two;
                (true, distribute(&target, &boxes))
            } else {
                (false, boxes.into_iter().map(|(_, hi)| hi).collect())
            }
        }
        Hypothesis::H2Prime => {
            let need = p.cascade_exponent().clone();
            // growth-upper caps the total at 2 + 4 rho - delta (strictly).
            let growth_cap = &two + int(4) * p.rho() - p.delta();
            let floor_sum: BigRational = boxes.iter().map(|(lo, _)| lo.clone()).sum();
            if growth_cap > need {
                let lower = if floor_sum > need { floor_sum } else { need };
                let target = (&lower + &growth_cap) / &two;
                (true, distribute(&target, &boxes))
            } else {
                // Probe the midpoint of the gap so both irreconcilable
                // constraints show a (negative) margin.
                let target = (&growth_cap + &need) / &two;
                (false, distribute(&target, &boxes))
            }
        }
        Hypothesis::H3Prime => {
            let one = int(1);
            // In shifted-state currency the band sum needs a+b+g > 5/2 - 4 rho
            // and the monotonicity cap allows at most 2.
            let need = p.cascade_exponent() - int(4) * p.rho();
            if need < two {
                let lower = positive_part(need);
                let target = (&lower + &two) / int(2);
                // Fill g, then a, then b: keeps gamma3 = a + g inside (0, 2).
                let g = target.clone().min(one.clone());
                let a = (&target - &g).min(one);
                let b = &target - &g - &a;
                (true, vec![a, b, g])
            } else {
                let target = (&two + &need) / int(2);
                // Fill b first so gamma3 stays below 2 and the cap violation
                // lands on gamma3-kappa where it belongs.
                let b = target.clone().min(one.clone());
                let g = (&target - &b).min(one);
                let a = &target - &b - &g;
                (false, vec![a, b, g])
            }
        }
        Hypothesis::NseTemam => {
            let four_rho = int(4) * p.rho();
            let m3_cap = boxes[2].1.clone();
            // The advective-power cap limits m1 + m2 to 4 rho.
            let t_max = &four_rho + &m3_cap;
            let need = rat(3, 2);
            if t_max >= need {
                let target = (&need + &t_max) / &two;
                let m3 = m3_cap.clone().min(target.clone());
                let rem = &target - &m3;
                let half_rem = &rem / &two;
                let m2 = (int(2) * p.rho()).min(half_rem);
                let m1 = &rem - &m2;
                (true, nse_dodge(p, vec![m1, m2, m3]))
            } else {
                let m1_cap = boxes[0].1.clone();
                let m1 = four_rho.clone().min(m1_cap);
                let m2 = &four_rho - &m1;
                (false, vec![m1, m2, m3_cap])
            }
        }
    }
}

/// Moves 1/64 of an order between slots when a slot lands exactly on the
/// excluded value 3/2, re-verifying all constraints exactly.
fn nse_dodge(p: &ExponentProblem, slots: Vec<BigRational>) -> Vec<BigRational> {
    let forbidden = rat(3, 2);
    let hits = |s: &[BigRational]| s.iter().any(|v| *v == forbidden);
    if !hits(&slots) {
        return slots;
    }
    let eps = rat(1, 64);
    for (from, to) in [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)] {
        let mut cand = slots.clone();
        cand[from] -= &eps;
        cand[to] += &eps;
        if !hits(&cand) && margins_at(p, &cand).iter().all(ConstraintMargin::satisfied) {
            return cand;
        }
    }
    slots
}

/// Exact lattice search over the slot boxes with denominator `denom`;
/// returns the first point satisfying every constraint. Used as the
/// defensive fallback in [`check`] and as a soundness cross-check in tests.
pub fn lattice_search(p: &ExponentProblem, denom: i64) -> Option<Vec<BigRational>> {
    assert!(denom >= 1);
    let boxes = slot_boxes(p);
    let values: Vec<Vec<BigRational>> = boxes
        .iter()
        .map(|(lo, hi)| {
            let step = rat(1, denom);
            let mut vals = vec![lo.clone()];
            let mut k = (lo / &step).ceil();
            loop {
                let v = &k * &step;
                if v > *hi {
                    break;
                }
                if v > *lo {
                    vals.push(v.clone());
                }
                k += int(1);
            }
            if vals.last() != Some(hi) {
                vals.push(hi.clone());
            }
            vals
        })
        .collect();
    let mut index = vec![0usize; values.len()];
    loop {
        let point: Vec<BigRational> = index
            .iter()
            .zip(&values)
            .map(|(&i, vals)| vals[i].clone())
            .collect();
        if margins_at(p, &point).iter().all(ConstraintMargin::satisfied) {
            return Some(point);
        }
        let mut dim = 0;
        loop {
            if dim == index.len() {
                return None;
            }
            index[dim] += 1;
            if index[dim] < values[dim].len() {
                break;
            }
            index[dim] = 0;
            dim += 1;
        }
    }
}

/// Lattice denominator for the defensive fallback inside [`check`].
const FALLBACK_DENOM: i64 = 8;
/// The fallback only engages when the certified deficit is this close to
/// zero; a larger deficit bounds every candidate point away from passing.
fn fallback_window() -> BigRational {
    rat(-1, 32)
}

/// Decides feasibility of the problem's inequality system.
///
/// The closed-form interval reduction is exact; when it reports an empty
/// system with a near-zero deficit, a coarse lattice search double-checks
/// that no witness exists before the failure is returned.
pub fn check(problem: &ExponentProblem) -> HypothesisVerdict {
    let (feasible, slots) = closed_form_slots(problem);
    let margins = margins_at(problem, &slots);
    if feasible {
        debug_assert!(
            margins.iter().all(ConstraintMargin::satisfied),
            "constructed witness must satisfy every constraint: {margins:?}"
        );
        return HypothesisVerdict {
            hypothesis: problem.hypothesis,
            rho: problem.rho.clone(),
            pass: true,
            witness: Some(witness_entries(problem, &slots)),
            margins,
        };
    }
    let worst = margins
        .iter()
        .filter(|c| !c.satisfied())
        .map(|c| c.margin.clone())
        .min();
    if worst.is_some_and(|w| w > fallback_window()) {
        if let Some(point) = lattice_search(problem, FALLBACK_DENOM) {
            let margins = margins_at(problem, &point);
            return HypothesisVerdict {
                hypothesis: problem.hypothesis,
                rho: problem.rho.clone(),
                pass: true,
                witness: Some(witness_entries(problem, &point)),
                margins,
            };
        }
    }
    HypothesisVerdict {
        hypothesis: problem.hypothesis,
        rho: problem.rho.clone(),
        pass: false,
        witness: None,
        margins,
    }
}

/// Parses the hypothesis name and checks at derivative order `rho`.
pub fn check_named(name: &str, rho: f64) -> Result<HypothesisVerdict, HypothesesError> {
    let hypothesis = name.parse()?;
    Ok(check(&ExponentProblem::new(hypothesis, rho)?))
}

/// Trilinear-system check at derivative order `rho`.
pub fn check_nse(rho: f64) -> Result<HypothesisVerdict, HypothesesError> {
    Ok(check(&ExponentProblem::new(Hypothesis::NseTemam, rho)?))
}

/// Minimal passing `rho` in `[0, 1]` to within `tol`, using the default
/// `delta` for the growth system.
pub fn threshold(hypothesis: Hypothesis, tol: f64) -> Result<f64, HypothesesError> {
    threshold_with_delta(hypothesis, ExponentProblem::DEFAULT_DELTA, tol)
}

pub fn threshold_with_delta(
    hypothesis: Hypothesis,
    delta: f64,
    tol: f64,
) -> Result<f64, HypothesesError> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(HypothesesError::InvalidTolerance(tol));
    }
    // Surface a bad delta once, up front.
    ExponentProblem::with_delta(hypothesis, 0.0, delta)?;
    bisect_monotone(
        |rho| {
            let problem = ExponentProblem::with_delta(hypothesis, rho, delta)
                .expect("bracket rho is finite and nonnegative");
            check(&problem).pass
        },
        0.0,
        1.0,
        tol,
    )
}

/// Bisection for the smallest passing point of a pass/fail predicate,
/// asserting monotonicity on a 17-point presample of the bracket first.
fn bisect_monotone(
    mut pass: impl FnMut(f64) -> bool,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64, HypothesesError> {
    const PRESAMPLE: usize = 16;
    let mut first_pass: Option<f64> = None;
    let mut last_fail: Option<f64> = None;
    for i in 0..=PRESAMPLE {
        let r = lo + (hi - lo) * (i as f64) / (PRESAMPLE as f64);
        if pass(r) {
            if first_pass.is_none() {
                first_pass = Some(r);
            }
        } else {
            if let Some(rp) = first_pass {
                return Err(HypothesesError::NonMonotone { rho_pass: rp, rho_fail: r });
            }
            last_fail = Some(r);
        }
    }
    let Some(pass_end) = first_pass else {
        return Err(HypothesesError::BracketExhausted { lo, hi });
    };
    let Some(fail_end) = last_fail else {
        return Ok(lo);
    };
    let (mut flo, mut fhi) = (fail_end, pass_end);
    while fhi - flo > tol {
        let mid = 0.5 * (flo + fhi);
        if mid <= flo || mid >= fhi {
            break;
        }
        if pass(mid) {
            fhi = mid;
        } else {
            flo = mid;
        }
    }
    Ok(fhi)
}

/// Analytic pass boundary: `1/8` (H1, H3'), `1/8 + delta/4` (H2'), `1/4`
/// (H4, trilinear). Strictness is [`Hypothesis::boundary_is_strict`].
pub fn closed_form_threshold(hypothesis: Hypothesis, delta: &BigRational) -> BigRational {
    match hypothesis {
        Hypothesis::H1 | Hypothesis::H3Prime => rat(1, 8),
        Hypothesis::H2Prime => rat(1, 8) + delta / int(4),
        Hypothesis::H4 | Hypothesis::NseTemam => rat(1, 4),
    }
}

/// Serializable view of a margin (exact value as a `p/q` string).
#[derive(Debug, Clone, Serialize)]
pub struct MarginReport {
    pub name: String,
    pub margin: f64,
    pub exact: String,
    pub strict: bool,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct WitnessEntryReport {
    pub name: String,
    pub value: f64,
    pub exact: String,
}

/// Serializable view of a verdict, used by the `hypotheses` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct VerdictReport {
    pub hypothesis: String,
    pub rho: f64,
    pub rho_exact: String,
    pub pass: bool,
    pub witness: Option<Vec<WitnessEntryReport>>,
    pub margins: Vec<MarginReport>,
    pub violated: Vec<String>,
}

impl From<&HypothesisVerdict> for VerdictReport {
    fn from(v: &HypothesisVerdict) -> Self {
        Self {
            hypothesis: v.hypothesis.to_string(),
            rho: approx(&v.rho),
            rho_exact: v.rho.to_string(),
            pass: v.pass,
            witness: v.witness.as_ref().map(|w| {
                w.entries()
                    .iter()
                    .map(|(name, value)| WitnessEntryReport {
                        name: (*name).to_string(),
                        value: approx(value),
                        exact: value.to_string(),
                    })
                    .collect()
            }),
            margins: v
                .margins
                .iter()
                .map(|c| MarginReport {
                    name: c.name.to_string(),
                    margin: approx(&c.margin),
                    exact: c.margin.to_string(),
                    strict: c.strict,
                    satisfied: c.satisfied(),
                })
                .collect(),
            violated: v.violated().iter().map(|c| c.name.to_string()).collect(),
        }
    }
}
