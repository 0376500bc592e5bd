//! Limit-law computation: the gamma constants, regime exponents, the
//! self-consistent equation for the limiting Stieltjes transform, its
//! stability bound, and density recovery by Stieltjes inversion.

use nalgebra::{Complex, DMatrix};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::HermiteSeries;

pub type C64 = Complex<f64>;

/// Exact rational scaling exponent. Integrality decides the limit law
/// discontinuously, so this is never a float.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RationalExponent(Ratio<i64>);

impl RationalExponent {
    pub fn new(numer: i64, denom: i64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::Domain("exponent denominator is zero".into()));
        }
        let r = Ratio::new(numer, denom);
        if r <= Ratio::new(0, 1) {
            return Err(Error::Domain(format!("exponent {r} must be positive")));
        }
        Ok(RationalExponent(r))
    }

    /// Parse "p/q" or "p". Decimal notation is rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let parse_int = |s: &str| -> Result<i64> {
            s.trim().parse::<i64>().map_err(|_| {
                Error::Config(format!(
                    "ell: expected integer or p/q rational, got {text:?}"
                ))
            })
        };
        match text.split_once('/') {
            Some((p, q)) => Self::new(parse_int(p)?, parse_int(q)?),
            None => Self::new(parse_int(text)?, 1),
        }
    }

    pub fn ratio(&self) -> Ratio<i64> {
        self.0
    }

    pub fn numer(&self) -> i64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i64 {
        *self.0.denom()
    }

    pub fn value(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    /// Smallest integer >= ell.
    pub fn ceil(&self) -> i64 {
        self.0.ceil().to_integer()
    }

    /// Smallest integer strictly greater than ell.
    pub fn ell_c(&self) -> i64 {
        if self.is_integer() {
            self.0.to_integer() + 1
        } else {
            self.ceil()
        }
    }

    /// d^ell, exact powi for integer exponents.
    pub fn pow(&self, d: usize) -> f64 {
        if self.is_integer() {
            (d as f64).powi(self.0.to_integer() as i32)
        } else {
            (d as f64).powf(self.value())
        }
    }
}

impl std::fmt::Display for RationalExponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0.to_integer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl Serialize for RationalExponent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RationalExponent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        RationalExponent::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// The f-dependent constants of the limit law: Marchenko-Pastur weight,
/// its shape parameter, and the semicircle variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gammas {
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub gamma_c: f64,
}

impl Gammas {
    pub fn new(gamma_a: f64, gamma_b: f64, gamma_c: f64) -> Self {
        Gammas {
            gamma_a,
            gamma_b,
            gamma_c,
        }
    }

    pub fn zero() -> Self {
        Gammas::new(0.0, 0.0, 0.0)
    }
}

/// Convergence-rate exponents as exact rationals, plus the least integer
/// strictly exceeding ell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exponents {
    pub p_ell: Ratio<i64>,
    pub q_ell: Ratio<i64>,
    pub r_ell: Ratio<i64>,
    pub ell_c: i64,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|j| j as f64).product()
}

/// gamma_a = c_ell^2 and gamma_b = c_ell sqrt(ell! kappa) when ell is an
/// integer (zero otherwise); gamma_c = sum_{k >= ell_c} c_k^2, with empty
/// sums equal to zero.
pub fn gammas(series: &HermiteSeries, ell: &RationalExponent, kappa: f64) -> Result<Gammas> {
    if !(kappa > 0.0) {
        return Err(Error::Precondition(format!("kappa {kappa} must be positive")));
    }
    let (gamma_a, gamma_b) = if ell.is_integer() {
        let n = ell.ratio().to_integer();
        let c = if n >= 0 && (n as usize) <= series.degree() {
            series.coeff(n as usize)
        } else {
            0.0
        };
        if c == 0.0 {
            (0.0, 0.0)
        } else {
            (c * c, c * (factorial(n as usize) * kappa).sqrt())
        }
    } else {
        (0.0, 0.0)
    };
    let lc = ell.ell_c().max(0) as usize;
    let gamma_c: f64 = (lc..=series.degree())
        .map(|k| series.coeff(k).powi(2))
        .sum();
    Ok(Gammas::new(gamma_a, gamma_b, gamma_c))
}

/// Regime exponents in exact rational arithmetic.
pub fn exponents(ell: &RationalExponent) -> Exponents {
    let l = ell.ratio();
    let one = Ratio::new(1, 1);
    let two = Ratio::new(2, 1);
    let ell_c = ell.ell_c();
    let p_ell = if ell.is_integer() {
        Ratio::new(1, 2)
    } else {
        let frac = l.fract();
        frac.min(one - frac) / two
    };
    let q_ell = l.min(one).min(Ratio::from_integer(ell_c) - l) / two;
    let r_ell = (one + l - Ratio::from_integer(ell.ceil())) / two;
    Exponents {
        p_ell,
        q_ell,
        r_ell,
        ell_c,
    }
}

/// All roots of the self-consistent equation after clearing denominators:
/// gb*gc m^3 + (z gb + ga + gc) m^2 + (z + gb) m + 1 = 0,
/// degenerating to a quadratic or linear equation when the leading
/// coefficients vanish exactly. Exposed for root-uniqueness diagnostics;
/// use [`solve_m`] for the upper-half-plane solution.
pub fn self_consistent_roots(z: C64, g: &Gammas) -> Vec<C64> {
    let (ga, gb, gc) = (g.gamma_a, g.gamma_b, g.gamma_c);
    let a3 = gb * gc;
    let a2 = z * gb + ga + gc;
    let a1 = z + gb;
    if a3 == 0.0 {
        if a2.norm() == 0.0 {
            return vec![-1.0 / z];
        }
        return quadratic_roots(a2, a1, C64::new(1.0, 0.0));
    }
    let b2 = a2 / a3;
    let b1 = a1 / a3;
    let b0 = C64::new(1.0, 0.0) / a3;
    cubic_roots_companion(b2, b1, b0)
}

/// Stable complex quadratic formula for a m^2 + b m + c = 0.
fn quadratic_roots(a: C64, b: C64, c: C64) -> Vec<C64> {
    let disc = (b * b - 4.0 * a * c).sqrt();
    // Pick the sign that avoids cancellation in b + disc.
    let s = if (b.conj() * disc).re >= 0.0 { disc } else { -disc };
    let q = -0.5 * (b + s);
    if q.norm() == 0.0 {
        // b = 0 and c = 0
        return vec![C64::new(0.0, 0.0), -b / a];
    }
    vec![q / a, c / q]
}

/// All roots of the monic cubic m^3 + b2 m^2 + b1 m + b0 via eigenvalues of
/// the companion matrix (realified so the real Schur solver applies), with a
/// Newton polish and one deflation step to guarantee completeness.
fn cubic_roots_companion(b2: C64, b1: C64, b0: C64) -> Vec<C64> {
    let p = |m: C64| ((m + b2) * m + b1) * m + b0;
    let dp = |m: C64| (3.0 * m + 2.0 * b2) * m + b1;
    let polish = |mut m: C64| {
        for _ in 0..6 {
            let d = dp(m);
            if d.norm() == 0.0 {
                break;
            }
            let step = p(m) / d;
            m -= step;
            if step.norm() <= 1e-16 * m.norm().max(1.0) {
                break;
            }
        }
        m
    };

    // Companion matrix of the monic cubic, embedded as a 6x6 real matrix
    // [[Re, -Im], [Im, Re]]; its eigenvalues are the roots plus conjugates.
    let comp = [
        [C64::new(0.0, 0.0), C64::new(0.0, 0.0), -b0],
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0), -b1],
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0), -b2],
    ];
    let mut real = DMatrix::<f64>::zeros(6, 6);
    for i in 0..3 {
        for j in 0..3 {
            real[(i, j)] = comp[i][j].re;
            real[(i, j + 3)] = -comp[i][j].im;
            real[(i + 3, j)] = comp[i][j].im;
            real[(i + 3, j + 3)] = comp[i][j].re;
        }
    }
    let eigs = real.complex_eigenvalues();
    let mut best = polish(C64::new(eigs[0].re, eigs[0].im));
    for e in eigs.iter().skip(1) {
        let cand = polish(C64::new(e.re, e.im));
        if p(cand).norm() < p(best).norm() {
            best = cand;
        }
    }
    // Deflate by the best root; the remaining quadratic supplies the others.
    let q1 = b2 + best;
    let q0 = b1 + best * q1;
    let rest = quadratic_roots(C64::new(1.0, 0.0), q1, q0);
    let mut roots = vec![best];
    roots.extend(rest.into_iter().map(polish));
    roots
}

/// Track the upper-half-plane solution by continuation from z + 10i, where
/// the solution is close to -1/z.
fn homotopy_root(z: C64, g: &Gammas) -> C64 {
    let steps = 60;
    let z0 = z + C64::new(0.0, 10.0);
    let mut m = -1.0 / z0;
    for t in 0..=steps {
        let zt = z + C64::new(0.0, 10.0 * (1.0 - t as f64 / steps as f64));
        let roots = self_consistent_roots(zt, g);
        m = roots
            .into_iter()
            .min_by(|a, b| (a - m).norm().partial_cmp(&(b - m).norm()).unwrap())
            .unwrap();
    }
    m
}

/// The unique upper-half-plane solution m(z) of the self-consistent equation
/// m(z + gamma_a m/(1 + gamma_b m) + gamma_c m) + 1 = 0.
pub fn solve_m(z: C64, g: &Gammas) -> Result<C64> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("z = {z} is not in the upper half-plane")));
    }
    let roots = self_consistent_roots(z, g);
    let upper: Vec<C64> = roots.iter().copied().filter(|r| r.im > 1e-13).collect();
    let m = match upper.len() {
        1 => upper[0],
        0 => {
            let best = roots
                .iter()
                .copied()
                .max_by(|a, b| a.im.partial_cmp(&b.im).unwrap())
                .unwrap();
            if best.im <= -1e-13 {
                return Err(Error::Computation(format!(
                    "no upper-half-plane root at z = {z} with gammas {g:?}"
                )));
            }
            best
        }
        _ => {
            let target = homotopy_root(z, g);
            upper
                .into_iter()
                .min_by(|a, b| {
                    (a - target)
                        .norm()
                        .partial_cmp(&(b - target).norm())
                        .unwrap()
                })
                .unwrap()
        }
    };
    Ok(m)
}

/// Residual of the flipped self-consistent equation,
/// omega = 1/m + z + gamma_a m/(1 + gamma_b m) + gamma_c m.
pub fn residual(m: C64, z: C64, g: &Gammas) -> Result<C64> {
    if m.norm() == 0.0 {
        return Err(Error::Domain("residual undefined at m = 0".into()));
    }
    let denom = C64::new(1.0, 0.0) + g.gamma_b * m;
    if denom.norm() == 0.0 {
        return Err(Error::Domain("residual undefined at 1 + gamma_b m = 0".into()));
    }
    Ok(1.0 / m + z + g.gamma_a * m / denom + g.gamma_c * m)
}

/// Result of the stability bound: either the bound 4|omega|/eta^2, or a flag
/// that the hypothesis |omega| <= eta/2 fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StabilityBound {
    Applicable(f64),
    NotApplicable { omega_abs: f64, threshold: f64 },
}

impl StabilityBound {
    pub fn bound(&self) -> Option<f64> {
        match self {
            StabilityBound::Applicable(b) => Some(*b),
            StabilityBound::NotApplicable { .. } => None,
        }
    }
}

/// 4|omega|/eta^2 whenever |omega| <= eta/2; flagged non-applicable otherwise.
pub fn stability_bound(omega_abs: f64, eta: f64) -> Result<StabilityBound> {
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("eta {eta} must be positive")));
    }
    if omega_abs > eta / 2.0 {
        return Ok(StabilityBound::NotApplicable {
            omega_abs,
            threshold: eta / 2.0,
        });
    }
    Ok(StabilityBound::Applicable(4.0 * omega_abs / (eta * eta)))
}

/// Density recovery by Stieltjes inversion at fixed small eta:
/// rho(E) = Im m(E + i eta)/pi.
pub fn density(g: &Gammas, e_grid: &[f64], eta_small: f64) -> Result<Vec<(f64, f64)>> {
    if !(1e-8..=1e-3).contains(&eta_small) {
        return Err(Error::Precondition(format!(
            "eta {eta_small} outside [1e-8, 1e-3]"
        )));
    }
    e_grid
        .iter()
        .map(|&e| {
            let m = solve_m(C64::new(e, eta_small), g)?;
            Ok((e, m.im / std::f64::consts::PI))
        })
        .collect()
}

/// Closed-form Stieltjes transform of the semicircle law with variance
/// gamma_c; the degenerate case of the limit law when gamma_a = gamma_b = 0.
pub fn semicircle_m(z: C64, gamma_c: f64) -> Result<C64> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("z = {z} is not in the upper half-plane")));
    }
    if gamma_c == 0.0 {
        return Err(Error::Domain(
            "semicircle law degenerates at gamma_c = 0; use -1/z".into(),
        ));
    }
    let s = (z * z - 4.0 * gamma_c).sqrt();
    let m1 = (-z + s) / (2.0 * gamma_c);
    let m2 = (-z - s) / (2.0 * gamma_c);
    Ok(if m1.im > 0.0 { m1 } else { m2 })
}

/// Interval [lo, hi] containing the support of the limit density, padded by
/// 3 sqrt(gamma_c + 1). Used as the default histogram range.
pub fn support_interval(g: &Gammas) -> Result<(f64, f64)> {
    let scan = 2.0 + 2.0 * g.gamma_c.sqrt() + 2.0 * g.gamma_a.sqrt() * (1.0 + g.gamma_b.abs());
    let n = 800;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..=n {
        let e = -scan + 2.0 * scan * i as f64 / n as f64;
        let m = solve_m(C64::new(e, 1e-4), g)?;
        if m.im / std::f64::consts::PI > 1e-4 {
            lo = lo.min(e);
            hi = hi.max(e);
        }
    }
    if !lo.is_finite() {
        lo = -1.0;
        hi = 1.0;
    }
    let pad = 3.0 * (g.gamma_c + 1.0).sqrt();
    Ok((lo - pad, hi + pad))
}

/// The rectangle D_tau = {E + i eta : tau <= eta <= 1/tau, |E| <= 1/tau}.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    tau: f64,
    points: Vec<C64>,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

impl ComplexGrid {
    pub fn new(tau: f64, points: Vec<C64>) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Domain(format!("tau {tau} must be positive")));
        }
        let slack = 1e-12;
        for z in &points {
            if z.im < tau - slack || z.im > 1.0 / tau + slack || z.re.abs() > 1.0 / tau + slack {
                return Err(Error::Domain(format!("point {z} outside D_{tau}")));
            }
        }
        Ok(ComplexGrid { tau, points })
    }

    /// Uniform n_e x n_eta grid covering D_tau.
    pub fn rectangular(tau: f64, n_e: usize, n_eta: usize) -> Result<Self> {
        if n_e == 0 || n_eta == 0 {
            return Err(Error::Domain("grid sizes must be positive".into()));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Domain(format!("tau {tau} must be in (0, 1]")));
        }
        let mut points = Vec::with_capacity(n_e * n_eta);
        for e in linspace(-1.0 / tau, 1.0 / tau, n_e) {
            for eta in linspace(tau, 1.0 / tau, n_eta) {
                points.push(C64::new(e, eta));
            }
        }
        ComplexGrid::new(tau, points)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }
}
