//! Hermite basis machinery: evaluation of normalized and monic Hermite
//! polynomials, exact basis change for polynomials, coefficient extraction by
//! quadrature for general nonlinearities, and truncation with a tail
//! adjustment that preserves the second moment.

mod quadrature;

pub use quadrature::GaussHermiteRule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Degree guard for the polynomial recurrences.
pub const MAX_DEGREE: usize = 64;

/// Finite expansion f(x) = sum_k c_k h_k(x) in the normalized Hermite basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteSeries {
    coeffs: Vec<f64>,
}

impl HermiteSeries {
    /// Coefficients c_0..c_L. An empty vector is treated as the zero series.
    pub fn new(coeffs: Vec<f64>) -> Self {
        if coeffs.is_empty() {
            HermiteSeries { coeffs: vec![0.0] }
        } else {
            HermiteSeries { coeffs }
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// c_k, zero beyond the stored degree.
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    /// Sum of squared coefficients; equals E[f(Z)^2] by Parseval.
    pub fn sigma_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let h = h_eval_all(self.degree(), x);
        self.coeffs.iter().zip(&h).map(|(c, v)| c * v).sum()
    }
}

/// sigma^2 = sum_k c_k^2 over the stored coefficients.
pub fn sigma_sq(series: &HermiteSeries) -> f64 {
    series.sigma_sq()
}

/// Closed catalog of named nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedFn {
    Relu,
    Sign,
    Abs,
    Tanh,
}

impl NamedFn {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            NamedFn::Relu => x.max(0.0),
            NamedFn::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            NamedFn::Abs => x.abs(),
            NamedFn::Tanh => x.tanh(),
        }
    }

    fn breakpoints(self) -> Vec<f64> {
        match self {
            NamedFn::Tanh => vec![],
            _ => vec![0.0],
        }
    }
}

/// Sampled values of one bounded piece, linearly interpolated in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceTable {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

/// Serializable description of a nonlinearity. Arbitrary user functions enter
/// through the piecewise-table variant: breakpoints a_1 < ... < a_K split the
/// line, interior pieces are sample tables, and the two unbounded tails are
/// monomial polynomials with a declared growth constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NonlinearitySpec {
    HermiteSeries { coeffs: Vec<f64> },
    MonomialPolynomial { coeffs: Vec<f64> },
    Named { name: NamedFn },
    PiecewiseTable {
        breakpoints: Vec<f64>,
        pieces: Vec<PieceTable>,
        left_tail: Vec<f64>,
        right_tail: Vec<f64>,
        growth: f64,
    },
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

impl NonlinearitySpec {
    pub fn hermite(coeffs: Vec<f64>) -> Self {
        NonlinearitySpec::HermiteSeries { coeffs }
    }

    pub fn named(name: NamedFn) -> Self {
        NonlinearitySpec::Named { name }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            NonlinearitySpec::HermiteSeries { coeffs } => {
                HermiteSeries::new(coeffs.clone()).eval(x)
            }
            NonlinearitySpec::MonomialPolynomial { coeffs } => horner(coeffs, x),
            NonlinearitySpec::Named { name } => name.eval(x),
            NonlinearitySpec::PiecewiseTable {
                breakpoints,
                pieces,
                left_tail,
                right_tail,
                ..
            } => {
                let k = breakpoints.len();
                if x < breakpoints[0] {
                    return horner(left_tail, x);
                }
                if x >= breakpoints[k - 1] {
                    return horner(right_tail, x);
                }
                let j = breakpoints.partition_point(|&b| b <= x) - 1;
                let piece = &pieces[j];
                let xs = &piece.xs;
                let ys = &piece.ys;
                if x <= xs[0] {
                    return ys[0];
                }
                if x >= xs[xs.len() - 1] {
                    return ys[ys.len() - 1];
                }
                let i = xs.partition_point(|&t| t <= x) - 1;
                let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
                ys[i] + t * (ys[i + 1] - ys[i])
            }
        }
    }

    /// Split points for piecewise quadrature: declared breakpoints plus the
    /// interior sample kinks of table pieces. Empty for smooth variants.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            NonlinearitySpec::HermiteSeries { .. }
            | NonlinearitySpec::MonomialPolynomial { .. } => vec![],
            NonlinearitySpec::Named { name } => name.breakpoints(),
            NonlinearitySpec::PiecewiseTable {
                breakpoints,
                pieces,
                ..
            } => {
                let mut cuts = breakpoints.clone();
                for piece in pieces {
                    cuts.extend_from_slice(&piece.xs);
                }
                cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                cuts.dedup();
                cuts
            }
        }
    }

    /// Exact Hermite coefficients for the polynomial variants.
    pub fn exact_series(&self) -> Result<Option<HermiteSeries>> {
        match self {
            NonlinearitySpec::HermiteSeries { coeffs } => {
                Ok(Some(HermiteSeries::new(coeffs.clone())))
            }
            NonlinearitySpec::MonomialPolynomial { coeffs } => {
                Ok(Some(poly_to_hermite(coeffs)?))
            }
            _ => Ok(None),
        }
    }

    /// Structural checks plus the sampled growth bound |f(x)| <= C|x|^C.
    pub fn validate(&self) -> Result<()> {
        match self {
            NonlinearitySpec::HermiteSeries { coeffs }
            | NonlinearitySpec::MonomialPolynomial { coeffs } => {
                if coeffs.len() > MAX_DEGREE + 1 {
                    return Err(Error::Domain(format!(
                        "degree {} exceeds {MAX_DEGREE}",
                        coeffs.len() - 1
                    )));
                }
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Domain("non-finite coefficient".into()));
                }
                Ok(())
            }
            NonlinearitySpec::Named { .. } => Ok(()),
            NonlinearitySpec::PiecewiseTable {
                breakpoints,
                pieces,
                left_tail,
                right_tail,
                growth,
            } => {
                if breakpoints.is_empty() {
                    return Err(Error::Domain("piecewise table needs breakpoints".into()));
                }
                if !breakpoints.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::Domain(
                        "breakpoints must be strictly increasing".into(),
                    ));
                }
                if pieces.len() + 1 != breakpoints.len() {
                    return Err(Error::Domain(format!(
                        "expected {} interior pieces, got {}",
                        breakpoints.len() - 1,
                        pieces.len()
                    )));
                }
                for (j, piece) in pieces.iter().enumerate() {
                    if piece.xs.len() != piece.ys.len() || piece.xs.is_empty() {
                        return Err(Error::Domain(format!("piece {j}: malformed table")));
                    }
                    if !piece.xs.windows(2).all(|w| w[0] < w[1]) {
                        return Err(Error::Domain(format!(
                            "piece {j}: sample points must be strictly increasing"
                        )));
                    }
                    if piece.xs[0] < breakpoints[j]
                        || piece.xs[piece.xs.len() - 1] > breakpoints[j + 1]
                    {
                        return Err(Error::Domain(format!(
                            "piece {j}: samples outside its interval"
                        )));
                    }
                }
                if left_tail.is_empty() || right_tail.is_empty() {
                    return Err(Error::Domain("tail polynomials must be non-empty".into()));
                }
                if !growth.is_finite() || *growth <= 0.0 {
                    return Err(Error::Domain("growth constant must be positive".into()));
                }
                // Sampled tail bound on a grid out to the quadrature cutoff.
                let c = *growth;
                for step in 0..64 {
                    let r = 1.0 + step as f64 * 15.0 / 63.0;
                    for x in [-r, r] {
                        let fx = self.eval(x).abs();
                        if fx > c * x.abs().powf(c) + 1e-12 {
                            return Err(Error::Domain(format!(
                                "growth bound violated at x={x}: |f|={fx}"
                            )));
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

/// Values h_0(x)..h_k(x) of the normalized Hermite polynomials, by the stable
/// normalized three-term recurrence.
pub(crate) fn h_eval_all(k: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(1.0);
    if k == 0 {
        return out;
    }
    out.push(x);
    for j in 1..k {
        let jf = j as f64;
        let next = (x * out[j] - jf.sqrt() * out[j - 1]) / (jf + 1.0).sqrt();
        out.push(next);
    }
    out
}

/// h_k(x), normalized so that E[h_i(Z) h_j(Z)] = delta_ij.
pub fn h_eval(k: usize, x: f64) -> Result<f64> {
    if k > MAX_DEGREE {
        return Err(Error::Domain(format!("Hermite degree {k} exceeds {MAX_DEGREE}")));
    }
    Ok(*h_eval_all(k, x).last().unwrap())
}

/// Monic H_k(x), satisfying H_k = sqrt(k!) h_k and H_{k+1} = x H_k - k H_{k-1}.
pub fn monic_h_eval(k: usize, x: f64) -> Result<f64> {
    if k > MAX_DEGREE {
        return Err(Error::Domain(format!("Hermite degree {k} exceeds {MAX_DEGREE}")));
    }
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return Ok(prev);
    }
    for j in 1..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Exact basis change from monomial coefficients a_0..a_L to the normalized
/// Hermite basis, via the multiplication recurrence
/// x h_k = sqrt(k+1) h_{k+1} + sqrt(k) h_{k-1}.
pub fn poly_to_hermite(monomial_coeffs: &[f64]) -> Result<HermiteSeries> {
    if monomial_coeffs.len() > MAX_DEGREE + 1 {
        return Err(Error::Domain(format!(
            "polynomial degree {} exceeds {MAX_DEGREE}",
            monomial_coeffs.len() - 1
        )));
    }
    if monomial_coeffs.is_empty() {
        return Ok(HermiteSeries::new(vec![0.0]));
    }
    let deg = monomial_coeffs.len() - 1;
    let mut out = vec![0.0; deg + 1];
    // rep holds the Hermite coordinates of x^m.
    let mut rep = vec![0.0; deg + 2];
    rep[0] = 1.0;
    let mut rep_len = 1usize;
    for (m, &a) in monomial_coeffs.iter().enumerate() {
        if m > 0 {
            let mut next = vec![0.0; rep_len + 1];
            for (k, &r) in rep.iter().take(rep_len).enumerate() {
                if r == 0.0 {
                    continue;
                }
                next[k + 1] += r * ((k + 1) as f64).sqrt();
                if k > 0 {
                    next[k - 1] += r * (k as f64).sqrt();
                }
            }
            rep_len += 1;
            rep[..rep_len].copy_from_slice(&next[..rep_len]);
        }
        if a != 0.0 {
            for (k, &r) in rep.iter().take(rep_len).enumerate() {
                out[k] += a * r;
            }
        }
    }
    Ok(HermiteSeries::new(out))
}

/// Hermite coefficients c_0..c_{k_max} of a nonlinearity, computed as
/// E[f(Z) h_k(Z)] by quadrature. Discontinuous or kinked specs are integrated
/// piecewise between their breakpoints.
pub fn coeffs_by_quadrature(
    spec: &NonlinearitySpec,
    k_max: usize,
    rule: &GaussHermiteRule,
) -> Result<HermiteSeries> {
    if k_max > MAX_DEGREE {
        return Err(Error::Domain(format!("k_max {k_max} exceeds {MAX_DEGREE}")));
    }
    if rule.order() < 2 * k_max + 8 {
        return Err(Error::Precondition(format!(
            "quadrature order {} too low for k_max {k_max}; need >= {}",
            rule.order(),
            2 * k_max + 8
        )));
    }
    spec.validate()?;
    let (nodes, weights) = quadrature::effective_nodes(rule, &spec.breakpoints());
    let mut coeffs = vec![0.0; k_max + 1];
    for (&x, &w) in nodes.iter().zip(&weights) {
        let wf = w * spec.eval(x);
        if wf == 0.0 {
            continue;
        }
        for (k, h) in h_eval_all(k_max, x).iter().enumerate() {
            coeffs[k] += wf * h;
        }
    }
    Ok(HermiteSeries::new(coeffs))
}

/// E[f(Z)^2] by quadrature, with the same piecewise splitting as coefficient
/// extraction.
pub fn second_moment(spec: &NonlinearitySpec, rule: &GaussHermiteRule) -> Result<f64> {
    spec.validate()?;
    let (nodes, weights) = quadrature::effective_nodes(rule, &spec.breakpoints());
    Ok(nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| {
            let f = spec.eval(x);
            w * f * f
        })
        .sum())
}

/// Degree-L truncation with the tail adjustment: coefficients
/// (c_0, ..., c_{L-1}, adj) where adj^2 = sigma^2 - sum_{k<L} c_k^2, so that
/// the truncation preserves E[f^2] and hence the semicircle weight gamma_c.
pub fn approximate(
    spec: &NonlinearitySpec,
    l: usize,
    rule: &GaussHermiteRule,
) -> Result<HermiteSeries> {
    if l < 1 {
        return Err(Error::Precondition("approximation degree L must be >= 1".into()));
    }
    if l > MAX_DEGREE {
        return Err(Error::Domain(format!("L {l} exceeds {MAX_DEGREE}")));
    }
    spec.validate()?;
    let (mut head, sigma2) = if let Some(series) = spec.exact_series()? {
        let mut head: Vec<f64> = (0..l).map(|k| series.coeff(k)).collect();
        // Keep already-truncated series bit-exact.
        if series.degree() < l {
            head.truncate(series.degree() + 1);
            head.resize(l, 0.0);
        }
        (head, series.sigma_sq())
    } else {
        let (nodes, weights) = quadrature::effective_nodes(rule, &spec.breakpoints());
        let mut head = vec![0.0; l];
        let mut sigma2 = 0.0;
        for (&x, &w) in nodes.iter().zip(&weights) {
            let fx = spec.eval(x);
            sigma2 += w * fx * fx;
            let wf = w * fx;
            for (k, h) in h_eval_all(l - 1, x).iter().enumerate() {
                head[k] += wf * h;
            }
        }
        (head, sigma2)
    };
    let head_sum: f64 = head.iter().map(|c| c * c).sum();
    let deficit = sigma2 - head_sum;
    if deficit < -1e-8 {
        return Err(Error::Computation(format!(
            "negative tail mass {deficit} in truncation; quadrature inconsistent"
        )));
    }
    head.push(deficit.max(0.0).sqrt());
    Ok(HermiteSeries::new(head))
}
