//! Machine-precision verification of the exact resolvent identities, plus
//! empirical verification of the inequality-type structural claims: Ward
//! ratios, error-matrix norms, and Gaussian-moment convergence.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{second_moment, GaussHermiteRule, HermiteSeries, NonlinearitySpec};
use crate::models::{
    build_a, build_a_tilde, build_b_full, build_b_tilde_full, build_h, DataDistribution,
    DataMatrix, Linearization,
};
use crate::rng::StreamKey;
use crate::theory::{RationalExponent, C64};

/// Outcome of one identity check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Per-instance report over a family of identity checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    pub instance: String,
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn max_deviation(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_deviation)
            .fold(0.0, f64::max)
    }

    fn push(&mut self, name: &str, max_deviation: f64, tolerance: f64) {
        self.checks.push(IdentityCheck {
            name: name.to_string(),
            max_deviation,
            tolerance,
            pass: max_deviation < tolerance,
        });
    }
}

fn invert(h: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    h.clone()
        .try_inverse()
        .ok_or_else(|| Error::Computation("singular matrix in resolvent check".into()))
}

/// Minor index map once global index `removed` is erased.
fn reduced(index: usize, removed: usize) -> usize {
    if index < removed {
        index
    } else {
        index - 1
    }
}

fn erase_row_col(h: &DMatrix<C64>, removed: usize) -> DMatrix<C64> {
    let n = h.nrows();
    let mut out = DMatrix::<C64>::zeros(n - 1, n - 1);
    for i in 0..n {
        if i == removed {
            continue;
        }
        for j in 0..n {
            if j == removed {
                continue;
            }
            out[(reduced(i, removed), reduced(j, removed))] = h[(i, j)];
        }
    }
    out
}

/// Up to `limit` deterministic (mu, nu) sample pairs.
fn sample_pairs(m: usize, limit: usize) -> Vec<(usize, usize)> {
    if m * m <= limit {
        return (0..m).flat_map(|a| (0..m).map(move |b| (a, b))).collect();
    }
    let key = StreamKey::new(0x9E37).with(m as u64);
    (0..limit as u64)
        .map(|s| {
            (
                (key.word(2 * s) % m as u64) as usize,
                (key.word(2 * s + 1) % m as u64) as usize,
            )
        })
        .collect()
}

/// Check the five exact resolvent identities of the linearization at z:
/// the minor identity, the U-weighted off-diagonal identity, the Schur
/// complement formula (both forms), the product form of G_M + T (for the
/// empty and a singleton exclusion set), and the expansion of (G_M + T) over
/// column resolvents. Minors are re-inverted from scratch so the checks stay
/// independent of the identities themselves.
pub fn check_resolvent_identities(
    lin: &Linearization,
    z: C64,
    tol: f64,
) -> Result<IdentityReport> {
    let m = lin.m_rows();
    let n = lin.n_cols();
    if m + n > 400 {
        return Err(Error::Resource(format!(
            "dense identity check limited to M+N <= 400, got {}",
            m + n
        )));
    }
    let h = build_h(lin, z)?;
    let g = invert(&h)?;
    let minors: Vec<DMatrix<C64>> = (0..n)
        .into_par_iter()
        .map(|i| invert(&erase_row_col(&h, m + i)))
        .collect::<Result<Vec<_>>>()?;

    let u = &lin.u;
    let gm = |mu: usize, nu: usize| g[(mu, nu)];
    let gmt = |mu: usize, nu: usize| {
        g[(mu, nu)] + if mu == nu { C64::new(lin.t_diag[mu], 0.0) } else { C64::new(0.0, 0.0) }
    };

    let mut report = IdentityReport {
        instance: format!("M={m}, N={n}, z={z}"),
        checks: Vec::new(),
    };
    let pairs = sample_pairs(m, 50);

    // minor identity: G^(i)_{mu nu} = G_{mu nu} - G_{mu i} G_{i nu} / G_{ii}
    let mut dev: f64 = 0.0;
    for i in 0..n {
        let gi = &minors[i];
        let gii = g[(m + i, m + i)];
        for &(mu, nu) in &pairs {
            let lhs = gi[(reduced(mu, m + i), reduced(nu, m + i))];
            let rhs = gm(mu, nu) - g[(mu, m + i)] * g[(m + i, nu)] / gii;
            dev = dev.max((lhs - rhs).norm());
        }
    }
    report.push("minor_identity", dev, tol);

    // off-diagonal identity: G_{i mu} = -G_{ii} sum_alpha U_{alpha i} G^(i)_{alpha mu}
    let mut dev: f64 = 0.0;
    for i in 0..n {
        let gi = &minors[i];
        let gii = g[(m + i, m + i)];
        for mu in 0..m {
            let mut acc = C64::new(0.0, 0.0);
            for alpha in 0..m {
                acc += u[(alpha, i)] * gi[(alpha, reduced(mu, m + i))];
            }
            let rhs = -gii * acc;
            dev = dev.max((g[(m + i, mu)] - rhs).norm());
        }
    }
    report.push("off_diagonal_identity", dev, tol);

    // Schur complement, both forms
    let mut dev: f64 = 0.0;
    for i in 0..n {
        let gi = &minors[i];
        let mut quad_gmt = C64::new(0.0, 0.0);
        let mut quad_g = C64::new(0.0, 0.0);
        for mu in 0..m {
            let umui = u[(mu, i)];
            for nu in 0..m {
                let gval = gi[(mu, nu)];
                let prod = umui * u[(nu, i)] * gval;
                quad_g += prod;
                if mu == nu {
                    quad_gmt += umui * u[(nu, i)] * (gval + lin.t_diag[mu]);
                } else {
                    quad_gmt += prod;
                }
            }
        }
        let gii = g[(m + i, m + i)];
        let rhs1 = (-z - quad_gmt).inv();
        let rhs2 = (-z - lin.d_diag[i] - quad_g).inv();
        dev = dev.max((gii - rhs1).norm()).max((gii - rhs2).norm());
    }
    report.push("schur_complement", dev, tol);

    // product form: G_M^(E) + T = T U^(E) G_N^(E) (U^(E))^T T, E = {} and E = {0}
    let mut dev: f64 = 0.0;
    {
        let t = DMatrix::<C64>::from_diagonal(&lin.t_diag.map(|v| C64::new(v, 0.0)));
        let uc = u.map(|v| C64::new(v, 0.0));
        // E = {}
        let gn = g.view((m, m), (n, n)).into_owned();
        let rhs = &t * &uc * gn * uc.transpose() * &t;
        for mu in 0..m {
            for nu in 0..m {
                dev = dev.max((gmt(mu, nu) - rhs[(mu, nu)]).norm());
            }
        }
        // E = {0}
        let g0 = &minors[0];
        let mut u0 = DMatrix::<C64>::zeros(m, n - 1);
        for i in 1..n {
            for mu in 0..m {
                u0[(mu, i - 1)] = C64::new(u[(mu, i)], 0.0);
            }
        }
        let gn0 = g0.view((m, m), (n - 1, n - 1)).into_owned();
        let rhs0 = &t * &u0 * gn0 * u0.transpose() * &t;
        for mu in 0..m {
            for nu in 0..m {
                let lhs = g0[(mu, nu)]
                    + if mu == nu { C64::new(lin.t_diag[mu], 0.0) } else { C64::new(0.0, 0.0) };
                dev = dev.max((lhs - rhs0[(mu, nu)]).norm());
            }
        }
    }
    report.push("product_form", dev, tol);

    // column expansion: (G_M + T)_{mu nu} = -T_mu sum_j G_jj sum_alpha U_{mu j} U_{alpha j} G^(j)_{alpha nu}
    let mut dev: f64 = 0.0;
    for &(mu, nu) in &pairs {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..n {
            let gj = &minors[j];
            let mut inner = C64::new(0.0, 0.0);
            for alpha in 0..m {
                inner += u[(alpha, j)] * gj[(alpha, reduced(nu, m + j))];
            }
            acc += g[(m + j, m + j)] * u[(mu, j)] * inner;
        }
        let rhs = -lin.t_diag[mu] * acc;
        dev = dev.max((gmt(mu, nu) - rhs).norm());
    }
    report.push("column_expansion", dev, tol);

    Ok(report)
}

/// Overlap |mu cap nu| of two ordered index tuples.
pub fn overlap(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

fn block_range(lin: &Linearization, degree: usize) -> Result<std::ops::Range<usize>> {
    lin.blocks
        .iter()
        .find(|b| b.degree == degree)
        .map(|b| b.row_start..b.row_start + b.tuples.len())
        .ok_or_else(|| Error::Precondition(format!("no degree-{degree} block present")))
}

fn sampled_rows(range: std::ops::Range<usize>, count: usize) -> Vec<usize> {
    let len = range.len();
    if len <= count {
        return range.collect();
    }
    (0..count).map(|s| range.start + s * len / count).collect()
}

/// Partial Ward diagnostic: the max over sampled mu in the degree-k1 block of
/// eta sum_{nu: <mu,nu> = t, nu in degree-k2} |(G_M + T)_{mu nu}|^2
/// divided by Im G_mumu * d^{max(-t, ell - k2)}. A ratio, not an assertion.
pub fn check_partial_ward(
    lin: &Linearization,
    z: C64,
    k1: usize,
    k2: usize,
    t: usize,
    sample_mu: usize,
) -> Result<f64> {
    if t > k1.min(k2) {
        return Err(Error::Precondition(format!(
            "overlap {t} exceeds min(k1, k2) = {}",
            k1.min(k2)
        )));
    }
    let rows1 = block_range(lin, k1)?;
    let rows2 = block_range(lin, k2)?;
    let g = invert(&build_h(lin, z)?)?;
    let eta = z.im;
    let exponent = (-(t as f64)).max(lin.ell.value() - k2 as f64);
    let scale = (lin.d as f64).powf(exponent);
    let mut max_ratio: f64 = 0.0;
    for mu in sampled_rows(rows1.clone(), sample_mu) {
        let tuple_mu = lin.tuple_of_row(mu);
        let mut sum = 0.0;
        let mut any = false;
        for nu in rows2.clone() {
            if overlap(tuple_mu, lin.tuple_of_row(nu)) != t {
                continue;
            }
            any = true;
            let val = g[(mu, nu)]
                + if mu == nu { C64::new(lin.t_diag[mu], 0.0) } else { C64::new(0.0, 0.0) };
            sum += val.norm_sqr();
        }
        if !any {
            continue; // empty S contributes ratio 0
        }
        let ratio = eta * sum / (g[(mu, mu)].im * scale);
        max_ratio = max_ratio.max(ratio);
    }
    Ok(max_ratio)
}

/// Full Ward diagnostic: max over sampled mu of
/// eta sum_{nu} |(G_M + T)_{mu nu}|^2 / Im G_mumu.
pub fn check_full_ward(lin: &Linearization, z: C64, sample_mu: usize) -> Result<f64> {
    let m = lin.m_rows();
    let g = invert(&build_h(lin, z)?)?;
    let eta = z.im;
    let mut max_ratio: f64 = 0.0;
    for mu in sampled_rows(0..m, sample_mu) {
        let mut sum = 0.0;
        for nu in 0..m {
            let val = g[(mu, nu)]
                + if mu == nu { C64::new(lin.t_diag[mu], 0.0) } else { C64::new(0.0, 0.0) };
            sum += val.norm_sqr();
        }
        max_ratio = max_ratio.max(eta * sum / g[(mu, mu)].im);
    }
    Ok(max_ratio)
}

/// Frobenius norms of the error chain A -> A-tilde -> B-tilde-full -> B-full,
/// plus the low-rank/Frobenius split of B-full - B.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub a_minus_a_tilde: f64,
    pub a_tilde_minus_b_tilde_full: f64,
    pub b_tilde_full_minus_b_full: f64,
    /// Rank bound sum_{k < ceil(ell)} C(d, k) for the low-rank part.
    pub low_rank_bound: usize,
    /// Frobenius norm of the diagonal part of B-full - B.
    pub frob_part: f64,
}

fn binomial_usize(d: usize, k: usize) -> usize {
    if k > d {
        return 0;
    }
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc * (d - j) as u128 / (j + 1) as u128;
    }
    acc as usize
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

/// Diagonal of the low-rank completion of B-full - B: entry i is
/// sum_{k < ceil(ell)} c_k sqrt(k!) d^{-k/2} e_k(X_{.i}^2) / sqrt(N).
fn frob_part_diagonal(x: &DataMatrix, series: &HermiteSeries, k_hi: usize) -> Vec<f64> {
    let d = x.params.d;
    let n = x.params.n;
    let sqrt_d = (d as f64).sqrt();
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|i| {
            let sq: Vec<f64> = (0..d).map(|a| x.entries()[(a, i)].powi(2)).collect();
            let e = crate::models::elementary_symmetric(&sq, k_hi).unwrap();
            (0..=k_hi)
                .map(|k| series.coeff(k) * factorial(k).sqrt() / sqrt_d.powi(k as i32) * e[k])
                .sum::<f64>()
                * inv_sqrt_n
        })
        .collect()
}

/// Norms of the error matrices between the five model matrices, with the
/// low-rank-plus-diagonal split for B-full - B.
pub fn error_norms(
    x: &DataMatrix,
    f: &NonlinearitySpec,
    series: &HermiteSeries,
    ell: &RationalExponent,
) -> Result<ErrorNorms> {
    if let Some(exact) = f.exact_series()? {
        let top = exact.degree().max(series.degree());
        for k in 0..=top {
            if (exact.coeff(k) - series.coeff(k)).abs() > 1e-6 {
                return Err(Error::Precondition(format!(
                    "series coefficient c_{k} = {} does not match the nonlinearity ({})",
                    series.coeff(k),
                    exact.coeff(k)
                )));
            }
        }
    }
    let a = build_a(x, f);
    let a_tilde = build_a_tilde(x, f);
    let b_tilde_full = build_b_tilde_full(x, series);
    let b_full = build_b_full(x, series);

    let ceil_ell = ell.ceil().max(0) as usize;
    let low_rank_bound: usize = (0..ceil_ell).map(|k| binomial_usize(x.params.d, k)).sum();
    let frob_part = if ceil_ell == 0 {
        0.0
    } else {
        frob_part_diagonal(x, series, ceil_ell - 1)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    };

    Ok(ErrorNorms {
        a_minus_a_tilde: (&a - &a_tilde).norm(),
        a_tilde_minus_b_tilde_full: (&a_tilde - &b_tilde_full).norm(),
        b_tilde_full_minus_b_full: (&b_tilde_full - &b_full).norm(),
        low_rank_bound,
        frob_part,
    })
}

/// Monte Carlo value of E[g^2(<X_1, X_2>/sqrt d)] against the Gaussian value
/// E[g^2(Z)].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussMomentCheck {
    pub mc_value: f64,
    pub gauss_value: f64,
    pub gap: f64,
}

pub fn check_gauss_moment(
    g: &NonlinearitySpec,
    dist: &DataDistribution,
    d: usize,
    n_samples: usize,
    seed: u64,
) -> Result<GaussMomentCheck> {
    if n_samples < 10_000 {
        return Err(Error::Precondition(format!(
            "need at least 1e4 samples, got {n_samples}"
        )));
    }
    dist.validate()?;
    g.validate()?;
    let rule = GaussHermiteRule::new(120)?;
    let gauss_value = second_moment(g, &rule)?;

    let base = StreamKey::new(seed).with_str("gauss-moment");
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let values: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| {
            let kx = base.with(s).with(0);
            let ky = base.with(s).with(1);
            let mut ip = 0.0;
            for a in 0..d as u64 {
                ip += dist.sample(kx.with(a)) * dist.sample(ky.with(a));
            }
            let v = g.eval(ip * inv_sqrt_d);
            v * v
        })
        .collect();
    let mc_value = values.iter().sum::<f64>() / n_samples as f64;
    Ok(GaussMomentCheck {
        mc_value,
        gauss_value,
        gap: (mc_value - gauss_value).abs(),
    })
}
