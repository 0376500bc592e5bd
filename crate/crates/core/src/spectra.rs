//! Symmetric eigendecomposition, empirical spectral measures, empirical
//! Stieltjes transforms on D_tau, and distances between binned measures.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::theory::{solve_m, ComplexGrid, Gammas, RationalExponent, C64};

/// Provenance carried with a spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub model: String,
    pub d: usize,
    pub n: usize,
    pub ell: Option<RationalExponent>,
    pub seed: u64,
}

impl SpectrumMeta {
    pub fn bare(model: &str) -> Self {
        SpectrumMeta {
            model: model.to_string(),
            d: 0,
            n: 0,
            ell: None,
            seed: 0,
        }
    }
}

/// Sorted eigenvalues of one symmetric kernel matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    pub meta: SpectrumMeta,
}

impl Spectrum {
    pub fn new(mut eigenvalues: Vec<f64>, meta: SpectrumMeta) -> Self {
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Spectrum { eigenvalues, meta }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// CSV rows `index,lambda` with 17-significant-digit values.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "index,lambda")?;
        for (i, lambda) in self.eigenvalues.iter().enumerate() {
            writeln!(out, "{i},{}", g17(*lambda))?;
        }
        Ok(())
    }
}

/// Full spectrum of a symmetric matrix, with a symmetry precondition and a
/// trace-consistency check on the result.
pub fn eigs(matrix: &DMatrix<f64>, meta: SpectrumMeta) -> Result<Spectrum> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::Precondition("matrix must be square".into()));
    }
    let scale = matrix.amax();
    let mut asym: f64 = 0.0;
    for j in 0..n {
        for i in 0..j {
            asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if asym > 1e-12 * scale.max(1e-300) {
        return Err(Error::Precondition(format!(
            "matrix is not symmetric: max asymmetry {asym:e} at scale {scale:e}"
        )));
    }
    let values = matrix.clone().symmetric_eigenvalues();
    let spectrum = Spectrum::new(values.iter().copied().collect(), meta);
    let sum: f64 = spectrum.eigenvalues.iter().sum();
    let trace = matrix.trace();
    let lam_max = spectrum
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l.abs()));
    if (sum - trace).abs() > 1e-8 * (n as f64) * lam_max.max(1.0) {
        return Err(Error::Computation(format!(
            "eigenvalue sum {sum} inconsistent with trace {trace}"
        )));
    }
    Ok(spectrum)
}

/// Empirical Stieltjes transform s(z) = (1/N) sum_i 1/(lambda_i - z).
pub fn stieltjes(spec: &Spectrum, z: C64) -> Result<C64> {
    if z.im == 0.0 && spec.eigenvalues.contains(&z.re) {
        return Err(Error::Domain(format!("z = {z} hits an eigenvalue")));
    }
    let sum: C64 = spec
        .eigenvalues
        .iter()
        .map(|&l| (C64::new(l, 0.0) - z).inv())
        .sum();
    Ok(sum / spec.len() as f64)
}

/// Histogram measure on uniform bins over [lo, hi].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    lo: f64,
    hi: f64,
    masses: Vec<f64>,
}

impl Measure {
    pub fn new(lo: f64, hi: f64, masses: Vec<f64>) -> Result<Self> {
        if !(lo < hi) || masses.is_empty() {
            return Err(Error::Domain("measure needs lo < hi and >= 1 bin".into()));
        }
        if masses.iter().any(|&m| m < 0.0) {
            return Err(Error::Domain("masses must be non-negative".into()));
        }
        let total: f64 = masses.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::Domain(format!("total mass {total} exceeds 1")));
        }
        Ok(Measure { lo, hi, masses })
    }

    /// Bin the analytic CDF: mass_i = F(edge_{i+1}) - F(edge_i).
    pub fn from_cdf(lo: f64, hi: f64, bins: usize, cdf: impl Fn(f64) -> f64) -> Result<Self> {
        let edges: Vec<f64> = (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect();
        let masses = edges
            .windows(2)
            .map(|w| (cdf(w[1]) - cdf(w[0])).max(0.0))
            .collect();
        Measure::new(lo, hi, masses)
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.bins())
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / self.bins() as f64)
            .collect()
    }

    /// CSV rows `bin_lo,bin_hi,mass`.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "bin_lo,bin_hi,mass")?;
        let edges = self.bin_edges();
        for (i, mass) in self.masses.iter().enumerate() {
            writeln!(out, "{},{},{}", g17(edges[i]), g17(edges[i + 1]), g17(*mass))?;
        }
        Ok(())
    }
}

/// Empirical spectral distribution as a histogram; total mass is the
/// fraction of eigenvalues inside the range.
pub fn esd(spec: &Spectrum, bins: usize, range: (f64, f64)) -> Result<Measure> {
    let (lo, hi) = range;
    if bins < 1 {
        return Err(Error::Precondition("bins must be >= 1".into()));
    }
    if !(lo < hi) {
        return Err(Error::Precondition(format!("range [{lo}, {hi}] is empty")));
    }
    let mut masses = vec![0.0; bins];
    let w = (hi - lo) / bins as f64;
    let unit = 1.0 / spec.len() as f64;
    for &l in &spec.eigenvalues {
        if l < lo || l > hi {
            continue;
        }
        let idx = (((l - lo) / w) as usize).min(bins - 1);
        masses[idx] += unit;
    }
    Measure::new(lo, hi, masses)
}

/// Max over the grid of |s_spec(z) - m(z)| against the limit law.
pub fn sup_stieltjes_gap(spec: &Spectrum, g: &Gammas, grid: &ComplexGrid) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for &z in grid.points() {
        let s = stieltjes(spec, z)?;
        let m = solve_m(z, g)?;
        sup = sup.max((s - m).norm());
    }
    Ok(sup)
}

/// Kolmogorov-Smirnov distance between two measures on identical bins.
pub fn ks_distance(a: &Measure, b: &Measure) -> Result<f64> {
    if a.lo != b.lo || a.hi != b.hi || a.bins() != b.bins() {
        return Err(Error::Precondition(
            "measures must share identical bin edges".into(),
        ));
    }
    let mut cdf_a = 0.0;
    let mut cdf_b = 0.0;
    let mut sup: f64 = 0.0;
    for (ma, mb) in a.masses.iter().zip(&b.masses) {
        cdf_a += ma;
        cdf_b += mb;
        sup = sup.max((cdf_a - cdf_b).abs());
    }
    Ok(sup)
}

/// Operator-norm estimate by power iteration on M^T M (500 steps from a
/// seeded start vector).
pub fn operator_norm_estimate(m: &DMatrix<f64>, seed: u64) -> f64 {
    let n = m.ncols();
    let key = crate::rng::StreamKey::new(seed).with_str("opnorm");
    let mut v = nalgebra::DVector::<f64>::from_fn(n, |i, _| key.normal(i as u64));
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..500 {
        let w = m * &v;
        let u = m.tr_mul(&w);
        let norm = u.norm();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = w.norm();
        v = u / norm;
    }
    estimate
}
