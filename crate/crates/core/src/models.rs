//! Data sampling and kernel matrix construction: the entrywise nonlinear
//! matrices A and A-tilde, the main-term matrix B and its full-range variant,
//! and the linearization (U, T, D) with its block matrix H(z).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{HermiteSeries, NonlinearitySpec};
use crate::rng::StreamKey;
use crate::theory::{RationalExponent, C64};

/// Guard on the number of linearization rows M = sum_k C(d, k).
pub const MAX_LINEARIZATION_ROWS: usize = 200_000;

/// Centered unit-variance entry distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataDistribution {
    Gaussian,
    Rademacher,
    /// Uniform on (-sqrt(3), sqrt(3)).
    Uniform,
    Discrete {
        atoms: Vec<f64>,
        probs: Vec<f64>,
    },
}

impl DataDistribution {
    pub fn discrete(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let dist = DataDistribution::Discrete { atoms, probs };
        dist.validate()?;
        Ok(dist)
    }

    /// Built-ins are exact; the discrete variant must have mean 0 and
    /// variance 1 to 1e-12.
    pub fn validate(&self) -> Result<()> {
        if let DataDistribution::Discrete { atoms, probs } = self {
            if atoms.len() != probs.len() || atoms.is_empty() {
                return Err(Error::Domain("discrete: atoms/probs length mismatch".into()));
            }
            if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Domain("discrete: probabilities must be >= 0".into()));
            }
            let total: f64 = probs.iter().sum();
            let mean: f64 = atoms.iter().zip(probs).map(|(x, p)| x * p).sum();
            let var: f64 = atoms.iter().zip(probs).map(|(x, p)| x * x * p).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("discrete: total mass {total} != 1")));
            }
            if mean.abs() > 1e-12 {
                return Err(Error::Domain(format!("discrete: mean {mean} != 0")));
            }
            if (var - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("discrete: variance {var} != 1")));
            }
        }
        Ok(())
    }

    /// One draw from the stream key; entry streams never share counters.
    pub fn sample(&self, key: StreamKey) -> f64 {
        match self {
            DataDistribution::Gaussian => key.normal(0),
            DataDistribution::Rademacher => {
                if key.word(0) >> 63 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }
            DataDistribution::Uniform => (2.0 * key.uniform(0) - 1.0) * 3f64.sqrt(),
            DataDistribution::Discrete { atoms, probs } => {
                let u = key.uniform(0);
                let mut acc = 0.0;
                for (x, p) in atoms.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *x;
                    }
                }
                *atoms.last().unwrap()
            }
        }
    }

    /// E[X^m] for m = 1..=4.
    pub fn analytic_moment(&self, m: u32) -> f64 {
        match self {
            DataDistribution::Gaussian => match m {
                1 | 3 => 0.0,
                2 => 1.0,
                4 => 3.0,
                _ => unimplemented!("moment {m}"),
            },
            DataDistribution::Rademacher => if m % 2 == 1 { 0.0 } else { 1.0 },
            DataDistribution::Uniform => match m {
                1 | 3 => 0.0,
                2 => 1.0,
                4 => 1.8,
                _ => unimplemented!("moment {m}"),
            },
            DataDistribution::Discrete { atoms, probs } => atoms
                .iter()
                .zip(probs)
                .map(|(x, p)| x.powi(m as i32) * p)
                .sum(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DataDistribution::Gaussian => "gaussian".into(),
            DataDistribution::Rademacher => "rademacher".into(),
            DataDistribution::Uniform => "uniform".into(),
            DataDistribution::Discrete { atoms, .. } => format!("discrete{}", atoms.len()),
        }
    }
}

/// Dimensions and scaling exponent; kappa = N/d^ell is always derived,
/// never supplied independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: usize,
    pub n: usize,
    pub ell: RationalExponent,
}

impl ModelParams {
    pub fn new(d: usize, n: usize, ell: RationalExponent) -> Result<Self> {
        if d < 1 {
            return Err(Error::Domain("d must be >= 1".into()));
        }
        if n < 2 {
            return Err(Error::Domain("N must be >= 2".into()));
        }
        Ok(ModelParams { d, n, ell })
    }

    /// Realized kappa = N/d^ell.
    pub fn kappa(&self) -> f64 {
        self.n as f64 / self.ell.pow(self.d)
    }

    /// N closest to kappa * d^ell (at least 2).
    pub fn from_kappa(d: usize, kappa: f64, ell: RationalExponent) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::Domain(format!("kappa {kappa} must be positive")));
        }
        let n = (kappa * ell.pow(d)).round().max(2.0) as usize;
        ModelParams::new(d, n, ell)
    }
}

/// A sampled d x N data matrix with columns X_1..X_N; regenerating from
/// (distribution, params, seed) reproduces it bit-exactly.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    entries: DMatrix<f64>,
    pub params: ModelParams,
    pub dist: DataDistribution,
    pub seed: u64,
}

impl DataMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Wrap explicit entries (tests and file-driven runs).
    pub fn from_entries(entries: DMatrix<f64>, ell: RationalExponent, seed: u64) -> Result<Self> {
        let params = ModelParams::new(entries.nrows(), entries.ncols(), ell)?;
        Ok(DataMatrix {
            entries,
            params,
            dist: DataDistribution::Gaussian,
            seed,
        })
    }
}

/// Draw X with entry (a, i) taken from the counter-based stream keyed by
/// (seed, a, i); deterministic and independent of thread count.
pub fn sample_x(dist: &DataDistribution, params: &ModelParams, seed: u64) -> Result<DataMatrix> {
    dist.validate()?;
    let (d, n) = (params.d, params.n);
    let base = StreamKey::new(seed);
    let mut entries = DMatrix::<f64>::zeros(d, n);
    entries
        .as_mut_slice()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(i, col)| {
            for (a, slot) in col.iter_mut().enumerate() {
                *slot = dist.sample(base.with(a as u64).with(i as u64));
            }
        });
    Ok(DataMatrix {
        entries,
        params: *params,
        dist: dist.clone(),
        seed,
    })
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

/// Symmetric N x N matrix with zero diagonal; the strict upper triangle is
/// computed (in parallel over columns) and mirrored.
fn symmetric_from_upper(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| (0..j).map(|i| f(i, j)).collect())
        .collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// A_ij = f(<X_i, X_j>/sqrt(d))/sqrt(N) off the diagonal, zero on it.
pub fn build_a(x: &DataMatrix, f: &NonlinearitySpec) -> DMatrix<f64> {
    let d = x.params.d as f64;
    let n = x.params.n;
    let gram = x.entries.tr_mul(&x.entries);
    let inv_sqrt_d = 1.0 / d.sqrt();
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    symmetric_from_upper(n, |i, j| f.eval(gram[(i, j)] * inv_sqrt_d) * inv_sqrt_n)
}

/// A-tilde: the argument is normalized by the column norms,
/// sqrt(d) <X_i, X_j>/(|X_i| |X_j|); rows with a zero-norm column are zero.
pub fn build_a_tilde(x: &DataMatrix, f: &NonlinearitySpec) -> DMatrix<f64> {
    let d = x.params.d as f64;
    let n = x.params.n;
    let gram = x.entries.tr_mul(&x.entries);
    let norms: Vec<f64> = (0..n).map(|i| x.entries.column(i).norm()).collect();
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let sqrt_d = d.sqrt();
    symmetric_from_upper(n, |i, j| {
        if norms[i] == 0.0 || norms[j] == 0.0 {
            0.0
        } else {
            f.eval(sqrt_d * gram[(i, j)] / (norms[i] * norms[j])) * inv_sqrt_n
        }
    })
}

/// Columns rescaled to norm sqrt(d); zero-norm columns stay zero.
pub fn normalize_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let sqrt_d = (x.nrows() as f64).sqrt();
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        if norm != 0.0 {
            col *= sqrt_d / norm;
        }
    }
    out
}

/// Newton's identities: e_k from power sums, k e_k = sum_m (-1)^{m-1} e_{k-m} p_m.
/// `p` is 1-indexed (p[0] ignored).
fn esym_from_power_sums(p: &[f64], k_max: usize) -> Vec<f64> {
    let mut e = vec![0.0; k_max + 1];
    e[0] = 1.0;
    for k in 1..=k_max {
        let mut acc = 0.0;
        let mut sign = 1.0;
        for m in 1..=k {
            acc += sign * e[k - m] * p[m];
            sign = -sign;
        }
        e[k] = acc / k as f64;
    }
    e
}

/// Elementary symmetric polynomials e_0..e_{k_max} of w via Newton's
/// identities; e_k = 0 exactly for k > len(w).
pub fn elementary_symmetric(w: &[f64], k_max: usize) -> Result<Vec<f64>> {
    if k_max > 16 {
        return Err(Error::Precondition(format!("k_max {k_max} exceeds 16")));
    }
    let mut p = vec![0.0; k_max + 1];
    for (m, slot) in p.iter_mut().enumerate().skip(1) {
        *slot = w.iter().map(|&v| v.powi(m as i32)).sum();
    }
    let mut e = esym_from_power_sums(&p, k_max);
    for v in e.iter_mut().skip(w.len() + 1) {
        *v = 0.0;
    }
    Ok(e)
}

/// Shared builder for B-type matrices: entry (i, j) is
/// (1/sqrt(N)) sum_{k=k_lo}^{L} c_k sqrt(k!) d^{-k/2} e_k(w_ij) with
/// w_a = X_{ai} X_{aj}. The power sums p_m(i, j) = <X_i^m, X_j^m> are batched
/// as Gram matrices of entrywise powers, so Newton's identities run in O(L^2)
/// per entry.
fn tuple_kernel_matrix(x: &DMatrix<f64>, series: &HermiteSeries, k_lo: usize) -> DMatrix<f64> {
    let d = x.nrows();
    let n = x.ncols();
    let l = series.degree();
    if l < k_lo {
        return DMatrix::zeros(n, n);
    }
    let mut power_grams: Vec<DMatrix<f64>> = Vec::with_capacity(l);
    let mut xm = x.clone();
    for m in 1..=l {
        if m > 1 {
            xm.component_mul_assign(x);
        }
        power_grams.push(xm.tr_mul(&xm));
    }
    let sqrt_d = (d as f64).sqrt();
    let weights: Vec<f64> = (0..=l)
        .map(|k| series.coeff(k) * factorial(k).sqrt() / sqrt_d.powi(k as i32))
        .collect();
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    symmetric_from_upper(n, |i, j| {
        let mut p = vec![0.0; l + 1];
        for m in 1..=l {
            p[m] = power_grams[m - 1][(i, j)];
        }
        let mut e = esym_from_power_sums(&p, l);
        for v in e.iter_mut().skip(d + 1) {
            *v = 0.0;
        }
        let mut acc = 0.0;
        for k in k_lo..=l {
            acc += weights[k] * e[k];
        }
        acc * inv_sqrt_n
    })
}

/// Main-term matrix B, summing Hermite degrees k = ceil(ell)..L; the empty
/// sum (L < ceil(ell)) gives the zero matrix.
pub fn build_b(x: &DataMatrix, series: &HermiteSeries, ell: &RationalExponent) -> DMatrix<f64> {
    tuple_kernel_matrix(&x.entries, series, ell.ceil().max(0) as usize)
}

/// B with the full degree range k = 0..L; the k = 0 tuple sum is 1 by
/// convention, contributing c_0/sqrt(N) off the diagonal.
pub fn build_b_full(x: &DataMatrix, series: &HermiteSeries) -> DMatrix<f64> {
    tuple_kernel_matrix(&x.entries, series, 0)
}

/// B-full evaluated on the norm-rescaled columns.
pub fn build_b_tilde_full(x: &DataMatrix, series: &HermiteSeries) -> DMatrix<f64> {
    tuple_kernel_matrix(&normalize_columns(&x.entries), series, 0)
}

/// One constant-degree block of the linearization.
#[derive(Debug, Clone)]
pub struct DegreeBlock {
    pub degree: usize,
    pub row_start: usize,
    /// Ordered index tuples a_1 < ... < a_k, one per block row.
    pub tuples: Vec<Vec<u32>>,
}

/// The decomposition B = U^T T U - D: U stacks the degree-k monomial rows,
/// T is block-constant diagonal, D restores the removed diagonal.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub u: DMatrix<f64>,
    pub t_diag: DVector<f64>,
    pub d_diag: DVector<f64>,
    pub blocks: Vec<DegreeBlock>,
    pub d: usize,
    pub ell: RationalExponent,
}

impl Linearization {
    pub fn m_rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.u.ncols()
    }

    /// Degree of the block containing row mu.
    pub fn degree_of_row(&self, mu: usize) -> usize {
        for b in &self.blocks {
            if mu >= b.row_start && mu < b.row_start + b.tuples.len() {
                return b.degree;
            }
        }
        panic!("row {mu} out of range");
    }

    /// The index tuple of row mu.
    pub fn tuple_of_row(&self, mu: usize) -> &[u32] {
        for b in &self.blocks {
            if mu >= b.row_start && mu < b.row_start + b.tuples.len() {
                return &b.tuples[mu - b.row_start];
            }
        }
        panic!("row {mu} out of range");
    }
}

fn binomial(d: usize, k: usize) -> Option<usize> {
    if k > d {
        return Some(0);
    }
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc * (d - j) as u128 / (j + 1) as u128;
        if acc > u128::from(u64::MAX) {
            return None;
        }
    }
    usize::try_from(acc).ok()
}

fn for_each_combination(d: usize, k: usize, mut f: impl FnMut(&[u32])) {
    if k > d {
        return;
    }
    if k == 0 {
        f(&[]);
        return;
    }
    let mut idx: Vec<u32> = (0..k as u32).collect();
    loop {
        f(&idx);
        let mut pos = k - 1;
        loop {
            if (idx[pos] as usize) < d - k + pos {
                idx[pos] += 1;
                for q in pos + 1..k {
                    idx[q] = idx[q - 1] + 1;
                }
                break;
            }
            if pos == 0 {
                return;
            }
            pos -= 1;
        }
    }
}

/// Build the linearization (U, T, D) for the degree range ceil(ell)..L,
/// skipping blocks with c_k = 0 so that T is invertible.
pub fn build_utd(
    x: &DataMatrix,
    series: &HermiteSeries,
    ell: &RationalExponent,
) -> Result<Linearization> {
    let d = x.params.d;
    let n = x.params.n;
    let k_lo = ell.ceil().max(0) as usize;
    let l = series.degree();

    let mut degrees = Vec::new();
    let mut total_rows = 0usize;
    for k in k_lo..=l.max(k_lo) {
        if k > l || series.coeff(k) == 0.0 {
            continue;
        }
        let rows = binomial(d, k).ok_or_else(|| {
            Error::Resource(format!("C({d},{k}) overflows the linearization guard"))
        })?;
        total_rows += rows;
        if total_rows > MAX_LINEARIZATION_ROWS {
            return Err(Error::Resource(format!(
                "linearization needs {total_rows}+ rows, guard is {MAX_LINEARIZATION_ROWS}"
            )));
        }
        degrees.push((k, rows));
    }

    let m = total_rows;
    let mut u = DMatrix::<f64>::zeros(m, n);
    let mut t_diag = DVector::<f64>::zeros(m);
    let mut blocks = Vec::with_capacity(degrees.len());
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let mut row = 0usize;
    for (k, rows) in degrees {
        let t_value = series.coeff(k)
            * factorial(k).sqrt()
            * (n as f64 / (x.params.d as f64).powi(k as i32)).sqrt();
        let mut tuples = Vec::with_capacity(rows);
        for_each_combination(d, k, |tuple| {
            for i in 0..n {
                let mut prod = inv_sqrt_n;
                for &a in tuple {
                    prod *= x.entries[(a as usize, i)];
                }
                u[(row, i)] = prod;
            }
            t_diag[row] = t_value;
            tuples.push(tuple.to_vec());
            row += 1;
        });
        blocks.push(DegreeBlock {
            degree: k,
            row_start: row - rows,
            tuples,
        });
    }

    let mut d_diag = DVector::<f64>::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for mu in 0..m {
            acc += t_diag[mu] * u[(mu, i)] * u[(mu, i)];
        }
        d_diag[i] = acc;
    }

    Ok(Linearization {
        u,
        t_diag,
        d_diag,
        blocks,
        d,
        ell: *ell,
    })
}

/// The (M+N) x (M+N) complex symmetric block matrix
/// H(z) = [[-T^{-1}, U], [U^T, -z - D]].
pub fn build_h(lin: &Linearization, z: C64) -> Result<DMatrix<C64>> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("z = {z} is not in the upper half-plane")));
    }
    let m = lin.m_rows();
    let n = lin.n_cols();
    let mut h = DMatrix::<C64>::zeros(m + n, m + n);
    for mu in 0..m {
        h[(mu, mu)] = C64::new(-1.0 / lin.t_diag[mu], 0.0);
    }
    for mu in 0..m {
        for i in 0..n {
            let v = C64::new(lin.u[(mu, i)], 0.0);
            h[(mu, m + i)] = v;
            h[(m + i, mu)] = v;
        }
    }
    for i in 0..n {
        h[(m + i, m + i)] = -z - lin.d_diag[i];
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::NamedFn;
    use approx::assert_relative_eq;

    fn ell(text: &str) -> RationalExponent {
        RationalExponent::parse(text).unwrap()
    }

    fn all_ones(d: usize, n: usize, l: &str) -> DataMatrix {
        DataMatrix::from_entries(DMatrix::from_element(d, n, 1.0), ell(l), 0).unwrap()
    }

    fn random_x(d: usize, n: usize, l: &str, seed: u64) -> DataMatrix {
        let params = ModelParams::new(d, n, ell(l)).unwrap();
        sample_x(&DataDistribution::Gaussian, &params, seed).unwrap()
    }

    /// Brute-force oracle: direct enumeration of the ordered tuple sums.
    fn brute_force_kernel_entry(
        x: &DMatrix<f64>,
        series: &HermiteSeries,
        k_lo: usize,
        i: usize,
        j: usize,
    ) -> f64 {
        let d = x.nrows();
        let n = x.ncols() as f64;
        let sqrt_d = (d as f64).sqrt();
        let mut acc = 0.0;
        for k in k_lo..=series.degree() {
            let mut tuple_sum = 0.0;
            for_each_combination(d, k, |tuple| {
                let mut prod = 1.0;
                for &a in tuple {
                    prod *= x[(a as usize, i)] * x[(a as usize, j)];
                }
                tuple_sum += prod;
            });
            acc += series.coeff(k) * factorial(k).sqrt() / sqrt_d.powi(k as i32) * tuple_sum;
        }
        acc / n.sqrt()
    }

    #[test]
    fn rademacher_support() {
        let params = ModelParams::new(8, 16, ell("1")).unwrap();
        let x = sample_x(&DataDistribution::Rademacher, &params, 3).unwrap();
        assert!(x.entries().iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn gaussian_sample_moments() {
        let params = ModelParams::new(1000, 1000, ell("1")).unwrap();
        let x = sample_x(&DataDistribution::Gaussian, &params, 11).unwrap();
        let n = (params.d * params.n) as f64;
        let mean = x.entries().iter().sum::<f64>() / n;
        let var = x.entries().iter().map(|v| v * v).sum::<f64>() / n;
        assert!(mean.abs() < 0.004, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let params = ModelParams::new(13, 17, ell("1")).unwrap();
        for dist in [
            DataDistribution::Gaussian,
            DataDistribution::Rademacher,
            DataDistribution::Uniform,
        ] {
            let a = sample_x(&dist, &params, 42).unwrap();
            let b = sample_x(&dist, &params, 42).unwrap();
            assert_eq!(a.entries(), b.entries());
            let c = sample_x(&dist, &params, 43).unwrap();
            assert_ne!(a.entries(), c.entries());
        }
    }

    #[test]
    fn distribution_moments_match_analytic() {
        let params = ModelParams::new(1000, 1000, ell("1")).unwrap();
        let tol = 5.0 / ((params.d * params.n) as f64).sqrt();
        let dists = [
            DataDistribution::Gaussian,
            DataDistribution::Rademacher,
            DataDistribution::Uniform,
            DataDistribution::discrete(vec![-2.0, 0.5], vec![0.2, 0.8]).unwrap(),
        ];
        for dist in dists {
            let x = sample_x(&dist, &params, 5).unwrap();
            let n = (params.d * params.n) as f64;
            for m in 1..=4u32 {
                let sample: f64 =
                    x.entries().iter().map(|v| v.powi(m as i32)).sum::<f64>() / n;
                let expect = dist.analytic_moment(m);
                let scale = 3f64.powi(m as i32 / 2); // crude moment scale
                assert!(
                    (sample - expect).abs() < tol * scale.max(1.0),
                    "{} moment {m}: {sample} vs {expect}",
                    dist.label()
                );
            }
        }
    }

    #[test]
    fn discrete_validation() {
        assert!(DataDistribution::discrete(vec![1.0, -1.0], vec![0.5, 0.5]).is_ok());
        // nonzero mean
        assert!(DataDistribution::discrete(vec![1.0, 0.0], vec![0.5, 0.5]).is_err());
        // wrong variance
        assert!(DataDistribution::discrete(vec![2.0, -2.0], vec![0.5, 0.5]).is_err());
        // mass != 1
        assert!(DataDistribution::discrete(vec![1.0, -1.0], vec![0.4, 0.5]).is_err());
    }

    #[test]
    fn build_a_spec_values() {
        let x = all_ones(4, 2, "1");
        let f = NonlinearitySpec::MonomialPolynomial {
            coeffs: vec![0.0, 0.0, 1.0],
        };
        let a = build_a(&x, &f);
        assert_relative_eq!(a[(0, 1)], 4.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(a[(0, 0)], 0.0);
        assert_eq!(a[(1, 1)], 0.0);

        let zero = NonlinearitySpec::MonomialPolynomial { coeffs: vec![0.0] };
        assert_eq!(build_a(&x, &zero), DMatrix::zeros(2, 2));
    }

    #[test]
    fn build_a_tilde_spec_values() {
        let x = all_ones(4, 2, "1");
        let f = NonlinearitySpec::MonomialPolynomial {
            coeffs: vec![0.0, 0.0, 1.0],
        };
        let at = build_a_tilde(&x, &f);
        assert_relative_eq!(at[(0, 1)], 4.0 / 2f64.sqrt(), epsilon = 1e-12);

        // zero column zeroes its row and column
        let mut entries = DMatrix::from_element(4, 4, 1.0);
        entries.column_mut(2).fill(0.0);
        let x = DataMatrix::from_entries(entries, ell("1"), 0).unwrap();
        let at = build_a_tilde(&x, &f);
        for i in 0..4 {
            assert_eq!(at[(i, 2)], 0.0);
            assert_eq!(at[(2, i)], 0.0);
        }
        // constant nonlinearity
        let c = NonlinearitySpec::MonomialPolynomial { coeffs: vec![3.0] };
        let at = build_a_tilde(&x, &c);
        assert_relative_eq!(at[(0, 1)], 3.0 / 2.0, epsilon = 1e-12);
        assert_eq!(at[(0, 2)], 0.0);
    }

    #[test]
    fn elementary_symmetric_spec_values() {
        let e = elementary_symmetric(&[1.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(e, vec![1.0, 6.0, 11.0, 6.0]);
        let e = elementary_symmetric(&[5.0, -1.0], 0).unwrap();
        assert_eq!(e, vec![1.0]);
        // e_k = 0 beyond the vector length
        let e = elementary_symmetric(&[2.0], 3).unwrap();
        assert_eq!(e[2], 0.0);
        assert_eq!(e[3], 0.0);
        assert!(elementary_symmetric(&[1.0], 17).is_err());
    }

    #[test]
    fn elementary_symmetric_matches_enumeration() {
        let x = random_x(8, 2, "1", 9);
        let w: Vec<f64> = (0..8)
            .map(|a| x.entries()[(a, 0)] * x.entries()[(a, 1)])
            .collect();
        let e = elementary_symmetric(&w, 3).unwrap();
        let mut brute = 0.0;
        for_each_combination(8, 3, |t| {
            brute += t.iter().map(|&a| w[a as usize]).product::<f64>();
        });
        assert_relative_eq!(e[3], brute, max_relative = 1e-12);
    }

    #[test]
    fn build_b_spec_values() {
        let x = all_ones(2, 2, "1");
        let series = HermiteSeries::new(vec![0.0, 1.0]);
        let b = build_b(&x, &series, &ell("1"));
        assert_relative_eq!(b[(0, 1)], 1.0, epsilon = 1e-12);
        assert_eq!(b[(0, 0)], 0.0);

        // L < ceil(ell) gives the zero matrix
        let low = HermiteSeries::new(vec![1.0, 1.0]);
        assert_eq!(build_b(&x, &low, &ell("2")), DMatrix::zeros(2, 2));
    }

    #[test]
    fn build_b_matches_enumeration() {
        let x = random_x(6, 4, "2", 21);
        let series = HermiteSeries::new(vec![0.0, 0.0, 1.0, 1.0]);
        let b = build_b(&x, &series, &ell("2"));
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j {
                    0.0
                } else {
                    brute_force_kernel_entry(x.entries(), &series, 2, i, j)
                };
                assert_relative_eq!(b[(i, j)], expect, epsilon = 1e-12, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn build_b_full_spec_values() {
        let x = random_x(5, 4, "1", 2);
        let constant = HermiteSeries::new(vec![2.5]);
        let bf = build_b_full(&x, &constant);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 0.0 } else { 2.5 / 2.0 };
                assert_relative_eq!(bf[(i, j)], expect, epsilon = 1e-12);
            }
        }

        // support only in k >= ceil(ell): B_full == B
        let high = HermiteSeries::new(vec![0.0, 0.7, -0.3]);
        assert_eq!(build_b_full(&x, &high), build_b(&x, &high, &ell("1")));

        // full-range difference matches enumeration
        let series = HermiteSeries::new(vec![0.4, 0.7, -0.3]);
        let bf = build_b_full(&x, &series);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j {
                    0.0
                } else {
                    brute_force_kernel_entry(x.entries(), &series, 0, i, j)
                };
                assert_relative_eq!(bf[(i, j)], expect, epsilon = 1e-11, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn symmetry_and_zero_diagonal_everywhere() {
        let x = random_x(7, 9, "1", 33);
        let f = NonlinearitySpec::named(NamedFn::Relu);
        let series = HermiteSeries::new(vec![0.1, 0.5, 0.25]);
        for m in [
            build_a(&x, &f),
            build_a_tilde(&x, &f),
            build_b(&x, &series, &ell("1")),
            build_b_full(&x, &series),
        ] {
            assert_eq!(m, m.transpose());
            for i in 0..9 {
                assert_eq!(m[(i, i)], 0.0);
            }
        }
    }

    #[test]
    fn build_utd_spec_values() {
        // d = 5 with only c_2 nonzero: M = C(5,2) = 10
        let x = random_x(5, 6, "1", 4);
        let series = HermiteSeries::new(vec![0.0, 0.0, 1.0]);
        let lin = build_utd(&x, &series, &ell("1")).unwrap();
        // the degree-1 block is skipped (c_1 = 0), leaving C(5,2) = 10 rows
        assert_eq!(lin.m_rows(), 10);
        assert_eq!(lin.blocks.len(), 1);
        assert_eq!(lin.blocks[0].degree, 2);
        assert_eq!(lin.blocks[0].tuples.len(), 10);
    }

    #[test]
    fn t_block_value() {
        let params = ModelParams::new(10, 100, ell("1")).unwrap();
        let x = sample_x(&DataDistribution::Gaussian, &params, 8).unwrap();
        let series = HermiteSeries::new(vec![0.0, 0.0, 1.0]);
        let lin = build_utd(&x, &series, &ell("1")).unwrap();
        // c_2 sqrt(2!) sqrt(N/d^2) = sqrt(2 * 100/100) = sqrt 2
        assert_relative_eq!(lin.t_diag[0], 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn cross_path_equivalence() {
        let key = crate::rng::StreamKey::new(314);
        for trial in 0..20u64 {
            let s = key.with(trial);
            let d = 4 + (s.word(0) % 7) as usize; // 4..=10
            let n = 6 + (s.word(1) % 11) as usize; // 6..=16
            let l = 1 + (s.word(2) % 4) as usize; // 1..=4
            let ell_choice = if s.word(3).is_multiple_of(2) { ell("1") } else { ell("3/2") };
            let mut coeffs = vec![0.0; l + 1];
            for (k, c) in coeffs.iter_mut().enumerate() {
                *c = 2.0 * s.uniform(10 + k as u64) - 1.0;
            }
            let series = HermiteSeries::new(coeffs);
            let params = ModelParams::new(d, n, ell_choice).unwrap();
            let x = sample_x(&DataDistribution::Gaussian, &params, s.word(4)).unwrap();
            let b = build_b(&x, &series, &ell_choice);
            let lin = build_utd(&x, &series, &ell_choice).unwrap();
            let recon = lin.u.tr_mul(&(DMatrix::from_diagonal(&lin.t_diag) * &lin.u))
                - DMatrix::from_diagonal(&lin.d_diag);
            let dev = (&b - &recon).abs().max();
            assert!(dev < 1e-10, "trial {trial}: dev {dev}");
        }
    }

    #[test]
    fn size_guard_triggers() {
        let x = random_x(80, 4, "1", 1);
        let series = {
            let mut c = vec![0.0; 6];
            c[5] = 1.0;
            HermiteSeries::new(c)
        };
        // C(80,5) ~ 2.4e7 rows
        assert!(matches!(
            build_utd(&x, &series, &ell("1")),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn build_h_block_structure() {
        let x = random_x(5, 4, "1", 7);
        let series = HermiteSeries::new(vec![0.0, 1.0, 0.5]);
        let lin = build_utd(&x, &series, &ell("1")).unwrap();
        let z = C64::new(0.3, 0.8);
        let h = build_h(&lin, z).unwrap();
        let m = lin.m_rows();
        for mu in 0..m {
            assert_relative_eq!(h[(mu, mu)].re, -1.0 / lin.t_diag[mu], epsilon = 1e-14);
            assert_eq!(h[(mu, mu)].im, 0.0);
        }
        for i in 0..4 {
            let expect = -z - lin.d_diag[i];
            assert!((h[(m + i, m + i)] - expect).norm() < 1e-14);
        }
        for mu in 0..m {
            for i in 0..4 {
                assert_eq!(h[(mu, m + i)].re, lin.u[(mu, i)]);
                assert_eq!(h[(m + i, mu)].re, lin.u[(mu, i)]);
            }
        }
        assert!(build_h(&lin, C64::new(0.0, -1.0)).is_err());
    }

    #[test]
    fn resolvent_corner_matches_direct_inverse() {
        let x = random_x(6, 8, "1", 12);
        let series = HermiteSeries::new(vec![0.0, 0.8, 0.4]);
        let lin = build_utd(&x, &series, &ell("1")).unwrap();
        let b = build_b(&x, &series, &ell("1"));
        let z = C64::new(0.2, 1.0);
        let h = build_h(&lin, z).unwrap();
        let g = h.try_inverse().expect("H invertible");
        let m = lin.m_rows();
        let n = 8;
        let bz = b.map(|v| C64::new(v, 0.0)) - DMatrix::<C64>::identity(n, n) * z;
        let gn_direct = bz.try_inverse().expect("B - z invertible");
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                dev = dev.max((g[(m + i, m + j)] - gn_direct[(i, j)]).norm());
            }
        }
        assert!(dev < 1e-10, "corner deviation {dev}");
    }

    #[test]
    fn hermite_tuple_sum_link_decays() {
        // |H_k(<Xi,Xj>/sqrt d) - d^{-k/2} sum*| over normalized pairs shrinks
        // with d at roughly the predicted 1/sqrt(d) rate.
        let key = crate::rng::StreamKey::new(61);
        for k in [2usize, 3] {
            let mut medians = Vec::new();
            for (step, d) in [50usize, 200, 800].into_iter().enumerate() {
                let mut devs: Vec<f64> = (0..200u64)
                    .map(|t| {
                        let s = key.with(step as u64).with(t);
                        let mut xi: Vec<f64> = (0..d).map(|a| s.normal(a as u64)).collect();
                        let mut xj: Vec<f64> =
                            (0..d).map(|a| s.normal((d + a) as u64)).collect();
                        for v in [&mut xi, &mut xj] {
                            let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
                            let scale = (d as f64).sqrt() / norm;
                            v.iter_mut().for_each(|t| *t *= scale);
                        }
                        let ip: f64 =
                            xi.iter().zip(&xj).map(|(a, b)| a * b).sum::<f64>()
                                / (d as f64).sqrt();
                        let monic = crate::hermite::monic_h_eval(k, ip).unwrap();
                        let w: Vec<f64> =
                            xi.iter().zip(&xj).map(|(a, b)| a * b).collect();
                        let e = elementary_symmetric(&w, k).unwrap();
                        let tuple = factorial(k) * e[k] / (d as f64).sqrt().powi(k as i32);
                        (monic - tuple).abs()
                    })
                    .collect();
                devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                medians.push(devs[devs.len() / 2]);
            }
            for w in medians.windows(2) {
                assert!(
                    w[0] / w[1] >= 1.5,
                    "k={k}: medians {medians:?} shrink less than 1.5x"
                );
            }
        }
    }
}
