//! Gaussian quadrature rules built by Golub-Welsch.
//!
//! Nodes and weights come from the eigendecomposition of the symmetric
//! tridiagonal Jacobi matrix of the orthogonal-polynomial recurrence. Rules
//! are computed once per order and cached (write-once, read-many).

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

type RuleCache = OnceLock<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>>;

const INV_SQRT_TAU: f64 = 0.398_942_280_401_432_7; // 1/sqrt(2*pi)

/// Standard-normal density.
#[inline]
pub(crate) fn gaussian_density(x: f64) -> f64 {
    INV_SQRT_TAU * (-0.5 * x * x).exp()
}

/// Gauss-Hermite rule for expectations against the standard Gaussian,
/// i.e. weights are normalized so that they sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermiteRule {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermiteRule {
    /// Rule of the given order. An order-n rule integrates polynomials of
    /// degree up to 2n-1 exactly against the Gaussian weight.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Precondition("quadrature order must be >= 1".into()));
        }
        static CACHE: RuleCache = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        {
            let guard = cache.lock().unwrap();
            if let Some((n, w)) = guard.get(&order) {
                return Ok(GaussHermiteRule {
                    order,
                    nodes: n.clone(),
                    weights: w.clone(),
                });
            }
        }
        // Probabilists' Hermite recurrence H_{k+1} = x H_k - k H_{k-1}:
        // Jacobi matrix has zero diagonal and off-diagonal sqrt(k).
        let offdiag: Vec<f64> = (1..order).map(|k| (k as f64).sqrt()).collect();
        let (nodes, weights) = golub_welsch(&offdiag, 1.0);
        let mut guard = cache.lock().unwrap();
        guard
            .entry(order)
            .or_insert_with(|| (nodes.clone(), weights.clone()));
        Ok(GaussHermiteRule {
            order,
            nodes,
            weights,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// E[g(Z)] for Z ~ N(0,1).
    pub fn expectation(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(x))
            .sum()
    }
}

/// Gauss-Legendre rule on [-1, 1]; weights sum to 2. Internal building block
/// for piecewise integration of kinked or discontinuous nonlinearities.
pub(crate) fn legendre_rule(order: usize) -> (Vec<f64>, Vec<f64>) {
    static CACHE: RuleCache = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    {
        let guard = cache.lock().unwrap();
        if let Some(rw) = guard.get(&order) {
            return rw.clone();
        }
    }
    let offdiag: Vec<f64> = (1..order)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let rw = golub_welsch(&offdiag, 2.0);
    let mut guard = cache.lock().unwrap();
    guard.entry(order).or_insert_with(|| rw.clone());
    rw
}

/// Nodes and weights from a symmetric tridiagonal Jacobi matrix with zero
/// diagonal; `mu0` is the total mass of the weight measure.
fn golub_welsch(offdiag: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let n = offdiag.len() + 1;
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for (k, &b) in offdiag.iter().enumerate() {
        jacobi[(k, k + 1)] = b;
        jacobi[(k + 1, k)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // The measures used here are symmetric; enforce exact node/weight symmetry.
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -x;
        nodes[j] = x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Integration beyond this point contributes less than 1e-30 for any
/// polynomially bounded integrand handled by the crate.
const TAIL_CUTOFF: f64 = 16.0;
const MAX_PANEL_WIDTH: f64 = 2.0;

/// Effective nodes and weights for E[g(Z)], splitting the real line at the
/// given breakpoints and applying a Gauss-Legendre rule per smooth panel.
/// With no breakpoints this is just the Gauss-Hermite rule itself.
pub(crate) fn effective_nodes(
    rule: &GaussHermiteRule,
    breakpoints: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    if breakpoints.is_empty() {
        return (rule.nodes.clone(), rule.weights.clone());
    }
    let mut cuts: Vec<f64> = vec![-TAIL_CUTOFF];
    for &b in breakpoints {
        if b > -TAIL_CUTOFF && b < TAIL_CUTOFF {
            cuts.push(b);
        }
    }
    cuts.push(TAIL_CUTOFF);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();

    let panel_order = rule.order.clamp(24, 64);
    let (gl_nodes, gl_weights) = legendre_rule(panel_order);

    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for seg in cuts.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        let parts = ((hi - lo) / MAX_PANEL_WIDTH).ceil().max(1.0) as usize;
        let step = (hi - lo) / parts as f64;
        for p in 0..parts {
            let a = lo + p as f64 * step;
            let b = a + step;
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (&u, &w) in gl_nodes.iter().zip(&gl_weights) {
                let x = mid + half * u;
                nodes.push(x);
                weights.push(w * half * gaussian_density(x));
            }
        }
    }
    (nodes, weights)
}
