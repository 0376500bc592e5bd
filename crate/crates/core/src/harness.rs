//! Experiment orchestration: universality sweeps, convergence-rate fits,
//! simulate runs with theory overlays, and the verification suites, all
//! driven by a strict JSON config. Every output tree is a pure function of
//! (config, seed): eigensolves and per-entry streams are deterministic, cells
//! run in a work pool but are written in a fixed order, and wall-clock time
//! never enters the serialized reports.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::hermite::{
    approximate, GaussHermiteRule, HermiteSeries, NamedFn, NonlinearitySpec,
};
use crate::models::{
    build_a, build_a_tilde, build_b, build_b_full, build_utd, sample_x, DataDistribution,
    DataMatrix, ModelParams,
};
use crate::rng::{mix64, StreamKey};
use crate::spectra::{eigs, esd, stieltjes, sup_stieltjes_gap, Spectrum, SpectrumMeta};
use crate::theory::{
    density, exponents, gammas, residual, solve_m, support_interval, ComplexGrid, Gammas,
    RationalExponent, C64,
};
use crate::verify::{
    check_full_ward, check_gauss_moment, check_partial_ward, check_resolvent_identities,
    error_norms,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Simulate,
    Universality,
    Convergence,
    Verify,
    Theory,
}

/// Which kernel matrix a run builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelModel {
    A,
    Atilde,
    B,
    Bfull,
}

impl std::str::FromStr for KernelModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(KernelModel::A),
            "atilde" => Ok(KernelModel::Atilde),
            "b" => Ok(KernelModel::B),
            "bfull" => Ok(KernelModel::Bfull),
            other => Err(Error::Config(format!(
                "model: expected one of A, Atilde, B, Bfull, got {other:?}"
            ))),
        }
    }
}

impl KernelModel {
    pub fn label(&self) -> &'static str {
        match self {
            KernelModel::A => "A",
            KernelModel::Atilde => "Atilde",
            KernelModel::B => "B",
            KernelModel::Bfull => "Bfull",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub tau: f64,
    pub n_e: usize,
    pub n_eta: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            tau: 0.5,
            n_e: 5,
            n_eta: 5,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<ComplexGrid> {
        ComplexGrid::rectangular(self.tau, self.n_e, self.n_eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub e_min: f64,
    pub e_max: f64,
    pub n: usize,
    pub eta: f64,
}

fn default_trials() -> usize {
    1
}

/// Strictly parsed experiment description; unknown keys are rejected and
/// ell is a "p/q" string, never a float.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub distributions: Vec<DataDistribution>,
    pub nonlinearity: NonlinearitySpec,
    pub ell: RationalExponent,
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Explicit N; only valid for single-point ladders.
    #[serde(default)]
    pub n: Option<usize>,
    pub d_ladder: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Fixed z0 = [re, im] for convergence runs; defaults to i.
    #[serde(default)]
    pub z0: Option<[f64; 2]>,
    #[serde(default)]
    pub density: Option<DensitySpec>,
    #[serde(default)]
    pub bins: Option<usize>,
    #[serde(default)]
    pub model: Option<KernelModel>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_ladder.is_empty() {
            return Err(Error::Config("d_ladder: must be non-empty".into()));
        }
        if !self.d_ladder.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("d_ladder: must be strictly increasing".into()));
        }
        if self.trials < 1 {
            return Err(Error::Config("trials: must be >= 1".into()));
        }
        if self.n.is_some() && self.d_ladder.len() > 1 {
            return Err(Error::Config(
                "n: explicit N requires a single-point d_ladder; use kappa".into(),
            ));
        }
        if self.n.is_none() && self.kappa.is_none() {
            return Err(Error::Config("kappa: required when n is not given".into()));
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0) {
                return Err(Error::Config(format!("kappa: {k} must be positive")));
            }
        }
        for dist in &self.distributions {
            dist.validate().map_err(|e| Error::Config(format!("distributions: {e}")))?;
        }
        self.nonlinearity
            .validate()
            .map_err(|e| Error::Config(format!("nonlinearity: {e}")))?;
        match self.kind {
            ExperimentKind::Universality => {
                if self.distributions.is_empty() {
                    return Err(Error::Config(
                        "distributions: universality needs at least one".into(),
                    ));
                }
            }
            ExperimentKind::Convergence => {
                if self.d_ladder.len() < 3 {
                    return Err(Error::Config(
                        "d_ladder: convergence needs at least 3 points".into(),
                    ));
                }
                if let Some([_, im]) = self.z0 {
                    if !(im > 0.0) {
                        return Err(Error::Config("z0: must lie in the upper half-plane".into()));
                    }
                }
            }
            ExperimentKind::Simulate if self.d_ladder.len() != 1 => {
                return Err(Error::Config("d_ladder: simulate takes exactly one d".into()));
            }
            _ => {}
        }
        if let Some(g) = &self.grid {
            g.build()?;
        }
        if let Some(ds) = &self.density {
            if !(ds.e_min < ds.e_max) || ds.n < 2 {
                return Err(Error::Config("density: need e_min < e_max and n >= 2".into()));
            }
            if !(1e-8..=1e-3).contains(&ds.eta) {
                return Err(Error::Config("density.eta: outside [1e-8, 1e-3]".into()));
            }
        }
        Ok(())
    }

    fn params_for(&self, d: usize) -> Result<ModelParams> {
        let params = match self.n {
            Some(n) => ModelParams::new(d, n, self.ell)?,
            None => ModelParams::from_kappa(d, self.kappa.unwrap(), self.ell)?,
        };
        // desk-scale guard: dense N x N eigenproblems and d x N data only
        if params.n > 20_000 || params.d.saturating_mul(params.n) > 50_000_000 {
            return Err(Error::Resource(format!(
                "d = {}, N = {} exceeds the desk-scale guard (N <= 20000, d*N <= 5e7)",
                params.d, params.n
            )));
        }
        Ok(params)
    }

    fn distribution_list(&self) -> Vec<DataDistribution> {
        if self.distributions.is_empty() {
            vec![DataDistribution::Gaussian]
        } else {
            self.distributions.clone()
        }
    }

    fn grid_spec(&self) -> GridSpec {
        self.grid.unwrap_or_default()
    }

    fn model(&self) -> KernelModel {
        self.model.unwrap_or(KernelModel::A)
    }
}

/// Strict JSON parsing with field paths in error messages.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Stable hex hash of the canonical config serialization.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    let mut h = 0x6b65_726e_656cu64;
    for chunk in canonical.as_bytes().chunks(8) {
        let mut w = [0u8; 8];
        w[..chunk.len()].copy_from_slice(chunk);
        h = mix64(h ^ u64::from_le_bytes(w));
    }
    format!("{h:016x}")
}

/// Statistics for one (distribution, d) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub distribution: String,
    pub d: usize,
    pub n: usize,
    pub realized_kappa: f64,
    pub seed: u64,
    pub trials: usize,
    pub stat_mean: f64,
    pub stat_min: f64,
    pub stat_max: f64,
    pub per_trial: Vec<f64>,
}

/// Machine-readable run summary; wall-clock is kept out of the serialized
/// form so that re-runs are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub version: String,
    pub config_hash: String,
    pub cells: Vec<CellReport>,
    pub summary: serde_json::Value,
    #[serde(skip)]
    pub wall_clock: Duration,
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

fn write_report(report: &RunReport, out_dir: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    write_text(&out_dir.join("report.json"), &json)
}

/// Hermite coefficients used for the limit law: exact for polynomial specs,
/// otherwise the degree-8 truncation with the tail adjustment (so that the
/// semicircle weight is preserved).
pub fn nonlinearity_series(spec: &NonlinearitySpec) -> Result<HermiteSeries> {
    if let Some(series) = spec.exact_series()? {
        return Ok(series);
    }
    let rule = GaussHermiteRule::new(200)?;
    approximate(spec, 8, &rule)
}

/// Seed for one experiment cell; depends on the distribution name, never on
/// its position in the list.
fn cell_seed(seed: u64, dist: &DataDistribution, d: usize, trial: usize) -> u64 {
    StreamKey::new(seed)
        .with_str(&dist.label())
        .with(d as u64)
        .word(trial as u64)
}

fn build_model_matrix(
    model: KernelModel,
    x: &DataMatrix,
    f: &NonlinearitySpec,
    series: &HermiteSeries,
    ell: &RationalExponent,
) -> DMatrix<f64> {
    match model {
        KernelModel::A => build_a(x, f),
        KernelModel::Atilde => build_a_tilde(x, f),
        KernelModel::B => build_b(x, series, ell),
        KernelModel::Bfull => build_b_full(x, series),
    }
}

fn model_spectrum(
    cfg: &ExperimentConfig,
    dist: &DataDistribution,
    d: usize,
    trial: usize,
    series: &HermiteSeries,
) -> Result<(Spectrum, ModelParams, u64)> {
    let params = cfg.params_for(d)?;
    let seed = cell_seed(cfg.seed, dist, d, trial);
    let x = sample_x(dist, &params, seed)?;
    let matrix = build_model_matrix(cfg.model(), &x, &cfg.nonlinearity, series, &cfg.ell);
    let meta = SpectrumMeta {
        model: cfg.model().label().to_string(),
        d,
        n: params.n,
        ell: Some(cfg.ell),
        seed,
    };
    Ok((eigs(&matrix, meta)?, params, seed))
}

fn cell_stats(values: &[f64]) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

/// Universality sweep: per (distribution, d, trial), the sup over the grid of
/// |s(z) - m(z)| with the limit law from the realized kappa.
pub fn run_universality(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    if cfg.kind != ExperimentKind::Universality {
        return Err(Error::Precondition("config kind must be universality".into()));
    }
    cfg.validate()?;
    let started = Instant::now();
    let series = nonlinearity_series(&cfg.nonlinearity)?;
    let grid = cfg.grid_spec().build()?;

    let tasks: Vec<(DataDistribution, usize)> = cfg
        .distribution_list()
        .into_iter()
        .flat_map(|dist| cfg.d_ladder.iter().map(move |&d| (dist.clone(), d)))
        .collect();

    let cells: Vec<CellReport> = tasks
        .par_iter()
        .map(|(dist, d)| -> Result<CellReport> {
            let mut per_trial = Vec::with_capacity(cfg.trials);
            let mut params = None;
            for trial in 0..cfg.trials {
                let (spectrum, p, _) = model_spectrum(cfg, dist, *d, trial, &series)?;
                let g = gammas(&series, &cfg.ell, p.kappa())?;
                per_trial.push(sup_stieltjes_gap(&spectrum, &g, &grid)?);
                params = Some(p);
            }
            let params = params.unwrap();
            let (mean, min, max) = cell_stats(&per_trial);
            Ok(CellReport {
                distribution: dist.label(),
                d: *d,
                n: params.n,
                realized_kappa: params.kappa(),
                seed: cfg.seed,
                trials: cfg.trials,
                stat_mean: mean,
                stat_min: min,
                stat_max: max,
                per_trial,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = String::from("distribution,d,n,realized_kappa,trial,seed,sup_gap\n");
    for ((dist, _), cell) in tasks.iter().zip(&cells) {
        for (trial, gap) in cell.per_trial.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                cell.distribution,
                cell.d,
                cell.n,
                g17(cell.realized_kappa),
                trial,
                cell_seed(cfg.seed, dist, cell.d, trial),
                g17(*gap)
            ));
        }
    }
    write_text(&out_dir.join("universality.csv"), &csv)?;

    let report = RunReport {
        experiment: "universality".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(cfg),
        cells,
        summary: serde_json::json!({
            "grid": { "tau": cfg.grid_spec().tau, "n_e": cfg.grid_spec().n_e, "n_eta": cfg.grid_spec().n_eta },
            "model": cfg.model().label(),
        }),
        wall_clock: started.elapsed(),
    };
    write_report(&report, out_dir)?;
    Ok(report)
}

/// Convergence run: gap(d) = |s(z0) - m(z0)| averaged over trials, with a
/// least-squares slope of log gap against log d.
pub fn run_convergence(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    if cfg.kind != ExperimentKind::Convergence {
        return Err(Error::Precondition("config kind must be convergence".into()));
    }
    cfg.validate()?;
    if cfg.d_ladder.len() < 3 {
        return Err(Error::Precondition("convergence needs >= 3 ladder points".into()));
    }
    let started = Instant::now();
    let series = nonlinearity_series(&cfg.nonlinearity)?;
    let z0 = cfg
        .z0
        .map(|[re, im]| C64::new(re, im))
        .unwrap_or(C64::new(0.0, 1.0));
    let dist = cfg.distribution_list()[0].clone();

    let cells: Vec<CellReport> = cfg
        .d_ladder
        .par_iter()
        .map(|&d| -> Result<CellReport> {
            let mut per_trial = Vec::with_capacity(cfg.trials);
            let mut params = None;
            for trial in 0..cfg.trials {
                let (spectrum, p, _) = model_spectrum(cfg, &dist, d, trial, &series)?;
                let g = gammas(&series, &cfg.ell, p.kappa())?;
                let gap = (stieltjes(&spectrum, z0)? - solve_m(z0, &g)?).norm();
                per_trial.push(gap);
                params = Some(p);
            }
            let params = params.unwrap();
            let (mean, min, max) = cell_stats(&per_trial);
            Ok(CellReport {
                distribution: dist.label(),
                d,
                n: params.n,
                realized_kappa: params.kappa(),
                seed: cfg.seed,
                trials: cfg.trials,
                stat_mean: mean,
                stat_min: min,
                stat_max: max,
                per_trial,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // least-squares slope of log(mean gap) on log d
    let xs: Vec<f64> = cells.iter().map(|c| (c.d as f64).ln()).collect();
    let ys: Vec<f64> = cells.iter().map(|c| c.stat_mean.ln()).collect();
    let n = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx = xs.iter().map(|v| v * v).sum::<f64>();
    let sxy = xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);

    let exp = exponents(&cfg.ell);
    let mut csv = String::from("d,n,realized_kappa,trial,seed,gap\n");
    for cell in &cells {
        for (trial, gap) in cell.per_trial.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                cell.d,
                cell.n,
                g17(cell.realized_kappa),
                trial,
                cell_seed(cfg.seed, &dist, cell.d, trial),
                g17(*gap)
            ));
        }
    }
    write_text(&out_dir.join("convergence.csv"), &csv)?;

    let report = RunReport {
        experiment: "convergence".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(cfg),
        cells,
        summary: serde_json::json!({
            "z0": [z0.re, z0.im],
            "slope": slope,
            "p_ell": format!("{}/{}", exp.p_ell.numer(), exp.p_ell.denom()),
            "theory_exponent": -(*exp.p_ell.numer() as f64 / *exp.p_ell.denom() as f64),
            "model": cfg.model().label(),
        }),
        wall_clock: started.elapsed(),
    };
    write_report(&report, out_dir)?;
    Ok(report)
}

/// Single simulate run: spectrum CSV, ESD CSV, and the theory density on the
/// shared E-grid of bin centers, plus a JSON report.
pub fn run_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    if cfg.kind != ExperimentKind::Simulate {
        return Err(Error::Precondition("config kind must be simulate".into()));
    }
    cfg.validate()?;
    let started = Instant::now();
    let series = nonlinearity_series(&cfg.nonlinearity)?;
    let dist = cfg.distribution_list()[0].clone();
    let d = cfg.d_ladder[0];
    let (spectrum, params, seed) = model_spectrum(cfg, &dist, d, 0, &series)?;
    let g = gammas(&series, &cfg.ell, params.kappa())?;

    let bins = cfg.bins.unwrap_or(200);
    let range = match cfg.density {
        Some(ds) => (ds.e_min, ds.e_max),
        None => support_interval(&g)?,
    };
    let measure = esd(&spectrum, bins, range)?;

    let mut buf = Vec::new();
    spectrum.write_csv(&mut buf)?;
    write_text(&out_dir.join("spectrum.csv"), &String::from_utf8(buf).unwrap())?;

    let mut buf = Vec::new();
    measure.write_csv(&mut buf)?;
    write_text(&out_dir.join("esd.csv"), &String::from_utf8(buf).unwrap())?;

    let eta = cfg.density.map(|ds| ds.eta).unwrap_or(1e-4);
    let centers: Vec<f64> = measure
        .bin_edges()
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect();
    let curve = density(&g, &centers, eta)?;
    let mut csv = String::from("E,rho\n");
    for (e, rho) in &curve {
        csv.push_str(&format!("{},{}\n", g17(*e), g17(*rho)));
    }
    write_text(&out_dir.join("density.csv"), &csv)?;

    let mass = measure.total_mass();
    let report = RunReport {
        experiment: "simulate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(cfg),
        cells: vec![CellReport {
            distribution: dist.label(),
            d,
            n: params.n,
            realized_kappa: params.kappa(),
            seed,
            trials: 1,
            stat_mean: mass,
            stat_min: mass,
            stat_max: mass,
            per_trial: vec![mass],
        }],
        summary: serde_json::json!({
            "model": cfg.model().label(),
            "gammas": { "gamma_a": g.gamma_a, "gamma_b": g.gamma_b, "gamma_c": g.gamma_c },
            "esd_range": [range.0, range.1],
            "esd_bins": bins,
            "esd_mass": mass,
            "density_eta": eta,
            "files": ["spectrum.csv", "esd.csv", "density.csv"],
        }),
        wall_clock: started.elapsed(),
    };
    write_report(&report, out_dir)?;
    Ok(report)
}

/// Theory-only evaluation: m(z) over a grid and/or the inverted density.
pub fn run_theory(
    g: &Gammas,
    grid: Option<&ComplexGrid>,
    density_spec: Option<&DensitySpec>,
    out_dir: &Path,
) -> Result<()> {
    if grid.is_none() && density_spec.is_none() {
        return Err(Error::Config("theory: need a grid or a density request".into()));
    }
    if let Some(grid) = grid {
        let mut csv = String::from("z_re,z_im,m_re,m_im,residual_abs\n");
        for &z in grid.points() {
            let m = solve_m(z, g)?;
            let r = residual(m, z, g)?.norm();
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                g17(z.re),
                g17(z.im),
                g17(m.re),
                g17(m.im),
                g17(r)
            ));
        }
        write_text(&out_dir.join("theory_grid.csv"), &csv)?;
    }
    if let Some(ds) = density_spec {
        let grid: Vec<f64> = (0..ds.n)
            .map(|i| ds.e_min + (ds.e_max - ds.e_min) * i as f64 / (ds.n - 1) as f64)
            .collect();
        let curve = density(g, &grid, ds.eta)?;
        let mut csv = String::from("E,rho\n");
        for (e, rho) in &curve {
            csv.push_str(&format!("{},{}\n", g17(*e), g17(*rho)));
        }
        write_text(&out_dir.join("density.csv"), &csv)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifySuite {
    Resolvent,
    Ward,
    Errors,
    Moments,
    All,
}

impl std::str::FromStr for VerifySuite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resolvent" => Ok(VerifySuite::Resolvent),
            "ward" => Ok(VerifySuite::Ward),
            "errors" => Ok(VerifySuite::Errors),
            "moments" => Ok(VerifySuite::Moments),
            "all" => Ok(VerifySuite::All),
            other => Err(Error::Config(format!(
                "suite: expected resolvent|ward|errors|moments|all, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// Hard checks gate the exit code; soft ones are banded diagnostics.
    pub hard: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: String,
    pub seed: u64,
    pub tol: f64,
    pub checks: Vec<VerifyCheck>,
    pub all_hard_pass: bool,
    /// Provenance notes for banded diagnostics.
    pub notes: Vec<String>,
}

/// Record a "value below threshold" check.
fn push_check(checks: &mut Vec<VerifyCheck>, name: String, value: f64, threshold: f64, hard: bool) {
    checks.push(VerifyCheck {
        name,
        value,
        threshold,
        hard,
        pass: value < threshold,
    });
}

/// Record a "value at least threshold" check (decay ratios).
fn push_floor_check(
    checks: &mut Vec<VerifyCheck>,
    name: String,
    value: f64,
    threshold: f64,
    hard: bool,
) {
    checks.push(VerifyCheck {
        name,
        value,
        threshold,
        hard,
        pass: value >= threshold,
    });
}

/// Run one of the verification suites and write `verify_report.json`.
pub fn run_verify(suite: VerifySuite, seed: u64, tol: f64, out_dir: &Path) -> Result<VerifyReport> {
    let ell1 = RationalExponent::parse("1").unwrap();
    let mut checks = Vec::new();
    let mut notes = Vec::new();

    if matches!(suite, VerifySuite::Resolvent | VerifySuite::All) {
        let shapes: [(usize, usize, Vec<f64>, &str); 5] = [
            (6, 8, vec![0.0, 1.0, 1.0], "1"),
            (8, 12, vec![0.0, 0.0, 1.0, 0.3], "3/2"),
            (5, 9, vec![0.0, 0.7, 0.2], "1"),
            (7, 10, vec![0.0, 0.0, 1.0, 1.0], "2"),
            (8, 11, vec![0.0, 0.5, 0.5, 0.25], "1"),
        ];
        for (idx, (d, n, coeffs, l)) in shapes.iter().enumerate() {
            let ell = RationalExponent::parse(l).unwrap();
            let params = ModelParams::new(*d, *n, ell)?;
            let x = sample_x(&DataDistribution::Gaussian, &params, seed + idx as u64)?;
            let lin = build_utd(&x, &HermiteSeries::new(coeffs.clone()), &ell)?;
            for (zi, z) in [C64::new(0.0, 1.0), C64::new(2.0, 0.5)].into_iter().enumerate() {
                let report = check_resolvent_identities(&lin, z, tol)?;
                push_check(
                    &mut checks,
                    format!("resolvent/instance{idx}/z{zi}"),
                    report.max_deviation(),
                    tol,
                    true,
                );
            }
        }
    }

    if matches!(suite, VerifySuite::Ward | VerifySuite::All) {
        let series = HermiteSeries::new(vec![0.0, 0.0, 1.0]);
        let mut ratios = Vec::new();
        for d in [8usize, 16, 32] {
            let params = ModelParams::new(d, d, ell1)?;
            let x = sample_x(&DataDistribution::Gaussian, &params, seed)?;
            let lin = build_utd(&x, &series, &ell1)?;
            let z = C64::new(0.0, 1.0);
            let partial = check_partial_ward(&lin, z, 2, 2, 1, 8)?;
            let full = check_full_ward(&lin, z, 8)?;
            ratios.push(partial);
            push_check(&mut checks, format!("ward/partial_d{d}"), partial, f64::INFINITY, false);
            push_check(&mut checks, format!("ward/full_d{d}"), full, f64::INFINITY, false);
        }
        let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
        push_check(&mut checks, "ward/partial_band".into(), max / min, 10.0, false);
        notes.push(
            "ward ratios are diagnostics; the factor-10 band is an artifact choice".into(),
        );
    }

    if matches!(suite, VerifySuite::Errors | VerifySuite::All) {
        let f = NonlinearitySpec::hermite(vec![0.0, 1.0, 1.0]);
        let series = HermiteSeries::new(vec![0.0, 1.0, 1.0]);
        let mut prev: Option<(f64, f64)> = None;
        for d in [64usize, 256] {
            let params = ModelParams::new(d, d, ell1)?;
            let x = sample_x(&DataDistribution::Gaussian, &params, seed)?;
            let norms = error_norms(&x, &f, &series, &ell1)?;
            let sqrt_n = (params.n as f64).sqrt();
            let cur = (
                norms.a_minus_a_tilde / sqrt_n,
                norms.a_tilde_minus_b_tilde_full / sqrt_n,
            );
            // with ell = 1 the low-rank bound is C(d, 0) = 1 exactly
            push_check(
                &mut checks,
                format!("errors/rank_bound_d{d}"),
                (norms.low_rank_bound as f64 - 1.0).abs(),
                0.5,
                true,
            );
            if let Some(p) = prev {
                push_floor_check(
                    &mut checks,
                    format!("errors/decay_a_atilde_d{d}"),
                    p.0 / cur.0,
                    1.5,
                    true,
                );
                push_floor_check(
                    &mut checks,
                    format!("errors/decay_atilde_btilde_d{d}"),
                    p.1 / cur.1,
                    1.5,
                    true,
                );
            }
            prev = Some(cur);
        }
    }

    if matches!(suite, VerifySuite::Moments | VerifySuite::All) {
        let linear = NonlinearitySpec::MonomialPolynomial { coeffs: vec![0.0, 1.0] };
        let check = check_gauss_moment(&linear, &DataDistribution::Gaussian, 50, 50_000, seed)?;
        push_check(
            &mut checks,
            "moments/linear_mc_vs_gauss".into(),
            check.gap,
            9.0 / (50_000f64).sqrt(),
            true,
        );
        let square = NonlinearitySpec::MonomialPolynomial { coeffs: vec![0.0, 0.0, 1.0] };
        let check = check_gauss_moment(&square, &DataDistribution::Gaussian, 200, 100_000, seed)?;
        push_check(&mut checks, "moments/square_gap".into(), check.gap, 0.1, true);
        let relu = NonlinearitySpec::named(NamedFn::Relu);
        let check = check_gauss_moment(&relu, &DataDistribution::Rademacher, 100, 50_000, seed)?;
        push_check(&mut checks, "moments/relu_gap".into(), check.gap, 0.05, true);
    }

    let report = VerifyReport {
        suite: format!("{suite:?}").to_lowercase(),
        seed,
        tol,
        all_hard_pass: checks.iter().all(|c| !c.hard || c.pass),
        checks,
        notes,
    };
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_text(&out_dir.join("verify_report.json"), &json)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_config(kind: &str) -> String {
        format!(
            r#"{{
  "kind": "{kind}",
  "distributions": ["gaussian", "rademacher"],
  "nonlinearity": {{"variant": "hermite-series", "coeffs": [0.0, 0.0, 1.0]}},
  "ell": "1",
  "kappa": 1.0,
  "d_ladder": [40, 60, 90],
  "trials": 2,
  "seed": 7
}}"#
        )
    }

    #[test]
    fn parse_config_spec_values() {
        let cfg = parse_config(&sample_config("universality")).unwrap();
        assert_eq!(cfg.ell, RationalExponent::parse("1").unwrap());
        assert_eq!(cfg.trials, 2);

        // rational string form
        let text = sample_config("universality").replace("\"1\"", "\"3/2\"");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.ell, RationalExponent::parse("3/2").unwrap());

        // floats are rejected for ell
        let text = sample_config("universality").replace("\"ell\": \"1\"", "\"ell\": \"1.5\"");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("ell"), "{err}");

        // unknown keys are rejected with the field named
        let text = sample_config("universality").replace("\"seed\": 7", "\"seed\": 7, \"zeed\": 1");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("zeed"), "{err}");

        // non-positive dimensions
        let text = sample_config("universality").replace("[40, 60, 90]", "[40, 40]");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn config_round_trip_is_normalized() {
        let cfg = parse_config(&sample_config("universality")).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back = parse_config(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(config_hash(&cfg), config_hash(&back));
    }

    #[test]
    fn universality_runs_and_is_deterministic() {
        let cfg = parse_config(
            r#"{
  "kind": "universality",
  "distributions": ["gaussian", "rademacher"],
  "nonlinearity": {"variant": "hermite-series", "coeffs": [0.0, 0.0, 1.0]},
  "ell": "1",
  "kappa": 1.0,
  "d_ladder": [48],
  "trials": 2,
  "seed": 11
}"#,
        )
        .unwrap();
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let r1 = run_universality(&cfg, dir1.path()).unwrap();
        let _ = run_universality(&cfg, dir2.path()).unwrap();
        assert_eq!(r1.cells.len(), 2);
        for file in ["universality.csv", "report.json"] {
            let a = std::fs::read(dir1.path().join(file)).unwrap();
            let b = std::fs::read(dir2.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
        }
    }

    #[test]
    fn universality_distribution_order_only_permutes_rows() {
        let base = parse_config(
            r#"{
  "kind": "universality",
  "distributions": ["gaussian", "rademacher"],
  "nonlinearity": {"variant": "hermite-series", "coeffs": [0.0, 1.0]},
  "ell": "1",
  "kappa": 1.0,
  "d_ladder": [32],
  "trials": 1,
  "seed": 3
}"#,
        )
        .unwrap();
        let mut swapped = base.clone();
        swapped.distributions.reverse();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let r1 = run_universality(&base, d1.path()).unwrap();
        let r2 = run_universality(&swapped, d2.path()).unwrap();
        let mut cells1: Vec<(String, f64)> = r1
            .cells
            .iter()
            .map(|c| (c.distribution.clone(), c.stat_mean))
            .collect();
        let mut cells2: Vec<(String, f64)> = r2
            .cells
            .iter()
            .map(|c| (c.distribution.clone(), c.stat_mean))
            .collect();
        assert_ne!(cells1, cells2); // order differs
        cells1.sort_by(|a, b| a.0.cmp(&b.0));
        cells2.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(cells1, cells2); // content does not
    }

    #[test]
    fn convergence_requires_three_points() {
        let text = sample_config("convergence").replace("[40, 60, 90]", "[40, 60]");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn convergence_reports_slope_and_p_ell() {
        let cfg = parse_config(
            r#"{
  "kind": "convergence",
  "distributions": ["gaussian"],
  "nonlinearity": {"variant": "hermite-series", "coeffs": [0.0, 0.0, 1.0]},
  "ell": "1/2",
  "kappa": 1.0,
  "d_ladder": [16, 32, 64],
  "trials": 1,
  "seed": 5
}"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report = run_convergence(&cfg, dir.path()).unwrap();
        assert_eq!(report.summary["p_ell"], "1/4");
        assert!(report.summary["slope"].is_number());
        assert!(dir.path().join("convergence.csv").exists());
    }

    #[test]
    fn realized_kappa_bookkeeping() {
        let cfg = parse_config(&sample_config("universality")).unwrap();
        for &d in &cfg.d_ladder {
            let params = cfg.params_for(d).unwrap();
            let target = cfg.kappa.unwrap() * cfg.ell.pow(d);
            assert!((params.n as f64 - target).abs() < 1.0);
        }
    }

    #[test]
    fn simulate_outputs_share_theory_grid() {
        let base = r#"{
  "kind": "simulate",
  "nonlinearity": {"variant": "hermite-series", "coeffs": [0.0, 1.0]},
  "ell": "1",
  "kappa": 1.0,
  "d_ladder": [64],
  "trials": 1,
  "seed": 9,
  "model": "MODEL"
}"#;
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let cfg_a = parse_config(&base.replace("MODEL", "a")).unwrap();
        let cfg_b = parse_config(&base.replace("MODEL", "b")).unwrap();
        let ra = run_simulate(&cfg_a, dir_a.path()).unwrap();
        let rb = run_simulate(&cfg_b, dir_b.path()).unwrap();
        // identical theory density for the same (series, ell, kappa)
        let da = std::fs::read(dir_a.path().join("density.csv")).unwrap();
        let db = std::fs::read(dir_b.path().join("density.csv")).unwrap();
        assert_eq!(da, db);
        // ESD keeps nearly all mass inside the default range
        assert!(ra.cells[0].stat_mean >= 0.99 && ra.cells[0].stat_mean <= 1.0 + 1e-12);
        assert!(rb.cells[0].stat_mean >= 0.99);
        // byte-identical re-run
        let dir_c = tempfile::tempdir().unwrap();
        run_simulate(&cfg_a, dir_c.path()).unwrap();
        for file in ["spectrum.csv", "esd.csv", "density.csv", "report.json"] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let c = std::fs::read(dir_c.path().join(file)).unwrap();
            assert_eq!(a, c, "{file} not reproducible");
        }
    }

    #[test]
    fn theory_csv_has_small_residuals() {
        let dir = tempfile::tempdir().unwrap();
        let grid = ComplexGrid::rectangular(0.5, 4, 4).unwrap();
        run_theory(
            &Gammas::new(1.0, 1.0, 1.0),
            Some(&grid),
            Some(&DensitySpec {
                e_min: -3.0,
                e_max: 3.0,
                n: 21,
                eta: 1e-4,
            }),
            dir.path(),
        )
        .unwrap();
        let text = std::fs::read_to_string(dir.path().join("theory_grid.csv")).unwrap();
        assert!(text.starts_with("z_re,z_im,m_re,m_im,residual_abs\n"));
        for line in text.lines().skip(1) {
            let resid: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
            assert!(resid < 1e-12);
        }
        let dens = std::fs::read_to_string(dir.path().join("density.csv")).unwrap();
        assert_eq!(dens.lines().count(), 22);
    }

    #[test]
    fn verify_resolvent_suite_passes() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_verify(VerifySuite::Resolvent, 0, 1e-9, dir.path()).unwrap();
        assert!(report.all_hard_pass, "{report:?}");
        assert_eq!(report.checks.len(), 10);
        assert!(dir.path().join("verify_report.json").exists());
    }
}
