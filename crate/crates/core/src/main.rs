use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kernel_spectra::error::Error;
use kernel_spectra::harness::{
    parse_config, run_convergence, run_simulate, run_theory, run_universality, run_verify,
    DensitySpec, ExperimentConfig, ExperimentKind, KernelModel, VerifySuite,
};
use kernel_spectra::hermite::{HermiteSeries, NonlinearitySpec};
use kernel_spectra::models::DataDistribution;
use kernel_spectra::theory::{gammas, ComplexGrid, Gammas, RationalExponent};

#[derive(Parser)]
#[command(
    name = "kernel-spectra",
    version,
    about = "Spectra of random inner-product kernel matrices in the polynomial regime"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build one kernel matrix, write its spectrum, ESD, and theory overlay
    Simulate {
        /// JSON experiment config (kind = simulate); flags below are an
        /// alternative to a config file
        #[arg(long)]
        config: Option<PathBuf>,
        /// gaussian | rademacher | uniform
        #[arg(long)]
        dist: Option<String>,
        #[arg(long)]
        d: Option<usize>,
        /// Explicit N; alternatively derive it from --kappa
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        kappa: Option<f64>,
        /// Scaling exponent as p/q, never a float
        #[arg(long)]
        ell: Option<String>,
        /// Nonlinearity spec: inline JSON or a path to a JSON file
        #[arg(long)]
        f: Option<String>,
        /// A | Atilde | B | Bfull
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Universality sweep over distributions from a config file
    Universality {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Convergence-rate run over a d ladder from a config file
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate the limit law: m(z) on a grid and/or the inverted density
    Theory {
        /// Direct gamma constants "a,b,c"
        #[arg(long, allow_hyphen_values = true)]
        gammas: Option<String>,
        /// Hermite series JSON (inline or file) to derive gammas from
        #[arg(long)]
        series: Option<String>,
        #[arg(long)]
        ell: Option<String>,
        #[arg(long)]
        kappa: Option<f64>,
        /// Grid "tau,nE,nEta" (default 0.5,5,5 when no density is requested)
        #[arg(long)]
        grid: Option<String>,
        /// Density request "Emin,Emax,n,eta"
        #[arg(long, allow_hyphen_values = true)]
        density: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a verification suite and write a JSON report
    Verify {
        /// resolvent | ward | errors | moments | all
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_floats(text: &str, expect: usize, what: &str) -> Result<Vec<f64>, Error> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Config(format!("{what}: {e}")))?;
    if parts.len() != expect {
        return Err(Error::Config(format!(
            "{what}: expected {expect} comma-separated values, got {}",
            parts.len()
        )));
    }
    Ok(parts)
}

/// Inline JSON or a path to a JSON file.
fn json_arg<T: serde::de::DeserializeOwned>(value: &str, what: &str) -> Result<T, Error> {
    let text = if Path::new(value).is_file() {
        std::fs::read_to_string(value)?
    } else {
        value.to_string()
    };
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{what}: {e}")))
}

fn parse_dist(name: &str) -> Result<DataDistribution, Error> {
    match name.to_ascii_lowercase().as_str() {
        "gaussian" => Ok(DataDistribution::Gaussian),
        "rademacher" => Ok(DataDistribution::Rademacher),
        "uniform" => Ok(DataDistribution::Uniform),
        other => Err(Error::Config(format!(
            "dist: expected gaussian|rademacher|uniform, got {other:?} (discrete atoms go in a config file)"
        ))),
    }
}

fn load_config(path: &Path, seed: Option<u64>, kind: ExperimentKind) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    if cfg.kind != kind {
        return Err(Error::Config(format!(
            "config kind {:?} does not match the subcommand",
            cfg.kind
        )));
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Simulate {
            config,
            dist,
            d,
            n,
            kappa,
            ell,
            f,
            model,
            seed,
            bins,
            out,
        } => {
            let cfg = if let Some(path) = config {
                load_config(&path, seed, ExperimentKind::Simulate)?
            } else {
                let d = d.ok_or_else(|| Error::Config("d: required without --config".into()))?;
                let ell = RationalExponent::parse(
                    &ell.ok_or_else(|| Error::Config("ell: required without --config".into()))?,
                )?;
                let nonlinearity: NonlinearitySpec = json_arg(
                    &f.ok_or_else(|| Error::Config("f: required without --config".into()))?,
                    "f",
                )?;
                let model = match model {
                    Some(m) => Some(m.parse::<KernelModel>()?),
                    None => None,
                };
                let cfg = ExperimentConfig {
                    kind: ExperimentKind::Simulate,
                    distributions: vec![parse_dist(dist.as_deref().unwrap_or("gaussian"))?],
                    nonlinearity,
                    ell,
                    kappa: if n.is_none() { Some(kappa.unwrap_or(1.0)) } else { kappa },
                    n,
                    d_ladder: vec![d],
                    trials: 1,
                    seed: seed.unwrap_or(0),
                    grid: None,
                    z0: None,
                    density: None,
                    bins,
                    model,
                };
                cfg.validate()?;
                cfg
            };
            let report = run_simulate(&cfg, &out)?;
            println!(
                "simulate: d={} N={} kappa={:.6} model={} -> {} ({} ms)",
                report.cells[0].d,
                report.cells[0].n,
                report.cells[0].realized_kappa,
                report.summary["model"],
                out.display(),
                report.wall_clock.as_millis()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Universality { config, seed, out } => {
            let cfg = load_config(&config, seed, ExperimentKind::Universality)?;
            let report = run_universality(&cfg, &out)?;
            for cell in &report.cells {
                println!(
                    "universality: {} d={} N={} mean_gap={:.6} [{:.6}, {:.6}]",
                    cell.distribution, cell.d, cell.n, cell.stat_mean, cell.stat_min, cell.stat_max
                );
            }
            println!("wrote {} ({} ms)", out.display(), report.wall_clock.as_millis());
            Ok(ExitCode::SUCCESS)
        }
        Command::Convergence { config, seed, out } => {
            let cfg = load_config(&config, seed, ExperimentKind::Convergence)?;
            let report = run_convergence(&cfg, &out)?;
            for cell in &report.cells {
                println!(
                    "convergence: d={} N={} mean_gap={:.6}",
                    cell.d, cell.n, cell.stat_mean
                );
            }
            println!(
                "slope={} p_ell={} -> {} ({} ms)",
                report.summary["slope"],
                report.summary["p_ell"],
                out.display(),
                report.wall_clock.as_millis()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Theory {
            gammas: gammas_arg,
            series,
            ell,
            kappa,
            grid,
            density,
            out,
        } => {
            let g = match (gammas_arg, series) {
                (Some(text), None) => {
                    let v = parse_floats(&text, 3, "gammas")?;
                    Gammas::new(v[0], v[1], v[2])
                }
                (None, Some(series)) => {
                    let series: HermiteSeries = json_arg(&series, "series")?;
                    let ell = RationalExponent::parse(
                        &ell.ok_or_else(|| Error::Config("ell: required with --series".into()))?,
                    )?;
                    let kappa =
                        kappa.ok_or_else(|| Error::Config("kappa: required with --series".into()))?;
                    gammas(&series, &ell, kappa)?
                }
                _ => {
                    return Err(Error::Config(
                        "theory: pass exactly one of --gammas or --series".into(),
                    ))
                }
            };
            let density_spec = match density {
                Some(text) => {
                    let v = parse_floats(&text, 4, "density")?;
                    Some(DensitySpec {
                        e_min: v[0],
                        e_max: v[1],
                        n: v[2] as usize,
                        eta: v[3],
                    })
                }
                None => None,
            };
            let grid = match (&grid, &density_spec) {
                (Some(text), _) => {
                    let v = parse_floats(text, 3, "grid")?;
                    Some(ComplexGrid::rectangular(v[0], v[1] as usize, v[2] as usize)?)
                }
                (None, None) => Some(ComplexGrid::rectangular(0.5, 5, 5)?),
                (None, Some(_)) => None,
            };
            run_theory(&g, grid.as_ref(), density_spec.as_ref(), &out)?;
            println!("theory: wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite, seed, tol, out } => {
            let suite = suite.parse::<VerifySuite>()?;
            let report = run_verify(suite, seed, tol, &out)?;
            for check in &report.checks {
                println!(
                    "{} {}: value={:.3e} threshold={:.3e}{}",
                    if check.pass { "PASS" } else { "FAIL" },
                    check.name,
                    check.value,
                    check.threshold,
                    if check.hard { "" } else { " (diagnostic)" }
                );
            }
            if report.all_hard_pass {
                println!("verify: all hard checks passed");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("verify: hard check failure");
                Ok(ExitCode::from(4))
            }
        }
    }
}

fn exit_code(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) | Error::Precondition(_) => ExitCode::from(2),
        Error::Resource(_) => ExitCode::from(3),
        _ => ExitCode::FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
