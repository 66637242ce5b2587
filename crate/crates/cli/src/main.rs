//! `frontier-mm`: batch front end for frontier estimation, moment bounds,
//! distribution fitting and Monte Carlo experiments.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use frontier_mm::bounds::{bound_report, hankel_feasibility, raw_to_central};
use frontier_mm::dist::Family;
use frontier_mm::fit::{fit_deviation_distribution, FitTarget, Neighborhood};
use frontier_mm::moments::pooled_moments;
use frontier_mm::panel::load_panel_csv;
use frontier_mm::pipeline::{run_estimate, write_frontier_csv};
use frontier_mm::residualize::{decompose_residuals, fit_conditional_mean, BasisSpec, Conditioning, RidgePenalty};
use frontier_mm::sim::{generate_panel, replication_rng, run_experiment, write_sim_panel, SampleTruth};

use config::{GridSpec, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "frontier-mm", version, about = "Frontier estimation by within/between moments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed (falls back to FRONTIER_MM_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Conditional mean, moments, per-firm fits and frontier.
    Estimate {
        #[command(flatten)]
        panel: PanelArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Lower bounds on the mean deviation from central moments or a panel.
    Bound {
        #[arg(long, allow_hyphen_values = true)]
        mu2: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        mu3: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        mu4: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        mu5: Option<f64>,
        /// Mean, for the full Hankel screen.
        #[arg(long, allow_hyphen_values = true)]
        mean: Option<f64>,
        #[command(flatten)]
        panel: PanelArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Fit a deviation family to a moment triple.
    FitDist {
        #[arg(long, allow_hyphen_values = true)]
        mu2: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        mu3: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        mu4: Option<f64>,
        #[arg(long)]
        n_eff: Option<f64>,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Hankel determinant screen of raw moments m_1, m_2, ...
    CheckFeasibility {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        moments: Option<Vec<f64>>,
    },
    /// Monte Carlo experiment.
    Simulate {
        /// JSON simulation design; replaces the `sim` section of the config.
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        /// Firm counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        /// Square (log a, log b) lattice of this size over [-2, 2]².
        #[arg(long)]
        grid_size: Option<usize>,
        /// The full 80×80 lattice with 150 replications.
        #[arg(long)]
        full_grid: bool,
        #[arg(long)]
        reference_draws: Option<usize>,
        /// Also write the first replication of the first design as panel.csv.
        #[arg(long)]
        write_panel: bool,
    },
}

#[derive(Args, Debug, Default)]
struct PanelArgs {
    /// Panel CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    firm_col: Option<String>,
    #[arg(long)]
    period_col: Option<String>,
    #[arg(long)]
    y_col: Option<String>,
    #[arg(long, value_delimiter = ',')]
    x_cols: Option<Vec<String>>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// spline, polynomial or intercept.
    #[arg(long)]
    basis: Option<String>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    knots: Option<usize>,
    #[arg(long)]
    no_interactions: bool,
    /// A nonnegative penalty or `gcv`.
    #[arg(long)]
    ridge: Option<RidgePenalty>,
    /// xbar, xit or both.
    #[arg(long)]
    conditioning: Option<Conditioning>,
    /// Basis for smoothing moments over x̄ (same choices as --basis).
    #[arg(long)]
    moment_basis: Option<String>,
    #[arg(long)]
    min_t: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct FitArgs {
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    m0: Option<f64>,
    /// Neighborhood width in σ units, or `inf`.
    #[arg(long)]
    c: Option<Neighborhood>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    multistarts: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    stiffness: Option<f64>,
}

fn parse_basis(name: &str, degree: Option<usize>, knots: Option<usize>, interactions: bool) -> Result<BasisSpec> {
    Ok(match name {
        "spline" | "cubic_spline" => BasisSpec::cubic_spline(knots, interactions),
        "polynomial" | "poly" => BasisSpec::polynomial(degree.unwrap_or(2), interactions),
        "intercept" => BasisSpec::intercept_only(),
        other => bail!("unknown basis `{other}` (expected spline, polynomial or intercept)"),
    })
}

fn apply_panel(cfg: &mut RunConfig, a: &PanelArgs) {
    if let Some(v) = &a.input {
        cfg.input = Some(v.clone());
    }
    if let Some(v) = &a.firm_col {
        cfg.schema.firm_col = v.clone();
    }
    if let Some(v) = &a.period_col {
        cfg.schema.period_col = v.clone();
    }
    if let Some(v) = &a.y_col {
        cfg.schema.y_col = v.clone();
    }
    if let Some(v) = &a.x_cols {
        cfg.schema.x_cols = v.clone();
    }
}

fn apply_model(cfg: &mut RunConfig, a: &ModelArgs) -> Result<()> {
    let est = &mut cfg.estimate;
    if let Some(name) = &a.basis {
        est.basis = parse_basis(name, a.degree, a.knots, !a.no_interactions)?;
    } else {
        if let Some(d) = a.degree {
            est.basis.degree = d;
        }
        if let Some(k) = a.knots {
            est.basis.knots = Some(k);
        }
        if a.no_interactions {
            est.basis.interactions = false;
        }
    }
    if let Some(name) = &a.moment_basis {
        est.moment_basis = parse_basis(name, a.degree, a.knots, !a.no_interactions)?;
    }
    if let Some(r) = a.ridge {
        est.ridge = r;
    }
    if let Some(c) = a.conditioning {
        est.conditioning = c;
    }
    if let Some(t) = a.min_t {
        est.min_t = t;
    }
    Ok(())
}

fn apply_fit(cfg: &mut RunConfig, a: &FitArgs) {
    let fit = &mut cfg.estimate.fit;
    if let Some(v) = a.family {
        fit.family = v;
    }
    if let Some(v) = a.m0 {
        fit.m0 = v;
    }
    if let Some(v) = a.c {
        fit.c = v;
    }
    if let Some(v) = a.h {
        fit.h = Some(v);
    }
    if let Some(v) = a.multistarts {
        fit.multistarts = v;
    }
    if let Some(v) = a.max_iter {
        fit.max_iter = v;
    }
    if let Some(v) = a.tol {
        fit.tol = v;
    }
    if let Some(v) = a.stiffness {
        fit.stiffness = v;
    }
}

/// Resolves flags > config file > environment > defaults.
fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.seed = match (cli.seed, cfg.seed) {
        (Some(s), _) => Some(s),
        (None, Some(s)) => Some(s),
        (None, None) => match std::env::var("FRONTIER_MM_SEED") {
            Ok(v) => Some(v.trim().parse().with_context(|| format!("FRONTIER_MM_SEED is not an integer: `{v}`"))?),
            Err(_) => Some(0),
        },
    };
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    match &cli.command {
        Command::Estimate { panel, model, fit } => {
            cfg.command = "estimate".into();
            apply_panel(&mut cfg, panel);
            apply_model(&mut cfg, model)?;
            apply_fit(&mut cfg, fit);
        }
        Command::Bound { mu2, mu3, mu4, mu5, mean, panel, model } => {
            cfg.command = "bound".into();
            apply_panel(&mut cfg, panel);
            apply_model(&mut cfg, model)?;
            let b = &mut cfg.bound;
            b.mu2 = mu2.or(b.mu2);
            b.mu3 = mu3.or(b.mu3);
            b.mu4 = mu4.or(b.mu4);
            b.mu5 = mu5.or(b.mu5);
            b.mean = mean.or(b.mean);
        }
        Command::FitDist { mu2, mu3, mu4, n_eff, fit } => {
            cfg.command = "fit-dist".into();
            apply_fit(&mut cfg, fit);
            let fd = &mut cfg.fit_dist;
            if let (Some(a), Some(b), Some(c)) = (mu2, mu3, mu4) {
                fd.moments = Some([*a, *b, *c]);
            } else if mu2.is_some() || mu3.is_some() || mu4.is_some() {
                bail!("fit-dist needs all of --mu2, --mu3 and --mu4");
            }
            fd.n_eff = n_eff.or(fd.n_eff);
        }
        Command::CheckFeasibility { moments } => {
            cfg.command = "check-feasibility".into();
            if let Some(m) = moments {
                cfg.feasibility.raw = m.clone();
            }
        }
        Command::Simulate { design, reps, n, grid_size, full_grid, reference_draws, .. } => {
            cfg.command = "simulate".into();
            if let Some(p) = design {
                let text = fs::read_to_string(p).with_context(|| format!("reading design {}", p.display()))?;
                cfg.sim = serde_json::from_str(&text).with_context(|| format!("parsing design {}", p.display()))?;
            }
            if *full_grid {
                warn!("full 80x80 grid with 150 replications: expect hours of compute per firm count");
                cfg.sim.grid = Some(GridSpec { size: 80, lo: -2.0, hi: 2.0 });
                cfg.sim.shapes = None;
                cfg.sim.base.reps = 150;
            }
            if let Some(k) = grid_size {
                cfg.sim.grid = Some(GridSpec { size: *k, lo: -2.0, hi: 2.0 });
                cfg.sim.shapes = None;
            }
            if let Some(r) = reps {
                cfg.sim.base.reps = *r;
            }
            if let Some(n) = n {
                cfg.sim.n_values = n.clone();
            }
            if let Some(d) = reference_draws {
                cfg.sim.reference_draws = *d;
            }
        }
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Whether warning-level failures occurred.
type Outcome = bool;

fn cmd_estimate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let input = cfg.input.as_ref().ok_or_else(|| anyhow!("estimate needs --input"))?;
    let data = load_panel_csv(input, &cfg.schema).context("panel")?;
    info!("loaded {} firms, {} observations", data.n_firms(), data.n_obs());
    let mut est = cfg.estimate.clone();
    est.fit.seed = cfg.seed();
    let report = run_estimate(&data, &est).context("estimate")?;
    write_json(&out.join("moments.json"), &report.moments)?;
    write_json(&out.join("fits.json"), &report.fits)?;
    write_frontier_csv(&report.frontier, &out.join("frontier.csv"))?;
    let failures =
        report.fits.firms.iter().filter(|f| f.error.is_some()).count() + usize::from(report.fits.pooled_error.is_some());
    Ok(failures > 0)
}

fn cmd_bound(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let b = &cfg.bound;
    let (mu2, mu3, mu4) = match (b.mu2, b.mu3, &cfg.input) {
        (Some(m2), Some(m3), _) => (m2, m3, b.mu4),
        (_, _, Some(input)) => {
            let data = load_panel_csv(input, &cfg.schema).context("panel")?;
            let e = &cfg.estimate;
            let model = fit_conditional_mean(&data, &e.basis, e.ridge, e.conditioning).context("residualize")?;
            let pm = pooled_moments(&decompose_residuals(&data, &model)?).context("moments")?;
            let m3 = pm.mu3_u.ok_or_else(|| anyhow!("moments: third deviation moment unavailable"))?;
            (pm.mu2_u, m3, b.mu4.or(pm.mu4_u))
        }
        _ => bail!("bound needs --mu2 and --mu3, or --input"),
    };
    let report = bound_report(mu2, mu3, mu4, b.mu5, b.mean).context("bounds")?;
    write_json(&out.join("bound_report.json"), &report)?;
    println!("lower bound (skewness): {}", report.lb_skew);
    Ok(false)
}

fn cmd_fit_dist(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let m = cfg.fit_dist.moments.ok_or_else(|| anyhow!("fit-dist needs --mu2, --mu3 and --mu4"))?;
    let n_eff = match (cfg.fit_dist.n_eff, cfg.estimate.fit.c) {
        (Some(n), _) => n,
        (None, Neighborhood::Unbounded) => 1.0,
        (None, Neighborhood::Width(_)) => bail!("a constrained fit needs --n-eff"),
    };
    let mut fc = cfg.estimate.fit.clone();
    fc.seed = cfg.seed();
    let r = fit_deviation_distribution(&FitTarget::new(m, n_eff), &fc).context("fit")?;
    write_json(&out.join("fit.json"), &r)?;
    println!("implied mean: {} (objective {:e}, bind {})", r.implied_mean, r.objective, r.bind);
    Ok(!r.converged)
}

#[derive(Serialize)]
struct FeasibilityOutput {
    raw: Vec<f64>,
    mean: f64,
    central: Vec<f64>,
    #[serde(flatten)]
    report: frontier_mm::bounds::HankelReport,
}

fn cmd_check_feasibility(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let raw = &cfg.feasibility.raw;
    if raw.is_empty() {
        bail!("check-feasibility needs --moments m1,m2,...");
    }
    let report = hankel_feasibility(raw).context("bounds")?;
    let (mean, central) = raw_to_central(raw).context("bounds")?;
    println!("{}", if report.feasible { "feasible" } else { "infeasible" });
    write_json(&out.join("feasibility.json"), &FeasibilityOutput { raw: raw.clone(), mean, central, report })?;
    Ok(false)
}

fn cmd_simulate(cfg: &RunConfig, out: &Path, write_panel: bool) -> Result<Outcome> {
    let designs = cfg.sim.designs(cfg.seed());
    let estimators = cfg.sim.estimator_specs();
    let total: usize = designs.iter().map(|d| d.reps).sum();
    info!("{} designs, {} replications, {} estimators", designs.len(), total, estimators.len());
    let exp = run_experiment(&designs, &estimators, cfg.sim.reference_draws).context("sim")?;
    exp.metrics.write_metrics_csv(&out.join("metrics.csv"))?;
    exp.metrics.write_grid_csv(&out.join("grid.csv"))?;
    if write_panel {
        let panel = generate_panel(&designs[0], &mut replication_rng(designs[0].seed, 0, 0)).context("sim")?;
        write_sim_panel(&panel, &out.join("panel.csv"))?;
        #[derive(Serialize)]
        struct PanelTruth<'a> {
            g: f64,
            sigma_v: f64,
            realized: SampleTruth,
            reference: SampleTruth,
            u: &'a [f64],
        }
        write_json(
            &out.join("panel_truth.json"),
            &PanelTruth { g: designs[0].g, sigma_v: panel.sigma_v, realized: panel.realized, reference: exp.truths[0], u: &panel.u },
        )?;
    }
    let failures: usize = exp.metrics.points.iter().map(|p| p.failures).sum();
    if failures > 0 {
        warn!("{failures} replication-estimator pairs failed");
    }
    Ok(failures > 0)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use frontier_mm::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io { .. } | E::Csv(_) | E::Schema(_) | E::Parse { .. } | E::Duplicate { .. } | E::Domain(_) => 2,
                _ => 3,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() || cause.is::<std::num::ParseIntError>() {
            return 2;
        }
    }
    2
}

fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = resolve(cli)?;
    let out = cfg.out_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config_echo.json"), &cfg)?;
    match &cli.command {
        Command::Estimate { .. } => cmd_estimate(&cfg, &out),
        Command::Bound { .. } => cmd_bound(&cfg, &out),
        Command::FitDist { .. } => cmd_fit_dist(&cfg, &out),
        Command::CheckFeasibility { .. } => cmd_check_feasibility(&cfg, &out),
        Command::Simulate { write_panel, .. } => cmd_simulate(&cfg, &out, *write_panel),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
