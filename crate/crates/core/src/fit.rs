//! Constrained method-of-moments fit of the deviation distribution, kernel
//! effective sample sizes, and frontier assembly.
//!
//! The fit minimizes Σ_k (μ̂_k − μ_k(θ))² over k = 2, 3, 4 subject to the
//! near-frontier mass constraint F_θ(c·σ̂) ≥ m0 / n_eff, where σ̂ = √μ̂_2 is
//! held fixed.

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bounds::{central_to_raw, hankel_order, skewness_lower_bound};
use crate::dist::{DeviationParams, Family, ScaledBetaParams, TruncNormalParams};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::panel::PanelDataset;
use crate::special::{brent, ln_norm_sf};

/// Width of the near-frontier neighborhood in units of σ̂.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Neighborhood {
    Width(f64),
    /// No constraint.
    Unbounded,
}

impl Neighborhood {
    pub fn width(&self) -> Option<f64> {
        match self {
            Neighborhood::Width(c) => Some(*c),
            Neighborhood::Unbounded => None,
        }
    }
}

impl std::fmt::Display for Neighborhood {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Neighborhood::Width(c) => write!(f, "{c}"),
            Neighborhood::Unbounded => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Neighborhood {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity" | "unbounded") {
            return Ok(Neighborhood::Unbounded);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_infinite() && v > 0.0 => Ok(Neighborhood::Unbounded),
            Ok(v) if v > 0.0 => Ok(Neighborhood::Width(v)),
            _ => Err(Error::domain(format!("c must be a positive number or `inf`, got `{s}`"))),
        }
    }
}

impl Serialize for Neighborhood {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Neighborhood::Width(c) => s.serialize_f64(*c),
            Neighborhood::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Neighborhood {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => v.to_string().parse().map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub family: Family,
    /// Required effective observations near the frontier.
    pub m0: f64,
    pub c: Neighborhood,
    /// Kernel bandwidth on standardized x̄; `None` uses n^(-1/(d+4)).
    pub h: Option<f64>,
    pub multistarts: usize,
    pub max_iter: usize,
    /// Convergence tolerance on the scaled objective.
    pub tol: f64,
    /// Weight of the exact-penalty term in the first stage.
    pub stiffness: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            family: Family::ScaledBeta,
            m0: 1.0,
            c: Neighborhood::Width(1.0),
            h: None,
            multistarts: 8,
            max_iter: 2000,
            tol: 1e-12,
            stiffness: 1e3,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn unconstrained(family: Family) -> Self {
        FitConfig { family, c: Neighborhood::Unbounded, ..FitConfig::default() }
    }

    pub fn constrained(family: Family, m0: f64, c: f64) -> Self {
        FitConfig { family, m0, c: Neighborhood::Width(c), ..FitConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m0 > 0.0 && self.m0.is_finite()) {
            return Err(Error::domain(format!("m0 must be positive, got {}", self.m0)));
        }
        if let Neighborhood::Width(c) = self.c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::domain(format!("c must be positive, got {c}")));
            }
        }
        if let Some(h) = self.h {
            if !(h > 0.0) {
                return Err(Error::domain(format!("bandwidth h must be positive, got {h}")));
            }
        }
        if self.multistarts == 0 || self.max_iter == 0 {
            return Err(Error::domain("multistarts and max_iter must be at least 1"));
        }
        if !(self.tol > 0.0 && self.stiffness > 0.0) {
            return Err(Error::domain("tol and stiffness must be positive"));
        }
        Ok(())
    }
}

/// m0 / n_eff.
pub fn required_mass(m0: f64, n_eff: f64) -> f64 {
    m0 / n_eff
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelWeights {
    pub target: usize,
    pub weights: Vec<f64>,
    pub n_eff: f64,
    /// The kernel row vanished numerically and all weight went to the target.
    pub fallback: bool,
}

/// Gaussian kernel weights around point `i` and the Kish effective sample
/// size 1/Σw². `h = ∞` gives uniform weights.
pub fn effective_sample_size(points: &[Vec<f64>], i: usize, h: f64) -> Result<KernelWeights> {
    if !(h > 0.0) {
        return Err(Error::domain(format!("bandwidth must be positive, got {h}")));
    }
    let n = points.len();
    if i >= n {
        return Err(Error::domain(format!("target index {i} out of range for {n} points")));
    }
    let d2: Vec<f64> = points
        .iter()
        .map(|p| p.iter().zip(&points[i]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .collect();
    let logk: Vec<f64> = d2.iter().map(|d| if h.is_infinite() { 0.0 } else { -0.5 * d / (h * h) }).collect();
    let top = logk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logk.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        warn!("kernel weights vanished at point {i}; using self weight");
        let mut weights = vec![0.0; n];
        weights[i] = 1.0;
        return Ok(KernelWeights { target: i, weights, n_eff: 1.0, fallback: true });
    }
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let n_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    Ok(KernelWeights { target: i, weights, n_eff, fallback: false })
}

/// Kish effective sample size of arbitrary nonnegative weights.
pub fn kish_n_eff(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    total * total / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Rescales each coordinate to unit standard deviation (constant
/// coordinates are left centred).
pub fn standardize(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    let mut out = points.to_vec();
    for j in 0..d {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        let var = points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for p in &mut out {
            p[j] = (p[j] - mean) / sd;
        }
    }
    out
}

/// n^(-1/(d+4)) for standardized inputs.
pub fn default_bandwidth(n: usize, d: usize) -> f64 {
    (n.max(1) as f64).powf(-1.0 / (d as f64 + 4.0))
}

/// A candidate within tolerance of the best objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearOptimum {
    pub params: DeviationParams,
    pub objective: f64,
    pub implied_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: DeviationParams,
    /// Σ (μ̂_k − μ_k(θ))².
    pub objective: f64,
    /// F_θ(c·σ̂); 1 when unconstrained.
    pub constraint_mass: f64,
    pub required_mass: f64,
    pub bind: bool,
    pub implied_mean: f64,
    pub starts_tried: usize,
    pub converged: bool,
    pub sigma_hat: f64,
    /// Moments actually matched, after floors.
    pub target: [f64; 3],
    pub floored: Vec<String>,
    /// Hankel screen of the target with the skewness bound as mean.
    pub hankel_feasible: bool,
    pub near_optima: Vec<NearOptimum>,
}

/// Inputs to a single fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitTarget {
    /// (μ̂2, μ̂3, μ̂4) of u.
    pub moments: [f64; 3],
    pub n_eff: f64,
    /// Scale for the μ̂2 floor, normally the variance of the between residuals.
    pub floor_ref: f64,
}

impl FitTarget {
    pub fn new(moments: [f64; 3], n_eff: f64) -> Self {
        FitTarget { moments, n_eff, floor_ref: 1.0 }
    }
}

const BIND_TOL: f64 = 1e-6;
const FEAS_SLACK: f64 = 1e-8;
const NEAR_OPT_TOL: f64 = 1e-9;
const POLISH_MARGIN: f64 = 0.05;

const BETA_LOWER: [f64; 3] = [-6.0, -6.0, -1.0];
const BETA_UPPER: [f64; 3] = [18.0, 18.0, 30.0];
const TN_LOWER: [f64; 2] = [-1e4, -10.0];
const TN_UPPER: [f64; 2] = [1e4, 10.0];

struct Problem {
    family: Family,
    target: [f64; 3],
    sigma: f64,
    /// σ̂^k for k = 2, 3, 4.
    scale: [f64; 3],
    /// c·σ̂ and required mass, when constrained.
    constraint: Option<(f64, f64)>,
}

impl Problem {
    fn params(&self, x: &[f64]) -> Option<DeviationParams> {
        let p = match self.family {
            Family::ScaledBeta => DeviationParams::ScaledBeta(ScaledBetaParams {
                a: x[0].exp(),
                b: x[1].exp(),
                q: self.sigma * x[2].exp(),
            }),
            Family::TruncNormal => DeviationParams::TruncNormal(TruncNormalParams {
                mu: self.sigma * x[0],
                sigma: self.sigma * x[1].exp(),
            }),
        };
        p.validate().ok().map(|_| p)
    }

    fn coords(&self, p: &DeviationParams) -> Vec<f64> {
        match p {
            DeviationParams::ScaledBeta(b) => vec![b.a.ln(), b.b.ln(), (b.q / self.sigma).ln()],
            DeviationParams::TruncNormal(t) => vec![t.mu / self.sigma, (t.sigma / self.sigma).ln()],
        }
    }

    fn bounds(&self) -> (&'static [f64], &'static [f64]) {
        match self.family {
            Family::ScaledBeta => (&BETA_LOWER, &BETA_UPPER),
            Family::TruncNormal => (&TN_LOWER, &TN_UPPER),
        }
    }

    fn raw_objective(&self, p: &DeviationParams) -> f64 {
        let m = p.central_moments();
        (0..3).map(|k| (self.target[k] - m[k]).powi(2)).sum()
    }

    /// Gaps in units of σ̂^k, so the search does not depend on the units of u.
    fn scaled_objective(&self, p: &DeviationParams) -> f64 {
        let m = p.central_moments();
        (0..3).map(|k| ((self.target[k] - m[k]) / self.scale[k]).powi(2)).sum()
    }

    fn mass(&self, p: &DeviationParams) -> f64 {
        match self.constraint {
            Some((t, _)) => p.cdf(t),
            None => 1.0,
        }
    }

    fn penalized(&self, x: &[f64], stiffness: f64) -> f64 {
        let Some(p) = self.params(x) else { return f64::INFINITY };
        let obj = self.scaled_objective(&p);
        match self.constraint {
            Some((t, r)) => obj + stiffness * (r - p.cdf(t)).max(0.0),
            None => obj,
        }
    }

    /// Point on the constraint boundary sharing the free coordinates of `x`.
    fn boundary_point(&self, free: &[f64]) -> Option<DeviationParams> {
        let (t, r) = self.constraint?;
        match self.family {
            Family::ScaledBeta => {
                let (a, b) = (free[0].exp(), free[1].exp());
                let unit = DeviationParams::ScaledBeta(ScaledBetaParams { a, b, q: 1.0 });
                let x_r = if r >= 1.0 { 1.0 } else { unit.quantile(r).ok()? };
                if !(x_r > 0.0) {
                    return None;
                }
                let p = DeviationParams::ScaledBeta(ScaledBetaParams { a, b, q: t / x_r });
                p.validate().ok().map(|_| p)
            }
            Family::TruncNormal => {
                if r >= 1.0 {
                    return None;
                }
                let sigma = self.sigma * free[0].exp();
                let tau = t / sigma;
                // F(t) = 1 − Q(α + τ)/Q(α) is increasing in α = −μ/σ
                let g = |alpha: f64| -(ln_norm_sf(alpha + tau) - ln_norm_sf(alpha)).exp_m1() - r;
                let alpha = brent(g, -40.0, 1e8, 1e-15, 1e-15, 500)?;
                let p = DeviationParams::TruncNormal(TruncNormalParams { mu: -alpha * sigma, sigma });
                p.validate().ok().map(|_| p)
            }
        }
    }

    fn free_coords(&self, p: &DeviationParams) -> Vec<f64> {
        let c = self.coords(p);
        match self.family {
            Family::ScaledBeta => c[..2].to_vec(),
            Family::TruncNormal => c[1..].to_vec(),
        }
    }

    fn free_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self.family {
            Family::ScaledBeta => (BETA_LOWER[..2].to_vec(), BETA_UPPER[..2].to_vec()),
            Family::TruncNormal => (TN_LOWER[1..].to_vec(), TN_UPPER[1..].to_vec()),
        }
    }
}

/// Hankel determinants built from the target alone, at the skewness bound
/// as mean. At that mean the order-2 shifted determinant vanishes, so orders
/// needing a fifth moment are not screened.
fn hankel_screen(m2: f64, m3: f64, m4: f64) -> bool {
    let Ok(lb) = skewness_lower_bound(m2, m3) else { return false };
    let raw = central_to_raw(lb, &[m2, m3, m4]);
    let ok = |n: usize, shifted: bool| hankel_order(&raw, n, shifted).is_ok_and(|d| d.passes());
    (2..=3).all(|n| ok(n, false)) && (1..=2).all(|n| ok(n, true))
}

/// Moment-matched starting point.
fn heuristic_start(problem: &Problem) -> Vec<f64> {
    let [m2, m3, m4] = problem.target;
    let sigma = problem.sigma;
    let gamma = m3 / (m2 * sigma);
    let kappa = m4 / (m2 * m2);
    match problem.family {
        Family::ScaledBeta => {
            // Pearson type I: a + b from skewness and kurtosis
            let denom = 6.0 + 3.0 * gamma * gamma - 2.0 * kappa;
            let s = 6.0 * (kappa - gamma * gamma - 1.0) / denom;
            let (a, b) = if s.is_finite() && s > 0.0 && denom > 0.0 {
                let root = (gamma * gamma * (s + 2.0).powi(2) + 16.0 * (s + 1.0)).sqrt();
                let delta = (s + 2.0) * gamma.abs() / root;
                let (small, large) = (0.5 * s * (1.0 - delta), 0.5 * s * (1.0 + delta));
                if gamma >= 0.0 {
                    (small, large)
                } else {
                    (large, small)
                }
            } else {
                (2.0, 2.0)
            };
            let (a, b) = (a.clamp(1e-2, 1e6), b.clamp(1e-2, 1e6));
            let q_over_sigma = (a + b) * ((a + b + 1.0) / (a * b)).sqrt();
            vec![a.ln(), b.ln(), q_over_sigma.ln()]
        }
        Family::TruncNormal => {
            // match skewness over the truncation point α = −μ/σ
            let mut best = (f64::INFINITY, 0.0, 1.0);
            for k in 0..=400 {
                let alpha = -10.0 + 0.1 * k as f64;
                let p = TruncNormalParams { mu: -alpha, sigma: 1.0 };
                let [v2, v3, _] = p.central_moments();
                let g = v3 / (v2 * v2.sqrt());
                if (g - gamma).abs() < best.0 {
                    best = ((g - gamma).abs(), alpha, v2);
                }
            }
            let (_, alpha, v2) = best;
            let s = 1.0 / v2.sqrt();
            vec![-alpha * s, s.ln()]
        }
    }
}

fn latin_hypercube(center: &[f64], count: usize, half_width: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dim = center.len();
    let perms: Vec<Vec<usize>> = (0..dim)
        .map(|_| {
            let mut p: Vec<usize> = (0..count).collect();
            p.shuffle(rng);
            p
        })
        .collect();
    (0..count)
        .map(|k| {
            (0..dim)
                .map(|j| {
                    let u: f64 = rng.random();
                    center[j] - half_width + 2.0 * half_width * (perms[j][k] as f64 + u) / count as f64
                })
                .collect()
        })
        .collect()
}

struct Candidate {
    params: DeviationParams,
    objective: f64,
    scaled: f64,
    mass: f64,
    converged: bool,
}

/// Fits the deviation family to moment estimates under the near-frontier
/// mass constraint.
pub fn fit_deviation_distribution(target: &FitTarget, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if !(target.n_eff >= 1.0 && target.n_eff.is_finite()) {
        return Err(Error::domain(format!("effective sample size must be >= 1, got {}", target.n_eff)));
    }
    if target.moments.iter().any(|m| !m.is_finite()) {
        return Err(Error::domain("moment estimates must be finite"));
    }
    let [mut m2, m3, mut m4] = target.moments;
    let mut floored = Vec::new();
    if m2 <= 0.0 {
        m2 = 1e-8 * target.floor_ref.abs().max(f64::MIN_POSITIVE);
        floored.push(format!("mu2 {:e} floored to {m2:e}", target.moments[0]));
    }
    let m4_min = m2 * m2 + m3 * m3 / m2;
    if m4 < m4_min {
        floored.push(format!("mu4 {m4:e} raised to the feasibility bound {m4_min:e}"));
        m4 = m4_min;
    }
    let sigma = m2.sqrt();
    let required = required_mass(cfg.m0, target.n_eff);
    let constraint = cfg.c.width().map(|c| (c * sigma, required));
    if constraint.is_some() && required > 1.0 {
        return Err(Error::InfeasibleFit {
            best_objective: f64::INFINITY,
            best_params: format!("required mass {required} exceeds one"),
        });
    }

    let hankel_feasible = hankel_screen(m2, m3, m4);
    if !hankel_feasible {
        warn!("moment target ({m2:e}, {m3:e}, {m4:e}) fails the Hankel screen; fitting anyway");
    }

    let problem = Problem {
        family: cfg.family,
        target: [m2, m3, m4],
        sigma,
        scale: [m2, m2 * sigma, m2 * m2],
        constraint,
    };
    let (lower, upper) = problem.bounds();
    let center = heuristic_start(&problem);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = vec![center.clone()];
    if cfg.multistarts > 1 {
        starts.extend(latin_hypercube(&center, cfg.multistarts - 1, 1.5, &mut rng));
    }
    let opts = NelderMeadOptions { max_iter: cfg.max_iter, f_tol: cfg.tol, x_tol: 1e-9, step: 0.5 };

    let mut candidates: Vec<Candidate> = Vec::new();
    let mut best_penalized = (f64::INFINITY, None::<DeviationParams>);
    for start in &starts {
        let stage1 = nelder_mead(|x| problem.penalized(x, cfg.stiffness), start, lower, upper, &opts);
        if let Some(p) = problem.params(&stage1.x) {
            if stage1.f < best_penalized.0 {
                best_penalized = (stage1.f, Some(p));
            }
            candidates.push(Candidate {
                objective: problem.raw_objective(&p),
                scaled: problem.scaled_objective(&p),
                mass: problem.mass(&p),
                params: p,
                converged: stage1.converged,
            });
            // a stage-1 point with slack is an interior optimum; polish only
            // points at or near the boundary
            let near_boundary = problem.constraint.is_some_and(|(_, r)| problem.mass(&p) < r * (1.0 + POLISH_MARGIN) + BIND_TOL);
            if near_boundary {
                let (flo, fhi) = problem.free_bounds();
                let free0 = problem.free_coords(&p);
                let stage2 = nelder_mead(
                    |z| match problem.boundary_point(z) {
                        Some(bp) => problem.scaled_objective(&bp),
                        None => f64::INFINITY,
                    },
                    &free0,
                    &flo,
                    &fhi,
                    &opts,
                );
                if let Some(bp) = problem.boundary_point(&stage2.x) {
                    candidates.push(Candidate {
                        objective: problem.raw_objective(&bp),
                        scaled: problem.scaled_objective(&bp),
                        mass: problem.mass(&bp),
                        params: bp,
                        converged: stage2.converged,
                    });
                }
            }
        }
    }

    let feasible: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| c.objective.is_finite())
        .filter(|c| problem.constraint.is_none_or(|(_, r)| c.mass >= r - FEAS_SLACK))
        .collect();
    if feasible.is_empty() {
        return Err(Error::InfeasibleFit {
            best_objective: best_penalized.0,
            best_params: best_penalized.1.map_or_else(|| "none".into(), |p| format!("{p:?}")),
        });
    }
    let best_obj = feasible.iter().map(|c| c.scaled).fold(f64::INFINITY, f64::min);
    let mut near: Vec<&Candidate> = feasible
        .iter()
        .copied()
        .filter(|c| c.scaled <= best_obj + NEAR_OPT_TOL)
        .collect();
    near.sort_by(|a, b| {
        a.params
            .mean()
            .total_cmp(&b.params.mean())
            .then(a.scaled.total_cmp(&b.scaled))
    });
    let chosen = near[0];
    let bind = problem.constraint.is_some_and(|(_, r)| (chosen.mass - r).abs() <= BIND_TOL);
    Ok(FitResult {
        params: chosen.params,
        objective: chosen.objective,
        constraint_mass: chosen.mass,
        required_mass: required,
        bind,
        implied_mean: chosen.params.mean(),
        starts_tried: starts.len(),
        converged: chosen.converged,
        sigma_hat: sigma,
        target: [m2, m3, m4],
        floored,
        hankel_feasible,
        near_optima: near
            .iter()
            .map(|c| NearOptimum { params: c.params, objective: c.objective, implied_mean: c.params.mean() })
            .collect(),
    })
}

/// One output row of the frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub firm_id: String,
    pub period: String,
    /// Ê[y | x].
    pub mean_prediction: f64,
    /// Ê[u | x].
    pub mean_deviation: f64,
    /// ĝ = Ê[y | x] + Ê[u | x].
    pub frontier: f64,
    /// Largest outcome among nearby observations.
    pub sup_diagnostic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierEstimate {
    pub rows: Vec<FrontierRow>,
}

/// ĝ(x_it) = Ê[y_it | x_i] + Ê[u | x_i] for every observation.
///
/// `predictions` follow the storage order of `data`; `mean_deviation` has
/// one entry per firm.
pub fn frontier_estimate(data: &PanelDataset, predictions: &[f64], mean_deviation: &[f64]) -> Result<FrontierEstimate> {
    if predictions.len() != data.n_obs() || mean_deviation.len() != data.n_firms() {
        return Err(Error::Schema("prediction or deviation count does not match the panel".into()));
    }
    let mut rows = Vec::with_capacity(data.n_obs());
    let mut k = 0;
    for (firm, &du) in data.firms.iter().zip(mean_deviation) {
        for obs in &firm.periods {
            rows.push(FrontierRow {
                firm_id: firm.firm_id.clone(),
                period: obs.period.clone(),
                mean_prediction: predictions[k],
                mean_deviation: du,
                frontier: predictions[k] + du,
                sup_diagnostic: None,
            });
            k += 1;
        }
    }
    Ok(FrontierEstimate { rows })
}

/// max y over observations with ‖x_it − x0‖ ≤ radius.
///
/// Consistent for g(x0) only without noise, where y ≤ g(x).
pub fn conditional_sup_frontier(data: &PanelDataset, x0: &[f64], radius: f64) -> Result<f64> {
    if x0.len() != data.input_dim {
        return Err(Error::domain(format!("x0 has {} coordinates, panel has {}", x0.len(), data.input_dim)));
    }
    let r2 = radius * radius;
    data.firms
        .iter()
        .flat_map(|f| &f.periods)
        .filter(|o| o.x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= r2)
        .map(|o| o.y)
        .fold(None, |acc: Option<f64>, y| Some(acc.map_or(y, |m| m.max(y))))
        .ok_or_else(|| Error::domain(format!("no observation within radius {radius} of the query point")))
}
